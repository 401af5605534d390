"""End-to-end synthetic reproduction: base, specialized, +ELM and -ILM+ELM systems.

Every sentence is decoded with the resources of its target gender: the
matching external LM for the fusion systems, the matching fine-tuned model
for the specialized system. Fusion weights are chosen per gender by K-fold
cross-validation on the aligned set; the swapped set is decoded with the
per-gender mean of the fold selections.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .core import FusionWeights
from .evaluation import AnnotatedSentence, GENDERS, evaluate
from .fusion import DEFAULT_BEAM, DEFAULT_MAX_LEN, compute_ilm_context
from .ngram import DEFAULT_K, DEFAULT_ORDER, train_ngram
from .plotting import plot_heatmaps, plot_systems
from .seq2seq import ToySeq2Seq, TrainConfig, fine_tune, train
from .synth import (SynthTaskConfig, generate_eval, generate_monolingual, generate_parallel, source_vocab,
                    target_vocab)
from .tuning import CVResult, DecodeSetup, cross_validated_tune, heatmap_csv, make_grid, sweep_decode

log = logging.getLogger(__name__)

SYSTEMS = ("M_B", "M_SP", "M_B+ELM", "M_B-ILM+ELM")
# cross-validated rows stitch per-fold selections; these deploy one beta pair per gender
MEAN = ("M_B+ELM (mean betas)", "M_B-ILM+ELM (mean betas)")
TRANSFER = ("M_B+ELM (aligned betas)", "M_B-ILM+ELM (aligned betas)")
CONDITIONS = ("aligned", "swapped")


@dataclass(frozen=True)
class ExperimentConfig:
    task: SynthTaskConfig = field(default_factory=SynthTaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fine_tune: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.05, epochs=7))
    d: int = 16
    h: int = 32
    elm_order: int = DEFAULT_ORDER
    elm_k: float = DEFAULT_K
    grid_step: float = 0.05
    folds: int = 10
    beam: int = DEFAULT_BEAM
    max_len: int = DEFAULT_MAX_LEN

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SystemRow:
    system: str
    condition: str
    metrics: dict
    weights: dict | None = None

    def as_dict(self) -> dict:
        out = {"system": self.system, "condition": self.condition, **self.metrics}
        if self.weights is not None:
            out["weights"] = self.weights
        return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[SystemRow]
    tuning: dict  # condition -> gender -> {"ilm_elm": CVResult, "elm": CVResult}
    hashes: dict[str, str]
    base_losses: list[float]

    def row(self, system: str, condition: str = "aligned") -> SystemRow:
        for r in self.rows:
            if r.system == system and r.condition == condition:
                return r
        raise KeyError((system, condition))


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _by_gender(eval_set: Sequence[AnnotatedSentence]) -> dict[str, list[int]]:
    out = {g: [] for g in GENDERS}
    for i, s in enumerate(eval_set):
        out[s.gender].append(i)
    return out


def _stitch(parts: dict[str, tuple[list[int], list[str]]], n: int) -> list[str]:
    hyps = [""] * n
    for rows, texts in parts.values():
        for i, t in zip(rows, texts):
            hyps[i] = t
    return hyps


def _weights_dict(sel: Sequence[FusionWeights], mean: FusionWeights) -> dict:
    return {
        "folds": [[w.beta_ilm, w.beta_elm] for w in sel],
        "mean_beta_ilm": mean.beta_ilm,
        "mean_beta_elm": mean.beta_elm,
    }


def _on_grid(w: FusionWeights, step: float) -> FusionWeights:
    """Snap mean betas to the nearest grid point so sweep decodes can be reused."""
    n = round(1.0 / step)
    return FusionWeights(round(round(w.beta_ilm * n) / n, 10), round(round(w.beta_elm * n) / n, 10))


def run(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    task = cfg.task
    sv, tv = source_vocab(task), target_vocab(task)
    parallel = generate_parallel(task)
    data = [(sv.encode(" ".join(s.source)), tv.encode(" ".join(s.target))) for s in parallel]

    log.info("training base model on %d pairs", len(data))
    base, losses = train(ToySeq2Seq(sv, tv, cfg.d, cfg.h, rng_seed=cfg.train.rng_seed), data, cfg.train)
    specialized = {}
    for g in GENDERS:
        subset = [pair for pair, s in zip(data, parallel) if s.speaker_gender == g]
        log.info("fine-tuning specialized %s model on %d pairs", g, len(subset))
        specialized[g], _ = fine_tune(base, subset, cfg.fine_tune)
    elms = {g: train_ngram([tv.encode(" ".join(x)) for x in generate_monolingual(task, g)], tv,
                           cfg.elm_order, cfg.elm_k) for g in GENDERS}
    ctx = compute_ilm_context(base, [s for s, _ in data])

    hashes = {"base": _sha(base.dumps()), "ilm_context": _sha(ctx.dumps())}
    for g in GENDERS:
        hashes[f"specialized_{g}"] = _sha(specialized[g].dumps())
        hashes[f"elm_{g}"] = _sha(elms[g].dumps())

    rows: list[SystemRow] = []
    tuning: dict = {}
    full_grid = make_grid(cfg.grid_step, ilm=True)
    for cond in CONDITIONS:
        ev = generate_eval(task, cond)
        groups = _by_gender(ev)
        parts: dict[str, dict] = {s: {} for s in SYSTEMS + MEAN + TRANSFER}
        tuning[cond] = {}
        for g in GENDERS:
            rows_g = groups[g]
            subset = [ev[i] for i in rows_g]
            setup = DecodeSetup(base, ctx, elms[g], cfg.beam, cfg.max_len)
            log.info("%s: sweeping %d grid points on %d %s sentences", cond, len(full_grid), len(subset), g)
            table = sweep_decode(setup, subset, full_grid, threads)
            cv_full = cross_validated_tune(setup, subset, cfg.folds, table=table)
            cv_elm = cross_validated_tune(setup, subset, cfg.folds,
                                          table=table.restrict(lambda w: w.beta_ilm == 0.0))
            tuning[cond][g] = {"ilm_elm": cv_full, "elm": cv_elm}
            zero = table.index_of(FusionWeights(0.0, 0.0))
            parts["M_B"][g] = (rows_g, [r[zero] for r in table.hyps])
            parts["M_B+ELM"][g] = (rows_g, cv_elm.hypotheses)
            parts["M_B-ILM+ELM"][g] = (rows_g, cv_full.hypotheses)
            sp = DecodeSetup(specialized[g], beam=cfg.beam, max_len=cfg.max_len)
            parts["M_SP"][g] = (rows_g, sp.decode_all([s.source for s in subset], FusionWeights()))
            for label, key in zip(MEAN, ("elm", "ilm_elm")):
                g_col = table.index_of(_on_grid(tuning[cond][g][key].mean, cfg.grid_step))
                parts[label][g] = (rows_g, [r[g_col] for r in table.hyps])
            if cond != "aligned":
                # deploy the aligned-tuned mean betas unchanged
                for label, key in zip(TRANSFER, ("elm", "ilm_elm")):
                    g_col = table.index_of(_on_grid(tuning["aligned"][g][key].mean, cfg.grid_step))
                    parts[label][g] = (rows_g, [r[g_col] for r in table.hyps])
        for system, by_g in parts.items():
            if not by_g:
                continue
            weights = None
            if system in ("M_B+ELM", "M_B-ILM+ELM"):
                key = "elm" if system == "M_B+ELM" else "ilm_elm"
                weights = {g: _weights_dict(tuning[cond][g][key].selections, tuning[cond][g][key].mean)
                           for g in GENDERS}
            elif system in MEAN + TRANSFER:
                key = "elm" if system in (MEAN[0], TRANSFER[0]) else "ilm_elm"
                source = cond if system in MEAN else "aligned"
                weights = {g: _weights_dict([], _on_grid(tuning[source][g][key].mean, cfg.grid_step))
                           for g in GENDERS}
            hyps = _stitch(by_g, len(ev))
            rows.append(SystemRow(system, cond, evaluate(hyps, ev).as_dict(), weights))

    return ExperimentResult(cfg, rows, tuning, hashes, losses)


def _pct(v) -> str:
    return "  -  " if v is None else f"{100.0 * v:5.1f}"


def format_table(result: ExperimentResult) -> str:
    lines = []
    for cond in ("aligned", "swapped"):
        lines.append(f"[{cond}]")
        lines.append(f"{'system':<30} {'BLEU':>6}  {'Cov M':>5} {'Cov F':>5}  {'Acc M':>5} {'Acc F':>5}")
        for r in result.rows:
            if r.condition != cond:
                continue
            m = r.metrics
            lines.append(
                f"{r.system:<30} {m['bleu']:6.2f}  {_pct(m['coverage_M'])} {_pct(m['coverage_F'])}"
                f"  {_pct(m['accuracy_M'])} {_pct(m['accuracy_F'])}"
            )
        lines.append("")
    lines.append("[mean tuned betas]")
    lines.append(f"{'system':<26} {'condition':>9} {'gender':>6} {'beta_ilm':>9} {'beta_elm':>9}")
    for cond in CONDITIONS:
        for key, label in (("ilm_elm", "M_B-ILM+ELM"), ("elm", "M_B+ELM")):
            for g in ("M", "F"):
                w = result.tuning[cond][g][key].mean
                lines.append(f"{label:<26} {cond:>9} {g:>6} {w.beta_ilm:9.3f} {w.beta_elm:9.3f}")
    return "\n".join(lines) + "\n"


def manifest(result: ExperimentResult, command: str) -> dict:
    return {
        "record": "manifest",
        "command": command,
        "config": result.config.as_dict(),
        "seeds": {"task": result.config.task.rng_seed, "train": result.config.train.rng_seed,
                  "fine_tune": result.config.fine_tune.rng_seed},
        "hashes": result.hashes,
    }


def write_outputs(result: ExperimentResult, out_dir: str | Path, command: str = "run-experiment") -> dict[str, Path]:
    """Report (text + JSON lines), heatmap CSV/PNG per gender, systems figure.

    The report files depend only on the configuration, so they are
    byte-identical across runs and output directories. The command line and a
    wall-clock timestamp go to ``manifest.json`` alone.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest(result, command)
    files = {}

    reproducible = {k: v for k, v in man.items() if k != "command"}
    text = "# " + json.dumps({k: man[k] for k in ("seeds", "hashes")}, sort_keys=True) + "\n"
    text += "# config " + json.dumps(man["config"], sort_keys=True) + "\n\n"
    text += format_table(result)
    files["report_txt"] = out / "report.txt"
    files["report_txt"].write_text(text, encoding="utf-8")

    records = [reproducible]
    records += [{"record": "system", **r.as_dict()} for r in result.rows]
    for cond in CONDITIONS:
        for g in GENDERS:
            for key in ("ilm_elm", "elm"):
                cv: CVResult = result.tuning[cond][g][key]
                records.append({"record": "tuning", "condition": cond, "gender": g, "grid": key,
                                **_weights_dict(cv.selections, cv.mean)})
    records.append({"record": "train", "base_epoch_loss": result.base_losses})
    files["report_jsonl"] = out / "report.jsonl"
    files["report_jsonl"].write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records),
                                     encoding="utf-8")

    for cond in CONDITIONS:
        for g in GENDERS:
            table = result.tuning[cond][g]["ilm_elm"].table
            points = table.points(range(len(table.hyps)))
            stem = f"heatmap_{cond}_{g}"
            (out / f"{stem}.csv").write_text(heatmap_csv(points), encoding="utf-8")
            files[f"{stem}_csv"] = out / f"{stem}.csv"
            files[f"{stem}_png"] = plot_heatmaps(points, out / f"{stem}.png", title=f"{cond}, target gender {g}")
    files["systems_png"] = plot_systems([r.as_dict() for r in result.rows], out / "systems.png")

    stamped = dict(man, timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                   outputs={k: p.name for k, p in files.items()})
    files["manifest"] = out / "manifest.json"
    files["manifest"].write_text(json.dumps(stamped, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return files
