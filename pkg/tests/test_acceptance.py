"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed in an
"acceptance criteria" section at the end of the pytest run.
"""

import contextlib
import csv
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_instance
from fusedec.cli import main
from fusedec.core import FusionWeights
from fusedec.evaluation import AnnotatedSentence, AnnotatedTerm, bleu_corpus, parse_eval_set, score_gender
from fusedec.experiment import ExperimentConfig, run
from fusedec.fusion import FusionScorer, average_frames, beam_search, exhaustive_decode, ilm_logprob_dist
from fusedec.seq2seq import EncoderOutput, ToySeq2Seq, numerical_grad_check
from fusedec import data_path
from test_evaluation import BLEU_PAIRS, FIXTURE, _ref_bleu

pytestmark = pytest.mark.slow


@pytest.fixture
def criterion(request):
    @contextlib.contextmanager
    def record(n: int, title: str):
        detail: dict = {}
        ok = False
        try:
            yield detail
            ok = True
        finally:
            info = ", ".join(f"{k}={v}" for k, v in detail.items())
            line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title}" + (f" [{info}]" if info else "")
            request.config.stash[ACCEPTANCE].append((n, line))
            print(line)

    return record


def _cli(*argv) -> int:
    return main([str(a) for a in argv])


def test_c1_beam_equals_exhaustive(criterion):
    with criterion(1, "full-width beam search equals exhaustive decoding") as d:
        t0 = time.perf_counter()
        mismatches = 0
        worst = 0.0
        n = 120
        for seed in range(n):
            n_tgt = 1 + seed % 2  # V in {4, 5}
            max_len = 1 + seed % 4
            model, ctx, elm, source, w = random_instance(1000 + seed, n_tgt=n_tgt)
            beam = len(model.tgt_vocab) ** max_len
            got = beam_search(model, ctx, elm, source, w, beam, max_len)
            want = exhaustive_decode(model, ctx, elm, source, w, max_len)
            mismatches += got.tokens != want.tokens
            worst = max(worst, abs(got.fused_score - want.fused_score))
        elapsed = time.perf_counter() - t0
        d.update(instances=n, mismatches=mismatches, max_score_diff=f"{worst:.1e}", seconds=f"{elapsed:.1f}")
        assert mismatches == 0 and worst < 1e-9 and elapsed < 60


def test_c2_zero_weights_identity(criterion):
    with criterion(2, "zero weights reproduce base-only beam search") as d:
        diffs = 0
        for seed in range(50):
            model, ctx, elm, source, _ = random_instance(2000 + seed, n_tgt=3)
            fused = beam_search(model, ctx, elm, source, FusionWeights(0.0, 0.0), beam=3, max_len=5)
            base = beam_search(model, None, None, source, FusionWeights(0.0, 0.0), beam=3, max_len=5)
            v = model.tgt_vocab
            diffs += v.decode(fused.tokens).encode() != v.decode(base.tokens).encode()
        d.update(instances=50, differences=diffs)
        assert diffs == 0


def test_c3_ilm_correctness(criterion):
    with criterion(3, "ILM context is the grand mean and the ILM ignores the source") as d:
        ctx = average_frames([EncoderOutput([[2.0]]), EncoderOutput([[0.0], [0.0], [0.0]])])
        d["grand_mean"] = ctx.c.tolist()
        assert ctx.c.tolist() == [0.5]
        model, ilm_ctx, _, _, _ = random_instance(7, n_tgt=3)
        scorer = FusionScorer(model, ilm_ctx)
        sources = ([3], [4, 5], [5, 5, 3])
        identical = True
        for prefix in ((), (3,), (4, 3)):
            ref = ilm_logprob_dist(model, ilm_ctx, prefix)
            for src in sources:
                identical &= np.array_equal(scorer.for_source(src).components(prefix)[1], ref)
        d["bit_identical"] = identical
        assert identical


def test_c4_gradient_check(criterion):
    with criterion(4, "analytic gradients match finite differences") as d:
        t0 = time.perf_counter()
        worst = 0.0
        rng = np.random.default_rng(4)
        for seed in range(10):
            model, *_ = random_instance(4000 + seed, n_tgt=3, d=3, h=4)
            src = list(rng.integers(3, len(model.src_vocab), size=int(rng.integers(1, 4))))
            tgt = list(rng.integers(3, len(model.tgt_vocab), size=int(rng.integers(1, 4))))
            worst = max(worst, numerical_grad_check(model, (src, tgt), epsilon=1e-4))
        elapsed = time.perf_counter() - t0
        d.update(max_rel_error=f"{worst:.2e}", seconds=f"{elapsed:.1f}")
        assert worst < 1e-3 and elapsed < 30


def test_c5_metric_fidelity(criterion):
    with criterion(5, "BLEU matches the reference implementation and gender scoring matches hand counts") as d:
        hyps, refs = map(list, zip(*BLEU_PAIRS))
        diffs = [abs(bleu_corpus([h], [r]) - _ref_bleu([h], [r])) for h, r in BLEU_PAIRS]
        diffs.append(abs(bleu_corpus(hyps, refs) - _ref_bleu(hyps, refs)))
        d["max_bleu_diff"] = f"{max(diffs):.2e}"
        sents = [AnnotatedSentence(f"s{i}", "src", "ref", tuple(AnnotatedTerm(*t.split("|")) for t in terms))
                 for i, (terms, _) in enumerate(FIXTURE)]
        g = score_gender([h for _, h in FIXTURE], sents)
        counts = {x: (g.total[x], g.correct[x], g.wrong[x]) for x in "FM"}
        d["gender_counts"] = counts
        assert max(diffs) < 0.01
        assert counts == {"F": (6, 4, 1), "M": (6, 2, 2)}
        assert (g.coverage("F"), g.accuracy("F"), g.coverage("M"), g.accuracy("M")) == (5 / 6, 4 / 5, 4 / 6, 2 / 4)


@pytest.fixture(scope="module")
def default_run():
    t0 = time.perf_counter()
    result = run(ExperimentConfig())
    return result, time.perf_counter() - t0


def _acc(result, system, cond, g):
    return 100.0 * result.row(system, cond).metrics[f"accuracy_{g}"]


def test_c6_aligned_directional(criterion, default_run):
    with criterion(6, "aligned condition: bias, fusion gain, ILM benefit, BLEU kept") as d:
        result, seconds = default_run
        base_f, base_m = _acc(result, "M_B", "aligned", "F"), _acc(result, "M_B", "aligned", "M")
        ilm_f = _acc(result, "M_B-ILM+ELM", "aligned", "F")
        elm_f = _acc(result, "M_B+ELM", "aligned", "F")
        bleu_base = result.row("M_B").metrics["bleu"]
        bleu_ilm = result.row("M_B-ILM+ELM").metrics["bleu"]
        checks = {
            "a": base_f < base_m,
            "b": ilm_f - base_f >= 20.0,
            "c": ilm_f >= elm_f,
            "d": abs(bleu_ilm - bleu_base) <= 2.0,
            "time": seconds < 600,
        }
        d.update(base_F=f"{base_f:.1f}", base_M=f"{base_m:.1f}", ilm_elm_F=f"{ilm_f:.1f}", elm_F=f"{elm_f:.1f}",
                 bleu_gap=f"{bleu_ilm - bleu_base:+.2f}", seconds=f"{seconds:.0f}",
                 failed=[k for k, v in checks.items() if not v])
        assert all(checks.values())


def test_c7_swapped_directional(criterion, default_run):
    with criterion(7, "swapped condition: opposite-gender ELM beats the base by 20 points") as d:
        result, _ = default_run
        gains = {}
        for g in "FM":
            base = _acc(result, "M_B", "swapped", g)
            fused = _acc(result, "M_B-ILM+ELM", "swapped", g)
            gains[g] = fused - base
        # F references come from male voices and vice versa
        d.update(gain_voiceM_gdrF=f"{gains['F']:+.1f}", gain_voiceF_gdrM=f"{gains['M']:+.1f}")
        assert all(v >= 20.0 for v in gains.values())


def test_c8_tuning_trend(criterion, default_run):
    with criterion(8, "under-represented gender gets the larger mean beta_elm") as d:
        result, _ = default_run
        f = result.tuning["aligned"]["F"]["ilm_elm"].mean.beta_elm
        m = result.tuning["aligned"]["M"]["ilm_elm"].mean.beta_elm
        d.update(beta_elm_F=f"{f:.3f}", beta_elm_M=f"{m:.3f}")
        assert f >= m


SMALL_TASK = ["--n-train", "300", "--n-eval", "20", "--n-mono", "100", "--lexicon-size", "6",
              "--content-len", "3", "--gendered-lexicon", "4"]


def test_c9_heatmap_rows(criterion, tmp_path):
    with criterion(9, "tune-betas at step 0.05 emits 441 rows, the origin equals the base model") as d:
        task = tmp_path / "task"
        assert _cli("gen-task", "--out", task, *SMALL_TASK) == 0
        assert _cli("train-base", "--src", task / "train.src", "--tgt", task / "train.tgt",
                    "--src-vocab", task / "src.vocab", "--tgt-vocab", task / "tgt.vocab", "--d", 6, "--h", 12,
                    "--epochs", 3, "--out", tmp_path / "base.model") == 0
        assert _cli("train-elm", "--corpus", task / "mono.F.txt", "--vocab", task / "tgt.vocab",
                    "--out", tmp_path / "elm.lm") == 0
        assert _cli("estimate-ilm", "--model", tmp_path / "base.model", "--src", task / "train.src",
                    "--out", tmp_path / "ilm.ctx") == 0
        ev = task / "eval.aligned.tsv"
        assert _cli("tune-betas", "--model", tmp_path / "base.model", "--ilm-context", tmp_path / "ilm.ctx",
                    "--elm", tmp_path / "elm.lm", "--eval-set", ev, "--grid-step", 0.05, "--max-len", 8,
                    "--csv", tmp_path / "grid.csv") == 0
        rows = list(csv.DictReader((tmp_path / "grid.csv").open()))
        origin = rows[0]
        eval_set = parse_eval_set(ev)
        model = ToySeq2Seq.load(tmp_path / "base.model")
        hyps = [model.tgt_vocab.decode(beam_search(model, None, None, model.src_vocab.encode(s.source),
                                                   FusionWeights(), max_len=8).tokens) for s in eval_set]
        bleu = bleu_corpus(hyps, [s.reference for s in eval_set])
        acc = score_gender(hyps, eval_set).pooled_accuracy()
        d.update(rows=len(rows), origin_bleu=origin["bleu"], base_bleu=f"{bleu:.4f}")
        assert len(rows) == 441
        assert (float(origin["beta_ilm"]), float(origin["beta_elm"])) == (0.0, 0.0)
        assert origin["bleu"] == f"{bleu:.4f}" and origin["accuracy"] == f"{acc:.4f}"


def test_c10_determinism_and_extraction(criterion, tmp_path):
    with criterion(10, "run-experiment is byte-reproducible and corpus extraction partitions idempotently") as d:
        args = ["run-experiment", *SMALL_TASK, "--epochs", 2, "--ft-epochs", 1, "--d", 6, "--h", 12,
                "--grid-step", 0.25, "--folds", 2, "--max-len", 8]
        outs = [tmp_path / "run1", tmp_path / "run2"]
        for out in outs:
            assert _cli(*args, "--out", out) == 0
        same = {name: (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
                for name in ("report.txt", "report.jsonl")}
        d["identical"] = same

        corpus = ["Soy nueva en esta zona", "estoy cansado hoy", "soy nueva y estoy cansado", "nada que ver",
                  "Estoy contenta", "", "soy nuevo"]
        (tmp_path / "in.txt").write_text("".join(x + "\n" for x in corpus), encoding="utf-8")
        pats = data_path("es_example.toml")

        def extract(src, tag):
            f, m = tmp_path / f"{tag}.f", tmp_path / f"{tag}.m"
            assert _cli("extract-corpus", "--patterns", pats, "--input", src, "--out-f", f, "--out-m", m,
                        "--stats", tmp_path / f"{tag}.stats") == 0
            stats = dict(line.split("\t") for line in (tmp_path / f"{tag}.stats").read_text().splitlines()[3:])
            return f.read_text().splitlines(), m.read_text().splitlines(), stats

        f, m, stats = extract(tmp_path / "in.txt", "a")
        buckets = len(f) + len(m) + int(stats["ambiguous"]) + int(stats["unmatched"])
        f2, m2, _ = extract(tmp_path / "a.f", "b")
        f3, m3, _ = extract(tmp_path / "a.m", "c")
        d.update(lines=len(corpus), bucketed=buckets)
        assert all(same.values())
        assert buckets == len(corpus) and not set(f) & set(m)
        assert (f2, m2, f3, m3) == (f, [], [], m)
