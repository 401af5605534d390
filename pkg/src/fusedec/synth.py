"""Synthetic translation tasks with a controllable speaker-gender skew.

A source sentence is a voice marker (``VF``/``VM``), one or more concepts
``a_i`` whose target form ``g{i}F``/``g{i}M`` must agree with the speaker,
then ``content_len`` content words ``w_j`` translated one-to-one into
``t_j``. Position ``p`` of each group draws from the ``p``-th class of its
lexicon (index modulo the group length), which lets an order-blind encoder
recover target order from token identity. Gendered forms lead the target, so
a wrong form touches one n-gram per order; long neutral tails keep gender
errors a small share of BLEU, as in real speech translation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Vocabulary
from .evaluation import AnnotatedSentence, AnnotatedTerm, write_eval_set

VOICE = {"F": "VF", "M": "VM"}
OTHER = {"F": "M", "M": "F"}

# independent RNG streams per artifact so that changing one size never
# perturbs another artifact
_STREAM = {"parallel": 1, "mono_F": 2, "mono_M": 3, "eval": 4}


@dataclass(frozen=True)
class SynthTaskConfig:
    rng_seed: int = 0
    n_train: int = 10000
    skew_rho: float = 0.8
    voice_match_q: float = 0.85
    lexicon_size: int = 20
    gendered_lexicon: int = 6
    gendered_slots: int = 2
    n_eval: int = 300
    n_mono: int = 5000
    content_len: int = 14

    def __post_init__(self):
        for name in ("skew_rho", "voice_match_q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("n_train", "lexicon_size", "gendered_lexicon", "gendered_slots", "n_eval", "n_mono",
                     "content_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.gendered_lexicon < self.gendered_slots:
            raise ValueError("each gendered slot needs at least one concept")
        if self.lexicon_size < self.content_len:
            raise ValueError("each content position needs at least one word")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class SynthSample:
    source: tuple[str, ...]
    target: tuple[str, ...]
    speaker_gender: str
    voice: str


def concept(i: int) -> str:
    return f"a{i}"


def gendered(i: int, g: str) -> str:
    return f"g{i}{g}"


def content_src(j: int) -> str:
    return f"w{j}"


def content_tgt(j: int) -> str:
    return f"t{j}"


def source_vocab(cfg: SynthTaskConfig) -> Vocabulary:
    words = ["VF", "VM"]
    words += [concept(i) for i in range(cfg.gendered_lexicon)]
    words += [content_src(j) for j in range(cfg.lexicon_size)]
    return Vocabulary.build(words)


def target_vocab(cfg: SynthTaskConfig) -> Vocabulary:
    words = [gendered(i, g) for i in range(cfg.gendered_lexicon) for g in ("F", "M")]
    words += [content_tgt(j) for j in range(cfg.lexicon_size)]
    return Vocabulary.build(words)


def _rng(cfg: SynthTaskConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed, _STREAM[stream]])


def _slot_class(n: int, slot: int, slots: int) -> np.ndarray:
    return np.arange(slot, n, slots)


def _draw_skeleton(cfg: SynthTaskConfig, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Concept indices (1..gendered_slots of them) and content indices."""
    k = int(rng.integers(1, cfg.gendered_slots + 1))
    concepts = [int(rng.choice(_slot_class(cfg.gendered_lexicon, s, cfg.gendered_slots))) for s in range(k)]
    contents = [int(rng.choice(_slot_class(cfg.lexicon_size, p, cfg.content_len))) for p in range(cfg.content_len)]
    return concepts, contents


def _render(skeleton: tuple[Sequence[int], Sequence[int]], voice: str, gender: str):
    concepts, contents = skeleton
    src = [VOICE[voice]] + [concept(i) for i in concepts] + [content_src(j) for j in contents]
    tgt = [gendered(i, gender) for i in concepts] + [content_tgt(j) for j in contents]
    return tuple(src), tuple(tgt)


def generate_parallel(cfg: SynthTaskConfig) -> list[SynthSample]:
    rng = _rng(cfg, "parallel")
    out = []
    for _ in range(cfg.n_train):
        speaker = "M" if rng.random() < cfg.skew_rho else "F"
        voice = speaker if rng.random() < cfg.voice_match_q else OTHER[speaker]
        src, tgt = _render(_draw_skeleton(cfg, rng), voice, speaker)
        out.append(SynthSample(src, tgt, speaker, voice))
    return out


def generate_monolingual(cfg: SynthTaskConfig, gender: str) -> list[tuple[str, ...]]:
    if gender not in VOICE:
        raise ValueError(f"bad gender {gender!r}")
    rng = _rng(cfg, f"mono_{gender}")
    return [_render(_draw_skeleton(cfg, rng), gender, gender)[1] for _ in range(cfg.n_mono)]


def generate_eval(cfg: SynthTaskConfig, condition: str = "aligned") -> list[AnnotatedSentence]:
    """Speakers alternate F, M by index; voice always matches the speaker.

    ``swapped`` keeps sources and voices but flips every gendered form in the
    reference (and the annotations) to the opposite gender.
    """
    if condition not in ("aligned", "swapped"):
        raise ValueError(f"bad condition {condition!r}")
    rng = _rng(cfg, "eval")
    out = []
    for n in range(cfg.n_eval):
        speaker = "F" if n % 2 == 0 else "M"
        skeleton = _draw_skeleton(cfg, rng)
        ref_gender = speaker if condition == "aligned" else OTHER[speaker]
        src, tgt = _render(skeleton, speaker, ref_gender)
        terms = tuple(
            AnnotatedTerm(gendered(i, ref_gender), gendered(i, OTHER[ref_gender]), ref_gender)
            for i in skeleton[0]
        )
        out.append(AnnotatedSentence(f"synth-{n:05d}", " ".join(src), " ".join(tgt), terms))
    return out


def swap_eval(sentences: Sequence[AnnotatedSentence]) -> list[AnnotatedSentence]:
    """Flip reference gender forms and annotations; sources untouched."""
    out = []
    for s in sentences:
        mapping = {t.correct_form: t.wrong_form for t in s.terms}
        ref = " ".join(mapping.get(tok, tok) for tok in s.reference.split())
        out.append(AnnotatedSentence(s.id, s.source, ref, tuple(t.swapped() for t in s.terms)))
    return out


def write_task(cfg: SynthTaskConfig, out_dir: str | Path) -> dict[str, str]:
    """Write parallel, monolingual, eval files plus a manifest; return the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    parallel = generate_parallel(cfg)
    files["train_src"] = "train.src"
    files["train_tgt"] = "train.tgt"
    files["train_gender"] = "train.gender"
    (out / "train.src").write_text("".join(" ".join(s.source) + "\n" for s in parallel), encoding="utf-8")
    (out / "train.tgt").write_text("".join(" ".join(s.target) + "\n" for s in parallel), encoding="utf-8")
    (out / "train.gender").write_text("".join(s.speaker_gender + "\n" for s in parallel), encoding="utf-8")
    for g in ("F", "M"):
        name = f"mono.{g}.txt"
        (out / name).write_text("".join(" ".join(s) + "\n" for s in generate_monolingual(cfg, g)),
                                encoding="utf-8")
        files[f"mono_{g}"] = name
    for cond in ("aligned", "swapped"):
        name = f"eval.{cond}.tsv"
        write_eval_set(out / name, generate_eval(cfg, cond))
        files[f"eval_{cond}"] = name
    source_vocab(cfg).save(out / "src.vocab")
    target_vocab(cfg).save(out / "tgt.vocab")
    files["src_vocab"] = "src.vocab"
    files["tgt_vocab"] = "tgt.vocab"
    manifest = {"config": json.loads(cfg.to_json()), "files": files}
    (out / "task.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return files
