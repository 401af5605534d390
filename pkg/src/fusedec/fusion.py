"""ILM estimation by global encoder average, log-linear fusion and decoding.

The fused objective for a target ``y`` given source ``x`` is

    log p_base(y|x) - beta_ilm * log p_ilm(y) + beta_elm * log p_elm(y)

where ``p_ilm`` is the base decoder fed a single frame holding the mean of
all encoder frames over the training sources.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DataError, FusionWeights
from .ngram import NGramLM
from .seq2seq import EncoderOutput, ToySeq2Seq

DEFAULT_BEAM = 5
DEFAULT_MAX_LEN = 20
MAX_SEARCH_SPACE = 10**6


@dataclass(frozen=True)
class IlmContext:
    c: np.ndarray
    frames_total: int
    samples_total: int

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise DataError("ILM context must be finite")
        if not self.frames_total >= self.samples_total >= 1:
            raise DataError("need frames_total >= samples_total >= 1")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.c.size

    def as_encoder_output(self) -> EncoderOutput:
        return EncoderOutput(self.c[None, :])

    def dumps(self) -> str:
        head = f"ILMCTX v1 {self.dim} {self.frames_total} {self.samples_total}"
        return head + "\n" + " ".join("%.17g" % x for x in self.c) + "\n"

    @classmethod
    def loads(cls, text: str) -> "IlmContext":
        lines = text.strip("\n").split("\n")
        head = lines[0].split()
        if len(head) != 5 or head[:2] != ["ILMCTX", "v1"]:
            raise DataError("bad ILM context header")
        d, frames, samples = map(int, head[2:])
        c = np.array([float(x) for x in lines[1].split()])
        if c.size != d:
            raise DataError(f"ILM context declares dimension {d}, found {c.size}")
        return cls(c, frames, samples)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IlmContext":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def average_frames(outputs: Iterable[EncoderOutput]) -> IlmContext:
    """Grand mean over every frame of every output (not a mean of means)."""
    total = None
    frames = samples = 0
    for out in outputs:
        s = out.frames.sum(axis=0)
        total = s if total is None else total + s
        frames += len(out)
        samples += 1
    if samples == 0:
        raise ValueError("no encoder outputs to average")
    return IlmContext(total / frames, frames, samples)


def compute_ilm_context(model: ToySeq2Seq, training_sources: Sequence[Sequence[int]]) -> IlmContext:
    if len(training_sources) == 0:
        raise ValueError("no training sources to average")
    return average_frames(model.encode(src) for src in training_sources)


def ilm_logprob_dist(model: ToySeq2Seq, ctx: IlmContext, prefix: Sequence[int]) -> np.ndarray:
    if ctx.dim != model.d:
        raise DataError(f"ILM context has dimension {ctx.dim}, model expects {model.d}")
    return model.decoder_logprob_dist(prefix, ctx.as_encoder_output())


def fused_step_scores(base: np.ndarray, ilm: np.ndarray, elm: np.ndarray, w: FusionWeights) -> np.ndarray:
    if not base.shape == ilm.shape == elm.shape:
        raise ValueError(f"length mismatch: {base.shape}, {ilm.shape}, {elm.shape}")
    return base - w.beta_ilm * ilm + w.beta_elm * elm


@dataclass
class DecodeResult:
    tokens: tuple[int, ...]
    fused_score: float
    base_score: float
    elm_score: float
    ilm_score: float
    weights: FusionWeights = field(default_factory=FusionWeights)

    def recombined(self) -> float:
        w = self.weights
        return self.base_score - w.beta_ilm * self.ilm_score + w.beta_elm * self.elm_score


class FusionScorer:
    """Per-prefix component distributions for one (model, ILM context, ELM).

    Decoder states and ILM distributions depend only on the prefix, so they
    are cached across sources; :meth:`for_source` adds the per-source cache
    of base-model distributions. Either ``ctx`` or ``elm`` may be ``None``,
    in which case that component contributes zeros.
    """

    def __init__(self, model: ToySeq2Seq, ctx: IlmContext | None = None, elm: NGramLM | None = None):
        if ctx is not None and ctx.dim != model.d:
            raise DataError(f"ILM context has dimension {ctx.dim}, model expects {model.d}")
        if elm is not None and elm.vocab != model.tgt_vocab:
            raise DataError("external LM and model target vocabularies differ")
        self.model = model
        self.ctx = ctx
        self.elm = elm
        self._ilm_frame = ctx.as_encoder_output() if ctx is not None else None
        self._states: dict[tuple[int, ...], np.ndarray] = {}
        self._ilm: dict[tuple[int, ...], np.ndarray] = {}
        self._zeros = np.zeros(len(model.tgt_vocab))

    def state(self, prefix: tuple[int, ...]) -> np.ndarray:
        s = self._states.get(prefix)
        if s is None:
            if not prefix:
                s = self.model.initial_state()
            else:
                s = self.model.advance(self.state(prefix[:-1]), prefix[-1])
            self._states[prefix] = s
        return s

    def ilm(self, prefix: tuple[int, ...]) -> np.ndarray:
        if self._ilm_frame is None:
            return self._zeros
        d = self._ilm.get(prefix)
        if d is None:
            d = self.model.output_dist(self.state(prefix), self._ilm_frame)
            self._ilm[prefix] = d
        return d

    def elm_dist(self, prefix: tuple[int, ...]) -> np.ndarray:
        if self.elm is None:
            return self._zeros
        return self.elm.logprob_dist(prefix)

    def for_source(self, source: Sequence[int]) -> "SourceScorer":
        return SourceScorer(self, self.model.encode(source))


class SourceScorer:
    def __init__(self, parent: FusionScorer, enc_out: EncoderOutput):
        self.parent = parent
        self.enc_out = enc_out
        self._base: dict[tuple[int, ...], np.ndarray] = {}

    def components(self, prefix: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        base = self._base.get(prefix)
        if base is None:
            base = self.parent.model.output_dist(self.parent.state(prefix), self.enc_out)
            self._base[prefix] = base
        return base, self.parent.ilm(prefix), self.parent.elm_dist(prefix)


@dataclass
class Hypothesis:
    prefix: tuple[int, ...]
    fused: float = 0.0
    base: float = 0.0
    ilm: float = 0.0
    elm: float = 0.0
    finished: bool = False


def _rank_key(score: float, tokens: tuple[int, ...]):
    # higher score first; ties by lower token ids, then shorter
    return (-score, tokens)


def beam_search_scored(scorer: SourceScorer, w: FusionWeights, beam: int = DEFAULT_BEAM,
                       max_len: int = DEFAULT_MAX_LEN, length_norm: bool = False,
                       fuse_eos: bool = True) -> DecodeResult:
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    vocab = scorer.parent.model.tgt_vocab
    bos, eos = vocab.bos_id, vocab.eos_id
    V = len(vocab)
    alive = [Hypothesis(())]
    finished: list[Hypothesis] = []
    for step in range(max_len + 1):
        rows, comps = [], []
        for hyp in alive:
            base, ilm, elm = scorer.components(hyp.prefix)
            fused = fused_step_scores(base, ilm, elm, w)
            if not fuse_eos:
                fused[eos] = base[eos]
            row = hyp.fused + fused
            row[bos] = -np.inf
            if step == max_len:
                keep = row[eos]
                row = np.full(V, -np.inf)
                row[eos] = keep
            rows.append(row)
            comps.append((base, ilm, elm))
        scores = np.stack(rows)
        flat = scores.reshape(-1)
        n_valid = int(np.sum(np.isfinite(flat)))
        k = min(beam, n_valid)
        if k == 0:
            break
        threshold = np.partition(flat, flat.size - k)[flat.size - k]
        idx = np.nonzero(flat >= threshold)[0]
        cands = []
        for j in idx:
            h, tok = divmod(int(j), V)
            cands.append((_rank_key(float(flat[j]), alive[h].prefix + (tok,)), h, tok))
        cands.sort()
        nxt = []
        for _, h, tok in cands[:k]:
            hyp = alive[h]
            base, ilm, elm = comps[h]
            step_ilm = ilm[tok] if (fuse_eos or tok != eos) else 0.0
            step_elm = elm[tok] if (fuse_eos or tok != eos) else 0.0
            new = Hypothesis(
                hyp.prefix + (tok,),
                float(scores[h, tok]),
                hyp.base + float(base[tok]),
                hyp.ilm + float(step_ilm),
                hyp.elm + float(step_elm),
                finished=tok == eos,
            )
            (finished if new.finished else nxt).append(new)
        alive = nxt
        if not alive:
            break

    def final_key(hyp: Hypothesis):
        score = hyp.fused / len(hyp.prefix) if length_norm else hyp.fused
        return _rank_key(score, hyp.prefix[:-1])

    best = min(finished, key=final_key)
    return DecodeResult(best.prefix[:-1], best.fused, best.base, best.elm, best.ilm, w)


def grid_beam_search(scorer: SourceScorer, grid: Sequence[FusionWeights], beam: int = DEFAULT_BEAM,
                     max_len: int = DEFAULT_MAX_LEN, length_norm: bool = False,
                     fuse_eos: bool = True) -> list[DecodeResult]:
    """:func:`beam_search_scored` for many weight pairs at once, vectorized over the grid.

    Gives the same result as decoding each pair separately. All live
    hypotheses share one length, so ordering tokens lexicographically equals
    ordering by (rank of the prefix, next token).
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    vocab = scorer.parent.model.tgt_vocab
    bos, eos = vocab.bos_id, vocab.eos_id
    V = len(vocab)
    G = len(grid)
    b_ilm = np.array([w.beta_ilm for w in grid])[:, None, None]
    b_elm = np.array([w.beta_elm for w in grid])[:, None, None]
    prefixes: list[tuple[int, ...]] = [()]  # sorted, all of the current length
    slot = np.full((G, beam), -1)
    slot[:, 0] = 0
    score = np.full((G, beam), -np.inf)
    score[:, 0] = 0.0
    acc_base = np.zeros((G, beam))
    acc_ilm = np.zeros((G, beam))
    acc_elm = np.zeros((G, beam))
    best: list = [None] * G
    rows_g = np.arange(G)[:, None]
    for step in range(max_len + 1):
        comps = [scorer.components(p) for p in prefixes]
        alive = slot >= 0
        at = np.where(alive, slot, 0)
        base = np.stack([c[0] for c in comps])[at]
        ilm = np.stack([c[1] for c in comps])[at]
        elm = np.stack([c[2] for c in comps])[at]
        fused = base - b_ilm * ilm + b_elm * elm
        if not fuse_eos:
            fused[..., eos] = base[..., eos]
        rows = score[..., None] + fused
        rows[..., bos] = -np.inf
        if step == max_len:
            keep = rows[..., eos].copy()
            rows[...] = -np.inf
            rows[..., eos] = keep
        rows[~alive] = -np.inf
        flat = rows.reshape(G, beam * V)
        order_key = (at[..., None] * V + np.arange(V)).reshape(G, beam * V)
        top = np.lexsort((order_key, -flat), axis=-1)[:, :beam]
        top_score = np.take_along_axis(flat, top, axis=-1)
        valid = np.isfinite(top_score)
        h, tok = np.divmod(top, V)
        fused_tok = np.ones_like(tok, dtype=bool) if fuse_eos else tok != eos
        new_base = acc_base[rows_g, h] + base[rows_g, h, tok]
        new_ilm = acc_ilm[rows_g, h] + np.where(fused_tok, ilm[rows_g, h, tok], 0.0)
        new_elm = acc_elm[rows_g, h] + np.where(fused_tok, elm[rows_g, h, tok], 0.0)
        parent = at[rows_g, h]
        done = valid & (tok == eos)
        for g, j in zip(*np.nonzero(done)):
            tokens = prefixes[parent[g, j]]
            s = float(top_score[g, j])
            key = _rank_key(s / (len(tokens) + 1) if length_norm else s, tokens)
            if best[g] is None or key < best[g][0]:
                best[g] = (key, tokens, s, float(new_base[g, j]), float(new_ilm[g, j]), float(new_elm[g, j]))
        cont = valid & (tok != eos)
        if not cont.any():
            break
        codes, inverse = np.unique(parent[cont] * V + tok[cont], return_inverse=True)
        prefixes = [prefixes[c // V] + (c % V,) for c in codes.tolist()]
        slot = np.full((G, beam), -1)
        slot[cont] = inverse.reshape(-1)
        score = np.where(cont, top_score, -np.inf)
        acc_base, acc_ilm, acc_elm = new_base, new_ilm, new_elm
    return [DecodeResult(b[1], b[2], b[3], b[5], b[4], w) for b, w in zip(best, grid)]


def beam_search(model: ToySeq2Seq, ctx: IlmContext | None, elm: NGramLM | None, source: Sequence[int],
                w: FusionWeights, beam: int = DEFAULT_BEAM, max_len: int = DEFAULT_MAX_LEN,
                length_norm: bool = False, fuse_eos: bool = True) -> DecodeResult:
    scorer = FusionScorer(model, ctx, elm).for_source(source)
    return beam_search_scored(scorer, w, beam, max_len, length_norm, fuse_eos)


def exhaustive_decode(model: ToySeq2Seq, ctx: IlmContext | None, elm: NGramLM | None, source: Sequence[int],
                      w: FusionWeights, max_len: int = DEFAULT_MAX_LEN, length_norm: bool = False,
                      fuse_eos: bool = True) -> DecodeResult:
    """Brute-force argmax of the fused objective over all sequences.

    Every candidate is scored with whole-sequence scorers, independently of
    the incremental bookkeeping used by :func:`beam_search`.
    """
    vocab = model.tgt_vocab
    V = len(vocab)
    if V**max_len > MAX_SEARCH_SPACE:
        raise ValueError("search space too large")
    alphabet = [i for i in range(V) if i not in (vocab.bos_id, vocab.eos_id)]
    enc_out = model.encode(source)
    ilm_frame = ctx.as_encoder_output() if ctx is not None else None
    best = None
    best_key = None
    for n in range(max_len + 1):
        for seq in itertools.product(alphabet, repeat=n):
            base = model.sequence_logprob_given(seq, enc_out)
            ilm = model.sequence_logprob_given(seq, ilm_frame, include_eos=fuse_eos) if ilm_frame is not None else 0.0
            lm = elm.sequence_logprob(seq, include_eos=fuse_eos) if elm is not None else 0.0
            fused = base - w.beta_ilm * ilm + w.beta_elm * lm
            score = fused / (n + 1) if length_norm else fused
            key = _rank_key(score, seq)
            if best_key is None or key < best_key:
                best_key = key
                best = DecodeResult(seq, fused, base, lm, ilm, w)
    return best
