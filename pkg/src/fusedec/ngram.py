"""Count-based n-gram LM with add-k smoothing (used as the external LM)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DataError, Vocabulary, fmt_float

DEFAULT_ORDER = 3
DEFAULT_K = 0.1


class NGramLM:
    """Add-k smoothed n-gram model over a fixed vocabulary.

    Only full ``order``-grams of BOS-padded, EOS-terminated training
    sentences are counted. ``p(w|ctx) = (c(ctx,w) + k) / (c(ctx) + k V)``.
    """

    def __init__(self, vocab: Vocabulary, order: int = DEFAULT_ORDER, k: float = DEFAULT_K):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not k > 0:
            raise ValueError("smoothing constant k must be > 0")
        self.vocab = vocab
        self.order = order
        self.k = float(k)
        self.counts: dict[tuple[int, ...], dict[int, int]] = {}
        self._totals: dict[tuple[int, ...], int] = {}
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def context_of(self, prefix: Sequence[int]) -> tuple[int, ...]:
        n = self.order - 1
        if n == 0:
            return ()
        padded = (self.vocab.bos_id,) * n + tuple(prefix)
        return padded[len(padded) - n :]

    def logprob_dist(self, prefix: Sequence[int]) -> np.ndarray:
        ctx = self.context_of(prefix)
        dist = self._cache.get(ctx)
        if dist is None:
            V = self.vocab_size
            row = np.full(V, self.k)
            for tok, c in self.counts.get(ctx, {}).items():
                row[tok] += c
            dist = np.log(row) - np.log(self._totals.get(ctx, 0) + self.k * V)
            dist.setflags(write=False)
            self._cache[ctx] = dist
        return dist

    def sequence_logprob(self, seq: Sequence[int], include_eos: bool = True) -> float:
        total = 0.0
        seq = tuple(seq)
        for t in range(len(seq) + int(include_eos)):
            tok = seq[t] if t < len(seq) else self.vocab.eos_id
            total += float(self.logprob_dist(seq[:t])[tok])
        return total

    def _finalize(self) -> None:
        self._totals = {ctx: sum(row.values()) for ctx, row in self.counts.items()}
        self._cache = {}

    def dumps(self) -> str:
        lines = [f"NGRAM v1 {self.order} {fmt_float(self.k)} {self.vocab_size}"]
        for ctx in sorted(self.counts):
            row = self.counts[ctx]
            for tok in sorted(row):
                lines.append(" ".join(str(i) for i in (*ctx, tok, row[tok])))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, vocab: Vocabulary) -> "NGramLM":
        lines = text.rstrip("\n").split("\n")
        head = lines[0].split()
        if len(head) != 5 or head[:2] != ["NGRAM", "v1"]:
            raise DataError("bad n-gram header")
        order, k, V = int(head[2]), float(head[3]), int(head[4])
        if V != len(vocab):
            raise DataError(f"n-gram model expects vocabulary size {V}, got {len(vocab)}")
        lm = cls(vocab, order, k)
        for lineno, line in enumerate(lines[1:], start=2):
            ids = [int(x) for x in line.split()]
            if len(ids) != order + 1 or ids[-1] < 1:
                raise DataError(f"line {lineno}: bad n-gram entry")
            lm.counts.setdefault(tuple(ids[: order - 1]), {})[ids[order - 1]] = ids[-1]
        lm._finalize()
        return lm

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary) -> "NGramLM":
        return cls.loads(Path(path).read_text(encoding="utf-8"), vocab)


def train_ngram(
    corpus: Iterable[Sequence[int]],
    vocab: Vocabulary,
    order: int = DEFAULT_ORDER,
    k: float = DEFAULT_K,
) -> NGramLM:
    lm = NGramLM(vocab, order, k)
    counts: dict[tuple[int, ...], dict[int, int]] = defaultdict(lambda: defaultdict(int))
    pad = (vocab.bos_id,) * (order - 1)
    n_sent = 0
    for sent in corpus:
        vocab.validate(sent)
        padded = pad + tuple(sent) + (vocab.eos_id,)
        for i in range(order - 1, len(padded)):
            counts[padded[i - order + 1 : i]][padded[i]] += 1
        n_sent += 1
    if n_sent == 0:
        raise ValueError("empty corpus")
    lm.counts = {ctx: dict(row) for ctx, row in counts.items()}
    lm._finalize()
    return lm


def lm_logprob_dist(model: NGramLM, prefix: Sequence[int]) -> np.ndarray:
    return model.logprob_dist(prefix)


def lm_sequence_logprob(model: NGramLM, seq: Sequence[int]) -> float:
    return model.sequence_logprob(seq)
