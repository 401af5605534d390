"""Vocabulary, token sequences and log-domain helpers shared by every scorer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

# zero-probability events are floored here instead of -inf
LOG_FLOOR = -1e9


class FusedecError(Exception):
    """Base class for errors raised by this package."""


class DataError(FusedecError):
    """Malformed input data or a violated data invariant."""


class NumericError(FusedecError):
    """A numeric procedure failed (divergence, non-finite values)."""


def log_sum_exp(values: Sequence[float] | np.ndarray) -> float:
    """Stable log(sum(exp(values))) via the max-shift trick."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty vector")
    m = float(np.max(arr))
    if m == -math.inf:
        return -math.inf
    if arr.size == 1:
        return m
    return m + math.log(float(np.sum(np.exp(arr - m))))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, floored at LOG_FLOOR."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    out = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    return np.maximum(out, LOG_FLOOR)


def check_logprob_dist(dist: np.ndarray, tol: float = 1e-6) -> None:
    if dist.ndim != 1 or dist.size == 0:
        raise ValueError("log-prob distribution must be a non-empty vector")
    if not np.all(np.isfinite(dist)):
        raise NumericError("non-finite log-probability")
    if np.any(dist > 1e-9):
        raise NumericError("positive log-probability")
    total = log_sum_exp(dist)
    if abs(total) > tol:
        raise NumericError(f"distribution not normalized: log-sum-exp = {total:.3e}")


@dataclass(frozen=True)
class FusionWeights:
    """Interpolation weights for ILM subtraction and ELM addition."""

    beta_ilm: float = 0.0
    beta_elm: float = 0.0

    def __post_init__(self):
        for name in ("beta_ilm", "beta_elm"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    @property
    def is_zero(self) -> bool:
        return self.beta_ilm == 0.0 and self.beta_elm == 0.0


class Vocabulary:
    """Closed token alphabet with reserved BOS/EOS/UNK entries.

    Indices are dense ``0..V-1`` in the order the tokens were given.
    """

    def __init__(self, tokens: Iterable[str], bos_id: int = 0, eos_id: int = 1, unk_id: int = 2):
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise DataError("vocabulary tokens must be unique")
        ids = (bos_id, eos_id, unk_id)
        if len(set(ids)) != 3 or not all(0 <= i < len(self.tokens) for i in ids):
            raise DataError("bos/eos/unk ids must be distinct valid indices")
        self.bos_id, self.eos_id, self.unk_id = ids

    @classmethod
    def build(cls, words: Iterable[str]) -> "Vocabulary":
        """Reserved tokens first, then ``words`` in first-seen order."""
        seen = [BOS, EOS, UNK]
        known = set(seen)
        for w in words:
            if w not in known:
                known.add(w)
                seen.append(w)
        return cls(seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.tokens == other.tokens
            and (self.bos_id, self.eos_id, self.unk_id) == (other.bos_id, other.eos_id, other.unk_id)
        )

    def __hash__(self):
        return hash((self.tokens, self.bos_id, self.eos_id, self.unk_id))

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def encode(self, text: str) -> tuple[int, ...]:
        return tuple(self.index(t) for t in text.split())

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> str:
        special = {self.bos_id, self.eos_id}
        return " ".join(self.tokens[i] for i in ids if not (strip_special and i in special))

    def validate(self, ids: Sequence[int]) -> None:
        V = len(self.tokens)
        for i in ids:
            if not 0 <= i < V:
                raise DataError(f"token id {i} outside vocabulary of size {V}")

    def dumps(self) -> str:
        header = f"VOCAB v1 {len(self.tokens)} {self.bos_id} {self.eos_id} {self.unk_id}"
        return "\n".join([header, *self.tokens]) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        parts = lines[0].split()
        if len(parts) != 6 or parts[:2] != ["VOCAB", "v1"]:
            raise DataError("bad vocabulary header")
        size, bos, eos, unk = map(int, parts[2:])
        tokens = lines[1 : 1 + size]
        if len(tokens) != size:
            raise DataError(f"vocabulary declares {size} tokens, found {len(tokens)}")
        return cls(tokens, bos, eos, unk)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def fmt_float(x: float) -> str:
    """Decimal text that round-trips a float64 exactly."""
    return repr(float(x))
