"""Small attention encoder-decoder trained with hand-written backprop.

Encoder: one frame per source token, ``tanh(enc_w @ src_embed[x] + enc_b)``.
Decoder: plain tanh recurrence over target embeddings; its state queries the
frames with unscaled dot-product attention and the output layer reads
``[state; context]``. The decoder accepts any frame list, so it can be fed a
single averaged frame instead of a real encoding.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DataError, NumericError, Vocabulary, log_softmax

PARAM_NAMES = (
    "src_embed",
    "enc_w",
    "enc_b",
    "tgt_embed",
    "w_prev",
    "w_state",
    "b_state",
    "w_query",
    "w_out",
    "b_out",
)

Pair = tuple[Sequence[int], Sequence[int]]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 30
    rng_seed: int = 0
    grad_clip: float = 5.0
    batch_size: int = 16

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.grad_clip > 0:
            raise ValueError("grad_clip must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class EncoderOutput:
    """Frames ``(T, d)``; T >= 1."""

    def __init__(self, frames):
        frames = np.array(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise DataError("encoder output needs at least one frame")
        if not np.all(np.isfinite(frames)):
            raise NumericError("non-finite encoder frame")
        frames.setflags(write=False)
        self.frames = frames

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class ToySeq2Seq:
    def __init__(self, src_vocab: Vocabulary, tgt_vocab: Vocabulary, d: int = 16, h: int = 32,
                 rng_seed: int = 0, params: dict[str, np.ndarray] | None = None):
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.d = d
        self.h = h
        self.rng_seed = rng_seed
        if params is None:
            params = self._init_params(rng_seed)
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self._check_shapes()

    def _init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        d, h = self.d, self.h
        Vs, Vt = len(self.src_vocab), len(self.tgt_vocab)
        return {
            "src_embed": _glorot(rng, Vs, d),
            "enc_w": _glorot(rng, d, d),
            "enc_b": np.zeros(d),
            "tgt_embed": _glorot(rng, Vt, d),
            "w_prev": _glorot(rng, h, d),
            "w_state": _glorot(rng, h, h),
            "b_state": np.zeros(h),
            "w_query": _glorot(rng, d, h),
            "w_out": _glorot(rng, Vt, h + d),
            "b_out": np.zeros(Vt),
        }

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h = self.d, self.h
        Vs, Vt = len(self.src_vocab), len(self.tgt_vocab)
        return {
            "src_embed": (Vs, d), "enc_w": (d, d), "enc_b": (d,),
            "tgt_embed": (Vt, d), "w_prev": (h, d), "w_state": (h, h), "b_state": (h,),
            "w_query": (d, h), "w_out": (Vt, h + d), "b_out": (Vt,),
        }

    def _check_shapes(self) -> None:
        for name, shape in self.shapes().items():
            if self.params[name].shape != shape:
                raise DataError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise NumericError(f"parameter {name} is not finite")

    def copy(self) -> "ToySeq2Seq":
        return copy.deepcopy(self)

    # -- single-sequence scoring (used by decoding) --------------------------

    def encode(self, source: Sequence[int]) -> EncoderOutput:
        if len(source) == 0:
            raise DataError("empty source")
        self.src_vocab.validate(source)
        p = self.params
        emb = p["src_embed"][np.asarray(source, dtype=np.intp)]
        return EncoderOutput(np.tanh(emb @ p["enc_w"].T + p["enc_b"]))

    def initial_state(self) -> np.ndarray:
        return self.advance(np.zeros(self.h), self.tgt_vocab.bos_id)

    def advance(self, state: np.ndarray, token: int) -> np.ndarray:
        p = self.params
        return np.tanh(p["w_prev"] @ p["tgt_embed"][token] + p["w_state"] @ state + p["b_state"])

    def state_for(self, prefix: Sequence[int]) -> np.ndarray:
        state = self.initial_state()
        for tok in prefix:
            state = self.advance(state, tok)
        return state

    def attention(self, state: np.ndarray, enc_out: EncoderOutput) -> np.ndarray:
        scores = enc_out.frames @ (self.params["w_query"] @ state)
        scores = scores - scores.max()
        w = np.exp(scores)
        return w / w.sum()

    def output_dist(self, state: np.ndarray, enc_out: EncoderOutput) -> np.ndarray:
        if enc_out.dim != self.d:
            raise DataError(f"encoder frames have dimension {enc_out.dim}, model expects {self.d}")
        alpha = self.attention(state, enc_out)
        ctx = alpha @ enc_out.frames
        p = self.params
        logits = p["w_out"] @ np.concatenate([state, ctx]) + p["b_out"]
        return log_softmax(logits)

    def decoder_logprob_dist(self, prefix: Sequence[int], enc_out: EncoderOutput) -> np.ndarray:
        self.tgt_vocab.validate(prefix)
        return self.output_dist(self.state_for(prefix), enc_out)

    def sequence_logprob(self, source: Sequence[int], target: Sequence[int]) -> float:
        return self.sequence_logprob_given(target, self.encode(source))

    def sequence_logprob_given(self, target: Sequence[int], enc_out: EncoderOutput,
                               include_eos: bool = True) -> float:
        self.tgt_vocab.validate(target)
        total = 0.0
        state = self.initial_state()
        steps = list(target) + ([self.tgt_vocab.eos_id] if include_eos else [])
        for i, tok in enumerate(steps):
            total += float(self.output_dist(state, enc_out)[tok])
            if i + 1 < len(steps):
                state = self.advance(state, tok)
        return total

    # -- batched loss and gradient --------------------------------------------

    def _batch(self, pairs: Sequence[Pair]):
        B = len(pairs)
        T = max(len(s) for s, _ in pairs)
        L = max(len(t) for _, t in pairs) + 1
        bos, eos = self.tgt_vocab.bos_id, self.tgt_vocab.eos_id
        src = np.zeros((B, T), dtype=np.intp)
        src_mask = np.zeros((B, T))
        y_in = np.full((B, L), eos, dtype=np.intp)
        y_out = np.full((B, L), eos, dtype=np.intp)
        tgt_mask = np.zeros((B, L))
        for b, (s, t) in enumerate(pairs):
            if len(s) == 0:
                raise DataError("empty source")
            src[b, : len(s)] = s
            src_mask[b, : len(s)] = 1.0
            y_in[b, 0] = bos
            y_in[b, 1 : len(t) + 1] = t
            y_out[b, : len(t)] = t
            y_out[b, len(t)] = eos
            tgt_mask[b, : len(t) + 1] = 1.0
        return src, src_mask, y_in, y_out, tgt_mask

    def loss_and_grad(self, pairs: Sequence[Pair], need_grad: bool = True):
        """Mean per-token NLL over the batch (target tokens plus EOS)."""
        p = self.params
        src, src_mask, y_in, y_out, tgt_mask = self._batch(pairs)
        B, T = src.shape
        L = y_in.shape[1]
        n_tok = tgt_mask.sum()

        E = p["src_embed"][src]
        F = np.tanh(E @ p["enc_w"].T + p["enc_b"])
        neg = np.where(src_mask > 0, 0.0, -np.inf)

        s_prev = np.zeros((B, self.h))
        cache = []
        loss = 0.0
        for t in range(L):
            X = p["tgt_embed"][y_in[:, t]]
            s = np.tanh(X @ p["w_prev"].T + s_prev @ p["w_state"].T + p["b_state"])
            q = s @ p["w_query"].T
            a = np.einsum("btd,bd->bt", F, q) + neg
            a = a - a.max(axis=1, keepdims=True)
            alpha = np.exp(a)
            alpha /= alpha.sum(axis=1, keepdims=True)
            ctx = np.einsum("bt,btd->bd", alpha, F)
            sc = np.concatenate([s, ctx], axis=1)
            logp = log_softmax(sc @ p["w_out"].T + p["b_out"])
            loss -= float(np.sum(logp[np.arange(B), y_out[:, t]] * tgt_mask[:, t]))
            cache.append((X, s_prev, s, q, alpha, sc, logp))
            s_prev = s
        loss /= n_tok
        if not need_grad:
            return loss, None

        g = {k: np.zeros_like(v) for k, v in p.items()}
        dF = np.zeros_like(F)
        ds_next = np.zeros((B, self.h))
        for t in reversed(range(L)):
            X, s_prev, s, q, alpha, sc, logp = cache[t]
            dz = np.exp(logp)
            dz[np.arange(B), y_out[:, t]] -= 1.0
            dz *= (tgt_mask[:, t] / n_tok)[:, None]
            g["w_out"] += dz.T @ sc
            g["b_out"] += dz.sum(axis=0)
            dsc = dz @ p["w_out"]
            ds = dsc[:, : self.h] + ds_next
            dctx = dsc[:, self.h :]
            dalpha = np.einsum("btd,bd->bt", F, dctx)
            dF += alpha[:, :, None] * dctx[:, None, :]
            da = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
            dq = np.einsum("bt,btd->bd", da, F)
            dF += da[:, :, None] * q[:, None, :]
            g["w_query"] += dq.T @ s
            ds += dq @ p["w_query"]
            dpre = ds * (1.0 - s * s)
            g["w_prev"] += dpre.T @ X
            g["w_state"] += dpre.T @ s_prev
            g["b_state"] += dpre.sum(axis=0)
            np.add.at(g["tgt_embed"], y_in[:, t], dpre @ p["w_prev"])
            ds_next = dpre @ p["w_state"]

        dpreE = dF * (1.0 - F * F) * src_mask[:, :, None]
        g["enc_w"] += np.einsum("btd,bte->de", dpreE, E)
        g["enc_b"] += dpreE.sum(axis=(0, 1))
        np.add.at(g["src_embed"], src, dpreE @ p["enc_w"])
        return loss, g

    # -- serialization ----------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"TOYS2S v1 {self.d} {self.h} {len(self.src_vocab)} {len(self.tgt_vocab)} {self.rng_seed}"]
        lines.append("[src_vocab]")
        lines.append(self.src_vocab.dumps().rstrip("\n"))
        lines.append("[tgt_vocab]")
        lines.append(self.tgt_vocab.dumps().rstrip("\n"))
        for name in PARAM_NAMES:
            arr = self.params[name]
            lines.append(f"[{name}] " + " ".join(str(n) for n in arr.shape))
            for row in np.atleast_2d(arr):
                lines.append(" ".join("%.17g" % x for x in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ToySeq2Seq":
        lines = text.rstrip("\n").split("\n")
        head = lines[0].split()
        if len(head) != 7 or head[:2] != ["TOYS2S", "v1"]:
            raise DataError("bad model header")
        d, h, Vs, Vt, seed = map(int, head[2:])
        pos = 1

        def read_vocab(tag: str, size: int) -> Vocabulary:
            nonlocal pos
            if lines[pos] != tag:
                raise DataError(f"expected {tag} at line {pos + 1}")
            vocab = Vocabulary.loads("\n".join(lines[pos + 1 : pos + 2 + size]))
            pos += 2 + size
            return vocab

        src_vocab = read_vocab("[src_vocab]", Vs)
        tgt_vocab = read_vocab("[tgt_vocab]", Vt)
        params = {}
        for name in PARAM_NAMES:
            tag, *dims = lines[pos].split()
            if tag != f"[{name}]":
                raise DataError(f"expected [{name}] at line {pos + 1}")
            shape = tuple(int(x) for x in dims)
            rows = 1 if len(shape) == 1 else shape[0]
            arr = np.array([[float(x) for x in lines[pos + 1 + r].split()] for r in range(rows)])
            params[name] = arr.reshape(shape)
            pos += 1 + rows
        return cls(src_vocab, tgt_vocab, d, h, seed, params)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ToySeq2Seq":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def encode(model: ToySeq2Seq, source: Sequence[int]) -> EncoderOutput:
    return model.encode(source)


def decoder_logprob_dist(model: ToySeq2Seq, prefix: Sequence[int], enc_out: EncoderOutput) -> np.ndarray:
    return model.decoder_logprob_dist(prefix, enc_out)


def sequence_logprob(model: ToySeq2Seq, source: Sequence[int], target: Sequence[int]) -> float:
    return model.sequence_logprob(source, target)


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def train(model: ToySeq2Seq, data: Sequence[Pair], config: TrainConfig) -> tuple[ToySeq2Seq, list[float]]:
    """Mini-batch gradient descent on a private copy of ``model``.

    Returns the trained copy and the mean per-token training loss of each
    epoch (accumulated before each update).
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    model = model.copy()
    rng = np.random.default_rng(config.rng_seed)
    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        epoch_tokens = 0
        for start in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            loss, grads = model.loss_and_grad(batch)
            if not math.isfinite(loss):
                raise NumericError("training diverged")
            n_tok = sum(len(t) + 1 for _, t in batch)
            epoch_loss += loss * n_tok
            epoch_tokens += n_tok
            _clip(grads, config.grad_clip)
            for name, g in grads.items():
                model.params[name] -= config.learning_rate * g
        mean = epoch_loss / epoch_tokens
        if not math.isfinite(mean) or not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise NumericError("training diverged")
        trace.append(mean)
    return model, trace


def fine_tune(model: ToySeq2Seq, subset: Sequence[Pair], config: TrainConfig) -> tuple[ToySeq2Seq, list[float]]:
    """Continue training on a gender-partitioned subset at a constant rate."""
    if len(subset) == 0:
        raise ValueError("fine-tuning subset is empty")
    return train(model, subset, config)


def numerical_grad_check(model: ToySeq2Seq, pair: Pair, epsilon: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    model = model.copy()
    _, analytic = model.loss_and_grad([pair])
    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp, _ = model.loss_and_grad([pair], need_grad=False)
            flat[i] = orig - epsilon
            lm, _ = model.loss_and_grad([pair], need_grad=False)
            flat[i] = orig
            gn = (lp - lm) / (2 * epsilon)
            err = abs(ga[i] - gn) / max(abs(ga[i]), abs(gn), 1e-8)
            worst = max(worst, err)
    return worst
