from __future__ import annotations

import numpy as np
import pytest

from fusedec.core import FusionWeights, Vocabulary
from fusedec.fusion import IlmContext, compute_ilm_context
from fusedec.ngram import train_ngram
from fusedec.seq2seq import ToySeq2Seq


def tiny_vocab(n_words: int, prefix: str = "t") -> Vocabulary:
    return Vocabulary.build([f"{prefix}{i}" for i in range(n_words)])


def random_instance(seed: int, n_tgt: int = 2, d: int = 3, h: int = 4, scale: float | None = None):
    """Random toy model, ILM context, bigram ELM, source and weights.

    ``n_tgt`` non-special target words, so V = n_tgt + 3.
    """
    rng = np.random.default_rng(seed)
    sv = tiny_vocab(3, "s")
    tv = tiny_vocab(n_tgt)
    model = ToySeq2Seq(sv, tv, d=d, h=h, rng_seed=seed)
    gain = rng.uniform(0.5, 3.0) if scale is None else scale
    for name in model.params:
        model.params[name] = model.params[name] * gain + (rng.normal(0, 0.3, model.params[name].shape)
                                                          if name.startswith("b_") else 0.0)
    words = list(range(3, len(tv)))
    corpus = [list(rng.choice(words, size=int(rng.integers(1, 4)))) for _ in range(6)]
    elm = train_ngram(corpus, tv, order=2, k=0.1)
    srcs = [list(rng.integers(3, len(sv), size=int(rng.integers(1, 4)))) for _ in range(4)]
    ctx = compute_ilm_context(model, srcs)
    source = list(rng.integers(3, len(sv), size=int(rng.integers(1, 4))))
    w = FusionWeights(float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))
    return model, ctx, elm, source, w


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def hand_lm_vocab() -> Vocabulary:
    # V = 4 including BOS/EOS: <s> </s> a b (no unk needed for the hand case)
    return Vocabulary(["<s>", "</s>", "a", "b"], bos_id=0, eos_id=1, unk_id=2)


@pytest.fixture
def unit_ctx() -> IlmContext:
    return IlmContext(np.array([0.5]), 4, 2)
