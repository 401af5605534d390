"""Grid search and K-fold cross-validated selection of the fusion weights.

Every (beta_ilm, beta_elm) pair is decoded once per sentence; per-sentence
BLEU statistics and gender counts are kept so that any subset (a fold, the
union of the other folds, the whole set) is scored by summing them.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .core import FusionWeights
from .evaluation import (AnnotatedSentence, BleuStats, GenderScores, bleu_from_stats, harmonic_mean,
                         score_sentence, sentence_stats)
from .fusion import (DEFAULT_BEAM, DEFAULT_MAX_LEN, FusionScorer, IlmContext, beam_search_scored,
                     grid_beam_search)
from .ngram import NGramLM
from .seq2seq import ToySeq2Seq

HEATMAP_HEADER = ["beta_ilm", "beta_elm", "bleu", "accuracy", "hmean"]


@dataclass
class DecodeSetup:
    model: ToySeq2Seq
    ctx: IlmContext | None = None
    elm: NGramLM | None = None
    beam: int = DEFAULT_BEAM
    max_len: int = DEFAULT_MAX_LEN
    length_norm: bool = False
    fuse_eos: bool = True

    def scorer(self) -> FusionScorer:
        return FusionScorer(self.model, self.ctx, self.elm)

    def decode_with(self, scorer: FusionScorer, source: str, w: FusionWeights) -> str:
        src = self.model.src_vocab.encode(source)
        res = beam_search_scored(scorer.for_source(src), w, self.beam, self.max_len,
                                 self.length_norm, self.fuse_eos)
        return self.model.tgt_vocab.decode(res.tokens)

    def decode_all(self, sources: Sequence[str], w: FusionWeights) -> list[str]:
        scorer = self.scorer()
        return [self.decode_with(scorer, s, w) for s in sources]


@dataclass(frozen=True)
class GridPoint:
    weights: FusionWeights
    bleu: float
    accuracy: float | None
    hmean: float


def grid_values(step: float) -> list[float]:
    n = round(1.0 / step)
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide 1.0 into an integer number of steps")
    return [round(i / n, 10) for i in range(n + 1)]


def make_grid(step: float, ilm: bool = True) -> list[FusionWeights]:
    vals = grid_values(step)
    ilm_vals = vals if ilm else [0.0]
    return [FusionWeights(bi, be) for bi in ilm_vals for be in vals]


def threads_from_env() -> int:
    raw = os.environ.get("FUSEDEC_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


_WORKER: dict = {}


def _init_worker(setup: DecodeSetup, grid: list[FusionWeights]) -> None:
    _WORKER["setup"] = setup
    _WORKER["grid"] = grid


def _decode_chunk(sources: list[str]) -> list[list[str]]:
    setup, grid = _WORKER["setup"], _WORKER["grid"]
    scorer = setup.scorer()
    out = []
    for source in sources:
        src = setup.model.src_vocab.encode(source)
        results = grid_beam_search(scorer.for_source(src), grid, setup.beam, setup.max_len,
                                   setup.length_norm, setup.fuse_eos)
        out.append([setup.model.tgt_vocab.decode(r.tokens) for r in results])
    return out


@dataclass
class SweepTable:
    """Decodes and per-sentence statistics for every grid point."""

    grid: list[FusionWeights]
    hyps: list[list[str]]  # [sentence][grid index]
    bleu_stats: list[list[BleuStats]] = field(default_factory=list)
    gender: list[list[GenderScores]] = field(default_factory=list)

    def point(self, g: int, rows: Sequence[int]) -> GridPoint:
        stats = BleuStats()
        gs = GenderScores()
        for r in rows:
            stats = stats + self.bleu_stats[r][g]
            gs = gs + self.gender[r][g]
        bleu = bleu_from_stats(stats)
        acc = gs.pooled_accuracy()
        hm = harmonic_mean(bleu, 100.0 * acc if acc is not None else 0.0)
        return GridPoint(self.grid[g], bleu, acc, hm)

    def points(self, rows: Sequence[int]) -> list[GridPoint]:
        return [self.point(g, rows) for g in range(len(self.grid))]

    def index_of(self, w: FusionWeights) -> int:
        return self.grid.index(w)

    def restrict(self, keep) -> "SweepTable":
        """Sub-table over the grid points for which ``keep(weights)`` holds."""
        cols = [g for g, w in enumerate(self.grid) if keep(w)]
        return SweepTable(
            [self.grid[g] for g in cols],
            [[row[g] for g in cols] for row in self.hyps],
            [[row[g] for g in cols] for row in self.bleu_stats],
            [[row[g] for g in cols] for row in self.gender],
        )


def sweep_decode(setup: DecodeSetup, eval_set: Sequence[AnnotatedSentence], grid: list[FusionWeights],
                 threads: int | None = None) -> SweepTable:
    sources = [s.source for s in eval_set]
    threads = threads or threads_from_env()
    threads = max(1, min(threads, len(sources)))
    if threads == 1:
        _init_worker(setup, grid)
        rows = _decode_chunk(sources)
    else:
        size = -(-len(sources) // (threads * 4))
        chunks = [sources[i : i + size] for i in range(0, len(sources), size)]
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(setup, grid)) as pool:
            rows = [row for part in pool.map(_decode_chunk, chunks) for row in part]
    table = SweepTable(grid, rows)
    for sent, row in zip(eval_set, rows):
        table.bleu_stats.append([sentence_stats(h, sent.reference) for h in row])
        table.gender.append([score_sentence(h, sent.terms) for h in row])
    return table


def grid_sweep(setup: DecodeSetup, eval_set: Sequence[AnnotatedSentence], grid_step: float,
               ilm: bool = True, threads: int | None = None) -> tuple[list[GridPoint], SweepTable]:
    grid = make_grid(grid_step, ilm)
    table = sweep_decode(setup, eval_set, grid, threads)
    points = table.points(range(len(eval_set)))
    return sort_points(points), table


def sort_points(points: Sequence[GridPoint]) -> list[GridPoint]:
    return sorted(points, key=lambda p: (p.weights.beta_ilm, p.weights.beta_elm))


def select_best(points: Sequence[GridPoint]) -> GridPoint:
    if not points:
        raise ValueError("no grid points to select from")
    return min(points, key=lambda p: (-p.hmean, p.weights.beta_elm, p.weights.beta_ilm))


def round_robin_folds(n: int, k: int) -> list[int]:
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError(f"{k} folds for {n} sentences")
    return [i % k for i in range(n)]


@dataclass
class CVResult:
    selections: list[FusionWeights]
    fold_of: list[int]
    hypotheses: list[str]
    table: SweepTable

    @property
    def mean(self) -> FusionWeights:
        return mean_betas(self.selections)


def cross_validated_tune(setup: DecodeSetup, eval_set: Sequence[AnnotatedSentence], k: int = 10,
                         grid_step: float = 0.05, ilm: bool = True, threads: int | None = None,
                         table: SweepTable | None = None) -> CVResult:
    """Per fold, pick the best pair on the other folds and decode the fold with it."""
    fold_of = round_robin_folds(len(eval_set), k)
    if table is None:
        table = sweep_decode(setup, eval_set, make_grid(grid_step, ilm), threads)
    selections = []
    hyps = [""] * len(eval_set)
    for f in range(k):
        train_rows = [i for i, x in enumerate(fold_of) if x != f]
        best = select_best(table.points(train_rows))
        selections.append(best.weights)
        g = table.index_of(best.weights)
        for i, x in enumerate(fold_of):
            if x == f:
                hyps[i] = table.hyps[i][g]
    return CVResult(selections, fold_of, hyps, table)


def mean_betas(selections: Sequence[FusionWeights]) -> FusionWeights:
    if not selections:
        raise ValueError("no selections to average")
    n = len(selections)
    return FusionWeights(sum(w.beta_ilm for w in selections) / n, sum(w.beta_elm for w in selections) / n)


def heatmap_csv(points: Sequence[GridPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEATMAP_HEADER)
    for p in sort_points(points):
        writer.writerow([
            f"{p.weights.beta_ilm:.4f}",
            f"{p.weights.beta_elm:.4f}",
            f"{p.bleu:.4f}",
            "" if p.accuracy is None else f"{p.accuracy:.4f}",
            f"{p.hmean:.4f}",
        ])
    return buf.getvalue()
