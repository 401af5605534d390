"""Gender coverage/accuracy on annotated sets, corpus BLEU and the tuning objective."""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .core import DataError

GENDERS = ("F", "M")
EVAL_HEADER = "MUSTSHE-LIKE v1"
MAX_NGRAM = 4
BLEU_SIGNATURE = "case:mixed|eff:no|tok:13a|smooth:exp"


@dataclass(frozen=True)
class AnnotatedTerm:
    correct_form: str
    wrong_form: str
    gender: str

    def __post_init__(self):
        if not self.correct_form or not self.wrong_form:
            raise DataError("annotated forms must be non-empty")
        if self.correct_form == self.wrong_form:
            raise DataError(f"correct and wrong form are identical: {self.correct_form!r}")
        if self.gender not in GENDERS:
            raise DataError(f"bad gender label {self.gender!r}")
        for form in (self.correct_form, self.wrong_form):
            if len(form.split()) != 1 or any(c in form for c in "|;\t"):
                raise DataError(f"annotated form must be a single token: {form!r}")

    def swapped(self) -> "AnnotatedTerm":
        other = "M" if self.gender == "F" else "F"
        return AnnotatedTerm(self.wrong_form, self.correct_form, other)


@dataclass(frozen=True)
class AnnotatedSentence:
    id: str
    source: str
    reference: str
    terms: tuple[AnnotatedTerm, ...] = ()

    @property
    def gender(self) -> str | None:
        """Majority gender of the annotated terms (F on ties), None without terms."""
        if not self.terms:
            return None
        n_f = sum(t.gender == "F" for t in self.terms)
        return "F" if 2 * n_f >= len(self.terms) else "M"


def _format_terms(terms: Sequence[AnnotatedTerm]) -> str:
    return ";".join(f"{t.correct_form}|{t.wrong_form}|{t.gender}" for t in terms)


def dumps_eval_set(sentences: Sequence[AnnotatedSentence]) -> str:
    lines = [EVAL_HEADER]
    for s in sentences:
        for value in (s.id, s.source, s.reference):
            if "\t" in value or "\n" in value:
                raise DataError(f"sentence {s.id}: fields may not contain tabs or newlines")
        lines.append("\t".join([s.id, s.source, s.reference, _format_terms(s.terms)]))
    return "\n".join(lines) + "\n"


def loads_eval_set(text: str) -> list[AnnotatedSentence]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != EVAL_HEADER:
        raise DataError(f"line 1: expected header {EVAL_HEADER!r}")
    out = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != 4:
            raise DataError(f"line {lineno}: expected 4 tab-separated columns, got {len(cols)}")
        sid, source, reference, terms_field = cols
        if not sid:
            raise DataError(f"line {lineno}: empty id")
        if sid in seen:
            raise DataError(f"line {lineno}: duplicate id {sid!r}")
        seen.add(sid)
        terms = []
        if terms_field.strip():
            for triple in terms_field.split(";"):
                parts = triple.split("|")
                if len(parts) != 3:
                    raise DataError(f"line {lineno}: malformed term {triple!r}")
                try:
                    terms.append(AnnotatedTerm(*parts))
                except DataError as exc:
                    raise DataError(f"line {lineno}: {exc}") from None
        out.append(AnnotatedSentence(sid, source, reference, tuple(terms)))
    return out


def parse_eval_set(path: str | Path) -> list[AnnotatedSentence]:
    return loads_eval_set(Path(path).read_text(encoding="utf-8"))


def write_eval_set(path: str | Path, sentences: Sequence[AnnotatedSentence]) -> None:
    Path(path).write_text(dumps_eval_set(sentences), encoding="utf-8")


# -- gender scoring --------------------------------------------------------------


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def match_tokens(text: str) -> list[str]:
    """Lowercased whitespace tokens with leading/trailing punctuation removed."""
    out = []
    for tok in text.lower().split():
        start, end = 0, len(tok)
        while start < end and _is_punct(tok[start]):
            start += 1
        while end > start and _is_punct(tok[end - 1]):
            end -= 1
        if start < end:
            out.append(tok[start:end])
    return out


@dataclass
class GenderScores:
    total: dict[str, int] = field(default_factory=lambda: {g: 0 for g in GENDERS})
    correct: dict[str, int] = field(default_factory=lambda: {g: 0 for g in GENDERS})
    wrong: dict[str, int] = field(default_factory=lambda: {g: 0 for g in GENDERS})

    def __add__(self, other: "GenderScores") -> "GenderScores":
        out = GenderScores()
        for g in GENDERS:
            out.total[g] = self.total[g] + other.total[g]
            out.correct[g] = self.correct[g] + other.correct[g]
            out.wrong[g] = self.wrong[g] + other.wrong[g]
        return out

    def measured(self, g: str) -> int:
        return self.correct[g] + self.wrong[g]

    def coverage(self, g: str) -> float | None:
        return self.measured(g) / self.total[g] if self.total[g] else None

    def accuracy(self, g: str) -> float | None:
        m = self.measured(g)
        return self.correct[g] / m if m else None

    def pooled_accuracy(self) -> float | None:
        m = sum(self.measured(g) for g in GENDERS)
        return sum(self.correct.values()) / m if m else None

    def as_dict(self) -> dict:
        out = {}
        for g in GENDERS:
            out[f"terms_total_{g}"] = self.total[g]
            out[f"terms_correct_{g}"] = self.correct[g]
            out[f"terms_wrong_{g}"] = self.wrong[g]
            out[f"coverage_{g}"] = self.coverage(g)
            out[f"accuracy_{g}"] = self.accuracy(g)
        return out


def score_sentence(hypothesis: str, terms: Sequence[AnnotatedTerm]) -> GenderScores:
    """Each hypothesis token can satisfy at most one annotated term."""
    pool = Counter(match_tokens(hypothesis))
    scores = GenderScores()
    for term in terms:
        g = term.gender
        scores.total[g] += 1
        correct, wrong = term.correct_form.lower(), term.wrong_form.lower()
        if pool[correct] > 0:
            pool[correct] -= 1
            scores.correct[g] += 1
        elif pool[wrong] > 0:
            pool[wrong] -= 1
            scores.wrong[g] += 1
    return scores


def score_gender(hypotheses: Sequence[str], eval_set: Sequence[AnnotatedSentence]) -> GenderScores:
    if len(hypotheses) != len(eval_set):
        raise ValueError(f"{len(hypotheses)} hypotheses for {len(eval_set)} sentences")
    total = GenderScores()
    for hyp, sent in zip(hypotheses, eval_set):
        total = total + score_sentence(hyp, sent.terms)
    return total


# -- BLEU --------------------------------------------------------------------------

_13A_RULES = (
    # pad symbols and most ASCII punctuation
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    # period and comma unless preceded by a digit
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    # period and comma unless followed by a digit
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    # dash when preceded by a digit
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
)


def tokenize_13a(text: str) -> list[str]:
    """mteval-v13a tokenization, as used by WMT and SacreBLEU's default."""
    line = text.rstrip()
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (line.replace("&quot;", '"').replace("&amp;", "&")
                .replace("&lt;", "<").replace("&gt;", ">"))
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return line.split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuStats:
    correct: tuple[int, ...] = (0,) * MAX_NGRAM
    total: tuple[int, ...] = (0,) * MAX_NGRAM
    sys_len: int = 0
    ref_len: int = 0

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            tuple(a + b for a, b in zip(self.correct, other.correct)),
            tuple(a + b for a, b in zip(self.total, other.total)),
            self.sys_len + other.sys_len,
            self.ref_len + other.ref_len,
        )

    def score(self) -> float:
        return bleu_from_stats(self)


def sentence_stats(hypothesis: str, reference: str) -> BleuStats:
    hyp = tokenize_13a(hypothesis)
    ref = tokenize_13a(reference)
    correct, total = [], []
    for n in range(1, MAX_NGRAM + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        correct.append(sum(min(c, r[g]) for g, c in h.items()))
        total.append(max(0, len(hyp) - n + 1))
    return BleuStats(tuple(correct), tuple(total), len(hyp), len(ref))


def brevity_penalty(sys_len: int, ref_len: int) -> float:
    if sys_len >= ref_len:
        return 1.0
    return math.exp(1 - ref_len / sys_len) if sys_len > 0 else 0.0


def bleu_from_stats(stats: BleuStats) -> float:
    """4-gram BLEU with exponential smoothing of zero-match orders."""
    bp = brevity_penalty(stats.sys_len, stats.ref_len)
    if not any(stats.correct):
        return 0.0
    precisions = [0.0] * MAX_NGRAM
    smooth = 1.0
    for n in range(MAX_NGRAM):
        if stats.total[n] == 0:
            break
        if stats.correct[n] == 0:
            smooth *= 2
            precisions[n] = 100.0 / (smooth * stats.total[n])
        else:
            precisions[n] = 100.0 * stats.correct[n] / stats.total[n]
    log_sum = sum(math.log(p) if p > 0 else -9999999999 for p in precisions)
    return bp * math.exp(log_sum / MAX_NGRAM)


def corpus_stats(hypotheses: Sequence[str], references: Sequence[str]) -> BleuStats:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses for {len(references)} references")
    total = BleuStats()
    for h, r in zip(hypotheses, references):
        total = total + sentence_stats(h, r)
    return total


def bleu_corpus(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    if len(hypotheses) == 0:
        raise ValueError("empty corpus")
    return bleu_from_stats(corpus_stats(hypotheses, references))


def harmonic_mean(a: float, b: float) -> float:
    if a < 0 or b < 0:
        raise ValueError("harmonic mean needs nonnegative inputs")
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


@dataclass
class EvalReport:
    bleu: float
    gender: GenderScores
    n_sentences: int

    def as_dict(self) -> dict:
        return {"bleu": self.bleu, "n_sentences": self.n_sentences,
                "pooled_accuracy": self.gender.pooled_accuracy(), **self.gender.as_dict()}


def evaluate(hypotheses: Sequence[str], eval_set: Sequence[AnnotatedSentence]) -> EvalReport:
    bleu = bleu_corpus(hypotheses, [s.reference for s in eval_set])
    return EvalReport(bleu, score_gender(hypotheses, eval_set), len(eval_set))


def _fmt(v) -> str:
    if v is None:
        return "absent"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_report(report: EvalReport) -> str:
    """Deterministic ``key=value`` lines."""
    lines = [f"signature={BLEU_SIGNATURE}"]
    lines += [f"{k}={_fmt(v)}" for k, v in report.as_dict().items()]
    return "\n".join(lines) + "\n"


def iter_lines(path: str | Path) -> Iterable[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            yield line.rstrip("\n")
