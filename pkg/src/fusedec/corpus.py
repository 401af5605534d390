"""Split a monolingual corpus into feminine/masculine first-person subsets by regex."""

from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from .core import DataError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class PatternSet:
    language: str
    patterns_f: tuple[str, ...]
    patterns_m: tuple[str, ...]
    ignore_case: bool = True

    def __post_init__(self):
        if not self.patterns_f or not self.patterns_m:
            raise DataError("pattern set needs at least one F and one M pattern")
        flags = re.IGNORECASE if self.ignore_case else 0
        compiled = []
        for label, pats in (("f", self.patterns_f), ("m", self.patterns_m)):
            for i, p in enumerate(pats):
                try:
                    compiled.append(re.compile(p, flags))
                except re.error as exc:
                    raise DataError(f"invalid regex {label}[{i}] {p!r}: {exc}") from None
        n_f = len(self.patterns_f)
        object.__setattr__(self, "_f", tuple(compiled[:n_f]))
        object.__setattr__(self, "_m", tuple(compiled[n_f:]))

    def classify(self, line: str) -> str | None:
        """'F', 'M', 'both' or None."""
        is_f = any(p.search(line) for p in self._f)
        is_m = any(p.search(line) for p in self._m)
        if is_f and is_m:
            return "both"
        if is_f:
            return "F"
        if is_m:
            return "M"
        return None

    def dumps(self) -> str:
        def arr(pats):
            return "[" + ", ".join(json.dumps(p) for p in pats) + "]"

        return (
            "[patterns]\n"
            f"language = {json.dumps(self.language)}\n"
            f"ignore_case = {'true' if self.ignore_case else 'false'}\n"
            f"f = {arr(self.patterns_f)}\n"
            f"m = {arr(self.patterns_m)}\n"
        )


def loads_patterns(text: str) -> PatternSet:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"bad pattern file: {exc}") from None
    sec = doc.get("patterns", doc)
    f, m = sec.get("f", []), sec.get("m", [])
    if not all(isinstance(p, str) for p in [*f, *m]):
        raise DataError("patterns must be strings")
    return PatternSet(str(sec.get("language", "")), tuple(f), tuple(m), bool(sec.get("ignore_case", True)))


def load_patterns(path: str | Path) -> PatternSet:
    return loads_patterns(Path(path).read_text(encoding="utf-8"))


@dataclass
class ExtractCounts:
    lines: int = 0
    f: int = 0
    m: int = 0
    ambiguous: int = 0
    unmatched: int = 0


def iter_extract(lines: Iterable[str], patterns: PatternSet) -> Iterator[tuple[str | None, str]]:
    for line in lines:
        yield patterns.classify(line), line


def extract(lines: Iterable[str], patterns: PatternSet) -> tuple[list[str], list[str], ExtractCounts]:
    f_out, m_out = [], []
    counts = ExtractCounts()
    for label, line in iter_extract(lines, patterns):
        counts.lines += 1
        if label == "F":
            f_out.append(line)
            counts.f += 1
        elif label == "M":
            m_out.append(line)
            counts.m += 1
        elif label == "both":
            counts.ambiguous += 1
        else:
            counts.unmatched += 1
    return f_out, m_out, counts


def extract_files(src: TextIO, patterns: PatternSet, out_f: TextIO, out_m: TextIO) -> ExtractCounts:
    """Streaming variant: one line in memory at a time."""
    counts = ExtractCounts()
    lineno = 0
    try:
        for lineno, raw in enumerate(src, start=1):
            line = raw.rstrip("\n")
            label = patterns.classify(line)
            counts.lines += 1
            if label == "F":
                out_f.write(line + "\n")
                counts.f += 1
            elif label == "M":
                out_m.write(line + "\n")
                counts.m += 1
            elif label == "both":
                counts.ambiguous += 1
            else:
                counts.unmatched += 1
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"line {lineno + 1}: {exc}") from exc
    return counts


@dataclass(frozen=True)
class CorpusStats:
    sentences_f: int = 0
    sentences_m: int = 0
    words_f: int = 0
    words_m: int = 0

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(self.sentences_f + other.sentences_f, self.sentences_m + other.sentences_m,
                           self.words_f + other.words_f, self.words_m + other.words_m)

    def dumps(self) -> str:
        return (
            "\tM\tF\n"
            f"Sent.\t{self.sentences_m}\t{self.sentences_f}\n"
            f"Words\t{self.words_m}\t{self.words_f}\n"
        )


def corpus_stats(f_corpus: Iterable[str], m_corpus: Iterable[str]) -> CorpusStats:
    sf = wf = sm = wm = 0
    for line in f_corpus:
        sf += 1
        wf += len(line.split())
    for line in m_corpus:
        sm += 1
        wm += len(line.split())
    return CorpusStats(sf, sm, wf, wm)
