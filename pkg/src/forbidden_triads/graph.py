"""Time-indexed co-play weights.

All as-of queries are strictly backward looking: the weight of a pair as of
year ``t`` counts shared sessions in years ``<= t - 1``. Sessions of the same
year never contribute to each other.
"""

from __future__ import annotations

from bisect import bisect_left
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .records import Dataset, SessionRecord


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


class _Series:
    """Per-year counts stored as sorted years plus running totals."""

    __slots__ = ("years", "cum")

    def __init__(self, per_year: dict[int, int]):
        self.years = sorted(per_year)
        total = 0
        self.cum = []
        for y in self.years:
            total += per_year[y]
            self.cum.append(total)

    def before(self, year: int) -> int:
        i = bisect_left(self.years, year)
        return self.cum[i - 1] if i else 0


class MusicianStats(NamedTuple):
    prior_sessions: int
    prior_releases: tuple[int, ...]
    instruments: frozenset[str]


@dataclass
class _History:
    sessions_by_year: dict[int, int]
    instruments_by_year: dict[int, set[str]]
    releases_by_year: dict[int, list[int]]


class CoPlayIndex:
    """Cumulative shared-session counts for every co-appearing pair."""

    def __init__(self, pair_counts: dict, histories: dict[str, _History]):
        self._pairs = {p: _Series(c) for p, c in pair_counts.items()}
        self._hist = histories
        self._totals = {m: _Series(h.sessions_by_year) for m, h in histories.items()}

    @property
    def pairs(self):
        return self._pairs.keys()

    @property
    def musicians(self):
        return self._hist.keys()

    def pair_years(self, a: str, b: str) -> dict[int, int]:
        """Raw per-year shared-session counts for a pair."""
        s = self._pairs.get(_pair(a, b))
        if s is None:
            return {}
        prev = 0
        out = {}
        for y, c in zip(s.years, s.cum):
            out[y] = c - prev
            prev = c
        return out

    def weight(self, a: str, b: str, as_of_year: int) -> int:
        if a == b:
            raise ValueError(f"co-play weight of {a!r} with itself is undefined")
        s = self._pairs.get(_pair(a, b))
        return s.before(as_of_year) if s is not None else 0

    def prior_sessions(self, m: str, as_of_year: int) -> int:
        s = self._totals.get(m)
        return s.before(as_of_year) if s is not None else 0

    def prior_releases(self, m: str, as_of_year: int) -> list[int]:
        h = self._hist.get(m)
        if h is None:
            return []
        out: list[int] = []
        for y in sorted(h.releases_by_year):
            if y < as_of_year:
                out.extend(h.releases_by_year[y])
        return out

    def instruments_played(self, m: str, first_year: int, last_year: int) -> frozenset[str]:
        """Instruments ``m`` played in years ``first_year..last_year`` inclusive."""
        h = self._hist.get(m)
        if h is None:
            return frozenset()
        out: set[str] = set()
        for y in range(first_year, last_year + 1):
            out |= h.instruments_by_year.get(y, set())
        return frozenset(out)

    def sessions_in_year(self, m: str, year: int) -> int:
        h = self._hist.get(m)
        return h.sessions_by_year.get(year, 0) if h is not None else 0


def build_index(d: Dataset) -> CoPlayIndex:
    pair_counts: dict[tuple[str, str], dict[int, int]] = defaultdict(lambda: defaultdict(int))
    hist: dict[str, _History] = {}
    for s in d:
        for b in s.personnel:
            h = hist.get(b.musician_id)
            if h is None:
                h = hist[b.musician_id] = _History(defaultdict(int), defaultdict(set), defaultdict(list))
            h.sessions_by_year[s.year] += 1
            h.instruments_by_year[s.year] |= b.instruments
            h.releases_by_year[s.year].append(s.releases)
        for a, b in combinations(sorted(s.musicians), 2):
            pair_counts[(a, b)][s.year] += 1
    return CoPlayIndex(pair_counts, hist)


def coplay_weight(ix: CoPlayIndex, a: str, b: str, as_of_year: int) -> int:
    return ix.weight(a, b, as_of_year)


def session_weight_matrix(ix: CoPlayIndex, s: SessionRecord) -> np.ndarray:
    """Symmetric weight matrix in personnel order; diagonal holds prior totals."""
    ms = s.musicians
    n = len(ms)
    w = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        w[i, i] = ix.prior_sessions(ms[i], s.year)
        for j in range(i + 1, n):
            w[i, j] = w[j, i] = ix.weight(ms[i], ms[j], s.year)
    return w


def musician_stats(
    ix: CoPlayIndex, m: str, as_of_year: int, span: tuple[int, int] | None = None
) -> MusicianStats:
    """Prior totals for ``m``; ``span`` is an inclusive year range for instruments.

    Without ``span`` the instrument set covers the current and previous year.
    """
    lo, hi = span if span is not None else (as_of_year - 1, as_of_year)
    return MusicianStats(
        ix.prior_sessions(m, as_of_year),
        tuple(ix.prior_releases(m, as_of_year)),
        ix.instruments_played(m, lo, hi),
    )
