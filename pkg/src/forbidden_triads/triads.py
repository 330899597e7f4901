"""Triad classification, per-session census and closure curves."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .graph import CoPlayIndex, session_weight_matrix
from .records import Dataset

DISCONNECTED = "disconnected"
OPEN = "open"
CLOSED = "closed"
FORBIDDEN = "forbidden"

DEFAULT_THETA = 2
THETA_SWEEP = (2, 3, 5, 10)


def _check_theta(theta: int) -> None:
    if int(theta) != theta or theta < 2:
        raise ValueError(f"threshold must be an integer >= 2, got {theta!r}")


def classify_triad(weights, theta: int = DEFAULT_THETA) -> str:
    """Label a triple of pair weights.

    Closed if all three ties exist, disconnected if fewer than two exist;
    an open triple is forbidden when its weaker leg reaches ``theta``.
    """
    _check_theta(theta)
    w1, w2, _ = sorted(int(w) for w in weights)
    if w1 < 0:
        raise ValueError("weights must be non-negative")
    if w1 > 0:
        return CLOSED
    if w2 == 0:
        return DISCONNECTED
    return FORBIDDEN if w2 >= theta else OPEN


def order_stats(weights) -> tuple[int, int, int]:
    w1, w2, w3 = sorted(int(w) for w in weights)
    return w1, w2, w3


def min_legs_weight(weights) -> int:
    return order_stats(weights)[1]


@dataclass(frozen=True)
class SessionCensus:
    n_open: int
    n_closed: int
    n_forbidden: int
    n_connected: int
    theta: int

    @property
    def defined(self) -> bool:
        return self.n_connected > 0

    def _density(self, n: int) -> float:
        return n / self.n_connected if self.n_connected else float("nan")

    @property
    def d_open(self) -> float:
        return self._density(self.n_open)

    @property
    def d_closed(self) -> float:
        return self._density(self.n_closed)

    @property
    def d_forbidden(self) -> float:
        return self._density(self.n_forbidden)


@lru_cache(maxsize=64)
def _triples(n: int) -> np.ndarray:
    if n < 3:
        return np.empty((0, 3), dtype=np.intp)
    return np.array(list(combinations(range(n), 3)), dtype=np.intp)


def _sorted_triple_weights(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = _triples(w.shape[0])
    ws = np.stack([w[t[:, 0], t[:, 1]], w[t[:, 0], t[:, 2]], w[t[:, 1], t[:, 2]]], axis=1)
    return t, np.sort(ws, axis=1)


def session_census(matrix, theta: int = DEFAULT_THETA) -> SessionCensus:
    """Count open/closed/forbidden triads over all triples of a weight matrix."""
    _check_theta(theta)
    w = np.asarray(matrix)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("weight matrix must be square")
    if not np.array_equal(w, w.T):
        raise ValueError("weight matrix must be symmetric")
    _, ws = _sorted_triple_weights(w)
    closed = ws[:, 0] > 0
    open_ = (ws[:, 0] == 0) & (ws[:, 1] > 0)
    forbidden = open_ & (ws[:, 1] >= theta)
    n_closed = int(closed.sum())
    n_forbidden = int(forbidden.sum())
    n_open = int(open_.sum()) - n_forbidden
    return SessionCensus(n_open, n_closed, n_forbidden, n_open + n_closed + n_forbidden, theta)


class TriadObservation(NamedTuple):
    musicians: tuple[str, str, str]
    weights: tuple[int, int, int]  # (w_ij, w_ik, w_jk)
    order_stats: tuple[int, int, int]
    session_id: str
    origin: str  # "observed" or "rewired:<world>"

    @property
    def closed(self) -> bool:
        return self.order_stats[0] > 0

    @property
    def min_legs_weight(self) -> int:
        return self.order_stats[1]


def session_triads(ix: CoPlayIndex, s, origin: str = "observed") -> Iterator[TriadObservation]:
    """Connected triads of one session in lexicographic musician order."""
    ms = sorted(s.musicians)
    if len(ms) < 3:
        return
    order = {m: i for i, m in enumerate(s.musicians)}
    w = session_weight_matrix(ix, s)
    perm = [order[m] for m in ms]
    w = w[np.ix_(perm, perm)]
    for i, j, k in _triples(len(ms)):
        raw = (int(w[i, j]), int(w[i, k]), int(w[j, k]))
        os_ = order_stats(raw)
        if os_[1] == 0:
            continue
        yield TriadObservation((ms[i], ms[j], ms[k]), raw, os_, s.session_id, origin)


def pooled_triplets(
    d: Dataset, ix: CoPlayIndex, theta: int = DEFAULT_THETA, origin: str = "observed"
) -> Iterator[TriadObservation]:
    """All connected within-session triads, in session then triple order.

    ``theta`` does not filter the stream (every connected triad is emitted);
    it is accepted so callers can label observations consistently.
    """
    _check_theta(theta)
    for s in d:
        yield from session_triads(ix, s, origin)


class ClosurePoint(NamedTuple):
    quantile: int
    size: int
    mean_min_legs_weight: float
    closure_raw: float
    closure: float


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks at both ends."""
    values = np.asarray(values, dtype=float)
    if window <= 1:
        return values.copy()
    n = len(values)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    half = window // 2
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) - half + window, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def closure_curve(
    obs: Iterable[TriadObservation], n_quantiles: int = 10_000, smoothing_window: int | None = None
) -> list[ClosurePoint]:
    """Closure probability by quantile of minimal legs weight.

    Observations are ordered by ``(w(2), w(3), session_id, triple)`` and cut
    into ``n_quantiles`` bins whose sizes differ by at most one.
    """
    obs = list(obs)
    if not obs:
        raise ValueError("closure curve of an empty triad stream")
    if n_quantiles < 1 or len(obs) < n_quantiles:
        raise ValueError(f"need at least {n_quantiles} observations, got {len(obs)}")
    if smoothing_window is None:
        smoothing_window = max(1, n_quantiles // 100)
    obs.sort(key=lambda o: (o.order_stats[1], o.order_stats[2], o.session_id, o.musicians))
    w2 = np.array([o.order_stats[1] for o in obs], dtype=float)
    closed = np.array([o.order_stats[0] > 0 for o in obs], dtype=float)
    bounds = np.linspace(0, len(obs), n_quantiles + 1).round().astype(int)
    sizes = np.diff(bounds)
    raw = np.array([closed[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    mean_w2 = np.array([w2[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    smooth = moving_average(raw, smoothing_window)
    return [
        ClosurePoint(q + 1, int(sizes[q]), float(mean_w2[q]), float(raw[q]), float(smooth[q]))
        for q in range(n_quantiles)
    ]
