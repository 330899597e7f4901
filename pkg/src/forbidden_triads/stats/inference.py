"""Permutation p-values, rank and ECDF tests, and the matched closure sample."""

from __future__ import annotations

from typing import Callable, Iterable, NamedTuple

import numpy as np
from scipy import stats

from .design import CONST, DesignMatrix, EstimationError, FitResult

EXACT_MAX_N = 25


class PermutationResult(NamedTuple):
    columns: tuple[str, ...]
    params: np.ndarray
    pvalues: np.ndarray
    n_perm: int
    n_failed: int
    nobs: int

    def pvalue(self, name: str) -> float:
        return float(self.pvalues[self.columns.index(name)])


def permutation_pvalues(
    fitter: Callable[[DesignMatrix], FitResult],
    X: DesignMatrix,
    n_perm: int,
    subsample: int | None = None,
    seed: int = 0,
    strata: np.ndarray | None = None,
) -> PermutationResult:
    """Two-sided permutation p-values from refits on a shuffled outcome.

    ``p = (1 + #{|b*| >= |b|}) / (1 + successful permutations)``. With
    ``subsample`` the data are first reduced to that many rows, drawn
    uniformly (per stratum when ``strata`` is given). Each replicate gets its
    own generator spawned from ``seed``.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    ss = np.random.SeedSequence(seed)
    sample_seq, *rep_seqs = ss.spawn(n_perm + 1)
    if subsample is not None:
        rng = np.random.default_rng(sample_seq)
        if strata is None:
            rows = np.sort(rng.choice(X.nobs, size=min(subsample, X.nobs), replace=False))
        else:
            strata = np.asarray(strata)
            rows = []
            for level in np.unique(strata):
                idx = np.flatnonzero(strata == level)
                rows.append(rng.choice(idx, size=min(subsample, len(idx)), replace=False))
            rows = np.sort(np.concatenate(rows))
        X = X.subset(rows)
    base = fitter(X)
    ref = np.abs(base.params)
    exceed = np.zeros(len(ref))
    failed = 0
    for seq in rep_seqs:
        y = np.random.default_rng(seq).permutation(X.y)
        try:
            fit = fitter(X.with_outcome(y))
        except (EstimationError, np.linalg.LinAlgError, FloatingPointError):
            failed += 1
            continue
        exceed += np.abs(fit.params) >= ref - 1e-12 * np.maximum(ref, 1.0)
    ok = n_perm - failed
    if ok == 0:
        raise EstimationError("every permutation refit failed")
    return PermutationResult(base.columns, base.params, (1 + exceed) / (1 + ok), n_perm, failed, X.nobs)


class WilcoxonResult(NamedTuple):
    z: float
    p: float
    w_plus: float
    n: int
    p_greater: float
    p_less: float
    exact: bool


def _midranks(a: np.ndarray) -> np.ndarray:
    return stats.rankdata(a, method="average")


def _signed_rank_distribution(ranks2: np.ndarray) -> np.ndarray:
    """Null distribution of 2*W+ given doubled (integer) ranks."""
    total = int(ranks2.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in ranks2.astype(int):
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = 0.5 * (dist + shifted)
    return dist


def wilcoxon_signed_rank(differences: Iterable[float], exact: bool | None = None) -> WilcoxonResult:
    """Signed-rank test of symmetry about zero.

    Zero differences are dropped and ties get mid-ranks. ``z`` is always the
    tie-corrected normal score; p-values are exact (conditional on the
    ranks) when ``n <= 25`` unless ``exact=False``.
    """
    d = np.asarray(list(differences), dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    mean = n * (n + 1) / 4
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(counts**3 - counts) / 48
    z = (w_plus - mean) / np.sqrt(var) if var > 0 else 0.0
    use_exact = n <= EXACT_MAX_N if exact is None else exact
    if use_exact:
        dist = _signed_rank_distribution(np.round(2 * ranks))
        w2 = int(round(2 * w_plus))
        p_greater = float(dist[w2:].sum())
        p_less = float(dist[: w2 + 1].sum())
    else:
        p_greater = float(stats.norm.sf(z))
        p_less = float(stats.norm.cdf(z))
    p = min(1.0, 2 * min(p_greater, p_less))
    return WilcoxonResult(float(z), p, w_plus, n, p_greater, p_less, use_exact)


class KSResult(NamedTuple):
    d: float
    p: float


def ks_two_sample(a: Iterable[float], b: Iterable[float]) -> KSResult:
    """Two-sample Kolmogorov-Smirnov with the small-sample corrected
    asymptotic p-value (Stephens' ``sqrt(ne) + 0.12 + 0.11/sqrt(ne)``)."""
    a = np.sort(np.asarray(list(a), dtype=float))
    b = np.sort(np.asarray(list(b), dtype=float))
    if not len(a) or not len(b):
        raise ValueError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    d = float(np.max(np.abs(fa - fb)))
    en = np.sqrt(len(a) * len(b) / (len(a) + len(b)))
    p = float(stats.kstwobign.sf((en + 0.12 + 0.11 / en) * d))
    return KSResult(d, min(1.0, p))


OBSERVED = "observed"
MIN_LEGS = "min_legs_weight"
OBSERVED_X_MIN_LEGS = "observed__x__min_legs_weight"


def matched_closure_sample(observed, rewired, seed: int = 0) -> DesignMatrix:
    """Logit design: every observed triad plus as many rewired ones.

    Outcome is closure (w(1) > 0); regressors are the observed-origin flag,
    minimal legs weight and their product.
    """
    observed = list(observed)
    rewired = list(rewired)
    if len(rewired) < len(observed):
        raise ValueError(f"rewired pool ({len(rewired)}) smaller than observed set ({len(observed)})")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(rewired), size=len(observed), replace=False))
    rows = [(1.0, o) for o in observed] + [(0.0, rewired[i]) for i in pick]
    xo = np.array([r[0] for r in rows])
    xw = np.array([float(r[1].order_stats[1]) for r in rows])
    y = np.array([1.0 if r[1].order_stats[0] > 0 else 0.0 for r in rows])
    X = np.column_stack([np.ones(len(rows)), xo, xw, xo * xw])
    return DesignMatrix(X, (CONST, OBSERVED, MIN_LEGS, OBSERVED_X_MIN_LEGS), y)
