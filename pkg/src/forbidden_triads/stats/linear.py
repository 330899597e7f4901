"""Least squares: pooled OLS, within (fixed effects) OLS, VIF, power fits."""

from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .design import CONST, DesignMatrix, EstimationError, FitResult, RankDeficiencyError


class RankWarning(UserWarning):
    pass


def rank_deficient_columns(X: np.ndarray, columns, tol: float = 1e-10) -> list[str]:
    """Columns a pivoted QR finds linearly dependent on earlier ones."""
    if X.shape[1] == 0:
        return []
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    _, R, piv = linalg.qr(X / scale, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * max(d[0], 1e-300))) if len(d) else 0
    if len(d) < X.shape[1]:
        rank = min(rank, len(d))
    return [columns[i] for i in sorted(piv[rank:])]


def _ls(X: np.ndarray, y: np.ndarray):
    Q, R = np.linalg.qr(X)
    beta = linalg.solve_triangular(R, Q.T @ y)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    return beta, Rinv @ Rinv.T


def ols_fit(X: DesignMatrix) -> FitResult:
    """Ordinary least squares with classical standard errors."""
    A, y = X.X, X.y
    n, k = A.shape
    bad = rank_deficient_columns(A, X.columns)
    if bad:
        raise RankDeficiencyError(bad)
    if n <= k:
        raise EstimationError(f"{n} rows cannot identify {k} coefficients")
    beta, XtX_inv = _ls(A, y)
    resid = y - A @ beta
    rss = float(resid @ resid)
    df = n - k
    s2 = rss / df
    cov = s2 * XtX_inv
    bse = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = beta / bse
    pvals = 2 * stats.t.sf(np.abs(tvals), df)
    has_const = CONST in X.columns
    centered = y - y.mean() if has_const else y
    tss = float(centered @ centered)
    r2 = 1 - rss / tss if tss > 0 else 1.0
    k_slopes = k - 1 if has_const else k
    r2_adj = 1 - (1 - r2) * (n - (1 if has_const else 0)) / df
    fstat = f_p = None
    if k_slopes > 0 and rss > 0:
        fstat = ((tss - rss) / k_slopes) / s2
        f_p = float(stats.f.sf(fstat, k_slopes, df))
    llf = -0.5 * n * (np.log(2 * np.pi) + np.log(rss / n) + 1) if rss > 0 else None
    return FitResult(
        model="ols",
        columns=X.columns,
        params=beta,
        bse=bse,
        pvalues=pvals,
        cov=cov,
        nobs=n,
        means=A.mean(axis=0),
        llf=llf,
        r2=r2,
        r2_adj=r2_adj,
        fstat=fstat,
        f_pvalue=f_p,
        df_resid=df,
        extra={"sigma2": s2},
    )


def _group_codes(groups: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels, codes = np.unique(groups.astype(str), return_inverse=True)
    return labels, codes


def demean(values: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    if values.ndim == 1:
        means = np.bincount(codes, weights=values, minlength=n_groups) / counts
        return values - means[codes]
    out = np.empty_like(values)
    for j in range(values.shape[1]):
        means = np.bincount(codes, weights=values[:, j], minlength=n_groups) / counts
        out[:, j] = values[:, j] - means[codes]
    return out


def fe_ols_fit(X: DesignMatrix) -> FitResult:
    """Within estimator with one fixed effect per group.

    Singleton groups carry no within variation and are dropped. Regressors
    that are constant inside every group vanish after demeaning and are
    dropped with a :class:`RankWarning`.
    """
    if X.groups is None:
        raise ValueError("fixed effects need group labels")
    labels, codes = _group_codes(X.groups)
    sizes = np.bincount(codes)
    keep = sizes[codes] > 1
    if not keep.any():
        raise EstimationError("every group is a singleton; no within variation to estimate")
    dropped_groups = int(np.sum(sizes == 1))
    data = X.subset(np.flatnonzero(keep))
    labels, codes = _group_codes(data.groups)
    G = len(labels)

    slope_cols = [i for i, c in enumerate(data.columns) if c != CONST]
    names = [data.columns[i] for i in slope_cols]
    Xd = demean(data.X[:, slope_cols], codes, G)
    yd = demean(data.y, codes, G)

    dropped = []
    scale = np.abs(data.X[:, slope_cols]).max(axis=0) if slope_cols else np.array([])
    for j in range(len(names)):
        if np.max(np.abs(Xd[:, j])) <= 1e-12 * max(scale[j], 1.0):
            dropped.append(names[j])
    if dropped:
        warnings.warn(f"group-constant regressors dropped: {', '.join(dropped)}", RankWarning, stacklevel=2)
    use = [j for j, c in enumerate(names) if c not in dropped]
    names = [names[j] for j in use]
    Xd = Xd[:, use]
    bad = rank_deficient_columns(Xd, names)
    if bad:
        raise RankDeficiencyError(bad)
    if not names:
        raise EstimationError("no regressor varies within groups")

    n, k = Xd.shape
    df = n - k - G
    if df <= 0:
        raise EstimationError("not enough within-group degrees of freedom")
    beta, XtX_inv = _ls(Xd, yd)
    resid = yd - Xd @ beta
    rss = float(resid @ resid)
    s2 = rss / df
    cov = s2 * XtX_inv
    bse = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        pvals = 2 * stats.t.sf(np.abs(beta / bse), df)

    raw = data.X[:, [slope_cols[j] for j in use]]
    gamma_resid = data.y - raw @ beta
    gamma = np.bincount(codes, weights=gamma_resid, minlength=G) / np.bincount(codes)
    fitted = raw @ beta + gamma[codes]
    tss = float(((data.y - data.y.mean()) ** 2).sum())
    r2 = 1 - rss / tss if tss > 0 else 1.0
    r2_adj = 1 - (1 - r2) * (n - 1) / df
    tss_w = float(yd @ yd)
    r2_within = 1 - rss / tss_w if tss_w > 0 else 1.0
    fstat = ((tss_w - rss) / k) / s2 if rss > 0 else None
    f_p = float(stats.f.sf(fstat, k, df)) if fstat is not None else None
    means = raw.mean(axis=0)
    intercept = float(data.y.mean() - means @ beta)
    return FitResult(
        model="fe_ols",
        columns=tuple(names),
        params=beta,
        bse=bse,
        pvalues=pvals,
        cov=cov,
        nobs=n,
        means=means,
        llf=-0.5 * n * (np.log(2 * np.pi) + np.log(rss / n) + 1) if rss > 0 else None,
        r2=r2,
        r2_adj=r2_adj,
        fstat=fstat,
        f_pvalue=f_p,
        df_resid=df,
        group_effects=dict(zip(labels.tolist(), gamma.tolist())),
        n_groups=G,
        groups_dropped=dropped_groups,
        rows_dropped=int((~keep).sum()),
        dropped_columns=tuple(dropped),
        extra={"sigma2": s2, "r2_within": r2_within, "intercept_at_means": intercept,
               "fitted_rmse": float(np.sqrt(np.mean((data.y - fitted) ** 2)))},
    )


def vif(X: DesignMatrix) -> dict[str, float]:
    """Variance inflation factor of each non-constant regressor.

    Perfectly collinear columns get ``inf``.
    """
    names = [c for c in X.columns if c != CONST]
    if len(names) < 2:
        raise ValueError("VIF needs at least two non-constant regressors")
    out = {}
    A = np.column_stack([X.col(c) for c in names])
    for j, name in enumerate(names):
        others = np.column_stack([np.ones(X.nobs), np.delete(A, j, axis=1)])
        coef, *_ = np.linalg.lstsq(others, A[:, j], rcond=None)
        resid = A[:, j] - others @ coef
        tss = float(((A[:, j] - A[:, j].mean()) ** 2).sum())
        if tss == 0:
            out[name] = float("inf")
            continue
        r2 = 1 - float(resid @ resid) / tss
        out[name] = float("inf") if r2 >= 1 - 1e-12 else 1.0 / (1.0 - r2)
    return out


def pearson_matrix(table) -> pd.DataFrame:
    """Pairwise Pearson correlations; zero-variance columns yield NaN entries."""
    df = pd.DataFrame(table).astype(float)
    if len(df) < 2:
        raise ValueError("correlations need at least two rows")
    A = df.to_numpy()
    A = A - A.mean(axis=0)
    norms = np.sqrt((A**2).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        C = (A.T @ A) / np.outer(norms, norms)
    C = np.clip(C, -1.0, 1.0)
    ok = norms > 0
    np.fill_diagonal(C, np.where(ok, 1.0, np.nan))
    C = (C + C.T) / 2
    return pd.DataFrame(C, index=df.columns, columns=df.columns)


def power_sequence_r2(x, y, max_power: int = 8) -> np.ndarray:
    """R-squared gain from adding each successive power of ``x``.

    ``x`` is centered and scaled before the powers are formed, which leaves
    every R-squared unchanged. Entries are NaN (with a warning) once the
    polynomial basis loses numerical rank.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    if len(x) <= max_power + 1:
        raise ValueError("not enough rows for the requested powers")
    sd = x.std()
    if sd == 0:
        raise ValueError("x has no variance")
    z = (x - x.mean()) / sd
    tss = float(((y - y.mean()) ** 2).sum())
    prev = 0.0
    gains = np.full(max_power, np.nan)
    for k in range(1, max_power + 1):
        A = np.column_stack([z**p for p in range(k + 1)])
        if np.linalg.matrix_rank(A) < k + 1:
            warnings.warn(f"polynomial basis rank deficient at power {k}", RankWarning, stacklevel=2)
            break
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        r2 = 1 - float(resid @ resid) / tss if tss > 0 else 1.0
        gains[k - 1] = r2 - prev
        prev = r2
    return gains
