"""Maximum likelihood fitters: logit, Poisson, NB2 and conditional FE-NB.

All of them share one damped Newton routine. Step halving keeps the
log-likelihood non-decreasing; convergence is declared when the Newton
decrement falls below ``tol``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import special, stats

from .design import (
    CONST,
    ConvergenceError,
    DesignMatrix,
    EstimationError,
    FitResult,
    RankDeficiencyError,
    SeparationError,
)
from .linear import rank_deficient_columns

MAX_ITER = 200
LOG_ALPHA_FLOOR = -20.0


class NewtonResult:
    def __init__(self, x, ll, grad, hess, iterations, converged, trace):
        self.x = x
        self.ll = ll
        self.grad = grad
        self.hess = hess
        self.iterations = iterations
        self.converged = converged
        self.trace = trace

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if len(self.grad) else 0.0


def newton_maximize(
    f: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    x0: np.ndarray,
    max_iter: int = MAX_ITER,
    tol: float = 1e-12,
) -> NewtonResult:
    """Maximize ``f`` returning ``(value, gradient, hessian)``."""
    x = np.asarray(x0, dtype=float).copy()
    ll, g, H = f(x)
    if not np.isfinite(ll):
        raise EstimationError("log-likelihood is not finite at the starting values")
    trace = [ll]
    for it in range(1, max_iter + 1):
        negH = -H
        try:
            L = np.linalg.cholesky(negH)
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            # not concave here: regularize towards gradient ascent
            lam = max(1e-6, float(np.max(np.abs(np.diag(negH)))) * 1e-3)
            for _ in range(60):
                try:
                    L = np.linalg.cholesky(negH + lam * np.eye(len(x)))
                    break
                except np.linalg.LinAlgError:
                    lam *= 10
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        decrement = float(g @ step)
        if decrement < tol:
            return NewtonResult(x, ll, g, H, it - 1, True, trace)
        t = 1.0
        for _ in range(60):
            cand = x + t * step
            ll_c, g_c, H_c = f(cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            return NewtonResult(x, ll, g, H, it, False, trace)
        if ll_c < ll:
            # numerically flat: accept the original point
            return NewtonResult(x, ll, g, H, it, decrement < 1e-8, trace)
        x, ll, g, H = cand, ll_c, g_c, H_c
        trace.append(ll)
    ok = float(g @ np.linalg.lstsq(-H, g, rcond=None)[0]) < 1e-8
    return NewtonResult(x, ll, g, H, max_iter, ok, trace)


def _check_rank(X: DesignMatrix) -> None:
    bad = rank_deficient_columns(X.X, X.columns)
    if bad:
        raise RankDeficiencyError(bad)


def _wald(params, cov):
    bse = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = params / bse
    return bse, 2 * stats.norm.sf(np.abs(z))


def _invert(H: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(-H)


# --- logit ---------------------------------------------------------------------


def _logit_ll(A, y):
    def f(b):
        eta = A @ b
        p = special.expit(eta)
        ll = float(np.sum(y * eta - np.logaddexp(0, eta)))
        g = A.T @ (y - p)
        H = -(A * (p * (1 - p))[:, None]).T @ A
        return ll, g, H

    return f


def logit_fit(X: DesignMatrix, max_iter: int = MAX_ITER) -> FitResult:
    """Binary logit by Newton-Raphson (equivalently IRLS)."""
    y = X.y
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logit outcome must be 0/1")
    _check_rank(X)
    A = X.X
    res = newton_maximize(_logit_ll(A, y), np.zeros(A.shape[1]), max_iter)
    eta = A @ res.x
    if np.max(np.abs(eta)) > 30 or not res.converged:
        raise SeparationError("perfect or quasi-perfect separation: fitted probabilities reach 0 or 1")
    cov = _invert(res.hess)
    bse, pvals = _wald(res.x, cov)
    ybar = y.mean()
    n = len(y)
    ll0 = float(n * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar))) if 0 < ybar < 1 else 0.0
    k = A.shape[1]
    lr = 2 * (res.ll - ll0)
    return FitResult(
        model="logit",
        columns=X.columns,
        params=res.x,
        bse=bse,
        pvalues=pvals,
        cov=cov,
        nobs=n,
        means=A.mean(axis=0),
        llf=res.ll,
        llnull=ll0,
        pseudo_r2=1 - res.ll / ll0 if ll0 else None,
        pseudo_r2_adj=1 - (res.ll - k) / ll0 if ll0 else None,
        chi2=lr,
        chi2_pvalue=float(stats.chi2.sf(lr, k - 1)) if k > 1 else None,
        converged=res.converged,
        iterations=res.iterations,
        grad_norm=res.grad_norm / n,
        extra={"odds_ratios": np.exp(res.x).tolist()},
    )


def logit_predict(params: dict[str, float], row: dict[str, float]) -> float:
    """Probability from named coefficients; ``const`` is the intercept."""
    eta = sum(b * (1.0 if name == CONST else row[name]) for name, b in params.items())
    return float(special.expit(eta))


# --- Poisson and NB2 -------------------------------------------------------------


def _poisson_ll(A, y):
    lgy = special.gammaln(y + 1)

    def f(b):
        eta = A @ b
        mu = np.exp(eta)
        ll = float(np.sum(y * eta - mu - lgy))
        return ll, A.T @ (y - mu), -(A * mu[:, None]).T @ A

    return f


def _count_start(X: DesignMatrix) -> np.ndarray:
    b = np.zeros(X.X.shape[1])
    if CONST in X.columns:
        b[X.columns.index(CONST)] = np.log(max(X.y.mean(), 1e-8))
    return b


def _check_counts(y):
    if (y < 0).any() or not np.allclose(y, np.round(y)):
        raise ValueError("count outcome must be non-negative integers")


def poisson_fit(X: DesignMatrix, max_iter: int = MAX_ITER) -> FitResult:
    _check_counts(X.y)
    _check_rank(X)
    res = newton_maximize(_poisson_ll(X.X, X.y), _count_start(X), max_iter)
    if not res.converged:
        raise ConvergenceError(res.iterations, res.grad_norm)
    cov = _invert(res.hess)
    bse, pvals = _wald(res.x, cov)
    return FitResult(
        model="poisson", columns=X.columns, params=res.x, bse=bse, pvalues=pvals, cov=cov,
        nobs=X.nobs, means=X.X.mean(axis=0), llf=res.ll, converged=True,
        iterations=res.iterations, grad_norm=res.grad_norm / X.nobs,
    )


def _rising_terms(y: np.ndarray, a: float):
    """Per-row sums over j < y of log1p(j/a), 1/(a+j) and 1/(a+j)^2.

    These replace differences of gamma functions at ``y + a`` and ``a``,
    which cancel badly when ``a = 1/alpha`` is large.
    """
    yi = y.astype(np.int64)
    j = np.arange(int(yi.max()) if len(yi) else 0, dtype=float)
    inv = 1.0 / (a + j)
    zero = np.zeros(1)
    c0 = np.concatenate([zero, np.cumsum(np.log1p(j / a))])
    c1 = np.concatenate([zero, np.cumsum(inv)])
    c2 = np.concatenate([zero, np.cumsum(inv * inv)])
    return c0[yi], c1[yi], c2[yi]


def nb2_loglike(A: np.ndarray, y: np.ndarray, beta: np.ndarray, alpha: float) -> float:
    """NB2 log-likelihood (variance mu + alpha mu^2)."""
    eta = A @ beta
    a = 1.0 / alpha
    rise, _, _ = _rising_terms(y, a)
    return float(np.sum(rise - special.gammaln(y + 1) - (a + y) * np.log1p(np.exp(eta) / a) + y * eta))


def _nb2_ll(A, y):
    lgy = special.gammaln(y + 1)
    k = A.shape[1]

    def f(theta):
        b, phi = theta[:k], theta[k]
        a = np.exp(-phi)
        eta = A @ b
        mu = np.exp(eta)
        amu = a + mu
        l1p = np.log1p(mu / a)
        rise, d1, d2 = _rising_terms(y, a)
        ll = float(np.sum(rise - lgy - (a + y) * l1p + y * eta))
        r = (y - mu) * a / amu
        gb = A.T @ r
        dl_da = d1 - l1p + (mu - y) / amu
        g_phi = float(np.sum(-a * dl_da))
        wbb = mu * a * (a + y) / amu**2
        Hbb = -(A * wbb[:, None]).T @ A
        d2_da2 = -d2 + mu / (a * amu) - (mu - y) / amu**2
        H_pp = float(np.sum(a * a * d2_da2 + a * dl_da))
        H_bp = A.T @ (-a * (y - mu) * mu / amu**2)
        g = np.append(gb, g_phi)
        H = np.zeros((k + 1, k + 1))
        H[:k, :k] = Hbb
        H[:k, k] = H[k, :k] = H_bp
        H[k, k] = H_pp
        return ll, g, H

    return f


def negbin_fit(X: DesignMatrix, max_iter: int = MAX_ITER) -> FitResult:
    """NB2 regression by maximum likelihood, with an LR test of alpha = 0.

    When the Poisson fit shows no overdispersion the estimate sits on the
    boundary alpha = 0 and the fit reduces to Poisson.
    """
    _check_counts(X.y)
    _check_rank(X)
    A, y = X.X, X.y
    n, k = A.shape
    pois = newton_maximize(_poisson_ll(A, y), _count_start(X), max_iter)
    mu = np.exp(A @ pois.x)
    score_alpha = 0.5 * float(np.sum((y - mu) ** 2 - y))
    f = _nb2_ll(A, y)
    if score_alpha <= 0:
        beta, alpha, ll = pois.x, 0.0, pois.ll
        H = pois.hess
        cov_b = _invert(H)
        alpha_se = float("nan")
        res = pois
    else:
        phi0 = np.log(max(np.mean(((y - mu) ** 2 - y) / np.maximum(mu, 1e-8) ** 2), 0.05))
        res = newton_maximize(f, np.append(pois.x, phi0), max_iter)
        if res.x[k] < LOG_ALPHA_FLOOR or res.ll <= pois.ll:
            beta, alpha, ll = pois.x, 0.0, pois.ll
            cov_b = _invert(pois.hess)
            alpha_se = float("nan")
            res = pois
        else:
            if not res.converged:
                raise ConvergenceError(res.iterations, res.grad_norm)
            beta, alpha, ll = res.x[:k], float(np.exp(res.x[k])), res.ll
            cov_full = _invert(res.hess)
            cov_b = cov_full[:k, :k]
            alpha_se = float(alpha * np.sqrt(max(cov_full[k, k], 0.0)))
    bse, pvals = _wald(beta, cov_b)
    lr = max(0.0, 2 * (ll - pois.ll))
    alpha_p = 0.5 * float(stats.chi2.sf(lr, 1)) if lr > 0 else 1.0

    ll0 = _nb_null_ll(y, max_iter)
    n_params = k + 1
    chi2 = 2 * (ll - ll0) if k > 1 else None
    return FitResult(
        model="nb",
        columns=X.columns,
        params=beta,
        bse=bse,
        pvalues=pvals,
        cov=cov_b,
        nobs=n,
        means=A.mean(axis=0),
        llf=ll,
        llnull=ll0,
        pseudo_r2=1 - ll / ll0,
        pseudo_r2_adj=1 - (ll - n_params) / ll0,
        chi2=chi2,
        chi2_pvalue=float(stats.chi2.sf(chi2, k - 1)) if chi2 is not None else None,
        alpha=alpha,
        alpha_se=alpha_se,
        alpha_lr=lr,
        alpha_pvalue=alpha_p,
        converged=True,
        iterations=res.iterations,
        grad_norm=res.grad_norm / n,
        extra={"poisson_llf": pois.ll},
    )


def _nb_null_ll(y: np.ndarray, max_iter: int) -> float:
    """Log-likelihood of the intercept-only NB2 model."""
    X0 = DesignMatrix(np.ones((len(y), 1)), (CONST,), y)
    A = X0.X
    pois = newton_maximize(_poisson_ll(A, y), _count_start(X0), max_iter)
    mu = np.exp(pois.x[0])
    if float(np.sum((y - mu) ** 2 - y)) <= 0:
        return pois.ll
    phi0 = np.log(max(np.mean(((y - mu) ** 2 - y)) / mu**2, 0.05))
    res = newton_maximize(_nb2_ll(A, y), np.array([pois.x[0], phi0]), max_iter)
    return max(res.ll, pois.ll)


# --- conditional fixed-effects NB (Hausman, Hall and Griliches) ---------------------


def _hhg_setup(X: DesignMatrix):
    labels, codes = np.unique(X.groups.astype(str), return_inverse=True)
    G = len(labels)
    sizes = np.bincount(codes, minlength=G)
    totals = np.bincount(codes, weights=X.y, minlength=G)
    informative = (sizes > 1) & (totals > 0)
    return labels, codes, sizes, totals, informative


ASYMPTOTIC_FROM = 20.0


def _log_rise(x: np.ndarray, n: np.ndarray):
    """``lgamma(x+n) - lgamma(x)`` with its first two derivatives in ``x``.

    For large ``x`` the plain differences cancel badly, so Stirling series
    are differenced term by term there.
    """
    x, n = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(n, dtype=float))
    big = x >= ASYMPTOTIC_FROM
    lg = np.empty(x.shape)
    dg = np.empty(x.shape)
    tg = np.empty(x.shape)
    xs, ns = x[~big], n[~big]
    lg[~big] = special.gammaln(xs + ns) - special.gammaln(xs)
    dg[~big] = special.digamma(xs + ns) - special.digamma(xs)
    tg[~big] = special.polygamma(1, xs + ns) - special.polygamma(1, xs)
    xb, nb = x[big], n[big]
    zb = xb + nb
    r = np.log1p(nb / xb)

    def stir(z):
        return 1 / (12 * z) - 1 / (360 * z**3) + 1 / (1260 * z**5)

    def psi_tail(z):
        return 1 / (2 * z) + 1 / (12 * z**2) - 1 / (120 * z**4) + 1 / (252 * z**6)

    def tri_tail(z):
        return 1 / (2 * z**2) + 1 / (6 * z**3) - 1 / (30 * z**5) + 1 / (42 * z**7)

    lg[big] = (zb - 0.5) * r + nb * (np.log(xb) - 1) + stir(zb) - stir(xb)
    dg[big] = r - psi_tail(zb) + psi_tail(xb)
    tg[big] = -nb / (xb * zb) + tri_tail(zb) - tri_tail(xb)
    return lg, dg, tg


def hhg_loglike(A: np.ndarray, y: np.ndarray, codes: np.ndarray, beta: np.ndarray) -> float:
    """Conditional log-likelihood given each group's outcome total."""
    lam = np.exp(A @ beta)
    G = codes.max() + 1
    S = np.bincount(codes, weights=lam, minlength=G)
    Y = np.bincount(codes, weights=y, minlength=G)
    per_group = special.gammaln(Y + 1) - _log_rise(S, Y)[0]
    per_obs = _log_rise(lam, y)[0] - special.gammaln(y + 1)
    return float(per_group.sum() + per_obs.sum())


def _hhg_ll(A, y, codes):
    G = codes.max() + 1
    Y = np.bincount(codes, weights=y, minlength=G)
    k = A.shape[1]
    const = float(special.gammaln(Y + 1).sum() - special.gammaln(y + 1).sum())

    @np.errstate(over="ignore", invalid="ignore")
    def f(b):
        # overflowing trial points come back non-finite and the line search rejects them
        lam = np.exp(A @ b)
        S = np.bincount(codes, weights=lam, minlength=G)
        gl, gd, gt = _log_rise(S, Y)
        ol, od, ot = _log_rise(lam, y)
        ll = const + float(ol.sum() - gl.sum())
        c = od - gd[codes]
        g = A.T @ (lam * c)
        H = (A * (lam * (c + lam * ot))[:, None]).T @ A
        V = np.zeros((G, k))
        np.add.at(V, codes, A * lam[:, None])
        H -= (V * gt[:, None]).T @ V
        return ll, g, H

    return f


def fe_negbin_fit(X: DesignMatrix, max_iter: int = MAX_ITER) -> FitResult:
    """Conditional fixed-effects negative binomial regression.

    Groups with a single row or an all-zero outcome contribute a constant to
    the conditional likelihood and are dropped. The intercept stays
    identified in this model. Group effects are reported as
    ``log(sum y / sum lambda)`` per retained group. Without overdispersion
    the likelihood flattens out as the intercept grows toward the Poisson
    limit, so expect a very large intercept there (or, rarely,
    :class:`ConvergenceError`).
    """
    if X.groups is None:
        raise ValueError("fixed effects need group labels")
    _check_counts(X.y)
    labels, codes, sizes, totals, informative = _hhg_setup(X)
    keep = informative[codes]
    if not keep.any():
        raise EstimationError("every group was dropped (singletons or all-zero outcomes)")
    data = X.subset(np.flatnonzero(keep))
    _check_rank(data)
    labels, codes = np.unique(data.groups.astype(str), return_inverse=True)
    A, y = data.X, data.y
    res = newton_maximize(_hhg_ll(A, y, codes), _count_start(data), max_iter)
    if not res.converged:
        raise ConvergenceError(res.iterations, res.grad_norm)
    cov = _invert(res.hess)
    bse, pvals = _wald(res.x, cov)
    lam = np.exp(A @ res.x)
    G = len(labels)
    effects = np.log(np.bincount(codes, weights=y, minlength=G) / np.bincount(codes, weights=lam, minlength=G))
    k = A.shape[1]
    b0 = _count_start(data)
    ll0 = None
    if CONST in data.columns:
        X0 = DesignMatrix(np.ones((len(y), 1)), (CONST,), y, data.groups)
        r0 = newton_maximize(_hhg_ll(X0.X, y, codes), np.array([b0[data.columns.index(CONST)]]), max_iter)
        ll0 = r0.ll
    chi2 = 2 * (res.ll - ll0) if ll0 is not None and k > 1 else None
    return FitResult(
        model="fe_nb",
        columns=data.columns,
        params=res.x,
        bse=bse,
        pvalues=pvals,
        cov=cov,
        nobs=data.nobs,
        means=A.mean(axis=0),
        llf=res.ll,
        llnull=ll0,
        pseudo_r2=1 - res.ll / ll0 if ll0 else None,
        pseudo_r2_adj=1 - (res.ll - k) / ll0 if ll0 else None,
        chi2=chi2,
        chi2_pvalue=float(stats.chi2.sf(chi2, k - 1)) if chi2 is not None else None,
        group_effects=dict(zip(labels.tolist(), effects.tolist())),
        n_groups=G,
        groups_dropped=int((~informative).sum()),
        rows_dropped=int((~keep).sum()),
        converged=True,
        iterations=res.iterations,
        grad_norm=res.grad_norm / data.nobs,
    )
