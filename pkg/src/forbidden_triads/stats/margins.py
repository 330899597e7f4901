"""Marginal predictions and the leader-interaction model."""

from __future__ import annotations

from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import special

from .design import CONST, INTERACTION, DesignMatrix, FitResult

Z95 = 1.959963984540054

LINK = {"ols": "identity", "fe_ols": "identity", "nb": "log", "fe_nb": "log", "poisson": "log", "logit": "logit"}

FLAG = "leader_flag"


class Margins(NamedTuple):
    grid: np.ndarray
    prediction: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray


def _design_row(fit: FitResult, vary: str, value: float, fixed: Mapping[str, float]) -> np.ndarray:
    means = dict(zip(fit.columns, fit.means))

    def val(name: str) -> float:
        if name == CONST:
            return 1.0
        if name == vary:
            return value
        if name in fixed:
            return float(fixed[name])
        if INTERACTION in name:
            a, b = name.split(INTERACTION, 1)
            return val(a) * val(b)
        if name.endswith("_sq") and (name[:-3] == vary or name[:-3] in fixed):
            return val(name[:-3]) ** 2
        return float(means[name])

    return np.array([val(c) for c in fit.columns])


def marginal_predictions(
    fit: FitResult,
    vary: str,
    grid: Sequence[float],
    kind: str | None = None,
    fixed: Mapping[str, float] | None = None,
) -> Margins:
    """Predictions over ``grid`` with every other regressor at its mean.

    Squares (``<name>_sq``) and products (``a__x__b``) of the varied or fixed
    regressors are recomputed from their base values. ``kind`` is the link
    (identity, log, logit); by default it follows the fitted model. Intervals
    are delta-method 95% bands on the response scale.
    """
    fixed = dict(fixed or {})
    if vary not in fit.columns:
        raise KeyError(f"unknown regressor {vary!r}")
    for name in fixed:
        if name not in fit.columns:
            raise KeyError(f"unknown regressor {name!r}")
    link = kind or LINK[fit.model]
    grid = np.asarray(grid, dtype=float)
    rows = np.array([_design_row(fit, vary, g, fixed) for g in grid])
    eta = rows @ fit.params
    if fit.model == "fe_ols":
        # absorbed intercept: average leader effect, i.e. ybar - xbar'b
        centered = rows - fit.means
        eta = fit.extra["intercept_at_means"] + rows @ fit.params
        var = np.einsum("ij,jk,ik->i", centered, fit.cov, centered) + fit.extra["sigma2"] / fit.nobs
    else:
        var = np.einsum("ij,jk,ik->i", rows, fit.cov, rows)
    se = np.sqrt(np.clip(var, 0, None))
    if link == "identity":
        pred, dpred = eta, np.ones_like(eta)
    elif link == "log":
        pred = np.exp(eta)
        dpred = pred
    elif link == "logit":
        pred = special.expit(eta)
        dpred = pred * (1 - pred)
    else:
        raise ValueError(f"unknown link {link!r}")
    half = Z95 * dpred * se
    return Margins(grid, pred, pred - half, pred + half)


def quadratic_peak(fit: FitResult, name: str) -> float:
    """Location of the extremum of ``b1 x + b2 x^2`` for regressor ``name``."""
    return -fit[name] / (2 * fit[f"{name}_sq"])


def add_leader_interaction(X: DesignMatrix, flag, vary: str = "d_forbidden") -> DesignMatrix:
    flag = np.asarray(flag, dtype=float)
    if flag.shape != (X.nobs,):
        raise ValueError("flag length does not match the number of rows")
    if np.all(flag == flag[0]):
        raise ValueError("leader flag is constant; the interaction is not identified")
    base = X.col(vary)
    sq = X.col(f"{vary}_sq") if f"{vary}_sq" in X.columns else base**2
    names = (FLAG, f"{FLAG}{INTERACTION}{vary}", f"{FLAG}{INTERACTION}{vary}_sq")
    return X.add_columns(names, np.column_stack([flag, flag * base, flag * sq]))


def leader_interaction_fit(
    X: DesignMatrix,
    flag,
    fitter: Callable[[DesignMatrix], FitResult] | None = None,
    vary: str = "d_forbidden",
) -> FitResult:
    """Refit with a flag, flag x ``vary`` and flag x ``vary``^2 added.

    Defaults to the negative binomial fitter. Margins for either subgroup come
    from :func:`marginal_predictions` with ``fixed={"leader_flag": 0 or 1}``.
    """
    if fitter is None:
        from .glm import negbin_fit as fitter
    aug = add_leader_interaction(X, flag, vary)
    fit = fitter(aug)
    fit.extra["interaction_flag"] = FLAG
    fit.extra["flag_share"] = float(np.mean(aug.col(FLAG)))
    return fit
