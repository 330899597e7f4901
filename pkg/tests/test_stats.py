import math
import warnings
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from forbidden_triads.stats import (
    CONST,
    DesignMatrix,
    EstimationError,
    FitResult,
    RankDeficiencyError,
    RankWarning,
    SeparationError,
    fe_negbin_fit,
    fe_ols_fit,
    kde_epanechnikov,
    ks_two_sample,
    leader_interaction_fit,
    logit_fit,
    logit_predict,
    lowess,
    marginal_predictions,
    matched_closure_sample,
    nb2_loglike,
    negbin_fit,
    ols_fit,
    pearson_matrix,
    permutation_pvalues,
    poisson_fit,
    power_sequence_r2,
    quadratic_peak,
    vif,
    wilcoxon_signed_rank,
)
from forbidden_triads.stats.glm import _log_rise
from forbidden_triads.stats.smooth import normal_scale_bandwidth
from forbidden_triads.triads import TriadObservation


def _dm(x, y, groups=None, names=("x",)):
    x = np.asarray(x, dtype=float).reshape(len(y), -1)
    return DesignMatrix(np.column_stack([np.ones(len(y)), x]), (CONST,) + tuple(names), y, groups)


def zoom_grid_max(f, center, width, steps=41, rounds=12):
    """Maximize f over a square grid, re-centering and shrinking each round."""
    center = np.asarray(center, dtype=float)
    for _ in range(rounds):
        axes = [np.linspace(c - width, c + width, steps) for c in center]
        best = max(product(*axes), key=lambda p: f(np.array(p)))
        center = np.array(best)
        width /= 4
    return center


# --- design ---------------------------------------------------------------------


def test_design_validation():
    with pytest.raises(ValueError):
        DesignMatrix(np.ones((3, 2)), ("a",), np.ones(3))
    with pytest.raises(ValueError):
        DesignMatrix(np.ones((3, 2)), ("a", "a"), np.ones(3))
    with pytest.raises(ValueError):
        DesignMatrix(np.array([[1.0], [np.nan]]), ("a",), np.ones(2))


# --- OLS ------------------------------------------------------------------------


def test_ols_exact_line():
    x = np.arange(10.0)
    fit = ols_fit(_dm(x, 3 - 2 * x))
    assert fit[CONST] == pytest.approx(3, abs=1e-12) and fit["x"] == pytest.approx(-2, abs=1e-12)
    assert fit.r2 == pytest.approx(1, abs=1e-12)


def test_ols_three_points_by_hand():
    # points (0,1), (1,2), (2,4): normal equations [[3,3],[3,5]] b = [7,10]
    fit = ols_fit(_dm([0, 1, 2], np.array([1.0, 2, 4])))
    assert fit[CONST] == pytest.approx(5 / 6, abs=1e-12)
    assert fit["x"] == pytest.approx(3 / 2, abs=1e-12)


def test_ols_constant_outcome():
    fit = ols_fit(_dm([1, 5, 2, 8], np.full(4, 7.0)))
    assert fit["x"] == pytest.approx(0, abs=1e-12) and fit[CONST] == pytest.approx(7)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_ols_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    y = X @ rng.normal(size=3) + rng.normal(size=40)
    fit = ols_fit(_dm(X, y, names=("a", "b", "c")))
    A = np.column_stack([np.ones(40), X])
    b = np.linalg.solve(A.T @ A, A.T @ y)
    assert np.allclose(fit.params, b, rtol=1e-10, atol=1e-12)


def test_ols_against_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 2))
    y = 1 + X @ [0.5, -1] + rng.normal(size=60)
    fit = ols_fit(_dm(X, y, names=("a", "b")))
    ref = sm.OLS(y, sm.add_constant(X)).fit()
    assert np.allclose(fit.bse, ref.bse) and np.allclose(fit.pvalues, ref.pvalues)
    assert fit.r2_adj == pytest.approx(ref.rsquared_adj) and fit.fstat == pytest.approx(ref.fvalue)


def test_ols_rank_deficiency():
    x = np.arange(6.0)
    with pytest.raises(RankDeficiencyError):
        ols_fit(_dm(np.column_stack([x, 2 * x]), x, names=("a", "b")))


# --- fixed-effects OLS ----------------------------------------------------------


def _panel(rng, n_groups=5, size=6, k=2):
    g = np.repeat(np.arange(n_groups), size)
    X = rng.normal(size=(len(g), k))
    y = X @ rng.normal(size=k) + rng.normal(size=n_groups)[g] * 3 + rng.normal(size=len(g))
    return X, y, g


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_fe_ols_equals_dummy_regression(seed):
    rng = np.random.default_rng(seed)
    X, y, g = _panel(rng)
    fit = fe_ols_fit(_dm(X, y, g.astype(str), names=("a", "b")))
    D = (g[:, None] == np.arange(5)).astype(float)
    full, *_ = np.linalg.lstsq(np.column_stack([X, D]), y, rcond=None)
    assert np.allclose(fit.params, full[:2], rtol=1e-8, atol=1e-10)


def test_fe_ols_identical_within_slopes():
    x = np.tile(np.arange(4.0), 2)
    g = np.repeat(["a", "b"], 4)
    fit = fe_ols_fit(_dm(x, 2 * x + np.where(g == "a", 10, -5) + np.tile([0.1, -0.1, -0.1, 0.1], 2), g))
    assert fit["x"] == pytest.approx(2, abs=1e-12)


def test_fe_ols_drops_group_constant_regressor():
    rng = np.random.default_rng(0)
    X, y, g = _panel(rng, k=1)
    const_in_group = rng.normal(size=5)[g]
    with pytest.warns(RankWarning):
        fit = fe_ols_fit(_dm(np.column_stack([X, const_in_group]), y, g, names=("a", "z")))
    assert fit.columns == ("a",) and fit.dropped_columns == ("z",)


def test_fe_ols_singletons():
    with pytest.raises(EstimationError):
        fe_ols_fit(_dm([1.0, 2, 3], np.array([1.0, 2, 4]), np.array(["a", "b", "c"])))


# --- logit ----------------------------------------------------------------------


TABLE3 = {CONST: -2.981, "observed": 2.712, "min_legs_weight": 1.100, "observed__x__min_legs_weight": -0.639}


def test_closure_probabilities_from_published_coefficients():
    p_obs = logit_predict(TABLE3, {"observed": 1, "min_legs_weight": 1, "observed__x__min_legs_weight": 1})
    p_rew = logit_predict(TABLE3, {"observed": 0, "min_legs_weight": 1, "observed__x__min_legs_weight": 0})
    assert p_obs == pytest.approx(0.549, abs=0.002)
    assert p_rew == pytest.approx(0.133, abs=0.002)


def test_logit_balanced_coin():
    fit = logit_fit(DesignMatrix(np.ones((10, 1)), (CONST,), np.tile([0.0, 1.0], 5)))
    assert fit[CONST] == pytest.approx(0, abs=1e-10)


def _logit_ll(b, X, y):
    eta = X @ b
    return float(np.sum(y * eta - np.logaddexp(0, eta)))


def test_logit_six_rows_against_grid_search():
    x = np.array([0.0, 1, 2, 3, 4, 5])
    y = np.array([0.0, 0, 1, 0, 1, 1])
    X = _dm(x, y)
    fit = logit_fit(X)
    best = zoom_grid_max(lambda b: _logit_ll(b, X.X, y), [0, 0], 4)
    assert np.allclose(fit.params, best, atol=1e-4)


def test_logit_against_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(4)
    x = rng.normal(size=300)
    y = (rng.random(300) < special.expit(0.3 + 1.2 * x)).astype(float)
    fit = logit_fit(_dm(x, y))
    ref = sm.Logit(y, sm.add_constant(x)).fit(disp=0)
    assert np.allclose(fit.params, ref.params, atol=1e-8)
    assert np.allclose(fit.bse, ref.bse, rtol=1e-6)
    assert fit.pseudo_r2 == pytest.approx(ref.prsquared, rel=1e-8)


def test_logit_separation():
    x = np.arange(6.0)
    with pytest.raises(SeparationError):
        logit_fit(_dm(x, (x > 2.5).astype(float)))


def _obs(closed, w2):
    return TriadObservation(("a", "b", "c"), (int(closed), w2, w2), (int(closed), w2, w2), "s", "observed")


def test_matched_sample_shape():
    observed = [_obs(k % 2, 1 + k) for k in range(10)]
    rewired = [_obs(k % 3 == 0, 1 + k % 5) for k in range(100)]
    X = matched_closure_sample(observed, rewired, seed=1)
    assert X.nobs == 20 and X.col("observed").sum() == 10
    assert np.array_equal(X.col("observed__x__min_legs_weight"), X.col("observed") * X.col("min_legs_weight"))
    again = matched_closure_sample(observed, rewired, seed=1)
    assert np.array_equal(X.X, again.X) and np.array_equal(X.y, again.y)
    with pytest.raises(ValueError):
        matched_closure_sample(rewired, observed)


# --- count models -----------------------------------------------------------------


def test_nb_intercept_only_constant_counts():
    fit = negbin_fit(DesignMatrix(np.ones((4, 1)), (CONST,), np.full(4, 2.0)))
    assert fit[CONST] == pytest.approx(math.log(2), abs=1e-6)
    assert fit.alpha < 1e-4


def test_nb_loglike_tends_to_poisson():
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    A = np.column_stack([np.ones(50), x])
    b = np.array([0.5, 0.3])
    y = rng.poisson(np.exp(A @ b)).astype(float)
    mu = np.exp(A @ b)
    pois = float(np.sum(y * np.log(mu) - mu - special.gammaln(y + 1)))
    assert nb2_loglike(A, y, b, 1e-8) == pytest.approx(pois, abs=1e-5)


def test_nb_on_poisson_data():
    rejected = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=1500)
        y = rng.poisson(np.exp(1 + 0.4 * x)).astype(float)
        fit = negbin_fit(_dm(x, y))
        assert fit.alpha < 0.05
        assert fit["x"] == pytest.approx(0.4, abs=0.06)
        rejected += fit.alpha_pvalue < 0.05
    assert rejected <= 4


def test_nb_against_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(5)
    x = rng.normal(size=800)
    mu = np.exp(0.7 + 0.5 * x)
    y = rng.negative_binomial(1 / 0.6, 1 / (1 + 0.6 * mu)).astype(float)
    fit = negbin_fit(_dm(x, y))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = sm.NegativeBinomial(y, sm.add_constant(x), loglike_method="nb2").fit(disp=0, maxiter=500)
    assert np.allclose(fit.params, ref.params[:2], atol=1e-5)
    assert fit.alpha == pytest.approx(ref.params[2], rel=1e-4)
    assert fit.llf == pytest.approx(ref.llf, abs=1e-6)


def test_poisson_against_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(6)
    x = rng.normal(size=200)
    y = rng.poisson(np.exp(0.2 + 0.3 * x)).astype(float)
    fit = poisson_fit(_dm(x, y))
    ref = sm.Poisson(y, sm.add_constant(x)).fit(disp=0)
    assert np.allclose(fit.params, ref.params, atol=1e-8)


def test_count_models_reject_negative_outcomes():
    with pytest.raises(ValueError):
        negbin_fit(_dm([1.0, 2, 3], np.array([1.0, -1, 2])))


def _hhg_reference(b, A, y, g):
    total = 0.0
    for level in np.unique(g):
        m = g == level
        lam = np.exp(A[m] @ b)
        total += special.gammaln(lam.sum()) + special.gammaln(y[m].sum() + 1) - special.gammaln(lam.sum() + y[m].sum())
        total += np.sum(special.gammaln(lam + y[m]) - special.gammaln(lam) - special.gammaln(y[m] + 1))
    return total


@given(st.floats(0.01, 1e12), st.integers(0, 60))
@settings(max_examples=200, deadline=None)
def test_log_rise_matches_finite_sums(x, n):
    terms = [x + j for j in range(n)]
    lg, dg, tg = (float(v[0]) for v in _log_rise(np.array([x]), np.array([n])))
    assert lg == pytest.approx(math.fsum(math.log(t) for t in terms), rel=1e-12, abs=1e-12)
    assert dg == pytest.approx(math.fsum(1 / t for t in terms), rel=1e-10, abs=1e-300)
    assert tg == pytest.approx(-math.fsum(1 / t**2 for t in terms), rel=1e-9, abs=1e-300)


def _hhg_by_sums(b, A, y, g):
    # rising factorials as explicit sums of logs, free of gamma-function cancellation
    total = 0.0
    for level in np.unique(g):
        m = g == level
        lam = np.exp(A[m] @ b)
        total += math.lgamma(y[m].sum() + 1) - math.fsum(math.log(lam.sum() + j) for j in range(int(y[m].sum())))
        for li, yi in zip(lam, y[m]):
            total += math.fsum(math.log(li + j) for j in range(int(yi))) - math.lgamma(yi + 1)
    return total


def test_fe_nb_large_intercept_region_is_not_spurious():
    rng = np.random.default_rng(8)
    g = np.repeat(["a", "b"], 40)
    x = rng.normal(size=80)
    y = rng.negative_binomial(2, 1 / (1 + np.exp(0.5 + 0.6 * x + np.where(g == "a", 0.8, -0.4)) / 2)).astype(float)
    X = _dm(x, y, g)
    fit = fe_negbin_fit(X)
    assert fit.llf == pytest.approx(_hhg_by_sums(fit.params, X.X, y, g), abs=1e-8)
    assert fit.llf > _hhg_by_sums(np.array([32.0, fit.params[1]]), X.X, y, g)


def test_fe_nb_two_groups_against_grid_search():
    rng = np.random.default_rng(8)
    g = np.repeat(["a", "b"], 30)
    x = rng.normal(size=60)
    y = rng.negative_binomial(2, 1 / (1 + np.exp(0.5 + 0.6 * x + np.where(g == "a", 0.8, -0.4)) / 2)).astype(float)
    X = _dm(x, y, g)
    fit = fe_negbin_fit(X)
    best = zoom_grid_max(lambda b: _hhg_reference(b, X.X, y, g), fit.params.round(1), 2)
    assert np.allclose(fit.params, best, atol=1e-3)


def test_fe_nb_drops_uninformative_groups():
    rng = np.random.default_rng(9)
    g = np.array(["a"] * 20 + ["b"] * 20 + ["solo"] + ["zero"] * 3)
    x = rng.normal(size=len(g))
    y = _nb_draw(rng, np.exp(1 + 0.5 * x))
    y[g == "zero"] = 0
    fit = fe_negbin_fit(_dm(x, y, g))
    assert fit.n_groups == 2 and fit.groups_dropped == 2 and fit.rows_dropped == 4
    assert set(fit.group_effects) == {"a", "b"}


def _nb_draw(rng, mu, alpha=0.5):
    return rng.negative_binomial(1 / alpha, 1 / (1 + alpha * mu)).astype(float)


def test_fe_nb_single_group_is_finite():
    rng = np.random.default_rng(10)
    x = rng.normal(size=40)
    y = _nb_draw(rng, np.exp(1 + 0.5 * x))
    fit = fe_negbin_fit(_dm(x, y, np.zeros(40)))
    assert np.isfinite(fit.params).all()


def test_fe_nb_level_shift_keeps_slope_sign():
    rng = np.random.default_rng(11)
    g = np.repeat(np.arange(8), 25)
    x = rng.normal(size=len(g))
    y = _nb_draw(rng, np.exp(0.8 + 0.7 * x + rng.normal(size=8)[g]))
    base = fe_negbin_fit(_dm(x, y, g))
    shifted = y.copy()
    shifted[g == 0] += 5
    moved = fe_negbin_fit(_dm(x, shifted, g))
    assert base["x"] > 0 and moved["x"] > 0
    assert moved.group_effects["0"] != pytest.approx(base.group_effects["0"])


# --- permutation ------------------------------------------------------------------


def test_permutation_strong_effect_floor():
    x = np.arange(60.0)
    res = permutation_pvalues(ols_fit, _dm(x, 5 * x + np.sin(x)), 999, seed=0)
    assert res.pvalue("x") == pytest.approx(1 / 1000)
    with pytest.raises(ValueError):
        permutation_pvalues(ols_fit, _dm(x, x), 0)


def test_permutation_noise_and_seed_stability():
    rng = np.random.default_rng(12)
    x = rng.normal(size=80)
    X = _dm(x, 0.25 * x + rng.normal(size=80))
    ps = np.array([permutation_pvalues(ols_fit, X, 199, seed=s).pvalue("x") for s in range(50)])
    mean = ps.mean()
    sd = math.sqrt(mean * (1 - mean) / 200)
    assert np.all(np.abs(ps - mean) <= 5 * sd)
    noise = _dm(rng.normal(size=80), rng.normal(size=80))
    assert permutation_pvalues(ols_fit, noise, 199, seed=1).pvalue("x") > 0.05


def test_permutation_subsample_and_strata():
    x = np.arange(100.0)
    strata = (x >= 80).astype(int)
    res = permutation_pvalues(ols_fit, _dm(x, x), 9, subsample=10, seed=0, strata=strata)
    assert res.nobs == 20


# --- rank and ECDF tests ------------------------------------------------------------


def test_wilcoxon_all_positive_five():
    r = wilcoxon_signed_rank([1, 2, 3, 4, 5])
    assert r.p_greater == pytest.approx(1 / 32) and r.p == pytest.approx(2 / 32)


def test_wilcoxon_antisymmetric():
    assert wilcoxon_signed_rank([-1, 1, -2, 2]).z == 0


def _enumerated_p(d):
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    from scipy.stats import rankdata

    ranks = rankdata(np.abs(d))
    obs = ranks[d > 0].sum()
    sums = [sum(r for r, s in zip(ranks, signs) if s) for signs in product([0, 1], repeat=len(d))]
    n = len(sums)
    return sum(s >= obs - 1e-9 for s in sums) / n, sum(s <= obs + 1e-9 for s in sums) / n


@given(st.lists(st.integers(-6, 6), min_size=1, max_size=10).filter(lambda v: any(v)))
@settings(max_examples=150, deadline=None)
def test_wilcoxon_exact_matches_sign_enumeration(d):
    r = wilcoxon_signed_rank(d)
    g, l = _enumerated_p(d)
    assert r.p_greater == pytest.approx(g, abs=1e-12) and r.p_less == pytest.approx(l, abs=1e-12)


def test_wilcoxon_all_zero():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([0, 0])


def test_wilcoxon_normal_branch_against_scipy():
    from scipy.stats import wilcoxon

    rng = np.random.default_rng(13)
    d = rng.normal(0.3, 1, size=60)
    r = wilcoxon_signed_rank(d)
    ref = wilcoxon(d, method="approx", correction=False)
    assert r.p == pytest.approx(ref.pvalue, rel=1e-6)


def _scan_d(a, b):
    pts = sorted(set(a) | set(b))
    return max(abs(sum(v <= t for v in a) / len(a) - sum(v <= t for v in b) / len(b)) for t in pts)


@given(
    st.lists(st.integers(0, 20), min_size=1, max_size=15),
    st.lists(st.integers(0, 20), min_size=1, max_size=15),
)
@settings(max_examples=100, deadline=None)
def test_ks_matches_ecdf_scan(a, b):
    assert ks_two_sample(a, b).d == pytest.approx(_scan_d(a, b), abs=1e-12)


def test_ks_examples():
    assert ks_two_sample([1, 2, 3], [1, 2, 3]).d == 0
    assert ks_two_sample([1, 2], [3, 4]).d == 1
    with pytest.raises(ValueError):
        ks_two_sample([], [1])


# --- smoothing --------------------------------------------------------------------


def test_kde_two_points():
    k = kde_epanechnikov([-1, 1], 1.0)
    assert k(0)[0] == 0
    assert k([-1, 1]).tolist() == [0.375, 0.375]


def test_kde_single_cluster_support():
    k = kde_epanechnikov([0, 0], 1.0)
    xs = np.linspace(-2, 2, 41)
    assert np.allclose(k(xs), k(-xs))
    assert np.all(k(xs[np.abs(xs) > 1]) == 0)


@given(st.lists(st.integers(-5000, 5000).map(lambda k: k / 100), min_size=2, max_size=40).filter(lambda v: np.std(v) > 0))
@settings(max_examples=60, deadline=None)
def test_kde_integrates_to_one(values):
    k = kde_epanechnikov(values)
    lo, hi = k.support
    knots = np.unique(np.concatenate([np.array(values) - k.bandwidth, np.array(values) + k.bandwidth]))
    total = sum(integrate.quad(lambda t: k(t)[0], a, b)[0] for a, b in zip(knots[:-1], knots[1:]))
    assert total == pytest.approx(1, abs=1e-3)
    assert np.all(k(np.linspace(lo - 5, hi + 5, 200)) >= 0)
    assert k(lo - 1e-9)[0] == 0 and k(hi + 1e-9)[0] == 0


def test_bandwidth_rule():
    v = np.arange(10.0)
    expected = 2.34 * min(np.std(v, ddof=1), (np.percentile(v, 75) - np.percentile(v, 25)) / 1.349) * 10**-0.2
    assert normal_scale_bandwidth(v) == pytest.approx(expected)
    with pytest.raises(ValueError):
        kde_epanechnikov([1, 1])


def test_lowess_reproduces_lines():
    rng = np.random.default_rng(14)
    x = rng.uniform(0, 10, 80)
    y = 2 - 0.5 * x
    assert np.max(np.abs(lowess(x, y, 0.3) - y)) < 1e-10


def test_lowess_interior_point_by_hand():
    x = np.arange(10.0)
    y = np.array([1.0, 3, 2, 5, 4, 6, 9, 7, 8, 10])
    fitted = lowess(x, y, f=0.5)
    i, r = 4, 5
    dist = np.abs(x - x[i])
    h = np.sort(dist)[r - 1]
    w = np.clip(1 - (dist / h) ** 3, 0, None) ** 3
    A = np.column_stack([np.ones(10), x])
    b = np.linalg.solve(A.T @ (w[:, None] * A), A.T @ (w * y))
    assert fitted[i] == pytest.approx(b[0] + b[1] * x[i], abs=1e-12)


def test_lowess_symmetric_data():
    x = np.linspace(-3, 3, 21)
    y = x**2
    f = lowess(x, y, 1.0)
    assert np.allclose(f, f[::-1], atol=1e-12)


# --- correlation, VIF, power sequence ----------------------------------------------


def test_pearson_examples():
    x = np.array([1.0, 2, 4])
    y = np.array([2.0, 1, 5])
    r = pearson_matrix({"x": x, "neg": -x, "y": y, "flat": np.ones(3)})
    assert r.loc["x", "x"] == 1 and r.loc["x", "neg"] == pytest.approx(-1)
    dx, dy = x - x.mean(), y - y.mean()
    assert r.loc["x", "y"] == pytest.approx((dx @ dy) / math.sqrt((dx @ dx) * (dy @ dy)))
    assert np.isnan(r.loc["flat", "x"])


def test_vif_orthogonal_and_duplicate():
    a = np.array([1.0, -1, 1, -1])
    b = np.array([1.0, 1, -1, -1])
    v = vif(_dm(np.column_stack([a, b]), np.zeros(4), names=("a", "b")))
    assert v == pytest.approx({"a": 1, "b": 1})
    dup = vif(_dm(np.column_stack([a, a, b]), np.zeros(4), names=("a", "a2", "b")))
    assert math.isinf(dup["a"]) and math.isinf(dup["a2"])


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_vif_matches_auxiliary_regressions(seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(30, 3))
    Z[:, 2] += 0.8 * Z[:, 0]
    names = ("a", "b", "c")
    v = vif(_dm(Z, np.zeros(30), names=names))
    for j, name in enumerate(names):
        aux = ols_fit(_dm(np.delete(Z, j, axis=1), Z[:, j], names=tuple(n for n in names if n != name)))
        assert v[name] == pytest.approx(1 / (1 - aux.r2), rel=1e-10)


def test_power_sequence():
    x = np.linspace(-2, 2, 50)
    quad = power_sequence_r2(x, 1 + x - 2 * x**2, 5)
    assert quad[1] > 0.1 and np.all(np.abs(quad[2:]) < 1e-10)
    lin = power_sequence_r2(x, 3 * x, 4)
    assert lin[0] == pytest.approx(1) and np.all(np.abs(lin[1:]) < 1e-10)
    rng = np.random.default_rng(1)
    cubic = power_sequence_r2(x, x**3 - x + rng.normal(0, 0.01, 50), 6)
    assert np.argmax(np.cumsum(cubic) >= np.cumsum(cubic)[-1] - 1e-4) == 2


# --- margins ----------------------------------------------------------------------


def test_ols_margins_follow_fitted_line():
    rng = np.random.default_rng(15)
    x = rng.uniform(0, 1, 50)
    fit = ols_fit(_dm(x, 1 + 2 * x + rng.normal(0, 0.1, 50)))
    grid = np.linspace(0, 1, 11)
    m = marginal_predictions(fit, "x", grid)
    assert np.allclose(m.prediction, fit[CONST] + fit["x"] * grid)
    assert np.all(m.ci_low <= m.prediction) and np.all(m.prediction <= m.ci_high)


def test_quadratic_margins_peak():
    rng = np.random.default_rng(16)
    x = rng.uniform(0, 1, 400)
    y = 1 + 3 * x - 3 * x**2 + rng.normal(0, 0.05, 400)
    fit = ols_fit(_dm(np.column_stack([x, x**2]), y, names=("x", "x_sq")))
    grid = np.linspace(0, 1, 101)
    m = marginal_predictions(fit, "x", grid)
    assert grid[np.argmax(m.prediction)] == pytest.approx(quadratic_peak(fit, "x"), abs=0.01)
    assert quadratic_peak(fit, "x") == pytest.approx(0.5, abs=0.05)


def test_nb_intercept_only_margins_flat():
    rng = np.random.default_rng(17)
    y = rng.poisson(3, 100).astype(float)
    fit = negbin_fit(DesignMatrix(np.column_stack([np.ones(100), rng.normal(size=100)]), (CONST, "x"), y))
    fit.params[1] = 0.0
    m = marginal_predictions(fit, "x", [0, 1, 2])
    assert np.allclose(m.prediction, math.exp(fit[CONST]))


def test_margins_unknown_regressor():
    fit = ols_fit(_dm(np.arange(5.0), np.arange(5.0)))
    with pytest.raises(KeyError):
        marginal_predictions(fit, "nope", [0])


def test_leader_interaction_recovers_subgroup_curvature():
    rng = np.random.default_rng(18)
    n = 3000
    x = rng.uniform(0, 1, n)
    flag = rng.random(n) < 0.3
    eta = 1 + 2 * x - 2 * x**2 + flag * (0.3 + 3 * x - 3 * x**2)
    y = rng.poisson(np.exp(eta)).astype(float)
    X = _dm(np.column_stack([x, x**2]), y, names=("x", "x_sq"))
    fit = leader_interaction_fit(X, flag, vary="x")
    assert fit["leader_flag__x__x"] > 0 and fit["leader_flag__x__x_sq"] < 0
    flagged = marginal_predictions(fit, "x", [0.5], fixed={"leader_flag": 1}).prediction[0]
    assert flagged == pytest.approx(math.exp(1.3 + 1.25), rel=0.1)
    noise = leader_interaction_fit(X, rng.random(n) < 0.5, vary="x")
    assert abs(noise["leader_flag__x__x"]) < 4 * noise.se("leader_flag__x__x")
    with pytest.raises(ValueError):
        leader_interaction_fit(X, np.zeros(n), vary="x")


# --- serialization ----------------------------------------------------------------


def test_fit_result_roundtrip(tmp_path):
    rng = np.random.default_rng(19)
    x = rng.normal(size=40)
    fit = negbin_fit(_dm(x, rng.poisson(np.exp(1 + 0.2 * x)).astype(float)))
    fit.save(tmp_path / "f.json")
    again = FitResult.load(tmp_path / "f.json")
    assert np.array_equal(again.params, fit.params) and again.alpha == fit.alpha
    assert "coef.x = " in fit.summary_text()
