import math

import numpy as np
import pytest
from scipy.linalg import cholesky
from scipy.stats import norm

from conftest import simulate
from ptfh.data import AreaData
from ptfh.diagnostics import (
    SplineConfig,
    curve_samples,
    fit_models,
    ks_normal_test,
    lambda_bootstrap_ci,
    marginal_aic,
    spline_basis,
    spline_gof_fit,
    spline_knots,
    standardized_residuals,
)
from ptfh.errors import DataError
from ptfh.estimation import FitResult, ModelParams, fit, gls_beta, loglik_normalized
from ptfh.rng import stream
from ptfh.transform import dpt_inv


def test_residuals_examples():
    data, D = simulate(30, 0.5, seed=1)
    res = fit(data)
    p = res.params
    noiseless = data.with_y(dpt_inv(data.X @ p.beta, p.lam))
    np.testing.assert_allclose(standardized_residuals(noiseless, res), 0.0, atol=1e-12)
    fake = FitResult(ModelParams([0.0], 3.0, 0.0), 0.0, [], np.array([1.0]), {}, model="logfh")
    one = AreaData(["a"], [math.exp(2.0)], [[1.0]], D=[1.0])
    assert standardized_residuals(one, fake)[0] == pytest.approx(1.0, rel=1e-15)


def test_residuals_under_correct_model():
    data, _ = simulate(300, 0.6, seed=2)
    e = standardized_residuals(data, fit(data))
    assert abs(e.mean()) < 3 / math.sqrt(300)
    assert 0.85 <= e.std(ddof=1) <= 1.15


def test_residuals_invariant_to_covariate_shift():
    data, _ = simulate(40, 0.4, seed=3)
    X2 = data.X.copy()
    X2[:, 1] += 7.0
    shifted = AreaData(data.area_id, data.y, X2, D=data.D)
    a = standardized_residuals(data, fit(data))
    b = standardized_residuals(shifted, fit(shifted))
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_ks_examples():
    n = 1000
    q = norm.ppf(np.arange(1, n + 1) / (n + 1))
    assert ks_normal_test(q).p_value > 0.99
    assert ks_normal_test(q + 3).p_value < 1e-6
    with pytest.raises(DataError):
        ks_normal_test(np.ones(10))
    with pytest.raises(DataError):
        ks_normal_test([0.1, 0.2])


def test_ks_statistic_matches_definition():
    e = stream(4, "ks").normal(size=47)
    s = np.sort(e)
    F = norm.cdf(s)
    i = np.arange(1, 48)
    d = max(np.max(i / 47 - F), np.max(F - (i - 1) / 47))
    res = ks_normal_test(e)
    assert res.statistic == pytest.approx(d, rel=1e-12)
    assert 0 <= res.statistic <= 1 and 0 <= res.p_value <= 1


def test_ks_pvalue_decreases_with_statistic():
    base = stream(5, "ks").normal(size=50)
    out = [ks_normal_test(base + s) for s in (0.0, 0.5, 1.0, 2.0)]
    stats_ = [o.statistic for o in out]
    pvals = [o.p_value for o in out]
    assert stats_ == sorted(stats_)
    assert pvals == sorted(pvals, reverse=True)


def test_aic_penalty_arithmetic():
    data, _ = simulate(30, 0.0, seed=6)
    pinned = fit(data, lambda_max=0.0)
    log = fit(data, model="logfh")
    # same density, one extra counted parameter
    assert marginal_aic(data, pinned) - marginal_aic(data, log) == 2.0


def test_aic_uses_normalized_density():
    data, _ = simulate(30, 0.5, seed=7)
    res = fit(data)
    expect = -2 * loglik_normalized(data, res.params, res.d_used) + 2 * 4
    assert marginal_aic(data, res) == pytest.approx(expect, rel=1e-14)


def test_normalized_density_agrees_at_lambda_zero():
    data, _ = simulate(30, 0.0, seed=8)
    p = ModelParams([1.0, 0.9], 1.2, 0.0)
    a = loglik_normalized(data, p, model="ptfh")
    b = loglik_normalized(data, p, model="logfh")
    assert a == pytest.approx(b, abs=1e-10)


def test_fit_models_returns_all_three():
    data, _ = simulate(30, 0.5, seed=9, replicates=8)
    fits = fit_models(data)
    assert set(fits) == {"ptfh", "logfh", "fh"}
    aics = {k: marginal_aic(data, f) for k, f in fits.items()}
    assert all(np.isfinite(v) for v in aics.values())


def test_lambda_ci_degenerate_hook():
    data, _ = simulate(30, 0.5, seed=10)
    res = fit(data)
    ci = lambda_bootstrap_ci(data, res, B=100, refit=lambda d: res.params.lam)
    assert ci.lo == ci.hi == res.params.lam
    assert ci.valid


def test_lambda_ci_small_run():
    data, _ = simulate(60, 0.5, seed=11)
    res = fit(data)
    ci = lambda_bootstrap_ci(data, res, B=40, seed=3)
    assert 0 <= ci.lo <= ci.hi <= res.lambda_max
    again = lambda_bootstrap_ci(data, res, B=40, seed=3)
    np.testing.assert_array_equal(ci.lambdas, again.lambdas)
    with pytest.raises(ValueError):
        lambda_bootstrap_ci(data, fit(data, model="logfh"), B=10)


@pytest.mark.slow
def test_lambda_ci_coverage():
    hits = 0
    for r in range(100):
        data, _ = simulate(300, 0.5, seed=12, r=r)
        ci = lambda_bootstrap_ci(data, fit(data), B=200, seed=r)
        hits += ci.lo <= 0.5 <= ci.hi
    assert 88 <= hits <= 99


def test_knots_rule():
    w = np.linspace(0.0, 1.0, 1001)
    k = spline_knots(w, 20)
    assert k[0] == pytest.approx(0.1, abs=1e-12)
    assert k[-1] == pytest.approx(0.9, abs=1e-12)
    np.testing.assert_allclose(np.diff(k), 0.8 / 19, rtol=1e-10)
    with pytest.raises(ValueError):
        SplineConfig(K=1)
    with pytest.raises(ValueError):
        SplineConfig(degree=4)


def test_spline_alpha_zero_is_polynomial_gls():
    rng = stream(13, "spl")
    w = rng.uniform(0, 2, 50)
    D = rng.uniform(0.2, 0.8, 50)
    z = 1 + w - 0.3 * w**2 + rng.normal(0, 1, 50)
    sp = spline_gof_fit(z, w, D, SplineConfig(degree=2), alpha=0.0)
    X, _ = spline_basis(w, sp.knots, 2)
    np.testing.assert_allclose(sp.beta, gls_beta(z, X, sp.A + D), rtol=1e-12)
    np.testing.assert_array_equal(sp.gamma, 0.0)
    np.testing.assert_allclose(sp.fitted, X @ sp.beta, rtol=1e-13)


def test_spline_recovers_curvature():
    rng = stream(14, "spl")
    w = rng.uniform(-2, 2, 200)
    D = np.full(200, 0.05)
    z = np.sin(2 * w) + rng.normal(0, 0.3, 200)
    sp = spline_gof_fit(z, w, D)
    assert sp.alpha > 0
    grid = np.linspace(-1.5, 1.5, 31)
    assert np.max(np.abs(sp.curve(grid) - np.sin(2 * grid))) < 0.35


def test_spline_no_spurious_wiggle():
    ok = 0
    for r in range(100):
        rng = stream(15, "line", r)
        w = rng.uniform(0, 1, 200)
        D = np.full(200, 0.3)
        z = 1 + 2 * w + rng.normal(0, 1, 200) * np.sqrt(0.5 + D)
        sp = spline_gof_fit(z, w, D)
        lin = spline_gof_fit(z, w, D, alpha=0.0)
        ok += np.max(np.abs(sp.fitted - lin.fitted)) < 0.1 * np.std(z - lin.fitted)
    assert ok >= 90


def test_spline_covariance_is_positive_definite():
    rng = stream(16, "pd")
    for _ in range(20):
        w = rng.uniform(0, 1, 30)
        _, Z = spline_basis(w, spline_knots(w, 20), int(rng.integers(1, 4)))
        A, alpha = rng.uniform(0, 2), rng.uniform(0, 2)
        V = alpha * Z @ Z.T + np.diag(A + rng.uniform(0.1, 1.0, 30))
        cholesky(V, lower=True)


def test_curve_samples_layout():
    rng = stream(17, "cs")
    w = rng.uniform(0, 3, 47)
    z = 0.5 + w + rng.normal(0, 0.7, 47)
    rows = curve_samples(z, w, np.full(47, 0.2), (0.5, 1.0), n=25)
    assert len(rows) == 25
    assert list(rows[0]) == ["w", "spline_p1", "spline_p2", "spline_p3", "ptfh"]
    assert rows[0]["w"] == pytest.approx(w.min())
