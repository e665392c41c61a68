import math

import numpy as np
import pytest

from conftest import simulate
from ptfh.data import make_data
from ptfh.errors import EstimationError
from ptfh.estimation import ModelParams, fit, fit_logfh
from ptfh.mse_bootstrap import (
    MseSettings,
    bootstrap_mse,
    g1_mc,
    g1_mc_many,
    g1_normals,
)
from ptfh.prediction import predict_arrays
from ptfh.quadrature import gaussian_expectation_inv_many
from ptfh.rng import stream
from ptfh.transform import dpt_inv


def direct_g1(xb, A, D, lam, n, key):
    """E[(mu_tilde - mu)**2] by simulating (v, eps) and integrating mu_tilde."""
    rng = stream(99, "g1-oracle", key)
    v = rng.normal(0.0, math.sqrt(A), n)
    e = rng.normal(0.0, math.sqrt(D), n)
    gamma = A / (A + D)
    theta_t = gamma * (xb + v + e) + (1 - gamma) * xb
    mu_t = gaussian_expectation_inv_many(theta_t, A * D / (A + D), lam)
    sq = (mu_t - dpt_inv(xb + v, lam)) ** 2
    return sq.mean(), sq.std(ddof=1) / math.sqrt(n)


@pytest.fixture(scope="module")
def fitted():
    data, _ = simulate(30, 0.4, seed=17)
    return data, fit(data)


def test_g1_zero_variance():
    g, se = g1_mc(ModelParams([1.0], 0.0, 0.5), [], 0.5, S=1000, rng=stream(1, "x"))
    assert g == 0.0 and se == 0.0


def test_g1_large_d_lognormal_limit():
    xb, A = 0.4, 0.8
    g, se = g1_mc(ModelParams([xb], A, 0.0), [], 1e12, S=200000, rng=stream(3, "g1"))
    expect = math.exp(2 * xb) * (math.exp(2 * A) - math.exp(A))
    assert abs(g - expect) < 3 * se


@pytest.mark.parametrize("A,D", [(0.5, 0.2), (1.5, 1.0)])
def test_g1_lognormal_closed_form(A, D):
    xb = 0.3
    a = A / (A + D)
    expect = math.exp(2 * xb) * (math.exp(2 * A) - math.exp(A * (1 + a)))
    g, se = g1_mc(ModelParams([xb], A, 0.0), [], D, S=200000, rng=stream(4, "g1", int(10 * A)))
    assert abs(g - expect) < 3 * se


def test_g1_matches_direct_oracle():
    g, se = g1_mc(ModelParams([1.0], 1.0, 0.5), [], 0.5, S=200000, rng=stream(5, "g1"))
    ref, ref_se = direct_g1(1.0, 1.0, 0.5, 0.5, 200000, 0)
    assert abs(g - ref) < 3 * math.hypot(se, ref_se)


def test_g1_accepts_draw_array_and_intercept_free_x():
    normals = stream(8, "n").standard_normal((2000, 2))
    p = ModelParams([0.2, 0.5], 0.7, 0.3)
    a = g1_mc(p, [1.0], 0.4, rng=normals)
    b = g1_mc(p, [1.0, 1.0], 0.4, rng=normals)
    assert a == b


def test_g1_common_random_numbers_are_smooth():
    normals = g1_normals(7, 1, 10000)
    xb, D, lam, A = np.array([0.5]), np.array([0.6]), 0.5, 1.2
    base = g1_mc_many(xb, A, D, lam, normals)[0][0]
    slopes = [(g1_mc_many(xb, A + d, D, lam, normals)[0][0] - base) / d for d in (1e-3, 1e-4, 1e-5)]
    assert np.ptp(slopes) < 0.01 * abs(np.mean(slopes))


def test_settings_validation():
    with pytest.raises(ValueError):
        MseSettings(B=0)
    with pytest.raises(ValueError):
        MseSettings(S=999)
    with pytest.raises(ValueError):
        MseSettings(correction="ratio")
    with pytest.raises(ValueError):
        MseSettings(seed=-1)


def test_degenerate_refit_hook(fitted):
    data, res = fitted
    rep = bootstrap_mse(data, res, MseSettings(B=1, S=1000, seed=1), refit=lambda d: res.params)
    np.testing.assert_array_equal(rep.g1_corrected, rep.g1_plugin)
    np.testing.assert_array_equal(rep.g2_star, np.zeros(data.m))
    np.testing.assert_array_equal(rep.mse_total, rep.g1_plugin)


def test_report_invariants_and_determinism(fitted):
    data, res = fitted
    st = MseSettings(B=12, S=2000, seed=5)
    a = bootstrap_mse(data, res, st)
    b = bootstrap_mse(data, res, st)
    c = bootstrap_mse(data, res, st, threads=2)
    for field in ("g1_plugin", "g1_corrected", "g2_star", "mse_total"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
        np.testing.assert_array_equal(getattr(a, field), getattr(c, field))
    assert np.all(a.g2_star >= 0)
    unclamped = ~a.mse_clamped_flag
    np.testing.assert_array_equal(a.mse_total[unclamped], (a.g1_corrected + a.g2_star)[unclamped])
    np.testing.assert_allclose(a.g1_corrected, 2 * a.g1_plugin - a.g1_replicates.mean(axis=0))
    assert a.valid and a.n_failed == 0
    assert np.all(a.lambda_star >= 0)

    m = bootstrap_mse(data, res, MseSettings(B=12, S=2000, seed=5, correction="multiplicative"))
    assert np.all(m.g1_corrected >= 0)
    assert np.all(m.mse_total > 0)
    np.testing.assert_array_equal(m.g2_star, a.g2_star)


def test_negative_estimates_are_flagged_and_clamped(fitted):
    data, res = fitted
    p = res.params
    inflated = ModelParams(p.beta, 4 * p.A + 1, p.lam)
    raw = bootstrap_mse(data, res, MseSettings(B=2, S=1000), refit=lambda d: inflated)
    assert raw.mse_clamped_flag.any()
    np.testing.assert_array_equal(raw.mse_clamped_flag, raw.mse_raw < 0)
    np.testing.assert_array_equal(raw.mse_total, raw.mse_raw)
    clamped = bootstrap_mse(data, res, MseSettings(B=2, S=1000, clamp_negative=True),
                            refit=lambda d: inflated)
    expect = np.where(clamped.mse_clamped_flag, clamped.g2_star, clamped.mse_raw)
    np.testing.assert_array_equal(clamped.mse_total, expect)
    assert np.all(clamped.rmse >= 0)


def test_failed_refits_are_counted(fitted):
    data, res = fitted
    calls = []

    def flaky(d):
        calls.append(1)
        if len(calls) % 3 == 0:
            raise EstimationError("no convergence")
        return res.params

    rep = bootstrap_mse(data, res, MseSettings(B=9, S=1000), refit=flaky)
    assert rep.n_failed == 3
    assert not rep.valid
    assert rep.g1_replicates.shape[0] == 6

    def broken(d):
        raise EstimationError("no convergence")

    with pytest.raises(EstimationError):
        bootstrap_mse(data, res, MseSettings(B=3, S=1000), refit=broken)


def test_log_pathway_closed_form_equals_quadrature():
    data, _ = simulate(30, 0.0, seed=23)
    res = fit_logfh(data)
    rep = bootstrap_mse(data, res, MseSettings(B=5, S=1000, seed=2))
    mu_q = predict_arrays(data.y, data.X, res.params, res.d_used, "logfh", closed_form=False)[3]
    for p, g2 in zip(rep.params_star, rep.g2_replicates):
        star = predict_arrays(data.y, data.X, p, res.d_used, "logfh", closed_form=False)[3]
        np.testing.assert_allclose(g2, (star - mu_q) ** 2, rtol=1e-9, atol=1e-14)


def test_fh_bootstrap_runs_on_identity_scale():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 4, 30)
    y = 6 + x + rng.normal(0, 1.2, 30)
    data = make_data(y, x, D=np.full(30, 0.5))
    res = fit(data, model="fh")
    rep = bootstrap_mse(data, res, MseSettings(B=5, S=1000))
    assert rep.valid and np.all(rep.g2_star >= 0)
    # on the identity scale g1 = A D / (A + D)
    A = res.params.A
    g, se = g1_mc(res.params, data.X[0], 0.5, S=200000, rng=stream(6, "fh"), model="fh")
    assert abs(g - A * 0.5 / (A + 0.5)) < 3 * se
