import math

import numpy as np
import pytest

from robcusum.estimate import (FitOptions, FitResult, dpd_gradient, dpd_objective, fit,
                               qmle_gradient, qmle_objective, residuals_squared)
from robcusum.model import ContaminationSpec, GarchParams, simulate

THETA = GarchParams(1.0, 0.3, 0.4)
LOG_2PI = math.log(2 * math.pi)


@pytest.fixture(scope="module")
def series():
    return simulate(THETA, 2000, seed=2024)


class TestObjectives:
    def test_qmle_hand_value(self):
        # (1/2)[(log 1 + 1) + (log 1 + 1)]
        assert qmle_objective([1, 1], GarchParams(1, 0, 0), init=1.0) == pytest.approx(1.0)

    def test_dpd_hand_value(self):
        expected = (2 * math.pi) ** -0.5 * (2 ** -0.5 - 2 * math.exp(-0.5))
        assert dpd_objective([1, 1], GarchParams(1, 0, 0), 1.0, init=1.0) == pytest.approx(expected)

    def test_dpd_rejects_nonpositive_gamma(self, series):
        with pytest.raises(ValueError):
            dpd_objective(series, THETA, 0.0)
        with pytest.raises(ValueError):
            dpd_gradient(series, THETA, -1.0)

    def test_small_gamma_limit(self, series):
        # gamma -> 0: dpd + 1/gamma tends to half the Gaussian negative log-likelihood
        target = 0.5 * (qmle_objective(series, THETA) + LOG_2PI)
        errs = [abs(dpd_objective(series, THETA, g) + 1 / g - target) for g in (1e-3, 1e-4)]
        assert errs[1] < errs[0]
        assert errs[1] < 1e-3

    def test_true_parameter_beats_perturbed(self):
        x = simulate(THETA, 5000, seed=77)
        worse = GarchParams(THETA.omega + 0.5, THETA.alpha, THETA.beta)
        assert qmle_objective(x, THETA) < qmle_objective(x, worse)


def _fd(f, p, h=1e-6):
    out = []
    for i in range(3):
        up = p.copy()
        dn = p.copy()
        up[i] += h
        dn[i] -= h
        out.append((f(GarchParams(*up)) - f(GarchParams(*dn))) / (2 * h))
    return np.array(out)


@pytest.mark.parametrize("gamma", [0.0, 0.1, 0.5])
def test_gradient_matches_finite_differences(series, gamma):
    rng = np.random.default_rng(5)
    x = series[:800]
    for _ in range(20):
        a = rng.uniform(0.05, 0.5)
        b = rng.uniform(0.05, 0.9 - a)
        p = np.array([rng.uniform(0.3, 3.0), a, b])
        if gamma == 0:
            f = lambda q: qmle_objective(x, q)
            g = qmle_gradient(x, GarchParams(*p))
        else:
            f = lambda q: dpd_objective(x, q, gamma)
            g = dpd_gradient(x, GarchParams(*p), gamma)
        fd = _fd(f, p)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


class TestResiduals:
    def test_hand_example(self):
        np.testing.assert_allclose(residuals_squared([1, 1], GarchParams(1, 0, 0)), [1, 1])

    def test_no_dynamics(self):
        x = np.array([2.0, 1.0, 3.0, 0.5])
        r = residuals_squared(x, GarchParams(2.0, 0, 0))
        np.testing.assert_allclose(r[1:], x[1:] ** 2 / 2.0)

    def test_degenerate_series(self):
        with pytest.raises(ValueError, match="zero"):
            residuals_squared(np.zeros(10), THETA)

    def test_mean_at_true_parameter(self):
        r = residuals_squared(simulate(THETA, 5000, seed=8), THETA)
        assert 0.95 <= r.mean() <= 1.05
        assert np.all(r >= 0)


class TestFit:
    def test_preconditions(self):
        with pytest.raises(ValueError):
            fit(np.ones(10))
        with pytest.raises(ValueError):
            fit(np.ones(50), gamma=-0.1)

    @pytest.mark.parametrize("gamma", [0.0, 0.1])
    def test_scale_equivariance(self, series, gamma):
        a = fit(series, gamma)
        b = fit(3.0 * series, gamma)
        assert b.params.omega == pytest.approx(9.0 * a.params.omega, rel=1e-6)
        assert b.params.alpha == pytest.approx(a.params.alpha, abs=1e-7)
        assert b.params.beta == pytest.approx(a.params.beta, abs=1e-7)

    @pytest.mark.parametrize("gamma", [0.0, 0.1])
    def test_history_decreases(self, series, gamma):
        res = fit(series, gamma)
        h = np.array(res.history)
        assert h.size > 1
        assert np.all(np.diff(h) <= 1e-12)

    def test_residual_mean_at_fit(self, series):
        res = fit(series)
        r = residuals_squared(series, res.params, init=res.init)
        assert 0.9 <= r.mean() <= 1.1

    def test_consistency(self):
        # At n = 2000 the sampling sd of omega-hat is about 0.16, so a +-0.1 box
        # needs a longer series to hold 90% of the time.
        hits = 0
        for i in range(100):
            res = fit(simulate(THETA, 20_000, seed=1000 + i))
            assert res.converged
            hits += np.all(np.abs(res.params.as_array() - THETA.as_array()) <= 0.1)
        assert hits >= 90

    def test_qmle_close_to_mdpde_on_clean_data(self):
        gaps = []
        for i in range(20):
            x = simulate(THETA, 2000, seed=300 + i)
            gaps.append(np.linalg.norm(fit(x).params.as_array() - fit(x, 0.1).params.as_array()))
        assert np.median(gaps) < 0.05

    def test_mdpde_is_more_robust(self):
        spec = ContaminationSpec("ao", 0.01, 10)
        wins = 0
        for i in range(200):
            x = simulate(THETA, 1000, contamination=spec, seed=500 + i)
            d_q = np.linalg.norm(fit(x).params.as_array() - THETA.as_array())
            d_r = np.linalg.norm(fit(x, 0.1).params.as_array() - THETA.as_array())
            wins += d_r < d_q
        assert wins >= 160

    def test_persistence_cap_respected(self):
        x = simulate(THETA, 2000, contamination=ContaminationSpec("io", 0.01, 10), seed=3)
        res = fit(x)
        assert res.converged
        assert res.params.alpha + res.params.beta <= 0.9999 + 1e-12

    def test_iteration_limit_reported(self, series):
        res = fit(series, opts=FitOptions(max_iter=1))
        assert res.iterations <= 1
        assert not res.converged

    def test_round_trip(self, series):
        res = fit(series, 0.1)
        back = FitResult.from_dict(res.to_dict())
        assert back == res
