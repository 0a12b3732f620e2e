import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robcusum.detect import (SegmentationConfig, TestKind, TestResult, TruncationSpec,
                             binary_segmentation, cusum_process, cusum_test, locate_change,
                             run_test, self_normalizer, sn_test, test_label, test_residuals,
                             truncate, truncate_derivative)
from robcusum.estimate import fit, residuals_squared
from robcusum.model import GarchParams, simulate

THETA = GarchParams(1.0, 0.3, 0.4)

specs = st.builds(lambda M, frac: TruncationSpec(M, frac * M),
                  st.floats(0.5, 50.0), st.just(0.0) | st.floats(0.01, 0.95))
points = st.floats(0.0, 100.0, allow_nan=False)


class TestTruncation:
    @pytest.mark.parametrize("x,M,delta,expected", [(4, 9, 0, 4), (25, 9, 0, 9), (9, 9, 1, 8.75)])
    def test_examples(self, x, M, delta, expected):
        assert truncate(x, TruncationSpec(M, delta)) == pytest.approx(expected)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            truncate(-1.0, TruncationSpec())

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            TruncationSpec(0.0)
        with pytest.raises(ValueError):
            TruncationSpec(4.0, 4.0)

    @settings(max_examples=300, deadline=None)
    @given(specs, points, points)
    def test_lipschitz_and_range(self, spec, x, y):
        fx, fy = truncate(x, spec), truncate(y, spec)
        assert abs(fx - fy) <= abs(x - y) + 1e-12
        assert 0.0 <= fx <= spec.M

    @settings(max_examples=200, deadline=None)
    @given(specs)
    def test_continuity_at_branch_points(self, spec):
        eps = 1e-13
        for b in (spec.M - spec.delta, spec.M + spec.delta):
            lo, hi = truncate(max(b - eps, 0.0), spec), truncate(b, spec)
            assert abs(lo - hi) <= 1e-12 * max(1.0, spec.M)
            if spec.delta > 0:
                dl = truncate_derivative(max(b - eps, 0.0), spec)
                dh = truncate_derivative(b, spec)
                assert abs(dl - dh) <= 1e-9

    def test_small_delta_limit(self):
        M, d = 9.0, 1e-6
        x = np.linspace(0, 20, 200_001)
        x = x[np.abs(x - M) >= d]
        gap = np.abs(truncate(x, TruncationSpec(M, d)) - truncate(x, TruncationSpec(M)))
        assert gap.max() <= 1e-6

    def test_array_and_scalar(self):
        out = truncate(np.array([1.0, 10.0]), TruncationSpec(9))
        np.testing.assert_array_equal(out, [1.0, 9.0])
        assert isinstance(truncate(3.0, TruncationSpec(9)), float)


class TestCusum:
    def test_constant(self):
        assert np.all(cusum_process(np.full(7, 2.5)) == 0)

    def test_hand_example(self):
        assert cusum_process([0, 0, 1, 1])[1] == pytest.approx(1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.floats(-1e3, 1e3))
    def test_translation_invariance(self, vals, c):
        a = cusum_process(vals)
        b = cusum_process(np.array(vals) + c)
        np.testing.assert_allclose(a, b, atol=1e-7 * (1 + np.abs(vals).max() + abs(c)) * len(vals))
        assert a[-1] == 0.0

    def test_max_zero_iff_constant(self):
        assert cusum_process([1, 1, 1]).max() == 0
        assert cusum_process([1, 1, 2]).max() > 0

    def test_statistic_definition(self):
        v = np.random.default_rng(1).standard_normal(300) ** 2
        res = cusum_test(v)
        d = np.abs(np.cumsum(v) - np.arange(1, 301) / 300 * v.sum())
        assert res.statistic == pytest.approx(d.max() / (math.sqrt(300) * v.std()), rel=1e-12)
        assert res.tau_hat_sq == pytest.approx(v.var())
        assert res.reject == (res.statistic > res.critical_value)
        assert res.k_hat == int(np.argmax(d)) + 1

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate residuals"):
            cusum_test(np.ones(20))

    def test_pipeline_decomposition(self):
        x = simulate(THETA, 800, seed=4)
        trunc = TruncationSpec(9)
        end_to_end = run_test(x, TestKind.CUSUM_ROBUST, 0.1, trunc)
        f = fit(x, 0.1)
        manual = cusum_test(truncate(residuals_squared(x, f.params), trunc))
        assert end_to_end.statistic == pytest.approx(manual.statistic, rel=1e-12)

    def test_iid_size_band(self):
        rng = np.random.default_rng(20)
        rej = sum(cusum_test(truncate(rng.standard_normal(500) ** 2, TruncationSpec(9))).reject
                  for _ in range(2000))
        se = math.sqrt(0.04 * 0.96 / 2000)
        assert 0.033 - 2 * se <= rej / 2000 <= 0.045 + 2 * se

    def test_mean_shift_consistency(self):
        rng = np.random.default_rng(21)
        shift = np.r_[np.zeros(250), np.ones(250)]
        rej = sum(cusum_test(rng.standard_normal(500) ** 2 + shift).reject for _ in range(300))
        assert rej / 300 >= 0.99


def brute_force_v(x):
    x = np.asarray(x, dtype=float)
    n = len(x)
    out = []
    for k in range(1, n):
        s = np.cumsum(x[:k])
        fwd = np.sum((s - np.arange(1, k + 1) / k * s[-1]) ** 2)
        tail = x[k:]
        m = n - k
        r = np.cumsum(tail[::-1])[::-1]  # sum_{j=t}^n for t = k+1..n
        bwd = np.sum((r - np.arange(m, 0, -1) / m * r[0]) ** 2)
        out.append(fwd + bwd)
    return np.array(out)


class TestSelfNormalizer:
    def test_constant(self):
        np.testing.assert_allclose(self_normalizer(np.full(10, 3.0)), 0, atol=1e-20)

    def test_hand_example(self):
        assert self_normalizer([1, 0, 0, 0])[1] == pytest.approx(0.25)

    @pytest.mark.parametrize("n", [2, 3, 5, 17, 50, 128, 200])
    def test_matches_brute_force(self, n):
        x = np.random.default_rng(n).standard_normal(n) * 3 + 1
        fast = self_normalizer(x)
        slow = brute_force_v(x)
        np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-10 * slow.max())

    def test_sn_affine_invariance(self):
        v = np.random.default_rng(3).standard_normal(400) ** 2
        base = sn_test(v).statistic
        for a, b in [(2.0, 0.0), (0.5, 7.0), (-3.0, 1.0), (1e3, -5.0)]:
            assert sn_test(a * v + b).statistic == pytest.approx(base, rel=1e-10)

    def test_sn_statistic_definition(self):
        v = np.random.default_rng(4).standard_normal(60) ** 2
        n = v.size
        d = np.abs(np.cumsum(v) - np.arange(1, n + 1) / n * v.sum())[:-1]
        vv = brute_force_v(v)
        assert sn_test(v).statistic == pytest.approx(np.max(n * d ** 2 / vv), rel=1e-10)

    def test_sn_degenerate(self):
        with pytest.raises(ValueError):
            sn_test(np.ones(20))
        with pytest.raises(ValueError):
            sn_test([1.0, 2.0, 3.0])

    def test_sn_iid_size(self):
        rng = np.random.default_rng(22)
        rej = sum(sn_test(rng.standard_normal(500) ** 2).reject for _ in range(2000))
        assert 0.04 <= rej / 2000 <= 0.07

    def test_sn_mean_shift(self):
        rng = np.random.default_rng(23)
        shift = np.r_[np.zeros(250), np.ones(250)]
        rej = sum(sn_test(rng.standard_normal(500) ** 2 + shift).reject for _ in range(300))
        assert rej / 300 >= 0.95


def test_drift_oracle():
    n, lam = 100_000, 0.4
    mu1, mu2 = 0.0, 1.0
    rng = np.random.default_rng(99)
    k0 = int(n * lam)
    v = rng.standard_normal(n) + np.r_[np.full(k0, mu1), np.full(n - k0, mu2)]
    d = cusum_process(v) / n
    C = abs(mu1 - mu2)
    for s in (0.1, 0.25, 0.4, 0.6, 0.9):
        k = int(n * s)
        target = s * (1 - lam) * C if s <= lam else lam * (1 - s) * C
        se = math.sqrt(s * (1 - s) / n)
        assert abs(d[k - 1] - target) <= 3 * se


class TestLocate:
    def test_midpoint(self):
        assert locate_change([0, 0, 0, 1, 1, 1]) == 3

    def test_tie_rule(self):
        assert locate_change(np.ones(8)) == 1

    def test_localization_on_garch(self):
        post = GarchParams(2.0, 0.3, 0.4)
        hits = total = 0
        for i in range(500):
            x = simulate(THETA, 2000, change=(1000, post), seed=700 + i)
            res = run_test(x, TestKind.CUSUM_ROBUST, 0.1, TruncationSpec(9))
            if res.reject:
                total += 1
                hits += abs(res.k_hat / 2000 - 0.5) <= 0.05
        assert total > 400
        assert hits / total >= 0.9


class TestRunTest:
    def test_config_consistency(self):
        x = simulate(THETA, 300, seed=1)
        with pytest.raises(ValueError):
            run_test(x, TestKind.CUSUM_NAIVE, trunc=TruncationSpec(9))
        with pytest.raises(ValueError):
            run_test(x, TestKind.SN_ROBUST)

    def test_labels(self):
        assert test_label(TestKind.CUSUM_NAIVE) == "T_n"
        assert test_label(TestKind.SN_ROBUST, 9.0, 0.1) == "SN_n^9(R)"
        assert test_label(TestKind.CUSUM_ROBUST, 16.0, 0.0) == "T_n^16(Q)"

    def test_degenerate_pipeline(self):
        with pytest.raises(ValueError):
            run_test(np.zeros(100), TestKind.CUSUM_NAIVE)

    def test_round_trip(self):
        x = simulate(THETA, 600, seed=2)
        res = run_test(x, TestKind.SN_ROBUST, 0.1, TruncationSpec(16))
        assert TestResult.from_dict(res.to_dict()) == res
        assert res.tau_hat_sq is None

    def test_residual_dispatch(self):
        r2 = np.random.default_rng(0).standard_normal(200) ** 2
        a = test_residuals(r2, TestKind.SN_ROBUST, TruncationSpec(9))
        assert a.statistic == pytest.approx(sn_test(np.minimum(r2, 9)).statistic)


class TestSegmentation:
    def test_min_segment_guard(self):
        with pytest.raises(ValueError):
            SegmentationConfig(min_segment=10)

    def test_short_series(self):
        x = simulate(THETA, 300, seed=3)
        res = binary_segmentation(x)
        assert res.change_points == [] and res.tests == []
        assert len(res.segments) == 1 and "no test attempted" in res.segments[0].warning

    def test_no_change(self):
        empty = sum(binary_segmentation(simulate(THETA, 1000, seed=40 + i)).change_points == []
                    for i in range(20))
        assert empty >= 16

    def test_single_change(self):
        post = GarchParams(3.0, 0.3, 0.4)
        good = 0
        for i in range(10):
            x = simulate(THETA, 2000, change=(1000, post), seed=60 + i)
            res = binary_segmentation(x)
            cps = res.change_points
            good += len(cps) == 1 and abs(cps[0] - 1000) <= 100
            assert all(s.fit is not None for s in res.segments)
            assert [s.start for s in res.segments] == [1] + [c + 1 for c in cps]
        assert good >= 6
