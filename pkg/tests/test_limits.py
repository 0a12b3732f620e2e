import numpy as np
import pytest

from robcusum.limits import (LimitKind, QuantileTable, TABLE_GRID_N, TABLE_REPS, TABLE_SEED,
                             critical_value, embedded_tables, kolmogorov_cdf, read_tables,
                             simulate_limit, simulate_limit_samples, write_tables)


class TestKolmogorov:
    def test_values(self):
        assert kolmogorov_cdf(1.358) == pytest.approx(0.95, abs=1e-3)
        assert kolmogorov_cdf(0.5) == pytest.approx(0.0361, abs=1e-4)
        assert kolmogorov_cdf(8.0) == pytest.approx(1.0, abs=1e-15)
        assert kolmogorov_cdf(0.0) == 0.0 and kolmogorov_cdf(-1.0) == 0.0

    def test_branches_agree(self):
        lo, hi = kolmogorov_cdf(1.0 - 1e-12), kolmogorov_cdf(1.0)
        assert lo == pytest.approx(hi, abs=1e-10)

    def test_monotone(self):
        xs = np.linspace(0.2, 3.0, 200)
        vals = [kolmogorov_cdf(x) for x in xs]
        assert np.all(np.diff(vals) > 0)


class TestCriticalValues:
    def test_bridge(self):
        assert critical_value("sup-bridge", 0.05) == pytest.approx(1.358, abs=0.01)
        assert critical_value(LimitKind.SUP_BRIDGE, 0.01) == pytest.approx(1.628, abs=0.015)

    def test_embedded_metadata(self):
        for kind, t in embedded_tables().items():
            assert (t.grid_n, t.reps, t.seed) == (TABLE_GRID_N, TABLE_REPS, TABLE_SEED)
            lv = sorted(t.quantiles)
            assert lv == [0.9, 0.95, 0.99]
            assert all(t.quantiles[a] < t.quantiles[b] for a, b in zip(lv[:-1], lv[1:]))

    def test_unknown_level(self):
        with pytest.raises(ValueError, match="no tabulated"):
            critical_value("sn", 0.025)
        mid = critical_value("sn", 0.025, interpolate=True)
        assert critical_value("sn", 0.05) < mid < critical_value("sn", 0.01)

    def test_level_one_and_invalid(self):
        assert critical_value("sn", 1.0) == 0.0
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                critical_value("sup_bridge", bad)

    def test_user_table(self):
        t = QuantileTable(LimitKind.SN_FUNCTIONAL, 1000, 10_000, 1, {0.975: 50.0})
        assert critical_value("sn", 0.025, table=t) == 50.0
        with pytest.raises(ValueError):
            critical_value("sup_bridge", 0.025, table=t)

    def test_parse(self):
        assert LimitKind.parse("sn-functional") is LimitKind.SN_FUNCTIONAL
        with pytest.raises(ValueError):
            LimitKind.parse("other")


class TestSimulation:
    def test_preconditions(self):
        with pytest.raises(ValueError):
            simulate_limit("sup_bridge", grid_n=500, reps=10_000)
        with pytest.raises(ValueError):
            simulate_limit("sup_bridge", grid_n=1000, reps=500)

    @pytest.mark.parametrize("kind", list(LimitKind))
    def test_parallelism_does_not_change_samples(self, kind):
        a = simulate_limit_samples(kind, 1000, 40, 5)
        b = simulate_limit_samples(kind, 1000, 40, 5, parallelism=3)
        assert np.array_equal(a, b)

    def test_table_determinism(self):
        a = simulate_limit("sup_bridge", 1000, 10_000, 3, levels=[0.5])
        b = simulate_limit("sup_bridge", 1000, 10_000, 3, levels=[0.5])
        assert a == b and 0.5 in a.quantiles

    def test_bridge_grid_refinement(self):
        a = simulate_limit("sup_bridge", 5000, 20_000, 11)
        b = simulate_limit("sup_bridge", 10_000, 20_000, 12)
        for lv in (0.9, 0.95, 0.99):
            assert abs(a.quantiles[lv] / b.quantiles[lv] - 1) <= 0.01

    def test_exact_extrema_remove_grid_bias(self):
        fine = simulate_limit_samples("sup_bridge", 1000, 4000, 2)
        coarse = simulate_limit_samples("sup_bridge", 1000, 4000, 2, exact_extrema=False)
        assert np.all(fine >= coarse)
        assert np.mean(fine) > np.mean(coarse)

    def test_sn_stability(self):
        a = simulate_limit("sn", 2000, 20_000, 21)
        b = simulate_limit("sn", 4000, 40_000, 22)
        for lv in (0.9, 0.95, 0.99):
            assert abs(a.quantiles[lv] / b.quantiles[lv] - 1) <= 0.02


class TestTableFiles:
    def test_round_trip(self, tmp_path):
        t = QuantileTable(LimitKind.SUP_BRIDGE, 1000, 10_000, 7, {0.9: 1.2, 0.95: 1.3})
        p = tmp_path / "t.csv"
        write_tables(p, [t])
        back = read_tables(p)[LimitKind.SUP_BRIDGE]
        assert back.quantiles == t.quantiles and back.grid_n == 1000

    def test_missing_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("kind,level,quantile\nsup_bridge,0.9,1.2\n")
        with pytest.raises(ValueError, match="missing columns"):
            read_tables(p)

    def test_non_monotone(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("kind,level,quantile,grid_n,reps,seed\n"
                     "sn_functional,0.9,30,1000,10000,1\nsn_functional,0.95,20,1000,10000,1\n")
        with pytest.raises(ValueError, match="monotone"):
            read_tables(p)
