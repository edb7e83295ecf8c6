import numpy as np
import pytest

from conftest import grid_tntp
from ecoroute.cost import emissions
from ecoroute.equilibrium import SolverConfig, relative_gap, two_link_oracle
from ecoroute.experiments import (
    CSV_COLUMNS,
    SweepResult,
    TwoLinkScenario,
    heatmap_grid,
    run_fraction_sweep,
    run_heatmap,
    run_table2,
)
from ecoroute.network import VehicleClass, split_demand
from ecoroute.tntp import parse_network, parse_trips

T, E, F = VehicleClass.TIME, VehicleClass.EMISSIONS, VehicleClass.FUEL


@pytest.fixture(scope="module")
def table2():
    return run_table2()


class TestTwoLinkTable:
    def test_time_routing_totals(self, table2):
        tot = table2.total_row(T)
        assert tot.flow == pytest.approx(4000.0)
        assert tot.travel_time == pytest.approx(65853.5, rel=0.005)
        assert tot.fuel == pytest.approx(51419.9, rel=0.005)
        assert tot.emissions == pytest.approx(1.37e7, rel=0.005)

    def test_fuel_change(self, table2):
        assert table2.pct_change(F, "tsfc") == pytest.approx(7.4, abs=0.2)
        assert table2.pct_change(E, "tsfc") == pytest.approx(13.5, abs=0.2)

    def test_emissions_routing_tse_delta(self, table2):
        delta = table2.results[E].metrics.tse - table2.results[T].metrics.tse
        # difference of exact equilibrium totals; the rounded table totals give 1.4e6
        assert delta == pytest.approx(1.42899852e6, rel=1e-4)

    def test_format_layout(self, table2):
        text = table2.format()
        assert text.count("Link 1") == 3 and text.count("Link 2") == 3 and text.count("Total") == 3
        assert "1118.5" in text and "3774.9" in text

    def test_equal_emissions_at_full_eco_routing(self, table2, scenario):
        x = table2.results[E].state.aggregate
        assert emissions(scenario.link1, x[0]) == pytest.approx(emissions(scenario.link2, x[1]), abs=1.0)


class TestHeatmap:
    def test_grid_resolution(self):
        lengths, speeds = heatmap_grid(41)
        assert lengths[1] - lengths[0] == pytest.approx(0.25)
        assert speeds[1] - speeds[0] == pytest.approx(0.75)
        with pytest.raises(ValueError):
            heatmap_grid(1)

    def test_small_grid_rows_and_deltas(self):
        res = run_heatmap(E, grid_steps=3)
        assert len(res) == 9
        assert [(r.key("length2_mi"), r.key("speed2_mph")) for r in res.rows][:3] == [
            (5.0, 30.0), (5.0, 45.0), (5.0, 60.0)]
        first = res.rows[0]
        assert first.delta_tse == pytest.approx(1.4e6, rel=0.03)
        for r in res.rows:
            assert r.delta_tse == r.metrics.tse - r.base.tse

    def test_symmetric_point_is_nearly_neutral(self):
        res = run_heatmap(E, grid_steps=(3, 3))
        mid = next(r for r in res.rows if r.key("length2_mi") == 10.0 and r.key("speed2_mph") == 45.0)
        # link 2 equals link 1 apart from capacity; independent check with the oracle
        scen = TwoLinkScenario(10.0, 45.0)
        xt = two_link_oracle(scen.link1, scen.link2, 4000.0, T)
        xe = two_link_oracle(scen.link1, scen.link2, 4000.0, E)
        assert xt[0] == pytest.approx(4000 / 3, rel=1e-6)
        assert abs(xe[0] - xt[0]) < 0.02 * 4000
        assert abs(mid.delta_tse) < 0.01 * mid.base.tse

    def test_msa_matches_oracle_deltas(self):
        oracle = run_heatmap(F, grid_steps=3)
        msa = run_heatmap(F, grid_steps=3, solver="msa")
        for a, b in zip(oracle.rows, msa.rows):
            assert b.converged
            assert abs(a.delta_tse - b.delta_tse) <= 0.005 * a.base.tse
            assert b.extra("oracle_diff_vph") <= 0.005 * 4000

    def test_sign_fractions_sum_to_one(self):
        fr = run_heatmap(E, grid_steps=5).sign_fractions("tse")
        assert sum(fr.values()) == pytest.approx(1.0)

    def test_rejects_time_class(self):
        with pytest.raises(ValueError):
            run_heatmap(T, grid_steps=2)


class TestCsv:
    def test_round_trip(self, tmp_path):
        res = run_heatmap(F, grid_steps=(2, 3))
        path = res.to_csv(tmp_path / "h.csv")
        header = path.read_text().splitlines()[0].split(",")
        assert header[:2] == ["length2_mi", "speed2_mph"]
        assert tuple(header[2:2 + len(CSV_COLUMNS)]) == CSV_COLUMNS
        back = SweepResult.from_csv(path)
        assert len(back) == 6
        for a, b in zip(res.rows, back.rows):
            assert b.keys == a.keys and b.regime == a.regime
            assert b.metrics.tse == pytest.approx(a.metrics.tse, rel=1e-8)
            assert b.delta_tse == pytest.approx(a.delta_tse, rel=1e-6, abs=1e-3)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("fraction,regime\n0,e\n")
        with pytest.raises(ValueError, match="missing columns"):
            SweepResult.from_csv(p)


@pytest.fixture(scope="module")
def grid_city():
    net_text, trips_text = grid_tntp()
    net = parse_network(net_text)
    return net, parse_trips(trips_text, len(net.zones))


class TestFractionSweep:
    def test_rows_follow_requested_order(self, grid_city):
        net, demand = grid_city
        res = run_fraction_sweep(net, demand, E, [1.0, 0.0, 0.5])
        assert [r.key("fraction") for r in res.rows] == [1.0, 0.0, 0.5]
        assert res.rows[1].delta_tse == 0.0

    def test_zero_fraction_same_for_both_classes(self, grid_city):
        net, demand = grid_city
        cfg = SolverConfig(epsilon=1e-5, max_iterations=50_000)
        e = run_fraction_sweep(net, demand, E, [0.0], cfg)
        f = run_fraction_sweep(net, demand, F, [0.0], cfg)
        assert e.rows[0].metrics == f.rows[0].metrics

    def test_converged_points_are_certified(self, grid_city):
        net, demand = grid_city
        cfg = SolverConfig(epsilon=1e-4, max_iterations=50_000)
        fractions = [0.0, 0.25, 0.5, 0.75, 1.0]
        res = run_fraction_sweep(net, demand, F, fractions, cfg)
        for r in res.rows:
            assert r.converged and r.gap <= cfg.epsilon
            assert res.gap_traces[(r.key("fraction"),)][-1].gap == r.gap

    def test_warm_and_cold_agree(self, grid_city):
        net, demand = grid_city
        cfg = SolverConfig(epsilon=1e-6, max_iterations=100_000)
        warm = run_fraction_sweep(net, demand, E, [0.0, 0.5, 1.0], cfg, warm_start=True)
        cold = run_fraction_sweep(net, demand, E, [0.0, 0.5, 1.0], cfg, warm_start=False)
        for a, b in zip(warm.rows, cold.rows):
            assert a.metrics.tse == pytest.approx(b.metrics.tse, rel=1e-3)

    def test_cold_sweep_is_reproducible(self, grid_city):
        net, demand = grid_city
        cfg = SolverConfig(epsilon=1e-4, max_iterations=20_000)
        a = run_fraction_sweep(net, demand, F, [0.0, 0.5], cfg, warm_start=False)
        b = run_fraction_sweep(net, demand, F, [0.0, 0.5], cfg, warm_start=False)
        assert a.rows == b.rows
        assert a.gap_traces == b.gap_traces

    def test_reported_gap_recomputes(self, grid_city):
        from ecoroute.equilibrium import solve

        net, demand = grid_city
        dem = split_demand(demand, 0.5, E)
        res = solve(net, dem, SolverConfig(epsilon=1e-4))
        assert relative_gap(net, res.state, dem) == res.gap

    def test_bad_fraction(self, grid_city):
        net, demand = grid_city
        with pytest.raises(ValueError):
            run_fraction_sweep(net, demand, E, [1.5])

    def test_parallel_matches_serial(self, grid_city):
        net, demand = grid_city
        cfg = SolverConfig(epsilon=1e-4)
        serial = run_fraction_sweep(net, demand, F, [0.0, 1.0], cfg, warm_start=False, workers=1)
        par = run_fraction_sweep(net, demand, F, [0.0, 1.0], cfg, warm_start=False, workers=2)
        assert serial.rows == par.rows


def test_scenario_range_enforced():
    with pytest.raises(ValueError):
        TwoLinkScenario(4.0, 45.0)
    with pytest.raises(ValueError):
        TwoLinkScenario(10.0, 61.0)
    assert np.isclose(TwoLinkScenario(10.0, 45.0).link2.free_flow_speed, 45.0)
