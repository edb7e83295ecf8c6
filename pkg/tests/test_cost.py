import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecoroute.cost import (
    CostModel,
    bpr_time,
    class_cost,
    class_cost_matrix,
    emissions,
    fuel,
    link_costs,
    speed,
    system_metrics,
)
from ecoroute.network import FlowState, Link, Network, VehicleClass

mpmath.mp.dps = 40

LINK1 = Link.from_speed(1, 1, 2, capacity=1000.0, length=10.0, free_flow_speed=45.0)

# realistic TNTP-like ranges
links = st.builds(
    Link.from_speed,
    id=st.just(1), tail=st.just(1), head=st.just(2),
    capacity=st.floats(50.0, 20000.0),
    length=st.floats(0.01, 30.0),
    free_flow_speed=st.floats(5.0, 80.0),
    alpha=st.floats(0.01, 1.0),
    beta=st.floats(1.0, 8.0),
)


def mp_fuel(length, u):
    return mpmath.mpf(length) * mpmath.mpf("14.58") * mpmath.power(mpmath.mpf(u), mpmath.mpf("-0.6253"))


def mp_co2(length, u):
    return mpmath.mpf(length) * 3158 * mpmath.power(mpmath.mpf(u), mpmath.mpf("-0.56"))


class TestHighPrecisionOracle:
    def test_fuel_at_free_flow(self):
        expect = mp_fuel(10, 45)
        assert float(expect) == pytest.approx(13.49, abs=0.005)
        assert fuel(LINK1, 0.0) == pytest.approx(float(expect), rel=1e-13)

    def test_emissions_at_free_flow(self):
        expect = mp_co2(10, 45)
        assert float(expect) == pytest.approx(3746, abs=0.5)
        assert emissions(LINK1, 0.0) == pytest.approx(float(expect), rel=1e-13)

    @settings(max_examples=200)
    @given(link=links, x=st.floats(0.0, 40000.0))
    def test_against_mpmath(self, link, x):
        fft = mpmath.mpf(link.free_flow_time)
        t = fft * (1 + mpmath.mpf(link.alpha) * mpmath.power(mpmath.mpf(x) / link.capacity, link.beta))
        u = link.length / (t / 60)
        assert bpr_time(link, x) == pytest.approx(float(t), rel=1e-12)
        assert fuel(link, x) == pytest.approx(float(mp_fuel(link.length, u)), rel=1e-11)
        assert emissions(link, x) == pytest.approx(float(mp_co2(link.length, u)), rel=1e-11)


class TestEquilibriumLinkValues:
    def test_time_at_equilibrium_flow(self):
        assert bpr_time(LINK1, 1118.5) == pytest.approx(16.5, abs=0.05)

    def test_speed_at_equilibrium_flow(self):
        assert speed(LINK1, 1118.5) == pytest.approx(10 / (16.5 / 60), rel=0.005)

    def test_fuel_and_emissions(self):
        assert fuel(LINK1, 1118.5) == pytest.approx(15.4, abs=0.05)
        assert emissions(LINK1, 1118.5) == pytest.approx(4215.9, rel=0.001)


class TestBpr:
    def test_free_flow_exact(self):
        assert bpr_time(LINK1, 0.0) == LINK1.free_flow_time

    def test_at_capacity(self):
        assert bpr_time(LINK1, 1000.0) == pytest.approx(1.15 * LINK1.free_flow_time, rel=1e-15)

    def test_negative_flow_rejected(self):
        with pytest.raises(ValueError):
            bpr_time(LINK1, -1.0)
        with pytest.raises(ValueError):
            fuel(LINK1, -1e-9)

    def test_fractional_beta(self):
        lk = Link.from_speed(1, 1, 2, 100.0, 1.0, 30.0, alpha=0.5, beta=2.5)
        assert bpr_time(lk, 400.0) == pytest.approx(2.0 * (1 + 0.5 * 4 ** 2.5))


class TestSpeed:
    def test_free_flow(self):
        assert speed(LINK1, 0.0) == pytest.approx(45.0, rel=1e-15)

    def test_homogeneity(self):
        twice = Link(1, 1, 2, 1000.0, 20.0, 2 * LINK1.free_flow_time)
        for x in (0.0, 500.0, 3000.0):
            assert speed(twice, x) == pytest.approx(speed(LINK1, x), rel=1e-15)

    @given(link=links, x=st.floats(0.0, 1e5))
    def test_speed_times_time_is_length(self, link, x):
        assert speed(link, x) * bpr_time(link, x) / 60.0 == pytest.approx(link.length, rel=1e-9)

    @given(link=links, x=st.floats(1e-3, 1e5))
    def test_below_free_flow_when_loaded(self, link, x):
        assert speed(link, x) < link.free_flow_speed * (1 + 1e-12)
        assert speed(link, 0.0) == pytest.approx(link.free_flow_speed, rel=1e-12)


class TestMonotone:
    @settings(max_examples=300)
    @given(link=links, x1=st.floats(0.0, 3e4), dx=st.floats(1.0, 3e4))
    def test_costs_increase_with_flow(self, link, x1, dx):
        x2 = x1 + dx
        pairs = [(f(link, x1), f(link, x2)) for f in (bpr_time, fuel, emissions)]
        for lo, hi in pairs:
            assert lo <= hi
        # strict whenever the congestion term moves by more than float resolution
        bump = link.alpha * ((x2 / link.capacity) ** link.beta - (x1 / link.capacity) ** link.beta)
        if bump > 1e-12:
            for lo, hi in pairs:
                assert lo < hi

    def test_zero_flow_fuel_is_minimum(self):
        assert fuel(LINK1, 0.0) < fuel(LINK1, 10.0)

    @given(link=links, x=st.floats(0.0, 1e5))
    def test_all_costs_positive(self, link, x):
        c = link_costs(link, x)
        assert c.travel_time > 0 and c.speed > 0 and c.fuel > 0 and c.emissions > 0


class TestDispatchAndVectorized:
    @pytest.mark.parametrize("vclass,fn", [
        (VehicleClass.TIME, bpr_time),
        (VehicleClass.EMISSIONS, emissions),
        (VehicleClass.FUEL, fuel),
    ])
    def test_class_cost(self, vclass, fn):
        assert class_cost(LINK1, 777.0, vclass) == fn(LINK1, 777.0)
        assert class_cost(LINK1, 777.0, vclass.value) == fn(LINK1, 777.0)

    def test_matrix_matches_scalar_path(self):
        rng = np.random.default_rng(11)
        lks = [Link.from_speed(i, 1, 2, float(rng.uniform(100, 3000)), float(rng.uniform(0.1, 8)),
                               float(rng.uniform(15, 70)), beta=float(rng.uniform(1, 6)))
               for i in range(40)]
        net = Network((1, 2), tuple(lks), (1, 2))
        flow = rng.uniform(0, 5000, 40)
        mat = class_cost_matrix(net.arrays, flow)
        for j, lk in enumerate(lks):
            for c in VehicleClass:
                assert mat[c.index, j] == pytest.approx(class_cost(lk, float(flow[j]), c), rel=1e-15)

    def test_cost_model_reuse_tracks_flow(self):
        # a reused evaluator must not serve stale values after the flow changes
        rng = np.random.default_rng(5)
        net = Network((1, 2), tuple(Link.from_speed(i, 1, 2, 900.0, 2.0 + i, 40.0) for i in range(6)), (1, 2))
        model = CostModel(net.arrays)
        for _ in range(30):
            flow = rng.uniform(0, 4000, 6)
            np.testing.assert_array_equal(model.matrix(flow), class_cost_matrix(net.arrays, flow))


class TestConnectors:
    conn = Link(9, 1, 2, 99999.0, 0.0, 0.25)

    def test_no_fuel_or_emissions(self):
        assert fuel(self.conn, 500.0) == 0.0
        assert emissions(self.conn, 500.0) == 0.0

    def test_fixed_time(self):
        assert bpr_time(self.conn, 1e6) == 0.25
        assert bpr_time(self.conn, 1e6, connector_time=0.0) == 0.0


class TestSystemMetrics:
    def test_zero_flow(self, two_link):
        m = system_metrics(two_link, FlowState.zeros(2))
        assert (m.tse, m.tsfc, m.tstt) == (0.0, 0.0, 0.0)

    def test_time_routing_totals(self, two_link):
        state = FlowState.single_class(VehicleClass.TIME, np.array([1118.481, 2881.519]))
        m = system_metrics(two_link, state)
        assert m.tstt == pytest.approx(65853.5, rel=0.001)
        assert m.tsfc == pytest.approx(51419.9, rel=0.001)
        assert m.tse == pytest.approx(1.37e7, rel=0.005)

    def test_emissions_routing_totals(self, two_link):
        state = FlowState.single_class(VehicleClass.EMISSIONS, np.array([548.874, 3451.126]))
        m = system_metrics(two_link, state)
        assert m.tse == pytest.approx(1.51e7, rel=0.005)
        assert m.tsfc == pytest.approx(58370.5, rel=0.001)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(100, 5000), st.floats(0.1, 10), st.floats(10, 70),
                              st.floats(0, 6000)), min_size=2, max_size=12),
           st.integers(1, 11))
    def test_additive_over_disjoint_links(self, params, cut):
        cut = min(cut, len(params) - 1)
        lks = [Link.from_speed(i, 1, 2, q, ell, u) for i, (q, ell, u, _) in enumerate(params)]
        x = np.array([s[3] for s in params])

        def metrics(sel):
            net = Network((1, 2), tuple(lks[i] for i in sel), (1, 2))
            return system_metrics(net, FlowState.single_class(VehicleClass.TIME, x[list(sel)]))

        whole = metrics(range(len(params)))
        a, b = metrics(range(cut)), metrics(range(cut, len(params)))
        for field in ("tse", "tsfc", "tstt"):
            assert math.isclose(getattr(whole, field), getattr(a, field) + getattr(b, field),
                                rel_tol=1e-12, abs_tol=1e-9)
