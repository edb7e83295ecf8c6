"""Multiclass user equilibrium by the method of successive averages.

Every class routes against the same aggregate link flow but minimizes its own
cost (time, CO2 or fuel). Each iteration builds one shortest-path forest per
class and origin, loads demand all-or-nothing, and averages with step ``1/k``.
The relative gap is evaluated on the same forests before the update, so the
last recorded gap always belongs to the returned flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import cost as costs_mod
from .cost import CostModel, SystemMetrics, class_cost_matrix, system_metrics
from .network import (
    CLASSES,
    DemandTable,
    FlowState,
    Link,
    Network,
    NetworkError,
    UnreachableDemandError,
    VehicleClass,
    validate_network,
)
from .paths import ShortestPathTree, load_class, tree_from_costs

FUEL_EPSILON = 1e-6
EMISSIONS_EPSILON = 1e-4


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-4
    max_iterations: int = 20000
    step_rule: str = "msa"
    connector_time: float | None = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.max_iterations) < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.step_rule != "msa":
            raise ValueError(f"unsupported step rule {self.step_rule!r}; only 'msa' is implemented")


class GapRecord(NamedTuple):
    iteration: int
    gap: float
    aec: float


@dataclass(frozen=True)
class EquilibriumResult:
    state: FlowState
    gap_trace: tuple[GapRecord, ...]
    converged: bool
    metrics: SystemMetrics
    iterations: int
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def gap(self) -> float:
        return self.gap_trace[-1].gap


class _ClassDemand(NamedTuple):
    vclass: VehicleClass
    origins: np.ndarray
    dem_ptr: np.ndarray
    dem_dest: np.ndarray
    dem_rate: np.ndarray
    total: float


def _index_demand(net: Network, demand: DemandTable) -> list[_ClassDemand]:
    idx = net.node_index
    zones = set(net.zones)
    out = []
    for vclass in demand.classes():
        by_origin: dict[int, list[tuple[int, float]]] = {}
        for (o, d), rate in demand.for_class(vclass).items():
            for node in (o, d):
                if node not in idx:
                    raise NetworkError([f"demand node {node} is not in the network"])
                if zones and node not in zones:
                    raise NetworkError([f"demand node {node} is not a zone"])
            by_origin.setdefault(o, []).append((idx[d], rate))
        origins = sorted(by_origin)
        ptr = np.zeros(len(origins) + 1, dtype=np.int64)
        dests, rates = [], []
        for i, o in enumerate(origins):
            pairs = by_origin[o]
            dests.extend(p[0] for p in pairs)
            rates.extend(p[1] for p in pairs)
            ptr[i + 1] = len(dests)
        out.append(_ClassDemand(
            vclass,
            np.array([idx[o] for o in origins], dtype=np.int64),
            ptr,
            np.array(dests, dtype=np.int64),
            np.array(rates, dtype=float),
            demand.total(vclass),
        ))
    return out


def _load(net: Network, cost_matrix: np.ndarray, classes: list[_ClassDemand]) -> tuple[np.ndarray, float]:
    """All-or-nothing flows of every class plus the total shortest-path cost."""
    conn = net.connectivity
    y = np.zeros((len(CLASSES), net.n_links))
    sptc = []
    for cd in classes:
        flows, spc, bad_o, bad_d = load_class(
            conn.first_out, conn.out_links, conn.tail, conn.head,
            np.ascontiguousarray(cost_matrix[cd.vclass.index]), conn.link_rank, conn.through_ok,
            cd.origins, cd.dem_ptr, cd.dem_dest, cd.dem_rate,
        )
        if bad_o >= 0:
            raise UnreachableDemandError(net.nodes[cd.origins[bad_o]], net.nodes[bad_d], cd.vclass)
        y[cd.vclass.index] = flows
        sptc.append(spc)
    return y, math.fsum(sptc)


def _gap_terms(cost_matrix: np.ndarray, class_flows: np.ndarray, sptc: float, total_demand: float) -> tuple[float, float]:
    experienced = math.fsum((cost_matrix * class_flows).ravel())
    if experienced == 0.0:
        return 0.0, 0.0
    excess = experienced - sptc
    return excess / experienced, excess / total_demand


def _check_network(net: Network) -> None:
    problems = validate_network(net, allow_connectors=True)
    if problems:
        raise NetworkError(problems)


def shortest_paths(net: Network, state: FlowState, origin: int, vclass: VehicleClass,
                   connector_time: float | None = None) -> ShortestPathTree:
    """Shortest-path tree for one class at the costs implied by ``state``."""
    vclass = VehicleClass.parse(vclass)
    _check_network(net)
    link_cost = costs_mod.class_cost(net.arrays, state.aggregate, vclass, connector_time)
    return tree_from_costs(net, np.asarray(link_cost, dtype=float), origin, vclass)


def all_or_nothing(net: Network, state: FlowState, demand: DemandTable,
                   connector_time: float | None = None) -> FlowState:
    """Load all demand onto current shortest paths, class by class."""
    _check_network(net)
    cm = class_cost_matrix(net.arrays, state.aggregate, connector_time)
    y, _ = _load(net, cm, _index_demand(net, demand))
    return FlowState(y)


def relative_gap(net: Network, state: FlowState, demand: DemandTable,
                 connector_time: float | None = None) -> float:
    """Relative gap of ``state`` against fresh shortest paths (0 for an empty system)."""
    return gap_and_aec(net, state, demand, connector_time)[0]


def gap_and_aec(net: Network, state: FlowState, demand: DemandTable,
                connector_time: float | None = None) -> tuple[float, float]:
    _check_network(net)
    cm = class_cost_matrix(net.arrays, state.aggregate, connector_time)
    classes = _index_demand(net, demand)
    _, sptc = _load(net, cm, classes)
    return _gap_terms(cm, state.class_flows, sptc, demand.total())


def solve(
    net: Network,
    demand: DemandTable,
    config: SolverConfig | None = None,
    initial_state: FlowState | None = None,
    observer: Callable[[int, FlowState], None] | None = None,
) -> EquilibriumResult:
    """Run MSA until the relative gap drops to ``config.epsilon``.

    ``initial_state`` must be feasible for ``demand``; it is then treated as the
    first iterate. ``observer`` is called with every new iterate.
    Non-convergence is reported through ``converged=False``, never raised.
    """
    config = config or SolverConfig()
    _check_network(net)
    classes = _index_demand(net, demand)
    total = demand.total()
    ct = config.connector_time
    model = CostModel(net.arrays, ct)

    if initial_state is None:
        x = np.zeros((len(CLASSES), net.n_links))
        k = 1
    else:
        x = np.array(initial_state.class_flows, dtype=float)
        if x.shape != (len(CLASSES), net.n_links):
            raise ValueError("initial state does not match the network")
        k = 2
    trace: list[GapRecord] = []
    converged = False
    updates = 0
    while True:
        cm = model.matrix(x[0] + x[1] + x[2])
        y, sptc = _load(net, cm, classes)
        if k > 1:
            g, aec = _gap_terms(cm, x, sptc, total)
            trace.append(GapRecord(k - 1, g, aec))
            if g <= config.epsilon:
                converged = True
                break
            if updates >= config.max_iterations:
                break
        x += (y - x) / k
        updates += 1
        if observer is not None:
            observer(k, FlowState(x))
        k += 1

    state = FlowState(x)
    return EquilibriumResult(
        state=state,
        gap_trace=tuple(trace),
        converged=converged,
        metrics=system_metrics(net, state, ct),
        iterations=updates,
        config=config,
    )


def two_link_oracle(link1: Link, link2: Link, demand: float, vclass: VehicleClass,
                    tol: float = 1e-10) -> tuple[float, float]:
    """Single-class equilibrium split over two parallel links, by bisection.

    Relies on both class costs being strictly increasing in flow.
    """
    vclass = VehicleClass.parse(vclass)
    demand = float(demand)
    if demand < 0:
        raise ValueError("demand must be non-negative")

    def excess(x1: float) -> float:
        return (costs_mod.class_cost(link1, x1, vclass)
                - costs_mod.class_cost(link2, demand - x1, vclass))

    if demand == 0.0:
        return 0.0, 0.0
    if excess(0.0) >= 0.0:
        return 0.0, demand
    if excess(demand) <= 0.0:
        return demand, 0.0
    lo, hi = 0.0, demand
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = excess(mid)
        if abs(g) <= tol or mid in (lo, hi):
            break
        if g < 0.0:
            lo = mid
        else:
            hi = mid
    return mid, demand - mid
