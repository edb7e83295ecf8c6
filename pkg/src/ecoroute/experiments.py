"""Two-link paradox study, link-2 parameter heatmaps and city eco-fraction sweeps."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import cost
from .cost import SystemMetrics, system_metrics
from .equilibrium import (
    EMISSIONS_EPSILON,
    FUEL_EPSILON,
    EquilibriumResult,
    GapRecord,
    SolverConfig,
    relative_gap,
    solve,
    two_link_oracle,
)
from .network import (
    CLASSES,
    ECO_CLASSES,
    DemandTable,
    FlowState,
    Link,
    Network,
    VehicleClass,
    split_demand,
)

log = logging.getLogger(__name__)

WORKERS_ENV = "ECOROUTE_WORKERS"

LENGTH2_RANGE = (5.0, 15.0)
SPEED2_RANGE = (30.0, 60.0)
TWO_LINK_DEMAND = 4000.0
ZERO_BAND = 1e-4  # fraction of baseline TSE treated as "no change"

# the two-link table is compared at 0.5%, so solve well past the certificate.
TWO_LINK_CONFIG = SolverConfig(epsilon=1e-6, max_iterations=200_000)
HEATMAP_MSA_CONFIG = SolverConfig(epsilon=1e-5, max_iterations=200_000)


def default_epsilon(eco_class: VehicleClass) -> float:
    eco_class = VehicleClass.parse(eco_class)
    return FUEL_EPSILON if eco_class is VehicleClass.FUEL else EMISSIONS_EPSILON


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def _pmap(fn: Callable, items: Sequence, workers: int | None) -> list:
    """Ordered map, fanned out over processes when more than one worker is requested."""
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * n))))


@dataclass(frozen=True)
class TwoLinkScenario:
    """Two parallel links A->B; link 1 is fixed, link 2 varies in length and free-flow speed."""

    length2: float = 5.0
    speed2: float = 30.0
    demand: float = TWO_LINK_DEMAND

    def __post_init__(self) -> None:
        lo, hi = LENGTH2_RANGE
        if not lo - 1e-9 <= self.length2 <= hi + 1e-9:
            raise ValueError(f"link 2 length {self.length2} outside [{lo}, {hi}] mi")
        lo, hi = SPEED2_RANGE
        if not lo - 1e-9 <= self.speed2 <= hi + 1e-9:
            raise ValueError(f"link 2 free-flow speed {self.speed2} outside [{lo}, {hi}] mi/hr")

    @property
    def link1(self) -> Link:
        return Link.from_speed(1, 1, 2, capacity=1000.0, length=10.0, free_flow_speed=45.0,
                               alpha=0.15, beta=4.0)

    @property
    def link2(self) -> Link:
        return Link.from_speed(2, 1, 2, capacity=2000.0, length=self.length2,
                               free_flow_speed=self.speed2, alpha=0.15, beta=4.0)

    def network(self) -> Network:
        return Network(nodes=(1, 2), links=(self.link1, self.link2), zones=(1, 2), name="two-link")

    def demand_table(self, vclass: VehicleClass) -> DemandTable:
        return DemandTable.from_entries({(1, 2, VehicleClass.parse(vclass)): self.demand})


# --- two-link comparison table ----------------------------------------------

REGIME_TITLES = {
    VehicleClass.TIME: "100% time-routing",
    VehicleClass.EMISSIONS: "100% eco-routing, minimize CO2 emissions",
    VehicleClass.FUEL: "100% eco-routing, minimize fuel consumption",
}


@dataclass(frozen=True)
class LinkRow:
    label: str
    flow: float
    travel_time: float
    fuel: float
    emissions: float


@dataclass(frozen=True)
class TwoLinkTable:
    scenario: TwoLinkScenario
    results: dict[VehicleClass, EquilibriumResult]

    def link_rows(self, vclass: VehicleClass) -> list[LinkRow]:
        net = self.scenario.network()
        x = self.results[vclass].state.aggregate
        rows = []
        for i, lk in enumerate(net.links):
            c = cost.link_costs(lk, float(x[i]))
            rows.append(LinkRow(f"Link {lk.id}", float(x[i]), c.travel_time, c.fuel, c.emissions))
        return rows

    def total_row(self, vclass: VehicleClass) -> LinkRow:
        m = self.results[vclass].metrics
        return LinkRow("Total", float(self.results[vclass].state.aggregate.sum()), m.tstt, m.tsfc, m.tse)

    def pct_change(self, vclass: VehicleClass, metric: str) -> float:
        """Percent change of ``metric`` ('tse', 'tsfc', 'tstt') against time-routing."""
        base = getattr(self.results[VehicleClass.TIME].metrics, metric)
        return 100.0 * (getattr(self.results[vclass].metrics, metric) / base - 1.0)

    def format(self) -> str:
        head = f"{'':8s}{'Link flow (vph)':>17s}{'Travel time (min)':>19s}{'Fuel (kWh)':>14s}{'Emissions (g CO2)':>19s}"
        lines = [head]
        for vclass in CLASSES:
            lines.append(f"-- {REGIME_TITLES[vclass]} --")
            for r in self.link_rows(vclass):
                lines.append(f"{r.label:8s}{r.flow:17.1f}{r.travel_time:19.1f}{r.fuel:14.1f}{r.emissions:19.1f}")
            t = self.total_row(vclass)
            lines.append(f"{t.label:8s}{t.flow:17.0f}{t.travel_time:19.1f}{t.fuel:14.1f}{t.emissions:19.3e}")
        for vclass in ECO_CLASSES:
            lines.append(f"{vclass.label}-routing vs time-routing: "
                         f"TSE {self.pct_change(vclass, 'tse'):+.1f}%, "
                         f"TSFC {self.pct_change(vclass, 'tsfc'):+.1f}%")
        return "\n".join(lines)


def run_table2(config: SolverConfig | None = None, scenario: TwoLinkScenario | None = None) -> TwoLinkTable:
    scenario = scenario or TwoLinkScenario(5.0, 30.0)
    config = config or TWO_LINK_CONFIG
    net = scenario.network()
    results = {c: solve(net, scenario.demand_table(c), config) for c in CLASSES}
    return TwoLinkTable(scenario, results)


# --- sweep results -----------------------------------------------------------

CSV_COLUMNS = ("regime", "tse_g", "tsfc_kwh", "tstt_vehmin", "gap", "converged", "iterations",
               "base_tse_g", "base_tsfc_kwh", "base_tstt_vehmin", "delta_tse_g", "delta_tsfc_kwh")


@dataclass(frozen=True)
class SweepRow:
    keys: tuple[tuple[str, float], ...]
    regime: str
    metrics: SystemMetrics
    gap: float
    converged: bool
    iterations: int
    base: SystemMetrics
    extras: tuple[tuple[str, float], ...] = ()

    @property
    def delta_tse(self) -> float:
        return self.metrics.tse - self.base.tse

    @property
    def delta_tsfc(self) -> float:
        return self.metrics.tsfc - self.base.tsfc

    def key(self, name: str) -> float:
        return dict(self.keys)[name]

    def extra(self, name: str) -> float:
        return dict(self.extras)[name]


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    gap_traces: dict[tuple, tuple[GapRecord, ...]] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.rows)

    def sign_fractions(self, metric: str = "tse", zero_band: float = ZERO_BAND) -> dict[str, float]:
        """Share of rows where eco-routing lowered, raised or left ``metric`` unchanged.

        Changes within ``zero_band`` of the baseline value count as unchanged.
        """
        n = len(self.rows)
        neg = pos = zero = 0
        for r in self.rows:
            delta = r.delta_tse if metric == "tse" else r.delta_tsfc
            band = zero_band * abs(getattr(r.base, metric))
            if abs(delta) < band:
                zero += 1
            elif delta < 0:
                neg += 1
            else:
                pos += 1
        return {"negative": neg / n, "positive": pos / n, "zero": zero / n}

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        key_names = [k for k, _ in self.rows[0].keys] if self.rows else []
        extra_names = [k for k, _ in self.rows[0].extras] if self.rows else []
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*key_names, *CSV_COLUMNS, *extra_names])
            for r in self.rows:
                w.writerow([
                    *(_fmt(v) for _, v in r.keys), r.regime,
                    _fmt(r.metrics.tse), _fmt(r.metrics.tsfc), _fmt(r.metrics.tstt),
                    _fmt(r.gap), str(r.converged).lower(), r.iterations,
                    _fmt(r.base.tse), _fmt(r.base.tsfc), _fmt(r.base.tstt),
                    _fmt(r.delta_tse), _fmt(r.delta_tsfc),
                    *(_fmt(v) for _, v in r.extras),
                ])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "SweepResult":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            missing = [c for c in CSV_COLUMNS if c not in header]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
            start = header.index("regime")
            stop = start + len(CSV_COLUMNS)
            rows = []
            for rec in reader:
                if len(rec) != len(header):
                    raise ValueError(f"{path}: row has {len(rec)} fields, header has {len(header)}")
                v = dict(zip(header, rec))
                rows.append(SweepRow(
                    keys=tuple((k, float(v[k])) for k in header[:start]),
                    regime=v["regime"],
                    metrics=SystemMetrics(float(v["tse_g"]), float(v["tsfc_kwh"]), float(v["tstt_vehmin"])),
                    gap=float(v["gap"]),
                    converged=v["converged"] == "true",
                    iterations=int(v["iterations"]),
                    base=SystemMetrics(float(v["base_tse_g"]), float(v["base_tsfc_kwh"]),
                                       float(v["base_tstt_vehmin"])),
                    extras=tuple((k, float(v[k])) for k in header[stop:]),
                ))
        return cls(tuple(rows))


def _fmt(value: float) -> str:
    return f"{float(value):.9g}"


# --- heatmap -----------------------------------------------------------------

@dataclass(frozen=True)
class _PointTask:
    length2: float
    speed2: float
    eco_class: VehicleClass
    solver: str
    config: SolverConfig


def _solve_two_link(scen: TwoLinkScenario, vclass: VehicleClass, solver: str,
                    config: SolverConfig) -> tuple[np.ndarray, SystemMetrics, float, bool, int, float]:
    """(link flows, metrics, gap, converged, iterations, oracle disagreement in veh/hr)."""
    net = scen.network()
    dem = scen.demand_table(vclass)
    oracle = np.array(two_link_oracle(scen.link1, scen.link2, scen.demand, vclass))
    if solver == "oracle":
        state = FlowState.single_class(vclass, oracle)
        gap = relative_gap(net, state, dem)
        return oracle, system_metrics(net, state), gap, True, 0, 0.0
    res = solve(net, dem, config)
    flows = np.array(res.state.aggregate)
    return flows, res.metrics, res.gap, res.converged, res.iterations, float(np.abs(flows - oracle).max())


def _heatmap_point(task: _PointTask) -> SweepRow:
    scen = TwoLinkScenario(task.length2, task.speed2)
    bflows, base, bgap, bconv, biters, bdiff = _solve_two_link(scen, VehicleClass.TIME, task.solver, task.config)
    flows, m, gap, conv, iters, diff = _solve_two_link(scen, task.eco_class, task.solver, task.config)
    extras = (
        ("flow1", float(flows[0])), ("flow2", float(flows[1])),
        ("base_flow1", float(bflows[0])), ("base_flow2", float(bflows[1])),
        ("base_gap", bgap), ("oracle_diff_vph", max(diff, bdiff)),
    )
    return SweepRow(
        keys=(("length2_mi", task.length2), ("speed2_mph", task.speed2)),
        regime=task.eco_class.label,
        metrics=m,
        gap=gap,
        converged=conv and bconv,
        iterations=iters + biters,
        base=base,
        extras=extras,
    )


def heatmap_grid(grid_steps: int | tuple[int, int] = 41) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(grid_steps, int):
        grid_steps = (grid_steps, grid_steps)
    n_len, n_spd = grid_steps
    if n_len < 2 or n_spd < 2:
        raise ValueError("heatmap needs at least 2 grid steps per axis")
    return np.linspace(*LENGTH2_RANGE, n_len), np.linspace(*SPEED2_RANGE, n_spd)


def run_heatmap(
    eco_class: VehicleClass,
    grid_steps: int | tuple[int, int] = 41,
    solver: str = "oracle",
    config: SolverConfig | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Change in TSE/TSFC from 100% time-routing to 100% ``eco_class`` over the link-2 grid.

    ``solver="oracle"`` uses the bisection equilibrium; ``solver="msa"`` runs the
    full solver and records its largest flow disagreement with the oracle in
    the ``oracle_diff_vph`` extra column.
    """
    eco_class = VehicleClass.parse(eco_class)
    if eco_class not in ECO_CLASSES:
        raise ValueError("heatmap eco class must be emissions or fuel")
    if solver not in ("oracle", "msa"):
        raise ValueError(f"unknown solver {solver!r}")
    config = config or HEATMAP_MSA_CONFIG
    lengths, speeds = heatmap_grid(grid_steps)
    tasks = [_PointTask(float(l2), float(u2), eco_class, solver, config)
             for l2 in lengths for u2 in speeds]
    return SweepResult(tuple(_pmap(_heatmap_point, tasks, workers)))


# --- city fraction sweeps ----------------------------------------------------

def _warm_state(prev: FlowState, prev_demand: DemandTable, demand: DemandTable) -> FlowState:
    """Rescale the previous fraction's class flows to the new class totals.

    Valid because every class table is proportional to the same base table.
    """
    total = prev_demand.total()
    agg = np.asarray(prev.aggregate)
    x = np.zeros_like(prev.class_flows)
    for c in CLASSES:
        new = demand.total(c)
        if new == 0.0:
            continue
        old = prev_demand.total(c)
        x[c.index] = prev.flows(c) * (new / old) if old > 0 else agg * (new / total)
    return FlowState(x)


def _solve_fraction(args: tuple) -> tuple[float, EquilibriumResult]:
    net, base_demand, eco_class, p, config = args
    return p, solve(net, split_demand(base_demand, p, eco_class), config)


def run_fraction_sweep(
    net: Network,
    demand: DemandTable,
    eco_class: VehicleClass,
    fractions: Iterable[float],
    config: SolverConfig | None = None,
    warm_start: bool = True,
    workers: int | None = None,
    progress: Callable[[float, EquilibriumResult], None] | None = None,
) -> SweepResult:
    """Solve the mixed equilibrium at each eco-routing share ``p`` of ``demand``.

    Warm starting chains the fractions in ascending order and therefore runs
    sequentially; cold starts may run on several worker processes. Rows come
    back in the order of ``fractions`` either way.
    """
    eco_class = VehicleClass.parse(eco_class)
    fractions = [float(p) for p in fractions]
    if any(not 0.0 <= p <= 1.0 for p in fractions):
        raise ValueError("eco fractions must lie in [0, 1]")
    config = config or SolverConfig(epsilon=default_epsilon(eco_class))
    todo = sorted(set(fractions) | {0.0})

    solved: dict[float, EquilibriumResult] = {}
    if warm_start:
        prev: tuple[FlowState, DemandTable] | None = None
        for p in todo:
            dem = split_demand(demand, p, eco_class)
            init = None if prev is None or dem.total() == 0 else _warm_state(prev[0], prev[1], dem)
            res = solve(net, dem, config, initial_state=init)
            solved[p] = res
            prev = (res.state, dem)
            if progress:
                progress(p, res)
    else:
        for p, res in _pmap(_solve_fraction, [(net, demand, eco_class, p, config) for p in todo], workers):
            solved[p] = res
            if progress:
                progress(p, res)

    base = solved[0.0].metrics
    rows, traces = [], {}
    for p in fractions:
        res = solved[p]
        rows.append(SweepRow(
            keys=(("fraction", p),),
            regime=eco_class.label,
            metrics=res.metrics,
            gap=res.gap,
            converged=res.converged,
            iterations=res.iterations,
            base=base,
            extras=(("aec", res.gap_trace[-1].aec),),
        ))
        traces[(p,)] = res.gap_trace
    return SweepResult(tuple(rows), traces)


def _agreement_point(args: tuple) -> list[float]:
    length2, speed2, config = args
    scen = TwoLinkScenario(length2, speed2)
    return [_solve_two_link(scen, c, "msa", config)[5] for c in CLASSES]


def oracle_agreement(
    grid_steps: int | tuple[int, int] = 41,
    config: SolverConfig | None = None,
    workers: int | None = None,
) -> dict[VehicleClass, np.ndarray]:
    """Largest |MSA flow - oracle flow| (veh/hr) per grid point, for each class.

    Arrays are shaped (n_lengths, n_speeds).
    """
    config = config or HEATMAP_MSA_CONFIG
    lengths, speeds = heatmap_grid(grid_steps)
    tasks = [(float(l2), float(u2), config) for l2 in lengths for u2 in speeds]
    diffs = np.array(_pmap(_agreement_point, tasks, workers)).reshape(len(lengths), len(speeds), len(CLASSES))
    return {c: diffs[:, :, c.index] for c in CLASSES}
