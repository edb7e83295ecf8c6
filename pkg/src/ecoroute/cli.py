"""``ecoroute`` command line: validate inputs, solve one equilibrium, run the studies.

Worker processes for sweeps are taken from the ``ECOROUTE_WORKERS`` environment
variable (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import cost
from .equilibrium import SolverConfig, solve
from .experiments import (
    SweepResult,
    TwoLinkScenario,
    default_epsilon,
    run_fraction_sweep,
    run_heatmap,
    run_table2,
)
from .network import (
    CLASSES,
    ECO_CLASSES,
    DemandError,
    NetworkError,
    VehicleClass,
    split_demand,
    validate_network,
)
from .tntp import (
    ParseError,
    ZoneCountMismatch,
    network_diagnostics,
    read_network,
    read_trips,
    read_units,
)

log = logging.getLogger("ecoroute")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INVALID = 4
EXIT_NOT_CONVERGED = 5
EXIT_SOLVER = 6


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    net: str | None = None
    trips: str | None = None
    units: str | None = None
    eco_classes: list[str] = field(default_factory=list)
    fractions: list[float] = field(default_factory=list)
    grid: list[int] = field(default_factory=list)
    epsilon: float | None = None
    max_iterations: int = 20000
    out: str = "."
    reproducible: bool = False
    strict: bool = False

    def __post_init__(self) -> None:
        for label, p in (("--net", self.net), ("--trips", self.trips), ("--units", self.units)):
            if p is not None and not Path(p).is_file():
                raise UsageError(f"{label}: no such file {p}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise UsageError("--epsilon must be > 0")
        if self.max_iterations < 1:
            raise UsageError("--max-iter must be >= 1")

    def config(self, eco_class: VehicleClass | None = None) -> SolverConfig:
        eps = self.epsilon
        if eps is None:
            eps = default_epsilon(eco_class) if eco_class is not None else 1e-4
        return SolverConfig(epsilon=eps, max_iterations=self.max_iterations)

    def write(self) -> Path:
        path = Path(self.out) / f"manifest_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")
        return path


def _g(x: float) -> str:
    return f"{float(x):.9g}"


def _parse_fractions(text: str) -> list[float]:
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        n = int(round((stop - start) / step))
        return [round(start + i * step, 12) for i in range(n + 1)]
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_grid(text: str) -> list[int]:
    parts = text.lower().replace("x", ",").split(",")
    vals = [int(p) for p in parts if p.strip()]
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 2:
        raise UsageError("--grid expects N or NxM with N, M >= 2")
    return vals


def _eco_classes(value: str | None) -> list[VehicleClass]:
    if value in (None, "both"):
        return list(ECO_CLASSES)
    c = VehicleClass.parse(value)
    if c not in ECO_CLASSES:
        raise UsageError("--eco-class must be e or f")
    return [c]


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(m: RunManifest):
    units = read_units(m.units)
    net = read_network(m.net, units)
    demand = read_trips(m.trips, expected_zones=len(net.zones))
    return net, demand


# --- commands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    if not args.net or not args.trips:
        raise UsageError("validate needs --net and --trips")
    m = RunManifest("validate", net=args.net, trips=args.trips, units=args.units)
    net, demand = _load_inputs(m)
    errors = validate_network(net, allow_connectors=True)
    notes = [d for d in network_diagnostics(net) if d not in errors]
    print(f"{len(net.zones)} zones, {len(net.nodes)} nodes, {net.n_links} links, "
          f"demand {demand.total():.9g}")
    for d in notes:
        print(f"note: {d}")
    for d in errors:
        print(f"error: {d}", file=sys.stderr)
    return EXIT_INVALID if errors else EXIT_OK


def cmd_solve(args) -> int:
    eco = _eco_classes(args.eco_class or "e")[0]
    m = RunManifest("solve", net=args.net, trips=args.trips, units=args.units,
                    eco_classes=[eco.label], fractions=[args.fraction], epsilon=args.epsilon,
                    max_iterations=args.max_iter, out=args.out, strict=args.strict,
                    reproducible=args.reproducible)
    if m.net:
        if not m.trips:
            raise UsageError("solve needs --trips with --net")
        net, base = _load_inputs(m)
    else:
        scen = TwoLinkScenario(args.length2, args.speed2)
        net, base = scen.network(), scen.demand_table(VehicleClass.TIME)
    demand = split_demand(base, args.fraction, eco)
    config = m.config(eco if args.fraction > 0 else None)
    out = _out_dir(m.out)
    m.write()
    t0 = time.perf_counter()
    res = solve(net, demand, config)
    elapsed = time.perf_counter() - t0

    x = res.state
    costs = cost.class_cost_matrix(net.arrays, x.aggregate, config.connector_time)
    speeds = cost.speed(net.arrays, x.aggregate, config.connector_time)
    with (out / "link_flows.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", "tail", "head", "x_t", "x_e", "x_f", "x_total",
                    "time_min", "speed_mph", "fuel_kwh", "emissions_g"])
        for i, lk in enumerate(net.links):
            w.writerow([lk.id, lk.tail, lk.head,
                        *(_g(x.flows(c)[i]) for c in CLASSES), _g(x.aggregate[i]),
                        _g(costs[VehicleClass.TIME.index][i]), _g(speeds[i]),
                        _g(costs[VehicleClass.FUEL.index][i]), _g(costs[VehicleClass.EMISSIONS.index][i])])
    with (out / "gap_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "gap", "aec"])
        for rec in res.gap_trace:
            w.writerow([rec.iteration, _g(rec.gap), _g(rec.aec)])
    mt = res.metrics
    print(f"converged={str(res.converged).lower()} iterations={res.iterations} gap={_g(res.gap)} "
          f"tse_g={_g(mt.tse)} tsfc_kwh={_g(mt.tsfc)} tstt_vehmin={_g(mt.tstt)} ({elapsed:.2f}s)")
    if not res.converged and m.strict:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_table2(args) -> int:
    m = RunManifest("table2", out=args.out)
    out = _out_dir(m.out)
    table = run_table2()
    text = table.format()
    print(text)
    (out / "table2.txt").write_text(text + "\n")
    with (out / "table2.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["regime", "row", "flow_vph", "time_min", "fuel_kwh", "emissions_g"])
        for c in CLASSES:
            for r in [*table.link_rows(c), table.total_row(c)]:
                w.writerow([c.label, r.label, _g(r.flow), _g(r.travel_time), _g(r.fuel), _g(r.emissions)])
    return EXIT_OK


def cmd_sweep_2link(args) -> int:
    from .plots import heatmap_svg

    grid = _parse_grid(args.grid)
    classes = _eco_classes(args.eco_class)
    m = RunManifest("sweep-2link", eco_classes=[c.label for c in classes], grid=grid,
                    epsilon=args.epsilon, max_iterations=args.max_iter, out=args.out)
    out = _out_dir(m.out)
    m.write()
    for c in classes:
        config = SolverConfig(epsilon=args.epsilon or 1e-5, max_iterations=args.max_iter)
        res = run_heatmap(c, tuple(grid), solver=args.solver, config=config)
        res.to_csv(out / f"heatmap_{c.label}.csv")
        for metric in ("tse", "tsfc"):
            heatmap_svg(res, out / f"heatmap_{c.label}_{metric}.svg", metric,
                        title=f"{c.label} routing: {metric.upper()} change")
        f = res.sign_fractions()
        print(f"{c.label}: TSE lower at {100 * f['negative']:.1f}% of points, higher at "
              f"{100 * f['positive']:.1f}%, unchanged at {100 * f['zero']:.1f}%")
    return EXIT_OK


def cmd_sweep_fraction(args) -> int:
    from .plots import fraction_svg

    if not args.net or not args.trips:
        raise UsageError("sweep-fraction needs --net and --trips")
    classes = _eco_classes(args.eco_class)
    fractions = _parse_fractions(args.fractions)
    m = RunManifest("sweep-fraction", net=args.net, trips=args.trips, units=args.units,
                    eco_classes=[c.label for c in classes], fractions=fractions,
                    epsilon=args.epsilon, max_iterations=args.max_iter, out=args.out,
                    reproducible=args.reproducible, strict=args.strict)
    net, base = _load_inputs(m)
    out = _out_dir(m.out)
    m.write()
    name = net.name or "network"
    results: dict[str, SweepResult] = {}
    all_converged = True
    for c in classes:
        def progress(p, res, c=c):
            log.info("%s %s p=%.2f gap=%.3g iterations=%d converged=%s", name, c.label, p,
                     res.gap, res.iterations, res.converged)

        res = run_fraction_sweep(net, base, c, fractions, m.config(c),
                                 warm_start=not m.reproducible, progress=progress)
        results[c.label] = res
        res.to_csv(out / f"sweep_{name}_{c.label}.csv")
        with (out / f"sweep_{name}_{c.label}_gaps.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "iteration", "gap", "aec"])
            for (p,), trace in res.gap_traces.items():
                for rec in trace:
                    w.writerow([_g(p), rec.iteration, _g(rec.gap), _g(rec.aec)])
        all_converged &= all(r.converged for r in res.rows)
        for r in res.rows:
            print(f"{c.label} p={r.key('fraction'):.2f} tse_g={_g(r.metrics.tse)} "
                  f"tsfc_kwh={_g(r.metrics.tsfc)} gap={_g(r.gap)} converged={str(r.converged).lower()}")
    for metric in ("tse", "tsfc"):
        fraction_svg(results, out / f"sweep_{name}_{metric}.svg", metric, title=name)
    if m.strict and not all_converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecoroute", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def inputs(p):
        p.add_argument("--net", help="TNTP *_net.tntp file")
        p.add_argument("--trips", help="TNTP *_trips.tntp file")
        p.add_argument("--units", help="key=value units file (length_to_miles, time_to_minutes)")

    def solver_opts(p, max_iter=20000):
        p.add_argument("--epsilon", type=float, help="relative gap threshold")
        p.add_argument("--max-iter", type=int, default=max_iter)
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("validate", help="parse a network/trips pair and print its size")
    inputs(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="one equilibrium at a given eco-routing share")
    inputs(p)
    solver_opts(p)
    p.add_argument("--eco-class", choices=["e", "f"])
    p.add_argument("--fraction", type=float, default=0.0, help="eco-routing share of demand")
    p.add_argument("--length2", type=float, default=5.0, help="built-in two-link scenario: link 2 miles")
    p.add_argument("--speed2", type=float, default=30.0, help="built-in two-link scenario: link 2 mi/hr")
    p.add_argument("--strict", action="store_true", help="exit nonzero when not converged")
    p.add_argument("--reproducible", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("table2", help="two-link comparison of time, CO2 and fuel routing")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_table2)

    p = sub.add_parser("sweep-2link", help="link-2 length/speed heatmap")
    solver_opts(p, max_iter=200_000)
    p.add_argument("--eco-class", choices=["e", "f", "both"])
    p.add_argument("--grid", default="41", help="N or NxM grid points (length x speed)")
    p.add_argument("--solver", choices=["oracle", "msa"], default="oracle")
    p.set_defaults(func=cmd_sweep_2link)

    p = sub.add_parser("sweep-fraction", help="eco-routing share sweep on a TNTP network")
    inputs(p)
    solver_opts(p)
    p.add_argument("--eco-class", choices=["e", "f", "both"])
    p.add_argument("--fractions", default="0:1:0.02", help="comma list or start:stop:step")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--reproducible", action="store_true", help="disable warm starts")
    p.set_defaults(func=cmd_sweep_fraction)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ZoneCountMismatch, NetworkError) as exc:
        print(f"validation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DemandError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
