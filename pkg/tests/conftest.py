from __future__ import annotations

import numpy as np
import pytest

from ecoroute.experiments import TwoLinkScenario
from ecoroute.network import DemandTable, Link, Network, VehicleClass


@pytest.fixture
def scenario():
    return TwoLinkScenario(5.0, 30.0)


@pytest.fixture
def two_link(scenario):
    return scenario.network()


def grid_tntp(n: int = 4, n_zones: int = 4, seed: int = 0, demand_scale: float = 300.0) -> tuple[str, str]:
    """Synthetic TNTP network/trips pair: an n x n bidirectional street grid with
    ``n_zones`` centroids attached to spread-out grid nodes by zero-length connectors."""
    rng = np.random.default_rng(seed)
    first_grid = n_zones + 1

    def node(r, c):
        return first_grid + r * n + c

    records = []
    for r in range(n):
        for c in range(n):
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr >= n or cc >= n:
                    continue
                length = float(rng.uniform(0.3, 2.0))
                spd = float(rng.choice([25.0, 35.0, 45.0, 55.0]))
                cap = float(rng.choice([600.0, 900.0, 1800.0]))
                fft = 60.0 * length / spd
                for a, b in ((node(r, c), node(rr, cc)), (node(rr, cc), node(r, c))):
                    records.append((a, b, cap, length, fft, 0.15, 4.0, spd, 0.0, 1))
    anchors = [node(0, 0), node(n - 1, n - 1), node(0, n - 1), node(n - 1, 0), node(n // 2, n // 2)]
    for z in range(1, n_zones + 1):
        g = anchors[(z - 1) % len(anchors)]
        records.append((z, g, 99999.0, 0.0, 0.0, 0.15, 4.0, 0.0, 0.0, 3))
        records.append((g, z, 99999.0, 0.0, 0.0, 0.15, 4.0, 0.0, 0.0, 3))
    n_nodes = n_zones + n * n
    lines = [
        f"<NUMBER OF ZONES> {n_zones}",
        f"<NUMBER OF NODES> {n_nodes}",
        f"<FIRST THRU NODE> {first_grid}",
        f"<NUMBER OF LINKS> {len(records)}",
        "<ORIGINAL HEADER>~ synthetic grid",
        "<END OF METADATA>",
        "",
        "~ \tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for rec in records:
        lines.append("\t" + "\t".join(str(v) for v in rec) + "\t;")
    net_text = "\n".join(lines) + "\n"

    pairs = {}
    for o in range(1, n_zones + 1):
        for d in range(1, n_zones + 1):
            if o != d:
                pairs[(o, d)] = round(float(rng.uniform(0.5, 1.5)) * demand_scale, 3)
    total = sum(pairs.values())
    trips = [f"<NUMBER OF ZONES> {n_zones}", f"<TOTAL OD FLOW> {total}", "<END OF METADATA>", ""]
    for o in range(1, n_zones + 1):
        trips.append(f"Origin  {o}")
        row = "".join(f"{d:5d} :{pairs[(o, d)]:10.3f};" for d in range(1, n_zones + 1) if d != o)
        trips.append(row)
        trips.append("")
    return net_text, "\n".join(trips) + "\n"


@pytest.fixture
def grid_pair():
    return grid_tntp()


def random_small_network(rng: np.random.Generator, n_nodes: int = 6, n_links: int = 14,
                         n_zones: int = 3) -> tuple[Network, DemandTable]:
    """Strongly connected random network (ring backbone plus chords) with mixed demand."""
    links = []
    lid = 1
    for i in range(1, n_nodes + 1):
        j = i % n_nodes + 1
        for a, b in ((i, j), (j, i)):
            links.append(Link.from_speed(lid, a, b, capacity=float(rng.uniform(300, 1500)),
                                         length=float(rng.uniform(0.5, 3.0)),
                                         free_flow_speed=float(rng.uniform(20, 60))))
            lid += 1
    while len(links) < n_links:
        a, b = (int(v) for v in rng.choice(np.arange(1, n_nodes + 1), size=2, replace=False))
        links.append(Link.from_speed(lid, a, b, capacity=float(rng.uniform(300, 1500)),
                                     length=float(rng.uniform(0.5, 3.0)),
                                     free_flow_speed=float(rng.uniform(20, 60)),
                                     beta=float(rng.uniform(1.0, 5.0))))
        lid += 1
    net = Network(tuple(range(1, n_nodes + 1)), tuple(links), tuple(range(1, n_zones + 1)))
    entries = {}
    for o in range(1, n_zones + 1):
        for d in range(1, n_zones + 1):
            if o == d:
                continue
            for c in VehicleClass:
                if rng.random() < 0.7:
                    entries[(o, d, c)] = float(rng.uniform(50, 800))
    return net, DemandTable.from_entries(entries)
