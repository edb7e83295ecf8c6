"""Network, demand and flow containers shared by the cost, solver and I/O layers."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from types import MappingProxyType
from typing import Any, Hashable, Iterable, Mapping, NamedTuple

import numpy as np

log = logging.getLogger(__name__)


class NetworkError(ValueError):
    """Raised when a network fails validation before solving."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("invalid network: " + "; ".join(self.diagnostics))


class DemandError(ValueError):
    pass


class UnreachableDemandError(DemandError):
    def __init__(self, origin: int, destination: int, vclass: "VehicleClass"):
        self.origin = origin
        self.destination = destination
        self.vclass = vclass
        super().__init__(
            f"positive {vclass.label} demand from node {origin} to node {destination} "
            "has no path"
        )


class VehicleClass(enum.Enum):
    """Route-choice objective of a vehicle population."""

    TIME = "t"
    EMISSIONS = "e"
    FUEL = "f"

    @property
    def index(self) -> int:
        return _CLASS_INDEX[self]

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "str | VehicleClass") -> "VehicleClass":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if text in (member.value, member.label):
                return member
        raise ValueError(f"unknown vehicle class {value!r}")


CLASSES = (VehicleClass.TIME, VehicleClass.EMISSIONS, VehicleClass.FUEL)
_CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}
ECO_CLASSES = (VehicleClass.EMISSIONS, VehicleClass.FUEL)


@dataclass(frozen=True)
class Link:
    """Directed link. Lengths in miles, times in minutes, capacity in veh/hr.

    The free-flow travel time is stored; free-flow speed is derived from it so
    that TNTP files round-trip exactly.
    """

    id: Hashable
    tail: int
    head: int
    capacity: float
    length: float
    free_flow_time: float
    alpha: float = 0.15
    beta: float = 4.0
    meta: tuple[tuple[str, Any], ...] = ()

    @classmethod
    def from_speed(
        cls,
        id: Hashable,
        tail: int,
        head: int,
        capacity: float,
        length: float,
        free_flow_speed: float,
        alpha: float = 0.15,
        beta: float = 4.0,
    ) -> "Link":
        return cls(id, tail, head, capacity, length, 60.0 * length / free_flow_speed, alpha, beta)

    @property
    def free_flow_speed(self) -> float:
        if self.free_flow_time <= 0:
            return 0.0
        return self.length / (self.free_flow_time / 60.0)


class LinkArrays(NamedTuple):
    """Column view of a network's links; duck-types as a Link for the cost functions."""

    capacity: np.ndarray
    length: np.ndarray
    free_flow_time: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class Network:
    nodes: tuple[int, ...]
    links: tuple[Link, ...]
    zones: tuple[int, ...] = ()
    first_through_node: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "zones", tuple(self.zones))

    def __getstate__(self) -> dict:
        # derived indexes are rebuilt on demand in the receiving process
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @cached_property
    def node_index(self) -> Mapping[int, int]:
        """External node id -> dense internal index."""
        return MappingProxyType({n: i for i, n in enumerate(self.nodes)})

    @cached_property
    def link_index(self) -> Mapping[Hashable, int]:
        return MappingProxyType({lk.id: i for i, lk in enumerate(self.links)})

    @cached_property
    def arrays(self) -> LinkArrays:
        def col(name: str) -> np.ndarray:
            arr = np.array([getattr(lk, name) for lk in self.links], dtype=float)
            arr.flags.writeable = False
            return arr

        return LinkArrays(*(col(name) for name in LinkArrays._fields))

    @cached_property
    def connectivity(self) -> "Connectivity":
        return Connectivity.build(self)

    def link(self, link_id: Hashable) -> Link:
        return self.links[self.link_index[link_id]]


@dataclass(frozen=True)
class Connectivity:
    """Forward-star adjacency over dense node indices, ready for the path kernel."""

    tail: np.ndarray
    head: np.ndarray
    first_out: np.ndarray
    out_links: np.ndarray
    link_rank: np.ndarray
    through_ok: np.ndarray

    @classmethod
    def build(cls, net: Network) -> "Connectivity":
        idx = net.node_index
        tail = np.array([idx[lk.tail] for lk in net.links], dtype=np.int64)
        head = np.array([idx[lk.head] for lk in net.links], dtype=np.int64)
        n = len(net.nodes)
        rank_order = sorted(range(net.n_links), key=lambda i: net.links[i].id)
        link_rank = np.empty(net.n_links, dtype=np.int64)
        link_rank[rank_order] = np.arange(net.n_links)
        # out-links grouped by tail, each group ordered by link id
        out_links = np.array(sorted(range(net.n_links), key=lambda i: (tail[i], link_rank[i])),
                             dtype=np.int64)
        counts = np.bincount(tail, minlength=n) if net.n_links else np.zeros(n, dtype=np.int64)
        first_out = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=first_out[1:])
        through_ok = np.array([node >= net.first_through_node for node in net.nodes], dtype=np.bool_)
        return cls(tail, head, first_out, out_links, link_rank, through_ok)


def validate_network(net: Network, allow_connectors: bool = False) -> list[str]:
    """Return one human-readable diagnostic per violated invariant (empty when clean).

    With ``allow_connectors`` a zero length is accepted: such links are zone
    connectors that the cost model handles with a fixed time and no emissions.
    """
    out: list[str] = []
    node_set = set()
    for node in net.nodes:
        if not isinstance(node, (int, np.integer)) or node < 0:
            out.append(f"node {node!r}: id must be a non-negative integer")
        if node in node_set:
            out.append(f"node {node}: duplicate id")
        node_set.add(node)
    for z in net.zones:
        if z not in node_set:
            out.append(f"zone {z}: not a network node")
    seen_ids: set = set()
    for lk in net.links:
        tag = f"link {lk.id} ({lk.tail}->{lk.head})"
        if lk.id in seen_ids:
            out.append(f"{tag}: duplicate link id")
        seen_ids.add(lk.id)
        for end in (lk.tail, lk.head):
            if end not in node_set:
                out.append(f"{tag}: endpoint {end} not a network node")
        if not lk.capacity > 0:
            out.append(f"{tag}: capacity must be > 0, got {lk.capacity}")
        connector = allow_connectors and lk.length >= 0
        if not (lk.length > 0 or connector):
            out.append(f"{tag}: length must be > 0, got {lk.length}")
        if not lk.free_flow_time > 0:
            out.append(f"{tag}: free-flow time must be > 0, got {lk.free_flow_time}")
        elif not (lk.free_flow_speed > 0 or connector):
            out.append(f"{tag}: free-flow speed must be > 0, got {lk.free_flow_speed}")
        if not lk.alpha >= 0:
            out.append(f"{tag}: alpha must be >= 0, got {lk.alpha}")
        if not lk.beta >= 1:
            out.append(f"{tag}: beta must be >= 1, got {lk.beta}")
    return out


DemandKey = tuple[int, int, VehicleClass]


@dataclass(frozen=True)
class DemandTable:
    """Per-class origin-destination trip rates in veh/hr.

    Build through :meth:`from_entries`, which drops intrazonal and zero entries.
    """

    entries: Mapping[DemandKey, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def __reduce__(self):
        # mappingproxy does not pickle; worker processes receive a plain dict
        return (type(self), (dict(self.entries),))

    @classmethod
    def from_entries(cls, items: Iterable[tuple[DemandKey, float]] | Mapping[DemandKey, float]) -> "DemandTable":
        if isinstance(items, Mapping):
            items = items.items()
        merged: dict[DemandKey, float] = {}
        dropped = 0.0
        for (o, d, c), rate in items:
            c = VehicleClass.parse(c)
            rate = float(rate)
            if not rate >= 0 or math.isinf(rate):
                raise DemandError(f"demand {o}->{d} ({c.label}) must be finite and >= 0, got {rate}")
            if o == d:
                dropped += rate
                continue
            if rate == 0:
                continue
            merged[(o, d, c)] = merged.get((o, d, c), 0.0) + rate
        if dropped > 0:
            log.warning("dropped %.6g veh/hr of intrazonal demand", dropped)
        return cls(merged)

    def __len__(self) -> int:
        return len(self.entries)

    def total(self, vclass: VehicleClass | None = None) -> float:
        keys = sorted((k for k in self.entries if vclass is None or k[2] is vclass), key=_key_order)
        return math.fsum(self.entries[k] for k in keys)

    def classes(self) -> tuple[VehicleClass, ...]:
        present = {k[2] for k in self.entries}
        return tuple(c for c in CLASSES if c in present)

    def for_class(self, vclass: VehicleClass) -> dict[tuple[int, int], float]:
        return {(o, d): r for (o, d, c), r in sorted(self.entries.items(), key=lambda kv: _key_order(kv[0]))
                if c is vclass}


def _key_order(key: DemandKey) -> tuple[int, int, int]:
    return (key[0], key[1], key[2].index)


def split_demand(base: DemandTable, eco_fraction: float, eco_class: VehicleClass) -> DemandTable:
    """Reassign a fraction of every time-routing entry to ``eco_class``."""
    p = float(eco_fraction)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"eco fraction must lie in [0, 1], got {eco_fraction}")
    eco_class = VehicleClass.parse(eco_class)
    if eco_class not in ECO_CLASSES:
        raise ValueError(f"eco class must be emissions or fuel, got {eco_class.label}")
    if any(c is not VehicleClass.TIME for _, _, c in base.entries):
        raise DemandError("split_demand expects a time-routing-only base table")
    out: dict[DemandKey, float] = {}
    for (o, d, _), rate in base.entries.items():
        eco = p * rate
        keep = rate - eco
        if keep > 0:
            out[(o, d, VehicleClass.TIME)] = keep
        if eco > 0:
            out[(o, d, eco_class)] = eco
    return DemandTable(out)


@dataclass(frozen=True)
class FlowState:
    """Per-class link flows, rows ordered as :data:`CLASSES`."""

    class_flows: np.ndarray

    def __post_init__(self) -> None:
        flows = np.array(self.class_flows, dtype=float)
        if flows.ndim != 2 or flows.shape[0] != len(CLASSES):
            raise ValueError(f"class_flows must have shape (3, n_links), got {flows.shape}")
        flows.flags.writeable = False
        object.__setattr__(self, "class_flows", flows)

    @classmethod
    def zeros(cls, n_links: int) -> "FlowState":
        return cls(np.zeros((len(CLASSES), n_links)))

    @classmethod
    def single_class(cls, vclass: VehicleClass, flows: np.ndarray) -> "FlowState":
        arr = np.zeros((len(CLASSES), len(flows)))
        arr[vclass.index] = flows
        return cls(arr)

    @cached_property
    def aggregate(self) -> np.ndarray:
        f = self.class_flows
        agg = f[0] + f[1] + f[2]
        agg.flags.writeable = False
        return agg

    def flows(self, vclass: VehicleClass) -> np.ndarray:
        return self.class_flows[vclass.index]

    @property
    def n_links(self) -> int:
        return self.class_flows.shape[1]
