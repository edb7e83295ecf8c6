"""Link performance functions and system totals.

Units: length in miles, travel time in minutes, speed in mi/hr, fuel in kWh per
vehicle, emissions in grams of CO2 per vehicle. Every function accepts either a
single :class:`~ecoroute.network.Link` with a scalar flow, or a
:class:`~ecoroute.network.LinkArrays` with a flow vector.

Links shorter than :data:`CONNECTOR_LENGTH` are treated as zone connectors: a
fixed travel time, and no fuel or emissions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import CLASSES, FlowState, Network, VehicleClass

CONNECTOR_LENGTH = 1e-3

FUEL_COEF = 14.58
FUEL_EXP = -0.6253
CO2_COEF = 3158.0
CO2_EXP = -0.56


@dataclass(frozen=True)
class LinkCosts:
    travel_time: float
    speed: float
    fuel: float
    emissions: float


@dataclass(frozen=True)
class SystemMetrics:
    tse: float
    tsfc: float
    tstt: float


def _flow(flow):
    x = np.asarray(flow, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("link flow must be non-negative")
    return x


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def _is_connector(link):
    return np.asarray(link.length, dtype=float) < CONNECTOR_LENGTH


def bpr_time(link, flow, connector_time: float | None = None):
    """BPR travel time in minutes."""
    x = _flow(flow)
    fft = np.asarray(link.free_flow_time, dtype=float)
    t = fft * (1.0 + link.alpha * (x / link.capacity) ** link.beta)
    conn = _is_connector(link)
    if np.any(conn):
        fixed = fft if connector_time is None else connector_time
        t = np.where(conn, fixed, t)
    return _scalar(t)


def speed(link, flow, connector_time: float | None = None):
    """Mean link speed in mi/hr: length over travel time."""
    t = np.asarray(bpr_time(link, flow, connector_time))
    return _scalar(link.length / (t / 60.0))


def _speed_power(link, flow, coef, exponent, connector_time):
    u = np.asarray(speed(link, flow, connector_time), dtype=float)
    conn = _is_connector(link)
    safe_u = np.where(conn, 1.0, u)
    value = link.length * coef * safe_u ** exponent
    return _scalar(np.where(conn, 0.0, value))


def fuel(link, flow, connector_time: float | None = None):
    """Energy use in kWh per vehicle."""
    return _speed_power(link, flow, FUEL_COEF, FUEL_EXP, connector_time)


def emissions(link, flow, connector_time: float | None = None):
    """CO2 in grams per vehicle."""
    return _speed_power(link, flow, CO2_COEF, CO2_EXP, connector_time)


_DISPATCH = {
    VehicleClass.TIME: bpr_time,
    VehicleClass.EMISSIONS: emissions,
    VehicleClass.FUEL: fuel,
}


def class_cost(link, flow, vclass: VehicleClass, connector_time: float | None = None):
    """The cost a vehicle of ``vclass`` minimizes on this link."""
    return _DISPATCH[VehicleClass.parse(vclass)](link, flow, connector_time)


def link_costs(link, flow, connector_time: float | None = None) -> LinkCosts:
    return LinkCosts(
        travel_time=bpr_time(link, flow, connector_time),
        speed=speed(link, flow, connector_time),
        fuel=fuel(link, flow, connector_time),
        emissions=emissions(link, flow, connector_time),
    )


class CostModel:
    """All-class cost evaluator bound to one network's link columns.

    Skips the per-call validation of the scalar API; the solver's inner loop
    only ever passes non-negative flows.
    """

    def __init__(self, arrays, connector_time: float | None = None):
        self.length = np.asarray(arrays.length, dtype=float)
        self.fft = np.asarray(arrays.free_flow_time, dtype=float)
        self.capacity = np.asarray(arrays.capacity, dtype=float)
        self.alpha = np.asarray(arrays.alpha, dtype=float)
        self.beta = np.asarray(arrays.beta, dtype=float)
        self.connector = self.length < CONNECTOR_LENGTH
        self.has_connectors = bool(self.connector.any())
        self.fixed_time = self.fft if connector_time is None else np.full_like(self.fft, connector_time)

    def matrix(self, flow: np.ndarray) -> np.ndarray:
        """Costs of every class on every link, shape ``(3, n_links)`` ordered as CLASSES."""
        out = np.empty((len(CLASSES), self.length.shape[0]))
        t = out[VehicleClass.TIME.index]
        np.multiply(self.fft, 1.0 + self.alpha * (flow / self.capacity) ** self.beta, out=t)
        if self.has_connectors:
            t[self.connector] = self.fixed_time[self.connector]
            u = np.where(self.connector, 1.0, self.length / (t / 60.0))
        else:
            u = self.length / (t / 60.0)
        out[VehicleClass.EMISSIONS.index] = self.length * CO2_COEF * u ** CO2_EXP
        out[VehicleClass.FUEL.index] = self.length * FUEL_COEF * u ** FUEL_EXP
        if self.has_connectors:
            out[VehicleClass.EMISSIONS.index][self.connector] = 0.0
            out[VehicleClass.FUEL.index][self.connector] = 0.0
        return out


def class_cost_matrix(arrays, flow, connector_time: float | None = None) -> np.ndarray:
    """Costs of every class on every link, shape ``(3, n_links)`` ordered as CLASSES."""
    return CostModel(arrays, connector_time).matrix(_flow(flow))


def system_metrics(net: Network, state: FlowState, connector_time: float | None = None) -> SystemMetrics:
    """Flow-weighted totals: grams CO2, kWh, vehicle-minutes."""
    x = np.asarray(state.aggregate, dtype=float)
    if x.shape != (net.n_links,):
        raise ValueError(f"flow state has {x.shape[0]} links, network has {net.n_links}")
    if net.n_links == 0:
        return SystemMetrics(0.0, 0.0, 0.0)
    costs = class_cost_matrix(net.arrays, x, connector_time)
    t = costs[VehicleClass.TIME.index]
    e = costs[VehicleClass.EMISSIONS.index]
    f = costs[VehicleClass.FUEL.index]
    return SystemMetrics(
        tse=math.fsum(e * x),
        tsfc=math.fsum(f * x),
        tstt=math.fsum(t * x),
    )
