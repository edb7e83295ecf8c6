"""Label-setting shortest paths and all-or-nothing loading.

The kernels work on dense node indices and the forward star built by
:class:`~ecoroute.network.Connectivity`. Nodes whose ``through_ok`` flag is
false (zones below the first-through-node threshold) are settled but never
expanded unless they are the search origin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable

import numba
import numpy as np

from .network import Network, VehicleClass


@numba.njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] < keys[i] or (keys[parent] == keys[i] and vals[parent] <= vals[i]):
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        vals[parent], vals[i] = vals[i], vals[parent]
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, size):
    key = keys[0]
    val = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and (keys[right] < keys[left] or (keys[right] == keys[left] and vals[right] < vals[left])):
            child = right
        if keys[i] < keys[child] or (keys[i] == keys[child] and vals[i] <= vals[child]):
            break
        keys[child], keys[i] = keys[i], keys[child]
        vals[child], vals[i] = vals[i], vals[child]
        i = child
    return key, val, size


@numba.njit(cache=True)
def dijkstra(first_out, out_links, head, cost, rank, through_ok, origin):
    """One-to-all labels. Returns (label, pred_link, settle_order, n_settled).

    Among equal-cost predecessors of an unsettled node the link with the lowest
    rank wins.
    """
    n = first_out.shape[0] - 1
    label = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    settled = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    cap = out_links.shape[0] + 1
    keys = np.empty(cap)
    vals = np.empty(cap, dtype=np.int64)
    size = 0
    n_settled = 0
    label[origin] = 0.0
    size = _heap_push(keys, vals, size, 0.0, origin)
    while size > 0:
        d, v, size = _heap_pop(keys, vals, size)
        if settled[v] or d > label[v]:
            continue
        settled[v] = True
        order[n_settled] = v
        n_settled += 1
        if v != origin and not through_ok[v]:
            continue
        for k in range(first_out[v], first_out[v + 1]):
            a = out_links[k]
            w = head[a]
            if settled[w]:
                continue
            nd = d + cost[a]
            if nd < label[w]:
                label[w] = nd
                pred[w] = a
                size = _heap_push(keys, vals, size, nd, w)
            elif nd == label[w] and rank[a] < rank[pred[w]]:
                pred[w] = a
    return label, pred, order, n_settled


@numba.njit(cache=True)
def load_class(first_out, out_links, tail, head, cost, rank, through_ok,
               origins, dem_ptr, dem_dest, dem_rate):
    """All-or-nothing loading of one class.

    Returns (link_flow, sum of demand * shortest cost, failed_origin_pos,
    failed_dest). The failure pair is (-1, -1) when every destination is
    reachable.
    """
    n = first_out.shape[0] - 1
    y = np.zeros(tail.shape[0])
    sptc = 0.0
    node_flow = np.zeros(n)
    for i in range(origins.shape[0]):
        if dem_ptr[i] == dem_ptr[i + 1]:
            continue
        label, pred, order, n_settled = dijkstra(first_out, out_links, head, cost, rank,
                                                 through_ok, origins[i])
        for j in range(dem_ptr[i], dem_ptr[i + 1]):
            dest = dem_dest[j]
            if label[dest] == np.inf:
                return y, sptc, i, dest
            sptc += dem_rate[j] * label[dest]
            node_flow[dest] += dem_rate[j]
        for k in range(n_settled - 1, 0, -1):
            v = order[k]
            f = node_flow[v]
            if f != 0.0:
                a = pred[v]
                y[a] += f
                node_flow[tail[a]] += f
                node_flow[v] = 0.0
        node_flow[origins[i]] = 0.0
    return y, sptc, -1, -1


@dataclass(frozen=True)
class ShortestPathTree:
    """Shortest-path labels and predecessor links from one origin, keyed by external ids."""

    origin: int
    vclass: VehicleClass
    labels: dict[int, float]
    pred_link: dict[int, Hashable | None]

    def path_to(self, dest: int, net: Network) -> list[Hashable]:
        """Link ids along the tree path origin -> dest (empty for the origin itself)."""
        if self.labels[dest] == np.inf:
            raise KeyError(f"node {dest} is unreachable from {self.origin}")
        links = []
        node = dest
        while node != self.origin:
            lid = self.pred_link[node]
            links.append(lid)
            node = net.link(lid).tail
        return links[::-1]


def tree_from_costs(net: Network, link_cost: np.ndarray, origin: int, vclass: VehicleClass) -> ShortestPathTree:
    conn = net.connectivity
    label, pred, _, _ = dijkstra(conn.first_out, conn.out_links, conn.head,
                                 np.ascontiguousarray(link_cost, dtype=float), conn.link_rank,
                                 conn.through_ok, net.node_index[origin])
    labels = {node: float(label[i]) for i, node in enumerate(net.nodes)}
    preds = {node: (net.links[pred[i]].id if pred[i] >= 0 else None) for i, node in enumerate(net.nodes)}
    return ShortestPathTree(origin, vclass, labels, preds)
