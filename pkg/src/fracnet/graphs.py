"""Graph view of a fracture network and its topological features.

Fractures map to nodes and intersections to edges; two extra nodes represent
the inlet (source s) and outlet (target t) planes. Features follow the
conventions used throughout this package:

* degree / degree centrality count fracture-fracture edges only, normalized
  by (n - 1) with n the number of fracture nodes;
* betweenness is computed over ordered fracture-node pairs, normalized by
  1 / ((n - 1)(n - 2)), with s and t excluded as endpoints and intermediates;
* current-flow centrality injects one unit of current at s and extracts it
  at t over unit-resistance edges, and reads 1/2 * sum_j |I_ij| at a node,
  so a pure series node carries exactly 1.0.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.linalg import pinvh

SOURCE = "s"
TARGET = "t"

#: Edges with |current| at or below this are dropped from the backbone.
BACKBONE_EPS = 1e-16


class GraphStructureError(ValueError):
    """Raised when a network cannot be mapped to a usable s-t graph."""


@dataclass
class NetworkGraph:
    """Undirected graph over fracture ids plus the s/t boundary nodes.

    `index` maps node label -> row in the adjacency matrix; fracture nodes
    come first (sorted by id), then s, then t.
    """

    fracture_ids: list[int]
    edges: list[tuple[object, object]]  # node labels; fracture id or SOURCE/TARGET
    index: dict[object, int]
    adjacency: np.ndarray  # (n+2, n+2) 0/1 matrix

    @property
    def n_fractures(self) -> int:
        return len(self.fracture_ids)

    @property
    def n_nodes(self) -> int:
        return len(self.index)

    def fracture_edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, v in self.edges
                if u not in (SOURCE, TARGET) and v not in (SOURCE, TARGET)]

    def neighbors(self, label) -> list:
        i = self.index[label]
        order = self.labels()
        return [order[j] for j in np.nonzero(self.adjacency[i])[0]]

    def labels(self) -> list:
        out: list = [None] * self.n_nodes
        for lab, i in self.index.items():
            out[i] = lab
        return out


@dataclass
class BackbonePartition:
    primary: set[int]
    secondary: set[int]
    edge_currents: dict[tuple[object, object], float]  # keyed by sorted label pair


def to_graph(network) -> NetworkGraph:
    """Map a pruned FractureNetwork to its s-t graph.

    Raises GraphStructureError when no fracture touches the inlet or none
    touches the outlet.
    """
    ids = sorted(f.id for f in network.fractures)
    if not ids:
        raise GraphStructureError("graph has no fracture nodes")
    touches_in = {f.id for f in network.fractures if f.touches_inlet}
    touches_out = {f.id for f in network.fractures if f.touches_outlet}
    if not touches_in or not touches_out:
        raise GraphStructureError("graph has no source/target attachment")
    index: dict[object, int] = {fid: i for i, fid in enumerate(ids)}
    index[SOURCE] = len(ids)
    index[TARGET] = len(ids) + 1
    edges: list[tuple[object, object]] = []
    seen: set[tuple[int, int]] = set()
    for s in network.intersections:
        key = (min(s.fracture_a, s.fracture_b), max(s.fracture_a, s.fracture_b))
        if key not in seen:
            seen.add(key)
            edges.append(key)
    edges.extend((SOURCE, fid) for fid in sorted(touches_in))
    edges.extend((fid, TARGET) for fid in sorted(touches_out))
    n = len(index)
    adjacency = np.zeros((n, n))
    for u, v in edges:
        i, j = index[u], index[v]
        adjacency[i, j] = 1.0
        adjacency[j, i] = 1.0
    return NetworkGraph(fracture_ids=ids, edges=edges, index=index,
                        adjacency=adjacency)


def degree_and_centrality(g: NetworkGraph) -> dict[int, dict[str, float]]:
    """Fracture-fracture degree and degree / (n - 1) centrality."""
    n = g.n_fractures
    if n <= 1:
        raise GraphStructureError("degenerate graph: need at least 2 fracture nodes")
    sub = g.adjacency[:n, :n]
    deg = sub.sum(axis=1)
    return {fid: {"degree": float(deg[i]), "degree_centrality": float(deg[i] / (n - 1))}
            for i, fid in enumerate(g.fracture_ids)}


def betweenness(g: NetworkGraph) -> dict[int, float]:
    """Shortest-path betweenness over ordered fracture-node pairs.

    Brandes accumulation on the fracture-only subgraph; the raw undirected
    accumulation already counts each unordered pair twice, which matches the
    ordered-pair sum, so the only scaling is 1 / ((n - 1)(n - 2)). Graphs
    with n < 3 return all zeros.
    """
    n = g.n_fractures
    values = {fid: 0.0 for fid in g.fracture_ids}
    if n < 3:
        return values
    sub = g.adjacency[:n, :n]
    neighbors = [np.nonzero(sub[i])[0] for i in range(n)]
    raw = np.zeros(n)
    for s in range(n):
        # single-source shortest paths (unweighted) with path counting
        sigma = np.zeros(n)
        dist = np.full(n, -1)
        sigma[s] = 1.0
        dist[s] = 0
        order = []
        queue = deque([s])
        preds: list[list[int]] = [[] for _ in range(n)]
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in neighbors[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                raw[w] += delta[w]
    scale = 1.0 / ((n - 1) * (n - 2))
    for i, fid in enumerate(g.fracture_ids):
        values[fid] = float(raw[i] * scale)
    return values


def _potentials(g: NetworkGraph) -> np.ndarray:
    """Node potentials under unit current injection at s, extraction at t."""
    lap = np.diag(g.adjacency.sum(axis=1)) - g.adjacency
    lap_pinv = pinvh(lap)
    b = np.zeros(g.n_nodes)
    b[g.index[SOURCE]] = 1.0
    b[g.index[TARGET]] = -1.0
    return lap_pinv @ b


def laplacian_pseudoinverse(g: NetworkGraph) -> np.ndarray:
    """Moore-Penrose pseudoinverse of L = D - A over all nodes incl. s, t."""
    lap = np.diag(g.adjacency.sum(axis=1)) - g.adjacency
    return pinvh(lap)


def current_flow(g: NetworkGraph) -> tuple[dict[int, float], dict[tuple, float]]:
    """Unit s->t current: per-fracture throughput and per-edge currents.

    Node value is 1/2 * sum over incident edges of |I|; edge current is the
    absolute potential difference across the (unit-resistance) edge.
    Raises GraphStructureError when s and t are not connected.
    """
    comp = _component_of(g, SOURCE)
    if TARGET not in comp:
        raise GraphStructureError("no source-target path")
    p = _potentials(g)
    edge_currents: dict[tuple, float] = {}
    for u, v in g.edges:
        i, j = g.index[u], g.index[v]
        edge_currents[_edge_key(u, v)] = float(abs(p[i] - p[j]))
    node_values: dict[int, float] = {}
    for fid in g.fracture_ids:
        i = g.index[fid]
        inc = np.nonzero(g.adjacency[i])[0]
        total = sum(abs(p[i] - p[j]) for j in inc)
        node_values[fid] = float(0.5 * total)
    return node_values, edge_currents


def _edge_key(u, v) -> tuple:
    # fracture ids sort before the s/t labels; order is only used for keying
    def rank(x):
        return (isinstance(x, str), x if isinstance(x, str) else int(x))
    return tuple(sorted((u, v), key=rank))


def _component_of(g: NetworkGraph, start) -> set:
    labels = g.labels()
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        i = g.index[u]
        for j in np.nonzero(g.adjacency[i])[0]:
            lab = labels[j]
            if lab not in seen:
                seen.add(lab)
                stack.append(lab)
    return seen


def _st_path_edges(g: NetworkGraph) -> set[tuple]:
    """Edges lying on at least one simple s-t path.

    An edge can carry current only if it is on a simple path between the
    injection nodes; dead-end trees and pendant cycles cannot. This is
    computed exactly (an edge qualifies iff it shares a biconnected
    component with a virtual s-t edge), which keeps solver noise on
    structurally dead edges from leaking into the backbone.
    """
    n = g.n_nodes
    i_s, i_t = g.index[SOURCE], g.index[TARGET]
    adj: list[list[int]] = [list(np.nonzero(g.adjacency[i])[0]) for i in range(n)]
    adj[i_s].append(i_t)  # virtual edge closing the s-t circuit
    adj[i_t].append(i_s)
    comps = _biconnected_components(adj)
    virt = (min(i_s, i_t), max(i_s, i_t))
    labels = g.labels()
    relevant: set[tuple] = set()
    for comp in comps:
        norm = {(min(a, b), max(a, b)) for a, b in comp}
        if virt in norm:
            norm.discard(virt)
            relevant = {_edge_key(labels[a], labels[b]) for a, b in norm}
            break
    return relevant


def _biconnected_components(adj: list[list[int]]) -> list[list[tuple[int, int]]]:
    """Iterative Tarjan biconnected components; returns lists of edges."""
    n = len(adj)
    disc = [-1] * n
    low = [0] * n
    comps: list[list[tuple[int, int]]] = []
    edge_stack: list[tuple[int, int]] = []
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v in it:
                if v == parent:
                    continue
                if disc[v] == -1:
                    edge_stack.append((u, v))
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, u, iter(adj[v])))
                    advanced = True
                    break
                if disc[v] < disc[u]:  # back edge
                    edge_stack.append((u, v))
                    low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    pu = stack[-1][0]
                    low[pu] = min(low[pu], low[u])
                    if low[u] >= disc[pu]:
                        comp = []
                        while edge_stack:
                            e = edge_stack.pop()
                            comp.append(e)
                            if e == (pu, u):
                                break
                        comps.append(comp)
    return comps


def extract_backbone(g: NetworkGraph, eps: float = BACKBONE_EPS) -> BackbonePartition:
    """Partition fracture nodes into the flowing backbone and the rest.

    Edges with current <= eps are removed, as are edges that lie on no
    simple s-t path (those are exactly zero in exact arithmetic; the
    structural test keeps pseudoinverse noise from promoting dead-end
    structures). Fracture nodes still connected to the s-t component
    through the remaining edges form the primary set.
    """
    _, edge_currents = current_flow(g)
    structural = _st_path_edges(g)
    live_adj: dict[object, set] = {}
    for u, v in g.edges:
        key = _edge_key(u, v)
        if edge_currents[key] > eps and key in structural:
            live_adj.setdefault(u, set()).add(v)
            live_adj.setdefault(v, set()).add(u)
    primary: set[int] = set()
    if SOURCE in live_adj:
        seen = {SOURCE}
        stack = [SOURCE]
        while stack:
            u = stack.pop()
            for v in live_adj.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        primary = {u for u in seen if u not in (SOURCE, TARGET)}
    secondary = set(g.fracture_ids) - primary
    return BackbonePartition(primary=primary, secondary=secondary,
                             edge_currents=edge_currents)


def distance_to_backbone(g: NetworkGraph, bp: BackbonePartition) -> dict[int, int]:
    """Hop count from each fracture to the nearest primary fracture.

    Multi-source BFS over fracture-fracture edges only (s and t are not
    valid hops). Raises when a secondary fracture cannot reach the backbone,
    which cannot happen on pruned networks.
    """
    if not bp.primary:
        raise GraphStructureError("backbone is empty")
    n = g.n_fractures
    sub = g.adjacency[:n, :n]
    dist = {fid: -1 for fid in g.fracture_ids}
    queue: deque[int] = deque()
    for fid in bp.primary:
        dist[fid] = 0
        queue.append(fid)
    pos = {fid: i for i, fid in enumerate(g.fracture_ids)}
    while queue:
        u = queue.popleft()
        for j in np.nonzero(sub[pos[u]])[0]:
            v = g.fracture_ids[j]
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    unreachable = [fid for fid, d in dist.items() if d < 0]
    if unreachable:
        raise GraphStructureError(
            f"{len(unreachable)} fractures cannot reach the backbone")
    return dist


def topological_features(network) -> dict[int, dict[str, float]]:
    """All per-fracture topological features for a pruned network."""
    g = to_graph(network)
    deg = degree_and_centrality(g)
    btw = betweenness(g)
    cf, _ = current_flow(g)
    bp = extract_backbone(g)
    dist = distance_to_backbone(g, bp)
    out: dict[int, dict[str, float]] = {}
    for fid in g.fracture_ids:
        out[fid] = {
            "degree": deg[fid]["degree"],
            "degree_centrality": deg[fid]["degree_centrality"],
            "distance_to_backbone": float(dist[fid]),
            "betweenness_centrality": btw[fid],
            "current_flow": cf[fid],
        }
    return out


def graph_to_edge_list(g: NetworkGraph) -> str:
    """Plain-text edge list `u v` with s/t written as `s` and `t`."""
    lines = [f"{u} {v}" for u, v in g.edges]
    return "\n".join(lines) + "\n"
