"""Sparse undirected graph model, normalization, neighborhood ops, homophily."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for structurally invalid graph inputs."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph in CSR form.

    The adjacency is stored symmetrically (both directions of every edge),
    without self-loops.  ``csr_offsets`` has length ``num_vertices + 1`` and
    ``csr_targets[csr_offsets[v]:csr_offsets[v+1]]`` are the sorted neighbors
    of ``v``.
    """

    num_vertices: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.features.shape[0] != self.num_vertices:
            raise GraphError(
                f"feature rows ({self.features.shape[0]}) != num_vertices ({self.num_vertices})"
            )
        if self.labels.shape[0] != self.num_vertices:
            raise GraphError("label count != num_vertices")
        if self.num_vertices and self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise GraphError("label id >= num_classes")
        if self.timestamps is not None and self.timestamps.shape[0] != self.num_vertices:
            raise GraphError("timestamp count != num_vertices")

    @property
    def num_edge_slots(self) -> int:
        """Number of stored directed entries (2x the undirected edge count)."""
        return int(self.csr_targets.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[v]:self.csr_offsets[v + 1]]

    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency as a scipy CSR matrix."""
        data = np.ones(self.num_edge_slots, dtype=np.float64)
        return sp.csr_matrix(
            (data, self.csr_targets, self.csr_offsets),
            shape=(self.num_vertices, self.num_vertices),
        )

    def edge_pairs(self) -> np.ndarray:
        """Canonical (u, v) pairs with u < v, sorted."""
        src = np.repeat(np.arange(self.num_vertices), self.degrees)
        mask = src < self.csr_targets
        pairs = np.stack([src[mask], self.csr_targets[mask]], axis=1)
        return pairs


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetrically normalized adjacency with self-loops, in CSR form.

    Entry (i, j) carries weight 1/sqrt((deg_i + 1) * (deg_j + 1)); the
    diagonal entry of vertex i is 1/(deg_i + 1).
    """

    num_vertices: int
    offsets: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.weights, self.targets, self.offsets),
            shape=(self.num_vertices, self.num_vertices),
        )


@dataclass(frozen=True)
class HomophilyReport:
    graph_level: float
    vertex_level: float
    class_insensitive: float
    homophily_index: float
    inter_class_edges: int
    intra_class_edges: int

    def as_dict(self) -> dict:
        return {
            "graph_level": self.graph_level,
            "vertex_level": self.vertex_level,
            "class_insensitive": self.class_insensitive,
            "homophily_index": self.homophily_index,
            "inter_class_edges": self.inter_class_edges,
            "intra_class_edges": self.intra_class_edges,
        }


def build_graph(edge_list, num_vertices, features, labels, timestamps=None,
                num_classes=None) -> Graph:
    """Build a Graph from an iterable of (u, v) pairs.

    Directed duplicates and self-loops are dropped; the result stores each
    surviving edge in both directions.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if timestamps is not None:
        timestamps = np.asarray(timestamps, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0

    edges = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_vertices):
        raise GraphError("edge endpoint out of range")

    # symmetrize, dedup, strip self-loops
    if edges.size:
        edges = edges[edges[:, 0] != edges[:, 1]]
    if edges.size:
        both = np.vstack([edges, edges[:, ::-1]])
        keys = both[:, 0] * num_vertices + both[:, 1]
        keys = np.unique(keys)
        src = keys // num_vertices
        dst = keys % num_vertices
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)

    offsets = np.zeros(num_vertices + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    offsets = np.cumsum(offsets)
    return Graph(
        num_vertices=num_vertices,
        csr_offsets=offsets,
        csr_targets=dst,
        features=features,
        labels=labels,
        num_classes=num_classes,
        timestamps=timestamps,
    )


def symmetric_normalize(g: Graph) -> NormalizedAdjacency:
    """D̃^{-1/2} (A + I) D̃^{-1/2} where D̃ is the degree matrix of A + I."""
    deg = g.degrees.astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg + 1.0)

    adj = g.adjacency().tolil()
    adj.setdiag(1.0)
    adj = adj.tocsr()
    adj.sort_indices()
    rows = np.repeat(np.arange(g.num_vertices), np.diff(adj.indptr))
    weights = inv_sqrt[rows] * inv_sqrt[adj.indices]
    return NormalizedAdjacency(
        num_vertices=g.num_vertices,
        offsets=adj.indptr.astype(np.int64),
        targets=adj.indices.astype(np.int64),
        weights=weights,
    )


def neighbor_mean(g: Graph, values: np.ndarray) -> np.ndarray:
    """Per-vertex mean of the neighbors' values; isolated vertices keep their own."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != g.num_vertices:
        raise GraphError("values length != num_vertices")
    deg = g.degrees
    sums = np.zeros(g.num_vertices)
    src = np.repeat(np.arange(g.num_vertices), deg)
    np.add.at(sums, src, values[g.csr_targets])
    out = values.copy()
    nz = deg > 0
    out[nz] = sums[nz] / deg[nz]
    return out


def mean_aggregation_weights(g: Graph) -> NormalizedAdjacency:
    """Row-stochastic adjacency (1/deg per neighbor entry, no self-loops).

    Isolated vertices get an empty row, i.e. aggregate to the zero vector.
    """
    deg = g.degrees.astype(np.float64)
    src = np.repeat(np.arange(g.num_vertices), g.degrees)
    weights = 1.0 / deg[src]
    return NormalizedAdjacency(
        num_vertices=g.num_vertices,
        offsets=g.csr_offsets.copy(),
        targets=g.csr_targets.copy(),
        weights=weights,
    )


def homophily_measures(g: Graph) -> HomophilyReport:
    """All homophily measures of a labeled graph.

    Edge counts follow the directed-slot convention (each undirected edge
    counts twice), matching how citation benchmarks report |E|.
    """
    if g.num_edge_slots == 0:
        raise GraphError("homophily undefined on an edgeless graph")
    labels = g.labels
    present = np.unique(labels)
    src = np.repeat(np.arange(g.num_vertices), g.degrees)
    same = labels[src] == labels[g.csr_targets]

    intra = int(same.sum())
    inter = g.num_edge_slots - intra
    graph_level = intra / g.num_edge_slots
    homophily_index = (inter - intra) / g.num_edge_slots

    # vertex level: mean same-label neighbor fraction, isolated vertices skipped
    same_per_vertex = np.zeros(g.num_vertices)
    np.add.at(same_per_vertex, src, same.astype(np.float64))
    deg = g.degrees
    nz = deg > 0
    vertex_level = float(np.mean(same_per_vertex[nz] / deg[nz]))

    # class-insensitive: per-class excess homophily over the class prior
    if g.num_classes < 2:
        raise GraphError("class-insensitive homophily needs >= 2 classes")
    ci = 0.0
    for k in present:
        in_class = labels[src] == k
        incident = int(in_class.sum())
        if incident == 0:
            continue
        h_k = float(same[in_class].sum()) / incident
        ci += max(0.0, h_k - float((labels == k).sum()) / g.num_vertices)
    class_insensitive = ci / (g.num_classes - 1)

    return HomophilyReport(
        graph_level=float(graph_level),
        vertex_level=vertex_level,
        class_insensitive=float(class_insensitive),
        homophily_index=float(homophily_index),
        inter_class_edges=inter,
        intra_class_edges=intra,
    )


def r_hop_mask(g: Graph, r: int) -> sp.csr_matrix:
    """Boolean matrix: (i, j) set iff j is reachable from i in <= r hops, i != j."""
    if r not in (1, 2, 3):
        raise GraphError("r must be in {1, 2, 3}")
    adj = g.adjacency()
    adj.data[:] = 1.0
    reach = adj.copy()
    power = adj
    for _ in range(r - 1):
        power = power @ adj
        reach = reach + power
    reach = sp.csr_matrix(reach)
    reach.setdiag(0)
    reach.eliminate_zeros()
    reach.data = np.ones_like(reach.data, dtype=bool)
    return reach.astype(bool)


def induced_train_graph(g: Graph, keep_mask: np.ndarray):
    """Subgraph over the kept vertices.  Returns (graph, index_map).

    ``index_map[old_id] = new_id`` for kept vertices, -1 otherwise.
    """
    keep_mask = np.asarray(keep_mask, dtype=bool)
    if keep_mask.shape[0] != g.num_vertices:
        raise GraphError("mask length != num_vertices")
    if not keep_mask.any():
        raise GraphError("cannot induce a subgraph on an empty vertex set")

    index_map = np.full(g.num_vertices, -1, dtype=np.int64)
    kept = np.flatnonzero(keep_mask)
    index_map[kept] = np.arange(kept.size)

    src = np.repeat(np.arange(g.num_vertices), g.degrees)
    edge_ok = keep_mask[src] & keep_mask[g.csr_targets]
    new_src = index_map[src[edge_ok]]
    new_dst = index_map[g.csr_targets[edge_ok]]

    offsets = np.zeros(kept.size + 1, dtype=np.int64)
    np.add.at(offsets, new_src + 1, 1)
    offsets = np.cumsum(offsets)
    order = np.lexsort((new_dst, new_src))
    sub = Graph(
        num_vertices=int(kept.size),
        csr_offsets=offsets,
        csr_targets=new_dst[order],
        features=g.features[kept],
        labels=g.labels[kept],
        num_classes=g.num_classes,
        timestamps=None if g.timestamps is None else g.timestamps[kept],
    )
    return sub, index_map
