"""Heterogeneous region graph construction from the raw data views.

Each requested view becomes one or two typed edge relations over the same
node set, plus the per-row target objects that the losses match against:

    neighbor       both directions of every adjacency pair, weight 1
    poi            top-k edges under cosine similarity of POI count rows
    mobility_src   top-k entries of each row-normalized trip row
    mobility_dst   top-k entries of each column-normalized trip column
    demo:<attr>    top-k edges under 1 - JS similarity of normalized bins

Demographic and POI edges never include self-loops; mobility edges may
(intra-region trips are real flows). Regions whose trip row or column is
all zero are masked out of the mobility targets rather than smoothed into
fabricated uniform flows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Dataset
from .divergence import normalize, similarity_matrix

NEIGHBOR = "neighbor"
POI = "poi"
MOBILITY_SRC = "mobility_src"
MOBILITY_DST = "mobility_dst"
BUILTIN_VIEWS = ("neighbor", "poi", "mobility")


def demo_relation(attr: str) -> str:
    return f"demo:{attr}"


EdgeList = tuple[np.ndarray, np.ndarray, np.ndarray]  # (src, dst, weight > 0)


@dataclass(frozen=True)
class GraphConfig:
    views: tuple[str, ...]
    k_demo: int = 10
    k_mobility: int = 20


@dataclass
class HeteroGraph:
    n: int
    relations: tuple[str, ...]               # canonical order
    edges: dict[str, EdgeList]
    neighbor_pairs: np.ndarray | None = None  # m x 2, canonical (a < b) rows
    s_poi: np.ndarray | None = None
    p_out: np.ndarray | None = None          # row i: outflow distribution
    p_in: np.ndarray | None = None           # row j: inflow distribution
    out_mask: np.ndarray | None = None       # False = all-zero trip row, excluded
    in_mask: np.ndarray | None = None
    s_demo: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def demo_attrs(self) -> tuple[str, ...]:
        return tuple(sorted(self.s_demo))


def topk_edges(s: np.ndarray, k: int) -> EdgeList:
    """Directed edges from each node to its k most similar others.

    Ties break toward the lower region id; self-loops are excluded, so k
    must be at most n - 1. Edge weight is the similarity itself.
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if s.shape != (n, n):
        raise ValueError(f"similarity matrix must be square, got {s.shape}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, n-1], got k={k} with n={n}")
    src = np.repeat(np.arange(n), k)
    dst = np.empty(n * k, dtype=np.int64)
    for i in range(n):
        order = np.lexsort((np.arange(n), -s[i]))
        dst[i * k:(i + 1) * k] = order[order != i][:k]
    return src, dst, s[src, dst].copy()


def cosine_rows(m: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of rows, unit diagonal, zero-row guard."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.maximum(np.linalg.norm(m, axis=1), 1e-12)
    sim = (m / norms[:, None]) @ (m / norms[:, None]).T
    np.fill_diagonal(sim, 1.0)
    return sim


def _row_topk(weights: np.ndarray, k: int) -> EdgeList:
    """Top-k positive entries per row (self-loops allowed, zeros dropped)."""
    n = weights.shape[0]
    k = min(k, n)
    srcs, dsts, ws = [], [], []
    for i in range(n):
        order = np.lexsort((np.arange(n), -weights[i]))[:k]
        keep = order[weights[i, order] > 0]
        srcs.append(np.full(keep.size, i, dtype=np.int64))
        dsts.append(keep)
        ws.append(weights[i, keep])
    return (np.concatenate(srcs), np.concatenate(dsts), np.concatenate(ws))


def build(dataset: Dataset, cfg: GraphConfig) -> HeteroGraph:
    """Assemble the heterogeneous graph for the requested views."""
    views = tuple(cfg.views)
    if not views:
        raise DataError("empty view set")
    known = set(BUILTIN_VIEWS) | set(dataset.demographics)
    for view in views:
        if view not in known:
            raise DataError(
                f"unknown view {view!r}; valid views: {', '.join(sorted(known))}")

    n = dataset.n
    graph = HeteroGraph(n=n, relations=(), edges={})
    relations: list[str] = []

    if NEIGHBOR in views:
        pairs = np.array(dataset.adjacency, dtype=np.int64).reshape(-1, 2)
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        graph.edges[NEIGHBOR] = (src, dst, np.ones(src.size))
        graph.neighbor_pairs = pairs
        relations.append(NEIGHBOR)

    if POI in views:
        graph.s_poi = cosine_rows(dataset.poi_counts)
        graph.edges[POI] = topk_edges(graph.s_poi, cfg.k_demo)
        relations.append(POI)

    if "mobility" in views:
        trips = dataset.trips
        if not (trips > 0).any():
            raise DataError("mobility view requested but trips are all zero")
        row_sums = trips.sum(axis=1)
        col_sums = trips.sum(axis=0)
        graph.out_mask = row_sums > 0
        graph.in_mask = col_sums > 0
        graph.p_out = np.divide(trips, row_sums[:, None],
                                out=np.zeros_like(trips), where=graph.out_mask[:, None])
        graph.p_in = np.divide(trips.T, col_sums[:, None],
                               out=np.zeros_like(trips), where=graph.in_mask[:, None])
        graph.edges[MOBILITY_SRC] = _row_topk(graph.p_out, cfg.k_mobility)
        # dst edges point into each destination from its top origins
        in_src, in_dst, in_w = _row_topk(graph.p_in, cfg.k_mobility)
        graph.edges[MOBILITY_DST] = (in_dst, in_src, in_w)
        relations.extend([MOBILITY_SRC, MOBILITY_DST])

    for attr in sorted(v for v in views if v not in BUILTIN_VIEWS):
        rows = np.stack([normalize(row) for row in dataset.demographics[attr]])
        sim = similarity_matrix(rows)
        graph.s_demo[attr] = sim
        graph.edges[demo_relation(attr)] = topk_edges(sim, cfg.k_demo)
        relations.append(demo_relation(attr))

    graph.relations = tuple(relations)
    return graph


def message_matrices(graph: HeteroGraph) -> dict[str, np.ndarray]:
    """Dense per-relation aggregation operators M[v, u] = w_uv / max(1, indeg(v))."""
    out = {}
    for rel, (src, dst, w) in graph.edges.items():
        mat = np.zeros((graph.n, graph.n))
        np.add.at(mat, (dst, src), w)
        indeg = np.bincount(dst, minlength=graph.n)
        mat /= np.maximum(indeg, 1)[:, None]
        out[rel] = mat
    return out
