"""Multi-task pretraining losses over the per-relation embeddings.

Four term families, one per view:

    neighbor   triplet hinge: mean over adjacency pairs (i, j) of
               max(0, |h_i - h_j|^2 - |h_i - h_k|^2 + margin) with one
               negative k drawn uniformly from the non-neighbors of i
    poi        squared error between the POI similarity matrix and the
               pairwise cosines of the POI-relation embeddings
    mobility   bounded divergence between the observed outflow/inflow
               distributions and softmax predictions from source/target
               embeddings, averaged over unmasked rows in both directions
    demo       same shape per attribute: similarity-derived neighbor
               distributions vs a softmax over the other regions

The distribution terms use base-2 Jensen-Shannon divergence, which is
bounded by 1, so all active terms land on comparable scales; an unbounded
KL variant (prediction against the sparse observed distribution) is kept
selectable for the mobility term to measure exactly how lopsided the
objective becomes without the bounded divergence.

The total is the plain unweighted sum of the active terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .divergence import EPS
from .graph import MOBILITY_SRC, MOBILITY_DST, NEIGHBOR, POI, HeteroGraph, demo_relation
from .model import ModelOutput
from .rng import Stream

_INV_LN2 = 1.0 / math.log(2.0)
_NO_SELF_SCORE = -1e9


@dataclass
class LossBreakdown:
    l_n: float = 0.0
    l_poi: float = 0.0
    l_mobility: float = 0.0
    l_demo: dict[str, float] = field(default_factory=dict)
    total: float = 0.0


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    seed: int = 0
    mobility_divergence: str = "js"   # "js" (bounded) or "kl" (diagnostic)


def _log2(t: ad.Tensor) -> ad.Tensor:
    return ad.log(t) * _INV_LN2


def _row_sums(t: ad.Tensor) -> ad.Tensor:
    return t @ ad.constant(np.ones((t.shape[1], 1)))


def _divergence_rows(targets: np.ndarray, predicted: ad.Tensor,
                     kind: str) -> ad.Tensor:
    """Per-row divergence between constant target rows and predicted rows.

    Both sides get the same eps smoothing as the reference implementation
    in :mod:`regionvec.divergence`; rows must already sum to 1 (or to 0 for
    masked target rows, which smooth to uniform and are excluded by the
    caller's weights).
    """
    cols = targets.shape[1]
    denom = 1.0 + cols * EPS
    ps = (targets + EPS) / np.maximum(targets.sum(axis=1, keepdims=True) + cols * EPS,
                                      EPS)
    log_ps = np.log2(ps)
    qs = (predicted + ad.constant(np.full(predicted.shape, EPS))) * (1.0 / denom)
    log_qs = _log2(qs)
    if kind == "kl":
        return _row_sums(qs * (log_qs - ad.constant(log_ps)))
    if kind != "js":
        raise ValueError(f"unknown divergence kind {kind!r}")
    mid = (ad.constant(ps) + qs) * 0.5
    log_mid = _log2(mid)
    kl_p = ad.constant((ps * log_ps).sum(axis=1, keepdims=True)) \
        - _row_sums(ad.constant(ps) * log_mid)
    kl_q = _row_sums(qs * (log_qs - log_mid))
    return (kl_p + kl_q) * 0.5


def _masked_row_mean(rows: ad.Tensor, mask: np.ndarray) -> ad.Tensor:
    count = int(mask.sum())
    weights = np.where(mask, 1.0 / count, 0.0).reshape(1, -1)
    return ad.constant(weights) @ rows


def sample_triplet_negatives(pairs: np.ndarray, n: int, seed: int) -> np.ndarray:
    """One uniform non-neighbor of each pair's anchor (the lower id).

    Pairs are taken in canonical sorted order so the draw only depends on
    the pair set and the seed, not on input ordering.
    """
    pairs = _canonical_pairs(pairs)
    adjacent: dict[int, set[int]] = {}
    for a, b in pairs:
        adjacent.setdefault(int(a), set()).add(int(b))
        adjacent.setdefault(int(b), set()).add(int(a))
    draws = Stream(seed, "negatives").uniforms(len(pairs))
    negatives = np.empty(len(pairs), dtype=np.int64)
    for p, (i, _) in enumerate(pairs):
        candidates = [k for k in range(n)
                      if k != i and k not in adjacent.get(int(i), ())]
        if not candidates:
            raise ValueError(f"region {i} has no non-neighbors to sample")
        negatives[p] = candidates[min(int(draws[p] * len(candidates)),
                                      len(candidates) - 1)]
    return negatives


def _canonical_pairs(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def neighbor_triplet_loss(h: ad.Tensor, pairs: np.ndarray, margin: float,
                          negatives: np.ndarray) -> ad.Tensor:
    pairs = _canonical_pairs(pairs)
    if pairs.shape[0] == 0:
        raise ValueError("need at least one neighbor pair")
    anchors = ad.gather_rows(h, pairs[:, 0])
    positives = ad.gather_rows(h, pairs[:, 1])
    negs = ad.gather_rows(h, np.asarray(negatives, dtype=np.int64))
    d_pos = _row_sums(ad.square(anchors - positives))
    d_neg = _row_sums(ad.square(anchors - negs))
    hinge = ad.clamp_min(d_pos - d_neg + ad.constant(np.full(d_pos.shape, margin)),
                         0.0)
    return ad.total_mean(hinge)


def poi_recon_loss(h: ad.Tensor, s_poi: np.ndarray) -> ad.Tensor:
    """Mean squared gap between embedding cosines and the POI similarities."""
    if s_poi.shape != (h.shape[0], h.shape[0]):
        raise ValueError(f"similarity shape {s_poi.shape} does not match {h.shape}")
    sq_norms = _row_sums(ad.square(h))
    inv_norms = ad.rsqrt(ad.clamp_min(sq_norms, 1e-24))  # guards |h| >= 1e-12
    unit = (inv_norms @ ad.constant(np.ones((1, h.shape[1])))) * h
    cosines = unit @ ad.transpose(unit)
    return ad.total_mean(ad.square(cosines - ad.constant(s_poi)))


def mobility_js_loss(h_src: ad.Tensor, h_dst: ad.Tensor, p_out: np.ndarray,
                     p_in: np.ndarray, out_mask: np.ndarray, in_mask: np.ndarray,
                     kind: str = "js") -> ad.Tensor:
    """Match softmax flow predictions against both trip distributions."""
    if not out_mask.any() or not in_mask.any():
        raise ValueError("all trip rows are masked; mobility loss undefined")
    q_out = ad.softmax_rows(h_src @ ad.transpose(h_dst))
    q_in = ad.softmax_rows(h_dst @ ad.transpose(h_src))
    out_term = _masked_row_mean(_divergence_rows(p_out, q_out, kind), out_mask)
    in_term = _masked_row_mean(_divergence_rows(p_in, q_in, kind), in_mask)
    return (out_term + in_term) * 0.5


def demo_js_loss(h: ad.Tensor, s_demo: np.ndarray) -> ad.Tensor:
    """JS gap between similarity-derived neighbor distributions and softmax
    affinities over the other regions (self excluded on both sides)."""
    n = h.shape[0]
    targets = s_demo.copy()
    np.fill_diagonal(targets, 0.0)
    sums = targets.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        bad = int(np.flatnonzero(sums <= 0)[0])
        raise ValueError(f"row {bad} of the similarity matrix has no off-diagonal mass")
    targets = targets / sums
    scores = h @ ad.transpose(h) + ad.constant(np.diag(np.full(n, _NO_SELF_SCORE)))
    q = ad.softmax_rows(scores)
    return ad.total_mean(_divergence_rows(targets, q, "js"))


def total_loss(graph: HeteroGraph, output: ModelOutput, cfg: LossConfig,
               ) -> tuple[ad.Tensor, LossBreakdown]:
    """Sum the active view terms; inactive terms are exactly zero."""
    breakdown = LossBreakdown()
    total: ad.Tensor | None = None

    def accumulate(term: ad.Tensor) -> float:
        nonlocal total
        total = term if total is None else total + term
        return term.item()

    if NEIGHBOR in graph.relations:
        negatives = sample_triplet_negatives(graph.neighbor_pairs, graph.n, cfg.seed)
        breakdown.l_n = accumulate(neighbor_triplet_loss(
            output.shared[NEIGHBOR], graph.neighbor_pairs, cfg.margin, negatives))
    if POI in graph.relations:
        breakdown.l_poi = accumulate(poi_recon_loss(output.shared[POI], graph.s_poi))
    if MOBILITY_SRC in graph.relations:
        breakdown.l_mobility = accumulate(mobility_js_loss(
            output.shared[MOBILITY_SRC], output.shared[MOBILITY_DST],
            graph.p_out, graph.p_in, graph.out_mask, graph.in_mask,
            cfg.mobility_divergence))
    for attr in graph.demo_attrs:
        term = accumulate(demo_js_loss(output.shared[demo_relation(attr)],
                                       graph.s_demo[attr]))
        breakdown.l_demo[attr] = term
    if total is None:
        raise ValueError("no active loss terms")
    breakdown.total = total.item()
    return total, breakdown
