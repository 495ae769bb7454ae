"""Three-stage multi-relation embedding network.

Stage 1, relation-aware graph convolution with a learnable per-relation
edge embedding: starting from the shared node table X, each layer computes

    H_r <- LeakyReLU( M_r (H_r W_r) + 1 (b_r + e_r) )

where M_r[v, u] = w_uv / max(1, indeg_r(v)) aggregates weighted incoming
messages and e_r is the relation's edge embedding (added to every node,
so isolated nodes receive LeakyReLU(b_r + e_r)).

Stage 2, per-node self-attention across relations: with Z_v the R x d stack
of relation embeddings of node v,

    A_v = softmax_rows( (Z_v W_q)(Z_v W_k)^T / sqrt(d) )
    H'_v = Z_v + A_v (Z_v W_v)

computed for all nodes at once by looping over relation pairs instead of
nodes (everything stays 2-D).

Stage 3, attention fusion into one embedding per node:

    score_r(v) = q_f . tanh(H'_r[v] W_f),   alpha(v) = softmax_r(score)
    E[v] = sum_r alpha_r(v) H'_r[v]

so each unified embedding is a convex combination of its relation
embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import HeteroGraph, message_matrices
from .rng import Stream


@dataclass(frozen=True)
class HyperParams:
    dim: int = 144
    gcn_layers: int = 2
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.dim < 2 or self.gcn_layers < 1:
            raise ValueError("need dim >= 2 and gcn_layers >= 1")


@dataclass
class RelationParams:
    weight: ad.Tensor      # d x d
    bias: ad.Tensor        # 1 x d
    edge: ad.Tensor        # 1 x d, the relation's edge embedding


@dataclass
class ModelParams:
    nodes: ad.Tensor                      # n x d node table
    relations: dict[str, RelationParams]
    w_query: ad.Tensor
    w_key: ad.Tensor
    w_value: ad.Tensor
    w_fuse: ad.Tensor
    q_fuse: ad.Tensor                     # 1 x d

    def named(self) -> list[tuple[str, ad.Tensor, bool]]:
        """(name, tensor, apply_weight_decay) for every learnable tensor."""
        out = [("nodes", self.nodes, True)]
        for rel, p in self.relations.items():
            out.append((f"{rel}.weight", p.weight, True))
            out.append((f"{rel}.bias", p.bias, False))
            out.append((f"{rel}.edge", p.edge, False))
        out += [("w_query", self.w_query, True), ("w_key", self.w_key, True),
                ("w_value", self.w_value, True), ("w_fuse", self.w_fuse, True),
                ("q_fuse", self.q_fuse, True)]
        return out

    def tensors(self) -> list[ad.Tensor]:
        return [t for _, t, _ in self.named()]


@dataclass
class ModelOutput:
    shared: dict[str, ad.Tensor]   # post-attention per-relation embeddings
    unified: ad.Tensor             # n x d
    fusion_weights: np.ndarray     # n x R, detached copy


def _xavier(stream: Stream, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return (2.0 * stream.uniforms(rows * cols) - 1.0).reshape(rows, cols) * bound


def init_params(seed: int, n: int, relations: tuple[str, ...],
                hp: HyperParams) -> ModelParams:
    """Xavier-uniform matrices, zero biases and edge embeddings; the fill
    order is fixed (node table, relations in graph order, attention,
    fusion) so a seed pins every byte."""
    if not relations:
        raise ValueError("need at least one relation")
    d = hp.dim
    stream = Stream(seed, "init")
    nodes = ad.Tensor(_xavier(stream, n, d), requires_grad=True)
    rel_params = {}
    for rel in relations:
        rel_params[rel] = RelationParams(
            weight=ad.Tensor(_xavier(stream, d, d), requires_grad=True),
            bias=ad.Tensor(np.zeros((1, d)), requires_grad=True),
            edge=ad.Tensor(np.zeros((1, d)), requires_grad=True),
        )
    return ModelParams(
        nodes=nodes,
        relations=rel_params,
        w_query=ad.Tensor(_xavier(stream, d, d), requires_grad=True),
        w_key=ad.Tensor(_xavier(stream, d, d), requires_grad=True),
        w_value=ad.Tensor(_xavier(stream, d, d), requires_grad=True),
        w_fuse=ad.Tensor(_xavier(stream, d, d), requires_grad=True),
        q_fuse=ad.Tensor(_xavier(stream, 1, d), requires_grad=True),
    )


def jitter_params(params: ModelParams, seed: int, scale: float = 0.5) -> None:
    """Nudge every parameter off its initialization point.

    Zero-initialized biases and edge embeddings put isolated nodes exactly
    on the leaky-relu kink, where finite differences straddle two slopes;
    gradient checks must run at a generic smooth point instead.
    """
    stream = Stream(seed, "jitter")
    for _, tensor, _ in params.named():
        tensor.values += scale * stream.normals(tensor.values.size).reshape(
            tensor.values.shape)


def relation_gcn(graph: HeteroGraph, params: ModelParams, hp: HyperParams,
                 messages: dict[str, np.ndarray] | None = None,
                 ) -> dict[str, ad.Tensor]:
    if messages is None:
        messages = message_matrices(graph)
    ones_col = ad.constant(np.ones((graph.n, 1)))
    out = {}
    for rel in graph.relations:
        rp = params.relations[rel]
        agg = ad.constant(messages[rel])
        h = params.nodes
        for _ in range(hp.gcn_layers):
            h = ad.leaky_relu(agg @ (h @ rp.weight) + ones_col @ (rp.bias + rp.edge),
                              hp.leaky_slope)
        out[rel] = h
    return out


def attention_share(h_by_rel: dict[str, ad.Tensor], params: ModelParams,
                    hp: HyperParams) -> dict[str, ad.Tensor]:
    rels = list(h_by_rel)
    r = len(rels)
    d = hp.dim
    scale = 1.0 / math.sqrt(d)
    ones_row = ad.constant(np.ones((d, 1)))
    ones_d = ad.constant(np.ones((1, d)))
    queries = {rel: h_by_rel[rel] @ params.w_query for rel in rels}
    keys = {rel: h_by_rel[rel] @ params.w_key for rel in rels}
    values = {rel: h_by_rel[rel] @ params.w_value for rel in rels}
    out = {}
    for a in rels:
        # per-node scores against every relation: column b is q_a . k_b
        cols = [ad.transpose((queries[a] * keys[b]) @ ones_row) for b in rels]
        scores = ad.transpose(ad.concat_rows(cols)) * scale      # n x R
        attn = ad.softmax_rows(scores)
        mixed = None
        for j, b in enumerate(rels):
            pick = np.zeros((r, 1))
            pick[j, 0] = 1.0
            weight_col = attn @ ad.constant(pick)                # n x 1
            term = (weight_col @ ones_d) * values[b]
            mixed = term if mixed is None else mixed + term
        out[a] = h_by_rel[a] + mixed
    return out


def fuse(h_by_rel: dict[str, ad.Tensor], params: ModelParams,
         ) -> tuple[ad.Tensor, np.ndarray]:
    rels = list(h_by_rel)
    r = len(rels)
    n, d = h_by_rel[rels[0]].shape
    ones_d = ad.constant(np.ones((1, d)))
    q_col = ad.transpose(params.q_fuse)
    cols = [ad.transpose(ad.tanh(h_by_rel[rel] @ params.w_fuse) @ q_col)
            for rel in rels]
    alpha = ad.softmax_rows(ad.transpose(ad.concat_rows(cols)))  # n x R
    unified = None
    for j, rel in enumerate(rels):
        pick = np.zeros((r, 1))
        pick[j, 0] = 1.0
        weight_col = alpha @ ad.constant(pick)
        term = (weight_col @ ones_d) * h_by_rel[rel]
        unified = term if unified is None else unified + term
    return unified, alpha.values.copy()


def forward(graph: HeteroGraph, params: ModelParams, hp: HyperParams,
            messages: dict[str, np.ndarray] | None = None) -> ModelOutput:
    h_gcn = relation_gcn(graph, params, hp, messages)
    shared = attention_share(h_gcn, params, hp)
    unified, alpha = fuse(shared, params)
    return ModelOutput(shared=shared, unified=unified, fusion_weights=alpha)
