"""Full-batch multi-task training with Adam and decoupled weight decay.

One run is a pure function of (dataset, config): the graph is built once,
parameters are seeded, and every epoch records a fresh tape, computes the
summed loss, backpropagates, and applies one Adam step. Triplet negatives
are resampled each epoch from a per-epoch stream derived from the run
seed. Weight decay is decoupled (p -= lr * wd * p after the Adam update)
and skips biases and edge embeddings.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .graph import GraphConfig, build, message_matrices
from .losses import LossBreakdown, LossConfig, total_loss
from .model import HyperParams, ModelParams, forward, init_params
from .rng import derive_seed

log = logging.getLogger("regionvec")


@dataclass(frozen=True)
class TrainConfig:
    views: tuple[str, ...] = ("mobility", "income")
    dim: int = 144
    epochs: int = 1000
    lr: float = 1e-3
    weight_decay: float = 1e-5
    margin: float = 1.0
    k_demo: int = 10
    k_mobility: int = 20
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("need epochs >= 1, lr > 0, weight_decay >= 0")


@dataclass
class TrainResult:
    embeddings: np.ndarray            # n x dim
    history: list[LossBreakdown]
    config: TrainConfig
    wall_time: float


@dataclass
class AdamState:
    step: int = 0
    first: dict[int, np.ndarray] = field(default_factory=dict)
    second: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[tuple[str, ad.Tensor, bool]], state: AdamState,
              lr: float, weight_decay: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with bias correction, then decoupled decay on the
    tensors flagged for it."""
    state.step += 1
    t = state.step
    for _, tensor, decay in params:
        g = tensor.grad
        key = id(tensor)
        m = state.first.setdefault(key, np.zeros_like(tensor.values))
        v = state.second.setdefault(key, np.zeros_like(tensor.values))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        tensor.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if decay and weight_decay > 0:
            tensor.values -= lr * weight_decay * tensor.values


def train(dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    start = time.perf_counter()
    graph = build(dataset, GraphConfig(views=tuple(cfg.views), k_demo=cfg.k_demo,
                                       k_mobility=cfg.k_mobility))
    hp = HyperParams(dim=cfg.dim)
    params = init_params(cfg.seed, graph.n, graph.relations, hp)
    named = params.named()
    messages = message_matrices(graph)
    state = AdamState()
    history: list[LossBreakdown] = []

    for epoch in range(cfg.epochs):
        loss_cfg = LossConfig(margin=cfg.margin,
                              seed=derive_seed(cfg.seed, "epoch", str(epoch)))
        for _, tensor, _ in named:
            tensor.reset_grad()
        with ad.Tape() as tape:
            output = forward(graph, params, hp, messages)
            total, breakdown = total_loss(graph, output, loss_cfg)
            tape.backward(total)
        adam_step(named, state, cfg.lr, cfg.weight_decay)
        for name, tensor, _ in named:
            if not np.isfinite(tensor.values).all():
                raise FloatingPointError(
                    f"parameter {name} became non-finite at epoch {epoch}")
        history.append(breakdown)
        if cfg.log_every and (epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1):
            log.info("epoch %d total=%.6f", epoch, breakdown.total)

    with ad.Tape():
        final = forward(graph, params, hp, messages)
    return TrainResult(embeddings=final.unified.values.copy(), history=history,
                       config=cfg, wall_time=time.perf_counter() - start)


def export_embeddings(embeddings: np.ndarray, path: str | Path) -> None:
    """Write `region_id,e0,...,e{d-1}` rows with full-precision floats."""
    emb = np.asarray(embeddings, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["region_id"] + [f"e{j}" for j in range(emb.shape[1])])
        for i, row in enumerate(emb):
            writer.writerow([i] + [repr(float(x)) for x in row])


def import_embeddings(path: str | Path) -> np.ndarray:
    """Read an embedding file back; inverse of export_embeddings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 1
        rows = {}
        for row in reader:
            rows[int(row[0])] = [float(x) for x in row[1:]]
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ValueError("embedding file region ids are not dense 0..n-1")
    out = np.zeros((n, dim))
    for i in range(n):
        out[i] = rows[i]
    return out
