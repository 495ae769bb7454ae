"""Probability-vector utilities: normalization, smoothed divergences, similarity.

KL and JS divergence are computed in log base 2, which puts JS in [0, 1]
for any pair of distributions. Both inputs are eps-smoothed before the KL
sum (1e-12 added to every entry, then renormalized): this keeps KL finite
on disjoint supports and keeps gradients defined when these formulas are
rebuilt inside the training losses.

Pairwise similarity between region distributions is 1 - JS, so identical
rows score 1 and disjoint rows score ~0.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale a nonnegative vector to sum 1.

    Raises ValueError on negative entries or an all-zero vector
    ("degenerate distribution").
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a vector, got shape {arr.shape}")
    if (arr < 0).any():
        raise ValueError("negative entry in distribution input")
    total = arr.sum()
    if total <= 0.0:
        raise ValueError("degenerate distribution: all entries zero")
    return arr / total


def _smooth(p: np.ndarray) -> np.ndarray:
    q = p + EPS
    return q / q.sum()


def kl(p: np.ndarray, q: np.ndarray) -> float:
    """Base-2 KL divergence of eps-smoothed p from eps-smoothed q.

    With smoothing no entry is zero, so the 0*log(0/q) = 0 convention never
    has to be applied explicitly.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    ps = _smooth(p)
    qs = _smooth(q)
    return float(np.sum(ps * np.log2(ps / qs)))


def js(p: np.ndarray, q: np.ndarray) -> float:
    """Base-2 Jensen-Shannon divergence, in [0, 1].

    js(p, q) = kl(p, m)/2 + kl(q, m)/2 with m the pointwise mean of the raw
    inputs; the smoothing lives inside kl. Symmetric by construction.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    m = (p + q) / 2.0
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def js_pairwise(rows: np.ndarray) -> np.ndarray:
    """n x n matrix of JS divergences between the rows of an n x B matrix."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected an n x B matrix, got shape {rows.shape}")
    p = rows[:, None, :]
    q = rows[None, :, :]
    m = (p + q) / 2.0
    ps = p + EPS
    ps = ps / ps.sum(axis=2, keepdims=True)
    qs = q + EPS
    qs = qs / qs.sum(axis=2, keepdims=True)
    ms = m + EPS
    ms = ms / ms.sum(axis=2, keepdims=True)
    kl_pm = np.sum(ps * np.log2(ps / ms), axis=2)
    kl_qm = np.sum(qs * np.log2(qs / ms), axis=2)
    return 0.5 * kl_pm + 0.5 * kl_qm


def similarity_matrix(rows: np.ndarray) -> np.ndarray:
    """Pairwise similarity S[i, j] = 1 - js(row_i, row_j).

    Symmetric with unit diagonal; entries in [0, 1].
    """
    return 1.0 - js_pairwise(rows)
