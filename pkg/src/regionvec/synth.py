"""Deterministic synthetic cities with planted structure.

A city is a g x g grid of regions with 4-neighborhood adjacency. Each
region gets a latent cluster; clusters drive the income-bin profile, the
POI category mix, and (through a gravity model with an income-similarity
boost) the origin-destination trips. Labels are exact linear functions of
z-scored latent factors plus Gaussian noise:

    checkin = 1.0 * outflow_z                      + e,  e ~ N(0, noise)
    crime   = -1.0 * income_z                      + e
    price   = 0.8 * income_z + 0.6 * poi_z         + e

where ``outflow_z`` is the z-scored total outgoing trip count,
``income_z`` the z-scored mean income bin (from the normalized income
distribution), and ``poi_z`` the z-scored POI total. The factors and noise
draws are written to a ``latents.csv`` sidecar so tests can reconstruct
labels exactly; the training pipeline never reads it.

All randomness is drawn from per-purpose SplitMix64 streams, so the same
spec always produces byte-identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset
from .divergence import normalize, similarity_matrix
from .rng import Stream

DEMO_ATTRS = ("income", "age", "education", "employment", "foreign_born")

LABEL_WEIGHTS: dict[str, dict[str, float]] = {
    "checkin": {"outflow_z": 1.0},
    "crime": {"income_z": -1.0},
    "price": {"income_z": 0.8, "poi_z": 0.6},
}

_TRIPS_PER_REGION = 50
_POI_RATE = 0.03          # POIs per unit population
_INCOME_JITTER = 0.35     # within-cluster log-perturbation of income profiles
_ATTR_JITTER = 0.5
_PROFILE_SPREAD = 0.9


@dataclass(frozen=True)
class SynthSpec:
    grid_side: int = 6
    seed: int = 0
    clusters: int = 3
    noise: float = 0.1
    bins: int = 10
    poi_categories: int = 6

    def __post_init__(self):
        if self.grid_side < 2:
            raise ValueError("grid_side must be >= 2")
        if self.clusters < 2:
            raise ValueError("clusters must be >= 2")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.bins < 2 or self.poi_categories < 1:
            raise ValueError("bins must be >= 2 and poi_categories >= 1")

    @property
    def n(self) -> int:
        return self.grid_side * self.grid_side


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _zscore(x: np.ndarray) -> np.ndarray:
    std = float(x.std())
    return (x - x.mean()) / (std if std > 0 else 1.0)


def _grid_pairs(g: int) -> list[tuple[int, int]]:
    pairs = []
    for r in range(g):
        for c in range(g):
            i = r * g + c
            if c + 1 < g:
                pairs.append((i, i + 1))
            if r + 1 < g:
                pairs.append((i, i + g))
    return sorted(pairs)


def _assign_clusters(spec: SynthSpec, coords: np.ndarray) -> np.ndarray:
    centers = Stream(spec.seed, "clusters").permutation(spec.n)[: spec.clusters]
    d = np.linalg.norm(coords[:, None, :] - coords[centers][None, :, :], axis=2)
    return d.argmin(axis=1)  # ties go to the lower cluster index


def _binned_attribute(spec: SynthSpec, attr: str, cluster: np.ndarray,
                      pop: np.ndarray) -> np.ndarray:
    """Per-region bin counts for one demographic attribute."""
    n, b = spec.n, spec.bins
    stream = Stream(spec.seed, f"demographics:{attr}")
    if attr == "income":
        # ordered, well-separated cluster profiles: the planted signal
        mu = (np.arange(spec.clusters) + 0.5) * b / spec.clusters - 0.5
        sigma = b / (2.0 * spec.clusters)
        base = -((np.arange(b)[None, :] - mu[:, None]) ** 2) / (2.0 * sigma**2)
        jitter = _INCOME_JITTER
    else:
        base = _PROFILE_SPREAD * stream.normals(spec.clusters * b).reshape(spec.clusters, b)
        jitter = _ATTR_JITTER
    logits = base[cluster] + jitter * stream.normals(n * b).reshape(n, b)
    counts = np.floor(pop[:, None] * _softmax_rows(logits) + 0.5)
    for i in np.flatnonzero(counts.sum(axis=1) == 0):
        counts[i, int(logits[i].argmax())] = 1.0
    return counts


def _poi_counts(spec: SynthSpec, cluster: np.ndarray, pop: np.ndarray) -> np.ndarray:
    n, c = spec.n, spec.poi_categories
    stream = Stream(spec.seed, "poi")
    base = _PROFILE_SPREAD * stream.normals(spec.clusters * c).reshape(spec.clusters, c)
    probs = _softmax_rows(base[cluster] + 0.4 * stream.normals(n * c).reshape(n, c))
    counts = np.zeros((n, c), dtype=np.int64)
    for i in range(n):
        total = max(3, int(round(pop[i] * _POI_RATE)))
        draws = np.searchsorted(np.cumsum(probs[i]), stream.uniforms(total), side="right")
        counts[i] = np.bincount(np.minimum(draws, c - 1), minlength=c)
    return counts


def _sample_trips(spec: SynthSpec, coords: np.ndarray, pop: np.ndarray,
                  income: np.ndarray) -> np.ndarray:
    """Gravity-model trip counts: weight ~ pop_i*pop_j*exp(-dist)*(1+income sim)."""
    n = spec.n
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    income_rows = np.stack([normalize(row) for row in income])
    sim = similarity_matrix(income_rows)
    weight = np.outer(pop, pop) * np.exp(-dist) * (1.0 + sim)
    cum = np.cumsum(weight.ravel() / weight.sum())
    draws = Stream(spec.seed, "trips").uniforms(_TRIPS_PER_REGION * n)
    cells = np.minimum(np.searchsorted(cum, draws, side="right"), n * n - 1)
    return np.bincount(cells, minlength=n * n).reshape(n, n).astype(np.float64)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def generate_city(spec: SynthSpec, out_dir: str | Path) -> Dataset:
    """Write a synthetic city to ``out_dir`` and return it loaded back."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g, n = spec.grid_side, spec.n
    coords = np.array([(i // g, i % g) for i in range(n)], dtype=np.float64)

    cluster = _assign_clusters(spec, coords)
    z_pop = Stream(spec.seed, "population").normals(n)
    pop = np.round(400.0 * np.exp(0.6 * z_pop)).astype(np.int64) + 50

    demo = {attr: _binned_attribute(spec, attr, cluster, pop) for attr in DEMO_ATTRS}
    poi = _poi_counts(spec, cluster, pop)
    trips = _sample_trips(spec, coords, pop, demo["income"])

    income_rows = np.stack([normalize(row) for row in demo["income"]])
    factors = {
        "outflow_z": _zscore(trips.sum(axis=1)),
        "income_z": _zscore(income_rows @ np.arange(spec.bins)),
        "poi_z": _zscore(poi.sum(axis=1).astype(np.float64)),
    }
    noise = {
        task: spec.noise * Stream(spec.seed, f"noise:{task}").normals(n)
        for task in LABEL_WEIGHTS
    }
    labels = {
        task: sum(w * factors[f] for f, w in LABEL_WEIGHTS[task].items()) + noise[task]
        for task in LABEL_WEIGHTS
    }

    _write_csv(out / "regions.csv", ["region_id", "name"],
               [(i, f"r{int(coords[i, 0])}_{int(coords[i, 1])}") for i in range(n)])
    _write_csv(out / "adjacency.csv", ["region_a", "region_b"], _grid_pairs(g))
    _write_csv(out / "trips.csv", ["origin_id", "dest_id", "count"],
               [(i, j, int(trips[i, j]))
                for i in range(n) for j in range(n) if trips[i, j] > 0])
    _write_csv(out / "poi.csv", ["region_id", "category", "count"],
               [(i, f"c{j:02d}", int(poi[i, j]))
                for i in range(n) for j in range(spec.poi_categories) if poi[i, j] > 0])
    _write_csv(out / "demographics.csv",
               ["region_id", "attribute", "bin_index", "population"],
               [(i, attr, b, int(demo[attr][i, b]))
                for attr in DEMO_ATTRS for i in range(n)
                for b in range(spec.bins) if demo[attr][i, b] > 0])
    _write_csv(out / "labels.csv", ["region_id", "task", "value"],
               [(i, task, _fmt(labels[task][i]))
                for task in LABEL_WEIGHTS for i in range(n)])
    _write_csv(out / "latents.csv", ["region_id", "factor", "value"],
               [(i, name, _fmt(values[i]))
                for name, values in list(factors.items())
                + [(f"noise_{t}", noise[t]) for t in LABEL_WEIGHTS]
                for i in range(n)])
    return load_dataset(out)


def load_latents(directory: str | Path) -> dict[str, np.ndarray]:
    """Read the latent-factor sidecar written by generate_city."""
    path = Path(directory) / "latents.csv"
    factors: dict[str, dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rid, name, value in reader:
            factors.setdefault(name, {})[int(rid)] = float(value)
    out = {}
    for name, cells in factors.items():
        arr = np.zeros(max(cells) + 1)
        for rid, val in cells.items():
            arr[rid] = val
        out[name] = arr
    return out


def random_dataset(n: int, seed: int, bins: int = 6, poi_categories: int = 4,
                   attrs: tuple[str, ...] = DEMO_ATTRS) -> Dataset:
    """Small in-memory dataset with every view populated.

    Used by the gradient checker and tests; valid by construction but with
    no planted structure. Adjacency is a ring, so non-neighbors exist for
    any n >= 4.
    """
    if n < 4:
        raise ValueError("need n >= 4 so non-neighbors exist")
    from .data import RegionSet  # local import to keep module surface tidy

    pairs = tuple(sorted((i, (i + 1) % n) if i < (i + 1) % n else ((i + 1) % n, i)
                         for i in range(n)))
    demo = {}
    for attr in attrs:
        s = Stream(seed, f"rand:{attr}")
        demo[attr] = 100.0 * _softmax_rows(s.normals(n * bins).reshape(n, bins))
    s = Stream(seed, "rand:poi")
    poi = s.integers(n * poi_categories, 12).reshape(n, poi_categories)
    poi[np.arange(n), np.arange(n) % poi_categories] += 1
    s = Stream(seed, "rand:trips")
    mask = s.uniforms(n * n).reshape(n, n) < 0.4
    trips = np.where(mask, s.integers(n * n, 9).reshape(n, n) + 1.0, 0.0)
    trips[0, 1] += 1.0
    s = Stream(seed, "rand:labels")
    labels = {"y": trips.sum(axis=1) + s.normals(n)}
    return Dataset(
        regions=RegionSet(n=n, names=[f"r{i}" for i in range(n)]),
        adjacency=pairs,
        poi_counts=poi,
        poi_categories=[f"c{j:02d}" for j in range(poi_categories)],
        trips=trips,
        demographics=demo,
        labels=labels,
    )
