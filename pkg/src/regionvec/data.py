"""Loading and validation of the canonical multi-view city dataset.

A dataset directory holds six comma-separated UTF-8 files, each with a
header row:

    regions.csv       region_id,name
    adjacency.csv     region_a,region_b        (each unordered pair once)
    trips.csv         origin_id,dest_id,count
    poi.csv           region_id,category,count
    demographics.csv  region_id,attribute,bin_index,population
    labels.csv        region_id,task,value

Region ids must be the dense range 0..n-1; an unknown id anywhere is fatal.
Rows may be sparse: regions never mentioned in a view get zero rows.

Crime ingestion rule: if labels contain ``crime_count`` and ``population``
but no ``crime`` task, the rate (count per 10,000 population) is computed
here and the two raw tasks are dropped, so downstream code always sees one
value per region per task.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REQUIRED_FILES = (
    "regions.csv",
    "adjacency.csv",
    "trips.csv",
    "poi.csv",
    "demographics.csv",
    "labels.csv",
)

_HEADERS = {
    "regions.csv": ["region_id", "name"],
    "adjacency.csv": ["region_a", "region_b"],
    "trips.csv": ["origin_id", "dest_id", "count"],
    "poi.csv": ["region_id", "category", "count"],
    "demographics.csv": ["region_id", "attribute", "bin_index", "population"],
    "labels.csv": ["region_id", "task", "value"],
}


class DataError(Exception):
    """Schema or content problem in a dataset directory."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(message if location is None else f"{message} ({location})")


class MissingFileError(DataError):
    pass


@dataclass(frozen=True)
class Finding:
    code: str
    message: str
    location: str


@dataclass
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass
class RegionSet:
    n: int
    names: list[str] | None = None


@dataclass
class Dataset:
    regions: RegionSet
    adjacency: tuple[tuple[int, int], ...]   # canonical (a, b) with a < b, sorted
    poi_counts: np.ndarray                   # n x C, integer-valued
    poi_categories: list[str]
    trips: np.ndarray                        # n x n, nonnegative reals
    demographics: dict[str, np.ndarray]      # attribute -> n x B
    labels: dict[str, np.ndarray]            # task -> n values, NaN = missing

    @property
    def n(self) -> int:
        return self.regions.n


def _read_rows(path: Path):
    name = path.name
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file", f"{name}:1") from None
        if [h.strip() for h in header] != _HEADERS[name]:
            raise DataError(
                f"bad header {header!r}, expected {_HEADERS[name]!r}", f"{name}:1"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(_HEADERS[name]):
                raise DataError(f"expected {len(_HEADERS[name])} fields, got {len(row)}",
                                f"{name}:{lineno}")
            yield lineno, [cell.strip() for cell in row]


def _parse_int(text: str, what: str, loc: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"malformed {what}: {text!r}", loc) from None


def _parse_float(text: str, what: str, loc: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"malformed {what}: {text!r}", loc) from None
    if not math.isfinite(val):
        raise DataError(f"non-finite {what}: {text!r}", loc)
    return val


def _check_region(rid: int, n: int, loc: str) -> int:
    if not 0 <= rid < n:
        raise DataError(f"unknown region id {rid}", loc)
    return rid


def load_dataset(directory: str | Path) -> Dataset:
    """Load and cross-index a dataset directory. Raises DataError on any
    missing file, unknown region id, or malformed row (with file:line)."""
    directory = Path(directory)
    for fname in REQUIRED_FILES:
        if not (directory / fname).is_file():
            raise MissingFileError(f"missing file: {fname.removesuffix('.csv')}")

    # regions.csv fixes n and the id order
    ids: list[int] = []
    names: list[str] = []
    for lineno, row in _read_rows(directory / "regions.csv"):
        loc = f"regions.csv:{lineno}"
        ids.append(_parse_int(row[0], "region_id", loc))
        names.append(row[1])
    n = len(ids)
    if sorted(ids) != list(range(n)):
        raise DataError("region ids are not exactly 0..n-1", "regions.csv")
    if n >= 2 and ids != sorted(ids):
        order = np.argsort(ids)
        names = [names[i] for i in order]

    pairs: set[tuple[int, int]] = set()
    for lineno, row in _read_rows(directory / "adjacency.csv"):
        loc = f"adjacency.csv:{lineno}"
        a = _check_region(_parse_int(row[0], "region_a", loc), n, loc)
        b = _check_region(_parse_int(row[1], "region_b", loc), n, loc)
        key = (min(a, b), max(a, b))
        if key in pairs:
            raise DataError(f"duplicate adjacency pair {key}", loc)
        pairs.add(key)

    trips = np.zeros((n, n))
    for lineno, row in _read_rows(directory / "trips.csv"):
        loc = f"trips.csv:{lineno}"
        o = _check_region(_parse_int(row[0], "origin_id", loc), n, loc)
        d = _check_region(_parse_int(row[1], "dest_id", loc), n, loc)
        count = _parse_float(row[2], "count", loc)
        if count < 0:
            raise DataError(f"negative trip count {count}", loc)
        trips[o, d] += count

    poi_cells: dict[tuple[int, str], float] = {}
    for lineno, row in _read_rows(directory / "poi.csv"):
        loc = f"poi.csv:{lineno}"
        rid = _check_region(_parse_int(row[0], "region_id", loc), n, loc)
        category = row[1]
        count = _parse_float(row[2], "count", loc)
        if count < 0 or count != int(count):
            raise DataError(f"POI count must be a nonnegative integer: {row[2]!r}", loc)
        poi_cells[(rid, category)] = poi_cells.get((rid, category), 0.0) + count
    poi_categories = sorted({cat for _, cat in poi_cells})
    poi_counts = np.zeros((n, max(len(poi_categories), 1)), dtype=np.int64)
    col = {cat: j for j, cat in enumerate(poi_categories)}
    for (rid, cat), count in poi_cells.items():
        poi_counts[rid, col[cat]] += int(count)

    demo_cells: dict[str, dict[tuple[int, int], float]] = {}
    for lineno, row in _read_rows(directory / "demographics.csv"):
        loc = f"demographics.csv:{lineno}"
        rid = _check_region(_parse_int(row[0], "region_id", loc), n, loc)
        attr = row[1]
        b = _parse_int(row[2], "bin_index", loc)
        if b < 0:
            raise DataError(f"negative bin_index {b}", loc)
        pop = _parse_float(row[3], "population", loc)
        if pop < 0:
            raise DataError(f"negative population {pop}", loc)
        demo_cells.setdefault(attr, {})
        demo_cells[attr][(rid, b)] = demo_cells[attr].get((rid, b), 0.0) + pop
    demographics: dict[str, np.ndarray] = {}
    for attr in sorted(demo_cells):
        cells = demo_cells[attr]
        bins = max(b for _, b in cells) + 1
        mat = np.zeros((n, bins))
        for (rid, b), pop in cells.items():
            mat[rid, b] = pop
        demographics[attr] = mat

    labels: dict[str, np.ndarray] = {}
    seen: set[tuple[int, str]] = set()
    for lineno, row in _read_rows(directory / "labels.csv"):
        loc = f"labels.csv:{lineno}"
        rid = _check_region(_parse_int(row[0], "region_id", loc), n, loc)
        task = row[1]
        if (rid, task) in seen:
            raise DataError(f"duplicate label for region {rid}, task {task!r}", loc)
        seen.add((rid, task))
        if task not in labels:
            labels[task] = np.full(n, np.nan)
        labels[task][rid] = _parse_float(row[2], "value", loc)

    labels = _derive_crime_rate(labels)
    return Dataset(
        regions=RegionSet(n=n, names=names),
        adjacency=tuple(sorted(pairs)),
        poi_counts=poi_counts,
        poi_categories=poi_categories if poi_categories else ["none"],
        trips=trips,
        demographics=demographics,
        labels=labels,
    )


def _derive_crime_rate(labels: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    if "crime" in labels or not {"crime_count", "population"} <= set(labels):
        return labels
    count = labels.pop("crime_count")
    pop = labels.pop("population")
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(pop > 0, 1e4 * count / pop, np.nan)
    labels["crime"] = rate
    return labels


def validate(ds: Dataset) -> ValidationReport:
    """Check every dataset invariant. Pure: findings are returned, not raised."""
    report = ValidationReport()
    err = lambda code, msg, loc: report.errors.append(Finding(code, msg, loc))
    warn = lambda code, msg, loc: report.warnings.append(Finding(code, msg, loc))

    n = ds.regions.n
    if n < 2:
        err("region-count", f"need at least 2 regions, have {n}", "regions")
    if ds.regions.names is not None and len(ds.regions.names) != n:
        err("region-names", "names length differs from region count", "regions")

    for a, b in ds.adjacency:
        if a == b:
            err("self-adjacency", f"region {a} adjacent to itself", "adjacency")
        elif not (0 <= a < n and 0 <= b < n):
            err("unknown-region", f"adjacency pair ({a},{b}) out of range", "adjacency")

    if ds.trips.shape != (n, n):
        err("shape", f"trips shape {ds.trips.shape} != ({n},{n})", "trips")
    else:
        if (ds.trips < 0).any():
            err("negative", "negative trip count", "trips")
        for i in np.flatnonzero(ds.trips.sum(axis=1) == 0):
            warn("isolated-region", f"region {i} has no outgoing trips", "trips")

    if ds.poi_counts.shape[0] != n:
        err("shape", f"poi row count {ds.poi_counts.shape[0]} != {n}", "poi")
    else:
        if (ds.poi_counts < 0).any():
            err("negative", "negative POI count", "poi")
        for i in np.flatnonzero(ds.poi_counts.sum(axis=1) == 0):
            warn("empty-poi-row", f"region {i} has no POIs", "poi")

    for attr, mat in ds.demographics.items():
        if mat.shape[0] != n:
            err("shape", f"{attr} row count {mat.shape[0]} != {n}", f"demographics:{attr}")
            continue
        if (mat < 0).any():
            err("negative", f"negative population in {attr}", f"demographics:{attr}")
        for i in np.flatnonzero(mat.sum(axis=1) <= 0):
            err("empty distribution row",
                f"region {i} has an all-zero {attr} distribution",
                f"demographics:{attr}")

    for task, values in ds.labels.items():
        if values.shape != (n,):
            err("shape", f"label {task!r} length {values.shape} != {n}", f"labels:{task}")
            continue
        if np.isinf(values).any():
            err("non-finite", f"infinite value in task {task!r}", f"labels:{task}")
        missing = int(np.isnan(values).sum())
        if missing == n:
            err("empty-task", f"task {task!r} has no labeled regions", f"labels:{task}")
        elif missing:
            warn("missing-labels", f"task {task!r} missing {missing} regions",
                 f"labels:{task}")

    return report
