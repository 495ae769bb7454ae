"""Downstream evaluation: Ridge regression, k-fold CV, and the combination sweep.

Embeddings are the sole regression input. For each fold the feature
columns are standardized with training-fold statistics only, a closed-form
ridge solve (SPD Cholesky factorization) fits the centered targets, and
MAE / RMSE / R-squared are scored on the held-out fold. R-squared uses the
test-fold mean in the total sum of squares and is reported as NaN when the
test targets are constant (never silently zero); negative values are kept.

A sweep trains one model per (view combination, run seed), evaluates every
task, averages across runs, and sorts combinations by their average
R-squared across tasks, descending. Jobs are independent, so sweeps may
fan out over a process pool; assembly is keyed by (combination, run), so
the report never depends on worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import Dataset
from .rng import Stream, derive_seed
from .training import TrainConfig, train


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 5
    ridge_lambda: float = 1.0
    seed: int = 0
    log_tasks: tuple[str, ...] = ()
    runs: int = 10

    def __post_init__(self):
        if self.folds < 2 or self.ridge_lambda < 0 or self.runs < 1:
            raise ValueError("need folds >= 2, ridge_lambda >= 0, runs >= 1")


@dataclass
class FoldScore:
    run: int
    fold: int
    mae: float
    rmse: float
    r2: float


@dataclass
class TaskResult:
    mae: float
    rmse: float
    r2: float
    folds: list[FoldScore] = field(default_factory=list)


@dataclass
class ComboResult:
    combination: str
    tasks: dict[str, TaskResult]
    avg_r2: float


def kfold_split(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous chunks; larger folds come first."""
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    perm = Stream(seed, "kfold").permutation(n)
    base, extra = divmod(n, k)
    folds, at = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(perm[at:at + size])
        at += size
    return folds


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float,
              ) -> tuple[np.ndarray, float]:
    """Closed-form ridge on centered targets; intercept is mean(y).

    Solved via Cholesky of X'X + lam*I, which is SPD for lam > 0 (and for
    full-rank X at lam = 0; a rank-deficient system raises LinAlgError).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    intercept = float(y.mean())
    system = x.T @ x + lam * np.eye(x.shape[1])
    coef = cho_solve(cho_factor(system), x.T @ (y - intercept))
    return coef, intercept


def metrics(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[float, float, float]:
    """(MAE, RMSE, R2); R2 is NaN when y_true is constant."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError(f"bad metric shapes {y_true.shape} vs {y_pred.shape}")
    delta = y_true - y_pred
    mae = float(np.abs(delta).mean())
    rmse = float(np.sqrt((delta**2).mean()))
    ss_res = float((delta**2).sum())
    ss_tot = float(((y_true - y_true.mean())**2).sum())
    r2 = math.nan if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return mae, rmse, r2


def _standardize(train_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    return mu, sd


def evaluate(embeddings: np.ndarray, labels: np.ndarray, cfg: EvalConfig,
             run: int = 0) -> TaskResult:
    """Per-fold ridge evaluation of one task; regions with NaN labels are
    masked out of every fold."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    keep = np.flatnonzero(np.isfinite(labels))
    if keep.size < cfg.folds:
        raise ValueError(f"only {keep.size} labeled regions for {cfg.folds} folds")
    scores = []
    for fold_idx, test_pos in enumerate(kfold_split(keep.size, cfg.folds, cfg.seed)):
        test = keep[test_pos]
        train_rows = np.setdiff1d(keep, test)
        mu, sd = _standardize(embeddings[train_rows])
        coef, intercept = ridge_fit((embeddings[train_rows] - mu) / sd,
                                    labels[train_rows], cfg.ridge_lambda)
        pred = (embeddings[test] - mu) / sd @ coef + intercept
        mae, rmse, r2 = metrics(labels[test], pred)
        scores.append(FoldScore(run=run, fold=fold_idx, mae=mae, rmse=rmse, r2=r2))
    return TaskResult(
        mae=float(np.mean([s.mae for s in scores])),
        rmse=float(np.mean([s.rmse for s in scores])),
        r2=float(np.mean([s.r2 for s in scores])),
        folds=scores,
    )


def _task_labels(dataset: Dataset, task: str, cfg: EvalConfig) -> np.ndarray:
    y = dataset.labels[task]
    if task in cfg.log_tasks:
        if np.nanmin(y) <= -1:
            raise ValueError(f"cannot log-transform task {task!r}: values <= -1")
        y = np.log1p(y)
    return y


def _run_job(args) -> tuple[int, int, dict[str, TaskResult]]:
    dataset, combo, combo_idx, run_idx, tcfg, ecfg = args
    run_seed = derive_seed(tcfg.seed, "sweep", str(combo_idx), str(run_idx))
    cfg = TrainConfig(views=tuple(combo), dim=tcfg.dim, epochs=tcfg.epochs,
                      lr=tcfg.lr, weight_decay=tcfg.weight_decay,
                      margin=tcfg.margin, k_demo=tcfg.k_demo,
                      k_mobility=tcfg.k_mobility, seed=run_seed,
                      log_every=0)
    result = train(dataset, cfg)
    per_task = {
        task: evaluate(result.embeddings, _task_labels(dataset, task, ecfg),
                       ecfg, run=run_idx)
        for task in sorted(dataset.labels)
    }
    return combo_idx, run_idx, per_task


def sweep(dataset: Dataset, combinations: list[list[str]], tcfg: TrainConfig,
          ecfg: EvalConfig, workers: int = 1) -> list[ComboResult]:
    """Train/evaluate every (combination, run) pair and rank combinations."""
    if not combinations:
        raise ValueError("empty combination list")
    jobs = [(dataset, combo, ci, ri, tcfg, ecfg)
            for ci, combo in enumerate(combinations)
            for ri in range(ecfg.runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_job, jobs))
    else:
        raw = [_run_job(job) for job in jobs]
    raw.sort(key=lambda item: (item[0], item[1]))

    results = []
    for ci, combo in enumerate(combinations):
        runs = [per_task for c, _, per_task in raw if c == ci]
        tasks = {}
        for task in sorted(dataset.labels):
            folds = [score for per_task in runs for score in per_task[task].folds]
            tasks[task] = TaskResult(
                mae=float(np.mean([s.mae for s in folds])),
                rmse=float(np.mean([s.rmse for s in folds])),
                r2=float(np.mean([s.r2 for s in folds])),
                folds=folds,
            )
        avg_r2 = float(np.mean([tasks[t].r2 for t in tasks]))
        results.append(ComboResult(combination="+".join(combo), tasks=tasks,
                                   avg_r2=avg_r2))
    # stable descending sort; NaN ranks last
    results.sort(key=lambda r: (math.isnan(r.avg_r2), -r.avg_r2 if
                                not math.isnan(r.avg_r2) else 0.0))
    return results


def _clean(x: float):
    return None if math.isnan(x) else x


def report_to_dict(results: list[ComboResult]) -> list[dict]:
    out = []
    for combo in results:
        tasks = {}
        for name, task in combo.tasks.items():
            tasks[name] = {
                "mae": _clean(task.mae), "rmse": _clean(task.rmse),
                "r2": _clean(task.r2),
                "folds": [{"run": s.run, "fold": s.fold, "mae": _clean(s.mae),
                           "rmse": _clean(s.rmse), "r2": _clean(s.r2)}
                          for s in task.folds],
            }
        out.append({"combination": combo.combination, "avg_r2": _clean(combo.avg_r2),
                    "tasks": tasks})
    return out


def write_report(results: list[ComboResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(results), fh, indent=2)
        fh.write("\n")
