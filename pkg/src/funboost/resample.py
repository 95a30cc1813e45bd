"""Curve-level resampling: fold plans, out-of-bag risk paths, stopping
iteration selection and basic bootstrap bands.

Every fold refits the model on the full data with curve weights (bootstrap
counts or 0/1 indicators), so bases stay identical across folds and held-out
curves are scored from the same predictor at every iteration.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boost import Hyper, fit
from .data import FunctionalDataset
from .errors import ConfigError, DataError, FunboostError, ResampleError
from .model import ModelSpec

log = logging.getLogger(__name__)

METHODS = ("bootstrap", "kfold", "subsampling")


@dataclass
class FoldPlan:
    method: str
    n_folds: int
    seed: int
    train_weights: np.ndarray   # n_folds x N multiplicities
    test: list = field(default_factory=list)

    @property
    def n_curves(self) -> int:
        return self.train_weights.shape[1]

    def test_weights(self, k: int) -> np.ndarray:
        w = np.zeros(self.n_curves)
        w[self.test[k]] = 1.0
        return w

    def train_indices(self, k: int) -> np.ndarray:
        """Training multiset as a sorted index array (repeats for bootstrap)."""
        return np.repeat(np.arange(self.n_curves), self.train_weights[k].astype(int))


def make_folds(n_curves: int, method: str = "bootstrap", n_folds: int = 10, seed: int = 0) -> FoldPlan:
    """Curve-level resampling plan; deterministic given ``seed``."""
    if n_curves < 2:
        raise DataError(f"resampling needs at least 2 curves, got {n_curves}")
    if method not in METHODS:
        raise ConfigError(f"resampling.method must be one of {METHODS}, got {method!r}")
    if int(n_folds) != n_folds or n_folds < 2:
        raise ConfigError(f"resampling.folds must be an integer >= 2, got {n_folds}")
    n_folds = int(n_folds)
    N = n_curves
    W = np.zeros((n_folds, N))
    tests = []
    if method == "kfold":
        if n_folds > N:
            raise ConfigError(f"resampling.folds={n_folds} exceeds the number of curves {N}")
        perm = np.random.default_rng(seed).permutation(N)
        for k, part in enumerate(np.array_split(perm, n_folds)):
            W[k] = 1.0
            W[k, part] = 0.0
            tests.append(np.sort(part))
    elif method == "bootstrap":
        for k in range(n_folds):
            rng = np.random.default_rng([seed, k])
            while True:
                counts = np.bincount(rng.integers(0, N, N), minlength=N)
                if np.any(counts == 0):
                    break
            W[k] = counts
            tests.append(np.flatnonzero(counts == 0))
    else:
        n_train = math.ceil(N / 2)
        for k in range(n_folds):
            rng = np.random.default_rng([seed, k])
            train = rng.choice(N, n_train, replace=False)
            W[k, train] = 1.0
            tests.append(np.flatnonzero(W[k] == 0))
    return FoldPlan(method, n_folds, int(seed), W, tests)


def _fold_path(args):
    dataset, spec, hyper, train_w, test_w = args
    try:
        model = fit(dataset, spec, hyper, weights=train_w, test_weights=test_w)
    except (FunboostError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return np.asarray(model.test_risk), None


def _run(tasks, jobs: int):
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [_fold_path(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fold_path, tasks))


def oob_risk_path(dataset: FunctionalDataset, spec: ModelSpec, hyper: Hyper, plan: FoldPlan,
                  jobs: int = 1) -> np.ndarray:
    """Held-out mean curve loss for every fold and iteration 0..mstop.

    A failing fold becomes a row of NaN and a warning.
    """
    if plan.n_curves != dataset.n_curves:
        raise ConfigError("fold plan and dataset disagree on the number of curves")
    tasks = [(dataset, spec, hyper, plan.train_weights[k], plan.test_weights(k))
             for k in range(plan.n_folds)]
    R = np.full((plan.n_folds, hyper.mstop + 1), np.nan)
    for k, (path, err) in enumerate(_run(tasks, jobs)):
        if path is None:
            warnings.warn(f"fold {k} failed and is excluded: {err}", RuntimeWarning, stacklevel=2)
            continue
        R[k] = path
    return R


def select_mstop(risk) -> int:
    """Iteration minimizing the across-fold mean risk (ties: smallest)."""
    R = np.atleast_2d(np.asarray(risk, dtype=float))
    ok = np.all(np.isfinite(R), axis=1)
    if not np.any(ok):
        raise ResampleError("every fold failed; no risk path to select from")
    mean = R[ok].mean(axis=0)
    return int(np.argmin(mean))


def mean_path(risk) -> np.ndarray:
    R = np.atleast_2d(np.asarray(risk, dtype=float))
    ok = np.all(np.isfinite(R), axis=1)
    if not np.any(ok):
        raise ResampleError("every fold failed; no risk path to select from")
    return R[ok].mean(axis=0)


def cv_mstop(dataset, spec, hyper, method="bootstrap", n_folds=10, seed=0, jobs=1):
    """Fold plan, risk matrix and selected stopping iteration."""
    plan = make_folds(dataset.n_curves, method, n_folds, seed)
    R = oob_risk_path(dataset, spec, hyper, plan, jobs)
    return plan, R, select_mstop(R)


def _replicate(args):
    dataset, spec, hyper, weights, test_w, reselect, mstop = args
    try:
        model = fit(dataset, spec, hyper, weights=weights, test_weights=test_w if reselect else None)
    except (FunboostError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    m = int(np.argmin(model.test_risk)) if reselect else mstop
    return [(p, label, vals) for p, label, _, vals, _ in model.effect_surfaces(m, include_unselected=True, add_offset=True)], None


def bootstrap_bands(dataset: FunctionalDataset, spec: ModelSpec, hyper: Hyper, n_boot: int = 50,
                    level: float = 0.95, seed: int = 0, mstop: int | None = None,
                    reselect: bool = True, jobs: int = 1) -> list[dict]:
    """Pointwise basic bootstrap bands for every effect surface.

    The point estimate is the full-data fit at ``mstop`` (default
    ``hyper.mstop``). With ``reselect`` each replicate picks its own stopping
    iteration (at most ``hyper.mstop``) from its out-of-bag risk.
    """
    if n_boot < 50:
        raise ConfigError(f"bootstrap bands need at least 50 replicates, got {n_boot}")
    if not 0 < level < 1:
        raise ConfigError(f"band level must lie in (0, 1), got {level}")
    model = fit(dataset, spec, hyper)
    m_hat = hyper.mstop if mstop is None else int(mstop)
    est = model.effect_surfaces(m_hat, include_unselected=True, add_offset=True)
    plan = make_folds(dataset.n_curves, "bootstrap", n_boot, seed)
    tasks = [(dataset, spec, hyper, plan.train_weights[b], plan.test_weights(b), reselect, m_hat)
             for b in range(n_boot)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate, tasks))
    else:
        results = [_replicate(t) for t in tasks]
    draws = {(p, label): [] for p, label, *_ in est}
    for b, (reps, err) in enumerate(results):
        if reps is None:
            warnings.warn(f"bootstrap replicate {b} failed and is excluded: {err}", RuntimeWarning,
                          stacklevel=2)
            continue
        for p, label, vals in reps:
            draws[(p, label)].append(vals)
    alpha = 1.0 - level
    bands = []
    for p, label, axes, f_hat, selected in est:
        D = np.asarray(draws[(p, label)], dtype=float) - f_hat[None]
        if D.shape[0] == 0:
            raise ResampleError("every bootstrap replicate failed")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            hi_q = np.nanquantile(D, 1 - alpha / 2, axis=0)
            lo_q = np.nanquantile(D, alpha / 2, axis=0)
        bands.append({"parameter": p, "term": label, "axes": axes, "estimate": f_hat,
                      "lower": f_hat - hi_q, "upper": f_hat - lo_q, "selected": selected,
                      "n_boot": int(D.shape[0])})
    return bands


def write_risk_matrix(path, risk) -> None:
    R = np.atleast_2d(np.asarray(risk, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold"] + [f"m{m}" for m in range(R.shape[1])])
        for k, row in enumerate(R):
            w.writerow([k] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])


def read_risk_matrix(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) if v else np.nan for v in r[1:]] for r in rows])


def write_grid_table(path, axes: dict, columns: dict) -> None:
    """One row per grid cell: the axis values, then one column per surface."""
    names = list(axes)
    grids = np.meshgrid(*[np.arange(len(axes[n])) for n in names], indexing="ij")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + list(columns))
        for cell in zip(*[g.ravel() for g in grids]):
            w.writerow([_fmt(axes[n][i]) for n, i in zip(names, cell)]
                       + [_fmt(np.asarray(v)[cell]) for v in columns.values()])


def write_bands(path, band: dict) -> None:
    write_grid_table(path, band["axes"], {k: band[k] for k in ("estimate", "lower", "upper")})


def _fmt(v):
    if isinstance(v, str):
        return v
    v = float(v)
    return "" if not np.isfinite(v) else repr(v)


__all__ = [
    "FoldPlan", "make_folds", "oob_risk_path", "select_mstop", "mean_path", "cv_mstop",
    "bootstrap_bands", "write_risk_matrix", "read_risk_matrix", "write_bands", "write_grid_table"
]
