"""Component-wise gradient boosting for functional-response GAMLSS."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import FunctionalDataset, Grid
from .effects import DesignBlock, Effect, build_effect_design, effect_from_state, learn_effect
from .errors import ConfigError, DomainError, ParseError, PredictionError
from .families import Family, get_family
from .model import ModelSpec, apply_preprocess

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "funboost-model"
ARTIFACT_VERSION = 1


@dataclass
class Hyper:
    """Boosting hyperparameters.

    ``step_length`` is a common value or one per distribution parameter.
    ``offset`` is ``"moments"`` (marginal estimates) or ``"zero"``.
    ``loss_weights="grid"`` weights each grid point by its trapezoid width.
    """

    step_length: float | list = 0.1
    mstop: int = 100
    method: str = "noncyclic"
    offset: str = "moments"
    loss_weights: str = "none"
    seed: int = 0

    def __post_init__(self):
        steps = np.atleast_1d(np.asarray(self.step_length, dtype=float))
        if np.any(~(steps > 0)) or np.any(steps > 1):
            raise ConfigError(f"hyper.step_length must lie in (0, 1], got {self.step_length}")
        if int(self.mstop) != self.mstop or self.mstop < 0:
            raise ConfigError(f"hyper.mstop must be a nonnegative integer, got {self.mstop}")
        self.mstop = int(self.mstop)
        if self.method not in ("noncyclic", "cyclic"):
            raise ConfigError(f"hyper.method must be 'noncyclic' or 'cyclic', got {self.method!r}")
        if self.offset not in ("moments", "zero"):
            raise ConfigError(f"hyper.offset must be 'moments' or 'zero', got {self.offset!r}")
        if self.loss_weights not in ("none", "grid"):
            raise ConfigError(f"hyper.loss_weights must be 'none' or 'grid', got {self.loss_weights!r}")

    def nu(self, q: int, n_params: int) -> float:
        steps = np.atleast_1d(np.asarray(self.step_length, dtype=float))
        if steps.size == 1:
            return float(steps[0])
        if steps.size != n_params:
            raise ConfigError(f"hyper.step_length has {steps.size} entries for {n_params} parameters")
        return float(steps[q])

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["step_length"], np.ndarray):
            d["step_length"] = d["step_length"].tolist()
        return d


@dataclass
class BoostState:
    offsets: list
    history: list = field(default_factory=list)       # (iteration, q, j)
    increments: list = field(default_factory=list)    # nu * fitted coefficients, aligned with history
    risk: list = field(default_factory=list)
    test_risk: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.risk) - 1


def _point_weights(hyper: Hyper, grid: Grid):
    if hyper.loss_weights == "none":
        return None
    from .basis import trapezoid_weights

    return trapezoid_weights(grid.points)


class _Engine:
    """Mutable fitting state shared by both update strategies."""

    def __init__(self, family: Family, blocks, y, H, weights, test_weights, point_weights, hyper):
        self.family = family
        self.blocks = blocks
        self.y = y
        self.H = H
        self.w = np.ones(y.shape[0]) if weights is None else np.asarray(weights, float)
        self.tw = None if test_weights is None else np.asarray(test_weights, float)
        self.pw = point_weights
        self.hyper = hyper
        self.Q = family.n_params

    def curve_losses(self, H) -> np.ndarray:
        rho = self.family.loss(self.y, list(H))
        if self.pw is not None:
            rho = rho * self.pw
        return rho.sum(axis=1)

    def risks(self, L):
        train = float(self.w @ L / self.w.sum())
        test = None if self.tw is None else float(self.tw @ L / self.tw.sum())
        return train, test

    def gradient(self, q):
        U = self.family.negative_gradient(q, self.y, list(self.H))
        if self.pw is not None:
            U = U * self.pw
        return U

    def best_learner(self, q, U):
        best = None
        for j, block in enumerate(self.blocks[q]):
            theta, b = block.fit(U)
            # RSS(theta) = |u|^2 - reduction
            red = 2 * theta @ b - theta @ (block.gram @ theta)
            if best is None or red > best[0]:
                best = (red, j, theta)
        return best[1], best[2]

    def candidate(self, q, m):
        U = self.gradient(q)
        j, theta = self.best_learner(q, U)
        inc = self.hyper.nu(q, self.Q) * theta
        Hc = self.H.copy()
        Hc[q] = Hc[q] + self.blocks[q][j].design.surface(inc)
        L = self.curve_losses(Hc)
        if not np.all(np.isfinite(L)):
            raise DomainError(f"iteration {m}: non-finite loss after updating parameter {q}, learner {j}")
        return j, inc, Hc, L


def _noncyclic_step(eng: _Engine, state: BoostState, m: int):
    best = None
    for q in range(eng.Q):
        if not eng.blocks[q]:
            continue
        j, inc, Hc, L = eng.candidate(q, m)
        risk = eng.risks(L)[0]
        if best is None or risk < best[0]:
            best = (risk, q, j, inc, Hc, L)
    if best is None:
        return None
    _, q, j, inc, Hc, L = best
    eng.H = Hc
    state.history.append((m, q, j))
    state.increments.append(inc)
    return L


def _cyclic_step(eng: _Engine, state: BoostState, m: int):
    L = None
    for q in range(eng.Q):
        if not eng.blocks[q]:
            continue
        j, inc, Hc, L = eng.candidate(q, m)
        eng.H = Hc
        state.history.append((m, q, j))
        state.increments.append(inc)
    return L


def noncyclic_iteration(eng, state, m):
    return _noncyclic_step(eng, state, m)


def cyclic_iteration(eng, state, m):
    return _cyclic_step(eng, state, m)


def offset_init(family: Family, dataset: FunctionalDataset, weights=None, mode: str = "moments"):
    if mode == "zero":
        return [0.0] * family.n_params
    return [float(v) for v in family.offsets(dataset.response, weights)]


def fit_base_learner(block: DesignBlock, U) -> np.ndarray:
    return block.fit(U)[0]


class FittedModel:
    """A boosted model: basis definitions, offsets and the selection history."""

    def __init__(self, spec: ModelSpec, hyper: Hyper, grid: Grid, effects, offsets,
                 history, increments, risk, mstop=None, preprocess_stats=None,
                 lambdas=None, levels=None, test_risk=None):
        self.spec = spec
        self.hyper = hyper
        self.family = get_family(spec.family)
        self.grid = grid
        self.effects = effects
        self.offsets = list(offsets)
        self.history = [tuple(int(v) for v in h) for h in history]
        self.increments = [np.asarray(v, dtype=float) for v in increments]
        self.risk = list(risk)
        self.test_risk = list(test_risk or [])
        self.mstop = len(self.risk) - 1 if mstop is None else int(mstop)
        self.preprocess_stats = preprocess_stats or {}
        self.lambdas = lambdas or [[(0.0, 0.0)] * len(e) for e in effects]
        self.levels = levels or {}

    @property
    def n_iterations(self) -> int:
        return len(self.risk) - 1

    def coefficients(self, m: int | None = None):
        """Accumulated coefficients per parameter and learner after ``m`` iterations."""
        m = self.mstop if m is None else int(m)
        if m < 0 or m > self.n_iterations:
            raise PredictionError(f"iteration {m} outside 0..{self.n_iterations}")
        coefs = [[None] * len(e) for e in self.effects]
        for (it, q, j), inc in zip(self.history, self.increments):
            if it > m:
                break
            coefs[q][j] = inc.copy() if coefs[q][j] is None else coefs[q][j] + inc
        return coefs

    def selected(self, m=None):
        m = self.mstop if m is None else m
        return sorted({(q, j) for it, q, j in self.history if it <= m})

    def prepare(self, newdata: FunctionalDataset) -> FunctionalDataset:
        data, _ = apply_preprocess(newdata, self.spec.preprocess, self.preprocess_stats)
        return data

    def predictor(self, newdata: FunctionalDataset, m: int | None = None, prepared=False):
        data = newdata if prepared else self.prepare(newdata)
        coefs = self.coefficients(m)
        H = np.empty((self.family.n_params, data.n_curves, data.n_points))
        for q in range(self.family.n_params):
            H[q] = self.offsets[q]
            for j, eff in enumerate(self.effects[q]):
                if coefs[q][j] is not None:
                    H[q] += eff.design(data).surface(coefs[q][j])
                else:
                    # unselected terms still validate their covariates (levels, ranges)
                    eff.covariate_part(data)
        return H

    def predict(self, newdata: FunctionalDataset, m: int | None = None, prepared=False) -> dict:
        """Predictor and parameter surfaces, keyed by parameter name."""
        H = self.predictor(newdata, m, prepared)
        params = self.family.params(list(H))
        return {"h": {p: H[q] for q, p in enumerate(self.family.param_names)},
                "params": {p: params[q] for q, p in enumerate(self.family.param_names)}}

    def effect_surfaces(self, m: int | None = None, include_unselected=False, add_offset=False):
        """(parameter, label, axes, values, selected) for each learner.

        With ``add_offset`` the parameter's offset is folded into its first
        functional intercept, which makes intercepts comparable across fits.
        """
        coefs = self.coefficients(m)
        out = []
        for q, p in enumerate(self.family.param_names):
            pending = add_offset
            for j, eff in enumerate(self.effects[q]):
                c = coefs[q][j]
                is_icpt = eff.term.kind == "functional_intercept"
                if c is None and not include_unselected and not (pending and is_icpt):
                    continue
                theta = np.zeros(eff.n_coef) if c is None else c
                axes, vals = eff.surface(theta)
                if pending and is_icpt:
                    vals = vals + self.offsets[q]
                    pending = False
                out.append((p, eff.term.label, axes, vals, c is not None))
        return out

    # -- artifact ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "spec": self.spec.to_dict(),
            "hyper": self.hyper.to_dict(),
            "grid": self.grid.points.tolist(),
            "preprocess_stats": {k: [np.asarray(a).tolist() for a in v]
                                 for k, v in self.preprocess_stats.items()},
            "levels": self.levels,
            "offsets": self.offsets,
            "effects": [[e.to_state() for e in es] for es in self.effects],
            "lambdas": [[list(l) for l in ls] for ls in self.lambdas],
            "history": [list(h) for h in self.history],
            "increments": [v.tolist() for v in self.increments],
            "risk": self.risk,
            "test_risk": self.test_risk,
            "mstop": self.mstop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        if d.get("format") != ARTIFACT_FORMAT:
            raise ParseError("not a model artifact")
        if d.get("version") != ARTIFACT_VERSION:
            raise ParseError(f"unsupported artifact version {d.get('version')}")
        spec = ModelSpec.from_dict(d["spec"])
        return cls(
            spec, Hyper(**d["hyper"]), Grid(np.asarray(d["grid"])),
            [[effect_from_state(e) for e in es] for es in d["effects"]],
            d["offsets"], d["history"], d["increments"], d["risk"], d["mstop"],
            {k: tuple(np.asarray(a, dtype=float) for a in v) for k, v in d["preprocess_stats"].items()},
            [[tuple(l) for l in ls] for ls in d["lambdas"]], d.get("levels"), d.get("test_risk"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FittedModel":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ParseError(f"cannot read model artifact {path}: {exc}") from None


def build_blocks(spec: ModelSpec, family: Family, data: FunctionalDataset, weights=None, effects=None):
    terms = spec.terms_for(family.param_names)
    if effects is None:
        effects = [[learn_effect(t, data) for t in ts] for ts in terms]
    blocks = [[build_effect_design(t, data, weights, e) for t, e in zip(ts, es)]
              for ts, es in zip(terms, effects)]
    return effects, blocks


def fit(dataset: FunctionalDataset, spec: ModelSpec, hyper: Hyper, weights=None,
        test_weights=None) -> FittedModel:
    """Boost ``spec`` on ``dataset`` for ``hyper.mstop`` iterations.

    ``weights`` are nonnegative curve weights (bootstrap counts, fold
    indicators); ``test_weights`` select curves whose risk is tracked
    alongside the training risk.
    """
    family = get_family(spec.family)
    data, stats = apply_preprocess(dataset, spec.preprocess)
    spec.validate(data, family)
    family.check_support(data.response)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (data.n_curves,) or np.any(weights < 0) or not weights.sum() > 0:
            raise ConfigError("curve weights must be nonnegative, one per curve, not all zero")
    effects, blocks = build_blocks(spec, family, data, weights)
    offsets = offset_init(family, data, weights, hyper.offset)
    H = np.empty((family.n_params, data.n_curves, data.n_points))
    for q in range(family.n_params):
        H[q] = offsets[q]
    eng = _Engine(family, blocks, data.response, H, weights, test_weights,
                  _point_weights(hyper, data.grid), hyper)
    state = BoostState(offsets)
    L = eng.curve_losses(H)
    if not np.all(np.isfinite(L)):
        raise DomainError("non-finite loss at the offset model")
    tr, te = eng.risks(L)
    state.risk.append(tr)
    if te is not None:
        state.test_risk.append(te)
    step = _noncyclic_step if hyper.method == "noncyclic" else _cyclic_step
    for m in range(1, hyper.mstop + 1):
        L = step(eng, state, m)
        if L is None:
            L = eng.curve_losses(eng.H)
        tr, te = eng.risks(L)
        state.risk.append(tr)
        if te is not None:
            state.test_risk.append(te)
    levels = {k: list(c.levels) for k, c in data.covariates.items() if hasattr(c, "levels")}
    model = FittedModel(spec, hyper, data.grid, effects, offsets, state.history, state.increments,
                        state.risk, None, stats,
                        [[(b.lambda_x, b.lambda_y) for b in bs] for bs in blocks], levels,
                        state.test_risk)
    model._train_predictor = eng.H
    return model


def predict(model: FittedModel, newdata: FunctionalDataset, m: int | None = None) -> dict:
    return model.predict(newdata, m)
