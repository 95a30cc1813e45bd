"""Effect bases for every term kind and calibrated base-learner blocks.

An effect splits into a covariate side and a time side. Most kinds have a
time-constant covariate basis ``Bx`` (N x Kx), giving the Kronecker design
``Bx (x) By``. Historical and concurrent effects have covariate parts that
change with t; they return an N x G x Kx array and a dense design.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import (
    DenseDesign,
    KroneckerDesign,
    SplineBasisDef,
    _rank,
    difference_penalty,
    df_to_lambda,
    eval_bspline_basis,
    historical_weights,
    null_space_dim,
    orthogonalize,
    penalized_solver,
    row_tensor,
    trapezoid_weights,
)
from .data import CategoricalCovariate, FunctionalDataset
from .errors import InfeasibleDfError, PredictionError, RangeError
from .model import TermDescriptor, check_response_domain

log = logging.getLogger(__name__)

# degrees of freedom given to the time direction of tensor-product learners
DF_TIME = 3.0
N_EVAL = 40


def _arr(x):
    return None if x is None else np.asarray(x, dtype=float)


def _lst(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


class TimeBasis:
    """Spline or step basis over the response domain."""

    def __init__(self, kind: str, spline: SplineBasisDef | None = None,
                 changepoints=(), diff_order: int = 2):
        self.kind = kind
        self.spline = spline
        self.changepoints = tuple(float(c) for c in changepoints)
        self.diff_order = diff_order

    @classmethod
    def for_term(cls, term: TermDescriptor, grid_points) -> "TimeBasis":
        t = np.asarray(grid_points, dtype=float)
        if term.kind == "step_intercept":
            return cls("step", changepoints=sorted(term.changepoints), diff_order=1)
        spline = SplineBasisDef(term.degree, term.n_basis_t, float(t[0]), float(t[-1]))
        return cls("spline", spline, diff_order=term.diff_order_t)

    @property
    def size(self) -> int:
        return len(self.changepoints) + 1 if self.kind == "step" else self.spline.n_basis

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "step":
            idx = np.searchsorted(np.asarray(self.changepoints), t, side="right")
            B = np.zeros((t.size, self.size))
            B[np.arange(t.size), idx] = 1.0
            return B
        return eval_bspline_basis(self.spline, t)

    def penalty(self) -> np.ndarray:
        return difference_penalty(self.size, self.diff_order)

    def to_state(self) -> dict:
        return {"kind": self.kind,
                "spline": None if self.spline is None else self.spline.to_dict(),
                "changepoints": list(self.changepoints), "diff_order": self.diff_order}

    @classmethod
    def from_state(cls, d) -> "TimeBasis":
        spline = None if d["spline"] is None else SplineBasisDef.from_dict(d["spline"])
        return cls(d["kind"], spline, d["changepoints"], d["diff_order"])


def _scalar(data: FunctionalDataset, name: str) -> np.ndarray:
    return np.asarray(data.covariates[name].values, dtype=float)


def _onehot(data: FunctionalDataset, name: str, levels) -> np.ndarray:
    cov = data.covariates[name]
    if not isinstance(cov, CategoricalCovariate):
        raise PredictionError(f"covariate {name!r} must be categorical")
    lookup = {lev: k for k, lev in enumerate(levels)}
    unseen = sorted(set(cov.values.tolist()) - set(lookup))
    if unseen:
        raise PredictionError(f"covariate {name!r}: unseen level(s) {unseen}")
    H = np.zeros((len(cov.values), len(levels)))
    H[np.arange(len(cov.values)), [lookup[v] for v in cov.values]] = 1.0
    return H


def _spline_on(values, spec: SplineBasisDef, name: str) -> np.ndarray:
    try:
        return eval_bspline_basis(spec, values)
    except RangeError as exc:
        raise PredictionError(f"covariate {name!r} outside the training range: {exc}") from None


def _data_range(v, name):
    lo, hi = float(np.min(v)), float(np.max(v))
    if not hi > lo:
        raise InfeasibleDfError(f"covariate {name!r} is constant; a smooth effect needs spread")
    return lo, hi


class Effect:
    """One effect term: learns its basis state from training data.

    ``covariate_part(data)`` returns ``Bx`` (N x Kx) for Kronecker effects or
    an N x G x Kx array for time-varying ones; ``Px`` is the covariate-side
    penalty (``None`` when that side is unpenalized).
    """

    dense = False

    def __init__(self, term: TermDescriptor, state: dict):
        self.term = term
        self.state = state
        self.time = TimeBasis.from_state(state["time"])
        self.t_points = np.asarray(state["t_points"], dtype=float)

    @classmethod
    def learn(cls, term: TermDescriptor, data: FunctionalDataset) -> "Effect":
        state = {"time": TimeBasis.for_term(term, data.grid.points).to_state(),
                 "t_points": data.grid.points.tolist()}
        state.update(cls._learn(term, data))
        eff = cls(term, state)
        state["kx"] = int(eff.covariate_part(data).shape[-1])
        return eff

    @property
    def n_coef(self) -> int:
        return self.state["kx"] * self.time.size

    @classmethod
    def _learn(cls, term, data) -> dict:
        return {}

    # -- covariate side -------------------------------------------------
    def covariate_part(self, data: FunctionalDataset) -> np.ndarray:
        raise NotImplementedError

    @property
    def Px(self):
        return None

    @property
    def Py(self):
        return self.time.penalty()

    def design(self, data: FunctionalDataset):
        By = self.time.evaluate(data.grid.points)
        part = self.covariate_part(data)
        if not self.dense:
            return KroneckerDesign(part, By)
        N, G, kx = part.shape
        X = (part[:, :, :, None] * By[None, :, None, :]).reshape(N * G, kx * By.shape[1])
        return DenseDesign(X, N, G)

    def penalty_parts(self, kx: int):
        ky = self.time.size
        PX = None if self.Px is None else np.kron(self.Px, np.eye(ky))
        PY = None if self.Py is None else np.kron(np.eye(kx), self.Py)
        return PX, PY

    def marginal_grams(self, data, weights=None):
        """Covariate- and time-side grams used to split df across directions."""
        By = self.time.evaluate(data.grid.points)
        part = self.covariate_part(data)
        w = np.ones(data.n_curves) if weights is None else np.asarray(weights, float)
        if not self.dense:
            gx = (part * w[:, None]).T @ part
            gy = By.T @ By
            return gx * np.trace(gy) / gy.shape[0], gy * np.trace(gx) / gx.shape[0]
        by2 = np.sum(By**2, axis=1)
        gx = np.einsum("i,igk,igl,g->kl", w, part, part, by2) / By.shape[1]
        a2 = np.einsum("i,igk->g", w, part**2)
        gy = (By * a2[:, None]).T @ By / part.shape[2]
        return gx, gy

    # -- evaluation ------------------------------------------------------
    def surface(self, theta) -> tuple[dict, np.ndarray]:
        """Effect (or coefficient) function on evaluation grids."""
        raise NotImplementedError

    def _coef(self, theta):
        return np.reshape(np.asarray(theta, dtype=float), (-1, self.time.size))

    def _time_curve(self, theta_rows):
        return theta_rows @ self.time.evaluate(self.t_points).T

    def to_state(self) -> dict:
        return {"kind": self.term.kind, "term": self.term.to_dict(), "state": self.state}


class FunctionalIntercept(Effect):
    def covariate_part(self, data):
        return np.ones((data.n_curves, 1))

    def surface(self, theta):
        return {"t": self.t_points}, self._time_curve(self._coef(theta))[0]


class StepIntercept(FunctionalIntercept):
    pass


class LinearScalar(Effect):
    @classmethod
    def _learn(cls, term, data):
        z = _scalar(data, term.covariates[0])
        return {"mean": float(z.mean()) if term.center else 0.0,
                "range": [float(z.min()), float(z.max())]}

    def covariate_part(self, data):
        return (_scalar(data, self.term.covariates[0]) - self.state["mean"])[:, None]

    def surface(self, theta):
        z = np.linspace(*self.state["range"], N_EVAL)
        beta = self._time_curve(self._coef(theta))[0]
        return {self.term.covariates[0]: z, "t": self.t_points}, np.outer(z - self.state["mean"], beta)


class LinearInteraction(Effect):
    @classmethod
    def _learn(cls, term, data):
        z1, z2 = (_scalar(data, c) for c in term.covariates)
        coef = [0.0, 0.0, 0.0]
        if term.center:
            M = np.column_stack([np.ones_like(z1), z1, z2])
            coef = np.linalg.lstsq(M, z1 * z2, rcond=None)[0].tolist()
        return {"coef": coef, "ranges": [[float(z.min()), float(z.max())] for z in (z1, z2)]}

    def _bx(self, z1, z2):
        a, b, c = self.state["coef"]
        return z1 * z2 - (a + b * z1 + c * z2)

    def covariate_part(self, data):
        z1, z2 = (_scalar(data, c) for c in self.term.covariates)
        return self._bx(z1, z2)[:, None]

    def surface(self, theta):
        g1, g2 = (np.linspace(*r, N_EVAL) for r in self.state["ranges"])
        beta = self._time_curve(self._coef(theta))[0]
        Z1, Z2 = np.meshgrid(g1, g2, indexing="ij")
        vals = self._bx(Z1, Z2)[:, :, None] * beta[None, None, :]
        c1, c2 = self.term.covariates
        return {c1: g1, c2: g2, "t": self.t_points}, vals


class SmoothScalar(Effect):
    @classmethod
    def _learn(cls, term, data):
        name = term.covariates[0]
        z = _scalar(data, name)
        spec = SplineBasisDef(term.degree, term.n_basis, *_data_range(z, name))
        B = eval_bspline_basis(spec, z)
        Z = orthogonalize(B, np.ones(len(z)))[0] if term.center else np.eye(spec.n_basis)
        return {"spline": spec.to_dict(), "Z": Z.tolist()}

    @property
    def spec(self):
        return SplineBasisDef.from_dict(self.state["spline"])

    @property
    def Z(self):
        return np.asarray(self.state["Z"])

    def covariate_part(self, data):
        name = self.term.covariates[0]
        return _spline_on(_scalar(data, name), self.spec, name) @ self.Z

    @property
    def Px(self):
        return self.Z.T @ difference_penalty(self.spec.n_basis, self.term.diff_order) @ self.Z

    def surface(self, theta):
        spec = self.spec
        z = np.linspace(spec.lower, spec.upper, N_EVAL)
        Bx = eval_bspline_basis(spec, z) @ self.Z
        return {self.term.covariates[0]: z, "t": self.t_points}, self._time_curve(Bx @ self._coef(theta))


def _group_constraints(term, data, n):
    cols = [np.ones((n, 1))] if term.center else []
    for parent in term.center_on:
        cov = data.covariates[parent]
        cols.append(_onehot(data, parent, cov.levels))
    return np.hstack(cols) if cols else np.zeros((n, 1))


class GroupIntercept(Effect):
    @classmethod
    def _learn(cls, term, data):
        cov = data.covariates[term.covariates[0]]
        H = _onehot(data, term.covariates[0], cov.levels)
        Z = orthogonalize(H, _group_constraints(term, data, data.n_curves))[0]
        return {"levels": list(cov.levels), "Z": Z.tolist()}

    @property
    def Z(self):
        return np.asarray(self.state["Z"])

    def covariate_part(self, data):
        return _onehot(data, self.term.covariates[0], self.state["levels"]) @ self.Z

    @property
    def Px(self):
        # ridge over levels
        return self.Z.T @ self.Z

    def surface(self, theta):
        return ({self.term.covariates[0]: np.array(self.state["levels"], dtype=object), "t": self.t_points},
                self._time_curve(self.Z @ self._coef(theta)))


class GroupLinear(GroupIntercept):
    @classmethod
    def _learn(cls, term, data):
        gname, zname = term.covariates
        cov = data.covariates[gname]
        z = _scalar(data, zname)
        H = _onehot(data, gname, cov.levels) * z[:, None]
        cons = _group_constraints(term, data, data.n_curves)
        if term.center:
            cons = np.column_stack([cons, z])
        Z = orthogonalize(H, cons)[0]
        return {"levels": list(cov.levels), "Z": Z.tolist()}

    def covariate_part(self, data):
        gname, zname = self.term.covariates
        H = _onehot(data, gname, self.state["levels"]) * _scalar(data, zname)[:, None]
        return H @ self.Z


class SmoothInteraction(Effect):
    @classmethod
    def _learn(cls, term, data):
        specs, bases = [], []
        for name in term.covariates:
            z = _scalar(data, name)
            spec = SplineBasisDef(term.degree, term.n_basis, *_data_range(z, name))
            specs.append(spec.to_dict())
            bases.append(eval_bspline_basis(spec, z))
        full = row_tensor(*bases)
        Z = orthogonalize(full, np.hstack(bases))[0]
        return {"splines": specs, "Z": Z.tolist()}

    @property
    def specs(self):
        return [SplineBasisDef.from_dict(d) for d in self.state["splines"]]

    @property
    def Z(self):
        return np.asarray(self.state["Z"])

    def covariate_part(self, data):
        bases = [_spline_on(_scalar(data, n), s, n) for n, s in zip(self.term.covariates, self.specs)]
        return row_tensor(*bases) @ self.Z

    @property
    def Px(self):
        k1, k2 = (s.n_basis for s in self.specs)
        d = self.term.diff_order
        P = np.kron(difference_penalty(k1, d), np.eye(k2)) + np.kron(np.eye(k1), difference_penalty(k2, d))
        return self.Z.T @ P @ self.Z

    def surface(self, theta):
        s1, s2 = self.specs
        g1 = np.linspace(s1.lower, s1.upper, N_EVAL)
        g2 = np.linspace(s2.lower, s2.upper, N_EVAL)
        B1, B2 = eval_bspline_basis(s1, g1), eval_bspline_basis(s2, g2)
        C = (self.Z @ self._coef(theta)).reshape(s1.n_basis, s2.n_basis, -1)
        By = self.time.evaluate(self.t_points)
        vals = np.einsum("ak,bl,klm,gm->abg", B1, B2, C, By)
        c1, c2 = self.term.covariates
        return {c1: g1, c2: g2, "t": self.t_points}, vals


class FunctionalLinear(Effect):
    """Integral of x(s) beta(s, t) over the whole covariate domain."""

    @classmethod
    def _learn(cls, term, data):
        cov = data.covariates[term.covariates[0]]
        s = cov.grid.points
        spec = SplineBasisDef(term.degree, term.n_basis, float(s[0]), float(s[-1]))
        # standardized covariates are centered already; keep zero curves exactly zero
        mean = cov.values.mean(axis=0) if term.center and not cov.standardized else None
        return {"spline": spec.to_dict(), "mean": _lst(mean), "s_points": s.tolist()}

    @property
    def spec(self):
        return SplineBasisDef.from_dict(self.state["spline"])

    def _centered(self, data):
        cov = data.covariates[self.term.covariates[0]]
        X = np.asarray(cov.values, dtype=float)
        mean = _arr(self.state["mean"])
        if mean is not None:
            if mean.size != X.shape[1]:
                raise PredictionError(f"covariate {self.term.covariates[0]!r} grid differs from training")
            X = X - mean
        return X, cov.grid.points

    def _phi(self, s):
        return _spline_on(s, self.spec, self.term.covariates[0])

    def covariate_part(self, data):
        X, s = self._centered(data)
        return X @ (trapezoid_weights(s)[:, None] * self._phi(s))

    @property
    def Px(self):
        return difference_penalty(self.spec.n_basis, self.term.diff_order)

    def surface(self, theta):
        spec = self.spec
        s = np.linspace(spec.lower, spec.upper, N_EVAL)
        vals = eval_bspline_basis(spec, s) @ self._coef(theta) @ self.time.evaluate(self.t_points).T
        return {"s": s, "t": self.t_points}, vals


class Historical(FunctionalLinear):
    """Integral of x(s) beta(s, t) over s <= t."""

    dense = True

    def covariate_part(self, data):
        check_response_domain(data, self.term.covariates[0], "historical")
        X, s = self._centered(data)
        W = historical_weights(s, data.grid.points)
        return np.einsum("is,gsk->igk", X, W[:, :, None] * self._phi(s)[None, :, :])

    def surface(self, theta):
        s_ax, vals = super().surface(theta)
        vals = np.where(s_ax["s"][:, None] <= self.t_points[None, :] + 1e-12, vals, np.nan)
        return s_ax, vals


class Concurrent(Effect):
    dense = True

    @classmethod
    def _learn(cls, term, data):
        cov = data.covariates[term.covariates[0]]
        mean = cov.values.mean(axis=0) if term.center and not cov.standardized else None
        return {"mean": _lst(mean)}

    def covariate_part(self, data):
        check_response_domain(data, self.term.covariates[0], "concurrent")
        X = np.asarray(data.covariates[self.term.covariates[0]].values, dtype=float)
        mean = _arr(self.state["mean"])
        if mean is not None:
            X = X - mean
        return X[:, :, None]

    def surface(self, theta):
        return {"t": self.t_points}, self._time_curve(self._coef(theta))[0]


EFFECTS = {
    "functional_intercept": FunctionalIntercept,
    "step_intercept": StepIntercept,
    "linear_scalar": LinearScalar,
    "smooth_scalar": SmoothScalar,
    "group_intercept": GroupIntercept,
    "group_linear": GroupLinear,
    "linear_interaction": LinearInteraction,
    "smooth_interaction": SmoothInteraction,
    "functional_linear": FunctionalLinear,
    "historical": Historical,
    "concurrent": Concurrent,
}


def learn_effect(term: TermDescriptor, data: FunctionalDataset) -> Effect:
    return EFFECTS[term.kind].learn(term, data)


def effect_from_state(d: dict) -> Effect:
    term = TermDescriptor.from_dict(d["term"])
    return EFFECTS[term.kind](term, d["state"])


def _marginal_lambda(gram, penalty, target) -> float:
    rank = _rank(gram)
    if target >= rank - 1e-9:
        return 0.0
    null = null_space_dim(gram, penalty)
    if target <= null:
        # push the marginal just past its null space; the common scaling restores the total
        target = null + 0.5 * min(1.0, rank - null)
    return df_to_lambda(gram, penalty, target)


def calibrate(effect: Effect, data: FunctionalDataset, gram, kx: int, df: float, weights=None):
    """Smoothing parameters (lambda_x, lambda_y) giving hat-matrix trace ``df``."""
    PX, PY = effect.penalty_parts(kx)
    rank = _rank(gram)
    label = effect.term.label
    if df >= rank - 1e-6:
        if df > rank + 1e-6:
            warnings.warn(f"{label}: df={df} exceeds design rank {rank}; fitting unpenalized",
                          RuntimeWarning, stacklevel=3)
        return 0.0, 0.0
    try:
        if PX is None and PY is None:
            raise InfeasibleDfError(f"df={df} below rank {rank} but the learner has no penalty")
        if PX is None:
            return 0.0, df_to_lambda(gram, PY, df)
        if PY is None:
            return df_to_lambda(gram, PX, df), 0.0
        gx, gy = effect.marginal_grams(data, weights)
        df_y = min(DF_TIME, df)
        lx0 = _marginal_lambda(gx, effect.Px, df / df_y)
        ly0 = _marginal_lambda(gy, effect.Py, df_y)
        if lx0 == 0.0 and ly0 == 0.0:
            lx0 = ly0 = 1.0
        c = df_to_lambda(gram, lx0 * PX + ly0 * PY, df)
        return c * lx0, c * ly0
    except InfeasibleDfError as exc:
        raise InfeasibleDfError(f"term {label}: {exc}") from None


@dataclass
class DesignBlock:
    """A calibrated base-learner: design, penalty, lambdas and cached solver."""

    effect: Effect
    design: object
    penalty: np.ndarray
    lambda_x: float
    lambda_y: float
    df: float
    weights: np.ndarray | None = None
    gram: np.ndarray = field(repr=False, default=None)
    solver: np.ndarray = field(repr=False, default=None)

    @property
    def term(self) -> TermDescriptor:
        return self.effect.term

    def fit(self, U) -> tuple[np.ndarray, np.ndarray]:
        """Penalized least-squares coefficients for gradient matrix ``U``."""
        b = self.design.crossprod(U, self.weights)
        return self.solver @ b, b

    def hat_trace(self) -> float:
        return float(np.trace(self.solver @ self.gram))


def build_effect_design(term: TermDescriptor, data: FunctionalDataset, weights=None,
                        effect: Effect | None = None, lambdas=None) -> DesignBlock:
    """Construct and calibrate the base-learner for ``term``.

    ``effect`` reuses a basis learned elsewhere (e.g. on the full data when
    ``weights`` select a resample); ``lambdas`` skips calibration.
    """
    if effect is None:
        effect = learn_effect(term, data)
    design = effect.design(data)
    w = None if weights is None else np.asarray(weights, dtype=float)
    gram = design.gram(w)
    kx = design.n_coef // effect.time.size
    if lambdas is None:
        lx, ly = calibrate(effect, data, gram, kx, term.df, w)
    else:
        lx, ly = lambdas
    PX, PY = effect.penalty_parts(kx)
    P = np.zeros_like(gram)
    if PX is not None and lx > 0:
        P = P + lx * PX
    if PY is not None and ly > 0:
        P = P + ly * PY
    solver = penalized_solver(gram, P)
    return DesignBlock(effect, design, P, float(lx), float(ly), float(term.df), w, gram, solver)
