"""Simulation engine: random splines, smooth error processes, scenario
builders with known truth, evaluation metrics and parametric growth curves.

Random splines follow the mixed-model view of P-splines. The prototype
B-spline basis is rotated by ``Omega`` so that the first ``d`` columns span
the penalty null space and the rest carry a ridge penalty; a diagonal
``W`` then splits a target mean variance between the two parts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .basis import SplineBasisDef, difference_matrix, eval_bspline_basis, row_tensor
from .boost import Hyper, fit
from .data import (
    CategoricalCovariate,
    FunctionalCovariate,
    FunctionalDataset,
    Grid,
    ScalarCovariate,
)
from .effects import Effect, effect_from_state, learn_effect
from .errors import (
    ConfigError,
    DegenerateSmoothnessError,
    DimensionError,
    DomainError,
    EvalError,
    ParseError,
    RangeZeroError,
)
from .families import Family, get_family
from .model import DerivedCovariate, ModelSpec, TermDescriptor, apply_preprocess

log = logging.getLogger(__name__)

SCENARIOS = ("continuous", "categorical", "application")
# smoothness share and basis sizes of generated effect functions
EFFECT_SMOOTHNESS = 0.8
INTERCEPT_K = 8
MARGINAL_K = 6
INTERACTION_WEIGHT = 1.0 / 8.0
# grid used to fix W for covariate-direction random splines
REF_POINTS = 100
U_CLIP = 1e-12

SCENARIO_DF = 13.0
SCENARIO_STEP = 0.2
APPLICATION_DOMAIN = (0.0, 48.0)
APPLICATION_CHANGEPOINTS = (12.25, 18.5, 33.5)


# -- random splines ---------------------------------------------------------

def build_omega(K: int, d: int) -> np.ndarray:
    """Omega = [L : D'(DD')^-1] for the ``d``-th order difference penalty.

    ``L`` holds orthonormal polynomials of orders 0..d-1 evaluated at 1..K,
    so ``Omega' D'D Omega`` is diagonal with ``d`` leading zeros and ones
    elsewhere. Omega is not orthogonal in general.
    """
    if not 1 <= d < K:
        raise DimensionError(f"build_omega needs 1 <= d < K, got K={K}, d={d}")
    k = np.arange(1, K + 1, dtype=float)
    V = np.vander(k, d, increasing=True)
    Q, R = np.linalg.qr(V)
    L = Q * np.sign(np.diag(R))[None, :]
    D = difference_matrix(K, d)
    return np.hstack([L, D.T @ np.linalg.inv(D @ D.T)])


def build_weight_matrix(scale: float, smoothness: float, B_omega, d: int) -> np.ndarray:
    """Diagonal W with (1/G) tr(B'B) = scale and unpenalized share = smoothness.

    ``B_omega`` is the rotated basis (G x K) with the ``d`` unpenalized
    columns first. Each part's weight divides by its mean variance
    (1/G) tr over that part's columns.
    """
    if scale < 0:
        raise ConfigError(f"random spline scale must be >= 0, got {scale}")
    if not 0.0 <= smoothness <= 1.0:
        raise ConfigError(f"smoothness must lie in [0, 1], got {smoothness}")
    B = np.asarray(B_omega, dtype=float)
    G, K = B.shape
    col_var = np.sum(B**2, axis=0) / G
    s_un, s_pe = col_var[:d].sum(), col_var[d:].sum()
    if smoothness > 0 and not s_un > 0:
        raise DegenerateSmoothnessError(
            f"smoothness {smoothness} > 0 needs an unpenalized part, but d={d}")
    if smoothness < 1 and not s_pe > 0:
        raise DegenerateSmoothnessError(
            f"smoothness {smoothness} < 1 needs a penalized part, but d={d} = K")
    w2 = np.zeros(K)
    if smoothness > 0:
        w2[:d] = scale * smoothness / s_un
    if smoothness < 1:
        w2[d:] = scale * (1.0 - smoothness) / s_pe
    return np.diag(np.sqrt(w2))


@dataclass(frozen=True)
class RandomSplineDef:
    """Random spline r(t) = b~(t)' Omega W theta with theta ~ N(0, I).

    ``diff_order = 0`` means no penalty: Omega = I and only the scale is set.
    """

    degree: int
    n_basis: int
    diff_order: int
    scale: float = 1.0
    smoothness: float = 0.0
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not 0 <= self.diff_order <= self.degree:
            raise DimensionError(
                f"difference order {self.diff_order} must lie in 0..degree={self.degree}")
        if not 0.0 <= self.smoothness <= 1.0:
            raise ConfigError(f"smoothness must lie in [0, 1], got {self.smoothness}")
        if self.scale < 0:
            raise ConfigError(f"random spline scale must be >= 0, got {self.scale}")
        if self.diff_order == 0 and self.smoothness > 0:
            raise DegenerateSmoothnessError("smoothness > 0 needs a difference penalty (d >= 1)")

    @property
    def spline(self) -> SplineBasisDef:
        return SplineBasisDef(self.degree, self.n_basis, self.lower, self.upper)

    def transform(self, points) -> np.ndarray:
        """Omega W for the basis evaluated at ``points`` (W depends on them)."""
        Bt = eval_bspline_basis(self.spline, points)
        K, d = self.n_basis, self.diff_order
        Om = np.eye(K) if d == 0 else build_omega(K, d)
        return Om @ build_weight_matrix(self.scale, self.smoothness, Bt @ Om, d)

    def basis(self, points) -> np.ndarray:
        """B = B~ Omega W at ``points`` (G x K)."""
        return eval_bspline_basis(self.spline, points) @ self.transform(points)


def spline_basis_matrix(sdef: RandomSplineDef, points) -> np.ndarray:
    return sdef.basis(points)


def draw_random_spline(sdef: RandomSplineDef, points, n: int, rng) -> np.ndarray:
    """``n`` independent random spline draws on ``points`` (n x G)."""
    B = sdef.basis(points)
    return rng.standard_normal((n, B.shape[1])) @ B.T


# -- in-curve dependency ----------------------------------------------------

@dataclass(frozen=True)
class DependencyLevel:
    name: str
    degree: int = 3
    n_basis: int = 20
    diff_order: int = 0
    smoothness: float = 0.0

    @property
    def smooth(self) -> bool:
        return self.name != "independent"

    def spline(self, grid_points) -> RandomSplineDef:
        t = np.asarray(grid_points, dtype=float)
        return RandomSplineDef(self.degree, self.n_basis, self.diff_order, 1.0, self.smoothness,
                               float(t[0]), float(t[-1]))


DEPENDENCY_LEVELS = {
    "independent": DependencyLevel("independent"),
    "dependent": DependencyLevel("dependent", 3, 20, 0, 0.0),
    "high_dependency": DependencyLevel("high_dependency", 3, 20, 1, 0.5),
}


def dependency_level(level) -> DependencyLevel:
    if isinstance(level, DependencyLevel):
        return level
    try:
        return DEPENDENCY_LEVELS[level]
    except KeyError:
        raise ConfigError(
            f"dependency level must be one of {sorted(DEPENDENCY_LEVELS)}, got {level!r}") from None


def standard_noise(level, grid_points, n: int, rng) -> np.ndarray:
    """Pointwise standard normal error curves (n x G) for a dependency level."""
    lev = dependency_level(level)
    t = np.asarray(grid_points, dtype=float)
    if not lev.smooth:
        return rng.standard_normal((n, t.size))
    B = lev.spline(t).basis(t)
    r = rng.standard_normal((n, B.shape[1])) @ B.T
    return r / np.sqrt(np.sum(B**2, axis=1))[None, :]


def draw_gaussian_curves(mu, sigma, level, rng, grid_points=None) -> np.ndarray:
    """y = mu + sigma * e with pointwise standard normal error curves e."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    mu, sigma = np.broadcast_arrays(mu, sigma)
    if np.any(sigma < 0):
        raise DomainError("standard deviation surface must be nonnegative")
    N, G = mu.shape
    t = np.linspace(0.0, 1.0, G) if grid_points is None else grid_points
    return mu + sigma * standard_noise(level, t, N, rng)


def _check_theta(family: Family, theta):
    for name, link, v in zip(family.param_names, family.links, theta):
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError(f"{family.name}: parameter {name} is not finite")
        if link == "log" and np.any(v <= 0):
            raise DomainError(f"{family.name}: parameter {name} must be positive")
        if link == "logit" and (np.any(v < 0) or np.any(v > 1)):
            raise DomainError(f"{family.name}: parameter {name} must lie in [0, 1]")


def draw_general_curves(family: Family, theta, level, rng, grid_points=None) -> np.ndarray:
    """Inverse-transform sampling: y = F^-1(Phi(e) | theta) pointwise."""
    theta = [np.asarray(v, dtype=float) for v in theta]
    theta = list(np.broadcast_arrays(*theta))
    _check_theta(family, theta)
    N, G = theta[0].shape
    t = np.linspace(0.0, 1.0, G) if grid_points is None else grid_points
    u = np.clip(special.ndtr(standard_noise(level, t, N, rng)), U_CLIP, 1.0 - U_CLIP)
    return family.quantile(u, theta)


def tau2(sigma2_sigma: float) -> float:
    """Variance of Z ~ N(0, tau2) with Var(exp(Z)) = ``sigma2_sigma``."""
    return float(-np.log(2.0) + np.log(np.sqrt(4.0 * sigma2_sigma + 1.0) + 1.0))


# -- truth ------------------------------------------------------------------

@dataclass
class TruthEffect:
    """A true effect: a basis (shared with the fitting code) and coefficients."""

    parameter: str
    effect: Effect
    theta: np.ndarray

    @property
    def label(self) -> str:
        return self.effect.term.label

    def contribution(self, data: FunctionalDataset) -> np.ndarray:
        return self.effect.design(data).surface(self.theta)

    def surface(self):
        return self.effect.surface(self.theta)

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "effect": self.effect.to_state(),
                "theta": np.asarray(self.theta, dtype=float).tolist()}

    @classmethod
    def from_dict(cls, d) -> "TruthEffect":
        return cls(d["parameter"], effect_from_state(d["effect"]), np.asarray(d["theta"], dtype=float))


@dataclass
class ScenarioTruth:
    """Known generating model of a simulated dataset.

    ``H`` holds the true predictors (Q x N x G) on the generated dataset.
    Offsets are folded into the first functional intercept when surfaces are
    reported, as for fitted models.
    """

    scenario: str
    family_name: str
    effects: list
    offsets: list
    H: np.ndarray
    manifest: dict = field(default_factory=dict)
    preprocess: list = field(default_factory=list)
    preprocess_stats: dict = field(default_factory=dict)

    @property
    def family(self) -> Family:
        return get_family(self.family_name)

    def prepare(self, dataset):
        data, _ = apply_preprocess(dataset, self.preprocess, self.preprocess_stats)
        return data

    def predictor(self, dataset: FunctionalDataset, m=None) -> np.ndarray:
        data = self.prepare(dataset)
        fam = self.family
        H = np.empty((fam.n_params, data.n_curves, data.n_points))
        for q, p in enumerate(fam.param_names):
            H[q] = self.offsets[q]
            for te in self.effects:
                if te.parameter == p:
                    H[q] += te.contribution(data)
        return H

    def predict(self, dataset: FunctionalDataset, m=None) -> dict:
        fam = self.family
        H = self.predictor(dataset)
        params = fam.params(list(H))
        return {"h": {p: H[q] for q, p in enumerate(fam.param_names)},
                "params": {p: params[q] for q, p in enumerate(fam.param_names)}}

    def theta(self) -> list:
        return self.family.params(list(self.H))

    def effect_surfaces(self, m=None, include_unselected=True, add_offset=True):
        out = []
        for q, p in enumerate(self.family.param_names):
            pending = add_offset
            for te in self.effects:
                if te.parameter != p:
                    continue
                axes, vals = te.surface()
                if pending and te.effect.term.kind == "functional_intercept":
                    vals = vals + self.offsets[q]
                    pending = False
                out.append((p, te.label, axes, vals, True))
        return out

    def to_dict(self) -> dict:
        return {
            "format": "funboost-truth",
            "version": 1,
            "scenario": self.scenario,
            "family": self.family_name,
            "manifest": self.manifest,
            "offsets": [float(v) for v in self.offsets],
            "effects": [te.to_dict() for te in self.effects],
            "preprocess": [p.to_dict() for p in self.preprocess],
            "preprocess_stats": {k: [np.asarray(a).tolist() for a in v]
                                 for k, v in self.preprocess_stats.items()},
            "H": np.asarray(self.H).tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "ScenarioTruth":
        if d.get("format") != "funboost-truth":
            raise ParseError("not a truth manifest")
        return cls(
            d["scenario"], d["family"], [TruthEffect.from_dict(e) for e in d["effects"]],
            list(d["offsets"]), np.asarray(d["H"], dtype=float), d.get("manifest", {}),
            [DerivedCovariate(**p) for p in d.get("preprocess", [])],
            {k: tuple(np.asarray(a, dtype=float) for a in v)
             for k, v in d.get("preprocess_stats", {}).items()},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ScenarioTruth":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ParseError(f"cannot read truth manifest {path}: {exc}") from None


def _time_transform(t, n_basis: int):
    sdef = RandomSplineDef(3, n_basis, 2, 1.0, EFFECT_SMOOTHNESS, float(t[0]), float(t[-1]))
    return sdef.transform(t)


def _cov_transform(spec: SplineBasisDef):
    sdef = RandomSplineDef(spec.degree, spec.n_basis, 2, 1.0, EFFECT_SMOOTHNESS, spec.lower, spec.upper)
    return sdef.transform(np.linspace(spec.lower, spec.upper, REF_POINTS))


def _full_basis(eff: Effect, data: FunctionalDataset):
    """Unconstrained covariate basis on the data and its random-spline transform."""
    kind = eff.term.kind
    if kind == "functional_intercept":
        return np.ones((data.n_curves, 1)), np.ones((1, 1))
    if kind == "smooth_scalar":
        spec = eff.spec
        z = np.asarray(data.covariates[eff.term.covariates[0]].values, dtype=float)
        return eval_bspline_basis(spec, z), _cov_transform(spec)
    if kind == "smooth_interaction":
        bases, trans = [], []
        for name, spec in zip(eff.term.covariates, eff.specs):
            z = np.asarray(data.covariates[name].values, dtype=float)
            bases.append(eval_bspline_basis(spec, z))
            trans.append(_cov_transform(spec))
        return row_tensor(*bases), np.kron(*trans)
    if kind == "group_intercept":
        cov = data.covariates[eff.term.covariates[0]]
        H = np.zeros((data.n_curves, len(eff.state["levels"])))
        H[np.arange(data.n_curves), cov.codes()] = 1.0
        return H, np.eye(H.shape[1])
    raise ConfigError(f"no random truth generator for term kind {kind!r}")


def draw_truth_effect(parameter: str, term: TermDescriptor, data: FunctionalDataset,
                      scale: float, rng) -> TruthEffect:
    """Random (tensor) spline effect, constrained like the fitted learner.

    Full-basis coefficients are drawn as a tensor of random splines, projected
    onto the constrained space on the observed covariates, and rescaled so the
    mean square over curves and grid equals ``scale``.
    """
    eff = learn_effect(term, data)
    t = data.grid.points
    Bfull, Tx = _full_basis(eff, data)
    Tt = _time_transform(t, term.n_basis_t)
    C = Tx @ rng.standard_normal((Tx.shape[1], Tt.shape[1])) @ Tt.T
    M = eff.covariate_part(data)
    coef = np.linalg.lstsq(M, Bfull @ C, rcond=None)[0]
    theta = coef.ravel()
    F = eff.design(data).surface(theta)
    ms = float(np.mean(F**2))
    theta = theta * (np.sqrt(scale / ms) if ms > 0 else 0.0)
    return TruthEffect(parameter, eff, theta)


def _response_grid(G: int, domain=(0.0, 10.0)) -> Grid:
    if G < 2:
        raise ConfigError(f"grid size G must be >= 2, got {G}")
    return Grid(np.linspace(domain[0], domain[1], G))


def _check_positive(**kw):
    for k, v in kw.items():
        if v < 0 or not np.isfinite(v):
            raise ConfigError(f"{k} must be a nonnegative number, got {v}")


def _placeholder(N, grid, covs):
    return FunctionalDataset(np.zeros((N, len(grid))), grid, covs)


def _gaussian_truth(name, data, mu_terms, sigma_terms, rng):
    effects = []
    for p, terms in (("mu", mu_terms), ("sigma", sigma_terms)):
        for term, scale in terms:
            effects.append(draw_truth_effect(p, term, data, scale, rng))
    truth = ScenarioTruth(name, "gaussian", effects, [0.0, 0.0], np.empty(0))
    truth.H = truth.predictor(data)
    return truth


def _continuous(N, G, s2mu, s2sig, rng):
    grid = _response_grid(G)
    covs = {"z1": ScalarCovariate(rng.uniform(0, 1, N)), "z2": ScalarCovariate(rng.uniform(0, 1, N))}
    data = _placeholder(N, grid, covs)
    unit = s2mu / (3.0 + INTERACTION_WEIGHT)
    t2 = tau2(s2sig)
    mu_terms = [
        (TermDescriptor("functional_intercept", n_basis_t=INTERCEPT_K), unit),
        (TermDescriptor("smooth_scalar", ("z1",), n_basis=MARGINAL_K, n_basis_t=MARGINAL_K), unit),
        (TermDescriptor("smooth_scalar", ("z2",), n_basis=MARGINAL_K, n_basis_t=MARGINAL_K), unit),
        (TermDescriptor("smooth_interaction", ("z1", "z2"), n_basis=MARGINAL_K, n_basis_t=INTERCEPT_K),
         unit * INTERACTION_WEIGHT),
    ]
    sigma_terms = [
        (TermDescriptor("functional_intercept", n_basis_t=INTERCEPT_K), t2 / 2),
        (TermDescriptor("smooth_scalar", ("z1",), n_basis=MARGINAL_K, n_basis_t=MARGINAL_K), t2 / 2),
    ]
    return data, _gaussian_truth("continuous", data, mu_terms, sigma_terms, rng)


def _categorical(N, G, s2mu, s2sig, rng):
    grid = _response_grid(G)
    levels = ("1", "2", "3", "4")
    covs = {g: CategoricalCovariate(levels, np.array(levels)[rng.integers(0, 4, N)])
            for g in ("g1", "g2")}
    data = _placeholder(N, grid, covs)
    unit = s2mu / 3.0
    t2 = tau2(s2sig)
    mu_terms = [
        (TermDescriptor("functional_intercept", n_basis_t=INTERCEPT_K), unit),
        (TermDescriptor("group_intercept", ("g1",), n_basis_t=INTERCEPT_K), unit),
        (TermDescriptor("group_intercept", ("g2",), n_basis_t=INTERCEPT_K), unit),
    ]
    sigma_terms = [
        (TermDescriptor("functional_intercept", n_basis_t=INTERCEPT_K), t2 / 2),
        (TermDescriptor("group_intercept", ("g1",), n_basis_t=INTERCEPT_K), t2 / 2),
    ]
    return data, _gaussian_truth("categorical", data, mu_terms, sigma_terms, rng)


def application_preprocess() -> list:
    return [DerivedCovariate("C_std", "C", derivative=False, standardize=True),
            DerivedCovariate("dC", "C", derivative=True, standardize=True)]


def application_spec(df: float = 4.0, df_hist: float = 6.0) -> ModelSpec:
    """Zero-adjusted gamma model with the application's term structure.

    Historical terms need ``df_hist`` above 4, the dimension of their
    unpenalized (linear-by-linear) subspace.
    """
    terms = {}
    for p in ("mu", "cv", "p"):
        terms[p] = [
            TermDescriptor("functional_intercept", df=df),
            TermDescriptor("step_intercept", df=df, changepoints=APPLICATION_CHANGEPOINTS),
            TermDescriptor("group_intercept", ("treatment",), df=df),
            TermDescriptor("group_intercept", ("batch",), df=df),
            TermDescriptor("historical", ("C_std",), df=df_hist, n_basis=6, n_basis_t=6),
            TermDescriptor("historical", ("dC",), df=df_hist, n_basis=6, n_basis_t=6),
        ]
    return ModelSpec("za-gamma", terms, application_preprocess())


def _application(N, G, s2mu, s2sig, level, rng, pilot_mstop=600):
    grid = _response_grid(G, APPLICATION_DOMAIN)
    t = grid.points
    treat_lv = ("0", "1", "2", "3")
    batch_lv = ("b1", "b2", "b3", "b4", "b5")
    treat = rng.integers(0, 4, N)
    batch = rng.integers(0, 5, N)
    y0 = rng.uniform(0.02, 0.08, N)
    yinf = rng.uniform(0.8, 1.2, N)
    r = rng.uniform(0.15, 0.35, N)
    C = np.vstack([parametric_growth_curve("logistic", {"y0": a, "yinf": b, "r": c}, t)
                   for a, b, c in zip(y0, yinf, r)])
    covs = {"treatment": CategoricalCovariate(treat_lv, np.array(treat_lv)[treat]),
            "batch": CategoricalCovariate(batch_lv, np.array(batch_lv)[batch]),
            "C": FunctionalCovariate(C, grid)}
    # pseudo-data: growth-shaped mean, zeros likely early on
    shift = rng.normal(0.0, 0.3 * np.sqrt(max(s2mu, 0.0)), 4)
    bshift = rng.normal(0.0, 0.1, 5)
    cbar = (C - C.mean(axis=0)) / (C.std(axis=0) + 1e-12)
    log_mu = (np.log(0.05 + 2.0 / (1.0 + np.exp(-(t - 20.0) / 4.0)))[None, :]
              + (shift[treat] + bshift[batch])[:, None] * (t / t[-1])[None, :]
              + 0.3 * np.cumsum(cbar, axis=1) / G)
    cv = np.full((N, G), 0.4) * np.exp(0.1 * np.sqrt(max(s2sig, 0.0)) * np.sin(t / 8.0))[None, :]
    p = special.expit(1.5 - 0.12 * t)[None, :] * np.ones((N, 1))
    fam = get_family("za-gamma")
    pseudo = FunctionalDataset(
        draw_general_curves(fam, [np.exp(log_mu), cv, p], "independent", rng, t), grid, covs)
    spec = application_spec()
    pilot = fit(pseudo, spec, Hyper(step_length=0.1, mstop=pilot_mstop))
    coefs = pilot.coefficients()
    effects = []
    for q, pname in enumerate(fam.param_names):
        for j, eff in enumerate(pilot.effects[q]):
            c = coefs[q][j]
            effects.append(TruthEffect(pname, eff, np.zeros(eff.n_coef) if c is None else c))
    truth = ScenarioTruth("application", "za-gamma", effects, list(pilot.offsets), np.empty(0),
                          preprocess=list(spec.preprocess),
                          preprocess_stats=dict(pilot.preprocess_stats))
    data = _placeholder(N, grid, covs)
    truth.H = truth.predictor(data)
    return data, truth


def generate_scenario(model: str, N: int, G: int, level="independent", sigma2_mu: float = 1.0,
                      sigma2_sigma: float = 1.0, seed: int = 0):
    """Simulated dataset and its generating truth.

    Returns ``(dataset, truth)``; ``truth.H`` holds the true predictors on
    the dataset and ``truth.manifest`` the generator settings.
    """
    if model not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {model!r}")
    if int(N) != N or N < 2:
        raise ConfigError(f"N must be an integer >= 2, got {N}")
    _check_positive(sigma2_mu=sigma2_mu, sigma2_sigma=sigma2_sigma)
    lev = dependency_level(level)
    rng = np.random.default_rng(seed)
    N, G = int(N), int(G)
    if model == "continuous":
        data, truth = _continuous(N, G, sigma2_mu, sigma2_sigma, rng)
    elif model == "categorical":
        data, truth = _categorical(N, G, sigma2_mu, sigma2_sigma, rng)
    else:
        data, truth = _application(N, G, sigma2_mu, sigma2_sigma, lev, rng)
    theta = truth.theta()
    t = data.grid.points
    if truth.family_name == "gaussian":
        y = draw_gaussian_curves(theta[0], theta[1], lev, rng, t)
    else:
        y = draw_general_curves(truth.family, theta, lev, rng, t)
    truth.manifest = {"scenario": model, "N": N, "G": G, "level": lev.name,
                      "sigma2_mu": float(sigma2_mu), "sigma2_sigma": float(sigma2_sigma),
                      "seed": int(seed), "family": truth.family_name}
    return data.with_response(y), truth


def scenario_spec(model: str, df: float = SCENARIO_DF) -> ModelSpec:
    """Model fitted in each simulation scenario (every learner gets ``df``)."""
    if model == "continuous":
        mu = [TermDescriptor("functional_intercept", df=df, n_basis_t=20),
              TermDescriptor("smooth_scalar", ("z1",), df=df, n_basis=MARGINAL_K, n_basis_t=MARGINAL_K),
              TermDescriptor("smooth_scalar", ("z2",), df=df, n_basis=MARGINAL_K, n_basis_t=MARGINAL_K),
              TermDescriptor("smooth_interaction", ("z1", "z2"), df=df, n_basis=MARGINAL_K,
                             n_basis_t=INTERCEPT_K)]
        sigma = [TermDescriptor("functional_intercept", df=df, n_basis_t=20),
                 TermDescriptor("smooth_scalar", ("z1",), df=df, n_basis=MARGINAL_K,
                                n_basis_t=MARGINAL_K)]
        return ModelSpec("gaussian", {"mu": mu, "sigma": sigma})
    if model == "categorical":
        mu = [TermDescriptor("functional_intercept", df=df, n_basis_t=20),
              TermDescriptor("group_intercept", ("g1",), df=df, n_basis_t=INTERCEPT_K),
              TermDescriptor("group_intercept", ("g2",), df=df, n_basis_t=INTERCEPT_K)]
        sigma = [TermDescriptor("functional_intercept", df=df, n_basis_t=20),
                 TermDescriptor("group_intercept", ("g1",), df=df, n_basis_t=INTERCEPT_K)]
        return ModelSpec("gaussian", {"mu": mu, "sigma": sigma})
    if model == "application":
        return application_spec()
    raise ConfigError(f"scenario must be one of {SCENARIOS}, got {model!r}")


# -- metrics ----------------------------------------------------------------

def mean_kld(family: Family, theta_true, theta_est) -> float:
    """Mean pointwise Kullback-Leibler divergence over all N x G cells."""
    shapes = {np.shape(v) for v in list(theta_true) + list(theta_est)}
    if len(shapes) != 1:
        raise EvalError(f"parameter surfaces disagree in shape: {sorted(shapes)}")
    return float(np.mean(family.kld(theta_true, theta_est)))


def effect_rmse(true_surface, est_surface) -> float:
    a = np.asarray(true_surface, dtype=float)
    b = np.asarray(est_surface, dtype=float)
    if a.shape != b.shape:
        raise EvalError(f"surfaces on different grids: {a.shape} vs {b.shape}")
    ok = np.isfinite(a) & np.isfinite(b)
    return float(np.sqrt(np.mean((a[ok] - b[ok]) ** 2)))


def effect_relrmse(true_surface, est_surface) -> float:
    """RMSE divided by the range of the true surface."""
    a = np.asarray(true_surface, dtype=float)
    rng_ = float(np.nanmax(a) - np.nanmin(a))
    if not rng_ > 0:
        raise RangeZeroError("relative RMSE undefined for a constant true effect")
    return effect_rmse(a, est_surface) / rng_


def _same_axes(a, b) -> bool:
    if list(a) != list(b):
        return False
    for k in a:
        x, y = np.asarray(a[k]), np.asarray(b[k])
        if x.shape != y.shape:
            return False
        if x.dtype == object or y.dtype == object:
            if not np.array_equal(x.astype(str), y.astype(str)):
                return False
        elif not np.allclose(x, y, rtol=0, atol=1e-9 * max(1.0, float(np.max(np.abs(x))))):
            return False
    return True


def evaluate_metrics(estimate, truth: ScenarioTruth, dataset: FunctionalDataset, m=None) -> list[dict]:
    """Mean KLD on ``dataset`` plus RMSE and relRMSE for every effect.

    ``estimate`` is a fitted model (or another truth). Effects present on
    one side only are compared against zero. Rows carry a ``status``:
    ``ok``, or ``undefined`` when the true effect is constant.
    """
    if estimate.family.name != truth.family.name:
        raise EvalError(f"family mismatch: estimate {estimate.family.name!r}, truth {truth.family.name!r}")
    fam = truth.family
    est_theta = estimate.predict(dataset, m)["params"]
    tru_theta = truth.predict(dataset)["params"]
    rows = [{"parameter": "", "term": "", "metric": "mean_kld", "selected": "",
             "value": mean_kld(fam, [tru_theta[p] for p in fam.param_names],
                               [est_theta[p] for p in fam.param_names]),
             "status": "ok"}]
    est = {(p, lab): (ax, v, sel) for p, lab, ax, v, sel in
           estimate.effect_surfaces(m, include_unselected=True, add_offset=True)}
    tru = {(p, lab): (ax, v) for p, lab, ax, v, _ in truth.effect_surfaces(include_unselected=True)}
    keys = list(tru) + [k for k in est if k not in tru]
    for key in keys:
        if key in tru and key in est:
            (ax_t, v_t), (ax_e, v_e, sel) = tru[key], est[key]
            if not _same_axes(ax_t, ax_e):
                raise EvalError(f"{key[0]} {key[1]}: estimate and truth use different evaluation grids")
        elif key in tru:
            v_t, v_e, sel = tru[key][1], np.where(np.isnan(tru[key][1]), np.nan, 0.0), False
        else:
            v_e, sel = est[key][1], est[key][2]
            v_t = np.where(np.isnan(v_e), np.nan, 0.0)
        base = {"parameter": key[0], "term": key[1], "selected": bool(sel)}
        rows.append({**base, "metric": "rmse", "value": effect_rmse(v_t, v_e), "status": "ok"})
        try:
            rows.append({**base, "metric": "relrmse", "value": effect_relrmse(v_t, v_e), "status": "ok"})
        except RangeZeroError:
            rows.append({**base, "metric": "relrmse", "value": float("nan"), "status": "undefined"})
    return rows


# -- parametric growth fixtures ---------------------------------------------

GROWTH_PARAMS = {
    "baranyi_roberts": ("y0", "yinf", "mumax", "lag"),
    "gompertz": ("y0", "yinf", "mumax", "lag"),
    "weber_sigmoid": ("a", "b", "c", "d", "y0"),
    "logistic": ("y0", "yinf", "r"),
}


def parametric_growth_curve(model: str, params, t) -> np.ndarray:
    """Evaluate a parametric growth model on ``t``.

    Baranyi-Roberts and Gompertz use log10 counts ``y0``, ``yinf``, maximal
    rate ``mumax`` and lag ``lag``; Weber's sigmoid uses ``a, b, c, d, y0``;
    the logistic model uses ``y0, yinf, r``.
    """
    if model not in GROWTH_PARAMS:
        raise ConfigError(f"growth model must be one of {sorted(GROWTH_PARAMS)}, got {model!r}")
    missing = [k for k in GROWTH_PARAMS[model] if k not in params]
    if missing:
        raise ConfigError(f"{model}: missing parameter(s) {missing}")
    v = {k: float(params[k]) for k in GROWTH_PARAMS[model]}
    if not all(np.isfinite(x) for x in v.values()):
        raise DomainError(f"{model}: parameters must be finite")
    t = np.asarray(t, dtype=float)
    if model in ("baranyi_roberts", "gompertz"):
        y0, yinf, mu, lag = v["y0"], v["yinf"], v["mumax"], v["lag"]
        if not mu > 0 or lag < 0:
            raise DomainError(f"{model}: need mumax > 0 and lag >= 0")
        if model == "gompertz":
            if yinf == y0:
                raise DomainError("gompertz: need yinf != y0")
            dy = yinf - y0
            return y0 + dy * np.exp(-np.exp(mu * np.e * (lag - t) / (dy * np.log(10.0)) + 1.0))
        # log-sum-exp form keeps large mu * t finite
        num = np.logaddexp(mu * lag, mu * t)
        num = num + np.log1p(-np.exp(-num))
        den = np.logaddexp(mu * t, mu * lag + (yinf - y0) * np.log(10.0))
        den = den + np.log1p(-np.exp(-den))
        return yinf + (num - den) / np.log(10.0)
    if model == "weber_sigmoid":
        a, b, c, d, y0 = (v[k] for k in ("a", "b", "c", "d", "y0"))
        if not c > 0 or np.any(t < 0):
            raise DomainError("weber_sigmoid: need c > 0 and t >= 0")
        return a + (y0 - a) / (1.0 + (t / c) ** b) ** d
    y0, yinf, r = v["y0"], v["yinf"], v["r"]
    if not y0 > 0 or not yinf > 0:
        raise DomainError("logistic: need y0 > 0 and yinf > 0")
    e = np.exp(np.clip(r * t, -700, 700))
    return yinf * y0 * e / (yinf + y0 * (e - 1.0))


__all__ = [
    "RandomSplineDef", "DependencyLevel", "DEPENDENCY_LEVELS", "ScenarioTruth", "TruthEffect",
    "build_omega", "build_weight_matrix", "spline_basis_matrix", "draw_random_spline",
    "dependency_level", "standard_noise", "draw_gaussian_curves", "draw_general_curves", "tau2",
    "draw_truth_effect", "generate_scenario", "scenario_spec", "application_spec",
    "mean_kld", "effect_rmse", "effect_relrmse", "evaluate_metrics", "parametric_growth_curve",
]
