"""Model specifications: effect terms per distribution parameter and
covariate preprocessing."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

import numpy as np

from .data import (
    CategoricalCovariate,
    FunctionalCovariate,
    FunctionalDataset,
    ScalarCovariate,
    functional_moments,
    numeric_derivative,
    standardize_functional,
)
from .errors import ConfigError, DomainMismatchError, SchemaError

# kind -> expected covariate types, in order
TERM_KINDS = {
    "functional_intercept": (),
    "step_intercept": (),
    "linear_scalar": (ScalarCovariate,),
    "smooth_scalar": (ScalarCovariate,),
    "group_intercept": (CategoricalCovariate,),
    "group_linear": (CategoricalCovariate, ScalarCovariate),
    "linear_interaction": (ScalarCovariate, ScalarCovariate),
    "smooth_interaction": (ScalarCovariate, ScalarCovariate),
    "functional_linear": (FunctionalCovariate,),
    "historical": (FunctionalCovariate,),
    "concurrent": (FunctionalCovariate,),
}


@dataclass(frozen=True)
class TermDescriptor:
    kind: str
    covariates: tuple = ()
    name: str | None = None
    df: float = 4.0
    n_basis: int = 8
    n_basis_t: int = 8
    degree: int = 3
    diff_order: int = 2
    diff_order_t: int = 2
    changepoints: tuple = ()
    center: bool = True
    center_on: tuple = ()

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ConfigError(f"unknown term kind {self.kind!r}; expected one of {sorted(TERM_KINDS)}")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "changepoints", tuple(float(c) for c in self.changepoints))
        object.__setattr__(self, "center_on", tuple(self.center_on))
        need = len(TERM_KINDS[self.kind])
        if len(self.covariates) != need:
            raise ConfigError(
                f"term kind {self.kind!r} takes {need} covariate(s), got {list(self.covariates)}")
        if self.kind == "step_intercept" and not self.changepoints:
            raise ConfigError("step_intercept needs at least one changepoint")
        if not self.df > 0:
            raise ConfigError(f"df must be positive, got {self.df}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return f"{self.kind}({','.join(self.covariates)})" if self.covariates else self.kind

    def to_dict(self) -> dict:
        d = asdict(self)
        d["covariates"] = list(self.covariates)
        d["changepoints"] = list(self.changepoints)
        d["center_on"] = list(self.center_on)
        return d

    @classmethod
    def from_dict(cls, d: Mapping, where: str = "term") -> "TermDescriptor":
        if not isinstance(d, Mapping):
            raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
        if "kind" not in d:
            raise ConfigError(f"{where}.kind: missing")
        try:
            return cls(**d)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class DerivedCovariate:
    """A functional covariate computed from another (derivative and/or standardization)."""

    name: str
    source: str
    derivative: bool = False
    standardize: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelSpec:
    family: str
    terms: dict = field(default_factory=dict)
    preprocess: list = field(default_factory=list)

    def terms_for(self, param_names) -> list[list[TermDescriptor]]:
        return [list(self.terms.get(p, [])) for p in param_names]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "terms": {p: [t.to_dict() for t in ts] for p, ts in self.terms.items()},
            "preprocess": [p.to_dict() for p in self.preprocess],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        if "family" not in d:
            raise ConfigError("model.family: missing")
        terms_in = d.get("terms") or {}
        if not isinstance(terms_in, Mapping):
            raise ConfigError("model.terms: expected a mapping from parameter name to term list")
        terms = {}
        for p, lst in terms_in.items():
            if lst is None:
                lst = []
            if not isinstance(lst, (list, tuple)):
                raise ConfigError(f"model.terms.{p}: expected a list")
            terms[p] = [TermDescriptor.from_dict(t, f"model.terms.{p}[{k}]") for k, t in enumerate(lst)]
        pre = []
        for k, p in enumerate(d.get("preprocess") or []):
            try:
                pre.append(DerivedCovariate(**p))
            except TypeError as exc:
                raise ConfigError(f"model.preprocess[{k}]: {exc}") from None
        return cls(family=str(d["family"]), terms=terms, preprocess=pre)

    def validate(self, dataset: FunctionalDataset, family) -> None:
        """Check terms against the family parameters and the (preprocessed) data."""
        unknown = set(self.terms) - set(family.param_names)
        if unknown:
            raise ConfigError(
                f"model.terms: parameter(s) {sorted(unknown)} not in family "
                f"{family.name!r} {list(family.param_names)}")
        for p, ts in self.terms.items():
            labels = [t.label for t in ts]
            if len(set(labels)) != len(labels):
                raise ConfigError(f"model.terms.{p}: duplicate term labels {labels}")
            for k, term in enumerate(ts):
                where = f"model.terms.{p}[{k}]"
                for cname, ctype in zip(term.covariates, TERM_KINDS[term.kind]):
                    cov = dataset.covariates.get(cname)
                    if cov is None:
                        raise SchemaError(f"{where}: covariate {cname!r} not in dataset")
                    if not isinstance(cov, ctype):
                        raise SchemaError(
                            f"{where}: covariate {cname!r} is {type(cov).__name__}, "
                            f"{term.kind} needs {ctype.__name__}")
                for g in term.center_on:
                    if not isinstance(dataset.covariates.get(g), CategoricalCovariate):
                        raise SchemaError(f"{where}.center_on: {g!r} is not a categorical covariate")
                if term.kind in ("historical", "concurrent"):
                    check_response_domain(dataset, term.covariates[0], term.kind)


def check_response_domain(dataset: FunctionalDataset, name: str, kind: str) -> None:
    cov = dataset.covariates[name]
    s, t = cov.grid.points, dataset.grid.points
    slack = 1e-9 * max(t[-1] - t[0], 1.0)
    if kind == "concurrent":
        if s.size != t.size or np.max(np.abs(s - t)) > slack:
            raise DomainMismatchError(
                f"concurrent effect needs {name!r} observed on the response grid")
    elif s[0] < t[0] - slack or s[-1] > t[-1] + slack:
        raise DomainMismatchError(
            f"historical effect needs {name!r} on the response domain "
            f"[{t[0]}, {t[-1]}], its grid spans [{s[0]}, {s[-1]}]")


def apply_preprocess(dataset: FunctionalDataset, steps, stats: Mapping | None = None):
    """Add derived covariates; returns the new dataset and standardization stats.

    When ``stats`` is given (prediction), stored training moments are reused.
    """
    out_stats = {}
    covs = dict(dataset.covariates)
    for step in steps:
        src = covs.get(step.source)
        if not isinstance(src, FunctionalCovariate):
            raise SchemaError(f"preprocess {step.name!r}: source {step.source!r} is not functional")
        cov = numeric_derivative(src) if step.derivative else src
        if step.standardize:
            if stats is not None and step.name in stats:
                mean, sd = (np.asarray(v, float) for v in stats[step.name])
            else:
                mean, sd = functional_moments(cov)
            cov = standardize_functional(cov, mean, sd)
            out_stats[step.name] = (mean, sd)
        covs[step.name] = cov
    return FunctionalDataset(dataset.response, dataset.grid, covs), out_stats
