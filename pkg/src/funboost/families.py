"""Response distributions: links, pointwise loss, gradients, quantiles and KLD.

Every family works on a list ``h`` of predictor arrays, one per distribution
parameter, all with the shape of the response ``y``.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

from .errors import ConfigError, DegenerateDataError, DomainError, SupportError

LO, HI = 1e-10, 1e10
P_LO, P_HI = 1e-10, 1.0 - 1e-10
OFFSET_P_CLAMP = 1e-6


def _pos(h):
    return np.clip(np.exp(h), LO, HI)


def _prob(h):
    return np.clip(special.expit(h), P_LO, P_HI)


LINKS = {
    "identity": (lambda v: np.asarray(v, float), lambda h: np.asarray(h, float)),
    "log": (np.log, np.exp),
    "logit": (special.logit, special.expit),
}


class Family:
    """Base class. Subclasses set ``name``, ``param_names``, ``links``."""

    name = ""
    param_names: tuple = ()
    links: tuple = ()

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def link(self, q: int, theta):
        return LINKS[self.links[q]][0](theta)

    def inverse_link(self, q: int, h):
        return LINKS[self.links[q]][1](h)

    def params(self, h) -> list:
        """Parameter surfaces implied by predictors ``h``."""
        return [self.inverse_link(q, hq) for q, hq in enumerate(h)]

    def check_support(self, y):
        pass

    def loss(self, y, h) -> np.ndarray:
        raise NotImplementedError

    def negative_gradient(self, q: int, y, h) -> np.ndarray:
        raise NotImplementedError

    def empirical_loss(self, y, h, point_weights=None) -> float:
        """Sum of the pointwise loss over all cells (optionally grid-weighted)."""
        rho = self.loss(y, h)
        if point_weights is not None:
            rho = rho * point_weights
        total = float(np.sum(rho))
        if not np.isfinite(total):
            raise DomainError(f"{self.name}: non-finite loss")
        return total

    def offsets(self, y, weights=None) -> list[float]:
        raise NotImplementedError

    def quantile(self, u, theta):
        raise NotImplementedError

    def cdf(self, y, theta):
        raise NotImplementedError

    def kld(self, theta_true, theta_est):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"family": self.name}


def _wmean(x, w):
    return float(np.sum(w * x) / np.sum(w))


def _broadcast_weights(y, weights):
    if weights is None:
        return np.ones_like(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1 and y.ndim == 2:
        w = w[:, None]
    return np.broadcast_to(w, y.shape)


class GaussianFamily(Family):
    name = "gaussian"
    param_names = ("mu", "sigma")
    links = ("identity", "log")

    def loss(self, y, h):
        y = np.asarray(y, dtype=float)
        mu, sigma = np.asarray(h[0], float), _pos(h[1])
        return 0.5 * np.log(2 * np.pi * sigma**2) + (y - mu) ** 2 / (2 * sigma**2)

    def negative_gradient(self, q, y, h):
        y = np.asarray(y, dtype=float)
        r = y - np.asarray(h[0], float)
        s2 = np.exp(2 * np.asarray(h[1], float))
        if q == 0:
            return r / s2
        return r**2 / s2 - 1.0

    def offsets(self, y, weights=None):
        y = np.asarray(y, dtype=float)
        w = _broadcast_weights(y, weights)
        m = _wmean(y, w)
        sd = np.sqrt(_wmean((y - m) ** 2, w))
        if not sd > 0:
            raise DegenerateDataError("gaussian offset: response has zero variance")
        return [m, float(np.log(sd))]

    def quantile(self, u, theta):
        return stats.norm.ppf(u, loc=theta[0], scale=theta[1])

    def cdf(self, y, theta):
        return stats.norm.cdf(y, loc=theta[0], scale=theta[1])

    def kld(self, theta_true, theta_est):
        m1, s1 = (np.asarray(v, float) for v in theta_true)
        m2, s2 = (np.asarray(v, float) for v in theta_est)
        return np.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5


def _gamma_rho(y, log_mu, log_c):
    """Negative log density of the mean / coefficient-of-variation gamma."""
    mu = np.clip(np.exp(log_mu), LO, HI)
    c = np.clip(np.exp(log_c), LO, HI)
    alpha = 1.0 / c**2
    log_scale = np.log(mu) + 2 * np.log(c)
    return special.gammaln(alpha) + alpha * log_scale - (alpha - 1) * np.log(y) + y * alpha / mu


def _gamma_neg_grad(q, y, log_mu, log_c):
    """Negative derivative of the gamma loss w.r.t. log mu (q=0) or log c (q=1)."""
    mu = np.exp(log_mu)
    alpha = np.exp(-2 * log_c)
    if q == 0:
        return -alpha * (1.0 - y / mu)
    return 2 * alpha * (special.digamma(alpha) - np.log(alpha) - 1 + log_mu - np.log(y) + y / mu)


def _gamma_offsets(y, w):
    keep = (y > 0) & (w > 0)
    if not np.any(keep):
        raise DegenerateDataError("gamma offset: no positive responses")
    pos, wp = y[keep], w[keep]
    m = _wmean(pos, wp)
    sd = np.sqrt(_wmean((pos - m) ** 2, wp))
    if not sd > 0:
        raise DegenerateDataError("gamma offset: positive responses have zero variance")
    return [float(np.log(m)), float(np.log(sd / m))]


def _gamma_kld(mu1, c1, mu2, c2):
    a1, a2 = 1.0 / c1**2, 1.0 / c2**2
    # rates
    b1, b2 = a1 / mu1, a2 / mu2
    return ((a1 - a2) * special.digamma(a1) - special.gammaln(a1) + special.gammaln(a2)
            + a2 * (np.log(b1) - np.log(b2)) + a1 * (b2 - b1) / b1)


class GammaCVFamily(Family):
    """Gamma with mean ``mu`` and coefficient of variation ``c``.

    Shape ``1/c**2`` and scale ``mu*c**2`` give mean ``mu`` and sd ``c*mu``.
    """

    name = "gamma-cv"
    param_names = ("mu", "cv")
    links = ("log", "log")

    def check_support(self, y):
        if np.any(np.asarray(y) <= 0):
            raise SupportError("gamma-cv needs a strictly positive response")

    def loss(self, y, h):
        y = np.asarray(y, dtype=float)
        self.check_support(y)
        return _gamma_rho(y, np.asarray(h[0], float), np.asarray(h[1], float))

    def negative_gradient(self, q, y, h):
        y = np.asarray(y, dtype=float)
        return _gamma_neg_grad(q, y, np.asarray(h[0], float), np.asarray(h[1], float))

    def offsets(self, y, weights=None):
        y = np.asarray(y, dtype=float)
        w = _broadcast_weights(y, weights)
        return _gamma_offsets(y, w)

    def _scipy(self, theta):
        mu, c = (np.asarray(v, float) for v in theta)
        return 1.0 / c**2, mu * c**2

    def quantile(self, u, theta):
        a, scale = self._scipy(theta)
        return stats.gamma.ppf(u, a, scale=scale)

    def cdf(self, y, theta):
        a, scale = self._scipy(theta)
        return stats.gamma.cdf(y, a, scale=scale)

    def kld(self, theta_true, theta_est):
        mu1, c1 = (np.asarray(v, float) for v in theta_true)
        mu2, c2 = (np.asarray(v, float) for v in theta_est)
        return _gamma_kld(mu1, c1, mu2, c2)


class ZeroAdjustedGammaFamily(Family):
    """Point mass ``p`` at zero mixed with a gamma-cv part on the positives."""

    name = "za-gamma"
    param_names = ("mu", "cv", "p")
    links = ("log", "log", "logit")

    def check_support(self, y):
        if np.any(np.asarray(y) < 0):
            raise SupportError("za-gamma needs a nonnegative response")

    def loss(self, y, h):
        y = np.asarray(y, dtype=float)
        self.check_support(y)
        p = _prob(np.asarray(h[2], float))
        zero = y == 0
        ysafe = np.where(zero, 1.0, y)
        rho_g = _gamma_rho(ysafe, np.asarray(h[0], float), np.asarray(h[1], float))
        return np.where(zero, -np.log(p), -np.log1p(-p) + rho_g)

    def negative_gradient(self, q, y, h):
        y = np.asarray(y, dtype=float)
        zero = y == 0
        if q == 2:
            p = special.expit(np.asarray(h[2], float))
            return np.where(zero, 1.0 - p, -p)
        ysafe = np.where(zero, 1.0, y)
        g = _gamma_neg_grad(q, ysafe, np.asarray(h[0], float), np.asarray(h[1], float))
        return np.where(zero, 0.0, g)

    def offsets(self, y, weights=None):
        y = np.asarray(y, dtype=float)
        w = _broadcast_weights(y, weights)
        mu_c = _gamma_offsets(y, w)
        p0 = _wmean((y == 0).astype(float), w)
        p0 = min(max(p0, OFFSET_P_CLAMP), 1.0 - OFFSET_P_CLAMP)
        return mu_c + [float(special.logit(p0))]

    def quantile(self, u, theta):
        mu, c, p = (np.asarray(v, float) for v in theta)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(u.shape, mu.shape, c.shape, p.shape)
        u, mu, c, p = (np.broadcast_to(v, shape) for v in (u, mu, c, p))
        out = np.zeros(shape)
        pos = u > p
        if np.any(pos):
            v = (u[pos] - p[pos]) / (1.0 - p[pos])
            out[pos] = stats.gamma.ppf(v, 1.0 / c[pos] ** 2, scale=mu[pos] * c[pos] ** 2)
        return out

    def cdf(self, y, theta):
        mu, c, p = (np.asarray(v, float) for v in theta)
        y = np.asarray(y, dtype=float)
        g = stats.gamma.cdf(np.maximum(y, 0.0), 1.0 / c**2, scale=mu * c**2)
        return np.where(y < 0, 0.0, p + (1.0 - p) * g)

    def kld(self, theta_true, theta_est):
        mu1, c1, p1 = (np.asarray(v, float) for v in theta_true)
        mu2, c2, p2 = (np.asarray(v, float) for v in theta_est)
        bern = (special.xlogy(p1, p1) - special.xlogy(p1, p2)
                + special.xlogy(1 - p1, 1 - p1) - special.xlogy(1 - p1, 1 - p2))
        return bern + (1.0 - p1) * _gamma_kld(mu1, c1, mu2, c2)


FAMILIES = {
    "gaussian": GaussianFamily,
    "gamma-cv": GammaCVFamily,
    "za-gamma": ZeroAdjustedGammaFamily,
}


def gaussian_family() -> Family:
    return GaussianFamily()


def gamma_cv_family() -> Family:
    return GammaCVFamily()


def zero_adjusted_gamma_family() -> Family:
    return ZeroAdjustedGammaFamily()


def get_family(name: str) -> Family:
    try:
        return FAMILIES[name]()
    except KeyError:
        raise ConfigError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}") from None


def empirical_loss(family: Family, y, h, point_weights=None) -> float:
    return family.empirical_loss(y, h, point_weights)


def kld_pointwise(family: Family, theta_true, theta_est):
    return family.kld(theta_true, theta_est)
