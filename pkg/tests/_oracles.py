"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

FD_STEP = 1e-5


def random_interior(name, n, rng):
    """Random responses and predictors well inside each family's support."""
    if name == "gaussian":
        y = rng.normal(0, 2, n)
        h = [rng.uniform(-3, 3, n), rng.uniform(-1, 1, n)]
    elif name == "gamma-cv":
        y = rng.uniform(0.1, 5, n)
        h = [rng.uniform(-1, 1.5, n), rng.uniform(-1.5, 0.5, n)]
    else:
        y = np.where(rng.uniform(size=n) < 0.3, 0.0, rng.uniform(0.1, 5, n))
        h = [rng.uniform(-1, 1.5, n), rng.uniform(-1.5, 0.5, n), rng.uniform(-2, 2, n)]
    return y, h


def fd_gradient(family, q, y, h, step=FD_STEP):
    """Central finite difference of the pointwise loss in predictor ``q``, negated."""
    up = [v.copy() for v in h]
    dn = [v.copy() for v in h]
    up[q] = up[q] + step
    dn[q] = dn[q] - step
    return -(family.loss(y, up) - family.loss(y, dn)) / (2 * step)


def gradient_errors(family, y, h):
    """Per-point error |fd - analytic| / max(1, |analytic|) for every parameter."""
    out = []
    for q in range(family.n_params):
        an = family.negative_gradient(q, y, h)
        fd = fd_gradient(family, q, y, h)
        out.append(np.abs(fd - an) / np.maximum(1.0, np.abs(an)))
    return np.array(out)


def naive_loss(family, y, h):
    total = 0.0
    for i in range(y.shape[0]):
        for g in range(y.shape[1]):
            total += float(family.loss(y[i:i + 1, g], [v[i:i + 1, g] for v in h])[0])
    return total


def ks_statistic(sample, cdf):
    """One-sample Kolmogorov-Smirnov statistic, ties handled as a step function."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    vals, idx = np.unique(x, return_index=True)
    last = np.append(idx[1:], n)
    upper = np.max(np.abs(last / n - cdf(vals)))
    lower = np.max(np.abs(idx / n - cdf(np.nextafter(vals, -np.inf))))
    return max(upper, lower)


def u_shaped(path, rise=0.01):
    """Risk path falls to an interior minimum and climbs back by ``rise`` of its drop."""
    p = np.asarray(path, dtype=float)
    if not np.all(np.isfinite(p)):
        return False
    a = int(np.argmin(p))
    drop = p[0] - p[a]
    return 0 < a < p.size - 1 and drop > 0 and p[-1] - p[a] > rise * drop


# acceptance criterion number -> {"detail", "passed", "name"}
CRITERIA = {}


def note(n, detail):
    """Attach the measured quantity to an acceptance criterion's report line."""
    CRITERIA.setdefault(n, {})["detail"] = detail
    print(f"criterion {n}: {detail}")
