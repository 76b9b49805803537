"""Data-generating process specification and exact population quantities.

A DGP is a joint threshold-crossing model for a binary outcome y and a
binary treatment d,

    y = 1[ nu1(d, x) > eps1 ]      nu1(d, x) = alpha*d + beta'x
    d = 1[ nu2(x, z) > eps2 ]      nu2(x, z) = pi'x + gamma'z

with standard-normal marginals for (eps1, eps2) coupled by a Gaussian
copula with dependence rho.  This module evaluates latent indices, the
conditional propensity score (CPS) and its support under an instrument
subset, the four (y,d) cell probabilities at a given propensity, and the
true conditional ATE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .gaussian import gaussian_copula, norm_cdf

__all__ = [
    "Discrete",
    "JointDiscrete",
    "Normal",
    "DgpSpec",
    "IvSet",
    "CellProbs",
    "CpsSupport",
    "nu1",
    "nu2",
    "cps",
    "iv_support",
    "cps_support",
    "cell_probs",
    "cell_probs_arrays",
    "marginal_cell_probs",
    "true_ate",
    "spec_to_dict",
    "spec_from_dict",
]

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class Discrete:
    """Discrete scalar distribution with explicit masses."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs length mismatch")
        if abs(sum(self.probs) - 1.0) > _PROB_TOL:
            raise ValueError("probabilities must sum to 1")
        if any(p < 0 for p in self.probs):
            raise ValueError("negative probability")


@dataclass(frozen=True)
class JointDiscrete:
    """Joint discrete distribution over instrument vectors.

    Used for empirical instrument distributions, where independence
    across instruments cannot be assumed.
    """

    values: tuple  # tuple of z-vectors (tuples)
    probs: tuple

    def __post_init__(self):
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs length mismatch")
        if abs(sum(self.probs) - 1.0) > _PROB_TOL:
            raise ValueError("probabilities must sum to 1")


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.sd <= 0:
            raise ValueError("sd must be positive")


@dataclass(frozen=True)
class DgpSpec:
    """Linear-index specification of the joint threshold-crossing model.

    ``beta`` and ``pi`` have one entry per covariate; ``gamma`` one entry
    per raw instrument.  ``iv_dists`` is either a list of independent
    per-instrument ``Discrete`` distributions or a single
    ``JointDiscrete`` over full instrument vectors.
    """

    alpha: float
    beta: tuple
    pi: tuple
    gamma: tuple
    rho: float
    covariate_dist: object = Normal()
    iv_dists: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(self.beta)))
        object.__setattr__(self, "pi", tuple(float(p) for p in np.atleast_1d(self.pi)))
        object.__setattr__(self, "gamma", tuple(float(g) for g in np.atleast_1d(self.gamma)))
        if len(self.beta) != len(self.pi):
            raise ValueError("beta and pi must have the same covariate dimension")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if isinstance(self.iv_dists, JointDiscrete):
            n_iv = len(self.iv_dists.values[0]) if self.iv_dists.values else 0
        else:
            object.__setattr__(self, "iv_dists", tuple(self.iv_dists))
            n_iv = len(self.iv_dists)
        if len(self.gamma) != n_iv:
            raise ValueError("gamma dimension must equal the number of instruments")

    @property
    def n_covariates(self):
        return len(self.beta)

    @property
    def n_instruments(self):
        return len(self.gamma)


@dataclass(frozen=True)
class IvSet:
    """Instrument subset with optional per-column recoding.

    ``use`` holds indices into the raw instrument vector; ``recode``
    holds one tag per used column: "raw" keeps the value, "gt0" replaces
    it by the indicator 1[z > 0].
    """

    name: str
    use: tuple
    recode: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "use", tuple(self.use))
        recode = tuple(self.recode) if self.recode else ("raw",) * len(self.use)
        if len(recode) != len(self.use):
            raise ValueError("recode must match use length")
        if any(r not in ("raw", "gt0") for r in recode):
            raise ValueError("unknown recode tag")
        object.__setattr__(self, "recode", recode)

    def transform(self, z):
        """Map a raw instrument vector to the used-instrument tuple."""
        out = []
        for idx, tag in zip(self.use, self.recode):
            v = z[idx]
            out.append(float(v > 0) if tag == "gt0" else float(v))
        return tuple(out)

    def columns(self, z_matrix):
        """Design-matrix columns (n, len(use)) from raw draws (n, m)."""
        cols = []
        for idx, tag in zip(self.use, self.recode):
            col = np.asarray(z_matrix)[:, idx].astype(float)
            cols.append((col > 0).astype(float) if tag == "gt0" else col)
        return np.column_stack(cols)


def identity_iv_set(n_instruments, name="all"):
    return IvSet(name, use=tuple(range(n_instruments)))


@dataclass(frozen=True)
class CellProbs:
    """Joint probabilities Pr[Y=y, D=d | x, p] for the four (y,d) cells."""

    p11: float
    p10: float
    p01: float
    p00: float

    def __post_init__(self):
        total = self.p11 + self.p10 + self.p01 + self.p00
        assert abs(total - 1.0) <= 1e-10, f"cells sum to {total}"
        assert min(self.p11, self.p10, self.p01, self.p00) >= -1e-12

    @property
    def p(self):
        """The conditioning propensity Pr[D=1]."""
        return self.p11 + self.p01

    def pr_y1(self):
        return self.p11 + self.p10


@dataclass(frozen=True)
class CpsSupport:
    """Support of the CPS at a covariate point: (p, mass) pairs, sorted."""

    points: tuple  # tuple of (p, mass)

    def __post_init__(self):
        assert abs(sum(m for _, m in self.points) - 1.0) <= 1e-9
        object.__setattr__(self, "points", tuple(sorted(self.points)))

    @property
    def p_lo(self):
        return self.points[0][0]

    @property
    def p_hi(self):
        return self.points[-1][0]

    @property
    def degenerate(self):
        return len(self.points) == 1

    def pvalues(self):
        return np.array([p for p, _ in self.points])

    def masses(self):
        return np.array([m for _, m in self.points])


def _as_vector(v, dim, what):
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape != (dim,):
        raise ValueError(f"{what} has dimension {arr.shape}, expected ({dim},)")
    return arr


def nu1(spec, d, x):
    """Outcome latent index nu1(d, x) = alpha*d + beta'x."""
    x = _as_vector(x, spec.n_covariates, "x")
    return spec.alpha * d + float(np.dot(spec.beta, x))


def nu2(spec, x, z):
    """Treatment latent index nu2(x, z) = pi'x + gamma'z."""
    x = _as_vector(x, spec.n_covariates, "x")
    z = _as_vector(z, spec.n_instruments, "z")
    return float(np.dot(spec.pi, x) + np.dot(spec.gamma, z))


def cps(spec, x, z):
    """Conditional propensity score Pr[D=1 | x, z] = Phi(nu2(x, z))."""
    return float(norm_cdf(nu2(spec, x, z)))


def iv_support(spec):
    """Enumerate the raw instrument support as (z-vector, mass) pairs."""
    if isinstance(spec.iv_dists, JointDiscrete):
        return [(tuple(v), float(m)) for v, m in zip(spec.iv_dists.values, spec.iv_dists.probs)]
    points = [()]
    masses = [1.0]
    for dist in spec.iv_dists:
        points = [pt + (v,) for pt in points for v in dist.values]
        masses = [m * q for m in masses for q in dist.probs]
    return list(zip(points, masses))


def cps_support(spec, x, ivset=None):
    """CPS support under an instrument subset, with exact masses.

    For a strict subset the score conditions only on the used columns, so
    each support point is the mass-weighted mixture average of Phi(nu2)
    over the omitted instruments.  Identical p values (within 1e-12) are
    merged.
    """
    if ivset is None:
        ivset = identity_iv_set(spec.n_instruments)
    groups = {}
    for z, mass in iv_support(spec):
        key = ivset.transform(z)
        p = cps(spec, x, z)
        acc = groups.setdefault(key, [0.0, 0.0])
        acc[0] += mass
        acc[1] += mass * p
    merged = {}
    for mass, weighted in groups.values():
        p = weighted / mass
        for q in merged:
            if abs(q - p) <= 1e-12:
                merged[q] += mass
                break
        else:
            merged[p] = mass
    return CpsSupport(points=tuple(merged.items()))


def cell_probs_arrays(v1, v0, p, rho):
    """Vectorized cell probabilities from latent indices.

    Parameters
    ----------
    v1, v0 : array_like
        nu1(1, x) and nu1(0, x), broadcastable against ``p``.
    p : array_like
        Conditioning propensities in [0, 1].
    rho : float or array_like
        Copula dependence.

    Returns
    -------
    (p11, p10, p01, p00) arrays; sums are exactly 1 by construction.
    """
    v1, v0, p = np.broadcast_arrays(
        np.asarray(v1, dtype=float), np.asarray(v0, dtype=float), np.asarray(p, dtype=float)
    )
    u1 = norm_cdf(v1)
    u0 = norm_cdf(v0)
    c1 = gaussian_copula(u1, np.clip(p, 0.0, 1.0), rho)
    c0 = gaussian_copula(u0, np.clip(p, 0.0, 1.0), rho)
    p11 = np.minimum(c1, p)
    p00 = np.clip(1.0 - u0 - p + c0, 0.0, 1.0)
    p01 = np.clip(p - p11, 0.0, 1.0)
    p10 = np.clip(1.0 - p - p00, 0.0, 1.0)
    return p11, p10, p01, p00


def cell_probs(spec, x, p):
    """Cell probabilities Pr[Y=y, D=d | x, p] at propensity p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0,1]")
    v1 = nu1(spec, 1, x)
    v0 = nu1(spec, 0, x)
    p11, p10, p01, p00 = cell_probs_arrays(v1, v0, p, spec.rho)
    return CellProbs(float(p11), float(p10), float(p01), float(p00))


def marginal_cell_probs(spec, x):
    """Cells Pr[Y=y, D=d | x] marginalized over the raw instrument
    distribution.  Does not depend on any instrument subset."""
    pts = iv_support(spec)
    pvals = np.array([cps(spec, x, z) for z, _ in pts])
    masses = np.array([m for _, m in pts])
    v1 = nu1(spec, 1, x)
    v0 = nu1(spec, 0, x)
    p11, p10, p01, p00 = cell_probs_arrays(v1, v0, pvals, spec.rho)
    return CellProbs(
        float(np.dot(masses, p11)),
        float(np.dot(masses, p10)),
        float(np.dot(masses, p01)),
        float(np.dot(masses, p00)),
    )


def true_ate(spec, x):
    """Population conditional ATE: Phi(nu1(1,x)) - Phi(nu1(0,x))."""
    return float(norm_cdf(nu1(spec, 1, x)) - norm_cdf(nu1(spec, 0, x)))


# ---------------------------------------------------------------------------
# JSON round-trip (exact field names: alpha, beta, pi, gamma, rho,
# covariate_dist, iv_dists)
# ---------------------------------------------------------------------------

def _dist_to_dict(dist):
    if isinstance(dist, Normal):
        return {"type": "normal", "mean": dist.mean, "sd": dist.sd}
    if isinstance(dist, Discrete):
        return {"type": "discrete", "values": list(dist.values), "probs": list(dist.probs)}
    if isinstance(dist, JointDiscrete):
        return {
            "type": "joint_discrete",
            "values": [list(v) for v in dist.values],
            "probs": list(dist.probs),
        }
    raise ValueError(f"unknown distribution {dist!r}")


def _dist_from_dict(doc, where):
    try:
        kind = doc["type"]
    except (TypeError, KeyError):
        raise ValueError(f"{where}: missing 'type'") from None
    if kind == "normal":
        return Normal(mean=float(doc.get("mean", 0.0)), sd=float(doc.get("sd", 1.0)))
    if kind == "discrete":
        return Discrete(values=tuple(doc["values"]), probs=tuple(doc["probs"]))
    if kind == "joint_discrete":
        return JointDiscrete(
            values=tuple(tuple(v) for v in doc["values"]), probs=tuple(doc["probs"])
        )
    raise ValueError(f"{where}: unknown distribution type {kind!r}")


def spec_to_dict(spec):
    if isinstance(spec.iv_dists, JointDiscrete):
        iv_doc = _dist_to_dict(spec.iv_dists)
    else:
        iv_doc = [_dist_to_dict(d) for d in spec.iv_dists]
    return {
        "alpha": spec.alpha,
        "beta": list(spec.beta),
        "pi": list(spec.pi),
        "gamma": list(spec.gamma),
        "rho": spec.rho,
        "covariate_dist": _dist_to_dict(spec.covariate_dist),
        "iv_dists": iv_doc,
    }


def spec_from_dict(doc):
    for key in ("alpha", "beta", "pi", "gamma", "rho", "covariate_dist", "iv_dists"):
        if key not in doc:
            raise ValueError(f"spec document: missing field '{key}'")
    iv_doc = doc["iv_dists"]
    if isinstance(iv_doc, dict):
        iv_dists = _dist_from_dict(iv_doc, "iv_dists")
    else:
        iv_dists = tuple(
            _dist_from_dict(d, f"iv_dists[{i}]") for i, d in enumerate(iv_doc)
        )
    return DgpSpec(
        alpha=float(doc["alpha"]),
        beta=tuple(doc["beta"]),
        pi=tuple(doc["pi"]),
        gamma=tuple(doc["gamma"]),
        rho=float(doc["rho"]),
        covariate_dist=_dist_from_dict(doc["covariate_dist"], "covariate_dist"),
        iv_dists=iv_dists,
    )
