"""Partial-identification bounds for the conditional ATE.

Implements, for the joint threshold-crossing model in `dgp`:

* benchmark bounds from the marginal (y, d) cells (width one by
  construction),
* the sign of the conditional ATE recovered from the outcome probability
  at the extreme propensities,
* widest bounds that use only the two CPS extremes at the evaluation
  point,
* two-layer intersection bounds that additionally match covariate points
  x' where a nearby propensity value is attainable,
* the additive decomposition of the identification gain into instrument
  validity (C1), instrument strength (C2), covariate matching (C3) and
  the remaining interval width (C4), and the instrument identification
  power IIP = C1 + C2.

Every reported quantity is also exposed as a flat family of sup/inf
member values (`BoundsStructure`) so that estimation code can re-evaluate
the same members at parameter draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgp import (
    Discrete,
    Normal,
    cell_probs_arrays,
    cps_support,
    identity_iv_set,
    iv_support,
    norm_cdf,
    nu1,
)
from .gaussian import normal_quadrature

__all__ = [
    "Interval",
    "MatchConfig",
    "BoundsReport",
    "SupportPartition",
    "default_covariate_grid",
    "manski_bounds",
    "identify_sign",
    "widest_bounds",
    "h_func",
    "sv_bounds",
    "decompose",
    "iip",
    "iip_average",
    "population_report",
    "build_structure",
    "evaluate_structure",
]

_TIE = 1e-12


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, other, slack=0.0):
        """True if ``other`` (Interval or scalar) lies inside, up to slack."""
        if isinstance(other, Interval):
            return other.lower >= self.lower - slack and other.upper <= self.upper + slack
        return self.lower - slack <= other <= self.upper + slack


@dataclass(frozen=True)
class MatchConfig:
    """Covariate-matching configuration for the two-layer bounds.

    ``tolerance_c`` is the largest |p' - p| accepted when matching a
    propensity at another covariate point (matching is exact when the
    covariate does not enter the treatment index).  ``covariate_grid``
    overrides the default grid built from the covariate distribution.
    """

    tolerance_c: float = 0.01
    covariate_grid: tuple = None
    grid_step: float = 0.01
    grid_span_sd: float = 4.0
    check_h_sign: bool = True


def default_covariate_grid(spec, match=None):
    """Candidate x' points: the support for discrete covariates, a
    mean +/- 4 sd lattice for normal ones."""
    match = match or MatchConfig()
    if match.covariate_grid is not None:
        return np.atleast_2d(np.asarray(match.covariate_grid, dtype=float))
    dist = spec.covariate_dist
    if isinstance(dist, Discrete):
        return np.array([np.atleast_1d(v) for v in dist.values], dtype=float)
    if isinstance(dist, Normal):
        lo = dist.mean - match.grid_span_sd * dist.sd
        hi = dist.mean + match.grid_span_sd * dist.sd
        n = int(round((hi - lo) / match.grid_step))
        return np.linspace(lo, hi, n + 1).reshape(-1, 1)
    raise ValueError(f"no default grid for covariate distribution {dist!r}")


class SupportPartition:
    """Raw instrument support grouped by the used-instrument key.

    The grouping does not depend on the covariate value, so a single
    partition serves the evaluation point and every grid point; only the
    normal-CDF values change.
    """

    def __init__(self, spec, ivset):
        pts = iv_support(spec)
        if not pts:
            raise ValueError("instrument support is empty")
        self.z_raw = np.array([z for z, _ in pts], dtype=float)
        self.mass = np.array([m for _, m in pts], dtype=float)
        groups = {}
        for i, (z, _) in enumerate(pts):
            groups.setdefault(ivset.transform(z), []).append(i)
        self.groups = [np.array(ix) for ix in groups.values()]
        self.gmass = np.array([self.mass[ix].sum() for ix in self.groups])
        self._weights = [self.mass[ix] / self.mass[ix].sum() for ix in self.groups]

    @property
    def n_groups(self):
        return len(self.groups)

    def pvalues(self, pi_x, gamma):
        """Group propensities at index offset(s) pi_x: (G, T) array."""
        off = self.z_raw @ np.asarray(gamma, dtype=float)
        cdf = norm_cdf(np.add.outer(np.atleast_1d(pi_x).astype(float), off))
        cols = [cdf[:, ix] @ w for ix, w in zip(self.groups, self._weights)]
        return np.column_stack(cols)

    def group_cells(self, pi_x, gamma, v1, v0, rho):
        """Observable cells per group, averaged over the omitted
        instruments: (G, T) arrays (p11, p10, p).

        Conditioning on a used-instrument group leaves the omitted
        instruments random, so each cell is the mass-weighted mixture of
        cells over the group's raw support, not the cell at the averaged
        propensity.
        """
        off = self.z_raw @ np.asarray(gamma, dtype=float)
        q = norm_cdf(np.add.outer(np.atleast_1d(pi_x).astype(float), off))
        v1 = np.atleast_1d(np.asarray(v1, dtype=float))
        v0 = np.atleast_1d(np.asarray(v0, dtype=float))
        c11, c10, _, _ = cell_probs_arrays(v1[:, None], v0[:, None], q, rho)
        p11 = np.column_stack([c11[:, ix] @ w for ix, w in zip(self.groups, self._weights)])
        p10 = np.column_stack([c10[:, ix] @ w for ix, w in zip(self.groups, self._weights)])
        p = np.column_stack([q[:, ix] @ w for ix, w in zip(self.groups, self._weights)])
        return p11, p10, p


# ---------------------------------------------------------------------------
# point evaluation
# ---------------------------------------------------------------------------

def _distinct(p, tol=_TIE):
    out = []
    for v in np.sort(p):
        if not out or v - out[-1] > tol:
            out.append(v)
    return np.array(out)


def _own_group_cells(spec, x, partition):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p11, p10, p = partition.group_cells(
        float(np.dot(spec.pi, x)), spec.gamma,
        nu1(spec, 1, x), nu1(spec, 0, x), spec.rho,
    )
    return p11[0], p10[0], p[0]


def manski_bounds(spec, x, ivset=None):
    """Bounds from the marginal cells alone; width is exactly one."""
    ivset = ivset or identity_iv_set(spec.n_instruments)
    partition = SupportPartition(spec, ivset)
    p11, p10, pown = _own_group_cells(spec, x, partition)
    w = partition.gmass
    p01 = pown - p11
    p00 = 1.0 - pown - p10
    return Interval(float(-(w @ p10) - (w @ p01)), float((w @ p11) + (w @ p00)))


def identify_sign(spec, x, ivset=None):
    """Sign of the conditional ATE from Pr[Y=1 | x, p] at the CPS extremes.

    Raises ValueError when the CPS support at x is a single point, in
    which case the instruments carry no identifying variation.
    """
    ivset = ivset or identity_iv_set(spec.n_instruments)
    partition = SupportPartition(spec, ivset)
    p11, p10, pown = _own_group_cells(spec, x, partition)
    if len(_distinct(pown)) < 2:
        raise ValueError("irrelevant instruments: CPS support at x is degenerate")
    lo, hi = int(np.argmin(pown)), int(np.argmax(pown))
    diff = (p11[hi] + p10[hi]) - (p11[lo] + p10[lo])
    if abs(diff) <= 1e-12:
        return 0
    return 1 if diff > 0 else -1


def widest_bounds(spec, x, ivset=None):
    """Bounds using only the two CPS extremes at the evaluation point.

    These are the widest the two-layer bounds can be; their width depends
    on the instruments solely through the extreme propensities.
    """
    ivset = ivset or identity_iv_set(spec.n_instruments)
    sign = identify_sign(spec, x, ivset)
    partition = SupportPartition(spec, ivset)
    p11, p10, pown = _own_group_cells(spec, x, partition)
    lo, hi = int(np.argmin(pown)), int(np.argmax(pown))
    p_lo, p_hi = float(pown[lo]), float(pown[hi])
    a11, a10 = float(p11[lo]), float(p10[lo])
    b11, b10 = float(p11[hi]), float(p10[hi])
    if sign == 0:
        return Interval(0.0, 0.0)
    if sign > 0:
        lower = (b11 + b10) - (a11 + a10)
        upper = b11 + (1.0 - p_hi) - a10
    else:
        upper = (b11 + b10) - (a11 + a10)
        lower = b11 - a10 - p_lo
    return Interval(lower, upper)


# ---------------------------------------------------------------------------
# two-layer bounds
# ---------------------------------------------------------------------------

@dataclass
class _Family:
    """One sup or inf step: member values are rebuilt per parameter draw.

    ``t`` indexes the own-support group, ``g`` the grid row (-1 for the
    empty-set member), ``j`` the matched support group at that row.
    """

    name: str
    role: str  # "sup" or "inf"
    form: str  # "L1", "U0", "U1", "L0", "marg_L", "marg_U", "p_lo", "p_hi"
    t: np.ndarray
    g: np.ndarray
    j: np.ndarray


@dataclass
class BoundsStructure:
    """Everything needed to re-evaluate the bound families at new
    parameter values with the membership and matching fixed."""

    x: np.ndarray
    grid: np.ndarray
    partition: SupportPartition
    sign: int
    c_eff: float
    families: dict
    sets: dict
    singleton_grid_index: int  # row of `grid` equal to x


def _match_nearest(p_grid_row, p):
    """Nearest attainable value (ties: smaller), with its group index."""
    d = np.abs(p_grid_row - p)
    mask = d <= d.min() + 0.0
    cand = np.where(mask, p_grid_row, np.inf)
    j = int(np.argmin(cand))
    return float(p_grid_row[j]), j


def _build_families(prefix, grid_ok, pstar, jstar, sets):
    """Flatten the nested sup/inf terms into four member families.

    ``grid_ok[t, g]`` marks admissible matches, ``pstar``/``jstar`` the
    matched propensity and its group index.  Every family carries a bare
    member per outer propensity covering the empty-set convention.
    """
    T, G = grid_ok.shape
    fams = {}

    def collect(form, role, member_set, conditional):
        ts, gs, js = [], [], []
        for t in range(T):
            ts.append(t)
            gs.append(-1)
            js.append(-1)
            for g in range(G):
                if not (grid_ok[t, g] and member_set[g]):
                    continue
                if conditional and not (_TIE < pstar[t, g] < 1.0 - _TIE):
                    continue
                ts.append(t)
                gs.append(g)
                js.append(jstar[t, g])
        fams[f"{prefix}{form}"] = _Family(
            f"{prefix}{form}", role, form,
            np.array(ts), np.array(gs), np.array(js),
        )

    collect("L1", "sup", sets["x1p"], conditional=False)
    collect("U0", "inf", sets["x0p"], conditional=True)
    collect("U1", "inf", sets["x1m"], conditional=True)
    collect("L0", "sup", sets["x0m"], conditional=False)
    return fams


def _member_values(form, t, g, j, pown, p11o, p10o, p_grid, p11G, p10G, gmass):
    """Values of one family's members from the group cell arrays.

    ``p11o``/``p10o``/``pown`` are (T,) own-point group cells; the grid
    arrays are (G, T) with the matched group picked by ``j``.
    """
    if form == "marg_L":
        return np.array([-(gmass @ p10o) - (gmass @ (pown - p11o))])
    if form == "marg_U":
        p00 = 1.0 - p10o - pown  # p10 + p00 = 1 - p
        return np.array([(gmass @ p11o) + (gmass @ p00)])
    if form == "p_lo" or form == "p_hi":
        return pown.copy()
    vals = np.empty(len(t))
    bare = g < 0
    tb = t[bare]
    if form == "L1":
        vals[bare] = p11o[tb]
    elif form == "U0":
        vals[bare] = p10o[tb] + pown[tb]
    elif form == "U1":
        vals[bare] = p11o[tb] + (1.0 - pown[tb])
    elif form == "L0":
        vals[bare] = p10o[tb]
    else:
        raise ValueError(form)
    mb = ~bare
    tm, gm, jm = t[mb], g[mb], j[mb]
    ps = np.clip(p_grid[gm, jm], _TIE, 1.0 - _TIE)
    if form == "L1":
        vals[mb] = p11o[tm] + p10G[gm, jm]
    elif form == "U0":
        vals[mb] = p10o[tm] + pown[tm] * p11G[gm, jm] / ps
    elif form == "U1":
        vals[mb] = p11o[tm] + (1.0 - pown[tm]) * p10G[gm, jm] / (1.0 - ps)
    elif form == "L0":
        vals[mb] = p10o[tm] + p11G[gm, jm]
    return vals


def _solve(spec, x, ivset, match, grid=None):
    """Shared engine: matching, set membership, families, point values."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    partition = SupportPartition(spec, ivset)
    p11o, p10o, pown = _own_group_cells(spec, x, partition)
    if len(_distinct(pown)) < 2:
        raise ValueError("irrelevant instruments: CPS support at x is degenerate")
    sign = identify_sign(spec, x, ivset)

    if grid is None:
        grid = default_covariate_grid(spec, match)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != spec.n_covariates:
        raise ValueError("covariate grid dimension mismatch")
    own_row = np.where(np.all(np.abs(grid - x) <= _TIE, axis=1))[0]
    if len(own_row) == 0:
        grid = np.vstack([grid, x])
        own_idx = grid.shape[0] - 1
    else:
        own_idx = int(own_row[0])

    beta = np.asarray(spec.beta)
    pi = np.asarray(spec.pi)
    v1x = nu1(spec, 1, x)
    v0x = nu1(spec, 0, x)
    v1g = spec.alpha + grid @ beta
    v0g = grid @ beta

    exact = bool(np.all(np.asarray(spec.pi) == 0.0))
    c_eff = 1e-9 if exact else match.tolerance_c

    p11G, p10G, p_grid = partition.group_cells(
        grid @ pi, spec.gamma, v1g, v0g, spec.rho
    )  # all (G, T)
    T = len(pown)
    G = grid.shape[0]
    pstar = np.empty((T, G))
    jstar = np.empty((T, G), dtype=int)
    for t in range(T):
        d = np.abs(p_grid - pown[t])
        dmin = d.min(axis=1)
        cand = np.where(d <= dmin[:, None], p_grid, np.inf)
        jstar[t] = np.argmin(cand, axis=1)
        pstar[t] = p_grid[np.arange(G), jstar[t]]
    grid_ok = np.abs(pstar - pown[:, None]) <= c_eff

    sets = {
        "x0p": v1g >= v0x - _TIE,
        "x0m": v1g <= v0x + _TIE,
        "x1p": v1x >= v0g - _TIE,
        "x1m": v1x <= v0g + _TIE,
    }

    fams = _build_families("sv_", grid_ok, pstar, jstar, sets)
    # widest bounds are the same families restricted to x' = x
    own_only = np.zeros(G, dtype=bool)
    own_only[own_idx] = True
    fams.update(_build_families(
        "w_", grid_ok & own_only[None, :], pstar, jstar,
        {k: v & own_only for k, v in sets.items()},
    ))
    for form, role, n in (("marg_L", "sup", 1), ("marg_U", "inf", 1),
                          ("p_lo", "inf", T), ("p_hi", "sup", T)):
        fams[form] = _Family(form, role, form,
                             np.arange(n), np.full(n, -1), np.full(n, -1))

    structure = BoundsStructure(
        x=x, grid=grid, partition=partition, sign=sign, c_eff=c_eff,
        families=fams, sets=sets, singleton_grid_index=own_idx,
    )
    arrays = {
        "pown": pown, "p11o": p11o, "p10o": p10o,
        "pstar": pstar, "p11G": p11G, "p10G": p10G,
        "p_grid": p_grid, "grid_ok": grid_ok, "jstar": jstar,
        "v1g": v1g, "v0g": v0g, "v1x": v1x, "v0x": v0x,
    }
    return structure, arrays


def _point_values(structure, arrays):
    """Point value of every family (dict name -> member value array)."""
    out = {}
    for name, fam in structure.families.items():
        out[name] = _member_values(
            fam.form, fam.t, fam.g, fam.j,
            arrays["pown"], arrays["p11o"], arrays["p10o"],
            arrays["p_grid"], arrays["p11G"], arrays["p10G"],
            structure.partition.gmass,
        )
    return out


def _combine(values, prefix):
    lower = float(np.max(values[f"{prefix}L1"])) - float(np.min(values[f"{prefix}U0"]))
    upper = float(np.min(values[f"{prefix}U1"])) - float(np.max(values[f"{prefix}L0"]))
    return Interval(lower, upper)


def _h_sign_check(structure, arrays):
    """Population consistency check: the numeric pairwise expectation H
    must share the sign of the latent-index comparison that defined the
    set memberships.  Returns a list of offending grid rows.

    The rectangle contrast is evaluated at approximately matched
    propensities, which perturbs it by at most the matching slack, so a
    sign disagreement only counts when |H| exceeds that slack.
    """
    pown = arrays["pown"]
    gmass = structure.partition.gmass
    p11o, p10o = arrays["p11o"], arrays["p10o"]
    pstar, jstar = arrays["pstar"], arrays["jstar"]
    p11G, p10G = arrays["p11G"], arrays["p10G"]
    ok = arrays["grid_ok"]
    v1g, v0g = arrays["v1g"], arrays["v0g"]
    v1x, v0x = arrays["v1x"], arrays["v0x"]
    G = ok.shape[1]
    rows = np.arange(G)
    # matched grid cells per (t, g)
    m11 = p11G[rows[None, :], jstar]  # (T, G)
    m10 = p10G[rows[None, :], jstar]
    slack_t = np.abs(pstar - pown[:, None])  # (T, G)
    # pair (t, s) with p_t above p_s, both matched at the grid row
    order = (pown[:, None] > pown[None, :] + _TIE)
    valid = (order[:, :, None]
             & ok[:, None, :] & ok[None, :, :]
             & (pstar[:, None, :] > pstar[None, :, :] + _TIE))
    w = (gmass[:, None] * gmass[None, :])[:, :, None] * valid
    wsum = w.sum(axis=(0, 1))
    h_fwd = (m11[:, None, :] - m11[None, :, :]
             + (p10o[:, None] - p10o[None, :])[:, :, None])
    h_rev = ((p11o[:, None] - p11o[None, :])[:, :, None]
             + m10[:, None, :] - m10[None, :, :])
    pair_slack = slack_t[:, None, :] + slack_t[None, :, :]
    mism = []
    for g in np.where(wsum > 0)[0]:
        tol = (w[:, :, g] * pair_slack[:, :, g]).sum() / wsum[g] + 1e-10
        for hval, lat in (((w[:, :, g] * h_fwd[:, :, g]).sum() / wsum[g], v1g[g] - v0x),
                          ((w[:, :, g] * h_rev[:, :, g]).sum() / wsum[g], v1x - v0g[g])):
            if (hval > tol and lat < -_TIE) or (hval < -tol and lat > _TIE):
                mism.append((int(g), float(hval), float(lat)))
    return mism


def sv_bounds(spec, x, ivset=None, match=None):
    """Two-layer intersection bounds at x.

    The outer layer intersects over the CPS support at x; the inner layer
    matches covariate points x' on the grid where a propensity within
    ``tolerance_c`` of the outer value is attainable.  Supremum over an
    empty set is 0, infimum is 1.
    """
    ivset = ivset or identity_iv_set(spec.n_instruments)
    match = match or MatchConfig()
    structure, arrays = _solve(spec, x, ivset, match)
    values = _point_values(structure, arrays)
    if match.check_h_sign:
        mism = _h_sign_check(structure, arrays)
        if mism:
            raise RuntimeError(f"sign of pairwise expectation disagrees with "
                               f"the latent comparison at grid rows {mism[:3]}")
    return _combine(values, "sv_")


def h_func(spec, x, xprime, p, pprime, ivset=None, match=None):
    """Observable rectangle contrast h(x, x', p, p').

    Both propensities must be attainable (within the matching tolerance)
    at both covariate points, else the conditional probabilities are not
    well defined.
    """
    ivset = ivset or identity_iv_set(spec.n_instruments)
    match = match or MatchConfig()
    partition = SupportPartition(spec, ivset)
    exact = bool(np.all(np.asarray(spec.pi) == 0.0))
    c_eff = 1e-9 if exact else match.tolerance_c

    def cells_at(point, prob):
        point = np.atleast_1d(np.asarray(point, dtype=float))
        p11, p10, row = partition.group_cells(
            float(np.dot(spec.pi, point)), spec.gamma,
            nu1(spec, 1, point), nu1(spec, 0, point), spec.rho,
        )
        pm, j = _match_nearest(row[0], prob)
        if abs(pm - prob) > c_eff:
            raise ValueError("probabilities not well defined: propensity "
                             f"{prob} unattainable at covariate point {point}")
        return float(p11[0, j]), float(p10[0, j])

    p11_hi, _ = cells_at(xprime, p)
    p11_lo, _ = cells_at(xprime, pprime)
    _, p10_hi = cells_at(x, p)
    _, p10_lo = cells_at(x, pprime)
    return p11_hi - p11_lo - p10_lo + p10_hi


# ---------------------------------------------------------------------------
# decomposition and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundsReport:
    x: tuple
    sign: object  # 1, -1, 0, or None when instruments are irrelevant
    irrelevant: bool
    manski: Interval
    widest: Interval
    sv: Interval
    c1: float
    c2: float
    c3: float
    c4: float
    iip: float
    cps_lo: float
    cps_hi: float
    ate_model: float


def population_report(spec, x, ivset=None, match=None, include_sv=True):
    """Full report at x: all bounds, decomposition, IIP, CPS range."""
    ivset = ivset or identity_iv_set(spec.n_instruments)
    match = match or MatchConfig()
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    support = cps_support(spec, x_arr, ivset)
    manski = manski_bounds(spec, x_arr, ivset)
    ate = float(norm_cdf(nu1(spec, 1, x_arr)) - norm_cdf(nu1(spec, 0, x_arr)))
    if support.degenerate:
        return BoundsReport(
            x=tuple(x_arr), sign=None, irrelevant=True,
            manski=manski, widest=manski, sv=manski,
            c1=0.0, c2=0.0, c3=0.0, c4=manski.width, iip=0.0,
            cps_lo=support.p_lo, cps_hi=support.p_hi, ate_model=ate,
        )
    sign = identify_sign(spec, x_arr, ivset)
    widest = widest_bounds(spec, x_arr, ivset)
    if include_sv:
        sv = sv_bounds(spec, x_arr, ivset, match)
    else:
        sv = widest
    c1 = (1.0 if sign <= 0 else 0.0) * manski.upper \
        - (1.0 if sign >= 0 else 0.0) * manski.lower
    c2 = manski.width - widest.width - c1
    c3 = widest.width - sv.width
    c4 = sv.width
    return BoundsReport(
        x=tuple(x_arr), sign=sign, irrelevant=False,
        manski=manski, widest=widest, sv=sv,
        c1=c1, c2=c2, c3=c3, c4=c4, iip=c1 + c2,
        cps_lo=support.p_lo, cps_hi=support.p_hi, ate_model=ate,
    )


def decompose(spec, x, ivset=None, match=None):
    """Identification-gain components (C1, C2, C3, C4); they sum to the
    benchmark width.  Irrelevant instruments give (0, 0, 0, width)."""
    rep = population_report(spec, x, ivset, match)
    return rep.c1, rep.c2, rep.c3, rep.c4


def iip(spec, x, ivset=None, match=None):
    """Instrument identification power at x: benchmark width minus the
    widest-bound width; zero when the instruments are irrelevant."""
    rep = population_report(spec, x, ivset, match, include_sv=False)
    return rep.iip


def iip_average(spec, ivset=None, x_weights=None, match=None, n_nodes=64):
    """Weighted average of iip over x points.

    ``x_weights`` is a sequence of (x, weight) pairs whose weights sum to
    one.  When omitted, the points come from the covariate distribution:
    the support for a discrete covariate, Gauss-Hermite nodes for a
    normal one.
    """
    if x_weights is None:
        dist = spec.covariate_dist
        if isinstance(dist, Discrete):
            x_weights = list(zip(dist.values, dist.probs))
        elif isinstance(dist, Normal):
            nodes, wts = normal_quadrature(dist.mean, dist.sd, n_nodes)
            x_weights = list(zip(nodes, wts))
        else:
            raise ValueError(f"cannot average over {dist!r}")
    wts = np.asarray([w for _, w in x_weights], dtype=float)
    if abs(wts.sum() - 1.0) > 1e-8:
        raise ValueError("weights must sum to 1")
    vals = np.array([iip(spec, np.atleast_1d(p), ivset, match) for p, _ in x_weights])
    return float(np.dot(wts, vals))


# ---------------------------------------------------------------------------
# re-evaluation at new parameter values (used by estimation)
# ---------------------------------------------------------------------------

def build_structure(spec, x, ivset=None, match=None):
    """Fixed family structure for draw-based re-evaluation.

    Membership, matching and the ATE sign are frozen at ``spec``.
    """
    ivset = ivset or identity_iv_set(spec.n_instruments)
    match = match or MatchConfig()
    structure, arrays = _solve(spec, x, ivset, match)
    if match.check_h_sign:
        mism = _h_sign_check(structure, arrays)
        if mism:
            raise RuntimeError(f"sign of pairwise expectation disagrees with "
                               f"the latent comparison at grid rows {mism[:3]}")
    return structure


def evaluate_structure(structure, alpha, beta, pi, gamma, rho):
    """Member values of every family at one parameter point."""
    alpha = float(alpha)
    rho = float(rho)
    beta = np.asarray(beta, dtype=float)
    pi = np.asarray(pi, dtype=float)
    part = structure.partition
    x = structure.x
    grid = structure.grid
    v1x = alpha + float(np.dot(beta, x))
    v0x = float(np.dot(beta, x))
    o11, o10, opown = part.group_cells(float(np.dot(pi, x)), gamma, v1x, v0x, rho)
    p11o, p10o, pown = o11[0], o10[0], opown[0]

    T = len(pown)
    G = grid.shape[0]
    rows = np.zeros(G, dtype=bool)
    for fam in structure.families.values():
        rows[fam.g[fam.g >= 0]] = True
    p_grid = np.zeros((G, T))
    p11G = np.zeros((G, T))
    p10G = np.zeros((G, T))
    idx = np.where(rows)[0]
    if idx.size:
        sub = grid[idx]
        v1g = alpha + sub @ beta
        v0g = sub @ beta
        c11, c10, cp = part.group_cells(sub @ pi, gamma, v1g, v0g, rho)
        p11G[idx] = c11
        p10G[idx] = c10
        p_grid[idx] = cp

    out = {}
    for name, fam in structure.families.items():
        out[name] = _member_values(
            fam.form, fam.t, fam.g, fam.j,
            pown, p11o, p10o, p_grid, p11G, p10G, part.gmass,
        )
    return out


def intervals_from_values(values, sign):
    """Assemble benchmark/widest/two-layer intervals from family values."""
    manski = Interval(float(values["marg_L"][0]), float(values["marg_U"][0]))
    if sign == 0:
        widest = Interval(0.0, 0.0)
    else:
        widest = _combine(values, "w_")
    sv = _combine(values, "sv_")
    return manski, widest, sv
