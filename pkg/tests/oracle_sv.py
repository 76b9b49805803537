"""Brute-force reference implementation of the population bounds.

Everything is recomputed from scratch with plain Python loops over
enumerated support points and Owen's-T bivariate normal rectangles from
scipy, so the vectorized engine in ivpower can be checked against a
fully independent code path.  Only the input objects (DgpSpec, IvSet)
are shared.  Conventions that are part of the contract are mirrored:
nearest-propensity matching with ties to the smaller value, exact
matching when the covariate is absent from the treatment index, and the
1e-12 tie tolerance on latent-index comparisons.
"""

import math

import numpy as np
from scipy.special import ndtr, ndtri, owens_t

TIE = 1e-12


def binorm_ref(h, k, rho):
    """Pr[Z1 <= h, Z2 <= k] for standard normals with correlation rho."""
    if math.isnan(h) or math.isnan(k):
        raise ValueError("nan argument")
    if rho >= 1.0:
        return float(ndtr(min(h, k)))
    if rho <= -1.0:
        return float(max(0.0, ndtr(h) + ndtr(k) - 1.0))
    if h == -math.inf or k == -math.inf:
        return 0.0
    if h == math.inf:
        return float(ndtr(k))
    if k == math.inf:
        return float(ndtr(h))
    if h == 0.0 and k == 0.0:
        return 0.25 + math.asin(rho) / (2.0 * math.pi)
    s = math.sqrt(1.0 - rho * rho)

    def tterm(w, num):
        if w == 0.0:
            return math.copysign(0.25, num) if num != 0.0 else 0.0
        return float(owens_t(w, num / (w * s)))

    c = 0.0 if (h * k > 0.0 or (h * k == 0.0 and h + k > 0.0)) else 0.5
    val = (0.5 * (ndtr(h) + ndtr(k))
           - tterm(h, k - rho * h) - tterm(k, h - rho * k) - c)
    return min(1.0, max(0.0, val))


def oracle_propensity(spec, x, z):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return float(ndtr(float(np.dot(spec.pi, x)) + float(np.dot(spec.gamma, z))))


def oracle_cells(spec, x, z):
    """The four (y, d) cells at one raw support point, Owen's-T route."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = oracle_propensity(spec, x, z)
    v1 = spec.alpha + float(np.dot(spec.beta, x))
    v0 = float(np.dot(spec.beta, x))
    if p <= 0.0:
        w = -math.inf
    elif p >= 1.0:
        w = math.inf
    else:
        w = float(ndtri(p))
    p11 = binorm_ref(v1, w, spec.rho)
    p01 = p - p11
    p10 = float(ndtr(v0)) - binorm_ref(v0, w, spec.rho)
    p00 = (1.0 - p) - p10
    return p11, p10, p01, p00


def oracle_raw_support(spec):
    """Raw instrument support as (z-tuple, mass) pairs, product order."""
    if isinstance(spec.iv_dists, tuple):
        raw = [((), 1.0)]
        for dist in spec.iv_dists:
            raw = [(z + (float(v),), m * float(q))
                   for z, m in raw for v, q in zip(dist.values, dist.probs)]
        return raw
    return [(tuple(float(v) for v in row), float(m))
            for row, m in zip(spec.iv_dists.values, spec.iv_dists.probs)]


def oracle_groups(spec, ivset):
    """Raw support grouped by the transformed instrument tuple.

    Returns a list of (members, gmass), members being (z, mass) pairs, in
    first-occurrence order over the raw support.
    """
    grouped = {}
    for z, m in oracle_raw_support(spec):
        key = []
        for idx, tag in zip(ivset.use, ivset.recode):
            key.append(float(z[idx] > 0) if tag == "gt0" else float(z[idx]))
        grouped.setdefault(tuple(key), []).append((z, m))
    return [(members, sum(m for _, m in members))
            for members in grouped.values()]


def _group_cells(spec, x, groups):
    """Mixture-averaged (p11, p10, p) per group at covariate x."""
    cells = []
    for members, gmass in groups:
        p11 = p10 = p = 0.0
        for z, m in members:
            c11, c10, _, _ = oracle_cells(spec, x, z)
            w = m / gmass
            p11 += w * c11
            p10 += w * c10
            p += w * oracle_propensity(spec, x, z)
        cells.append((p11, p10, p))
    return cells


def _merged_count(pvalues):
    """Distinct propensities under first-match merging within 1e-12."""
    merged = []
    for p in pvalues:
        for q in merged:
            if abs(q - p) <= 1e-12:
                break
        else:
            merged.append(p)
    return len(merged)


def oracle_report(spec, x, ivset, grid, tolerance_c=0.01):
    """Manski, sign, widest, and two-layer bounds plus the decomposition.

    ``grid`` is the sequence of candidate covariate points; the own point
    is appended when missing, mirroring the engine convention.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    groups = oracle_groups(spec, ivset)
    gmass = [gm for _, gm in groups]
    own = _group_cells(spec, x, groups)
    pown = [c[2] for c in own]

    theta = sum(gm * (c11 + (1.0 - pv - c10))
                for gm, (c11, c10, pv) in zip(gmass, own))
    manski = (theta - 1.0, theta)

    if _merged_count(pown) == 1:
        return {
            "manski": manski, "sign": None, "widest": manski, "sv": manski,
            "c": (0.0, 0.0, 0.0, manski[1] - manski[0]),
            "iip": 0.0, "irrelevant": True,
        }
    lo = min(range(len(pown)), key=lambda t: pown[t])
    hi = max(range(len(pown)), key=lambda t: pown[t])
    diff = (own[hi][0] + own[hi][1]) - (own[lo][0] + own[lo][1])
    sign = 0 if abs(diff) <= 1e-12 else (1 if diff > 0 else -1)

    a11, a10, p_lo = own[lo]
    b11, b10, p_hi = own[hi]
    if sign == 0:
        widest = (0.0, 0.0)
    elif sign > 0:
        widest = ((b11 + b10) - (a11 + a10), b11 + (1.0 - p_hi) - a10)
    else:
        widest = (b11 - a10 - p_lo, (b11 + b10) - (a11 + a10))

    grid = [np.atleast_1d(np.asarray(g, dtype=float)) for g in grid]
    if not any(np.all(np.abs(g - x) <= TIE) for g in grid):
        grid = grid + [x]
    own_rows = [gi for gi, g in enumerate(grid) if np.all(np.abs(g - x) <= TIE)]

    c_eff = 1e-9 if all(v == 0.0 for v in spec.pi) else tolerance_c
    v1x = spec.alpha + float(np.dot(spec.beta, x))
    v0x = float(np.dot(spec.beta, x))

    grid_cells = [_group_cells(spec, g, groups) for g in grid]

    def members(form, rows):
        vals = []
        for t, (t11, t10, tp) in enumerate(own):
            if form == "L1":
                vals.append(t11)
            elif form == "U0":
                vals.append(t10 + tp)
            elif form == "U1":
                vals.append(t11 + (1.0 - tp))
            elif form == "L0":
                vals.append(t10)
            for gi in rows:
                g = grid[gi]
                v1g = spec.alpha + float(np.dot(spec.beta, g))
                v0g = float(np.dot(spec.beta, g))
                if form == "L1" and not v1x >= v0g - TIE:
                    continue
                if form == "U0" and not v1g >= v0x - TIE:
                    continue
                if form == "U1" and not v1x <= v0g + TIE:
                    continue
                if form == "L0" and not v1g <= v0x + TIE:
                    continue
                row = grid_cells[gi]
                ps = [c[2] for c in row]
                best = min(range(len(ps)),
                           key=lambda j: (abs(ps[j] - tp), ps[j], j))
                if abs(ps[best] - tp) > c_eff:
                    continue
                m11, m10, mp = row[best]
                if form in ("U0", "U1") and not TIE < mp < 1.0 - TIE:
                    continue
                mp_c = min(max(mp, TIE), 1.0 - TIE)
                if form == "L1":
                    vals.append(t11 + m10)
                elif form == "U0":
                    vals.append(t10 + tp * m11 / mp_c)
                elif form == "U1":
                    vals.append(t11 + (1.0 - tp) * m10 / (1.0 - mp_c))
                elif form == "L0":
                    vals.append(t10 + m11)
        return vals

    all_rows = range(len(grid))
    sv = (max(members("L1", all_rows)) - min(members("U0", all_rows)),
          min(members("U1", all_rows)) - max(members("L0", all_rows)))
    if sign == 0:
        widest_m = (0.0, 0.0)
    else:
        widest_m = (max(members("L1", own_rows)) - min(members("U0", own_rows)),
                    min(members("U1", own_rows)) - max(members("L0", own_rows)))

    c1 = (manski[1] if sign <= 0 else 0.0) - (manski[0] if sign >= 0 else 0.0)
    width_w = widest[1] - widest[0]
    width_sv = sv[1] - sv[0]
    c2 = (manski[1] - manski[0]) - width_w - c1
    return {
        "manski": manski, "sign": sign, "widest": widest,
        "widest_members": widest_m, "sv": sv,
        "c": (c1, c2, width_w - width_sv, width_sv),
        "iip": c1 + c2, "irrelevant": False,
    }
