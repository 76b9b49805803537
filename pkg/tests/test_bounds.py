import numpy as np
import pytest

from ivpower.bounds import (Interval, MatchConfig, build_structure,
                            default_covariate_grid, evaluate_structure,
                            h_func, identify_sign, iip, iip_average,
                            intervals_from_values, manski_bounds,
                            population_report, sv_bounds, widest_bounds)
from ivpower.dgp import (DgpSpec, Discrete, IvSet, JointDiscrete, Normal,
                         cps_support, true_ate)
from ivpower.simulation import model2_spec, model3_spec, standard_iv_sets
from oracle_sv import oracle_report

X0 = np.array([0.0])

# True-DGP table rows at x=0 (tolerance 2e-3).  The benchmark and widest
# intervals depend on the covariate distribution only through the grid,
# so they are shared across the two covariate cases.
_TRUE_ROWS = {
    # (covariate, rho): (manski, sv, (c1, c2, c3, c4))
    ("normal", 0.5): ((-0.179, 0.821), (0.341, 0.341), (0.179, 0.446, 0.375, 0.0)),
    ("normal", 0.8): ((-0.096, 0.904), (0.341, 0.341), (0.096, 0.498, 0.406, 0.0)),
    ("bernoulli", 0.5): ((-0.179, 0.821), (0.283, 0.547), (0.179, 0.446, 0.111, 0.264)),
    ("bernoulli", 0.8): ((-0.096, 0.904), (0.319, 0.593), (0.096, 0.498, 0.132, 0.274)),
}

_IIP_BY_SET = {
    0.5: (0.305, 0.493, 0.456, 0.625, 0.625),
    0.8: (0.232, 0.443, 0.403, 0.594, 0.594),
}


def random_micro_case(rng, i):
    """One random fully discrete data-generating process and subset.

    Kept deliberately small (at most 4 covariate and 8 instrument support
    points) so the reference enumerator stays exact and fast.
    """
    ncov = int(rng.integers(2, 5))
    xvals = np.round(np.sort(rng.uniform(-1.5, 1.5, ncov)), 3)
    xprobs = rng.dirichlet(np.ones(ncov))
    cov = Discrete(tuple(xvals), tuple(xprobs / xprobs.sum()))
    if i % 3 == 2:
        m = int(rng.integers(1, 4))
        npt = int(rng.integers(2, 9))
        rows = np.round(rng.uniform(-2, 2, (npt, m)), 2)
        probs = rng.dirichlet(np.ones(npt))
        ivd = JointDiscrete(tuple(tuple(r) for r in rows), tuple(probs))
        nz = m
    else:
        nz = int(rng.integers(1, 4))
        dists, total = [], 1
        for _ in range(nz):
            cap = 8 // total
            if cap < 2:
                break
            k = int(rng.integers(2, min(3, cap) + 1))
            total *= k
            vals = np.round(np.sort(rng.uniform(-2, 2, k)), 2)
            pr = rng.dirichlet(np.ones(k))
            dists.append(Discrete(tuple(vals), tuple(pr)))
        nz = len(dists)
        ivd = tuple(dists)
    gamma = (tuple(0.0 for _ in range(nz)) if i % 5 == 4 else
             tuple(float(np.round(rng.uniform(-1.2, 1.2), 3)) for _ in range(nz)))
    spec = DgpSpec(
        alpha=float(np.round(rng.uniform(-1.5, 1.5), 3)),
        beta=float(np.round(rng.uniform(-1, 1), 3)),
        pi=0.0 if i % 4 == 0 else float(np.round(rng.uniform(-1, 1), 3)),
        gamma=gamma,
        rho=float(np.round(rng.uniform(-0.9, 0.9), 3)),
        covariate_dist=cov, iv_dists=ivd)
    nuse = int(rng.integers(1, nz + 1))
    use = tuple(sorted(rng.choice(nz, nuse, replace=False).tolist()))
    recode = tuple(str(rng.choice(["raw", "gt0"])) for _ in use)
    return spec, IvSet("s", use=use, recode=recode)


def assert_report_matches_oracle(spec, x, ivset, match, tol=1e-9):
    rep = population_report(spec, x, ivset, match)
    grid = [g for g in default_covariate_grid(spec, match)]
    orc = oracle_report(spec, x, ivset, grid, tolerance_c=match.tolerance_c)
    assert rep.irrelevant == orc["irrelevant"]
    assert rep.sign == orc["sign"]
    np.testing.assert_allclose(
        [rep.manski.lower, rep.manski.upper], orc["manski"], atol=tol)
    np.testing.assert_allclose(
        [rep.widest.lower, rep.widest.upper], orc["widest"], atol=tol)
    np.testing.assert_allclose([rep.sv.lower, rep.sv.upper], orc["sv"], atol=tol)
    np.testing.assert_allclose(
        [rep.c1, rep.c2, rep.c3, rep.c4], orc["c"], atol=tol)
    assert rep.iip == pytest.approx(orc["iip"], abs=tol)
    if not orc["irrelevant"]:
        # the own-row member families must agree with the closed forms
        np.testing.assert_allclose(orc["widest_members"], orc["widest"], atol=tol)


def test_micro_dgps_match_reference_enumerator():
    rng = np.random.default_rng(311)
    for i in range(50):
        spec, ivset = random_micro_case(rng, i)
        xv = spec.covariate_dist.values
        x = np.array([xv[int(rng.integers(len(xv)))]])
        assert_report_matches_oracle(spec, x, ivset, MatchConfig())


def test_model3_reports_match_reference_enumerator():
    for cov, rho in (("normal", 0.5), ("bernoulli", 0.8)):
        spec = model3_spec(rho=rho, covariate=cov)
        for ivset in (standard_iv_sets()[0], standard_iv_sets()[3]):
            assert_report_matches_oracle(spec, X0, ivset, MatchConfig())


@pytest.mark.parametrize("cov,rho", list(_TRUE_ROWS))
def test_true_dgp_table_rows(cov, rho):
    spec = model3_spec(rho=rho, covariate=cov)
    rep = population_report(spec, X0, standard_iv_sets()[3], MatchConfig())
    manski, sv, comp = _TRUE_ROWS[cov, rho]
    assert rep.manski.lower == pytest.approx(manski[0], abs=2e-3)
    assert rep.manski.upper == pytest.approx(manski[1], abs=2e-3)
    assert rep.sv.lower == pytest.approx(sv[0], abs=2e-3)
    assert rep.sv.upper == pytest.approx(sv[1], abs=2e-3)
    np.testing.assert_allclose([rep.c1, rep.c2, rep.c3, rep.c4], comp, atol=2e-3)
    assert rep.iip == pytest.approx(comp[0] + comp[1], abs=4e-3)
    assert rep.sign == 1
    assert rep.ate_model == pytest.approx(true_ate(spec, X0), abs=1e-12)


@pytest.mark.parametrize("rho", [0.5, 0.8])
def test_identification_power_by_set(rho):
    spec = model3_spec(rho=rho)
    for ivset, want in zip(standard_iv_sets(), _IIP_BY_SET[rho]):
        assert iip(spec, X0, ivset) == pytest.approx(want, abs=1e-3)


def test_manski_width_is_one():
    spec = model3_spec(rho=0.5)
    for ivset in standard_iv_sets():
        b = manski_bounds(spec, X0, ivset)
        assert b.width == pytest.approx(1.0, abs=1e-12)
    micro = DgpSpec(alpha=-0.4, beta=0.6, pi=0.3, gamma=0.7, rho=-0.3,
                    covariate_dist=Discrete((0.0, 1.0), (0.5, 0.5)),
                    iv_dists=(Discrete((-1.0, 1.0), (0.5, 0.5)),))
    assert manski_bounds(micro, np.array([1.0])).width == pytest.approx(1.0, abs=1e-12)


def test_bound_nesting_with_matching_slack():
    # matched members can overshoot by the matching tolerance, no more
    match = MatchConfig()
    slack = match.tolerance_c + 1e-9
    for cov in ("normal", "bernoulli"):
        spec = model3_spec(rho=0.5, covariate=cov)
        rep = population_report(spec, X0, standard_iv_sets()[3], match)
        assert rep.manski.contains(rep.widest, slack=1e-12)
        assert rep.widest.contains(rep.sv, slack=slack)
        assert rep.sv.lower - slack <= rep.ate_model <= rep.sv.upper + slack


def test_identify_sign():
    assert identify_sign(model3_spec(rho=0.5), X0, standard_iv_sets()[3]) == 1
    neg = DgpSpec(alpha=-1.0, beta=1.0, pi=-1.0, gamma=(0.5,), rho=0.5,
                  covariate_dist=Normal(0.0, 1.0),
                  iv_dists=(Discrete((0.0, 1.0), (0.5, 0.5)),))
    assert identify_sign(neg, X0) == -1
    flat = DgpSpec(alpha=1.0, beta=1.0, pi=0.0, gamma=(0.0,), rho=0.5,
                   covariate_dist=Normal(0.0, 1.0),
                   iv_dists=(Discrete((0.0, 1.0), (0.5, 0.5)),))
    with pytest.raises(ValueError, match="irrelevant"):
        identify_sign(flat, X0)


def test_population_report_irrelevant_instruments():
    spec = DgpSpec(alpha=1.0, beta=1.0, pi=-1.0, gamma=(0.0, 0.0, 0.0), rho=0.5,
                   covariate_dist=Normal(0.0, 1.0),
                   iv_dists=model3_spec().iv_dists)
    rep = population_report(spec, X0, standard_iv_sets()[3])
    assert rep.irrelevant and rep.sign is None
    assert rep.iip == 0.0
    assert (rep.c1, rep.c2, rep.c3) == (0.0, 0.0, 0.0)
    assert rep.c4 == pytest.approx(rep.manski.width, abs=1e-12)
    assert rep.widest == rep.manski == rep.sv
    assert iip(spec, X0, standard_iv_sets()[3]) == 0.0


def test_perfect_prediction_gives_full_power():
    spec = DgpSpec(alpha=1.0, beta=1.0, pi=0.0, gamma=(40.0,), rho=0.5,
                   covariate_dist=Normal(0.0, 1.0),
                   iv_dists=(Discrete((-1.0, 1.0), (0.5, 0.5)),))
    rep = population_report(spec, X0, include_sv=False)
    assert rep.cps_lo < 1e-12 and rep.cps_hi > 1.0 - 1e-12
    assert rep.widest.width == pytest.approx(0.0, abs=1e-12)
    assert rep.iip == pytest.approx(1.0, abs=1e-12)


def test_degenerate_outcome_index_keeps_widest_width():
    # with beta = 0 the covariate layer has nothing to add
    spec = DgpSpec(alpha=0.8, beta=0.0, pi=0.0, gamma=(0.9,), rho=0.4,
                   covariate_dist=Discrete((-1.0, 0.0, 1.0), (0.3, 0.4, 0.3)),
                   iv_dists=(Discrete((-1.0, 0.0, 1.0), (0.2, 0.5, 0.3)),))
    w = widest_bounds(spec, X0)
    s = sv_bounds(spec, X0)
    assert s.width == pytest.approx(w.width, abs=1e-12)


def test_h_func_nonnegative_on_shared_point():
    spec = model3_spec(rho=0.5)
    ivset = standard_iv_sets()[3]
    sup = cps_support(spec, X0, ivset)
    hi, lo = sup.p_hi, sup.p_lo
    assert h_func(spec, X0, X0, hi, lo, ivset) >= -1e-12
    with pytest.raises(ValueError, match="unattainable"):
        h_func(spec, X0, X0, 0.99, lo, ivset)


def test_default_covariate_grid():
    spec = model3_spec(rho=0.5)
    grid = default_covariate_grid(spec, MatchConfig())
    assert grid.shape == (801, 1)
    assert grid[0, 0] == pytest.approx(-4.0, abs=1e-12)
    assert grid[-1, 0] == pytest.approx(4.0, abs=1e-12)
    steps = np.diff(grid[:, 0])
    np.testing.assert_allclose(steps, 0.01, atol=1e-12)
    disc = model3_spec(rho=0.5, covariate="bernoulli")
    np.testing.assert_allclose(default_covariate_grid(disc, MatchConfig()),
                               [[0.0], [1.0]], atol=0)


def test_structure_evaluation_reproduces_population_point():
    spec = model3_spec(rho=0.8, covariate="bernoulli")
    ivset = standard_iv_sets()[3]
    match = MatchConfig()
    rep = population_report(spec, X0, ivset, match)
    structure = build_structure(spec, X0, ivset, match)
    values = evaluate_structure(structure, spec.alpha, spec.beta, spec.pi,
                                spec.gamma, spec.rho)
    manski, widest, sv = intervals_from_values(values, structure.sign)
    assert manski.lower == pytest.approx(rep.manski.lower, abs=1e-12)
    assert manski.upper == pytest.approx(rep.manski.upper, abs=1e-12)
    assert widest.lower == pytest.approx(rep.widest.lower, abs=1e-12)
    assert widest.upper == pytest.approx(rep.widest.upper, abs=1e-12)
    assert sv.lower == pytest.approx(rep.sv.lower, abs=1e-12)
    assert sv.upper == pytest.approx(rep.sv.upper, abs=1e-12)


def test_iip_average_weighted_points():
    spec = model3_spec(rho=0.5, covariate="bernoulli")
    ivset = standard_iv_sets()[3]
    pts = [(np.array([0.0]), 0.5), (np.array([1.0]), 0.5)]
    want = 0.5 * iip(spec, X0, ivset) + 0.5 * iip(spec, np.array([1.0]), ivset)
    assert iip_average(spec, ivset, x_weights=pts) == pytest.approx(want, abs=1e-12)
    # default for a discrete covariate uses the support probabilities
    assert iip_average(spec, ivset) == pytest.approx(want, abs=1e-12)
    with pytest.raises(ValueError, match="sum to 1"):
        iip_average(spec, ivset, x_weights=[(np.array([0.0]), 0.7)])


def test_interval_helpers():
    outer = Interval(-0.2, 0.8)
    inner = Interval(-0.1, 0.75)
    assert outer.contains(inner)
    assert not inner.contains(outer)
    assert inner.contains(Interval(-0.1001, 0.75), slack=1e-3)
    assert outer.width == pytest.approx(1.0, abs=1e-15)


def test_widest_width_monotone_in_rho_for_positive_sign():
    widths = []
    for rho in (0.2, 0.5, 0.8):
        spec = model2_spec(beta=0.25, gamma=1.0, rho=rho)
        widths.append(widest_bounds(spec, X0).width)
    assert widths[0] <= widths[1] + 1e-12 <= widths[2] + 2e-12


def test_sv_width_monotone_in_instrument_strength():
    widths = []
    for gamma in (0.5, 1.0, 2.0):
        spec = model2_spec(beta=0.25, gamma=gamma, rho=0.5)
        widths.append(sv_bounds(spec, X0).width)
    assert widths[0] >= widths[1] - 1e-12 >= widths[2] - 2e-12


def test_zero_treatment_effect_sign():
    spec = DgpSpec(alpha=0.0, beta=0.7, pi=0.2, gamma=(0.8,), rho=0.3,
                   covariate_dist=Discrete((-0.5, 0.5), (0.5, 0.5)),
                   iv_dists=(Discrete((-1.0, 1.0), (0.4, 0.6)),))
    x = np.array([0.5])
    assert identify_sign(spec, x) == 0
    w = widest_bounds(spec, x)
    assert (w.lower, w.upper) == (0.0, 0.0)
    s = sv_bounds(spec, x)
    assert s.lower <= 1e-12 and s.upper >= -1e-12
    rep = population_report(spec, x)
    assert rep.iip == pytest.approx(1.0, abs=1e-12)


def test_match_config_defaults():
    match = MatchConfig()
    assert match.tolerance_c == 0.01
    assert match.grid_step == 0.01
    assert match.grid_span_sd == 4.0
    assert match.check_h_sign
