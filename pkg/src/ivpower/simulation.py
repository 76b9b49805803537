"""Sampling and Monte Carlo replication harness.

Draws i.i.d. samples from a `DgpSpec`, replicates the fit-and-correct
pipeline over sample sizes and instrument sets with one RNG stream per
(sample size, replicate, instrument set), and aggregates replication
averages and distances to the population bounds.  Also sweeps population
surfaces over (gamma, rho, beta) grids for figure data.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import ks_2samp

from .bounds import Interval, MatchConfig, population_report
from .dgp import DgpSpec, Discrete, IvSet, JointDiscrete, Normal
from .estimation import Dataset, HmueConfig, estimated_report, hausdorff_interval

__all__ = [
    "McDesign",
    "McRecord",
    "McCell",
    "McResult",
    "model2_spec",
    "model3_spec",
    "standard_iv_sets",
    "generate_sample",
    "mc_replicate",
    "run_monte_carlo",
    "table_rows",
    "surface_grid",
    "rank_entries",
    "rank_iv_sets",
    "compare_iip_distributions",
]


def model2_spec(beta=0.25, gamma=1.0, rho=0.5):
    """Single binary instrument on {-1, 1}, covariate absent from the
    treatment index."""
    return DgpSpec(
        alpha=1.0, beta=(float(beta),), pi=(0.0,), gamma=(float(gamma),),
        rho=float(rho), covariate_dist=Normal(0.0, 1.0),
        iv_dists=(Discrete(values=(-1.0, 1.0), probs=(0.5, 0.5)),),
    )


def model3_spec(rho=0.5, covariate="normal"):
    """Three instruments: binary, seven-point, and pure noise (zero
    coefficient).  ``covariate`` picks standard normal or Bernoulli(1/2).
    """
    if covariate == "normal":
        cov = Normal(0.0, 1.0)
    elif covariate == "bernoulli":
        cov = Discrete(values=(0.0, 1.0), probs=(0.5, 0.5))
    else:
        raise ValueError("covariate must be 'normal' or 'bernoulli'")
    return DgpSpec(
        alpha=1.0, beta=(1.0,), pi=(-1.0,), gamma=(0.5, 0.2, 0.0),
        rho=float(rho), covariate_dist=cov,
        iv_dists=(
            Discrete(values=(0.0, 1.0), probs=(0.5, 0.5)),
            Discrete(values=(-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0),
                     probs=(0.1, 0.1, 0.2, 0.2, 0.2, 0.1, 0.1)),
            Discrete(values=(0.0, 1.0), probs=(1.0 / 3.0, 2.0 / 3.0)),
        ),
    )


def standard_iv_sets():
    """The five instrument subsets compared throughout: each single
    instrument, the coarsened pair, the informative pair, and all three."""
    return (
        IvSet("z1", use=(0,)),
        IvSet("z2", use=(1,)),
        IvSet("z1,z2>0", use=(0, 1), recode=("raw", "gt0")),
        IvSet("z1,z2", use=(0, 1)),
        IvSet("z1,z2,z3", use=(0, 1, 2)),
    )


def generate_sample(spec, n, stream):
    """Sample n observations of (y, d, x, z) from the model.

    Draws x and z from their distributions, latent errors from the
    bivariate normal with correlation rho, then d = 1[nu2 > eps2] and
    y = 1[nu1(d, x) > eps1].
    """
    if n < 1:
        raise ValueError("n must be positive")
    k = spec.n_covariates
    if k > 1:
        raise ValueError("sampling supports at most one covariate")
    if k == 1:
        dist = spec.covariate_dist
        if isinstance(dist, Normal):
            x = stream.normal(dist.mean, dist.sd, size=n)
        elif isinstance(dist, Discrete):
            x = stream.choice(np.asarray(dist.values, dtype=float), size=n,
                              p=np.asarray(dist.probs, dtype=float))
        else:
            raise ValueError(f"cannot sample covariates from {dist!r}")
        x = x[:, None]
    else:
        x = np.empty((n, 0))
    if isinstance(spec.iv_dists, JointDiscrete):
        vals = np.asarray(spec.iv_dists.values, dtype=float)
        idx = stream.choice(len(vals), size=n,
                            p=np.asarray(spec.iv_dists.probs, dtype=float))
        z = vals[idx]
    else:
        cols = [stream.choice(np.asarray(d.values, dtype=float), size=n,
                              p=np.asarray(d.probs, dtype=float))
                for d in spec.iv_dists]
        z = np.column_stack(cols) if cols else np.empty((n, 0))
    e1 = stream.standard_normal(n)
    e2 = spec.rho * e1 + math.sqrt(1.0 - spec.rho ** 2) * stream.standard_normal(n)
    v2 = x @ np.asarray(spec.pi) + z @ np.asarray(spec.gamma)
    d = (v2 > e2).astype(float)
    y = (spec.alpha * d + x @ np.asarray(spec.beta) > e1).astype(float)
    return Dataset(y=y, d=d, x=x, z=z)


# ---------------------------------------------------------------------------
# Monte Carlo replication
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McDesign:
    """Replication plan: one dataset per (sample size, replicate), every
    instrument set evaluated on it.  ``record_sv=False`` skips the
    covariate-layer bounds, which is enough for identification-power
    summaries and much faster."""

    spec: DgpSpec
    iv_sets: tuple
    sample_sizes: tuple
    replications: int
    x_eval: tuple = (0.0,)
    seed: int = 0
    hmue: HmueConfig = HmueConfig()
    match: MatchConfig = MatchConfig()
    record_sv: bool = True

    def __post_init__(self):
        object.__setattr__(self, "iv_sets", tuple(self.iv_sets))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "x_eval", tuple(np.atleast_1d(self.x_eval).astype(float)))
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if not self.iv_sets:
            raise ValueError("at least one instrument set is required")
        if any(n < 1 for n in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        names = [s.name for s in self.iv_sets]
        if len(set(names)) != len(names):
            raise ValueError("instrument set names must be unique")


@dataclass(frozen=True)
class McRecord:
    replicate: int
    iv_name: str
    n: int
    failed: bool
    error: str = ""
    report: object = None
    hausdorff_manski: float = math.nan
    hausdorff_sv: float = math.nan


@dataclass(frozen=True)
class McCell:
    """Replication averages for one (instrument set, sample size)."""

    iv_name: str
    n: int
    n_ok: int
    n_failed: int
    mean_manski: Interval
    mean_widest: Interval
    mean_sv: Interval
    mean_c: tuple
    mean_iip: float
    mean_point_iip: float
    mean_flip_rate: float
    mean_hausdorff_manski: float
    mean_hausdorff_sv: float
    iip_draws: np.ndarray


@dataclass(frozen=True)
class McResult:
    design: McDesign
    records: tuple
    cells: dict
    truth: dict
    failure_alarm: bool


def _sample_stream(seed, n_index, replicate):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(n_index, replicate))
    return np.random.default_rng(ss)


def _hmue_seed(seed, n_index, replicate, iv_index):
    ss = np.random.SeedSequence(entropy=seed,
                                spawn_key=(n_index, replicate, 1 + iv_index))
    return int(ss.generate_state(1, np.uint64)[0])


def mc_replicate(design, n_index, replicate, iv_index):
    """One (sample size, replicate, instrument set) task.

    Regenerates the replicate's dataset from its stream, so the same
    sample is shared across instrument sets without passing it around.
    """
    n = design.sample_sizes[n_index]
    data = generate_sample(design.spec, n,
                           _sample_stream(design.seed, n_index, replicate))
    hm = HmueConfig(n_sim=design.hmue.n_sim, levels=design.hmue.levels,
                    seed=_hmue_seed(design.seed, n_index, replicate, iv_index))
    return estimated_report(data, design.iv_sets[iv_index], design.x_eval,
                            design.match, hm, include_sv=design.record_sv)


def run_monte_carlo(design, workers=1):
    """Replicate the pipeline and aggregate deterministically.

    Tasks are independent given their (sample size, replicate,
    instrument set) RNG streams, so the fold over results ordered by
    task index is identical for any worker count.  Failed fits are
    recorded, excluded from averages, and trip an alarm flag when they
    exceed 2 percent of tasks.
    """
    pop_match = MatchConfig(tolerance_c=design.match.tolerance_c,
                            check_h_sign=design.match.check_h_sign)
    truth = {ivs.name: population_report(design.spec, design.x_eval, ivs, pop_match)
             for ivs in design.iv_sets}

    tasks = [(ni, r, si)
             for ni in range(len(design.sample_sizes))
             for r in range(design.replications)
             for si in range(len(design.iv_sets))]

    def run(task):
        ni, r, si = task
        try:
            return task, mc_replicate(design, ni, r, si), ""
        except (RuntimeError, ValueError) as exc:
            return task, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = {t: (rep, err) for t, rep, err in pool.map(run, tasks)}
    else:
        raw = {t: (rep, err) for t, rep, err in map(run, tasks)}

    records = []
    for task in tasks:  # deterministic fold order
        ni, r, si = task
        rep, err = raw[task]
        name = design.iv_sets[si].name
        n = design.sample_sizes[ni]
        if rep is None:
            records.append(McRecord(replicate=r, iv_name=name, n=n,
                                    failed=True, error=err))
            continue
        records.append(McRecord(
            replicate=r, iv_name=name, n=n, failed=False, report=rep,
            hausdorff_manski=hausdorff_interval(rep.manski, truth[name].manski),
            hausdorff_sv=(hausdorff_interval(rep.sv, truth[name].sv)
                          if design.record_sv else math.nan),
        ))

    cells = {}
    for ni, n in enumerate(design.sample_sizes):
        for ivs in design.iv_sets:
            sub = [rec for rec in records if rec.n == n and rec.iv_name == ivs.name]
            ok = [rec for rec in sub if not rec.failed]
            reps = [rec.report for rec in ok]

            def mean(get):
                return float(np.mean([get(rep) for rep in reps])) if reps else math.nan

            cells[ivs.name, n] = McCell(
                iv_name=ivs.name, n=n, n_ok=len(ok), n_failed=len(sub) - len(ok),
                mean_manski=Interval(mean(lambda s: s.manski.lower),
                                     mean(lambda s: s.manski.upper)),
                mean_widest=Interval(mean(lambda s: s.widest.lower),
                                     mean(lambda s: s.widest.upper)),
                mean_sv=Interval(mean(lambda s: s.sv.lower),
                                 mean(lambda s: s.sv.upper)),
                mean_c=(mean(lambda s: s.c1), mean(lambda s: s.c2),
                        mean(lambda s: s.c3), mean(lambda s: s.c4)),
                mean_iip=mean(lambda s: s.iip),
                mean_point_iip=mean(lambda s: s.point_iip),
                mean_flip_rate=mean(lambda s: s.flip_rate),
                mean_hausdorff_manski=(float(np.mean([rec.hausdorff_manski for rec in ok]))
                                       if ok else math.nan),
                mean_hausdorff_sv=(float(np.mean([rec.hausdorff_sv for rec in ok]))
                                   if ok and design.record_sv else math.nan),
                iip_draws=np.array([rep.iip for rep in reps]),
            )

    n_failed = sum(rec.failed for rec in records)
    alarm = n_failed > 0.02 * len(records)
    if alarm:
        warnings.warn(f"{n_failed} of {len(records)} replicate fits failed",
                      RuntimeWarning, stacklevel=2)
    return McResult(design=design, records=tuple(records), cells=cells,
                    truth=truth, failure_alarm=alarm)


def table_rows(result):
    """Flatten an McResult into wide table rows (one per set and size)."""
    rows = []
    for (name, n), cell in result.cells.items():
        rows.append({
            "iv_set": name, "n": n,
            "replications": cell.n_ok, "failures": cell.n_failed,
            "L_M": cell.mean_manski.lower, "U_M": cell.mean_manski.upper,
            "L_bar": cell.mean_widest.lower, "U_bar": cell.mean_widest.upper,
            "L_SV": cell.mean_sv.lower, "U_SV": cell.mean_sv.upper,
            "C1": cell.mean_c[0], "C2": cell.mean_c[1],
            "C3": cell.mean_c[2], "C4": cell.mean_c[3],
            "IIP": cell.mean_iip, "IIP_point": cell.mean_point_iip,
            "dH_M": cell.mean_hausdorff_manski, "dH_SV": cell.mean_hausdorff_sv,
            "flip_rate": cell.mean_flip_rate,
        })
    return rows


# ---------------------------------------------------------------------------
# population surfaces and rankings
# ---------------------------------------------------------------------------

_SURFACE_QUANTITIES = ("L_M", "U_M", "L_bar", "U_bar", "L_SV", "U_SV",
                       "sign", "C1", "C2", "C3", "C4", "IIP")


def surface_grid(spec_template, gamma_grid, rho_grid, beta_values, x_eval,
                 ivset=None, match=None):
    """Population bound surfaces on a (gamma, rho, beta) grid.

    Returns long-format records {gamma, rho, beta, quantity, value} for
    every grid node; irrelevant nodes (gamma=0) carry the benchmark
    bounds and IIP 0.
    """
    gamma_grid = np.atleast_1d(np.asarray(gamma_grid, dtype=float))
    rho_grid = np.atleast_1d(np.asarray(rho_grid, dtype=float))
    beta_values = np.atleast_1d(np.asarray(beta_values, dtype=float))
    if not (gamma_grid.size and rho_grid.size and beta_values.size):
        raise ValueError("grids must be nonempty")
    rows = []
    for beta in beta_values:
        for gamma in gamma_grid:
            for rho in rho_grid:
                spec = replace(spec_template, beta=(float(beta),),
                               gamma=(float(gamma),), rho=float(rho))
                rep = population_report(spec, x_eval, ivset, match)
                values = {
                    "L_M": rep.manski.lower, "U_M": rep.manski.upper,
                    "L_bar": rep.widest.lower, "U_bar": rep.widest.upper,
                    "L_SV": rep.sv.lower, "U_SV": rep.sv.upper,
                    "sign": math.nan if rep.sign is None else float(rep.sign),
                    "C1": rep.c1, "C2": rep.c2, "C3": rep.c3, "C4": rep.c4,
                    "IIP": rep.iip,
                }
                for quantity in _SURFACE_QUANTITIES:
                    rows.append({"gamma": float(gamma), "rho": float(rho),
                                 "beta": float(beta), "quantity": quantity,
                                 "value": values[quantity]})
    return rows


def rank_entries(entries):
    """Sort (name, iip, sv_width) descending by iip; ties go to the
    narrower width, then the name."""
    return sorted(entries, key=lambda e: (-e[1], e[2], e[0]))


def rank_iv_sets(result, n=None):
    """Instrument sets ordered by mean corrected identification power."""
    if n is None:
        if len(result.design.sample_sizes) != 1:
            raise ValueError("result covers several sample sizes; pass n")
        n = result.design.sample_sizes[0]
    entries = []
    for ivs in result.design.iv_sets:
        cell = result.cells[ivs.name, n]
        entries.append((ivs.name, cell.mean_iip, cell.mean_sv.width))
    return rank_entries(entries)


def compare_iip_distributions(result, name_a, name_b, n):
    """Two-sample Kolmogorov-Smirnov test between the per-replicate
    corrected identification-power draws of two instrument sets."""
    a = result.cells[name_a, n].iip_draws
    b = result.cells[name_b, n].iip_draws
    if not (a.size and b.size):
        raise ValueError("no successful replicates to compare")
    return ks_2samp(a, b)
