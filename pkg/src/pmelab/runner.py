"""Scenario pipelines behind the command line.

Each check writes its own CSV (and, when enabled, PNG) files into the run
directory and returns a :class:`CheckResult`; scalar metrics are collected
into ``metrics.csv`` for golden comparison.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from . import energy, equivalence, obstacle, plotting, reports, solver
from .config import ScenarioConfig, barenblatt_params, build_data
from .domain import (CutoffFunction, Region, ScalarField, SpaceTimeGrid, spatial_weights, time_derivative,
                     write_field, write_field_csv)
from .mollify import MollifierParams, identity_defect

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)


@dataclass
class RunResult:
    out: Path
    checks: list
    metrics: dict

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list:
        return [c.name for c in self.checks if not c.passed]


class Context:
    """Lazily solved fields shared between checks."""

    def __init__(self, cfg: ScenarioConfig, out: Path, figures: bool):
        self.cfg = cfg
        self.out = out
        self.figures = figures
        self.newton_rows: list = []

    @cached_property
    def spec(self) -> obstacle.ObstacleProblemSpec:
        return self.cfg.spec()

    @cached_property
    def newton_tol(self) -> float:
        return float(self.cfg.params.get("newton_tol", 1e-10))

    @cached_property
    def chain_result(self) -> Optional[obstacle.StrongResult]:
        ch = self.cfg.chain()
        if ch is None:
            return None
        return obstacle.solve_strong(self.spec, ch, strict=False, newton_tol=self.newton_tol,
                                     log_rows=self.newton_rows)

    @cached_property
    def solution(self) -> ScalarField:
        res = self.chain_result
        if res is not None:
            return res.u
        rows = []
        u = solver.solve_pme(self.spec.u0, self.spec.g, self._pme_params(), self.cfg.grid, log_rows=rows)
        self.newton_rows.extend((0,) + r for r in rows)
        return u

    def _pme_params(self, eps: float = 0.0) -> solver.PMEParams:
        return solver.PMEParams(m=self.cfg.m, eps=eps, newton_tol=self.newton_tol,
                                newton_max_iters=int(self.cfg.params.get("newton_max_iters", 50)))

    def supersolutions(self) -> list:
        res = self.chain_result
        return list(res.members) if res is not None else [self.solution]

    def lifted_spec(self, k: int) -> obstacle.ObstacleProblemSpec:
        reg = self.cfg.chain().params(k)
        psi, g, u0 = solver.lifted_data(self.spec, reg.eps, reg.gamma)
        return obstacle.ObstacleProblemSpec(psi, g, u0, self.cfg.m)

    def path(self, name: str) -> Path:
        return self.out / name


# -- individual checks -------------------------------------------------------------------

def check_barenblatt_convergence(ctx: Context) -> CheckResult:
    cfg = ctx.cfg
    bp = barenblatt_params(cfg)
    rows, errs = [], []
    for grid in cfg.levels():
        exact = solver.barenblatt_field(grid, bp)
        u = solver.solve_pme(exact.values[0], exact, ctx._pme_params(), grid)
        err = float(np.sum(spatial_weights(grid) * np.abs(u.values[-1] - exact.values[-1])))
        errs.append(err)
        rows.append({"nx": grid.nx[0], "nt": grid.nt, "dx": grid.dx[0], "dt": grid.dt, "l1_error": err})
    orders = [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]
    for r, o in zip(rows[1:], orders):
        r["order"] = o
    reports.write_csv(ctx.path("convergence.csv"), ["nx", "nt", "dx", "dt", "l1_error", "order"], rows)
    if ctx.figures:
        plotting.plot_series(ctx.path("convergence.png"), [r["nx"] for r in rows], {"L1 error at T": errs},
                             "nodes per axis", "error", logx=True, logy=True)
    need = float(cfg.params.get("order_min", 0.8))
    if not orders:
        return CheckResult("barenblatt-convergence", False, "needs at least two grid levels (--refine)")
    ok = min(orders) >= need
    metrics = {f"l1_error.{i}": e for i, e in enumerate(errs)}
    metrics.update({f"order.{i}": o for i, o in enumerate(orders)})
    return CheckResult("barenblatt-convergence", ok, f"observed orders {_fl(orders)} (need >= {need})", metrics)


def check_feasibility(ctx: Context) -> CheckResult:
    res = _need_chain(ctx, "feasibility")
    if isinstance(res, CheckResult):
        return res
    m = ctx.cfg.m
    ch = ctx.cfg.chain()
    rows = []
    for k, d in enumerate(res.deltas):
        reg = ch.params(k)
        rows.append({"k": k, "delta": d, "eps": reg.eps, "gamma": reg.gamma, "gap": res.feasibility[k],
                     "lifted_gap": res.lifted_feasibility[k],
                     "increment": res.increments[k - 1] if k > 0 else float("nan")})
    reports.write_csv(ctx.path("chain.csv"), ["k", "delta", "eps", "gamma", "gap", "lifted_gap", "increment"], rows)
    gaps = res.lifted_feasibility
    slack = ctx.newton_tol
    mono = all(b <= a + slack for a, b in zip(gaps, gaps[1:]))
    bound = 2 * res.deltas[-1] ** (1 / m)
    ok = mono and gaps[-1] <= bound
    metrics = {f"lifted_gap.{k}": g for k, g in enumerate(gaps)}
    metrics.update({f"increment.{k}": v for k, v in enumerate(res.increments)})
    if ctx.figures:
        plotting.plot_profiles(ctx.path("solution.png"), res.u, ctx.spec.psi, title="final chain member")
    return CheckResult("feasibility", ok, f"lifted gaps {_fl(gaps)}, nonincreasing={mono}, "
                       f"final <= {bound:.4g}: {gaps[-1] <= bound}", metrics)


def check_energy(ctx: Context) -> CheckResult:
    res = _need_chain(ctx, "energy")
    if isinstance(res, CheckResult):
        return res
    m = ctx.cfg.m
    grid = ctx.cfg.grid
    interior = Region.shrunk(grid)
    rows, r1, r2 = [], [], []
    for k, u in enumerate(res.members):
        rep = energy.energy_report(u, m, interior, ctx.lifted_spec(k))
        row = {"k": k, "delta": res.deltas[k]}
        row.update(rep.as_row())
        rows.append(row)
        r1.append(rep.ratios["energy_over_A"])
        r2.append(rep.ratios["grad_umid_over_A1"])
    header = list(rows[0].keys())
    reports.write_csv(ctx.path("energy.csv"), header, rows)
    band1, band2 = max(r1) / min(r1), max(r2) / min(r2)
    ok = band1 <= 2 and band2 <= 2
    metrics = {f"energy_over_A.{k}": v for k, v in enumerate(r1)}
    metrics.update({f"grad_umid_over_A1.{k}": v for k, v in enumerate(r2)})
    if ctx.figures:
        plotting.plot_series(ctx.path("energy.png"), list(res.deltas), {"(sup + grad)/A": r1, "grad_mid/(A+1)": r2},
                             "delta", "ratio", logx=True)
    return CheckResult("energy", ok, f"ratio bands {band1:.4g}, {band2:.4g} (need <= 2)", metrics)


def default_cutoffs(grid: SpaceTimeGrid) -> list:
    """Bumps centred at the quarter points of each axis, mid-time."""
    cuts = []
    fr = (0.25, 0.5, 0.75)
    if grid.dim == 1:
        centers = [(a + f * (b - a),) for f in fr for (a, b) in grid.extent]
    else:
        (a0, b0), (a1, b1) = grid.extent
        centers = [(a0 + f * (b0 - a0), a1 + g * (b1 - a1)) for f in fr for g in fr]
    hs = [0.15 * (b - a) for a, b in grid.extent] + [0.4 * grid.T]
    for c in centers:
        cuts.append(CutoffFunction.around(grid, c, grid.T / 2, [h / 2 for h in hs], hs))
    return cuts


def check_caccioppoli(ctx: Context) -> CheckResult:
    m = ctx.cfg.m
    bound = (m + 1) ** 2
    rows, worst = [], 0.0
    for k, u in enumerate(ctx.supersolutions()):
        M = 1.1 * float(u.values.max())
        for j, z in enumerate(default_cutoffs(u.grid)):
            lhs, rhs, ratio = energy.caccioppoli_check(u, M, z, m)
            rows.append({"member": k, "cutoff": j, "lhs": lhs, "rhs": rhs, "ratio": ratio})
            worst = max(worst, ratio)
    reports.write_csv(ctx.path("caccioppoli.csv"), ["member", "cutoff", "lhs", "rhs", "ratio"], rows)
    return CheckResult("caccioppoli", worst <= bound, f"max ratio {worst:.4g} (bound (m+1)^2 = {bound:.4g})",
                       {"max_ratio": worst})


def check_comparison(ctx: Context) -> CheckResult:
    cfg = ctx.cfg
    s = float(cfg.params.get("lower_scale", 0.8))
    if not 0 <= s <= 1:
        return CheckResult("comparison", False, f"lower_scale must lie in [0, 1], got {s}")
    spec = ctx.spec
    upper = solver.solve_pme(spec.u0, spec.g, ctx._pme_params(), cfg.grid)
    lower_g = ScalarField(cfg.grid, s * spec.g.values)
    lower = solver.solve_pme(s * spec.u0, lower_g, ctx._pme_params(), cfg.grid)
    rep = obstacle.comparison_check(upper, lower)
    # the same pair under zero-flux boundaries
    up_n = solver.solve_pme(spec.u0, None, ctx._pme_params(), cfg.grid)
    lo_n = solver.solve_pme(s * spec.u0, None, ctx._pme_params(), cfg.grid)
    viol_n = float(np.max(np.maximum(lo_n.values - up_n.values, 0.0)))
    viol = max(rep.violation, viol_n)
    reports.write_csv(ctx.path("comparison.csv"), ["boundary", "violation", "boundary_gap"],
                      [["dirichlet", rep.violation, rep.boundary_gap], ["zero-flux", viol_n, 0.0]])
    ok = not rep.skipped and viol <= 1e-10
    return CheckResult("comparison", ok, f"max violation {viol:.3e} (need <= 1e-10)", {"violation": viol})


def check_supercaloric(ctx: Context) -> CheckResult:
    cfg = ctx.cfg
    target = ctx.spec.psi
    i_max = int(cfg.params.get("i_max", 4))
    res = obstacle.approximate_supercaloric(target, None, i_max, cfg.m, cfg.chain(), strict=False)
    rows = [{"i": i + 1, "l2_error": e, "increment": res.increments[i] if i < len(res.increments) else float("nan")}
            for i, e in enumerate(res.l2_errors)]
    reports.write_csv(ctx.path("supercaloric.csv"), ["i", "l2_error", "increment"], rows)
    dec = all(b < a for a, b in zip(res.increments, res.increments[1:]))
    ok = res.sandwich_violation <= 1e-8 and dec
    if ctx.figures:
        plotting.plot_profiles(ctx.path("supercaloric.png"), res.solutions[-1], target, title="u_i and target")
    metrics = {"sandwich_violation": res.sandwich_violation}
    metrics.update({f"l2_error.{i}": e for i, e in enumerate(res.l2_errors)})
    metrics.update({f"increment.{i}": v for i, v in enumerate(res.increments)})
    return CheckResult("supercaloric", ok, f"sandwich violation {res.sandwich_violation:.3e}, "
                       f"increments {_fl(res.increments)} strictly decreasing={dec}", metrics)


def check_equivalence(ctx: Context) -> CheckResult:
    cfg = ctx.cfg
    grids = cfg.levels()
    if len(grids) < 2:
        return CheckResult("equivalence", False, "needs at least two grid levels (--refine)")
    rep = equivalence.check_equivalence(lambda g: build_data(cfg, g)[1].values, cfg.m, grids,
                                        basis_size=int(cfg.params.get("basis_size", 20)),
                                        seed=int(cfg.params.get("seed", 0)),
                                        safety=float(cfg.params.get("residual_safety", 10.0)))
    rows = rep.rows()
    reports.write_csv(ctx.path("equivalence.csv"), list(rows[0].keys()), rows)
    res_rows = [[lv_i, k, a, b] for lv_i, lv in enumerate(rep.levels)
                for k, (a, b) in enumerate(zip(lv.residuals_i, lv.residuals_ii))]
    reports.write_csv(ctx.path("equivalence_residuals.csv"), ["level", "phi", "res_i", "res_ii"], res_rows)
    checks = rep.checks()
    metrics = {}
    for r in rows:
        for key in ("max_abs_res_i", "max_abs_res_ii", "max_diff", "gradient_mismatch"):
            metrics[f"{key}.{r['level']}"] = r[key]
    detail = ", ".join(f"{k}={v}" for k, v in checks.items())
    detail += f"; decay {_fl(rep.decay_factors['residuals_i'])} / {_fl(rep.decay_factors['residuals_ii'])}"
    return CheckResult("equivalence", rep.ok, detail, metrics)


def check_coincidence(ctx: Context) -> CheckResult:
    res = _need_chain(ctx, "coincidence")
    if isinstance(res, CheckResult):
        return res
    cfg = ctx.cfg
    regions = cfg.free_regions()
    if not regions:
        return CheckResult("coincidence", False, "no free_regions configured")
    reg = cfg.regularization()
    psi_e = ctx.lifted_spec(len(res.members) - 1).psi
    tol = float(cfg.params.get("coincidence_tol", reg.delta ** (1 / cfg.m)))
    rows, worst = [], 0.0
    for j, region in enumerate(regions):
        try:
            r = obstacle.free_set_comparison(res.u, psi_e, region, cfg.m, reg.eps, tol,
                                             basis_size=int(cfg.params.get("basis_size", 20)),
                                             seed=int(cfg.params.get("seed", 0)))
        except ValueError as exc:
            return CheckResult("coincidence", False, f"region {j}: {exc}")
        rows.append({"region": j, "residual_obstacle": r.residual_obstacle, "residual_pme": r.residual_pme,
                     "ratio": r.ratio, "max_gap": r.max_gap})
        worst = max(worst, r.ratio, 1 / r.ratio if r.ratio > 0 else float("inf"))
    reports.write_csv(ctx.path("coincidence.csv"), ["region", "residual_obstacle", "residual_pme", "ratio", "max_gap"],
                      rows)
    return CheckResult("coincidence", worst <= 3, f"worst residual ratio {worst:.4g} (need <= 3)",
                       {f"ratio.{r['region']}": r["ratio"] for r in rows})


def random_smooth_fields(grid: SpaceTimeGrid, count: int, seed: int = 0) -> list:
    """Sums of a few products of sines in space and time with random coefficients."""
    rng = np.random.default_rng(seed)
    *xs, t = grid.spacetime_mesh()
    out = []
    for _ in range(count):
        v = np.full(grid.shape, rng.uniform(0.5, 1.5))
        for _ in range(3):
            a, w, ph = rng.uniform(-0.5, 0.5), rng.uniform(0.5, 4.0), rng.uniform(0, 2 * np.pi)
            s = np.ones(grid.shape)
            for x, (lo, hi) in zip(xs, grid.extent):
                s = s * np.sin(rng.uniform(0.5, 3.0) * np.pi * (x - lo) / (hi - lo) + rng.uniform(0, np.pi))
            v = v + a * s * np.sin(w * np.pi * t / grid.T + ph)
        out.append(ScalarField(grid, v))
    return out


def identity_scale(u: ScalarField, h: float) -> float:
    return float(np.max(np.abs(time_derivative(u.values, u.grid.dt)))) * max(1.0, 1.0 / h)


def check_mollifier(ctx: Context) -> CheckResult:
    cfg = ctx.cfg
    h = float(cfg.params.get("h", 0.1))
    fields = random_smooth_fields(cfg.grid, int(cfg.params.get("mollifier_fields", 10)), int(cfg.params.get("seed", 0)))
    p = MollifierParams(h, "initial-slice")
    rows, worst = [], 0.0
    for j, u in enumerate(fields):
        d = identity_defect(u, p)
        bound = 5 * cfg.grid.dt * identity_scale(u, h)
        rows.append({"field": j, "defect": d, "bound": bound})
        worst = max(worst, d / bound)
    reports.write_csv(ctx.path("mollifier.csv"), ["field", "defect", "bound"], rows)
    return CheckResult("mollifier", worst <= 1, f"worst defect/bound {worst:.4g}", {"worst_defect_ratio": worst})


def random_bumps(grid: SpaceTimeGrid, count: int, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    *xs, t = grid.spacetime_mesh()
    out = []
    for _ in range(count):
        r2 = 0.0
        for x, (lo, hi) in zip(xs, grid.extent):
            c = rng.uniform(lo + 0.3 * (hi - lo), hi - 0.3 * (hi - lo))
            r2 = r2 + ((x - c) / (rng.uniform(0.05, 0.25) * (hi - lo))) ** 2
        tc, tw = rng.uniform(0.3, 0.7) * grid.T, rng.uniform(0.1, 0.4) * grid.T
        out.append(ScalarField(grid, rng.uniform(0.2, 2.0) * np.exp(-r2 - ((t - tc) / tw) ** 2)))
    return out


def sobolev_ratios(grid: SpaceTimeGrid, m: float, count: int = 20, seed: int = 0, p: float = 2.0,
                   r: Optional[float] = None):
    """``lhs / rhs_without_C`` over a random bump family and the worst homogeneity defect."""
    r = (m + 1) / m if r is None else r
    center = tuple(0.5 * (a + b) for a, b in grid.extent)
    radius = 0.45 * min(b - a for a, b in grid.extent)
    window = (0.1 * grid.T, 0.9 * grid.T)
    ell = p * (grid.dim + r) / grid.dim
    ratios, hom = [], 0.0
    for v in random_bumps(grid, count, seed):
        lhs, rhs = energy.sobolev_check(v, p, r, center, radius, window)
        lhs2, rhs2 = energy.sobolev_check(ScalarField(grid, 3.0 * v.values), p, r, center, radius, window)
        ratios.append(lhs / rhs)
        f = 3.0**ell
        hom = max(hom, abs(lhs2 / (f * lhs) - 1), abs(rhs2 / (f * rhs) - 1))
    return ratios, hom


def check_sobolev(ctx: Context) -> CheckResult:
    cfg = ctx.cfg
    ratios, hom = sobolev_ratios(cfg.grid, cfg.m, int(cfg.params.get("sobolev_family", 20)),
                                 int(cfg.params.get("seed", 0)), float(cfg.params.get("sobolev_p", 2.0)),
                                 cfg.params.get("sobolev_r"))
    reports.write_csv(ctx.path("sobolev.csv"), ["member", "ratio"], list(enumerate(ratios)))
    ok = hom <= 1e-12 and all(np.isfinite(ratios))
    return CheckResult("sobolev", ok, f"max ratio {max(ratios):.6g}, homogeneity defect {hom:.2e}",
                       {"max_ratio": max(ratios), "homogeneity_defect": hom})


CHECK_FUNCS = {
    "barenblatt-convergence": check_barenblatt_convergence,
    "feasibility": check_feasibility,
    "energy": check_energy,
    "caccioppoli": check_caccioppoli,
    "comparison": check_comparison,
    "supercaloric": check_supercaloric,
    "equivalence": check_equivalence,
    "coincidence": check_coincidence,
    "mollifier": check_mollifier,
    "sobolev": check_sobolev,
}


def _need_chain(ctx: Context, name: str):
    res = ctx.chain_result
    if res is None:
        return CheckResult(name, False, "needs a penalization chain ([params].delta)")
    return res


def _fl(vals) -> str:
    return "[" + ", ".join(f"{v:.3g}" for v in vals) + "]"


# -- driver ------------------------------------------------------------------------------

def run_scenario(cfg: ScenarioConfig, out, checks: Optional[list] = None, solve: bool = True) -> RunResult:
    """Solve (when ``solve``), run ``checks`` (default: the configured ones) and write reports."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    formats = cfg.output.get("formats", ["csv", "png"])
    figures = "png" in formats
    ctx = Context(cfg, out, figures)
    checks = cfg.checks if checks is None else checks
    results = []
    if solve:
        u = ctx.solution
        if cfg.output.get("fields", True):
            write_field(out / "u.pmef", u)
            if "csv" in formats:
                write_field_csv(out / "u.csv", u)
        reports.write_csv(out / "newton.csv", ["member", "step", "iterations", "residual"], ctx.newton_rows)
        if figures:
            plotting.plot_profiles(out / "u.png", u, ctx.spec.psi, title=cfg.name)
    for name in checks:
        log.info("running check %s", name)
        results.append(CHECK_FUNCS[name](ctx))
    metrics = {}
    for r in results:
        metrics[f"{r.name}.passed"] = r.passed
        metrics.update({f"{r.name}.{k}": v for k, v in r.metrics.items()})
    reports.write_metrics(out / "metrics.csv", metrics)
    lines = [f"scenario {cfg.name}"]
    lines += [f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in results]
    lines.append(f"overall: {'PASS' if all(r.passed for r in results) else 'FAIL'}")
    reports.write_text(out / "summary.txt", "\n".join(lines) + "\n")
    return RunResult(out, results, metrics)
