"""Acceptance criteria 1-10, one PASS/FAIL line each (see the summary section)."""
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from pmelab import cli, equivalence, obstacle, solver
from pmelab.config import build_data, load_config
from pmelab.domain import ScalarField, SpaceTimeGrid
from pmelab.energy import caccioppoli_check
from pmelab.reports import compare_golden
from pmelab.mollify import MollifierParams, identity_defect, mollify_derivative, mollify_time
from pmelab.runner import (Context, check_barenblatt_convergence, check_coincidence, check_comparison,
                           check_energy, check_feasibility, default_cutoffs, identity_scale, random_smooth_fields)

SCEN = Path(__file__).resolve().parents[1] / "scenarios"
GOLDEN = Path(__file__).parent / "golden"


def context(name, tmp_path):
    return Context(load_config(SCEN / f"{name}.toml"), tmp_path, figures=False)


def test_criterion_1_barenblatt_convergence(tmp_path, criterion):
    ctx = context("barenblatt-convergence", tmp_path)
    grids = ctx.cfg.levels()
    assert [g.nx[0] for g in grids] == [128, 256, 512] and ctx.cfg.grid.T == 0.5
    t0 = time.perf_counter()
    r = check_barenblatt_convergence(ctx)
    wall = time.perf_counter() - t0
    orders = [r.metrics["order.0"], r.metrics["order.1"]]
    errs = [r.metrics[f"l1_error.{i}"] for i in range(3)]
    ok = errs[0] > errs[1] > errs[2] and min(orders) >= 0.8 and wall < 30
    criterion(1, ok, f"L1 errors {errs[0]:.3e} {errs[1]:.3e} {errs[2]:.3e}, orders {orders[0]:.3f} "
                     f"{orders[1]:.3f} (>= 0.8), {wall:.1f}s (< 30s)")


def test_criterion_2_mollifier_identity(criterion):
    grid = SpaceTimeGrid(((0.0, 1.0),), (17,), 201, 1.0)
    h = 0.1
    worst = 0.0
    for u in random_smooth_fields(grid, 10, seed=7):
        d = identity_defect(u, MollifierParams(h, "initial-slice"))
        worst = max(worst, d / (5 * grid.dt * identity_scale(u, h)))
    t = grid.times[:, None]
    p = MollifierParams(h)
    c = 1.7
    const = ScalarField.constant(grid, c)
    lin = ScalarField.from_function(grid, lambda x, t: t)
    closed = max(
        np.max(np.abs(mollify_time(const, p).values - c * (1 - np.exp(-t / h)))),
        np.max(np.abs(mollify_derivative(const, p).values - c / h * np.exp(-t / h))),
        np.max(np.abs(mollify_time(lin, p).values - (t - h * (1 - np.exp(-t / h))))),
        np.max(np.abs(mollify_derivative(lin, p).values - (1 - np.exp(-t / h)))),
        np.max(np.abs(mollify_time(const, MollifierParams(h, "initial-slice")).values - c)),
    )
    criterion(2, worst <= 1 and closed <= 1e-12,
              f"worst defect / (5 dt scale) = {worst:.3f} (<= 1) over 10 fields, closed forms {closed:.1e} (<= 1e-12)")


@pytest.fixture(scope="module")
def bump_run(tmp_path_factory):
    ctx = context("bump-obstacle", tmp_path_factory.mktemp("bump"))
    t0 = time.perf_counter()
    ctx.chain_result
    return ctx, time.perf_counter() - t0


def test_criterion_3_penalized_feasibility(bump_run, criterion):
    ctx, _ = bump_run
    res = ctx.chain_result
    assert list(res.deltas) == [0.1, 0.05, 0.025, 0.0125]
    gaps = res.lifted_feasibility
    mono = all(b <= a for a, b in zip(gaps, gaps[1:]))
    bound = 2 * 0.0125 ** (1 / ctx.cfg.m)
    criterion(3, mono and gaps[-1] <= bound and check_feasibility(ctx).passed,
              f"max(psi_eps - u_delta)+ = {', '.join(f'{g:.2e}' for g in gaps)}; nonincreasing={mono}, "
              f"final <= {bound:.4f}")


def test_criterion_4_energy_uniformity(bump_run, criterion):
    ctx, solve_time = bump_run
    t0 = time.perf_counter()
    r = check_energy(ctx)
    wall = solve_time + time.perf_counter() - t0
    r1 = [r.metrics[f"energy_over_A.{k}"] for k in range(4)]
    r2 = [r.metrics[f"grad_umid_over_A1.{k}"] for k in range(4)]
    b1, b2 = max(r1) / min(r1), max(r2) / min(r2)
    criterion(4, b1 <= 2 and b2 <= 2 and wall < 60 and ctx.cfg.grid.nx[0] == 128,
              f"bands {b1:.3f}, {b2:.3f} (<= 2) at nx = 128, {wall:.1f}s (< 60s)")


def _caccioppoli_worst(fields, m):
    worst = 0.0
    for u in fields:
        M = 1.1 * float(u.values.max())
        for z in default_cutoffs(u.grid):
            worst = max(worst, caccioppoli_check(u, M, z, m)[2])
    return worst


def test_criterion_5_caccioppoli(criterion):
    parts = []
    ok = True
    for m in (1.5, 2.0, 3.0):
        g = SpaceTimeGrid(((-2.5, 2.5),), (129,), 65, 0.5)
        bp = solver.BarenblattParams(m=m, C=0.25)
        exact = solver.barenblatt_field(g, bp)
        numeric = solver.solve_pme(exact.values[0], exact, solver.PMEParams(m=m), g)
        gb = SpaceTimeGrid(((0.0, 1.0),), (65,), 33, 0.5)
        x, t = gb.spacetime_mesh()
        psi = 0.8 * np.exp(-((x - 0.5) / 0.12) ** 2) * (0.5 + t)
        data = np.maximum(psi, 0.2)
        spec = obstacle.ObstacleProblemSpec(ScalarField(gb, psi), ScalarField(gb, data), data[0], m)
        members = obstacle.solve_strong(spec, obstacle.ApproximationChain(delta_seq=(0.1, 0.05, 0.025))).members
        worst = _caccioppoli_worst([exact, numeric] + list(members), m)
        ok = ok and worst <= (m + 1) ** 2
        parts.append(f"m={m:g}: {worst:.3f} <= {(m + 1) ** 2:g}")
    criterion(5, ok, "max lhs/rhs " + "; ".join(parts))


def test_criterion_6_comparison(tmp_path, criterion):
    r = check_comparison(context("comparison", tmp_path))
    g = SpaceTimeGrid(((-3.0, 3.0),), (121,), 41, 1.0)
    sols = []
    for C in (0.2, 0.3):
        exact = solver.barenblatt_field(g, solver.BarenblattParams(m=2.0, C=C))
        sols.append(solver.solve_pme(exact.values[0], exact, solver.PMEParams(m=2.0), g))
    viol = obstacle.comparison_check(sols[1], sols[0]).violation
    worst = max(r.metrics["violation"], viol)
    criterion(6, r.passed and worst <= 1e-10,
              f"max violation {worst:.2e} (<= 1e-10) on scaled bump data (m=3) and nested source solutions")


def test_criterion_7_monotone_approximation(criterion):
    ok, parts = True, []
    for name in ("supercaloric-constant", "supercaloric-barenblatt"):
        cfg = load_config(SCEN / f"{name}.toml")
        target = cfg.spec().psi
        res = obstacle.approximate_supercaloric(target, None, 4, cfg.m, cfg.chain(), strict=False)
        viol = 0.0
        for i, (psi_i, u_i) in enumerate(zip(res.obstacles, res.solutions)):
            viol = max(viol, np.max(psi_i.values - u_i.values), np.max(u_i.values - target.values))
            if i + 1 < len(res.solutions):
                viol = max(viol, np.max(u_i.values - res.solutions[i + 1].values))
        dec = all(b < a for a, b in zip(res.increments, res.increments[1:]))
        ok = ok and viol <= 1e-8 and dec and len(res.solutions) == 4
        parts.append(f"{name}: violation {max(viol, 0.0):.1e}, increments "
                     f"{', '.join(f'{v:.2e}' for v in res.increments)} decreasing={dec}")
    criterion(7, ok, "sandwich (<= 1e-8) and interior L2 increments; " + "; ".join(parts))


def test_criterion_8_equivalence(criterion):
    ok, parts = True, []
    for name in ("equivalence-positive", "equivalence-vacuum"):
        cfg = load_config(SCEN / f"{name}.toml")
        grids = cfg.levels()[:2]
        field_at = lambda g: build_data(cfg, g)[1].values  # noqa: E731
        rep = equivalence.check_equivalence(field_at, cfg.m, grids, basis_size=20,
                                            seed=int(cfg.params.get("seed", 0)))
        vacuum = min(field_at(g).min() for g in grids) == 0.0
        assert vacuum == name.endswith("vacuum")
        diff = max(lv.max_difference / lv.tolerance for lv in rep.levels)
        fi, fii = rep.decay_factors["residuals_i"][0], rep.decay_factors["residuals_ii"][0]
        ok = ok and all(len(lv.residuals_i) == 20 for lv in rep.levels) and diff <= 1 and min(fi, fii) >= 1.5
        parts.append(f"{name}: max |res_i - res_ii|/tol {diff:.1e}, decay {fi:.1f}, {fii:.1f}")
    criterion(8, ok, "per-phi difference within 10 (dx + dt)(1 + |u|)^m, decay >= 1.5; " + "; ".join(parts))


def test_criterion_9_coincidence(tmp_path, criterion):
    ctx = context("coincidence", tmp_path)
    r = check_coincidence(ctx)
    ratios = [r.metrics[k] for k in sorted(r.metrics)]
    ok = bool(ratios) and all(1 / 3 <= x <= 3 for x in ratios)
    criterion(9, ok and r.passed, f"residual ratio obstacle/plain on free regions {', '.join(f'{x:.6f}' for x in ratios)}"
                                  " (within factor 3)")


def test_criterion_10_determinism(tmp_path, criterion):
    names = sorted(p.stem for p in SCEN.glob("*.toml"))
    differing = []
    for name in names:
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        for out in (a, b):
            assert cli.main(["run", "--config", str(SCEN / f"{name}.toml"), "--out", str(out)]) == 0
        files = sorted(p.name for p in a.iterdir())
        assert files == sorted(p.name for p in b.iterdir())
        _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        differing += [f"{name}/{f}" for f in mismatch + errors]
        assert compare_golden(a / "metrics.csv", GOLDEN / f"{name}.csv").ok, name
    criterion(10, not differing, f"{len(names)} scenarios run twice, all output files byte-identical"
              if not differing else f"differing files: {differing}")
