import numpy as np
import pytest

from pmelab.domain import Region, ScalarField, SpaceTimeGrid
from pmelab.obstacle import (ApproximationChain, ChainError, ObstacleProblemSpec, RegularizationParams,
                             SpecValidationError, approximate_supercaloric, build_obstacle_sequence,
                             coincidence_set, comparison_check, default_coincidence_tol, free_set_comparison,
                             solve_strong, solve_weak, validate_spec)
from pmelab.solver import BarenblattParams, barenblatt_field, lifted_data, solve_penalized

M = 2.0


def flat(g, c):
    return ScalarField.constant(g, c)


def bump_spec(g, floor=0.2):
    x, t = g.spacetime_mesh()
    psi = 0.8 * np.exp(-((x - 0.5) / 0.12) ** 2) * (0.5 + t)
    data = np.maximum(psi, floor)
    return ObstacleProblemSpec(ScalarField(g, psi), ScalarField(g, data), data[0], M)


@pytest.fixture(scope="module")
def grid():
    return SpaceTimeGrid(((0.0, 1.0),), (65,), 33, 0.5)


def test_regularization_params_bounds():
    RegularizationParams(0.5, 0.5, 1.0)
    for bad in ((0.0, 0.1, 0.1), (0.1, 0.1, 1.5), (0.6, 0.6, 0.1)):
        with pytest.raises(ValueError):
            RegularizationParams(*bad)


def test_chain_sequences_must_decrease():
    with pytest.raises(ValueError):
        ApproximationChain(delta_seq=(0.1, 0.1))
    with pytest.raises(ValueError):
        ApproximationChain(delta_seq=(0.1, 0.05), eps_seq=(1e-3, 1e-3, 1e-4))
    ch = ApproximationChain(delta_seq=(0.1, 0.05), eps_seq=(1e-2, 1e-3))
    assert ch.params(1) == RegularizationParams(1e-3, 1e-3, 0.05, 0.1)


def test_validate_spec_examples(grid):
    ok = ObstacleProblemSpec(flat(grid, 0.0), flat(grid, 1.0), np.ones(65), M)
    assert validate_spec(ok).ok
    bad = ObstacleProblemSpec(flat(grid, 1.0), flat(grid, 0.0), np.zeros(65), M)
    fails = validate_spec(bad).failures()
    assert any(f.startswith("compatibility:g>=psi") for f in fails)
    u0 = np.ones(65)
    u0[0] = 0.5
    d = validate_spec(ObstacleProblemSpec(flat(grid, 0.0), flat(grid, 1.0), u0, M))
    assert any("g(0)=u0" in f and "node (0,)" in f for f in d.failures())
    with pytest.raises(SpecValidationError):
        d.raise_on_failure()
    assert "Psi_sup" in validate_spec(bump_spec(grid)).info


def test_strong_constant_data_independent_of_delta(grid):
    spec = ObstacleProblemSpec(flat(grid, 0.0), flat(grid, 0.6), np.full(65, 0.6), M)
    res = solve_strong(spec, ApproximationChain(delta_seq=(0.1, 0.05, 0.025)))
    assert max(res.increments) < 1e-12


def test_strong_bump_chain_increments_halve(grid):
    res = solve_strong(bump_spec(grid), ApproximationChain(delta_seq=(0.1, 0.05, 0.025, 0.0125)))
    inc = res.increments
    assert all(0.35 < b / a < 0.65 for a, b in zip(inc, inc[1:]))
    assert res.lifted_feasibility == sorted(res.lifted_feasibility, reverse=True)
    assert res.feasibility[-1] <= res.feastol


def test_coincidence_set_examples(grid):
    psi = bump_spec(grid).psi
    assert coincidence_set(psi, psi, 0.0).all()
    shifted = ScalarField(grid, psi.values + 1)
    assert not coincidence_set(shifted, psi, 1e-6).any()
    assert default_coincidence_tol(0.01, 2.0) == pytest.approx(0.2)


def test_coincidence_set_tracks_bump(grid):
    spec = bump_spec(grid)
    u = solve_penalized(spec, RegularizationParams(1e-3, 1e-3, 0.0125))
    psi_e = lifted_data(spec, 1e-3, 1e-3)[0]
    mask = coincidence_set(u, psi_e, 0.0125**0.5)
    x = grid.axes[0]
    near = np.abs(x - 0.5) < 0.05
    assert mask[-1, near].all()
    assert not mask[:, np.abs(x - 0.5) > 0.35].any()


def test_comparison_check_examples(grid):
    w = bump_spec(grid).psi
    assert comparison_check(w, w).violation == 0
    assert comparison_check(ScalarField(grid, w.values + 1), w).violation == 0
    g = SpaceTimeGrid(((-3.0, 3.0),), (121,), 21, 1.0)
    lo = barenblatt_field(g, BarenblattParams(m=2.0, C=0.2))
    hi = barenblatt_field(g, BarenblattParams(m=2.0, C=0.3))
    rep = comparison_check(hi, lo)
    assert not rep.skipped and rep.violation <= 1e-10
    assert comparison_check(lo, hi).skipped is True


def test_obstacle_sequence():
    g = SpaceTimeGrid(((0.0, 1.0),), (17,), 9, 0.5)
    seq = build_obstacle_sequence(flat(g, 1.0), 3)
    assert [float(s.values.mean()) for s in seq] == pytest.approx([0.5, 0.75, 0.875], abs=1e-12)
    assert all(np.all(s.values == 0) for s in build_obstacle_sequence(flat(g, 0.0), 3))
    psi = bump_spec(g).psi
    seq = build_obstacle_sequence(psi, 4)
    for a, b in zip(seq, seq[1:]):
        assert np.all(b.values > a.values)
    assert np.all(seq[-1].values <= psi.values)


def test_solve_weak_orders_iterates():
    g = SpaceTimeGrid(((0.0, 1.0),), (33,), 17, 0.5)
    base = bump_spec(g)
    obs = [ScalarField(g, base.psi.values * (1 - 1 / (i + 1))) for i in range(1, 6)]
    ch = ApproximationChain(delta_seq=(0.05, 0.025), obstacle_seq=tuple(obs))
    res = solve_weak(base, ch)
    assert min(res.min_step) >= -1e-8
    assert all(b < a for a, b in zip(res.increments, res.increments[1:]))
    same = ApproximationChain(delta_seq=(0.05,), obstacle_seq=(base.psi, base.psi))
    r2 = solve_weak(base, same)
    assert r2.increments == [0.0]
    with pytest.raises(ValueError):
        solve_weak(base, ApproximationChain(delta_seq=(0.05,)))


def test_supercaloric_constant_target():
    g = SpaceTimeGrid(((0.0, 1.0),), (33,), 17, 0.5)
    res = approximate_supercaloric(flat(g, 1.0), None, 4, M)
    assert res.sandwich_violation <= 1e-8
    assert all(b < a for a, b in zip(res.l2_errors, res.l2_errors[1:]))
    for psi_i, u_i in zip(res.obstacles, res.solutions):
        assert np.all(u_i.values >= psi_i.values - 1e-8) and np.all(u_i.values <= 1 + 1e-8)


def test_supercaloric_rejects_negative_target():
    g = SpaceTimeGrid(((0.0, 1.0),), (9,), 5, 0.5)
    with pytest.raises(ValueError):
        approximate_supercaloric(flat(g, -1.0), None, 2, M)


def test_free_set_comparison(grid):
    spec = bump_spec(grid)
    u = solve_penalized(spec, RegularizationParams(1e-3, 1e-3, 0.0125))
    psi_e = lifted_data(spec, 1e-3, 1e-3)[0]
    r = free_set_comparison(u, psi_e, Region(((0.0, 0.25),), (0.0, 0.5)), M, 1e-3, 0.0125**0.5)
    assert r.max_gap < 1e-9 and r.ratio == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        free_set_comparison(u, psi_e, Region(((0.4, 0.6),), (0.0, 0.5)), M, 1e-3, 0.0125**0.5)


def test_chain_error_type():
    assert issubclass(ChainError, RuntimeError)
