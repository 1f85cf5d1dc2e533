import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmelab.domain import ScalarField, SpaceTimeGrid, spatial_weights
from pmelab.obstacle import ObstacleProblemSpec, RegularizationParams
from pmelab.solver import (BarenblattParams, BarrierViolation, NewtonDivergence, PMEParams, barenblatt,
                           barenblatt_field, kirchhoff, lifted_data, obstacle_forcing, penalty_profile,
                           penalty_slope, regularized_diffusivity, solve_penalized, solve_pme, step)


def test_regularized_diffusivity_branches():
    assert regularized_diffusivity(0.25, 0.5, 2.0) == pytest.approx(1.0)
    assert regularized_diffusivity(1.0, 0.5, 2.0) == pytest.approx(2.0)
    assert regularized_diffusivity(3.0, 0.5, 2.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        regularized_diffusivity(-0.1, 0.5, 2.0)


def test_kirchhoff_derivative_matches_diffusivity():
    s = np.linspace(0.0, 5.0, 2001)
    for eps in (0.0, 0.3):
        phi, a = kirchhoff(s, 2.5, eps)
        assert np.allclose(np.gradient(phi, s), a, rtol=1e-3, atol=1e-3)
        if eps:
            assert np.allclose(a, regularized_diffusivity(s, eps, 2.5))


def test_penalty_profile():
    assert penalty_profile(0.0, 0.1) == 1.0
    assert penalty_profile(-0.1, 0.1) == 0.0
    assert penalty_profile(-0.05, 0.1) == pytest.approx(0.5)
    assert penalty_profile(3.0, 0.1) == 1.0 and penalty_profile(-3.0, 0.1) == 0.0
    s = np.linspace(-0.2, 0.1, 30001)
    assert penalty_slope(s, 0.1).max() <= 20.0
    assert penalty_slope(s, 0.1).max() == pytest.approx(15 / (8 * 0.1), rel=1e-6)
    assert np.all(np.diff(penalty_profile(s, 0.1)) >= 0)


def test_barenblatt_formula():
    p = BarenblattParams(m=2.0, C=0.7, t0=1.0)
    assert p.alpha == pytest.approx(1 / 3) and p.beta == pytest.approx(1 / 12)
    for t in (0.0, 0.5, 2.0):
        assert barenblatt(0.0, t, p) == pytest.approx(0.7 * (t + 1) ** (-1 / 3))
        x = np.linspace(-3, 3, 61)
        assert np.array_equal(barenblatt(x, t, p), barenblatt(-x, t, p))
    with pytest.raises(ValueError):
        barenblatt(0.0, -2.0, p)


def test_barenblatt_mass_conserved():
    p = BarenblattParams(m=2.0, C=0.25, t0=1.0)
    g = SpaceTimeGrid(((-3.0, 3.0),), (512,), 3, 1.0)
    u = barenblatt_field(g, p).values
    w = spatial_weights(g)
    assert abs(np.sum(w * u[-1]) / np.sum(w * u[0]) - 1) <= 1e-3


def test_step_trivial_cases():
    g = SpaceTimeGrid(((0.0, 1.0),), (17,), 2, 0.1)
    pp = PMEParams(m=2.0)
    c = np.full(17, 0.6)
    assert np.allclose(step(c, pp, c, None, 0.1, g), 0.6, atol=1e-13)
    z = np.zeros(17)
    assert np.array_equal(step(z, pp, z, None, 0.1, g), z)
    with pytest.raises(ValueError):
        step(-c, pp, c, None, 0.1, g)


def test_step_reports_divergence():
    g = SpaceTimeGrid(((0.0, 1.0),), (33,), 2, 0.1)
    u0 = np.exp(-50 * (g.axes[0] - 0.5) ** 2)
    with pytest.raises(NewtonDivergence) as err:
        step(u0, PMEParams(m=3.0, newton_max_iters=1, newton_tol=1e-14), np.zeros(33), None, 0.1, g)
    assert err.value.iterations == 1


def test_single_step_error_is_first_order_in_dt():
    p = BarenblattParams(m=2.0, C=0.25, t0=1.0)
    g = SpaceTimeGrid(((-2.5, 2.5),), (2001,), 2, 1.0)
    x = g.axes[0]
    errs = []
    for dt in (0.04, 0.02, 0.01):
        u = step(barenblatt(x, 0.0, p), PMEParams(m=2.0), np.zeros_like(x), None, dt, g)
        errs.append(np.max(np.abs(u - barenblatt(x, dt, p))))
    assert 1.6 < errs[0] / errs[1] < 2.5 and 1.6 < errs[1] / errs[2] < 2.5


def test_solve_pme_constant_and_zero():
    g = SpaceTimeGrid(((0.0, 1.0), (0.0, 1.0)), (9, 9), 5, 0.2)
    for c in (0.0, 1.3):
        f = ScalarField.constant(g, c)
        u = solve_pme(f.values[0], f, PMEParams(m=2.0), g)
        assert np.allclose(u.values, c, atol=1e-12)


def test_zero_flux_conserves_mass():
    g = SpaceTimeGrid(((0.0, 1.0),), (65,), 41, 1.0)
    u0 = 0.2 + np.exp(-40 * (g.axes[0] - 0.3) ** 2)
    u = solve_pme(u0, None, PMEParams(m=2.0), g)
    w = spatial_weights(g)
    mass = u.values @ w
    assert np.max(np.abs(mass - mass[0])) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.sampled_from([1.5, 2.0, 3.0]))
def test_scheme_is_order_preserving_and_nonnegative(seed, m):
    rng = np.random.default_rng(seed)
    g = SpaceTimeGrid(((0.0, 1.0),), (33,), 11, 0.2)
    lo0 = rng.uniform(0, 1, 33) * (rng.uniform(size=33) > 0.3)
    hi0 = lo0 + rng.uniform(0, 0.5, 33)
    glo = ScalarField(g, np.tile(lo0, (11, 1)))
    ghi = ScalarField(g, np.tile(hi0, (11, 1)))
    lo = solve_pme(lo0, glo, PMEParams(m=m), g).values
    hi = solve_pme(hi0, ghi, PMEParams(m=m), g).values
    assert lo.min() >= 0
    assert np.max(lo - hi) <= 1e-10


def test_newton_log_rows():
    g = SpaceTimeGrid(((0.0, 1.0),), (17,), 4, 0.1)
    rows = []
    u0 = np.linspace(0, 1, 17)
    solve_pme(u0, None, PMEParams(m=2.0), g, log_rows=rows)
    assert [r[0] for r in rows] == [1, 2, 3]
    assert all(r[2] <= 1e-10 for r in rows)


def _spec(g, psi, c, m=2.0):
    data = ScalarField.constant(g, c)
    return ObstacleProblemSpec(ScalarField(g, psi), data, data.values[0], m)


def test_penalized_constant_data_is_lifted_constant():
    g = SpaceTimeGrid(((0.0, 1.0),), (33,), 11, 0.5)
    spec = _spec(g, np.zeros(g.shape), 0.7)
    u = solve_penalized(spec, RegularizationParams(1e-3, 2e-3, 0.05))
    lateral = (0.7**2 + 2e-3**2) ** 0.5 + 1e-3
    initial = 0.7 + 3e-3
    # u0 is lifted by eps + gamma, the lateral data by the m-norm of (g, gamma) plus eps
    assert u.values[-1, 0] == pytest.approx(lateral)
    assert np.all(u.values >= lateral - 1e-12) and np.all(u.values <= initial + 1e-12)


def test_penalized_constant_obstacle_feasibility():
    g = SpaceTimeGrid(((0.0, 1.0),), (33,), 21, 0.5)
    spec = _spec(g, np.full(g.shape, 0.5), 0.5)
    gaps = []
    for d in (0.1, 0.05, 0.025):
        u = solve_penalized(spec, RegularizationParams(1e-3, 1e-3, d))
        psi_e = lifted_data(spec, 1e-3, 1e-3)[0].values
        gaps.append(np.max(np.maximum(psi_e - u.values, 0)))
        assert gaps[-1] <= d ** 0.5
    assert gaps == sorted(gaps, reverse=True)


def test_penalized_barrier_and_limits():
    g = SpaceTimeGrid(((0.0, 1.0),), (17,), 5, 0.1)
    spec = _spec(g, np.zeros(g.shape), 10.0)
    with pytest.raises(ValueError):
        solve_penalized(spec, RegularizationParams(0.1, 0.1, 0.1))
    assert issubclass(BarrierViolation, RuntimeError)


def test_obstacle_forcing_of_stationary_profile_vanishes():
    g = SpaceTimeGrid(((0.0, 1.0),), (33,), 5, 1.0)
    # psi^m affine in x and constant in time is a discrete stationary solution
    psi = ScalarField.from_function(g, lambda x, t: np.sqrt(1 + x))
    assert np.max(np.abs(obstacle_forcing(psi, 2.0).values[1:, 1:-1])) < 1e-10
