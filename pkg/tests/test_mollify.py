import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmelab.domain import ScalarField, SpaceTimeGrid
from pmelab.mollify import (MollifierParams, identity_defect, integrator_weights, mollify_derivative,
                            mollify_time)

GRID = SpaceTimeGrid(((0.0, 1.0),), (5,), 201, 2.0)
H = 0.3


def test_params_validation():
    with pytest.raises(ValueError):
        MollifierParams(0.0)
    with pytest.raises(ValueError):
        MollifierParams(0.1, "custom")
    with pytest.raises(ValueError):
        mollify_time(ScalarField.constant(GRID, 1.0), MollifierParams(0.1, "custom", np.zeros(3)))


def test_constant_fixed_point():
    u = ScalarField.constant(GRID, 2.5)
    m = mollify_time(u, MollifierParams(H, "initial-slice"))
    assert np.allclose(m.values, 2.5, atol=1e-14, rtol=0)
    assert np.max(np.abs(mollify_derivative(u, MollifierParams(H, "initial-slice")).values)) < 1e-12


def test_closed_forms_zero_start():
    t = GRID.times[:, None]
    c = 1.7
    u = ScalarField.constant(GRID, c)
    p = MollifierParams(H)
    assert np.max(np.abs(mollify_time(u, p).values - c * (1 - np.exp(-t / H)))) < 1e-12
    assert np.max(np.abs(mollify_derivative(u, p).values - c / H * np.exp(-t / H))) < 1e-12
    lin = ScalarField.from_function(GRID, lambda x, t: t)
    assert np.max(np.abs(mollify_time(lin, p).values - (t - H * (1 - np.exp(-t / H))))) < 1e-12
    assert np.max(np.abs(mollify_derivative(lin, p).values - (1 - np.exp(-t / H)))) < 1e-12


def test_weights_nonnegative_and_consistent():
    for dt, h in ((1e-6, 1.0), (0.01, 0.3), (1.0, 0.01)):
        decay, wl, wr = integrator_weights(dt, h)
        assert wl >= 0 and wr >= 0
        assert decay + wl + wr == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_monotone_in_data(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=GRID.shape)
    w = u + rng.uniform(0, 1, size=GRID.shape)
    p = MollifierParams(H)
    assert np.all(mollify_time(ScalarField(GRID, w), p).values >= mollify_time(ScalarField(GRID, u), p).values)


def test_identity_defect_is_first_order():
    def field(nt):
        g = SpaceTimeGrid(((0.0, 1.0),), (5,), nt, 2.0)
        return ScalarField.from_function(g, lambda x, t: np.sin(3 * t) * (1 + x))

    p = MollifierParams(H, "initial-slice")
    d1, d2 = identity_defect(field(101), p), identity_defect(field(201), p)
    assert 1.8 < d1 / d2 < 2.2
    m1, m2 = identity_defect(field(101), p, "mid"), identity_defect(field(201), p, "mid")
    assert m1 / m2 > 3.5


def test_converges_to_u_as_h_shrinks():
    g = SpaceTimeGrid(((0.0, 1.0),), (3,), 4001, 1.0)
    u = ScalarField.from_function(g, lambda x, t: np.sin(2 * t) + x)
    errs = [np.max(np.abs(mollify_time(u, MollifierParams(h, "initial-slice")).values - u.values))
            for h in (0.08, 0.04, 0.02, 0.01)]
    rate = np.polyfit(np.log2([0.08, 0.04, 0.02, 0.01]), np.log2(errs), 1)[0]
    assert rate >= 0.9
