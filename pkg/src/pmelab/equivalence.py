"""Checks that the two weak formulations of the porous medium equation agree.

Formulation (i) pairs with ``grad u^m``; formulation (ii) pairs with
``2m/(m+1) u^((m-1)/2) grad u^((m+1)/2)`` where the inner gradient is the
stencil gradient of the nodal power.  Agreement is measured per test
function and tracked under grid refinement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .domain import CutoffFunction, ScalarField, SpaceTimeGrid, nodal_power, quadrature_weights, spatial_weights
from .energy import (TestFunctionBasis, grad_all, grad_power, grad_umid, sqnorm, truncation_energy,
                     weak_residual)

REPRESENTATIONS = ("u", "um", "umid")


@dataclass
class TransformResult:
    levels: np.ndarray
    mismatch: np.ndarray
    field: np.ndarray
    stabilized: bool


@dataclass
class LevelReport:
    grid: SpaceTimeGrid
    residuals_i: np.ndarray
    residuals_ii: np.ndarray
    gradient_mismatch: float
    tolerance: float
    continuity_Lm1: float
    continuity_L2: float

    @property
    def max_difference(self) -> float:
        return float(np.max(np.abs(self.residuals_i - self.residuals_ii), initial=0.0))

    @property
    def within_tolerance(self) -> bool:
        return self.max_difference <= self.tolerance


@dataclass
class EquivalenceReport:
    levels: list
    refinement_orders: dict = field(default_factory=dict)
    decay_factors: dict = field(default_factory=dict)
    min_decay: float = 1.5

    def __post_init__(self):
        for lv in self.levels:
            vals = np.concatenate([lv.residuals_i, lv.residuals_ii, [lv.gradient_mismatch]])
            if not np.all(np.isfinite(vals)):
                raise ValueError("non-finite entry in equivalence report")

    @property
    def residuals_i(self) -> np.ndarray:
        return self.levels[-1].residuals_i

    @property
    def residuals_ii(self) -> np.ndarray:
        return self.levels[-1].residuals_ii

    @property
    def gradient_mismatch(self) -> float:
        return self.levels[-1].gradient_mismatch

    def checks(self) -> dict:
        out = {"difference_within_tolerance": all(lv.within_tolerance for lv in self.levels)}
        for key in ("residuals_i", "residuals_ii"):
            f = self.decay_factors.get(key, [])
            out[f"{key}_decay"] = bool(f) and all(x >= self.min_decay or not np.isfinite(x) for x in f)
        return out

    @property
    def ok(self) -> bool:
        return all(self.checks().values())

    def rows(self) -> list:
        rows = []
        for k, lv in enumerate(self.levels):
            rows.append({
                "level": k, "nx": lv.grid.nx[0], "nt": lv.grid.nt,
                "max_abs_res_i": float(np.max(np.abs(lv.residuals_i), initial=0.0)),
                "max_abs_res_ii": float(np.max(np.abs(lv.residuals_ii), initial=0.0)),
                "max_diff": lv.max_difference, "tolerance": lv.tolerance,
                "gradient_mismatch": lv.gradient_mismatch,
                "continuity_Lm1": lv.continuity_Lm1, "continuity_L2": lv.continuity_L2,
            })
        return rows


def to_u(vals: np.ndarray, m: float, representation: str) -> np.ndarray:
    if representation == "u":
        return np.asarray(vals, dtype=float)
    if representation == "um":
        return nodal_power(vals, 1 / m)
    if representation == "umid":
        return nodal_power(vals, 2 / (m + 1))
    raise ValueError(f"unknown representation {representation!r}")


def _l2(vec: np.ndarray, w: np.ndarray) -> float:
    return float(np.sqrt(np.sum(w * sqnorm(vec))))


def gradient_power_transform(u: ScalarField, m: float, direction: str = "up", k_max: int = 6) -> TransformResult:
    """Chain-rule gradient of a power along the truncation ladder ``k = max u * 2^-j``.

    ``down``: ``(m+1)/2 u_k^((m-1)/2) grad u_k`` against the stencil gradient of
    ``u_k^((m+1)/2)``.  ``up``: ``2m/(m+1) u_k^((m-1)/2) grad u_k^((m+1)/2)``
    against the stencil gradient of ``u_k^m``.  ``mismatch[j]`` is the
    space-time L2 norm of the difference at level ``j``; ``field`` is the
    chain-rule gradient at ``k = max u`` and ``stabilized`` records that
    truncating above ``max u`` changes nothing.
    """
    if direction not in ("up", "down"):
        raise ValueError(f"unknown direction {direction!r}")
    grid = u.grid
    w = quadrature_weights(grid)
    top = float(u.values.max())

    def chain(vals):
        if direction == "down":
            return (m + 1) / 2 * nodal_power(vals, (m - 1) / 2) * grad_all(vals, grid)
        return 2 * m / (m + 1) * nodal_power(vals, (m - 1) / 2) * grad_power(vals, (m + 1) / 2, grid)

    def direct(vals):
        return grad_power(vals, (m + 1) / 2 if direction == "down" else m, grid)

    levels = top * 2.0 ** -np.arange(k_max + 1)
    mismatch = np.empty(k_max + 1)
    first = None
    for j, k in enumerate(levels):
        uk = np.minimum(u.values, k)
        c = chain(uk)
        if j == 0:
            first = c
        mismatch[j] = _l2(c - direct(uk), w)
    above = chain(np.minimum(u.values, 2 * top if top > 0 else 1.0))
    return TransformResult(levels, mismatch, first, bool(np.array_equal(above, first)))


def residual_tolerance(grid: SpaceTimeGrid, u_max: float, m: float, safety: float = 10.0) -> float:
    return safety * (max(grid.dx) + grid.dt) * (1 + u_max) ** m


def slice_continuity(u: np.ndarray, grid: SpaceTimeGrid, p: float) -> float:
    """Max over adjacent levels of ``||u(t_k+1) - u(t_k)||_{L^p}``."""
    ws = spatial_weights(grid)
    d = np.abs(np.diff(u, axis=0)) ** p
    return float(np.max(np.tensordot(d, ws, axes=grid.dim)) ** (1 / p))


def level_report(u: ScalarField, m: float, basis: TestFunctionBasis, safety: float = 10.0) -> LevelReport:
    grid = u.grid
    v = u.values
    res_i = weak_residual(u, m, basis, "grad_um")
    res_ii = weak_residual(u, m, basis, "grad_umid", gradient="direct")
    w = quadrature_weights(grid)
    mismatch = _l2(grad_power(v, m, grid) - 2 * m / (m + 1) * nodal_power(v, (m - 1) / 2)
                   * grad_umid(v, m, grid, "direct"), w)
    return LevelReport(grid, res_i, res_ii, mismatch, residual_tolerance(grid, float(v.max()), m, safety),
                       slice_continuity(v, grid, m + 1), slice_continuity(v, grid, 2))


def _factors(values: Sequence[float]) -> list:
    out = []
    for a, b in zip(values[:-1], values[1:]):
        out.append(a / b if b > 0 else (float("inf") if a > 0 else float("nan")))
    return out


def check_equivalence(field_at: Callable[[SpaceTimeGrid], np.ndarray], m: float, grids: Sequence[SpaceTimeGrid],
                      representation: str = "u", basis_size: int = 20, seed: int = 0, safety: float = 10.0,
                      min_decay: float = 1.5) -> EquivalenceReport:
    """Residuals of both formulations on each grid of a refinement sequence.

    ``field_at(grid)`` returns nodal values in the given representation
    (``u``, ``u^m`` or ``u^((m+1)/2)``); they are converted to ``u`` nodally.
    The test functions depend only on the cylinder and the seed, so the same
    functions are used at every level.
    """
    if not grids:
        raise ValueError("need at least one grid")
    levels = []
    for grid in grids:
        vals = to_u(field_at(grid), m, representation)
        if vals.min() < -1e-12:
            raise ValueError("field must be nonnegative")
        u = ScalarField(grid, np.maximum(vals, 0.0))
        basis = TestFunctionBasis.quasi_random(grid, basis_size, seed=seed)
        levels.append(level_report(u, m, basis, safety))
    decay, orders = {}, {}
    for key, get in (("residuals_i", lambda lv: lv.residuals_i), ("residuals_ii", lambda lv: lv.residuals_ii),
                     ("gradient_mismatch", lambda lv: lv.gradient_mismatch)):
        seq = [float(np.max(np.abs(get(lv)), initial=0.0)) for lv in levels]
        f = _factors(seq)
        decay[key] = f
        orders[key] = [float(np.log2(x)) if np.isfinite(x) and x > 0 else float("nan") for x in f]
    return EquivalenceReport(levels, orders, decay, min_decay)


def alternative_bound(u: ScalarField, m: float, zeta: CutoffFunction, eps: float):
    """``(lhs, rhs)`` of the truncation estimate for ``grad u^((m+1)/2)``.

    ``lhs = iint_{u > eps} zeta^2 |grad u^((m+1)/2)|^2`` and
    ``rhs = (m+1)^2/(2m) iint (|d_t zeta| G_eps(u) + |grad zeta|^2 g_eps(u)^2 + |grad u^m|^2)``.
    """
    grid = u.grid
    z, _, _ = zeta.evaluate(grid)
    w = quadrature_weights(grid)
    v = u.values
    lhs = float(np.sum(w * (v > eps) * z**2 * sqnorm(grad_umid(v, m, grid))))
    G, g = truncation_energy(u, eps, zeta)
    rhs = (m + 1) ** 2 / (2 * m) * (G + g + float(np.sum(w * sqnorm(grad_power(v, m, grid)))))
    return lhs, rhs
