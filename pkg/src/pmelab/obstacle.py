"""Obstacle problems: data validation, penalization chains and the monotone
obstacle approximation of a bounded supercaloric target."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import solver
from .domain import (Region, ScalarField, SpaceTimeGrid, nodal_power, quadrature_weights, spatial_gradient,
                     time_derivative)
from .mollify import MollifierParams, mollify_time

log = logging.getLogger(__name__)


class SpecValidationError(ValueError):
    pass


class ChainError(RuntimeError):
    """An approximation chain misbehaved (non-Cauchy, unordered, infeasible)."""


@dataclass(frozen=True)
class ObstacleProblemSpec:
    psi: ScalarField
    g: ScalarField
    u0: np.ndarray
    m: float

    def __post_init__(self):
        object.__setattr__(self, "u0", np.asarray(self.u0, dtype=float))
        if not self.m > 1:
            raise ValueError(f"m must exceed 1, got {self.m}")
        if self.g.grid != self.psi.grid:
            raise ValueError("psi and g live on different grids")
        if self.u0.shape != self.psi.grid.nx:
            raise ValueError(f"u0 has shape {self.u0.shape}, expected {self.psi.grid.nx}")

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.psi.grid

    @classmethod
    def from_obstacle(cls, psi: ScalarField, m: float) -> "ObstacleProblemSpec":
        """Obstacle that also supplies the boundary and initial data."""
        return cls(psi=psi, g=psi, u0=np.array(psi.values[0]), m=m)

    def with_obstacle(self, psi: ScalarField) -> "ObstacleProblemSpec":
        return replace(self, psi=psi)


@dataclass(frozen=True)
class RegularizationParams:
    eps: float
    gamma: float
    delta: float
    h: float = 0.1

    def __post_init__(self):
        for name in ("eps", "gamma", "delta", "h"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.eps + self.gamma > 1:
            raise ValueError("eps + gamma must not exceed 1")


def _decreasing(seq, name):
    seq = tuple(float(v) for v in seq)
    if not seq:
        raise ValueError(f"{name} is empty")
    if any(not v > 0 for v in seq):
        raise ValueError(f"{name} must be positive")
    if any(b >= a for a, b in zip(seq, seq[1:])):
        raise ValueError(f"{name} must be strictly decreasing: {seq}")
    return seq


@dataclass(frozen=True)
class ApproximationChain:
    """Sequences driving the limits; ``eps_seq``/``gamma_seq`` of length 1 are
    reused for every chain member."""

    delta_seq: tuple
    eps_seq: tuple = (1e-3,)
    gamma_seq: tuple = (1e-3,)
    obstacle_seq: tuple = ()
    h: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "delta_seq", _decreasing(self.delta_seq, "delta_seq"))
        object.__setattr__(self, "eps_seq", _decreasing(self.eps_seq, "eps_seq"))
        object.__setattr__(self, "gamma_seq", _decreasing(self.gamma_seq, "gamma_seq"))
        n = len(self.delta_seq)
        for name in ("eps_seq", "gamma_seq"):
            if len(getattr(self, name)) not in (1, n):
                raise ValueError(f"{name} must have length 1 or {n}")
        obs = tuple(self.obstacle_seq)
        object.__setattr__(self, "obstacle_seq", obs)
        for a, b in zip(obs, obs[1:]):
            if np.any(b.values < a.values):
                raise ValueError("obstacle_seq must be nondecreasing")

    @property
    def i_max(self) -> int:
        return len(self.obstacle_seq)

    def __len__(self):
        return len(self.delta_seq)

    def params(self, k: int) -> RegularizationParams:
        eps = self.eps_seq[k if len(self.eps_seq) > 1 else 0]
        gamma = self.gamma_seq[k if len(self.gamma_seq) > 1 else 0]
        return RegularizationParams(eps=eps, gamma=gamma, delta=self.delta_seq[k], h=self.h)


# -- validation ------------------------------------------------------------------

@dataclass
class Diagnostics:
    checks: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.checks.values())

    def failures(self) -> list:
        return [f"{name}: {detail}" for name, (passed, detail) in self.checks.items() if not passed]

    def raise_on_failure(self):
        if not self.ok:
            raise SpecValidationError("; ".join(self.failures()))


def _first_bad(mask: np.ndarray) -> str:
    idx = np.argwhere(mask)[0]
    return f"first at node {tuple(int(i) for i in idx)}"


def validate_spec(spec: ObstacleProblemSpec, tol: float = 1e-12) -> Diagnostics:
    """Discrete boundedness, compatibility and integrability checks.

    Boundedness of the discrete ``d_t psi - Lap psi^m`` is reported in ``info``
    only; it is never required.
    """
    d = Diagnostics()
    grid = spec.grid
    psi, g, u0 = spec.psi.values, spec.g.values, spec.u0
    for name, arr in (("psi", psi), ("g", g), ("u0", u0)):
        bad = ~np.isfinite(arr) | (arr < -tol)
        d.checks[f"nonnegative_bounded:{name}"] = (not bad.any(), _first_bad(bad) if bad.any() else "")
    bad = g < psi - tol
    d.checks["compatibility:g>=psi"] = (not bad.any(), _first_bad(bad) if bad.any() else "")
    bad = u0 < psi[0] - tol
    d.checks["compatibility:u0>=psi(0)"] = (not bad.any(), _first_bad(bad) if bad.any() else "")
    b = grid.boundary_mask()
    bad = b & (np.abs(g[0] - u0) > tol)
    d.checks["compatibility:g(0)=u0"] = (not bad.any(), _first_bad(bad) if bad.any() else "")
    if d.ok:
        w = quadrature_weights(grid)
        norms = {}
        for name, arr in (("psi", psi), ("g", g)):
            am = nodal_power(arr, spec.m)
            grad = spatial_gradient(am, grid.dx, range(1, grid.dim + 1))
            norms[f"{name}^m:L2H1"] = float(np.sum(w * (am**2 + np.sum(grad**2, axis=0))))
            norms[f"d_t {name}^m:L(m+1)/m"] = float(
                np.sum(w * np.abs(time_derivative(am, grid.dt)) ** ((spec.m + 1) / spec.m)))
        finite = all(np.isfinite(v) for v in norms.values())
        d.checks["integrability"] = (finite, "" if finite else f"non-finite norms {norms}")
        d.info.update(norms)
        Psi = solver.obstacle_forcing(spec.psi, spec.m).values
        d.info["Psi_sup"] = float(np.max(np.abs(Psi)))
        d.info["Psi_bounded"] = bool(np.isfinite(d.info["Psi_sup"]))
    return d


# -- penalization chain -------------------------------------------------------------

@dataclass
class StrongResult:
    u: ScalarField
    members: list
    deltas: tuple
    increments: list
    feasibility: list
    lifted_feasibility: list
    feastol: float


def solve_strong(spec: ObstacleProblemSpec, chain: ApproximationChain, *, strict: bool = True,
                 noise_floor: float = 1e-10, newton_tol: float = 1e-10,
                 log_rows: Optional[list] = None) -> StrongResult:
    """Penalized solutions along ``chain.delta_seq``; the last one is the answer.

    Records the Cauchy increments ``max |u_{k+1} - u_k|`` and the feasibility
    gaps ``max (psi - u)_+`` and ``max (psi_eps - u)_+`` of every member.
    ``log_rows`` collects ``(member, step, iterations, residual)`` tuples.
    """
    validate_spec(spec).raise_on_failure()
    members, feas, lifted = [], [], []
    for k in range(len(chain)):
        reg = chain.params(k)
        rows = [] if log_rows is not None else None
        u = solver.solve_penalized(spec, reg, newton_tol=newton_tol, log_rows=rows)
        if rows is not None:
            log_rows.extend((k,) + r for r in rows)
        members.append(u)
        feas.append(float(np.max(np.maximum(spec.psi.values - u.values, 0.0))))
        lifted.append(float(np.max(np.maximum(spec.psi.values + reg.eps - u.values, 0.0))))
    incs = [float(np.max(np.abs(b.values - a.values))) for a, b in zip(members, members[1:])]
    if strict:
        for a, b in zip(incs, incs[1:]):
            if b > a and b > noise_floor:
                raise ChainError(f"increments not decreasing: {incs}; refine the grid or the chain")
    dmin = chain.delta_seq[-1]
    psi = spec.psi.values
    feastol = float(np.max((psi**spec.m + dmin) ** (1 / spec.m) - psi))
    if feas[-1] > feastol:
        raise ChainError(f"final member violates psi by {feas[-1]:.3e} > {feastol:.3e}")
    return StrongResult(members[-1], members, chain.delta_seq, incs, feas, lifted, feastol)


def _l2(vals: np.ndarray, w: np.ndarray) -> float:
    return float(np.sqrt(np.sum(w * vals**2)))


@dataclass
class WeakResult:
    u: ScalarField
    iterates: list
    increments: list
    min_step: list


def solve_weak(spec: ObstacleProblemSpec, chain: ApproximationChain, interior: Optional[Region] = None,
               *, order_tol: float = 1e-8) -> WeakResult:
    """Strong solutions for each obstacle of ``chain.obstacle_seq``.

    Checks ``u_i <= u_{i+1}`` up to ``order_tol`` and records the interior L2
    increments ``||u_{i+1} - u_i||``.
    """
    if not chain.obstacle_seq:
        raise ValueError("chain has no obstacle sequence; see build_obstacle_sequence")
    interior = interior or Region.shrunk(spec.grid)
    w = quadrature_weights(spec.grid, interior)
    its = [solve_strong(spec.with_obstacle(psi_i), chain).u for psi_i in chain.obstacle_seq]
    steps = [float(np.min(b.values - a.values)) for a, b in zip(its, its[1:])]
    if steps and min(steps) < -order_tol:
        raise ChainError(f"iterates not ordered: min(u_(i+1) - u_i) = {min(steps):.3e}")
    incs = [_l2(b.values - a.values, w) for a, b in zip(its, its[1:])]
    return WeakResult(its[-1], its, incs, steps)


# -- obstacle sequence ----------------------------------------------------------------

def smooth_spatial(vals: np.ndarray, dim: int, passes: int = 3) -> np.ndarray:
    """Repeated [1/4, 1/2, 1/4] averaging along each spatial axis (edges replicated)."""
    out = np.array(vals, dtype=float)
    lead = out.ndim - dim
    for _ in range(passes):
        for ax in range(lead, out.ndim):
            pad = [(0, 0)] * out.ndim
            pad[ax] = (1, 1)
            p = np.pad(out, pad, mode="edge")
            lo = [slice(None)] * out.ndim
            mid = [slice(None)] * out.ndim
            hi = [slice(None)] * out.ndim
            lo[ax], mid[ax], hi[ax] = slice(None, -2), slice(1, -1), slice(2, None)
            out = 0.25 * p[tuple(lo)] + 0.5 * p[tuple(mid)] + 0.25 * p[tuple(hi)]
    return out


def smoothed_obstacle(psi: ScalarField) -> np.ndarray:
    """Spatial averaging, time mollification at ``h = 2 dt``, capped by ``psi``."""
    grid = psi.grid
    s = smooth_spatial(psi.values, grid.dim)
    s = mollify_time(ScalarField(grid, s), MollifierParams(h=2 * grid.dt, v0_mode="initial-slice")).values
    return np.minimum(s, psi.values)


def build_obstacle_sequence(psi: ScalarField, i_max: int) -> list:
    """Obstacles ``psi_i = (1 - 2^-i) S``, ``i = 1..i_max``, with ``S`` the
    capped smoothing of ``psi``; strictly increasing wherever ``psi > 0``."""
    if psi.values.min() < 0:
        raise ValueError("obstacle must be nonnegative")
    if i_max < 1:
        raise ValueError("i_max must be at least 1")
    S = smoothed_obstacle(psi)
    seq = [ScalarField(psi.grid, (1 - 2.0**-i) * S, nonneg=True) for i in range(1, i_max + 1)]
    pos = psi.values > 0
    for a, b in zip(seq, seq[1:]):
        if not np.all(b.values[pos] > a.values[pos]):
            raise AssertionError("obstacle sequence lost strict monotonicity")
    return seq


def coincidence_set(u: ScalarField, psi: ScalarField, tol: float) -> np.ndarray:
    """Nodes where ``u - psi <= tol``."""
    if u.grid != psi.grid:
        raise ValueError("fields live on different grids")
    return (u.values - psi.values) <= tol


def default_coincidence_tol(delta: float, m: float) -> float:
    return 2 * delta ** (1 / m)


@dataclass
class FreeSetReport:
    subgrid: SpaceTimeGrid
    residual_obstacle: float
    residual_pme: float
    ratio: float
    max_gap: float
    elements: int


def free_set_comparison(u: ScalarField, psi: ScalarField, region: Region, m: float, eps: float, tol: float,
                        basis_size: int = 20, seed: int = 0) -> FreeSetReport:
    """Weak residuals of ``u`` against a plain PME solve on a sub-cylinder off the contact set.

    The plain solve starts from ``u`` on the initial slice of ``region`` and
    takes ``u`` as lateral data; both fields are paired with the same basis on
    the sub-grid.  ``ratio`` is the ratio of the largest absolute residuals.
    """
    from .energy import TestFunctionBasis, weak_residual

    grid = u.grid
    sub, sl = grid.subgrid(region)
    if np.any(coincidence_set(u, psi, tol)[sl]):
        raise ValueError("region meets the coincidence set")
    us = ScalarField(sub, u.values[sl], nonneg=True)
    w = solver.solve_pme(us.values[0], us, solver.PMEParams(m=m, eps=eps), sub)
    basis = TestFunctionBasis.quasi_random(sub, basis_size, seed=seed)
    ro = float(np.max(np.abs(weak_residual(us, m, basis))))
    rp = float(np.max(np.abs(weak_residual(w, m, basis))))
    ratio = ro / rp if rp > 0 else (1.0 if ro == 0 else float("inf"))
    return FreeSetReport(sub, ro, rp, ratio, float(np.max(np.abs(w.values - us.values))), len(basis))


# -- comparison ------------------------------------------------------------------------

@dataclass
class ComparisonReport:
    violation: float
    location: Optional[tuple]
    boundary_gap: float
    skipped: bool


def parabolic_boundary_mask(grid: SpaceTimeGrid, region: Region) -> np.ndarray:
    sl = region.index_ranges(grid)
    mask = np.zeros(grid.shape, dtype=bool)
    sub = np.zeros(tuple(s.stop - s.start for s in sl), dtype=bool)
    sub[0] = True
    for ax in range(1, grid.dim + 1):
        idx = [slice(None)] * (grid.dim + 1)
        idx[ax] = 0
        sub[tuple(idx)] = True
        idx[ax] = -1
        sub[tuple(idx)] = True
    mask[sl] = sub
    return mask


def comparison_check(u: ScalarField, w: ScalarField, region: Optional[Region] = None,
                     tol: float = 1e-12) -> ComparisonReport:
    """Largest ``(w - u)_+`` inside ``region`` given ``u >= w`` on its parabolic boundary."""
    region = region or Region.full(u.grid)
    pb = parabolic_boundary_mask(u.grid, region)
    gap = float(np.max(w.values[pb] - u.values[pb]))
    if gap > tol:
        log.warning("comparison skipped: boundary ordering fails by %.3e", gap)
        return ComparisonReport(float("nan"), None, gap, True)
    sl = region.index_ranges(u.grid)
    diff = np.maximum(w.values[sl] - u.values[sl], 0.0)
    loc = np.unravel_index(int(np.argmax(diff)), diff.shape)
    loc = tuple(int(i + s.start) for i, s in zip(loc, sl))
    return ComparisonReport(float(diff.max()), loc, max(gap, 0.0), False)


# -- monotone approximation of a supercaloric target -------------------------------------

@dataclass
class SupercaloricResult:
    obstacles: list
    solutions: list
    sandwich_violation: float
    l2_errors: list
    increments: list


def approximate_supercaloric(target: ScalarField, region: Optional[Region], i_max: int, m: float,
                             chain: Optional[ApproximationChain] = None, *, tol: float = 1e-8,
                             strict: bool = True) -> SupercaloricResult:
    """Obstacle solutions ``u_i`` with obstacle, lateral and initial data ``psi_i``.

    ``psi_i`` increases to the target; the result records the worst violation
    of ``psi_i <= u_i <= u_(i+1) <= target`` and the L2 distances to the target
    on ``region``.
    """
    if target.values.min() < 0:
        raise ValueError("target must be nonnegative")
    chain = chain or ApproximationChain(delta_seq=(1e-2, 5e-3, 2.5e-3, 1.25e-3), eps_seq=(1e-6,),
                                        gamma_seq=(1e-6,))
    region = region or Region.shrunk(target.grid)
    w = quadrature_weights(target.grid, region)
    obstacles = build_obstacle_sequence(target, i_max)
    sols = [solve_strong(ObstacleProblemSpec.from_obstacle(psi_i, m), chain).u for psi_i in obstacles]
    viol = 0.0
    for i, (psi_i, u_i) in enumerate(zip(obstacles, sols)):
        viol = max(viol, float(np.max(psi_i.values - u_i.values)))
        viol = max(viol, float(np.max(u_i.values - target.values)))
        if i + 1 < len(sols):
            viol = max(viol, float(np.max(u_i.values - sols[i + 1].values)))
    errs = [_l2(u.values - target.values, w) for u in sols]
    incs = [_l2(b.values - a.values, w) for a, b in zip(sols, sols[1:])]
    if strict and viol > tol:
        raise ChainError(f"sandwich violated by {viol:.3e}")
    return SupercaloricResult(obstacles, sols, max(viol, 0.0), errs, incs)
