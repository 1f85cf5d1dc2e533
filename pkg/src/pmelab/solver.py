"""Implicit stepping for the porous medium equation and its penalized variant.

Each backward-Euler step solves the nodal system

    u - u_prev - dt * (L Phi(u) + q(u)) = 0

with ``L`` the standard 3-point (5-point in 2D) Laplacian and ``Phi`` the
Kirchhoff transform of the diffusivity, ``Phi' = a``.  Writing the flux
between neighbours as ``(Phi(u_j) - Phi(u_i)) / dx`` is the same as freezing
the secant diffusivity on each edge; its Jacobian has nonpositive
off-diagonal entries for every ``m``, so the step map is monotone and
preserves nonnegativity.  The source ``q`` may depend on ``u`` as long as
``dq/du <= 0`` (true for the obstacle penalty).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .domain import ScalarField, SpaceTimeGrid, nodal_power

log = logging.getLogger(__name__)


class NewtonDivergence(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"Newton did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


class BarrierViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class PMEParams:
    m: float
    eps: float = 0.0
    newton_tol: float = 1e-10
    newton_max_iters: int = 50

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError(f"slow diffusion needs m > 1, got {self.m}")
        if self.eps < 0 or self.eps > 1:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")


@dataclass(frozen=True)
class PenaltySpec:
    delta: float
    psi: ScalarField
    psi_forcing: ScalarField

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.psi.values.min() < 0:
            raise ValueError("obstacle must be nonnegative")
        if self.psi_forcing.values.min() < 0:
            raise ValueError("psi_forcing holds the positive part and must be nonnegative")


@dataclass(frozen=True)
class BarenblattParams:
    m: float
    n: int = 1
    C: float = 1.0
    t0: float = 1.0
    center: tuple = ()

    def __post_init__(self):
        if not self.m > 1 or self.n not in (1, 2) or not self.C > 0 or not self.t0 > 0:
            raise ValueError(f"invalid Barenblatt parameters {self}")

    @property
    def alpha(self) -> float:
        return self.n / (self.n * (self.m - 1) + 2)

    @property
    def beta(self) -> float:
        return self.alpha * (self.m - 1) / (2 * self.m * self.n)

    def support_radius(self, t: float) -> float:
        s = t + self.t0
        return float(np.sqrt(self.C / self.beta) * s ** (self.alpha / self.n))


# -- scalar profiles ------------------------------------------------------------

def regularized_diffusivity(s, eps: float, m: float):
    """Capped diffusivity ``a_eps``: ``m eps^(m-1)`` below ``eps``, ``m s^(m-1)``
    up to ``1/eps`` and ``m eps^(1-m)`` above."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("diffusivity argument must be nonnegative")
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    out = m * np.clip(s, eps, 1 / eps) ** (m - 1)
    return out if out.ndim else float(out)


def kirchhoff(s: np.ndarray, m: float, eps: float = 0.0):
    """``Phi(s)`` with ``Phi' = a_eps`` (plain ``m s^(m-1)`` when ``eps = 0``).

    Returns ``(Phi, a)``.  Negative arguments only arise inside Newton
    iterations; there ``Phi`` is continued oddly (eps = 0) or linearly.
    """
    s = np.asarray(s, dtype=float)
    if eps == 0:
        mag = np.abs(s)
        return np.sign(s) * mag**m, m * mag ** (m - 1)
    hi = 1 / eps
    low = s <= eps
    high = s >= hi
    mid = ~(low | high)
    phi = np.empty_like(s)
    a = np.empty_like(s)
    phi[mid] = s[mid] ** m
    a[mid] = m * s[mid] ** (m - 1)
    phi[low] = eps**m + m * eps ** (m - 1) * (s[low] - eps)
    a[low] = m * eps ** (m - 1)
    phi[high] = hi**m + m * hi ** (m - 1) * (s[high] - hi)
    a[high] = m * hi ** (m - 1)
    return phi, a


def penalty_profile(s, delta: float):
    """Quintic smoothstep: 0 for ``s <= -delta``, 1 for ``s >= 0``."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    y = np.clip((np.asarray(s, dtype=float) + delta) / delta, 0.0, 1.0)
    out = y**3 * (10 - 15 * y + 6 * y * y)
    return out if out.ndim else float(out)


def penalty_slope(s, delta: float):
    """Derivative of :func:`penalty_profile`; at most ``15 / (8 delta)``."""
    y = (np.asarray(s, dtype=float) + delta) / delta
    inside = (y > 0) & (y < 1)
    return np.where(inside, 30 * y * y * (1 - y) ** 2 / delta, 0.0)


def barenblatt(x, t, p: BarenblattParams):
    """Self-similar source solution; ``x`` has a leading axis of length ``n``
    (or is a plain array when ``n = 1``)."""
    s = np.asarray(t, dtype=float) + p.t0
    if np.any(s <= 0):
        raise ValueError("barenblatt needs t + t0 > 0")
    x = np.asarray(x, dtype=float)
    if p.n == 1 and (x.ndim == 0 or x.shape[0] != 1):
        x = x[None]
    center = p.center or (0.0,) * p.n
    r2 = sum((x[i] - center[i]) ** 2 for i in range(p.n))
    core = p.C - p.beta * r2 * s ** (-2 * p.alpha / p.n)
    return s ** (-p.alpha) * np.maximum(core, 0.0) ** (1 / (p.m - 1))


def barenblatt_field(grid: SpaceTimeGrid, p: BarenblattParams) -> ScalarField:
    coords = grid.spacetime_mesh()
    vals = barenblatt(np.stack(coords[:-1]), coords[-1], p)
    return ScalarField(grid, vals, nonneg=True)


# -- discrete operators ----------------------------------------------------------

def laplacian_matrix(grid: SpaceTimeGrid, dirichlet: bool = True) -> sp.csr_matrix:
    """Nodal Laplacian on the full spatial grid.

    With ``dirichlet=True`` boundary rows are zero (those nodes are pinned).
    Otherwise boundary rows use mirrored ghost nodes (zero flux), which makes
    the trapezoid-weighted sum of every column of ``W L`` vanish.
    """
    mats = []
    for n, h in zip(grid.nx, grid.dx):
        main = np.full(n, -2.0)
        lower = np.ones(n - 1)
        upper = np.ones(n - 1)
        if not dirichlet:
            upper[0] = 2.0
            lower[-1] = 2.0
        mats.append(sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2)
    if grid.dim == 1:
        L = mats[0]
    else:
        ix, iy = sp.identity(grid.nx[0]), sp.identity(grid.nx[1])
        L = sp.kron(mats[0], iy) + sp.kron(ix, mats[1])
    L = sp.csr_matrix(L)
    if dirichlet:
        bmask = grid.boundary_mask().ravel()
        keep = sp.diags((~bmask).astype(float))
        L = sp.csr_matrix(keep @ L)
    return L


def apply_laplacian(vals: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Interior 3-point/5-point Laplacian of slices (last ``dim`` axes).

    Boundary nodes copy the value of the nearest interior node.
    """
    d = grid.dim
    lead = vals.ndim - d
    inner = [slice(None)] * lead + [slice(1, -1)] * d
    out = np.zeros(vals.shape[:lead] + tuple(n - 2 for n in grid.nx))
    for ax, h in enumerate(grid.dx):
        plus = list(inner)
        minus = list(inner)
        plus[lead + ax] = slice(2, None)
        minus[lead + ax] = slice(None, -2)
        out += (vals[tuple(plus)] - 2 * vals[tuple(inner)] + vals[tuple(minus)]) / h**2
    pad = [(0, 0)] * lead + [(1, 1)] * d
    return np.pad(out, pad, mode="edge")


def obstacle_forcing(psi: ScalarField, m: float, eps: float = 0.0) -> ScalarField:
    """``Psi = d_t psi - Lap Phi(psi)`` with the stepping stencils.

    Level ``k >= 1`` uses the backward difference that the implicit step at
    level ``k`` uses; level 0 repeats level 1.
    """
    g = psi.grid
    phi, _ = kirchhoff(psi.values, m, eps)
    out = np.empty(g.shape)
    out[1:] = np.diff(psi.values, axis=0) / g.dt - apply_laplacian(phi[1:], g)
    out[0] = out[1]
    return ScalarField(g, out)


# -- stepping ------------------------------------------------------------------

SourceFn = Callable[[np.ndarray], tuple]


def _solve_linear(J, rhs, grid: SpaceTimeGrid):
    if grid.dim == 1:
        n = rhs.size
        ab = np.zeros((3, n))
        Jc = sp.csr_matrix(J)
        ab[1] = Jc.diagonal(0)
        ab[0, 1:] = Jc.diagonal(1)
        ab[2, :-1] = Jc.diagonal(-1)
        return scipy.linalg.solve_banded((1, 1), ab, rhs)
    return scipy.sparse.linalg.spsolve(sp.csc_matrix(J), rhs)


def step(u_prev: np.ndarray, params: PMEParams, bc: Optional[np.ndarray], source, dt: float,
         grid: SpaceTimeGrid, *, L: Optional[sp.csr_matrix] = None, stats: Optional[dict] = None):
    """One backward-Euler step.

    ``bc`` holds the Dirichlet values on the boundary nodes of the new level
    (a full spatial slice; interior entries are ignored), or ``None`` for zero
    flux.  ``source`` is ``None``, a spatial slice, or a callable returning
    ``(q(u), dq/du)``.
    """
    u_prev = np.asarray(u_prev, dtype=float)
    if u_prev.min() < 0:
        raise ValueError(f"negative previous state {u_prev.min():.3e}")
    shape = u_prev.shape
    dirichlet = bc is not None
    if L is None:
        L = laplacian_matrix(grid, dirichlet)
    bmask = grid.boundary_mask().ravel() if dirichlet else np.zeros(u_prev.size, dtype=bool)
    if dirichlet:
        bcv = np.asarray(bc, dtype=float).ravel()
        if bcv[bmask].min() < 0:
            raise ValueError("negative boundary data")
    free = ~bmask

    if source is None:
        def src(u):
            return 0.0, 0.0
    elif callable(source):
        def src(u):
            q, dq = source(u.reshape(shape))
            return np.ravel(q), np.ravel(dq)
    else:
        qfix = np.ravel(source)

        def src(u):
            return qfix, 0.0

    up = u_prev.ravel()

    def residual(u):
        phi, a = kirchhoff(u, params.m, params.eps)
        q, dq = src(u)
        F = u - up - dt * (L @ phi + q)
        if dirichlet:
            F = np.where(bmask, u - bcv, F)
        return F, a, dq

    u = up.copy()
    if dirichlet:
        u[bmask] = bcv[bmask]
    F, a, dq = residual(u)
    res = float(np.max(np.abs(F)))
    it = 0
    while res > params.newton_tol:
        if it >= params.newton_max_iters:
            raise NewtonDivergence(res, it)
        dqv = np.broadcast_to(dq, u.shape) * free
        J = sp.identity(u.size, format="csr") - dt * (L @ sp.diags(a)) - dt * sp.diags(dqv)
        du = _solve_linear(J, -F, grid)
        lam = 1.0
        while True:
            trial = u + lam * du
            Ft, at, dqt = residual(trial)
            rt = float(np.max(np.abs(Ft)))
            if rt < res or lam < 1e-6:
                break
            lam *= 0.5
        u, F, a, dq, res = trial, Ft, at, dqt, rt
        it += 1
    if stats is not None:
        stats["iterations"] = it
        stats["residual"] = res
    if u.min() < -1e3 * max(params.newton_tol, 1e-14):
        raise BarrierViolation(f"step produced negative value {u.min():.3e}")
    # the exact discrete solution is nonnegative; remove Newton-level roundoff
    return np.maximum(u, 0.0).reshape(shape)


def solve_pme(u0, g: Optional[ScalarField], params: PMEParams, grid: SpaceTimeGrid,
              source=None, *, log_rows: Optional[list] = None) -> ScalarField:
    """Trajectory of repeated :func:`step` calls.

    ``g`` gives Dirichlet data on boundary nodes (``None`` means zero flux).
    ``source`` is ``None``, a ScalarField / array on the grid, or a callable
    ``source(k, u) -> (q, dq)`` for level ``k``.  When ``log_rows`` is a list,
    one ``(step, iterations, residual)`` tuple per step is appended.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != grid.nx:
        raise ValueError(f"u0 has shape {u0.shape}, expected {grid.nx}")
    if u0.min() < 0:
        raise ValueError("initial data must be nonnegative")
    if g is not None and g.values.min() < 0:
        raise ValueError("boundary data must be nonnegative")
    L = laplacian_matrix(grid, g is not None)
    vals = np.empty(grid.shape)
    vals[0] = u0
    if g is not None:
        b = grid.boundary_mask()
        vals[0][b] = g.values[0][b]
    svals = source.values if isinstance(source, ScalarField) else source
    for k in range(1, grid.nt):
        if svals is None:
            src = None
        elif callable(svals):
            src = (lambda kk: (lambda u: svals(kk, u)))(k)
        else:
            src = svals[k]
        stats = {}
        vals[k] = step(vals[k - 1], params, None if g is None else g.values[k], src, grid.dt, grid,
                       L=L, stats=stats)
        if log_rows is not None:
            log_rows.append((k, stats["iterations"], stats["residual"]))
    return ScalarField(grid, vals, nonneg=True)


def lifted_data(spec, eps: float, gamma: float):
    """Lifted obstacle, boundary and initial data ``(psi_eps, g_eps_gamma, u0_eps_gamma)``."""
    m = spec.m
    psi = spec.psi.values + eps
    g = (spec.g.values**m + gamma**m) ** (1 / m) + eps
    u0 = np.asarray(spec.u0, dtype=float) + eps + gamma
    grid = spec.psi.grid
    return ScalarField(grid, psi, nonneg=True), ScalarField(grid, g, nonneg=True), u0


def penalty_source(pen: PenaltySpec, m: float):
    """``source(k, u) -> (q, dq/du)`` for ``Psi_+ xi_delta(psi^m - u^m)``."""
    psim = nodal_power(pen.psi.values, m)
    force = pen.psi_forcing.values

    def source(k, u):
        um = np.sign(u) * np.abs(u) ** m
        arg = psim[k] - um
        q = force[k] * penalty_profile(arg, pen.delta)
        dq = -force[k] * penalty_slope(arg, pen.delta) * m * np.abs(u) ** (m - 1)
        return q, dq

    return source


def solve_penalized(spec, reg, *, newton_tol: float = 1e-10, newton_max_iters: int = 50,
                    barrier_tol: float = 1e-8, log_rows: Optional[list] = None) -> ScalarField:
    """Penalized problem with lifted data and capped diffusivity ``a_eps``.

    ``spec`` supplies ``psi``, ``g``, ``u0`` and ``m``; ``reg`` supplies
    ``eps``, ``gamma`` and ``delta``.  The result is checked against the
    constant barriers ``eps + gamma <= u <= N``.
    """
    eps, gamma, delta = reg.eps, reg.gamma, reg.delta
    for name, v in (("eps", eps), ("gamma", gamma), ("delta", delta)):
        if not 0 < v <= 1:
            raise ValueError(f"{name} must lie in (0, 1], got {v}")
    m = spec.m
    psi_e, g_eg, u0_eg = lifted_data(spec, eps, gamma)
    N = max(float(np.max((psi_e.values**m + delta) ** (1 / m))), float(g_eg.values.max()), float(u0_eg.max()))
    if N > 1 / (eps + gamma):
        raise ValueError(f"upper barrier N = {N:.4g} exceeds 1/(eps+gamma) = {1 / (eps + gamma):.4g}; "
                         "decrease eps and gamma")
    forcing = obstacle_forcing(psi_e, m, eps)
    pen = PenaltySpec(delta, psi_e, forcing.map(lambda v: np.maximum(v, 0.0), nonneg=True))
    params = PMEParams(m=m, eps=eps, newton_tol=newton_tol, newton_max_iters=newton_max_iters)
    u = solve_pme(u0_eg, g_eg, params, spec.psi.grid, penalty_source(pen, m), log_rows=log_rows)
    lo, hi = float(u.values.min()), float(u.values.max())
    if lo < eps + gamma - barrier_tol or hi > N + barrier_tol:
        raise BarrierViolation(f"penalized solution left [{eps + gamma:.4g}, {N:.4g}]: range [{lo:.6g}, {hi:.6g}]")
    return u
