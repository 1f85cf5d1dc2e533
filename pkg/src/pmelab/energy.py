"""Energy functionals, inequality checks and weak-form residuals.

All integrals use the trapezoid weights of :mod:`pmelab.domain`; spatial
gradients are nodal central differences.  Test functions are evaluated
analytically (values and derivatives) on the nodes of their support box.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from . import solver
from .domain import (CutoffFunction, Region, ScalarField, SpaceTimeGrid, ball_mask, nodal_power,
                     quadrature_weights, spatial_gradient, spatial_weights, time_derivative,
                     trapezoid_weights)
from .mollify import mollify_array

GRADIENT_FLOOR = 1e-12


@dataclass
class EnergyReport:
    sup_Lm1: float
    grad_um_sq: float
    grad_umid_sq: float
    A: float = float("nan")
    A_tilde: float = float("nan")
    ratios: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("sup_Lm1", "grad_um_sq", "grad_umid_sq"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    def as_row(self) -> dict:
        row = {"sup_Lm1": self.sup_Lm1, "grad_um_sq": self.grad_um_sq, "grad_umid_sq": self.grad_umid_sq,
               "A": self.A, "A_tilde": self.A_tilde}
        row.update({f"ratio:{k}": v for k, v in sorted(self.ratios.items())})
        return row


# -- gradients of powers -------------------------------------------------------------

def grad_all(vals: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    return spatial_gradient(vals, grid.dx, range(1, grid.dim + 1))


def grad_power(u: np.ndarray, p: float, grid: SpaceTimeGrid) -> np.ndarray:
    """Stencil gradient of the nodal power ``u^p``."""
    return grad_all(nodal_power(u, p), grid)


def grad_umid(u: np.ndarray, m: float, grid: SpaceTimeGrid, mode: str = "chain",
              floor: float = GRADIENT_FLOOR) -> np.ndarray:
    """Gradient of ``u^((m+1)/2)``.

    ``mode="chain"``: ``(m+1)/(2m) u^((1-m)/2) grad u^m`` on ``{u > floor}``, 0
    elsewhere.  ``mode="direct"``: stencil gradient of the nodal power.
    """
    if mode == "direct":
        return grad_power(u, (m + 1) / 2, grid)
    if mode != "chain":
        raise ValueError(f"unknown gradient mode {mode!r}")
    gum = grad_power(u, m, grid)
    pos = u > floor
    fac = np.zeros_like(u, dtype=float)
    fac[pos] = (m + 1) / (2 * m) * u[pos] ** ((1 - m) / 2)
    return fac * gum


def sqnorm(vec: np.ndarray) -> np.ndarray:
    return np.sum(vec**2, axis=0)


# -- constants A and A-tilde ------------------------------------------------------------

def _data_terms(spec):
    grid = spec.grid
    m = spec.m
    w = quadrature_weights(grid)
    ws = spatial_weights(grid)
    g = spec.g.values
    sup_g = float(np.max(np.tensordot(nodal_power(g, m + 1), ws, axes=grid.dim)))
    init = float(np.sum(ws * nodal_power(spec.u0, m + 1)))
    gm = nodal_power(g, m)
    grad_g = float(np.sum(w * sqnorm(grad_all(gm, grid))))
    dt_g = float(np.sum(w * np.abs(time_derivative(gm, grid.dt)) ** ((m + 1) / m)))
    return w, sup_g, init, grad_g, dt_g


def constant_A(spec) -> float:
    """``sup_t int g^(m+1) + int u0^(m+1) + iint (Psi_+^2 + |grad g^m|^2 + |d_t g^m|^((m+1)/m))``."""
    w, sup_g, init, grad_g, dt_g = _data_terms(spec)
    Psi = solver.obstacle_forcing(spec.psi, spec.m).values
    return sup_g + init + float(np.sum(w * np.maximum(Psi, 0.0) ** 2)) + grad_g + dt_g


def constant_Atilde(spec) -> float:
    """Like :func:`constant_A` with ``iint g^(2m)`` in place of the obstacle term."""
    w, sup_g, init, grad_g, dt_g = _data_terms(spec)
    return sup_g + init + float(np.sum(w * nodal_power(spec.g.values, 2 * spec.m))) + grad_g + dt_g


def energy_report(u: ScalarField, m: float, interior: Optional[Region] = None, spec=None,
                  gradient: str = "chain") -> EnergyReport:
    grid = u.grid
    interior = interior or Region.shrunk(grid)
    ws = spatial_weights(grid)
    w = quadrature_weights(grid)
    wi = quadrature_weights(grid, interior)
    v = u.values
    sup = float(np.max(np.tensordot(nodal_power(v, m + 1), ws, axes=grid.dim)))
    gum = float(np.sum(w * sqnorm(grad_power(v, m, grid))))
    gmid = float(np.sum(wi * sqnorm(grad_umid(v, m, grid, gradient))))
    A = constant_A(spec) if spec is not None else float("nan")
    At = constant_Atilde(spec) if spec is not None else float("nan")
    ratios = {}
    if spec is not None:
        ratios["energy_over_A"] = (sup + gum) / max(A, 1e-12)
        ratios["grad_umid_over_A1"] = gmid / (A + 1)
        ratios["energy_over_Atilde"] = (sup + gum) / max(At, 1e-12)
    return EnergyReport(sup, gum, gmid, A, At, ratios)


# -- Caccioppoli and Sobolev ----------------------------------------------------------------

def caccioppoli_check(u: ScalarField, M: float, zeta: CutoffFunction, m: float,
                      gradient: str = "chain"):
    """Both sides of the Caccioppoli inequality and their ratio (0 when both vanish)."""
    grid = u.grid
    z, zt, zg = zeta.evaluate(grid)
    v = u.values
    if np.any((z > 0) & (v > M + 1e-12)):
        raise ValueError(f"u exceeds M = {M} on the support of the cut-off")
    w = quadrature_weights(grid)
    lhs = float(np.sum(w * z**2 * sqnorm(grad_umid(v, m, grid, gradient))))
    rhs = float(np.sum(w * ((M - v) ** 2 * z * np.abs(zt) + nodal_power(v, m - 1) * (M - v) ** 2 * sqnorm(zg))))
    if rhs == 0:
        return lhs, rhs, 0.0 if lhs == 0 else float("inf")
    return lhs, rhs, lhs / rhs


def caccioppoli_constant(m: float) -> float:
    """Reference constant ``(m+1)^2/(2m) * max(1, 2m)``."""
    return (m + 1) ** 2 / (2 * m) * max(1.0, 2 * m)


def sobolev_check(v: ScalarField, p: float, r: float, center: Sequence[float], radius: float,
                  window: tuple):
    """``(iint |v|^l, iint (|v/rho|^p + |grad v|^p) * (sup_t int |v|^r)^(p/n))`` on a
    ball times ``window``, with ``l = p (n + r) / n``."""
    if not p > 1 or not r >= 1:
        raise ValueError("need p > 1 and r >= 1")
    grid = v.grid
    n = grid.dim
    t = grid.times
    sel = np.nonzero((t >= window[0] - 1e-12) & (t <= window[1] + 1e-12))[0]
    if sel.size < 2:
        raise ValueError(f"time window {window} holds fewer than two levels")
    mask = ball_mask(grid, center, radius)
    if not mask.any():
        raise ValueError("ball holds no nodes")
    xs = grid.mesh()
    for x, (a, b), c in zip(xs, grid.extent, center):
        if c - radius < a or c + radius > b:
            raise ValueError("ball leaves the domain")
    ws = spatial_weights(grid) * mask
    wt = trapezoid_weights(sel.size, grid.dt)
    vals = v.values[sel]
    ell = p * (n + r) / n
    lhs = float(np.sum(wt * np.tensordot(np.abs(vals) ** ell, ws, axes=n)))
    grad = grad_all(vals, grid)
    integrand = np.abs(vals / radius) ** p + np.sqrt(sqnorm(grad)) ** p
    first = float(np.sum(wt * np.tensordot(integrand, ws, axes=n)))
    sup = float(np.max(np.tensordot(np.abs(vals) ** r, ws, axes=n)))
    return lhs, first * sup ** (p / n)


# -- test-function basis ------------------------------------------------------------------

@dataclass
class _Element:
    cutoff: CutoffFunction
    slices: tuple
    phi: np.ndarray
    phi_t: np.ndarray
    phi_x: np.ndarray
    weights: np.ndarray


class TestFunctionBasis:
    """Smooth space-time bumps with pairwise disjoint plateaus, normalized so that
    ``iint (|phi| + |d_t phi| + |grad phi|) = 1`` on the grid."""

    __test__ = False  # not a pytest class

    def __init__(self, grid: SpaceTimeGrid, cutoffs: Sequence[CutoffFunction]):
        self.grid = grid
        self.cutoffs = list(cutoffs)
        w = quadrature_weights(grid)
        self.elements = []
        for c in self.cutoffs:
            sl = c.support.index_ranges(grid)
            z, zt, zg = c.evaluate(grid)
            z, zt, zg = z[sl], zt[sl], zg[(slice(None),) + sl]
            ww = w[sl]
            norm = float(np.sum(ww * (np.abs(z) + np.abs(zt) + np.sqrt(sqnorm(zg)))))
            if norm <= 0:
                raise ValueError("test function is not resolved by the grid")
            self.elements.append(_Element(c, sl, z / norm, zt / norm, zg / norm, ww))

    def __len__(self):
        return len(self.elements)

    @classmethod
    def quasi_random(cls, grid: SpaceTimeGrid, size: int = 20, seed: int = 0, region: Optional[Region] = None,
                     width: float = 0.2, plateau: float = 0.3, max_draws: int = 4000) -> "TestFunctionBasis":
        """``size`` bumps with Halton-placed, pairwise disjoint plateaus.

        ``width`` is the support half-width as a fraction of each side of
        ``region`` (default: the grid cylinder shrunk by 5%); the plateau
        half-width is ``plateau`` times the support half-width.
        """
        region = region or Region.shrunk(grid, 0.05)
        lo = np.array([a for a, _ in region.box] + [region.window[0]])
        hi = np.array([b for _, b in region.box] + [region.window[1]])
        while width > 1e-3:
            half = width * (hi - lo)
            sampler = qmc.Halton(d=grid.dim + 1, scramble=True, seed=seed)
            centers, plateaus = [], []
            for _ in range(max_draws):
                c = lo + half + sampler.random(1)[0] * (hi - lo - 2 * half)
                pl = (c - plateau * half, c + plateau * half)
                if all(np.any(pl[1] <= q[0]) or np.any(pl[0] >= q[1]) for q in plateaus):
                    centers.append(c)
                    plateaus.append(pl)
                    if len(centers) == size:
                        break
            if len(centers) == size:
                cutoffs = [CutoffFunction.around(grid, c[:-1], c[-1], plateau * half, half, "smooth") for c in centers]
                return cls(grid, cutoffs)
            width *= 0.85
        raise ValueError(f"could not place {size} disjoint plateaus")

    def subset(self, keep: Sequence[int]) -> "TestFunctionBasis":
        out = TestFunctionBasis.__new__(TestFunctionBasis)
        out.grid = self.grid
        out.elements = [self.elements[i] for i in keep]
        out.cutoffs = [e.cutoff for e in out.elements]
        return out

    def inside(self, mask: np.ndarray) -> list:
        """Indices of elements whose whole support lies in the node mask."""
        return [i for i, e in enumerate(self.elements) if bool(np.all(mask[e.slices]))]


# -- residuals -----------------------------------------------------------------------------

FORMULATIONS = ("grad_um", "grad_umid")


def diffusion_flux(u: np.ndarray, m: float, grid: SpaceTimeGrid, formulation: str,
                   gradient: str = "chain") -> np.ndarray:
    """``grad u^m`` or ``2m/(m+1) u^((m-1)/2) grad u^((m+1)/2)``."""
    if formulation == "grad_um":
        return grad_power(u, m, grid)
    if formulation == "grad_umid":
        return 2 * m / (m + 1) * nodal_power(u, (m - 1) / 2) * grad_umid(u, m, grid, gradient)
    raise ValueError(f"unknown formulation {formulation!r}")


def pair(basis: TestFunctionBasis, time_term: np.ndarray, flux: np.ndarray,
         zero_order: Optional[np.ndarray] = None) -> np.ndarray:
    """Per element ``iint (time_term * d_t phi + flux . grad phi + zero_order * phi)``."""
    out = np.empty(len(basis))
    for k, e in enumerate(basis.elements):
        sl = e.slices
        integrand = time_term[sl] * e.phi_t + np.sum(flux[(slice(None),) + sl] * e.phi_x, axis=0)
        if zero_order is not None:
            integrand = integrand + zero_order[sl] * e.phi
        out[k] = np.sum(e.weights * integrand)
    return out


def weak_residual(u: ScalarField, m: float, basis: TestFunctionBasis, formulation: str = "grad_um",
                  gradient: str = "chain", source: Optional[np.ndarray] = None) -> np.ndarray:
    """``iint (-u d_t phi + F . grad phi) [- iint source phi]`` for each basis element.

    Supersolutions give values ``>= 0`` on nonnegative ``phi``.
    """
    flux = diffusion_flux(u.values, m, u.grid, formulation, gradient)
    zero = None if source is None else -np.asarray(source)
    return pair(basis, -u.values, flux, zero)


def regularized_residual(u: ScalarField, m: float, h: float, basis: TestFunctionBasis,
                         source: Optional[np.ndarray] = None, u0: Optional[np.ndarray] = None) -> np.ndarray:
    """Left minus right side of the time-mollified inequality (``v0 = 0``).

    ``iint (d_t [[u]]_h phi + grad [[u^m]]_h . grad phi) - iint [[source]]_h phi
    - (1/h) int u0 int_0^T phi e^(-s/h) ds dx``.
    """
    grid = u.grid
    zero = np.zeros(grid.nx)
    mu = mollify_array(u.values, grid.dt, h, zero)
    dmu = (u.values - mu) / h
    mum = mollify_array(nodal_power(u.values, m), grid.dt, h, zero)
    flux = grad_all(mum, grid)
    init = np.array(u.values[0]) if u0 is None else np.asarray(u0, dtype=float)
    kern = np.exp(-grid.times / h).reshape((grid.nt,) + (1,) * grid.dim)
    zero_order = dmu - (init / h) * kern
    if source is not None:
        zero_order = zero_order - mollify_array(np.asarray(source, dtype=float), grid.dt, h, zero)
    return pair(basis, np.zeros(grid.shape), flux, zero_order)


def variational_residual(u: ScalarField, v: ScalarField, alpha: CutoffFunction, m: float,
                         psi: Optional[ScalarField] = None, u0: Optional[np.ndarray] = None,
                         tol: float = 1e-10) -> float:
    """Discrete left side of the weak obstacle inequality for comparison map ``v``."""
    grid = u.grid
    a, at, _ = alpha.evaluate(grid)
    if abs(a[-1].max()) > tol:
        raise ValueError("time cut-off must vanish at T")
    if psi is not None and np.any(v.values < psi.values - tol):
        raise ValueError("comparison map dips below the obstacle")
    b = grid.boundary_mask()
    if np.any(np.abs(v.values[:, b] - u.values[:, b]) > tol):
        raise ValueError("comparison map must share the boundary data of u")
    w = quadrature_weights(grid)
    ws = spatial_weights(grid)
    uv = u.values
    u0 = np.array(uv[0]) if u0 is None else np.asarray(u0, dtype=float)
    vm = nodal_power(v.values, m)
    um = nodal_power(uv, m)
    bulk = at * (nodal_power(uv, m + 1) / (m + 1) - uv * vm) - a * uv * time_derivative(vm, grid.dt)
    diff = a * np.sum(grad_all(um, grid) * grad_all(vm - um, grid), axis=0)
    init = a[0].flat[0] * np.sum(ws * (nodal_power(u0, m + 1) / (m + 1) - u0 * vm[0]))
    return float(np.sum(w * (bulk + diff)) + init)


# -- truncations -----------------------------------------------------------------------------

def truncation_G(s, eps: float):
    """``eps s`` on ``[0, eps]``, ``(eps^2 + s^2)/2`` above."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= eps, eps * s, 0.5 * (eps**2 + s**2))


def truncation_g(s, eps: float):
    return np.maximum(eps, np.asarray(s, dtype=float))


def truncation_energy(u: ScalarField, eps: float, zeta: CutoffFunction):
    """``(iint |d_t zeta| G_eps(u), iint |grad zeta|^2 g_eps(u)^2)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = u.grid
    z, zt, zg = zeta.evaluate(grid)
    w = quadrature_weights(grid)
    G = float(np.sum(w * np.abs(zt) * truncation_G(u.values, eps)))
    g = float(np.sum(w * sqnorm(zg) * truncation_g(u.values, eps) ** 2))
    return G, g
