"""Space-time grids, nodal fields, regions, cut-off functions and quadrature.

Everything in the package works on uniform tensor grids over a box
``Omega x [0, T]`` in one or two space dimensions.  Field values are stored
time-major: ``values[k, i]`` (1D) or ``values[k, i, j]`` (2D) is the value at
time level ``k`` and spatial node ``(i, j)``.
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

FIELD_MAGIC = b"PMEF1"


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid of ``Omega_T``.

    ``nx`` counts nodes per axis including the boundary nodes, ``nt`` counts
    time levels including ``t = 0`` and ``t = T``.
    """

    extent: tuple
    nx: tuple
    nt: int
    T: float

    def __post_init__(self):
        extent = tuple((float(a), float(b)) for a, b in self.extent)
        nx = (int(self.nx),) * len(extent) if np.isscalar(self.nx) else tuple(int(n) for n in self.nx)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "T", float(self.T))
        if len(extent) not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {len(extent)}")
        if len(nx) != len(extent):
            raise ValueError("nx must give one node count per axis")
        if any(b <= a for a, b in extent):
            raise ValueError(f"empty extent {extent}")
        if any(n < 3 for n in nx):
            raise ValueError(f"need at least 3 nodes per axis, got {nx}")
        if self.nt < 2:
            raise ValueError(f"need at least 2 time levels, got {self.nt}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @classmethod
    def uniform(cls, dim: int, length: float, nx: int, nt: int, T: float, *, centered: bool = False):
        lo, hi = (-length / 2, length / 2) if centered else (0.0, length)
        return cls(extent=((lo, hi),) * dim, nx=(nx,) * dim, nt=nt, T=T)

    @property
    def dim(self) -> int:
        return len(self.extent)

    @property
    def dx(self) -> tuple:
        return tuple((b - a) / (n - 1) for (a, b), n in zip(self.extent, self.nx))

    @property
    def dt(self) -> float:
        return self.T / (self.nt - 1)

    @property
    def h(self) -> float:
        """Largest spatial spacing."""
        return max(self.dx)

    @property
    def spatial_shape(self) -> tuple:
        return self.nx

    @property
    def shape(self) -> tuple:
        return (self.nt,) + self.nx

    @property
    def axes(self) -> list:
        return [np.linspace(a, b, n) for (a, b), n in zip(self.extent, self.nx)]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt)

    def mesh(self) -> list:
        """Spatial coordinate arrays, each of ``spatial_shape``."""
        return np.meshgrid(*self.axes, indexing="ij")

    def spacetime_mesh(self) -> list:
        """``[x, (y,) t]`` coordinate arrays, each of ``shape``."""
        t, *xs = np.meshgrid(self.times, *self.axes, indexing="ij")
        return xs + [t]

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.nx, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.extent]))

    def subgrid(self, region: "Region"):
        """Grid on the nodes of ``region`` and the index slices (time first) it occupies."""
        sl = region.index_ranges(self)
        t, axes = self.times, self.axes
        extent = tuple((float(x[s.start]), float(x[s.stop - 1])) for x, s in zip(axes, sl[1:]))
        nt = sl[0].stop - sl[0].start
        T = float(t[sl[0].stop - 1] - t[sl[0].start])
        return SpaceTimeGrid(extent, tuple(s.stop - s.start for s in sl[1:]), nt, T), sl

    def refined(self, factor: int = 2) -> "SpaceTimeGrid":
        return SpaceTimeGrid(
            extent=self.extent,
            nx=tuple((n - 1) * factor + 1 for n in self.nx),
            nt=(self.nt - 1) * factor + 1,
            T=self.T,
        )


@dataclass(frozen=True)
class Region:
    """Space-time box ``U x (t1, t2)``; ``U`` is a box given per axis."""

    box: tuple
    window: tuple

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        window = (float(self.window[0]), float(self.window[1]))
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "window", window)
        if any(b <= a for a, b in box) or window[1] <= window[0]:
            raise ValueError(f"empty region {box} x {window}")

    @classmethod
    def full(cls, grid: SpaceTimeGrid) -> "Region":
        return cls(box=grid.extent, window=(0.0, grid.T))

    @classmethod
    def shrunk(cls, grid: SpaceTimeGrid, frac: float = 0.2) -> "Region":
        """Concentric interior region leaving ``frac`` of each side free."""
        box = tuple((a + frac * (b - a), b - frac * (b - a)) for a, b in grid.extent)
        return cls(box=box, window=(frac * grid.T, (1 - frac) * grid.T))

    def is_interior(self, grid: SpaceTimeGrid) -> bool:
        ok = all(lo > a and hi < b for (lo, hi), (a, b) in zip(self.box, grid.extent))
        return ok and self.window[0] > 0 and self.window[1] < grid.T

    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.box]) * (self.window[1] - self.window[0]))

    def index_ranges(self, grid: SpaceTimeGrid) -> tuple:
        """Index slices of the nodes inside the closed region, time first."""
        if len(self.box) != grid.dim:
            raise ValueError("region dimension does not match grid")
        slices = [_node_slice(grid.times, *self.window)]
        for (lo, hi), x in zip(self.box, grid.axes):
            slices.append(_node_slice(x, lo, hi))
        return tuple(slices)


def _node_slice(x: np.ndarray, lo: float, hi: float) -> slice:
    tol = 1e-9 * (x[-1] - x[0])
    inside = np.nonzero((x >= lo - tol) & (x <= hi + tol))[0]
    if inside.size < 2:
        raise ValueError(f"region [{lo}, {hi}] holds fewer than two grid nodes")
    return slice(int(inside[0]), int(inside[-1]) + 1)


class ScalarField:
    """Nodal values of a function on a space-time grid (read-only)."""

    def __init__(self, grid: SpaceTimeGrid, values, nonneg: bool = False):
        vals = np.array(values, dtype=float)
        if vals.shape != grid.shape:
            raise ValueError(f"values have shape {vals.shape}, grid expects {grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if nonneg and vals.min() < 0:
            raise ValueError(f"field flagged nonnegative has minimum {vals.min():.3e}")
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals
        self.nonneg = bool(nonneg)

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn, nonneg: bool = False) -> "ScalarField":
        """Sample ``fn(*xs, t)`` on the grid; ``fn`` must broadcast."""
        coords = grid.spacetime_mesh()
        vals = np.broadcast_to(fn(*coords), grid.shape)
        return cls(grid, vals, nonneg=nonneg)

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)), nonneg=c >= 0)

    def slice(self, k: int) -> np.ndarray:
        return self.values[k]

    def map(self, fn, nonneg: Optional[bool] = None) -> "ScalarField":
        return ScalarField(self.grid, fn(self.values), nonneg=self.nonneg if nonneg is None else nonneg)

    def power(self, p: float) -> "ScalarField":
        """Nodal power of a nonnegative field, extended by 0 on ``{u = 0}``."""
        return ScalarField(self.grid, nodal_power(self.values, p), nonneg=True)

    def __repr__(self):
        return f"ScalarField(shape={self.values.shape}, nonneg={self.nonneg})"


def nodal_power(u: np.ndarray, p: float) -> np.ndarray:
    """``u**p`` for ``u >= 0`` with the value 0 wherever ``u == 0``.

    Negative roundoff below ``-1e-12`` is an error; smaller negatives are
    treated as 0.
    """
    u = np.asarray(u, dtype=float)
    if u.size and u.min() < -1e-12:
        raise ValueError(f"power of a negative value {u.min():.3e}")
    pos = np.maximum(u, 0.0)
    out = np.zeros_like(pos)
    np.power(pos, p, out=out, where=pos > 0)
    return out


def discrete_gradient(f, t_index: Optional[int] = None) -> np.ndarray:
    """Central-difference spatial gradient, one-sided at boundary nodes.

    ``f`` is a ScalarField (then ``t_index`` selects the slice, or all slices
    when omitted).  Returns an array with a leading axis of length ``dim``.
    """
    grid = f.grid
    if t_index is None:
        vals = f.values
        axes = range(1, grid.dim + 1)
    else:
        if not -grid.nt <= t_index < grid.nt:
            raise IndexError(f"time index {t_index} out of range for nt={grid.nt}")
        vals = f.values[t_index]
        axes = range(grid.dim)
    return spatial_gradient(vals, grid.dx, axes)


def spatial_gradient(vals: np.ndarray, dx: Sequence[float], axes) -> np.ndarray:
    comps = [np.gradient(vals, h, axis=ax, edge_order=1) for h, ax in zip(dx, axes)]
    return np.stack(comps)


def time_derivative(vals: np.ndarray, dt: float) -> np.ndarray:
    """Second-order central difference in time (one-sided at the ends)."""
    return np.gradient(vals, dt, axis=0, edge_order=2 if vals.shape[0] > 2 else 1)


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def quadrature_weights(grid: SpaceTimeGrid, region: Optional[Region] = None) -> np.ndarray:
    """Composite trapezoid weights on ``grid.shape``, zero outside ``region``."""
    region = region or Region.full(grid)
    slices = region.index_ranges(grid)
    spacings = (grid.dt,) + grid.dx
    w = np.zeros(grid.shape)
    factors = [trapezoid_weights(s.stop - s.start, h) for s, h in zip(slices, spacings)]
    block = factors[0]
    for fac in factors[1:]:
        block = np.multiply.outer(block, fac)
    w[slices] = block
    return w


def spatial_weights(grid: SpaceTimeGrid, box: Optional[tuple] = None) -> np.ndarray:
    """Trapezoid weights over the spatial grid, zero outside ``box``."""
    box = box or grid.extent
    slices = tuple(_node_slice(x, lo, hi) for (lo, hi), x in zip(box, grid.axes))
    w = np.zeros(grid.nx)
    block = np.ones(())
    for s, h in zip(slices, grid.dx):
        block = np.multiply.outer(block, trapezoid_weights(s.stop - s.start, h))
    w[slices] = block
    return w


def integrate(f, region: Optional[Region] = None) -> float:
    """Trapezoid space-time integral of ``f`` over ``region`` (default: all of ``Omega_T``)."""
    w = quadrature_weights(f.grid, region)
    return float(np.sum(w * f.values))


def ball_mask(grid: SpaceTimeGrid, center: Sequence[float], radius: float) -> np.ndarray:
    """Nodes with ``|x - center| <= radius``."""
    xs = grid.mesh()
    r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
    return r2 <= radius**2 * (1 + 1e-12)


def smoothstep(s):
    """C^1 cubic ramp: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def smoothstep_slope(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 6 * s * (1 - s), 0.0)


def smooth_ramp(s):
    """C-infinity ramp built from exp(-1/s); all derivatives vanish at 0 and 1."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return a / (a + b)


def smooth_ramp_slope(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    q = np.where(inside, s, 0.5)
    a = np.exp(-1.0 / q)
    b = np.exp(-1.0 / (1 - q))
    da = a / q**2
    db = -b / (1 - q) ** 2
    return np.where(inside, (da * b - a * db) / (a + b) ** 2, 0.0)


RAMP_MAX_SLOPE = {"cubic": 1.5, "smooth": 2.0}
RAMPS = {"cubic": (smoothstep, smoothstep_slope), "smooth": (smooth_ramp, smooth_ramp_slope)}


def _ramp_profile(x, support, plateau, profile: str = "cubic"):
    """Tensor factor of a cut-off along one axis plus its derivative.

    Ramps up on ``[support_lo, plateau_lo]``, equals 1 on the plateau and ramps
    down on ``[plateau_hi, support_hi]``.  A degenerate ramp (plateau edge on the
    support edge) means the profile does not vanish there.
    """
    a, b = support
    c, d = plateau
    ramp, slope = RAMPS[profile]
    x = np.asarray(x, dtype=float)
    val = np.ones_like(x)
    der = np.zeros_like(x)
    if c > a:
        s = (x - a) / (c - a)
        up = x < c
        val = np.where(up, ramp(s), val)
        der = np.where(up, slope(s) / (c - a), der)
    if b > d:
        s = (b - x) / (b - d)
        down = x > d
        val = np.where(down, ramp(s), val)
        der = np.where(down, -slope(s) / (b - d), der)
    outside = (x < a) | (x > b)
    val = np.where(outside, 0.0, val)
    der = np.where(outside, 0.0, der)
    return val, der


@dataclass(frozen=True)
class CutoffFunction:
    """Tensor bump with cubic (C^1) or C-infinity ramps.

    ``kind="spacetime"`` gives zeta(x, t) with compact support in ``support``
    and value 1 on ``plateau``.  ``kind="time"`` gives a ramp alpha(t) that
    depends on time only; its ``support``/``plateau`` spatial boxes are
    ignored and only the windows are used.  A time ramp whose plateau starts
    at the support start does not vanish there (alpha(0) = 1 is allowed).
    """

    support: Region
    plateau: Region
    kind: str = "spacetime"
    profile: str = "cubic"

    def __post_init__(self):
        if self.kind not in ("spacetime", "time"):
            raise ValueError(f"unknown cut-off kind {self.kind!r}")
        if self.profile not in RAMPS:
            raise ValueError(f"unknown ramp profile {self.profile!r}")
        (t1, t2), (p1, p2) = self.support.window, self.plateau.window
        if not (t1 <= p1 < p2 <= t2):
            raise ValueError("plateau window must lie inside the support window")
        if self.kind == "spacetime":
            for (a, b), (c, d) in zip(self.support.box, self.plateau.box):
                if not (a < c < d < b):
                    raise ValueError("plateau box must lie strictly inside the support box")
            if not (t1 < p1 and p2 < t2):
                raise ValueError("space-time cut-off needs ramps at both time ends")

    @classmethod
    def time_ramp(cls, t_flat: float, t_end: float, grid: SpaceTimeGrid) -> "CutoffFunction":
        """alpha = 1 on ``[0, t_flat]``, decreasing to 0 at ``t_end <= T``."""
        box = grid.extent
        return cls(Region(box, (0.0, t_end)), Region(box, (0.0, t_flat)), kind="time")

    @classmethod
    def around(cls, grid: SpaceTimeGrid, center: Sequence[float], t_center: float,
               half_plateau: Sequence[float], half_support: Sequence[float],
               profile: str = "cubic") -> "CutoffFunction":
        """Bump centred at ``(center, t_center)``; half-widths are ``(space..., time)``."""
        sup = Region(
            tuple((c - w, c + w) for c, w in zip(center, half_support[:-1])),
            (t_center - half_support[-1], t_center + half_support[-1]),
        )
        pl = Region(
            tuple((c - w, c + w) for c, w in zip(center, half_plateau[:-1])),
            (t_center - half_plateau[-1], t_center + half_plateau[-1]),
        )
        return cls(sup, pl, profile=profile)

    def evaluate(self, grid: SpaceTimeGrid):
        """Values, time derivative and spatial gradient on the grid.

        Returns ``(zeta, dt_zeta, grad_zeta)`` with shapes ``grid.shape``,
        ``grid.shape`` and ``(dim,) + grid.shape``; derivatives are exact.
        """
        tv, td = _ramp_profile(grid.times, self.support.window, self.plateau.window, self.profile)
        shape_t = (grid.nt,) + (1,) * grid.dim
        tv, td = tv.reshape(shape_t), td.reshape(shape_t)
        if self.kind == "time":
            ones = np.ones(grid.shape)
            return tv * ones, td * ones, np.zeros((grid.dim,) + grid.shape)
        factors = []
        for ax, (x, sup, pl) in enumerate(zip(grid.axes, self.support.box, self.plateau.box)):
            v, d = _ramp_profile(x, sup, pl, self.profile)
            shp = [1] * (grid.dim + 1)
            shp[ax + 1] = x.size
            factors.append((v.reshape(shp), d.reshape(shp)))
        space = np.ones((1,) + grid.nx)
        for v, _ in factors:
            space = space * v
        zeta = tv * space
        dzeta_t = td * space
        grads = []
        for ax in range(grid.dim):
            g = tv * factors[ax][1]
            for other in range(grid.dim):
                if other != ax:
                    g = g * factors[other][0]
            grads.append(np.broadcast_to(g, grid.shape))
        return zeta, dzeta_t, np.stack(grads)

    def gradient_bound(self) -> float:
        """Max of ``|grad zeta| + |dt zeta|`` implied by the ramp widths."""
        k = RAMP_MAX_SLOPE[self.profile]
        widths = [c - a for (a, _), (c, _) in zip(self.support.box, self.plateau.box)]
        widths += [b - d for (_, b), (_, d) in zip(self.support.box, self.plateau.box)]
        (t1, t2), (p1, p2) = self.support.window, self.plateau.window
        twidths = [w for w in (p1 - t1, t2 - p2) if w > 0]
        space = k * np.sqrt(len(self.support.box)) / min(widths) if self.kind == "spacetime" else 0.0
        return space + (k / min(twidths) if twidths else 0.0)


# -- field files --------------------------------------------------------------

def _atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_to_bytes(f: ScalarField) -> bytes:
    g = f.grid
    head = FIELD_MAGIC + struct.pack("<q", g.dim)
    head += struct.pack(f"<{g.dim}q", *g.nx)
    head += struct.pack("<q", g.nt)
    head += struct.pack(f"<{2 * g.dim}d", *[v for ab in g.extent for v in ab])
    head += struct.pack("<d", g.T)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def write_field(path, f: ScalarField) -> None:
    """Binary field dump: ``PMEF1`` header, then time-major little-endian doubles."""
    _atomic_write_bytes(path, field_to_bytes(f))


def read_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a PMEF1 field file")
    off = 5
    (dim,) = struct.unpack_from("<q", data, off)
    off += 8
    if dim not in (1, 2):
        raise ValueError(f"{path}: bad dimension {dim}")
    nx = struct.unpack_from(f"<{dim}q", data, off)
    off += 8 * dim
    (nt,) = struct.unpack_from("<q", data, off)
    off += 8
    ext = struct.unpack_from(f"<{2 * dim}d", data, off)
    off += 16 * dim
    (T,) = struct.unpack_from("<d", data, off)
    off += 8
    grid = SpaceTimeGrid(extent=tuple(zip(ext[::2], ext[1::2])), nx=nx, nt=nt, T=T)
    count = nt * int(np.prod(nx))
    if len(data) - off != 8 * count:
        raise ValueError(f"{path}: expected {count} values, found {(len(data) - off) // 8}")
    vals = np.frombuffer(data, dtype="<f8", offset=off, count=count).reshape(grid.shape)
    return ScalarField(grid, vals)


def write_field_csv(path, f: ScalarField) -> None:
    """One row per node per time level: ``x[,y],t,value``."""
    g = f.grid
    cols = ["x", "y"][: g.dim] + ["t", "value"]
    coords = [c.ravel() for c in g.spacetime_mesh()]
    vals = f.values.ravel()
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*coords, vals):
            w.writerow([repr(float(v)) for v in row])
    os.replace(tmp, path)
