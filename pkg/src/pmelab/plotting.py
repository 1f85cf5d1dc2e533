"""PNG figures for run reports (non-interactive Agg backend)."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .domain import ScalarField, _atomic_write_bytes  # noqa: E402

# no timestamps or version strings, so reruns give identical bytes
_META = {"Software": None}


def save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_META)
    plt.close(fig)
    _atomic_write_bytes(path, buf.getvalue())


def plot_profiles(path, u: ScalarField, psi: ScalarField = None, n_slices: int = 5, title: str = "") -> None:
    """Spatial profiles at a few time levels (1D) or the final slice (2D)."""
    grid = u.grid
    fig, ax = plt.subplots(figsize=(6, 4))
    if grid.dim == 1:
        x = grid.axes[0]
        ks = np.unique(np.linspace(0, grid.nt - 1, n_slices).round().astype(int))
        for j, k in enumerate(ks):
            c = plt.cm.viridis(j / max(len(ks) - 1, 1))
            ax.plot(x, u.values[k], color=c, label=f"t={grid.times[k]:.3g}")
            if psi is not None:
                ax.plot(x, psi.values[k], color=c, ls="--", lw=0.8)
        ax.set_xlabel("x")
        ax.set_ylabel("u")
        ax.legend(fontsize=7)
    else:
        x, y = grid.axes
        im = ax.pcolormesh(x, y, u.values[-1].T, shading="auto")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    ax.set_title(title)
    fig.tight_layout()
    save(fig, path)


def plot_series(path, xs, series: dict, xlabel: str, ylabel: str, logx=False, logy=False, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(xs[: len(ys)], ys, marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    save(fig, path)
