"""Scenario files: TOML with blocks [grid], [data], [params], [checks], [output]."""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .domain import Region, ScalarField, SpaceTimeGrid, read_field
from .obstacle import ApproximationChain, ObstacleProblemSpec, RegularizationParams
from .solver import BarenblattParams, barenblatt_field

CHECKS = ("barenblatt-convergence", "feasibility", "energy", "caccioppoli", "comparison", "supercaloric",
          "equivalence", "coincidence", "mollifier", "sobolev")
DATA_KINDS = ("constant", "bump", "barenblatt", "files")

_GRID_KEYS = {"extent", "nx", "nt", "T"}
_DATA_KEYS = {
    "constant": {"kind", "psi", "value"},
    "bump": {"kind", "amplitude", "center", "width", "time_factor", "floor"},
    "barenblatt": {"kind", "C", "t0", "center", "psi_scale"},
    "files": {"kind", "psi", "g", "u0"},
}
_PARAM_KEYS = {"m", "delta", "eps", "gamma", "h", "newton_tol", "newton_max_iters", "seed", "basis_size",
               "levels", "order_min", "lower_scale", "i_max", "free_regions", "coincidence_tol",
               "residual_safety", "sobolev_family", "sobolev_p", "sobolev_r", "mollifier_fields"}
_OUTPUT_KEYS = {"dir", "formats", "fields"}
_BLOCKS = {"grid", "data", "params", "checks", "output"}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str
    grid: SpaceTimeGrid
    data: dict
    params: dict
    checks: list
    output: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def m(self) -> float:
        return float(self.params["m"])

    def chain(self) -> Optional[ApproximationChain]:
        deltas = self.params.get("delta")
        if not deltas:
            return None
        return ApproximationChain(
            delta_seq=tuple(deltas),
            eps_seq=tuple(self.params.get("eps", [1e-3])),
            gamma_seq=tuple(self.params.get("gamma", [1e-3])),
            h=float(self.params.get("h", 0.1)),
        )

    def regularization(self, k: int = -1) -> Optional[RegularizationParams]:
        ch = self.chain()
        return None if ch is None else ch.params(k if k >= 0 else len(ch) - 1)

    def levels(self) -> list:
        """Grids ``nx * 2^j`` nodes, ``(nt - 1) * 2^j + 1`` levels, j < levels."""
        n = int(self.params.get("levels", 1))
        g = self.grid
        return [SpaceTimeGrid(g.extent, tuple(k * 2**j for k in g.nx), (g.nt - 1) * 2**j + 1, g.T)
                for j in range(n)]

    def spec(self, grid: Optional[SpaceTimeGrid] = None) -> ObstacleProblemSpec:
        grid = grid or self.grid
        psi, g, u0 = build_data(self, grid)
        return ObstacleProblemSpec(psi, g, u0, self.m)

    def free_regions(self) -> list:
        return [Region(tuple(tuple(b) for b in r[:-1]), tuple(r[-1])) for r in self.params.get("free_regions", [])]


def _reject_unknown(block: dict, allowed: set, where: str):
    bad = sorted(set(block) - allowed)
    if bad:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(bad)}")


def _require(block: dict, keys, where: str):
    for k in keys:
        if k not in block:
            raise ConfigError(f"missing key [{where}].{k}")


def parse_config(text: str, name: str = "scenario", base_dir: Path = Path(".")) -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    _reject_unknown(raw, _BLOCKS, "top level")
    _require(raw, ("grid", "data", "params"), "top level")
    grid_b = raw["grid"]
    _reject_unknown(grid_b, _GRID_KEYS, "grid")
    _require(grid_b, ("extent", "nx", "nt", "T"), "grid")
    try:
        grid = SpaceTimeGrid(tuple(tuple(e) for e in grid_b["extent"]), grid_b["nx"], grid_b["nt"], grid_b["T"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [grid]: {exc}") from exc
    data = dict(raw["data"])
    _require(data, ("kind",), "data")
    if data["kind"] not in DATA_KINDS:
        raise ConfigError(f"[data].kind must be one of {DATA_KINDS}, got {data['kind']!r}")
    _reject_unknown(data, _DATA_KEYS[data["kind"]], "data")
    params = dict(raw["params"])
    _reject_unknown(params, _PARAM_KEYS, "params")
    _require(params, ("m",), "params")
    if not float(params["m"]) > 1:
        raise ConfigError(f"[params].m must exceed 1, got {params['m']}")
    checks_b = raw.get("checks", {})
    _reject_unknown(checks_b, {"run"}, "checks")
    checks = list(checks_b.get("run", []))
    for c in checks:
        if c not in CHECKS:
            raise ConfigError(f"unknown check {c!r}; known: {', '.join(CHECKS)}")
    output = dict(raw.get("output", {}))
    _reject_unknown(output, _OUTPUT_KEYS, "output")
    cfg = ScenarioConfig(name, grid, data, params, checks, output, base_dir)
    if data["kind"] == "files":
        _require(data, ("psi", "g"), "data")
        for key in ("psi", "g", "u0"):
            if key in data and not (base_dir / data[key]).is_file():
                raise ConfigError(f"field file not found: {base_dir / data[key]}")
    try:
        ch = cfg.chain()
    except ValueError as exc:
        raise ConfigError(f"invalid chain in [params]: {exc}") from exc
    if ch is not None:
        for k in range(len(ch)):
            ch.params(k)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), name=path.stem, base_dir=path.parent)


# -- data construction -------------------------------------------------------------------

def _bump(cfg: ScenarioConfig, grid: SpaceTimeGrid):
    d = cfg.data
    amp = float(d.get("amplitude", 0.8))
    center = np.atleast_1d(np.asarray(d.get("center", [0.5] * grid.dim), dtype=float))
    width = float(d.get("width", 0.12))
    a0, a1 = d.get("time_factor", [1.0, 0.0])
    floor = float(d.get("floor", 0.0))
    *xs, t = grid.spacetime_mesh()
    r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
    psi = amp * np.exp(-r2 / width**2) * (a0 + a1 * t)
    if psi.min() < 0:
        raise ConfigError("bump obstacle turns negative; check time_factor")
    g = np.maximum(psi, floor)
    return psi, g, g[0].copy()


def build_data(cfg: ScenarioConfig, grid: SpaceTimeGrid):
    """``(psi, g, u0)`` on ``grid`` for the configured data kind."""
    d = cfg.data
    kind = d["kind"]
    if kind == "constant":
        value = float(d.get("value", 1.0))
        psi = np.full(grid.shape, float(d.get("psi", value)))
        g = np.full(grid.shape, value)
        u0 = g[0].copy()
    elif kind == "bump":
        psi, g, u0 = _bump(cfg, grid)
    elif kind == "barenblatt":
        bp = barenblatt_params(cfg)
        g = barenblatt_field(grid, bp).values
        psi = float(d.get("psi_scale", 1.0)) * g
        u0 = g[0].copy()
    else:
        fields = {}
        for key in ("psi", "g", "u0"):
            if key in d:
                path = cfg.base_dir / d[key]
                if not path.is_file():
                    raise ConfigError(f"field file not found: {path}")
                f = read_field(path)
                if f.grid != grid:
                    raise ConfigError(f"field file {path} lives on a different grid")
                fields[key] = f.values
        psi, g = fields["psi"], fields["g"]
        u0 = fields["u0"][0].copy() if "u0" in fields else g[0].copy()
    return ScalarField(grid, psi), ScalarField(grid, g), u0


def barenblatt_params(cfg: ScenarioConfig) -> BarenblattParams:
    d = cfg.data
    center = tuple(d.get("center", [0.0] * cfg.grid.dim))
    return BarenblattParams(m=cfg.m, n=cfg.grid.dim, C=float(d.get("C", 1.0)), t0=float(d.get("t0", 1.0)),
                            center=center)


def output_dir(cfg: ScenarioConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    return Path(os.fspath(cfg.output.get("dir", f"out/{cfg.name}")))
