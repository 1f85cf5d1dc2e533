"""Rerun every shipped scenario and refresh tests/golden (metrics plus metadata)."""
import argparse
import platform
import tempfile
from pathlib import Path

import matplotlib
import numpy as np
import scipy

from pmelab import __version__
from pmelab.config import load_config
from pmelab.runner import run_scenario

ROOT = Path(__file__).resolve().parents[1]

TOL_KEYS = ("newton_tol", "order_min", "coincidence_tol", "residual_safety", "lower_scale", "h")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenarios", default=str(ROOT / "scenarios"))
    ap.add_argument("--golden", default=str(ROOT / "tests" / "golden"))
    args = ap.parse_args(argv)
    golden = Path(args.golden)
    golden.mkdir(parents=True, exist_ok=True)
    lines = ["# golden metrics, one CSV per shipped scenario; compared at rel_tol = 1e-9",
             "# regenerate with: python scripts/regen_goldens.py",
             f"pmelab = {__version__}", f"python = {platform.python_version()}", f"numpy = {np.__version__}",
             f"scipy = {scipy.__version__}", f"matplotlib = {matplotlib.__version__}",
             f"platform = {platform.machine()}-{platform.system().lower()}", ""]
    for path in sorted(Path(args.scenarios).glob("*.toml")):
        cfg = load_config(path)
        with tempfile.TemporaryDirectory() as tmp:
            run_scenario(cfg, Path(tmp))
            (golden / f"{cfg.name}.csv").write_bytes((Path(tmp) / "metrics.csv").read_bytes())
        g = cfg.grid
        tols = {k: cfg.params[k] for k in TOL_KEYS if k in cfg.params}
        tols.setdefault("newton_tol", 1e-10)
        lines.append(f"[{cfg.name}] grid extent={list(map(list, g.extent))} nx={list(g.nx)} nt={g.nt} T={g.T} "
                     f"levels={cfg.params.get('levels', 1)} seed={cfg.params.get('seed', 0)} m={cfg.m} "
                     f"delta={cfg.params.get('delta', [])} checks={cfg.checks} tolerances={tols}")
        print(f"wrote {cfg.name}")
    (golden / "METADATA.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
