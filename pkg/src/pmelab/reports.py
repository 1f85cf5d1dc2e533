"""Delimited report files and golden-file comparison."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .domain import _atomic_write_bytes


class SchemaError(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    try:
        return repr(float(v))
    except (TypeError, ValueError):
        return str(v)


def write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode())


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(h, "") for h in header]
        w.writerow([fmt(v) for v in row])
    write_text(path, buf.getvalue())


def write_metrics(path, metrics: dict) -> None:
    """``key,value`` rows in insertion order."""
    write_csv(path, ["key", "value"], list(metrics.items()))


def read_metrics(path) -> dict:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["key", "value"]:
        raise SchemaError(f"{path}: expected a key,value header")
    out = {}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise SchemaError(f"{path}:{i}: expected two columns")
        try:
            out[row[0]] = float(row[1])
        except ValueError as exc:
            raise SchemaError(f"{path}:{i}: non-numeric value {row[1]!r}") from exc
    return out


@dataclass
class GoldenDiff:
    entries: list = field(default_factory=list)  # (key, report, golden, rel)
    failed: list = field(default_factory=list)
    rel_tol: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failed

    def text(self) -> str:
        lines = [f"{k}: report={a!r} golden={b!r} rel={r:.3e}" for k, a, b, r in self.entries if k in self.failed]
        lines.append(f"{'PASS' if self.ok else 'FAIL'}: {len(self.failed)} of {len(self.entries)} entries "
                     f"exceed rel_tol={self.rel_tol:g}")
        return "\n".join(lines) + "\n"


def relative_difference(a: float, b: float) -> float:
    if a == b or (a != a and b != b):
        return 0.0
    scale = abs(b) if b != 0 else abs(a)
    return abs(a - b) / scale


def compare_golden(report_path, golden_path, rel_tol: float = 1e-9) -> GoldenDiff:
    rep = read_metrics(report_path)
    gold = read_metrics(golden_path)
    if set(rep) != set(gold):
        missing = sorted(set(gold) - set(rep))
        extra = sorted(set(rep) - set(gold))
        raise SchemaError(f"key sets differ (missing {missing}, extra {extra})")
    diff = GoldenDiff(rel_tol=rel_tol)
    for k in gold:
        r = relative_difference(rep[k], gold[k])
        diff.entries.append((k, rep[k], gold[k], r))
        if not r <= rel_tol:
            diff.failed.append(k)
    return diff
