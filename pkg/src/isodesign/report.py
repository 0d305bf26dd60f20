"""Human-readable reports with a machine-readable ``key=value`` block, and CSV output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (tuple, list, np.ndarray)):
        return "(" + ", ".join(fmt(x) for x in np.asarray(v).ravel()) + ")"
    return str(v)


@dataclass
class Verdict:
    name: str
    text: str
    tol: float


@dataclass
class Report:
    command: str
    digest: str
    scalars: dict = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)
    csv_paths: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, name: str, value) -> None:
        self.scalars[name] = value

    def verdict(self, name: str, text: str, tol: float) -> None:
        self.verdicts.append(Verdict(name, text, tol))

    def render(self) -> str:
        lines = [f"command: {self.command}", f"input digest: {self.digest}", ""]
        width = max((len(k) for k in self.scalars), default=0)
        for k, v in self.scalars.items():
            lines.append(f"  {k.ljust(width)}  {fmt(v)}")
        if self.verdicts:
            lines.append("")
            for v in self.verdicts:
                lines.append(f"verdict {v.name}: {v.text} (tol {fmt(v.tol)})")
        for n in self.notes:
            lines.append(f"note: {n}")
        for p in self.csv_paths:
            lines.append(f"wrote {p}")
        lines += ["", "[results]", f"command={self.command}", f"digest={self.digest}"]
        lines += [f"{k}={fmt(v)}" for k, v in self.scalars.items()]
        lines += [f"verdict.{v.name}={v.text}" for v in self.verdicts]
        return "\n".join(lines) + "\n"


def write_csv(path: str | Path, header: list[str], columns: list[np.ndarray]) -> str:
    """Write equal-length columns with a header row; floats use ``%.12g``."""
    cols = [np.asarray(c).ravel() for c in columns]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("CSV columns differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow(fmt(v) for v in row)
    return str(path)
