"""File formats: field snapshots, the energy ledger, per-solve statistics, reports.

All floats are written with 17 significant digits so values round-trip exactly.

Snapshot layout (plain text)::

    dim 2
    cells 4 3
    lengths 1 0.75
    time 0.25
    <value of cell (0,0)>
    <value of cell (0,1)>
    ...                       # row-major, one value per line
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import ScalarField, make_grid
from .stepper import EnergyLedger

__all__ = [
    "fmt",
    "write_snapshot",
    "read_snapshot",
    "write_ledger",
    "write_solves",
    "write_report",
    "LEDGER_COLUMNS",
    "SOLVE_COLUMNS",
]

LEDGER_COLUMNS = ("time", "F_eps", "d_eta_h2", "d_eta_grad2", "d_theta_h2", "d_theta_grad2",
                  "forcing_u", "forcing_v", "slack", "theta_iters", "eta_fp_iters",
                  "eta_newton_iters")
SOLVE_COLUMNS = ("step", "stage", "iterations", "residual", "backtracks")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_snapshot(path, field: ScalarField, time: float) -> None:
    g = field.grid
    lines = [
        f"dim {g.dim}",
        "cells " + " ".join(str(n) for n in g.cells),
        "lengths " + " ".join(fmt(float(L)) for L in g.lengths),
        f"time {fmt(float(time))}",
    ]
    lines.extend(fmt(float(x)) for x in field.values.ravel(order="C"))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_snapshot(path) -> tuple[ScalarField, float]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    head = {}
    for line in lines[:4]:
        key, _, rest = line.partition(" ")
        head[key] = rest.split()
    if set(head) != {"dim", "cells", "lengths", "time"}:
        raise ValueError(f"{path}: malformed snapshot header")
    grid = make_grid(int(head["dim"][0]), tuple(int(c) for c in head["cells"]),
                     tuple(float(L) for L in head["lengths"]))
    values = np.array([float(x) for x in lines[4:] if x.strip()])
    if values.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {values.size}")
    return ScalarField(grid, values.reshape(grid.shape)), float(head["time"][0])


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def write_ledger(path, ledger: EnergyLedger) -> None:
    _write_csv(path, LEDGER_COLUMNS,
               ([getattr(r, c) for c in LEDGER_COLUMNS] for r in ledger.rows))


def write_solves(path, ledger: EnergyLedger) -> None:
    def rows():
        for r in ledger.rows:
            yield (r.step, "theta", r.theta_iters, r.theta_residual, r.theta_backtracks)
            yield (r.step, "eta", r.eta_fp_iters, r.eta_residual, r.eta_backtracks)
    _write_csv(path, SOLVE_COLUMNS, rows())


def write_report(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    _write_csv(path, header, rows)
