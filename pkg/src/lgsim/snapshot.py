"""LGSIM1 snapshot format: plain-text grids for every field kind.

Layout:
    LGSIM1 <field-kind> d=<d> L=<L>
    <values...>

For d=2 there is one line per row (fixed first coordinate x, from -L to L),
with the 2L+1 space-separated values running over y = -L..L.  For d=3 the
nesting order is x slowest, then y, then z: one line per (x, y) pair with
the values running over z = -L..L.  This matches the row-major flat index
of GridWindow.

Field kinds: mass and odometer are floats (repr round-trip precision);
grains, exits, region, rotors and flux components are integers.
"""

import numpy as np

from .lattice import GridWindow

__all__ = ["write_snapshot", "read_snapshot", "FLOAT_KINDS", "INT_KINDS"]

MAGIC = "LGSIM1"
FLOAT_KINDS = {"mass", "odometer"}
INT_KINDS = {"grains", "exits", "region", "rotors", "topples", "flux0", "flux1", "flux2"}


def _format_value(v, float_kind):
    if float_kind:
        return repr(float(v))
    return str(int(v))


def write_snapshot(path, kind, window, grid):
    """Write a window-shaped array as an LGSIM1 snapshot."""
    if kind not in FLOAT_KINDS | INT_KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    grid = np.asarray(grid).reshape(window.shape)
    float_kind = kind in FLOAT_KINDS
    side = window.side
    flat = grid.reshape(-1, side)
    with open(path, "w") as fh:
        fh.write(f"{MAGIC} {kind} d={window.d} L={window.L}\n")
        for row in flat:
            fh.write(" ".join(_format_value(v, float_kind) for v in row))
            fh.write("\n")


def read_snapshot(path):
    """Read an LGSIM1 snapshot; returns (kind, window, grid)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != MAGIC:
            raise ValueError(f"{path}: not an {MAGIC} snapshot")
        kind = header[1]
        if kind not in FLOAT_KINDS | INT_KINDS:
            raise ValueError(f"{path}: unknown field kind {kind!r}")
        d = int(header[2].removeprefix("d="))
        L = int(header[3].removeprefix("L="))
        window = GridWindow(d, L)
        dtype = np.float64 if kind in FLOAT_KINDS else np.int64
        data = np.loadtxt(fh, dtype=dtype, ndmin=2)
    expected_rows = window.side ** (window.d - 1)
    if data.shape != (expected_rows, window.side):
        raise ValueError(
            f"{path}: got {data.shape} values, want ({expected_rows}, {window.side})"
        )
    return kind, window, data.reshape(window.shape)
