"""Port indexing and the argmin/unravel_index selection rule.

The selection metric is the elementwise complex modulus of the difference
between candidate tables and reference tables, summed over BS antennas
when a stack is given.  The argmin is taken over the row-major flattening
of the resulting N x M distance map, ties broken toward the lowest flat
index; reported indices are 1-based like the grid convention.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .kernels import selection_distance


@dataclass(frozen=True)
class PortIndex:
    """1-based grid coordinate: n along z (rows), m along y (columns)."""

    n: int
    m: int

    @property
    def n0(self) -> int:
        return self.n - 1

    @property
    def m0(self) -> int:
        return self.m - 1

    def as_tuple(self):
        return (self.n, self.m)


@dataclass(frozen=True)
class TableStack:
    """Ordered channel tables sharing one N x M grid.

    axis tags what the leading dimension enumerates: "antenna" for one
    table per BS antenna at a common instant, "time" for one snapshot per
    sample instant.
    """

    tables: np.ndarray  # (K, N, M) complex
    axis: str

    def __post_init__(self):
        if self.axis not in ("antenna", "time"):
            raise ValueError(f"axis must be 'antenna' or 'time', got {self.axis!r}")
        if np.asarray(self.tables).ndim != 3:
            raise ValueError("tables must be a (K, N, M) array")

    def __len__(self) -> int:
        return self.tables.shape[0]

    @property
    def grid_shape(self):
        return self.tables.shape[1:]


def unravel_index(p: int, dims) -> PortIndex:
    """Row-major coordinates of flat index p in an (N, M) grid, 1-based."""
    n_rows, n_cols = dims
    if not (0 <= p < n_rows * n_cols):
        raise ValueError(f"flat index {p} outside 0..{n_rows * n_cols - 1}")
    return PortIndex(n=p // n_cols + 1, m=p % n_cols + 1)


def ravel_index(port: PortIndex, dims) -> int:
    """Inverse of unravel_index."""
    n_rows, n_cols = dims
    if not (1 <= port.n <= n_rows and 1 <= port.m <= n_cols):
        raise ValueError(f"port {port} outside the {n_rows} x {n_cols} grid")
    return port.n0 * n_cols + port.m0


def _as_stack(tables) -> np.ndarray:
    arr = tables.tables if isinstance(tables, TableStack) else np.asarray(tables)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ValueError(f"expected (K, N, M) or (N, M) tables, got shape {arr.shape}")
    return arr


def distance_map(s_stack, h_stack) -> np.ndarray:
    """N x M map D[n,m] = sum_i |S_i[n,m] - H_i[n,m]|."""
    return selection_distance(_as_stack(s_stack), _as_stack(h_stack))


def argmin_port(d: np.ndarray):
    """(PortIndex, minimum) of a distance map; first flat index wins ties."""
    flat = int(np.argmin(d))  # np.argmin returns the first minimum
    return unravel_index(flat, d.shape), float(d.flat[flat])


def select_port_multi(s_stack, h_stack):
    """(PortIndex, d_min) minimizing the antenna-summed table distance."""
    return argmin_port(distance_map(s_stack, h_stack))


def select_port_single(s_hat, h_ref):
    """Single-table selection: select_port_multi with a one-table stack."""
    return select_port_multi(_as_stack(s_hat), _as_stack(h_ref))


def write_port_trace(path, rows):
    """Serialize port decisions as CSV rows (time_step, n, m, d_min).

    rows: iterable of (time_step, PortIndex, d_min).  Both the 1-based grid
    coordinates and the row-major flat index are recorded.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_step", "n", "m", "n0", "m0", "d_min"])
        for step, port, d_min in rows:
            writer.writerow([step, port.n, port.m, port.n0, port.m0, f"{d_min:.12g}"])
