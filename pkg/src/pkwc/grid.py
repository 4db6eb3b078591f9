"""Uniform cell-centred grids and the discrete calculus built on them.

Cell values live at cell centres. Gradients live on *interior* faces only:
boundary faces carry no degrees of freedom, which is how the homogeneous
Neumann condition enters. ``div`` is defined as the negative adjoint of
``grad`` for the cell-volume-weighted inner products, so

    <grad z, w>_faces = -<z, div w>_cells

holds to rounding, and ``A_N = -div grad`` is symmetric positive semidefinite
with the constants as its null space.

Nonlinear functions of the full gradient vector (|grad theta| and its smooth
approximation) need all components at one point. For that the grid exposes a
*corner* quadrature: every cell is split into 2**dim sub-cells, one per
combination of (low, high) faces along each axis, and in sub-cell ``s`` the
gradient vector is assembled from the face values on those sides (zero on a
boundary face). Each sub-cell carries weight ``cell_volume / 2**dim``. In 1D
this is the trapezoidal rule on faces: an interior face gets the arithmetic
mean of the two adjacent cell coefficients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, GridMismatchError

__all__ = [
    "Grid",
    "ScalarField",
    "FaceField",
    "make_grid",
    "grad",
    "div",
    "neumann_laplacian",
    "inner_h",
    "norm_h",
    "inner_face",
    "norm_face",
    "norm_v",
    "gradient_matrices",
    "laplacian_matrix",
    "corner_matrices",
    "corner_gradients",
]


@dataclass(frozen=True)
class Grid:
    """Uniform box grid on ``(0, L_0) x ... x (0, L_{dim-1})``."""

    dim: int
    cells: tuple[int, ...]
    lengths: tuple[float, ...]

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    def face_shape(self, axis: int) -> tuple[int, ...]:
        shape = list(self.cells)
        shape[axis] -= 1
        return tuple(shape)

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one broadcastable array per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


def make_grid(dim: int, cells, lengths) -> Grid:
    cells = tuple(int(n) for n in cells)
    lengths = tuple(float(L) for L in lengths)
    problems = []
    if dim not in (1, 2):
        problems.append(f"dim must be 1 or 2, got {dim}")
    if len(cells) != dim or len(lengths) != dim:
        problems.append(
            f"cells and lengths need {dim} entries, got {len(cells)} and {len(lengths)}"
        )
    if any(n < 2 for n in cells):
        problems.append(f"need at least 2 cells per axis, got {cells}")
    if any(not np.isfinite(L) or L <= 0 for L in lengths):
        problems.append(f"lengths must be positive, got {lengths}")
    if problems:
        raise ConfigurationError("; ".join(problems), problems)
    return Grid(dim, cells, lengths)


def _check_same(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Cell values of a scalar function, stored with the grid shape (row-major)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def map(self, fn) -> "ScalarField":
        return ScalarField(self.grid, fn(self.values))

    def _other(self, other):
        if isinstance(other, ScalarField):
            _check_same(self.grid, other.grid)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FaceField:
    """Per-axis values on interior faces; axis ``k`` has ``cells[k] - 1`` faces along ``k``."""

    grid: Grid
    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.components) != self.grid.dim:
            raise GridMismatchError(
                f"expected {self.grid.dim} face components, got {len(self.components)}"
            )
        comps = []
        for k, c in enumerate(self.components):
            c = np.array(c, dtype=float)
            if c.shape != self.grid.face_shape(k):
                raise GridMismatchError(
                    f"axis {k}: face array has shape {c.shape}, "
                    f"expected {self.grid.face_shape(k)}"
                )
            c.setflags(write=False)
            comps.append(c)
        object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def zeros(cls, grid: Grid) -> "FaceField":
        return cls(grid, tuple(np.zeros(grid.face_shape(k)) for k in range(grid.dim)))


def grad(z: ScalarField) -> FaceField:
    """Difference quotients across interior faces."""
    g = z.grid
    return FaceField(
        g, tuple(np.diff(z.values, axis=k) / h for k, h in enumerate(g.spacing))
    )


def div(w: FaceField) -> ScalarField:
    """Negative adjoint of :func:`grad`; boundary fluxes are zero."""
    g = w.grid
    out = np.zeros(g.shape)
    for k, (comp, h) in enumerate(zip(w.components, g.spacing)):
        pad = [(0, 0)] * g.dim
        pad[k] = (1, 1)
        out += np.diff(np.pad(comp, pad), axis=k) / h
    return ScalarField(g, out)


def neumann_laplacian(z: ScalarField) -> ScalarField:
    """``A_N z = -div(grad z)``."""
    return -div(grad(z))


def inner_h(z1: ScalarField, z2: ScalarField) -> float:
    _check_same(z1.grid, z2.grid)
    return z1.grid.cell_volume * float(np.sum(z1.values * z2.values))


def norm_h(z: ScalarField) -> float:
    return float(np.sqrt(inner_h(z, z)))


def inner_face(w1: FaceField, w2: FaceField) -> float:
    _check_same(w1.grid, w2.grid)
    s = sum(float(np.sum(a * b)) for a, b in zip(w1.components, w2.components))
    return w1.grid.cell_volume * s


def norm_face(w: FaceField) -> float:
    return float(np.sqrt(inner_face(w, w)))


def norm_v(z: ScalarField) -> float:
    return float(np.sqrt(norm_h(z) ** 2 + norm_face(grad(z)) ** 2))


# -- sparse operators on flattened (row-major) cell vectors -------------------


def _kron_axis(grid: Grid, axis: int, block: sp.spmatrix) -> sp.csr_matrix:
    mats = [block if k == axis else sp.identity(n, format="csr") for k, n in enumerate(grid.cells)]
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


def _diff_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


@lru_cache(maxsize=64)
def gradient_matrices(grid: Grid) -> tuple[sp.csr_matrix, ...]:
    """``G_k`` with ``G_k @ z.flat == grad(z).components[k].ravel()``."""
    return tuple(
        _kron_axis(grid, k, _diff_1d(n, h))
        for k, (n, h) in enumerate(zip(grid.cells, grid.spacing))
    )


@lru_cache(maxsize=64)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Matrix of ``A_N``: ``sum_k G_k^T G_k``."""
    out = sp.csr_matrix((grid.size, grid.size))
    for G in gradient_matrices(grid):
        out = out + (G.T @ G)
    return sp.csr_matrix(out)


@lru_cache(maxsize=64)
def corner_matrices(grid: Grid) -> tuple[tuple[sp.csr_matrix, ...], ...]:
    """``P[s][k]`` maps cell values to the axis-``k`` gradient seen by sub-cell ``s``.

    ``s`` runs over ``itertools.product((0, 1), repeat=dim)``; ``0`` picks the
    low face along that axis, ``1`` the high face. Rows of cells whose chosen
    face is on the boundary are zero.
    """
    out = []
    for signs in itertools.product((0, 1), repeat=grid.dim):
        per_axis = []
        for k, (n, h) in enumerate(zip(grid.cells, grid.spacing)):
            D = _diff_1d(n, h)
            if signs[k] == 0:
                S = sp.vstack([sp.csr_matrix((1, n - 1)), sp.identity(n - 1)], format="csr")
            else:
                S = sp.vstack([sp.identity(n - 1), sp.csr_matrix((1, n - 1))], format="csr")
            per_axis.append(_kron_axis(grid, k, S @ D))
        out.append(tuple(per_axis))
    return tuple(out)


def corner_gradients(z) -> np.ndarray:
    """Sub-cell gradient vectors, shape ``(2**dim, dim, size)``.

    Accepts a :class:`ScalarField` or ``(grid, flat_values)``.
    """
    if isinstance(z, ScalarField):
        grid, flat = z.grid, z.flat
    else:
        grid, flat = z
    P = corner_matrices(grid)
    return np.array([[Pk @ flat for Pk in Ps] for Ps in P])
