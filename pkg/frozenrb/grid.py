"""Periodic structured grid, discrete fields and the discrete translation action."""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveFloat, conint

from frozenrb.exceptions import ContractViolation, GridMismatchError

# Translation vectors (group elements) and Lie algebra elements are both plain
# length-2 float arrays, since G = LG = R^2.
GroupVec = np.ndarray
LieAlgebraVec = np.ndarray

IDENTITY = np.zeros(2)

# Snap tolerance (in cells) for treating a shift as an integer-cell shift
_INTEGER_SHIFT_TOL = 1e-9


class GridSpec(BaseModel):
    """Periodic nx x ny cell grid on [0, lx] x [0, ly].

    DOFs are numbered row-major with i (the x1 index) running fastest:
    ``index = j * nx + i``.
    """

    model_config = ConfigDict(frozen=True)

    nx: conint(ge=2)
    ny: conint(ge=2)
    lx: PositiveFloat = 2.0
    ly: PositiveFloat = 1.0

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def size(self) -> int:
        """Number of cells H."""
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x1, x2) center coordinates as flat row-major arrays."""
        x1 = (np.arange(self.nx) + 0.5) * self.dx
        x2 = (np.arange(self.ny) + 0.5) * self.dy
        xx, yy = np.meshgrid(x1, x2)
        return xx.ravel(), yy.ravel()

    def index(self, i: int, j: int) -> int:
        """DOF index of cell (i, j), wrapping periodically."""
        return (j % self.ny) * self.nx + (i % self.nx)

    def cell(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`index` for 0 <= index < H."""
        if not 0 <= index < self.size:
            raise ContractViolation(f"DOF index {index} out of range for grid with {self.size} cells")
        return index % self.nx, index // self.nx


@dataclass(frozen=True)
class Field:
    """A discrete function in V_H: one value per cell of ``grid``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ContractViolation(
                f"Field needs {self.grid.size} values for a {self.grid.nx}x{self.grid.ny} grid, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ContractViolation("Field values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def as_image(self) -> np.ndarray:
        """Values reshaped to (ny, nx), row j holding the cells with x2-index j."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def __add__(self, other: "Field") -> "Field":
        check_same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        check_same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, alpha: float) -> "Field":
        return Field(self.grid, alpha * self.values)

    __rmul__ = __mul__


def check_same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"Fields live on different grids: {a.grid} vs {b.grid}")


def constant_field(grid: GridSpec, value: float) -> Field:
    return Field(grid, np.full(grid.size, float(value)))


def unit_field(grid: GridSpec, index: int) -> Field:
    """Canonical unit field phi_index (1 in one cell, 0 elsewhere)."""
    grid.cell(index)
    values = np.zeros(grid.size)
    values[index] = 1.0
    return Field(grid, values)


def project_initial(grid: GridSpec, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Field:
    """Midpoint projection P_H: sample ``f`` at the cell centers.

    ``f`` is called once with the flat arrays of center coordinates and must
    broadcast over them (numpy ufunc style).
    """
    x1, x2 = grid.cell_centers()
    values = np.broadcast_to(np.asarray(f(x1, x2), dtype=float), x1.shape)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ContractViolation(f"Initial datum is not finite at cell {grid.cell(bad)}")
    return Field(grid, values)


def inner_product(a: Field, b: Field) -> float:
    """Discrete L2 product dx * dy * sum(a_i * b_i)."""
    check_same_grid(a, b)
    return a.grid.cell_area * float(np.dot(a.values, b.values))


def l2_norm(a: Field) -> float:
    return float(np.sqrt(inner_product(a, a)))


def _split_shift(shift: float) -> tuple[int, float]:
    """Split a shift measured in cells into integer part and fraction in [0, 1)."""
    nearest = round(shift)
    if abs(shift - nearest) < _INTEGER_SHIFT_TOL:
        return int(nearest), 0.0
    whole = int(np.floor(shift))
    return whole, shift - whole


def shift_array(image: np.ndarray, g: GroupVec, dx: float, dy: float) -> np.ndarray:
    """Periodic translate (g.v)(x) = v(x - g) of a (ny, nx) image.

    Bilinear interpolation between cell centers; zero-weight terms are skipped
    so integer-cell shifts are exact permutations.
    """
    ix, fx = _split_shift(float(g[0]) / dx)
    iy, fy = _split_shift(float(g[1]) / dy)
    weights = (
        ((0, 0), (1.0 - fx) * (1.0 - fy)),
        ((1, 0), fx * (1.0 - fy)),
        ((0, 1), (1.0 - fx) * fy),
        ((1, 1), fx * fy),
    )
    result = None
    for (ox, oy), w in weights:
        if w == 0.0:
            continue
        term = np.roll(image, (iy + oy, ix + ox), axis=(0, 1))
        if w != 1.0:
            term = w * term
        result = term if result is None else result + term
    return result


def shift_field(v: Field, g: GroupVec) -> Field:
    """Discrete group action g.v of a translation vector g."""
    g = np.asarray(g, dtype=float)
    if g.shape != (2,) or not np.all(np.isfinite(g)):
        raise ContractViolation(f"Translation must be a finite 2-vector, got {g!r}")
    shifted = shift_array(v.as_image(), g, v.grid.dx, v.grid.dy)
    return Field(v.grid, shifted.ravel())
