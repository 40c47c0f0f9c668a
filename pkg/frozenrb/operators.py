"""Finite volume Burgers operator, Lie algebra shift operators and their frozen combination.

All operators use a five-point stencil (center plus the four periodic
neighbors), so every output component reads at most ``STENCIL_SIZE`` input
DOFs regardless of the grid size. The same per-cell kernel backs the full
evaluation and the restricted evaluation used online, which keeps the two
consistent component by component.
"""
import logging
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from frozenrb.exceptions import ContractViolation
from frozenrb.grid import IDENTITY, Field, GridSpec, LieAlgebraVec

# Configure logging
logger = logging.getLogger(__name__)

STENCIL_SIZE = 5


class OperatorKind(str, Enum):
    """Which discrete operator a restricted evaluation computes."""

    PLAIN = "plain"
    FROZEN = "frozen"


class BurgersParams(BaseModel):
    """Parameters of the flux f(u) = b * u**mu."""

    model_config = ConfigDict(frozen=True)

    mu: float
    b: tuple[float, float] = (1.0, 1.0)

    @field_validator("mu")
    @classmethod
    def _check_mu(cls, mu: float) -> float:
        if not np.isfinite(mu) or mu < 1.0:
            raise ValueError(f"mu must be finite and >= 1, got {mu}")
        return mu

    @field_validator("b")
    @classmethod
    def _check_b(cls, b: tuple[float, float]) -> tuple[float, float]:
        if not all(np.isfinite(b)):
            raise ValueError("velocity b must be finite")
        return b


def _as_alg(g: LieAlgebraVec | None) -> np.ndarray:
    if g is None:
        return IDENTITY
    g = np.asarray(g, dtype=float)
    if g.shape != (2,) or not np.all(np.isfinite(g)):
        raise ContractViolation(f"Lie algebra element must be a finite 2-vector, got {g!r}")
    return g


def _rusanov_flux(ul: np.ndarray, ur: np.ndarray, b_r: float, g_r: float, mu: float) -> np.ndarray:
    """Local Lax-Friedrichs flux for F(u) = b_r * u**mu - g_r * u across one edge."""
    fl = b_r * ul**mu - g_r * ul
    fr = b_r * ur**mu - g_r * ur
    speed = np.maximum(
        np.abs(b_r * mu * ul ** (mu - 1.0) - g_r),
        np.abs(b_r * mu * ur ** (mu - 1.0) - g_r),
    )
    return 0.5 * (fl + fr) - 0.5 * speed * (ur - ul)


def _cell_divergence(
    uc: np.ndarray,
    uw: np.ndarray,
    ue: np.ndarray,
    us: np.ndarray,
    un: np.ndarray,
    params: BurgersParams,
    g: np.ndarray,
    dx: float,
    dy: float,
) -> np.ndarray:
    """Flux divergence of each cell from its own and its four neighbors' values."""
    uc, uw, ue, us, un = (np.maximum(u, 0.0) for u in (uc, uw, ue, us, un))
    b1, b2 = params.b
    mu = params.mu
    east = _rusanov_flux(uc, ue, b1, g[0], mu)
    west = _rusanov_flux(uw, uc, b1, g[0], mu)
    north = _rusanov_flux(uc, un, b2, g[1], mu)
    south = _rusanov_flux(us, uc, b2, g[1], mu)
    return (east - west) / dx + (north - south) / dy


def divergence_image(image: np.ndarray, params: BurgersParams, g: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Frozen finite volume operator applied to a (ny, nx) image."""
    return _cell_divergence(
        image,
        np.roll(image, 1, axis=1),
        np.roll(image, -1, axis=1),
        np.roll(image, 1, axis=0),
        np.roll(image, -1, axis=0),
        params,
        g,
        dx,
        dy,
    )


def burgers_op(v: Field, p: BurgersParams) -> Field:
    """Discrete Burgers operator: divergence of b * v**mu."""
    return frozen_op(v, p, IDENTITY)


def frozen_op(v: Field, p: BurgersParams, g: LieAlgebraVec) -> Field:
    """Frozen operator: divergence of the combined flux b * v**mu - g * v."""
    grid = v.grid
    out = divergence_image(v.as_image(), p, _as_alg(g), grid.dx, grid.dy)
    return Field(grid, out.ravel())


def shift_image(image: np.ndarray, axis: int, dx: float, dy: float) -> np.ndarray:
    """Central difference -d/dx_axis of a (ny, nx) image (axis 1 is x1, axis 2 is x2)."""
    if axis == 1:
        return -(np.roll(image, -1, axis=1) - np.roll(image, 1, axis=1)) / (2.0 * dx)
    if axis == 2:
        return -(np.roll(image, -1, axis=0) - np.roll(image, 1, axis=0)) / (2.0 * dy)
    raise ContractViolation(f"axis must be 1 or 2, got {axis}")


def shift_op(v: Field, r: int) -> Field:
    """Linear Lie algebra action of the basis vector e_r: -d v / d x_r."""
    grid = v.grid
    return Field(grid, shift_image(v.as_image(), r, grid.dx, grid.dy).ravel())


def stencil_of(i: int, grid: GridSpec) -> list[int]:
    """DOFs read by component ``i`` of every operator: center, west, east, south, north."""
    ci, cj = grid.cell(i)
    return [
        i,
        grid.index(ci - 1, cj),
        grid.index(ci + 1, cj),
        grid.index(ci, cj - 1),
        grid.index(ci, cj + 1),
    ]


def stencil_table(targets: Sequence[int], grid: GridSpec) -> np.ndarray:
    """(len(targets), 5) array of stencil DOFs, one row per target."""
    return np.array([stencil_of(int(t), grid) for t in targets], dtype=np.int64).reshape(-1, STENCIL_SIZE)


def _evaluate_stencils(
    values: np.ndarray,
    kind: OperatorKind,
    p: BurgersParams,
    g: np.ndarray,
    grid: GridSpec,
) -> np.ndarray:
    """Apply the cell kernel to an (n, 5) array of gathered stencil values."""
    alg = g if kind is OperatorKind.FROZEN else IDENTITY
    return _cell_divergence(
        values[:, 0], values[:, 1], values[:, 2], values[:, 3], values[:, 4], p, alg, grid.dx, grid.dy
    )


def restricted_eval(
    op: OperatorKind,
    p: BurgersParams,
    g: LieAlgebraVec | None,
    dof_values: Mapping[int, float],
    targets: Iterable[int],
    grid: GridSpec,
) -> np.ndarray:
    """Target components of the plain or frozen operator, reading only stencil DOFs."""
    op = OperatorKind(op)
    table = stencil_table(list(targets), grid)
    gathered = np.empty(table.shape)
    for pos, dof in np.ndenumerate(table):
        try:
            gathered[pos] = dof_values[int(dof)]
        except KeyError:
            raise ContractViolation(
                f"restricted evaluation of DOF {int(table[pos[0], 0])} needs DOF {int(dof)}, which was not supplied"
            ) from None
    return _evaluate_stencils(gathered, op, p, _as_alg(g), grid)


class RestrictedOperator:
    """Precomputed restricted evaluation at fixed targets from values on fixed source DOFs.

    ``sources`` must be sorted and contain the stencils of all targets. Calls
    take the vector of source values (ordered like ``sources``) and return one
    operator component per target.
    """

    def __init__(self, grid: GridSpec, targets: Sequence[int], sources: Sequence[int]):
        self.grid = grid
        self.targets = np.asarray(targets, dtype=np.int64)
        self.sources = np.asarray(sources, dtype=np.int64)
        table = stencil_table(self.targets, grid)
        if table.size == 0:
            self.local = table
            return
        local = np.searchsorted(self.sources, table)
        local = np.minimum(local, max(len(self.sources) - 1, 0))
        if len(self.sources) == 0 or not np.array_equal(self.sources[local], table):
            missing = sorted(set(table.ravel().tolist()) - set(self.sources.tolist()))
            raise ContractViolation(f"source DOFs do not cover the target stencils; missing {missing[:10]}")
        self.local = local

    @property
    def reads(self) -> int:
        """Number of source values read per evaluation."""
        return int(self.local.size)

    def __call__(self, y: np.ndarray, kind: OperatorKind, p: BurgersParams, g: LieAlgebraVec | None = None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != self.sources.shape:
            raise ContractViolation(f"expected {len(self.sources)} source values, got shape {y.shape}")
        return _evaluate_stencils(y[self.local], OperatorKind(kind), p, _as_alg(g), self.grid)


def wave_speeds(v: Field, p: BurgersParams, g: LieAlgebraVec | None = None) -> np.ndarray:
    """Largest combined wave speed |b_r mu u**(mu-1) - g_r| per axis over the range of v."""
    alg = _as_alg(g)
    lo = max(float(v.values.min()), 0.0)
    hi = max(float(v.values.max()), 0.0)
    ends = np.array([lo, hi])
    return np.array(
        [np.max(np.abs(b_r * p.mu * ends ** (p.mu - 1.0) - g_r)) for b_r, g_r in zip(p.b, alg)]
    )


def max_stable_dt(v: Field, p: BurgersParams, g: LieAlgebraVec | None = None) -> float:
    """CFL bound 1 / (s1/dx + s2/dy) of the explicit Euler scheme; +inf when nothing moves."""
    s1, s2 = wave_speeds(v, p, g)
    rate = s1 / v.grid.dx + s2 / v.grid.dy
    if rate == 0.0:
        return float("inf")
    return 1.0 / rate
