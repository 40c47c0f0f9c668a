"""Detailed frozen scheme: explicit Euler for the shape, orthogonality phase condition, reconstruction."""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as spla

from frozenrb.exceptions import ContractViolation, SolverAbort
from frozenrb.grid import IDENTITY, Field, LieAlgebraVec, shift_field
from frozenrb.operators import BurgersParams, divergence_image, max_stable_dt, shift_image

# Configure logging
logger = logging.getLogger(__name__)

# det(A) below this fraction of (trace(A)/2)**2 counts as a singular phase system
SINGULAR_DET_RATIO = 1e-12
# v blows up once its sup norm exceeds this multiple of the initial sup norm
BLOWUP_FACTOR = 1e3

PhaseSolver = Callable[[Field, BurgersParams], LieAlgebraVec]


def solve_phase_system(A: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve the 2x2 phase system A g = c.

    Returns the solution and whether the near-singular (minimum-norm least
    squares) path was taken. Shared by the detailed and the reduced solver.
    """
    trace = float(np.trace(A))
    det = float(np.linalg.det(A))
    if trace <= 0.0 or det < SINGULAR_DET_RATIO * trace**2 / 4.0:
        solution, *_ = spla.lstsq(A, c, cond=1e-6)
        return np.asarray(solution, dtype=float), True
    return spla.solve(A, c, assume_a="sym"), False


def phase_system(v: Field, p: BurgersParams) -> tuple[np.ndarray, np.ndarray]:
    """Gram matrix of the shifted shapes and right-hand side of the orthogonality condition."""
    grid = v.grid
    image = v.as_image()
    shifts = [shift_image(image, r, grid.dx, grid.dy).ravel() for r in (1, 2)]
    operator = divergence_image(image, p, IDENTITY, grid.dx, grid.dy).ravel()
    A = np.array([[grid.cell_area * np.dot(sr, ss) for ss in shifts] for sr in shifts])
    c = np.array([-grid.cell_area * np.dot(operator, sr) for sr in shifts])
    return A, c


def _phase_solution(v: Field, p: BurgersParams) -> tuple[np.ndarray, bool]:
    A, c = phase_system(v, p)
    alg, degenerate = solve_phase_system(A, c)
    if degenerate:
        logger.debug(f"Near-singular phase system (trace={np.trace(A):.3e}); using least-squares solution {alg}")
    return alg, degenerate


def phase_condition_solve(v: Field, p: BurgersParams) -> LieAlgebraVec:
    """Lie algebra element making dv/dt orthogonal to the shifts of v."""
    alg, _ = _phase_solution(v, p)
    return alg


def _euler_update(v: Field, p: BurgersParams, dt: float, alg: np.ndarray) -> np.ndarray:
    grid = v.grid
    return v.values - dt * divergence_image(v.as_image(), p, alg, grid.dx, grid.dy).ravel()


def frozen_step(v: Field, p: BurgersParams, dt: float, step: int = 0) -> tuple[Field, LieAlgebraVec]:
    """One explicit Euler step of the frozen system; ``step`` only labels abort messages."""
    if dt <= 0:
        raise ContractViolation(f"time step must be positive, got {dt}")
    alg = phase_condition_solve(v, p)
    v_next = _euler_update(v, p, dt, alg)
    if not np.all(np.isfinite(v_next)):
        raise SolverAbort("frozen step produced non-finite values", step=step, diagnostics={"alg": alg.tolist()})
    return Field(v.grid, v_next), alg


@dataclass
class FrozenTrajectory:
    """Shapes v^0..v^K, Lie algebra elements g^0..g^{K-1} and group elements g^0..g^K."""

    vs: List[Field]
    algs: np.ndarray
    gs: np.ndarray
    dt: float
    params: BurgersParams
    degenerate_steps: List[int] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.vs) - 1

    def states(self) -> np.ndarray:
        """Shapes stacked as a (K+1, H) array."""
        return np.vstack([v.values for v in self.vs])


def reconstruct_group(algs: np.ndarray, dt: float) -> np.ndarray:
    """Integrate the reconstruction equation dg/dt = g.alg; for R^2 this is a running sum."""
    if dt <= 0:
        raise ContractViolation(f"time step must be positive, got {dt}")
    algs = np.asarray(algs, dtype=float).reshape(-1, 2)
    gs = np.zeros((len(algs) + 1, 2))
    for k, alg in enumerate(algs):
        gs[k + 1] = gs[k] + dt * alg
    return gs


def _check_state(values: np.ndarray, step: int, limit: float, scheme: str) -> None:
    if not np.all(np.isfinite(values)):
        raise SolverAbort(f"{scheme} scheme produced non-finite values", step=step)
    sup = float(np.max(np.abs(values)))
    if sup > limit:
        raise SolverAbort(
            f"{scheme} scheme blew up: |v|_inf = {sup:.3e} exceeds {limit:.3e}",
            step=step,
            diagnostics={"sup_norm": sup, "limit": limit},
        )


def _blowup_limit(u0: Field) -> float:
    sup0 = float(np.max(np.abs(u0.values)))
    return BLOWUP_FACTOR * (sup0 if sup0 > 0 else 1.0)


def _time_step(T: float, K: int) -> float:
    if K < 1:
        raise ContractViolation(f"need at least one time step, got K={K}")
    if T <= 0:
        raise ContractViolation(f"final time must be positive, got T={T}")
    return T / K


class _CflMonitor:
    """Counts steps whose time step exceeds the CFL bound and warns on the first one."""

    def __init__(self, dt: float, scheme: str, mu: float):
        self.dt = dt
        self.scheme = scheme
        self.mu = mu
        self.violations = 0

    def check(self, v: Field, p: BurgersParams, alg: Optional[LieAlgebraVec], step: int) -> None:
        bound = max_stable_dt(v, p, alg)
        if self.dt > bound:
            if self.violations == 0:
                logger.warning(
                    f"CFL violated in {self.scheme} run (mu={self.mu}) at step {step}: dt={self.dt:.4g} > bound {bound:.4g}"
                )
            self.violations += 1
        elif step == 0:
            logger.info(f"{self.scheme} run mu={self.mu}: dt={self.dt:.4g}, CFL bound {bound:.4g} (margin {bound / self.dt:.2f}x)")

    def report(self) -> None:
        if self.violations:
            logger.warning(f"{self.scheme} run mu={self.mu}: CFL violated in {self.violations} steps")


def solve_frozen(
    p: BurgersParams,
    u0: Field,
    T: float,
    K: int,
    phase_condition: Optional[PhaseSolver] = None,
) -> FrozenTrajectory:
    """Run the detailed frozen scheme for K steps of size T/K from v^0 = u0.

    ``phase_condition`` replaces the orthogonality solve when given (used to
    pin the Lie algebra component, e.g. to zero).
    """
    dt = _time_step(T, K)
    limit = _blowup_limit(u0)
    monitor = _CflMonitor(dt, "frozen", p.mu)
    vs = [u0]
    algs = np.zeros((K, 2))
    degenerate_steps: List[int] = []
    for k in range(K):
        v = vs[-1]
        if phase_condition is None:
            alg, degenerate = _phase_solution(v, p)
            if degenerate:
                degenerate_steps.append(k)
        else:
            alg = np.asarray(phase_condition(v, p), dtype=float)
        monitor.check(v, p, alg, k)
        v_next = _euler_update(v, p, dt, alg)
        _check_state(v_next, k + 1, limit, "frozen")
        vs.append(Field(u0.grid, v_next))
        algs[k] = alg
    monitor.report()
    if degenerate_steps:
        logger.warning(f"frozen run mu={p.mu}: near-singular phase system in {len(degenerate_steps)} steps")
    return FrozenTrajectory(
        vs=vs,
        algs=algs,
        gs=reconstruct_group(algs, dt),
        dt=dt,
        params=p,
        degenerate_steps=degenerate_steps,
    )


def solve_unfrozen(p: BurgersParams, u0: Field, T: float, K: int) -> List[Field]:
    """Run the same explicit Euler scheme without freezing: u^{k+1} = u^k - dt L(u^k)."""
    dt = _time_step(T, K)
    limit = _blowup_limit(u0)
    monitor = _CflMonitor(dt, "unfrozen", p.mu)
    us = [u0]
    for k in range(K):
        u = us[-1]
        monitor.check(u, p, None, k)
        u_next = _euler_update(u, p, dt, IDENTITY)
        _check_state(u_next, k + 1, limit, "unfrozen")
        us.append(Field(u0.grid, u_next))
    monitor.report()
    return us


def reconstruct_solution(traj: FrozenTrajectory) -> List[Field]:
    """Map the shapes back to the physical frame: u^k = g^k . v^k."""
    return [shift_field(v, g) for v, g in zip(traj.vs, traj.gs)]
