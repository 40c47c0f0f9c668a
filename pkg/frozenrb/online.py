"""Online stage: the fully reduced frozen scheme in its offline/online decomposed form.

Every quantity touched per time step has a size governed by N (basis size),
M (interpolation points) and L (restricted DOFs); nothing scales with the
number of grid cells.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from frozenrb.exceptions import ContractViolation, GridMismatchError, SolverAbort
from frozenrb.freezing import BLOWUP_FACTOR, reconstruct_group, solve_phase_system
from frozenrb.grid import Field, LieAlgebraVec, shift_field
from frozenrb.operators import BurgersParams, OperatorKind, RestrictedOperator, shift_image
from frozenrb.reduction import EIData, ReducedBasis, project

# Configure logging
logger = logging.getLogger(__name__)


@dataclass
class OpCounter:
    """Multiply-add and DOF-read counts accumulated by the reduced stepping."""

    counts: Counter = field(default_factory=Counter)

    def add(self, kind: str, n: int) -> None:
        self.counts[kind] += int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def reset(self) -> None:
        self.counts.clear()


@dataclass(frozen=True)
class OnlineSystem:
    """Precomputed reduced matrices.

    P[n, m]         = (xi_m, psi_n) with the cardinal collateral basis xi
    EV[l, n]        = psi_n at restricted DOF q'_l
    PCL[r, s][n, n'] = (S_r psi_n, S_s psi_n')
    PCR[r][m, n]    = (xi_m, S_r psi_n)
    """

    rb: ReducedBasis
    ei: EIData
    P: np.ndarray
    EV: np.ndarray
    PCL: np.ndarray
    PCR: np.ndarray
    evaluator: RestrictedOperator

    @property
    def N(self) -> int:
        return self.rb.size

    @property
    def M(self) -> int:
        return self.ei.size

    @property
    def L(self) -> int:
        return len(self.ei.q_prime)


@dataclass(frozen=True)
class ReducedState:
    """Reduced shape coefficients c^k and alg^k, the phase condition solved at c^k.

    alg^k drives the step from c^k to c^{k+1}; None means not yet solved.
    """

    c: np.ndarray
    alg: Optional[LieAlgebraVec] = None


@dataclass
class ReducedTrajectory:
    """Coefficients c^0..c^K, Lie algebra elements alg^0..alg^{K-1} and group elements g^0..g^K."""

    coefficients: np.ndarray
    algs: np.ndarray
    gs: np.ndarray
    dt: float
    log_rows: List[tuple] = field(default_factory=list)

    @property
    def states(self) -> List[ReducedState]:
        return [
            ReducedState(c, self.algs[k] if k < len(self.algs) else None)
            for k, c in enumerate(self.coefficients)
        ]


def assemble_online(rb: ReducedBasis, ei: EIData) -> OnlineSystem:
    """Compute all reduced matrices by full-dimensional operator applications (offline)."""
    if rb.grid != ei.grid:
        raise GridMismatchError("reduced basis and interpolation data were built on different grids")
    grid = rb.grid
    area = grid.cell_area
    psi = rb.psi
    xi = ei.cardinal_basis()
    shifted = np.stack(
        [
            np.vstack([shift_image(row.reshape(grid.ny, grid.nx), r, grid.dx, grid.dy).ravel() for row in psi])
            if len(psi)
            else np.zeros((0, grid.size))
            for r in (1, 2)
        ]
    )
    P = area * psi @ xi.T
    EV = psi[:, ei.q_prime].T
    PCL = np.array([[area * shifted[r] @ shifted[s].T for s in range(2)] for r in range(2)])
    PCR = np.array([area * xi @ shifted[r].T for r in range(2)])
    evaluator = RestrictedOperator(grid, ei.q, ei.q_prime)
    logger.info(f"Assembled online system: N={rb.size}, M={ei.size}, L={len(ei.q_prime)}")
    return OnlineSystem(rb, ei, P, EV, PCL, PCR, evaluator)


def _phase_from_restricted(c: np.ndarray, y: np.ndarray, sys: OnlineSystem, p: BurgersParams, counter: Optional[OpCounter]) -> np.ndarray:
    plain = sys.evaluator(y, OperatorKind.PLAIN, p)
    A = np.array([[c @ sys.PCL[r, s] @ c for s in range(2)] for r in range(2)])
    rhs = np.array([-(plain @ sys.PCR[r] @ c) for r in range(2)])
    if counter is not None:
        counter.add("restricted_reads", sys.evaluator.reads)
        counter.add("phase_lhs", sys.PCL.size + 4 * c.size)
        counter.add("phase_rhs", sys.PCR.size + 2 * plain.size)
    alg, degenerate = solve_phase_system(A, rhs)
    if degenerate:
        logger.debug(f"Near-singular reduced phase system; using least-squares solution {alg}")
    return alg


def _restrict(c: np.ndarray, sys: OnlineSystem, counter: Optional[OpCounter]) -> np.ndarray:
    if c.shape != (sys.N,):
        raise ContractViolation(f"expected {sys.N} reduced coefficients, got shape {c.shape}")
    if counter is not None:
        counter.add("restrict", sys.EV.size)
    return sys.EV @ c


def reduced_phase_solve(s: ReducedState, sys: OnlineSystem, p: BurgersParams, counter: Optional[OpCounter] = None) -> LieAlgebraVec:
    """Reduced orthogonality phase condition from the quadratic forms PCL and PCR."""
    c = np.asarray(s.c, dtype=float)
    return _phase_from_restricted(c, _restrict(c, sys, counter), sys, p, counter)


def reduced_step(
    s: ReducedState,
    sys: OnlineSystem,
    p: BurgersParams,
    dt: float,
    counter: Optional[OpCounter] = None,
    step: int = 0,
) -> ReducedState:
    """One reduced frozen step from (c^k, alg^k) to (c^{k+1}, alg^{k+1}).

    alg^k is solved from c^k when ``s.alg`` is None; the returned alg^{k+1}
    is the phase condition solved at c^{k+1}.
    """
    if dt <= 0:
        raise ContractViolation(f"time step must be positive, got {dt}")
    c = np.asarray(s.c, dtype=float)
    alg = s.alg if s.alg is not None else reduced_phase_solve(s, sys, p, counter)
    y = _restrict(c, sys, counter)
    frozen = sys.evaluator(y, OperatorKind.FROZEN, p, alg)
    c_next = c - dt * (sys.P @ frozen)
    if counter is not None:
        counter.add("restricted_reads", sys.evaluator.reads)
        counter.add("update", sys.P.size + c.size)
    if not np.all(np.isfinite(c_next)):
        raise SolverAbort("reduced frozen step produced non-finite coefficients", step=step, diagnostics={"alg": np.asarray(alg).tolist()})
    return ReducedState(c_next, reduced_phase_solve(ReducedState(c_next), sys, p, counter))


def _blowup_check(c: np.ndarray, limit: float, step: int, scheme: str) -> None:
    norm = float(np.linalg.norm(c))
    if not np.isfinite(norm):
        raise SolverAbort(f"reduced {scheme} scheme produced non-finite coefficients", step=step)
    if norm > limit:
        raise SolverAbort(
            f"reduced {scheme} scheme blew up: |c| = {norm:.3e} exceeds {limit:.3e}",
            step=step,
            diagnostics={"norm": norm, "limit": limit},
        )


def _initial(sys: OnlineSystem, u0: Field, T: float, K: int) -> tuple[np.ndarray, float, float]:
    if K < 1 or T <= 0:
        raise ContractViolation(f"need T > 0 and K >= 1, got T={T}, K={K}")
    c0 = project(u0, sys.rb)
    # |c| is the L2 norm of the lifted field; bound it by the detailed blow-up limit
    sup0 = float(np.max(np.abs(u0.values)))
    limit = BLOWUP_FACTOR * max(sup0, 1.0) * np.sqrt(u0.grid.lx * u0.grid.ly)
    return c0, T / K, limit


def solve_reduced(
    p: BurgersParams,
    sys: OnlineSystem,
    u0: Field,
    T: float,
    K: int,
    counter: Optional[OpCounter] = None,
) -> ReducedTrajectory:
    """Reduced frozen trajectory from c^0 = P_N(u0) plus the reconstructed group path."""
    c, dt, limit = _initial(sys, u0, T, K)
    coefficients = [c]
    algs = np.zeros((K, 2))
    log_rows = []
    g = np.zeros(2)
    state = ReducedState(c, reduced_phase_solve(ReducedState(c), sys, p, counter))
    for k in range(K):
        algs[k] = state.alg
        state = reduced_step(state, sys, p, dt, counter, step=k)
        _blowup_check(state.c, limit, k + 1, "frozen")
        g = g + dt * algs[k]
        log_rows.append((k, *algs[k], *g, float(np.linalg.norm(state.c))))
        logger.debug(f"reduced k={k} alg={algs[k]} g={g} |c|={log_rows[-1][-1]:.6e}")
        coefficients.append(state.c)
    return ReducedTrajectory(np.vstack(coefficients), algs, reconstruct_group(algs, dt), dt, log_rows)


def solve_reduced_unfrozen(
    p: BurgersParams,
    sys: OnlineSystem,
    u0: Field,
    T: float,
    K: int,
    counter: Optional[OpCounter] = None,
) -> ReducedTrajectory:
    """Reduced scheme without freezing: c^{k+1} = c^k - dt P L(EV c^k)."""
    c, dt, limit = _initial(sys, u0, T, K)
    coefficients = [c]
    log_rows = []
    for k in range(K):
        y = _restrict(coefficients[-1], sys, counter)
        c_next = coefficients[-1] - dt * (sys.P @ sys.evaluator(y, OperatorKind.PLAIN, p))
        if counter is not None:
            counter.add("restricted_reads", sys.evaluator.reads)
            counter.add("update", sys.P.size + c_next.size)
        _blowup_check(c_next, limit, k + 1, "unfrozen")
        log_rows.append((k, 0.0, 0.0, 0.0, 0.0, float(np.linalg.norm(c_next))))
        coefficients.append(c_next)
    return ReducedTrajectory(np.vstack(coefficients), np.zeros((K, 2)), np.zeros((K + 1, 2)), dt, log_rows)


def lift(s: ReducedState, rb: ReducedBasis) -> Field:
    """Expand reduced coefficients in the basis: sum_n c_n psi_n."""
    c = np.asarray(s.c, dtype=float)
    if c.shape != (rb.size,):
        raise ContractViolation(f"expected {rb.size} coefficients, got shape {c.shape}")
    return Field(rb.grid, c @ rb.psi)


def reconstruct_reduced(traj: ReducedTrajectory, rb: ReducedBasis) -> List[Field]:
    """Reduced approximation in the physical frame: u_N^k = g^k . lift(c^k)."""
    return [shift_field(lift(ReducedState(c), rb), g) for c, g in zip(traj.coefficients, traj.gs)]
