"""Offline stage: snapshot collection, POD, POD-Greedy and empirical operator interpolation."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import scipy.linalg as spla

from frozenrb.exceptions import ContractViolation, GridMismatchError
from frozenrb.freezing import phase_condition_solve, solve_frozen, solve_unfrozen
from frozenrb.grid import Field, GridSpec
from frozenrb.operators import STENCIL_SIZE, BurgersParams, OperatorKind, burgers_op, frozen_op, stencil_of

# Configure logging
logger = logging.getLogger(__name__)

# Relative size below which a greedy error counts as exhausted (roundoff level)
EXHAUSTED_RTOL = 1e-11
# POD drops Gram eigenvalues below this fraction of the largest one
POD_RTOL = 1e-14
# Relative EI selection leaves out operator snapshots below this fraction of the largest sup norm
NEGLIGIBLE_RTOL = 1e-8


@dataclass(frozen=True)
class ReducedBasis:
    """L2-orthonormal reduced basis, one mode per row of ``psi``.

    ``training_errors[n]`` is the worst training projection error with the
    first n modes, as recorded by the greedy that built the basis.
    """

    grid: GridSpec
    psi: np.ndarray
    training_errors: Tuple[float, ...] = ()

    @property
    def size(self) -> int:
        return self.psi.shape[0]

    def truncate(self, n: int) -> "ReducedBasis":
        if not 0 <= n <= self.size:
            raise ContractViolation(f"cannot truncate a basis of size {self.size} to {n}")
        return ReducedBasis(self.grid, self.psi[:n], self.training_errors[: n + 1])

    def fields(self) -> List[Field]:
        return [Field(self.grid, row) for row in self.psi]

    def gram(self) -> np.ndarray:
        return self.grid.cell_area * self.psi @ self.psi.T


@dataclass(frozen=True)
class EIData:
    """Empirical interpolation data: points q, nested collateral basis xi, restricted DOFs q_prime.

    ``interp_matrix[j, m] = xi[m][q[j]]`` is lower triangular with unit
    diagonal. ``errors[m]`` is the worst sup-norm interpolation error of the
    training snapshots with m basis functions, relative to each snapshot's
    own sup norm when the greedy ran with relative selection.
    """

    grid: GridSpec
    q: np.ndarray
    xi: np.ndarray
    interp_matrix: np.ndarray
    q_prime: np.ndarray
    errors: Tuple[float, ...] = ()

    @property
    def size(self) -> int:
        return len(self.q)

    def truncate(self, m: int) -> "EIData":
        if not 0 <= m <= self.size:
            raise ContractViolation(f"cannot truncate interpolation data of size {self.size} to {m}")
        q = self.q[:m]
        return EIData(
            grid=self.grid,
            q=q,
            xi=self.xi[:m],
            interp_matrix=self.interp_matrix[:m, :m],
            q_prime=_stencil_union(q, self.grid),
            errors=self.errors[: m + 1],
        )

    def coefficients(self, values_at_q: np.ndarray) -> np.ndarray:
        """Collateral basis coefficients interpolating the given values at the points q."""
        if self.size == 0:
            return np.zeros(0)
        return spla.solve_triangular(self.interp_matrix, values_at_q, lower=True, unit_diagonal=True)

    def interpolate(self, w: np.ndarray) -> np.ndarray:
        """Interpolant sum_m theta_m xi_m of the vector w, matching w at every q_m."""
        w = np.asarray(w, dtype=float)
        return self.coefficients(w[self.q]) @ self.xi

    def cardinal_basis(self) -> np.ndarray:
        """Collateral basis rotated so that row m is 1 at q_m and 0 at the other points."""
        if self.size == 0:
            return np.zeros((0, self.grid.size))
        return spla.solve_triangular(self.interp_matrix, self.xi, lower=True, trans="T", unit_diagonal=True)


@dataclass
class SnapshotSet:
    """State and operator snapshots with (mu, k, operator tag) provenance per row."""

    grid: GridSpec
    scheme: str
    states: np.ndarray
    state_provenance: List[Tuple[float, int]]
    operators: np.ndarray
    operator_provenance: List[Tuple[float, int, str]]
    algs: Dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def mus(self) -> List[float]:
        return sorted({mu for mu, _ in self.state_provenance})

    def trajectory(self, mu: float) -> np.ndarray:
        rows = [i for i, (m, _) in enumerate(self.state_provenance) if m == mu]
        return self.states[rows]

    def trajectories(self) -> Dict[float, np.ndarray]:
        return {mu: self.trajectory(mu) for mu in self.mus}


def _check_training_mus(training_mus: Sequence[float]) -> List[float]:
    mus = [float(mu) for mu in training_mus]
    if not mus:
        raise ContractViolation("training set is empty")
    if len(set(mus)) != len(mus):
        raise ContractViolation(f"training parameters must be distinct, got {mus}")
    outside = [mu for mu in mus if not 1.0 <= mu <= 2.0]
    if outside:
        raise ContractViolation(f"training parameters must lie in [1, 2], got {outside}")
    return mus


def _frozen_snapshots(args) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    mu, b, u0, T, K = args
    p = BurgersParams(mu=mu, b=b)
    traj = solve_frozen(p, u0, T, K)
    algs = np.vstack([traj.algs, phase_condition_solve(traj.vs[-1], p)])
    plain = np.vstack([burgers_op(v, p).values for v in traj.vs])
    frozen = np.vstack([frozen_op(v, p, alg).values for v, alg in zip(traj.vs, algs)])
    return mu, traj.states(), plain, frozen, traj.algs


def _unfrozen_snapshots(args) -> Tuple[float, np.ndarray, np.ndarray]:
    mu, b, u0, T, K = args
    p = BurgersParams(mu=mu, b=b)
    us = solve_unfrozen(p, u0, T, K)
    return mu, np.vstack([u.values for u in us]), np.vstack([burgers_op(u, p).values for u in us])


def _run_all(func, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, jobs))
    return [func(job) for job in jobs]


def collect_snapshots(
    training_mus: Sequence[float],
    T: float,
    K: int,
    u0: Field,
    b: Tuple[float, float] = (1.0, 1.0),
    workers: int = 1,
) -> SnapshotSet:
    """Run the detailed frozen scheme per training parameter and store its snapshots.

    Each mu contributes K+1 shapes and, for each shape, the plain and the
    frozen operator evaluation (the last frozen one uses the phase condition
    solved at v^K).
    """
    mus = _check_training_mus(training_mus)
    logger.info(f"Collecting frozen snapshots for {len(mus)} parameters (K={K}, H={u0.grid.size})")
    results = _run_all(_frozen_snapshots, [(mu, b, u0, T, K) for mu in mus], workers)
    states, state_prov, ops, op_prov, algs = [], [], [], [], {}
    for mu, vs, plain, frozen, mu_algs in results:
        states.append(vs)
        state_prov.extend((mu, k) for k in range(len(vs)))
        ops.extend([plain, frozen])
        op_prov.extend((mu, k, OperatorKind.PLAIN.value) for k in range(len(plain)))
        op_prov.extend((mu, k, OperatorKind.FROZEN.value) for k in range(len(frozen)))
        algs[mu] = mu_algs
    return SnapshotSet(u0.grid, "frozen", np.vstack(states), state_prov, np.vstack(ops), op_prov, algs)


def collect_unfrozen_snapshots(
    training_mus: Sequence[float],
    T: float,
    K: int,
    u0: Field,
    b: Tuple[float, float] = (1.0, 1.0),
    workers: int = 1,
) -> SnapshotSet:
    """Snapshots of the scheme without freezing: states u^k and plain operator evaluations."""
    mus = _check_training_mus(training_mus)
    logger.info(f"Collecting unfrozen snapshots for {len(mus)} parameters (K={K}, H={u0.grid.size})")
    results = _run_all(_unfrozen_snapshots, [(mu, b, u0, T, K) for mu in mus], workers)
    states, state_prov, ops, op_prov = [], [], [], []
    for mu, us, plain in results:
        states.append(us)
        state_prov.extend((mu, k) for k in range(len(us)))
        ops.append(plain)
        op_prov.extend((mu, k, OperatorKind.PLAIN.value) for k in range(len(plain)))
    return SnapshotSet(u0.grid, "unfrozen", np.vstack(states), state_prov, np.vstack(ops), op_prov)


def _fix_sign(mode: np.ndarray) -> np.ndarray:
    """Make the first entry of significant size positive."""
    scale = np.max(np.abs(mode))
    if scale == 0:
        return mode
    first = int(np.flatnonzero(np.abs(mode) > 1e-12 * scale)[0])
    return -mode if mode[first] < 0 else mode


def pod_array(X: np.ndarray, n: int, cell_area: float) -> Tuple[np.ndarray, np.ndarray]:
    """Method of snapshots: n dominant L2-orthonormal modes of the rows of X and their singular values."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if n > len(X):
        raise ContractViolation(f"requested {n} modes from {len(X)} snapshots")
    if X.size == 0 or n == 0:
        return np.zeros((0, X.shape[-1])), np.zeros(0)
    gram = cell_area * X @ X.T
    evals, evecs = spla.eigh(gram)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    if evals[0] <= 0:
        return np.zeros((0, X.shape[1])), np.zeros(0)
    keep = min(n, int(np.count_nonzero(evals > POD_RTOL * evals[0])))
    svals = np.sqrt(evals[:keep])
    modes = (evecs[:, :keep].T @ X) / svals[:, np.newaxis]
    modes = np.vstack([_fix_sign(mode) for mode in modes])
    return modes, svals


def pod(snapshots: Sequence[Field], n: int) -> List[Field]:
    """n dominant L2-orthonormal POD modes of a set of fields."""
    if not snapshots:
        return []
    grid = snapshots[0].grid
    if any(s.grid != grid for s in snapshots):
        raise GridMismatchError("POD snapshots must share one grid")
    modes, _ = pod_array(np.vstack([s.values for s in snapshots]), n, grid.cell_area)
    return [Field(grid, mode) for mode in modes]


def _orthonormalize(mode: np.ndarray, basis: np.ndarray, cell_area: float) -> np.ndarray | None:
    """Gram-Schmidt (applied twice) of mode against the rows of basis; None if nothing is left."""
    norm0 = np.sqrt(cell_area * mode @ mode)
    for _ in range(2):
        if len(basis):
            mode = mode - (cell_area * basis @ mode) @ basis
    norm = np.sqrt(cell_area * mode @ mode)
    if norm <= 1e-10 * norm0:
        return None
    return mode / norm


def projection_errors(X: np.ndarray, psi: np.ndarray, cell_area: float) -> np.ndarray:
    """Residual rows X - Pi_N X of the L2-orthogonal projection onto span(psi)."""
    if len(psi) == 0:
        return X.copy()
    return X - (cell_area * X @ psi.T) @ psi


def _trajectory_error(X: np.ndarray, psi: np.ndarray, cell_area: float) -> float:
    residual = projection_errors(X, psi, cell_area)
    return float(np.sqrt(cell_area * np.max(np.sum(residual**2, axis=1))))


def pod_greedy(snaps: SnapshotSet, N_max: int, tol: float = 0.0) -> ReducedBasis:
    """POD-Greedy over the training trajectories, one mode per iteration."""
    if N_max < 1:
        raise ContractViolation(f"N_max must be at least 1, got {N_max}")
    grid = snaps.grid
    area = grid.cell_area
    trajectories = snaps.trajectories()
    mus = list(trajectories)
    scale = max(float(np.sqrt(area * np.max(np.sum(X**2, axis=1)))) for X in trajectories.values())
    psi = np.zeros((0, grid.size))
    errors: List[float] = []
    while True:
        per_mu = [_trajectory_error(trajectories[mu], psi, area) for mu in mus]
        worst = int(np.argmax(per_mu))
        worst_error = per_mu[worst]
        errors.append(worst_error)
        logger.info(f"POD-Greedy ({snaps.scheme}) N={len(psi)}: worst error {worst_error:.4e} at mu={mus[worst]}")
        if len(errors) > 3 and errors[-1] >= errors[-4]:
            logger.warning(f"POD-Greedy ({snaps.scheme}) stagnates at N={len(psi)}: error {worst_error:.4e}")
        if len(psi) >= N_max or worst_error <= tol or worst_error <= EXHAUSTED_RTOL * scale:
            break
        residual = projection_errors(trajectories[mus[worst]], psi, area)
        modes, _ = pod_array(residual, 1, area)
        mode = _orthonormalize(modes[0], psi, area) if len(modes) else None
        if mode is None:
            logger.warning(f"POD-Greedy ({snaps.scheme}) found no new direction at N={len(psi)}")
            break
        psi = np.vstack([psi, mode])
    return ReducedBasis(grid, psi, tuple(errors))


def _stencil_union(q: Sequence[int], grid: GridSpec) -> np.ndarray:
    dofs = {dof for qm in q for dof in stencil_of(int(qm), grid)}
    return np.array(sorted(dofs), dtype=np.int64)


def _selection_rows(W: np.ndarray, relative: bool) -> np.ndarray:
    """Rows the greedy selects on: W itself, or each row scaled to unit sup norm."""
    if not relative or not len(W):
        return W
    norms = np.max(np.abs(W), axis=1)
    keep = norms > NEGLIGIBLE_RTOL * float(np.max(norms))
    if not np.all(keep):
        logger.debug(f"EI-Greedy: {int(np.count_nonzero(~keep))} negligible operator snapshots left out")
    return W[keep] / norms[keep, np.newaxis]


def ei_greedy_array(W: np.ndarray, grid: GridSpec, M_max: int, tol: float = 0.0, relative: bool = False) -> EIData:
    """EI-Greedy on the rows of W (operator snapshots), sup-norm error, lowest index on ties.

    With ``relative`` every snapshot enters with unit sup norm, so selection
    and ``tol`` use each snapshot's error relative to its own size. The
    interpolant is linear, so the interpolation data still reproduce every
    snapshot they were built from.
    """
    if M_max < 1:
        raise ContractViolation(f"M_max must be at least 1, got {M_max}")
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] != grid.size:
        raise ContractViolation(f"operator snapshots must have shape (n, {grid.size}), got {W.shape}")
    residual = np.array(_selection_rows(W, relative), dtype=float, copy=True)
    scale = float(np.max(np.abs(residual))) if residual.size else 0.0
    floor = 1e3 * np.finfo(float).eps * scale
    q: List[int] = []
    xi: List[np.ndarray] = []
    errors: List[float] = []
    while True:
        sup = np.max(np.abs(residual), axis=1) if len(residual) else np.zeros(1)
        worst = int(np.argmax(sup))
        error = float(sup[worst])
        errors.append(error)
        if len(q) >= M_max or error <= tol or error <= floor:
            break
        r = residual[worst].copy()
        qm = int(np.argmax(np.abs(r)))
        new_xi = r / r[qm]
        residual -= np.outer(residual[:, qm], new_xi)
        q.append(qm)
        xi.append(new_xi)
        logger.debug(f"EI-Greedy M={len(q)}: point {qm} from snapshot {worst}, residual {error:.4e}")
    if len(q) < M_max:
        logger.info(f"EI-Greedy stopped early at M={len(q)} (residual {errors[-1]:.3e})")
    q_arr = np.array(q, dtype=np.int64)
    xi_arr = np.vstack(xi) if xi else np.zeros((0, grid.size))
    interp = xi_arr[:, q_arr].T if len(q) else np.zeros((0, 0))
    q_prime = _stencil_union(q_arr, grid)
    kind = "relative sup error" if relative else "sup error"
    logger.info(f"EI-Greedy: M={len(q)}, {kind} {errors[-1]:.4e}, L={len(q_prime)} restricted DOFs")
    return EIData(grid, q_arr, xi_arr, np.ascontiguousarray(interp), q_prime, tuple(errors))


def ei_greedy(op_snaps: Sequence[Field], M_max: int, tol: float = 0.0, relative: bool = False) -> EIData:
    """Empirical operator interpolation data for a list of operator snapshots."""
    if not op_snaps:
        raise ContractViolation("no operator snapshots given")
    grid = op_snaps[0].grid
    if any(s.grid != grid for s in op_snaps):
        raise GridMismatchError("operator snapshots must share one grid")
    return ei_greedy_array(np.vstack([s.values for s in op_snaps]), grid, M_max, tol, relative)


def restricted_dofs(ei: EIData, grid: GridSpec) -> np.ndarray:
    """Sorted union of the stencils of all interpolation points; at most 5M entries."""
    if ei.grid != grid:
        raise GridMismatchError("interpolation data built on a different grid")
    if len(np.unique(ei.q)) != ei.size:
        raise ContractViolation(f"interpolation points must be distinct, got {ei.q.tolist()}")
    q_prime = _stencil_union(ei.q, grid)
    if len(q_prime) > STENCIL_SIZE * ei.size:
        raise ContractViolation(f"{len(q_prime)} restricted DOFs exceed {STENCIL_SIZE} per interpolation point (M={ei.size})")
    return q_prime


def project(v: Field, rb: ReducedBasis) -> np.ndarray:
    """L2-orthogonal projection coefficients c_n = (v, psi_n)."""
    if v.grid != rb.grid:
        raise GridMismatchError("field and reduced basis live on different grids")
    return rb.grid.cell_area * rb.psi @ v.values
