"""Study driver: detailed runs, offline stage, single reduced runs and the basis-size sweep."""
import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from frozenrb.config import StudyConfig, build_config, settings
from frozenrb.exceptions import FrozenRBError, SolverAbort
from frozenrb.freezing import reconstruct_solution, solve_frozen, solve_unfrozen
from frozenrb.grid import Field, project_initial
from frozenrb.online import (
    OnlineSystem,
    ReducedState,
    ReducedTrajectory,
    assemble_online,
    lift,
    reconstruct_reduced,
    solve_reduced,
    solve_reduced_unfrozen,
)
from frozenrb.operators import BurgersParams
from frozenrb.reduction import collect_snapshots, collect_unfrozen_snapshots, ei_greedy_array, pod_greedy
from frozenrb.schemas import ErrorRecord, Scheme, TrajectoryManifest
from frozenrb.services.model_store import ModelStore
from frozenrb.utils.field_io import save_trajectory
from frozenrb.utils.plotting import render_error_plot, render_field_column, render_field_svg

# Configure logging
logger = logging.getLogger(__name__)

STUDY_CSV = "study.csv"
STEPS_CSV = "study_steps.csv"
ERROR_PLOT = "error_plot.svg"
# Study error per (scheme, N, mu): max over k of the L2 distance between the lifted c^k and the detailed state at step k
ERROR_METRIC = "max over time steps of the L2 error against the scheme's own detailed trajectory"


def initial_datum(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """u0(x1, x2) = (1 + sin(2 pi x1) sin(2 pi x2)) / 2."""
    return 0.5 * (1.0 + np.sin(2.0 * np.pi * x1) * np.sin(2.0 * np.pi * x2))


def output_frames(steps: int) -> List[int]:
    """Frames persisted by detailed and online runs: start, middle and end."""
    return sorted({0, steps // 2, steps})


def step_errors(detailed: np.ndarray, coefficients: np.ndarray, psi: np.ndarray, cell_area: float) -> np.ndarray:
    """L2 error per time step between detailed states and lifted reduced coefficients."""
    diff = detailed - coefficients @ psi
    return np.sqrt(cell_area * np.sum(diff**2, axis=1))


# Per-process state of the study workers (set once by the pool initializer)
_WORKER_STATE: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER_STATE.clear()
    _WORKER_STATE.update(state)


def _run_reduced(scheme: Scheme, p: BurgersParams, sys: OnlineSystem, u0: Field, config: StudyConfig) -> ReducedTrajectory:
    if scheme is Scheme.FROZEN:
        return solve_reduced(p, sys, u0, config.t_end, config.steps)
    return solve_reduced_unfrozen(p, sys, u0, config.t_end, config.steps)


def _evaluate_parameter(mu: float) -> Tuple[float, Dict[Tuple[Scheme, int], np.ndarray], Dict[Tuple[Scheme, int], str]]:
    """Per-step errors of every (scheme, N) system for one test parameter."""
    config: StudyConfig = _WORKER_STATE["config"]
    systems: Dict[Tuple[Scheme, int], OnlineSystem] = _WORKER_STATE["systems"]
    u0: Field = _WORKER_STATE["u0"]
    p = BurgersParams(mu=mu, b=config.b)
    detailed = {
        Scheme.FROZEN: solve_frozen(p, u0, config.t_end, config.steps).states(),
        Scheme.UNFROZEN: np.vstack([u.values for u in solve_unfrozen(p, u0, config.t_end, config.steps)]),
    }
    errors: Dict[Tuple[Scheme, int], np.ndarray] = {}
    notes: Dict[Tuple[Scheme, int], str] = {}
    for (scheme, n), sys in systems.items():
        try:
            traj = _run_reduced(scheme, p, sys, u0, config)
        except SolverAbort as e:
            logger.warning(f"reduced {scheme.value} run N={n} mu={mu:.4f} aborted: {str(e)}")
            errors[(scheme, n)] = np.full(config.steps + 1, np.inf)
            notes[(scheme, n)] = f"aborted at step {e.step}"
            continue
        errors[(scheme, n)] = step_errors(detailed[scheme], traj.coefficients, sys.rb.psi, u0.grid.cell_area)
    return mu, errors, notes


class StudyService:
    """Runs the detailed, offline, online and study stages for one configuration."""

    def __init__(self, config: StudyConfig, workers: Optional[int] = None):
        self.config = config
        self.workers = workers if workers is not None else settings.workers
        self.grid = config.grid

    def initial_field(self) -> Field:
        return project_initial(self.grid, initial_datum)

    def params(self, mu: float) -> BurgersParams:
        return BurgersParams(mu=mu, b=self.config.b)

    def test_parameters(self) -> np.ndarray:
        """Seeded uniform test parameters in [mu_min, mu_max]."""
        rng = np.random.default_rng(self.config.seed)
        return rng.uniform(self.config.mu_min, self.config.mu_max, self.config.test_count)

    # ==== Detailed runs ======================================================

    def run_detailed(self, mu: float, out_dir: Path) -> Dict[str, Path]:
        """Frozen, unfrozen and reconstructed detailed trajectories, persisted at selected frames."""
        config = self.config
        p = self.params(mu)
        u0 = self.initial_field()
        logger.info(f"Detailed runs for mu={mu} on {config.nx}x{config.ny}, K={config.steps}")
        try:
            traj = solve_frozen(p, u0, config.t_end, config.steps)
            unfrozen = solve_unfrozen(p, u0, config.t_end, config.steps)
        except SolverAbort as e:
            logger.error(f"Detailed solver aborted for mu={mu}: {str(e)} {e.diagnostics}")
            raise
        reconstructed = reconstruct_solution(traj)
        frames = output_frames(config.steps)
        base = dict(mu=mu, steps=config.steps, dt=traj.dt, nx=config.nx, ny=config.ny, lx=config.lx, ly=config.ly)
        out_dir = Path(out_dir)
        paths = {
            "frozen": save_trajectory(
                out_dir / "frozen",
                traj.vs,
                TrajectoryManifest(scheme="frozen", algs=traj.algs.tolist(), gs=traj.gs.tolist(), **base),
                frames,
            ),
            "unfrozen": save_trajectory(out_dir / "unfrozen", unfrozen, TrajectoryManifest(scheme="unfrozen", **base), frames),
            "reconstructed": save_trajectory(
                out_dir / "reconstructed",
                reconstructed,
                TrajectoryManifest(scheme="reconstructed", gs=traj.gs.tolist(), **base),
                frames,
            ),
        }
        paths["initial_svg"] = render_field_svg(u0, out_dir / "initial.svg", title=f"u0, mu={mu:g}")
        times = [f"t={k * traj.dt:.3f}" for k in frames]
        paths["unfrozen_svg"] = render_field_column([unfrozen[k] for k in frames], [f"u, {t}" for t in times], out_dir / "unfrozen.svg")
        paths["frozen_svg"] = render_field_column([traj.vs[k] for k in frames], [f"v, {t}" for t in times], out_dir / "frozen.svg")
        logger.info(f"Final group element g^K = {traj.gs[-1]}")
        return paths

    # ==== Offline stage ======================================================

    def run_offline(self, model_dir: Path) -> Path:
        """Snapshots, POD-Greedy and EI-Greedy for both schemes, persisted to ``model_dir``."""
        config = self.config
        u0 = self.initial_field()
        n_max, m_max = config.n_max, config.m_max
        relative = config.ei_selection == "relative"
        logger.info(f"Offline stage: training {list(config.training_mus)}, N_max={n_max}, M_max={m_max}, EI selection {config.ei_selection}")

        frozen_snaps = collect_snapshots(config.training_mus, config.t_end, config.steps, u0, config.b, self.workers)
        frozen_rb = pod_greedy(frozen_snaps, n_max, config.pod_tol)
        frozen_ei = ei_greedy_array(frozen_snaps.operators, self.grid, m_max, config.ei_tol, relative)
        del frozen_snaps

        unfrozen_snaps = collect_unfrozen_snapshots(config.training_mus, config.t_end, config.steps, u0, config.b, self.workers)
        unfrozen_rb = pod_greedy(unfrozen_snaps, n_max, config.pod_tol)
        unfrozen_ei = ei_greedy_array(unfrozen_snaps.operators, self.grid, m_max, config.ei_tol, relative)
        del unfrozen_snaps

        for scheme, rb in ((Scheme.FROZEN, frozen_rb), (Scheme.UNFROZEN, unfrozen_rb)):
            errors = np.array(rb.training_errors)
            if np.any(np.diff(errors) > 0):
                logger.warning(f"{scheme.value} POD-Greedy training error is not monotone: {errors.tolist()}")
            logger.info(f"{scheme.value} basis: N={rb.size}, final training error {errors[-1]:.4e}")

        ModelStore(model_dir).save(
            config,
            {Scheme.FROZEN: frozen_rb, Scheme.UNFROZEN: unfrozen_rb},
            {Scheme.FROZEN: frozen_ei, Scheme.UNFROZEN: unfrozen_ei},
        )
        return Path(model_dir)

    # ==== Online stage =======================================================

    def _systems(self, store: ModelStore, sizes: List[int]) -> Tuple[Dict[Tuple[Scheme, int], OnlineSystem], List[ErrorRecord]]:
        """Online systems for every scheme and basis size; records for sizes the model cannot provide."""
        systems: Dict[Tuple[Scheme, int], OnlineSystem] = {}
        missing: List[ErrorRecord] = []
        for scheme in Scheme:
            rb, ei = store.load(scheme)
            for n in sizes:
                m = self.config.interpolation_points(n)
                if n > rb.size or m > ei.size:
                    note = f"model provides N<={rb.size}, M<={ei.size}"
                    logger.warning(f"Skipping {scheme.value} N={n}, M={m}: {note}")
                    missing.append(ErrorRecord(scheme=scheme, N=n, M=m, note=note))
                    continue
                systems[(scheme, n)] = assemble_online(rb.truncate(n), ei.truncate(m))
        return systems, missing

    def run_online(
        self,
        model_dir: Path,
        mu: float,
        n: int,
        m: Optional[int],
        out_dir: Path,
        scheme: Scheme = Scheme.FROZEN,
    ) -> Dict[str, float]:
        """One reduced run of either scheme: per-step log, frames and error against its detailed run."""
        config = self.config
        store = ModelStore(model_dir)
        rb, ei = store.load(scheme)
        m = m if m is not None else config.interpolation_points(n)
        if n > rb.size or m > ei.size:
            raise FrozenRBError(f"{scheme.value} model provides N<={rb.size}, M<={ei.size}; requested N={n}, M={m}")
        sys = assemble_online(rb.truncate(n), ei.truncate(m))
        p = self.params(mu)
        u0 = self.initial_field()
        traj = _run_reduced(scheme, p, sys, u0, config)
        if scheme is Scheme.FROZEN:
            detailed = solve_frozen(p, u0, config.t_end, config.steps).states()
        else:
            detailed = np.vstack([u.values for u in solve_unfrozen(p, u0, config.t_end, config.steps)])
        errors = step_errors(detailed, traj.coefficients, sys.rb.psi, self.grid.cell_area)

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "online_steps.txt"
        with open(log_path, "w", encoding="utf-8") as f:
            f.write("# k alg_1 alg_2 g_1 g_2 norm_c\n")
            for row in traj.log_rows:
                f.write(" ".join(f"{value:.10g}" for value in row) + "\n")
        frames = output_frames(config.steps)
        shapes = [lift(ReducedState(c), sys.rb) for c in traj.coefficients]
        name = f"reduced_{scheme.value}"
        base = dict(mu=mu, steps=config.steps, dt=traj.dt, nx=config.nx, ny=config.ny, lx=config.lx, ly=config.ly)
        save_trajectory(
            out_dir / name,
            shapes,
            TrajectoryManifest(scheme=name, algs=traj.algs.tolist(), gs=traj.gs.tolist(), **base),
            frames,
        )
        times = [f"t={k * traj.dt:.3f}" for k in frames]
        label = "v_N" if scheme is Scheme.FROZEN else "u_N"
        render_field_column([shapes[k] for k in frames], [f"{label}, {t}" for t in times], out_dir / f"{name}.svg")
        if scheme is Scheme.FROZEN:
            physical = reconstruct_reduced(traj, sys.rb)
            render_field_column([physical[k] for k in frames], [f"g.v_N, {t}" for t in times], out_dir / "reduced_reconstructed.svg")
        summary = {"N": n, "M": m, "L": sys.L, "max_error": float(np.max(errors)), "final_error": float(errors[-1])}
        logger.info(f"Online {scheme.value} run mu={mu}, N={n}, M={m}, L={sys.L}: max error {summary['max_error']:.4e}")
        return summary

    # ==== Parameter study ====================================================

    def run_study(self, model_dir: Path, out_dir: Path) -> List[ErrorRecord]:
        """Sweep the basis sizes over seeded random parameters; write CSV tables and the SVG plot."""
        config = self.config
        store = ModelStore(model_dir)
        systems, records = self._systems(store, list(config.n_sweep))
        mus = self.test_parameters()
        logger.info(f"Study: {len(mus)} test parameters, {len(systems)} reduced systems")

        state = {"config": config, "systems": systems, "u0": self.initial_field()}
        if self.workers > 1:
            with ProcessPoolExecutor(max_workers=self.workers, initializer=_init_worker, initargs=(state,)) as pool:
                results = list(pool.map(_evaluate_parameter, mus.tolist()))
        else:
            _init_worker(state)
            results = [_evaluate_parameter(mu) for mu in mus.tolist()]

        by_key: Dict[Tuple[Scheme, int], ErrorRecord] = {}
        for scheme, n in systems:
            by_key[(scheme, n)] = ErrorRecord(scheme=scheme, N=n, M=systems[(scheme, n)].M)
        step_rows = []
        for mu, errors, notes in results:
            for key, per_step in errors.items():
                record = by_key[key]
                record.errors[mu] = float(np.max(per_step))
                if key in notes:
                    record.note = "; ".join(filter(None, [record.note, f"mu={mu:.6f} {notes[key]}"]))
                step_rows.extend(
                    {"scheme": key[0].value, "N": key[1], "M": record.M, "mu": f"{mu:.17g}", "k": k, "error": f"{e:.17g}"}
                    for k, e in enumerate(per_step)
                )
        records.extend(record.aggregate() for record in by_key.values())
        records.sort(key=lambda r: (r.scheme.value, r.N))
        for record in records:
            if record.max_error is not None:
                logger.info(f"{record.scheme.value:>8} N={record.N:3d} M={record.M:3d}: max error {record.max_error:.4e}")

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self._write_study_csv(out_dir / STUDY_CSV, records)
        with (out_dir / STEPS_CSV).open("w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["scheme", "N", "M", "mu", "k", "error"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(step_rows)
        render_error_plot(
            [r for r in records if r.max_error is not None and np.isfinite(r.max_error)],
            out_dir / ERROR_PLOT,
            title=f"{config.nx}x{config.ny}, {len(mus)} test parameters",
        )
        return records

    def _write_study_csv(self, path: Path, records: List[ErrorRecord]) -> None:
        fieldnames = ["scheme", "N", "M", "max_error", "worst_mu", "test_count", "note"]
        with path.open("w", encoding="utf-8", newline="") as f:
            f.write(f"# error metric: {ERROR_METRIC}\n")
            f.write(f"# seed: {self.config.seed}\n")
            writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            for record in records:
                worst = max(record.errors, key=record.errors.get) if record.errors else None
                writer.writerow(
                    {
                        "scheme": record.scheme.value,
                        "N": record.N,
                        "M": record.M,
                        "max_error": "" if record.max_error is None else f"{record.max_error:.17g}",
                        "worst_mu": "" if worst is None else f"{worst:.17g}",
                        "test_count": len(record.errors),
                        "note": record.note,
                    }
                )


# Global instance
_study_service: Optional[StudyService] = None


def get_study_service(config: Optional[StudyConfig] = None, workers: Optional[int] = None) -> StudyService:
    """Get or create the study service; passing a config replaces the current instance."""
    global _study_service
    if config is not None or _study_service is None:
        if config is None:
            config = build_config(settings.default_preset)
        _study_service = StudyService(config, workers)
    return _study_service
