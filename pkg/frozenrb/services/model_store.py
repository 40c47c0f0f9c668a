"""Persistence of offline artifacts (reduced bases and interpolation data) with content hashes."""
import csv
import hashlib
import logging
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from frozenrb.config import StudyConfig
from frozenrb.exceptions import ArtifactError, ContractViolation
from frozenrb.reduction import EIData, ReducedBasis, restricted_dofs
from frozenrb.schemas import GreedyTrace, ModelManifest, Scheme

# Configure logging
logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
_EI_ARRAYS = ("q", "xi", "interp_matrix", "q_prime")


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_greedy_csv(path: Path, errors) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["size", "error"], lineterminator="\n")
        writer.writeheader()
        for size, error in enumerate(errors):
            writer.writerow({"size": size, "error": f"{error:.17g}"})


class ModelStore:
    """Reads and writes one model directory.

    Each array lives in its own ``.npy`` file so that rerunning the offline
    stage with identical inputs reproduces identical bytes and hashes.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def _basis_path(self, scheme: Scheme) -> Path:
        return self.directory / f"basis_{scheme.value}.npy"

    def _ei_path(self, scheme: Scheme, name: str) -> Path:
        return self.directory / f"ei_{scheme.value}_{name}.npy"

    def save(self, config: StudyConfig, bases: Dict[Scheme, ReducedBasis], eis: Dict[Scheme, EIData]) -> ModelManifest:
        """Write bases, interpolation data, greedy traces and the manifest."""
        self.directory.mkdir(parents=True, exist_ok=True)
        hashes: Dict[str, str] = {}
        for scheme, rb in bases.items():
            path = self._basis_path(scheme)
            np.save(path, rb.psi)
            hashes[path.name] = file_hash(path)
            _write_greedy_csv(self.directory / f"greedy_{scheme.value}.csv", rb.training_errors)
        for scheme, ei in eis.items():
            for name in _EI_ARRAYS:
                path = self._ei_path(scheme, name)
                np.save(path, getattr(ei, name))
                hashes[path.name] = file_hash(path)
        manifest = ModelManifest(
            config=config.model_dump(mode="json"),
            n_max={scheme: rb.size for scheme, rb in bases.items()},
            m_max={scheme: ei.size for scheme, ei in eis.items()},
            traces={
                scheme: GreedyTrace(pod_errors=list(bases[scheme].training_errors), ei_errors=list(eis[scheme].errors))
                for scheme in bases
            },
            hashes=hashes,
        )
        (self.directory / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Saved model to {self.directory} ({len(hashes)} arrays)")
        return manifest

    def load_manifest(self) -> ModelManifest:
        path = self.directory / MANIFEST_NAME
        if not path.is_file():
            raise ArtifactError(f"no model manifest in {self.directory}; run the offline stage first")
        return ModelManifest.model_validate_json(path.read_text(encoding="utf-8"))

    def _load_array(self, path: Path, manifest: ModelManifest) -> np.ndarray:
        if not path.is_file():
            raise ArtifactError(f"model array missing: {path}")
        expected = manifest.hashes.get(path.name)
        if expected is None or file_hash(path) != expected:
            raise ArtifactError(f"content hash mismatch for {path}")
        return np.load(path)

    def load(self, scheme: Scheme) -> Tuple[ReducedBasis, EIData]:
        """Load and verify the basis and interpolation data of one scheme."""
        manifest = self.load_manifest()
        config = StudyConfig(**manifest.config)
        grid = config.grid
        trace = manifest.traces.get(scheme)
        if trace is None:
            raise ArtifactError(f"model in {self.directory} has no {scheme.value} data")
        psi = self._load_array(self._basis_path(scheme), manifest)
        arrays = {name: self._load_array(self._ei_path(scheme, name), manifest) for name in _EI_ARRAYS}
        rb = ReducedBasis(grid, psi, tuple(trace.pod_errors))
        ei = EIData(grid=grid, errors=tuple(trace.ei_errors), **arrays)
        try:
            dofs = restricted_dofs(ei, grid)
        except ContractViolation as e:
            raise ArtifactError(f"invalid {scheme.value} interpolation data in {self.directory}: {str(e)}") from e
        if not np.array_equal(dofs, ei.q_prime):
            raise ArtifactError(f"{scheme.value} restricted DOFs do not match the stencils of the interpolation points")
        return rb, ei

    def config(self) -> StudyConfig:
        return StudyConfig(**self.load_manifest().config)
