"""Field dumps and trajectory directories on disk."""
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from frozenrb.exceptions import ArtifactError
from frozenrb.grid import Field, GridSpec
from frozenrb.schemas import TrajectoryManifest

logger = logging.getLogger(__name__)

# Field dump extension
FIELD_SUFFIX = ".txt"
MANIFEST_NAME = "manifest.json"


def frame_name(k: int) -> str:
    return f"v_{k:04d}{FIELD_SUFFIX}"


def write_field(path: Path, field: Field) -> Path:
    """Write a field dump: header '# nx ny lx ly', then one value per line, row-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    header = f"{grid.nx} {grid.ny} {grid.lx!r} {grid.ly!r}"
    np.savetxt(path, field.values, fmt="%.17g", header=header, comments="# ")
    return path


def read_field(path: Path) -> Field:
    """Read a dump written by :func:`write_field`."""
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"field dump not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().lstrip("#").split()
        nx, ny = int(header[0]), int(header[1])
        lx, ly = float(header[2]), float(header[3])
        values = np.loadtxt(path, comments="#", ndmin=1)
    except (ValueError, IndexError) as e:
        raise ArtifactError(f"malformed field dump {path}: {str(e)}") from e
    return Field(GridSpec(nx=nx, ny=ny, lx=lx, ly=ly), values)


def save_trajectory(directory: Path, fields: Sequence[Field], manifest: TrajectoryManifest, frames: Optional[Sequence[int]] = None) -> Path:
    """Persist selected frames of a trajectory plus its manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = list(range(len(fields))) if frames is None else sorted(set(frames))
    for k in frames:
        write_field(directory / frame_name(k), fields[k])
    manifest = manifest.model_copy(update={"frames": frames})
    (directory / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Saved {len(frames)} frames of the {manifest.scheme} trajectory (mu={manifest.mu}) to {directory}")
    return directory


def load_trajectory(directory: Path) -> tuple[TrajectoryManifest, List[Field]]:
    """Load a trajectory directory written by :func:`save_trajectory`."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ArtifactError(f"trajectory manifest not found: {manifest_path}")
    manifest = TrajectoryManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    return manifest, [read_field(directory / frame_name(k)) for k in manifest.frames]
