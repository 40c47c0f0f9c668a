"""Pydantic schemas for persisted manifests and study records."""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class Scheme(str, Enum):
    """Frozen (FrozenRB) or plain reduction of the same problem."""

    FROZEN = "frozen"
    UNFROZEN = "unfrozen"


class ErrorRecord(BaseModel):
    """Study result for one scheme and basis size."""

    scheme: Scheme
    N: int
    M: int
    errors: Dict[float, float] = Field(default_factory=dict)
    max_error: Optional[float] = None
    note: str = ""

    def aggregate(self) -> "ErrorRecord":
        """Set ``max_error`` to the worst per-parameter error."""
        self.max_error = max(self.errors.values()) if self.errors else None
        return self


class TrajectoryManifest(BaseModel):
    """Plain-text description of a persisted trajectory directory."""

    scheme: str
    mu: float
    steps: int
    dt: float
    nx: int
    ny: int
    lx: float
    ly: float
    algs: List[List[float]] = Field(default_factory=list)
    gs: List[List[float]] = Field(default_factory=list)
    frames: List[int] = Field(default_factory=list)


class GreedyTrace(BaseModel):
    """Training error after each greedy extension."""

    pod_errors: List[float]
    ei_errors: List[float]


class ModelManifest(BaseModel):
    """Offline model directory: configuration, sizes, greedy traces and content hashes."""

    model_config = ConfigDict(protected_namespaces=())

    config: dict
    n_max: Dict[Scheme, int]
    m_max: Dict[Scheme, int]
    traces: Dict[Scheme, GreedyTrace]
    hashes: Dict[str, str]
