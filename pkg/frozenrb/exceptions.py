"""Exception types raised by the solvers, the offline stage and the CLI."""
from typing import Any, Dict, Optional


class FrozenRBError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FrozenRBError, ValueError):
    """Malformed configuration file or out-of-range study setting."""


class GridMismatchError(FrozenRBError, ValueError):
    """Two fields (or a field and a basis) live on different grids."""


class ContractViolation(FrozenRBError, ValueError):
    """A precondition of an operation was not met by its caller."""


class ArtifactError(FrozenRBError, OSError):
    """A persisted artifact is missing, unreadable or fails its hash check."""


class SolverAbort(FrozenRBError, RuntimeError):
    """A time-stepping loop produced NaN or blew up."""

    def __init__(self, message: str, step: int, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.diagnostics = diagnostics or {}
