"""Configuration management: process settings and study configuration."""
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from frozenrb.exceptions import ConfigError
from frozenrb.grid import GridSpec

logger = logging.getLogger(__name__)

# Fixed default seed for the random test parameters of the study
DEFAULT_SEED = 20130414


class Settings(BaseSettings):
    """Process settings loaded from environment variables (prefix FROZENRB_) or .env."""

    log_level: str = "INFO"
    output_dir: Path = Path("results")
    workers: int = 1
    default_preset: str = "paper-burgers"

    model_config = SettingsConfigDict(
        env_prefix="FROZENRB_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


class StudyConfig(BaseModel):
    """Everything a detailed run, the offline stage and the parameter study need."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    nx: int = Field(120, ge=2)
    ny: int = Field(60, ge=2)
    lx: float = Field(2.0, gt=0)
    ly: float = Field(1.0, gt=0)
    t_end: float = Field(0.3, gt=0)
    steps: int = Field(100, ge=1)
    b: Tuple[float, float] = (1.0, 1.0)
    mu_min: float = 1.0
    mu_max: float = 2.0
    training_mus: Tuple[float, ...] = tuple(round(1.0 + 0.1 * i, 10) for i in range(11))
    n_sweep: Tuple[int, ...] = (5, 10, 15, 20)
    m_factor: float = Field(1.8, gt=0)
    test_count: int = Field(100, ge=1)
    seed: int = DEFAULT_SEED
    # Basis size and interpolation points of single online runs
    online_n: int = Field(20, ge=1)
    online_m: int = Field(38, ge=1)
    pod_tol: float = Field(0.0, ge=0)
    ei_tol: float = Field(0.0, ge=0)
    # "relative" selects EI points on each operator snapshot's error over its own sup norm
    ei_selection: Literal["relative", "absolute"] = "relative"
    output_dir: Path = Field(default_factory=lambda: settings.output_dir)

    @field_validator("n_sweep")
    @classmethod
    def _check_sweep(cls, n_sweep: Tuple[int, ...]) -> Tuple[int, ...]:
        if not n_sweep or any(n < 1 for n in n_sweep):
            raise ValueError("n_sweep needs at least one basis size, all >= 1")
        return tuple(sorted(set(n_sweep)))

    @model_validator(mode="after")
    def _check_parameter_range(self) -> "StudyConfig":
        if not 1.0 <= self.mu_min <= self.mu_max <= 2.0:
            raise ValueError(f"parameter range must lie in [1, 2], got [{self.mu_min}, {self.mu_max}]")
        outside = [mu for mu in self.training_mus if not self.mu_min <= mu <= self.mu_max]
        if outside:
            raise ValueError(f"training parameters outside [{self.mu_min}, {self.mu_max}]: {outside}")
        if len(set(self.training_mus)) != len(self.training_mus) or not self.training_mus:
            raise ValueError("training parameters must be a non-empty list of distinct values")
        return self

    @property
    def grid(self) -> GridSpec:
        return GridSpec(nx=self.nx, ny=self.ny, lx=self.lx, ly=self.ly)

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    @property
    def n_max(self) -> int:
        return max(max(self.n_sweep), self.online_n)

    def interpolation_points(self, n: int) -> int:
        """M = m_factor * N, rounded half away from zero."""
        scaled = self.m_factor * n
        return max(1, int(scaled + 0.5))

    @property
    def m_max(self) -> int:
        return max(self.interpolation_points(self.n_max), self.online_m)


PRESETS: Dict[str, Dict[str, Any]] = {
    "paper-burgers": {},
    "paper-burgers-half": {"nx": 60, "ny": 30},
    "smoke": {
        "nx": 30,
        "ny": 15,
        "steps": 20,
        "t_end": 0.06,
        "training_mus": (1.0, 2.0),
        "n_sweep": (2,),
        "test_count": 5,
        "online_n": 2,
        "online_m": 4,
    },
}

_LIST_KEYS = {"training_mus", "n_sweep", "b"}
# K and T are accepted for steps and t_end
_ALIASES = {"k": "steps", "t": "t_end"}
# Short preset names
PRESET_ALIASES = {"burgers": "paper-burgers", "burgers-half": "paper-burgers-half"}


def _coerce(key: str, raw: Optional[str]) -> Any:
    if raw is None:
        raise ConfigError(f"configuration key '{key}' has no value")
    if key in _LIST_KEYS:
        return tuple(item.strip() for item in raw.split(",") if item.strip())
    return raw.strip()


def build_config(preset: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> StudyConfig:
    """Validate ``overrides`` on top of the named preset."""
    name = preset or "paper-burgers"
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(sorted(PRESETS))}")
    values = {**PRESETS[name], **(overrides or {})}
    try:
        return StudyConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid study configuration: {e}") from e


def parse_config(path: Optional[Path], preset: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> StudyConfig:
    """Read a KEY=VALUE configuration file and overlay it onto a preset.

    Keys are case-insensitive; list values are comma separated; a line that
    is not KEY=VALUE, a comment or blank raises ConfigError. ``overrides``
    (e.g. CLI flags) take precedence over the file.
    """
    file_values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"configuration file not found: {path}")
        with open(path, encoding="utf-8") as f:
            for binding in parse_stream(f):
                if binding.error:
                    line = binding.original.string.strip()
                    raise ConfigError(f"malformed configuration file {path}, line {binding.original.line}: {line!r}")
                if binding.key is None:
                    continue
                name = _ALIASES.get(binding.key.lower(), binding.key.lower())
                file_values[name] = _coerce(name, binding.value)
        logger.info(f"Loaded {len(file_values)} configuration values from {path}")
    config = build_config(preset, {**file_values, **(overrides or {})})
    return config


# Global settings instance
settings = Settings()
