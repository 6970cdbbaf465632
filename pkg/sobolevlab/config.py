"""
Run configuration.

Precedence (lowest first): built-in defaults, environment variables
(``SOBOLEVLAB_*``, optionally from a ``.env`` file), a ``key = value``
config file, command-line flags.
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from sobolevlab.errors import ConfigError
from utils.logging import get_logger

load_dotenv()

logger = get_logger(__name__)

DEFAULT_EPSILON_SCHEDULE = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
DEFAULT_QUADRATURE_ORDER = {2: 8, 3: 6}


class SolverOptions(BaseModel):
    """Options of the discrete Sobolev-constant solver."""

    max_iters: int = Field(2000, ge=1)
    grad_tol: float = Field(1e-4, gt=0)
    step_tol: float = Field(1e-10, gt=0)
    # relative to the mean element gradient magnitude of the initial iterate
    epsilon_schedule: List[float] = Field(default_factory=lambda: list(DEFAULT_EPSILON_SCHEDULE))
    quadrature_order: Optional[int] = Field(None, ge=1)
    seed: int = 0
    stall_limit: int = Field(10, ge=1)
    armijo_c1: float = Field(1e-4, gt=0, lt=1)
    max_backtracks: int = Field(40, ge=1)

    @field_validator('epsilon_schedule')
    @classmethod
    def _check_schedule(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError('epsilon_schedule must not be empty')
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError('epsilon_schedule must be strictly decreasing')
        if value[-1] < 1e-10:
            raise ValueError('epsilon_schedule floor must be >= 1e-10')
        return value

    def order_for(self, dim: int) -> int:
        return self.quadrature_order or DEFAULT_QUADRATURE_ORDER[dim]


class Settings(BaseModel):
    """Run defaults shared by all subcommands."""

    out_dir: Path = Path('results')
    log_dir: Path = Path('logs')
    # subcommand flags a config file may preload
    dim: Optional[int] = Field(None, ge=2, le=3)
    p: Optional[float] = Field(None, gt=1)
    level: Optional[int] = Field(None, ge=0)
    max_level: Optional[int] = Field(None, ge=0)
    log_level: str = 'INFO'
    seed: int = 0
    jobs: int = Field(1, ge=1)
    fit_min_level: int = Field(2, ge=0)
    order_2d: int = Field(8, ge=1)
    order_3d: int = Field(6, ge=1)
    max_iters: int = Field(2000, ge=1)
    grad_tol: float = Field(1e-4, gt=0)
    step_tol: float = Field(1e-10, gt=0)

    @model_validator(mode='after')
    def _check_level(self) -> 'Settings':
        if self.log_level.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f'unknown log level {self.log_level}')
        return self

    def solver_options(self, dim: int, **overrides) -> SolverOptions:
        """Build SolverOptions for dimension ``dim``; ``overrides`` win."""
        values: Dict[str, Any] = {
            'max_iters': self.max_iters,
            'grad_tol': self.grad_tol,
            'step_tol': self.step_tol,
            'quadrature_order': self.order_2d if dim == 2 else self.order_3d,
            'seed': self.seed,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return SolverOptions(**values)
        except ValidationError as e:
            raise ConfigError('Invalid solver options', {'errors': e.errors(include_url=False)}) from e


ENV_PREFIX = 'SOBOLEVLAB_'


def _from_env(environ: Mapping[str, str]) -> Dict[str, str]:
    fields = Settings.model_fields
    values = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in fields:
                values[name] = value
    return values


def _from_file(path: Path) -> Dict[str, str]:
    if not path.exists():
        raise ConfigError(f'Config file not found: {path}')
    raw = dotenv_values(path)
    values = {}
    for key, value in raw.items():
        name = key.strip().lower().replace('-', '_')
        if name not in Settings.model_fields:
            raise ConfigError(f'Unknown config key: {key}', {'file': str(path)})
        values[name] = value
    return values


def load_settings(config_file: Optional[Path] = None,
                  overrides: Optional[Mapping[str, Any]] = None,
                  environ: Optional[Mapping[str, str]] = None) -> Settings:
    """Merge defaults, environment, config file and CLI overrides.

    Args:
        config_file: Optional ``key = value`` file
        overrides: CLI values; ``None`` entries are ignored
        environ: Environment mapping (defaults to ``os.environ``)

    Returns:
        Validated Settings

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    values: Dict[str, Any] = {}
    values.update(_from_env(os.environ if environ is None else environ))
    if config_file is not None:
        values.update(_from_file(Path(config_file)))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    try:
        settings = Settings(**values)
    except ValidationError as e:
        raise ConfigError('Invalid configuration', {'errors': e.errors(include_url=False)}) from e

    logger.debug(f"Settings loaded: {settings.model_dump()}")
    return settings
