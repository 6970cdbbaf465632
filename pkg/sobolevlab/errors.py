"""
Exception hierarchy and centralized error handling for sobolevlab.

Every failure mode of the numerical modules maps to one exception class;
the CLI routes uncaught exceptions through ``ErrorHandler`` which logs them
and turns them into a standardized error record plus a process exit code.
"""

import os
from typing import Any, Callable, Dict, Optional, Tuple, Type

from utils.logging import get_logger


class SobolevLabError(Exception):
    """Base class for all sobolevlab errors."""

    exit_code: int = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_record(self) -> Dict[str, Any]:
        """Standardized error record (mirrors the CLI JSON error output)."""
        return {
            'error': True,
            'exit_code': self.exit_code,
            'kind': type(self).__name__,
            'message': self.message,
            'details': self.details,
        }


class MeshError(SobolevLabError):
    """Invalid or degenerate mesh."""


class UnsupportedDimensionError(MeshError):
    """Dimension outside {2, 3}."""

    exit_code = 2


class FeSpaceError(SobolevLabError):
    """Invalid finite element data (non-finite nodal values, bad files)."""


class QuadratureError(SobolevLabError):
    """Quadrature rule construction or integration failure."""


class FunctionalError(SobolevLabError):
    """Invalid arguments to an integral functional (zero function, p out of range)."""


class ExtremalError(SobolevLabError):
    """Invalid extremal parameters or exponent range."""


class SolverError(SobolevLabError):
    """Unrecoverable solver failure (not used for plain non-convergence)."""


class FitError(SobolevLabError):
    """Nearest-extremal fit could not be set up."""


class RateFitError(SobolevLabError):
    """Too few usable rows for a log-log slope fit."""


class CheckFailure(SobolevLabError):
    """A verification check found an inequality violated."""

    exit_code = 3


class ConfigError(SobolevLabError):
    """Invalid configuration value or file."""

    exit_code = 2


class ErrorHandler:
    """Centralized error handling for command line runs."""

    def __init__(self):
        self.logger = get_logger('sobolevlab.error_handler')
        self._handlers: Dict[Type[BaseException], Callable[[BaseException], Dict[str, Any]]] = {}
        self.register(ConfigError, self.handle_config_error)
        self.register(CheckFailure, self.handle_check_failure)
        self.register(SobolevLabError, self.handle_domain_error)

    def register(self, exc_type: Type[BaseException], handler: Callable[[BaseException], Dict[str, Any]]):
        """Register a handler for an exception class (most specific match wins)."""
        self._handlers[exc_type] = handler

    @staticmethod
    def _create_error_record(exit_code: int, kind: str, message: str,
                             details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Create standardized error record."""
        record = {
            'error': True,
            'exit_code': exit_code,
            'kind': kind,
            'message': message,
        }
        if details:
            record['details'] = details
        return record

    def handle_config_error(self, error: ConfigError) -> Dict[str, Any]:
        self.logger.error(f"Configuration error: {error.message}")
        return error.to_record()

    def handle_check_failure(self, error: CheckFailure) -> Dict[str, Any]:
        self.logger.error(f"Check failed: {error.message}", extra={'stage': 'checks'})
        return error.to_record()

    def handle_domain_error(self, error: SobolevLabError) -> Dict[str, Any]:
        self.logger.error(f"{type(error).__name__}: {error.message}", exc_info=error)
        return error.to_record()

    def handle_generic_exception(self, error: BaseException) -> Dict[str, Any]:
        """Handle any unhandled exceptions."""
        self.logger.error(f"Unhandled exception: {str(error)}", exc_info=error)

        # Detailed message only in development
        if os.getenv('SOBOLEVLAB_ENV') == 'development':
            return self._create_error_record(
                1, type(error).__name__, 'Internal error',
                {'exception': f'{type(error).__name__}: {str(error)}'}
            )
        return self._create_error_record(1, 'InternalError', 'An unexpected error occurred.')

    def handle(self, error: BaseException) -> Tuple[Dict[str, Any], int]:
        """Dispatch ``error`` to its handler; returns (record, exit_code)."""
        for cls in type(error).__mro__:
            handler = self._handlers.get(cls)
            if handler is not None:
                record = handler(error)
                return record, record['exit_code']
        record = self.handle_generic_exception(error)
        return record, record['exit_code']
