"""
Error handling service: maps errors to log messages and CLI exit codes.
"""

import logging
import traceback
from typing import Callable, Dict

from underreporting.errors import UnderReportingError

logger = logging.getLogger(__name__)

EXIT_CODES = {"usage": 1, "data": 2, "numerical": 3}


class ErrorService:
    """Service for reporting errors and choosing the process exit code."""

    def __init__(self):
        """Initialize the error handling service."""
        self._error_handlers: Dict[str, Callable[[UnderReportingError], int]] = {}
        self._register_default_handlers()
        logger.debug("Error handling service initialized")

    def _register_default_handlers(self):
        self.register_error_handler("validation_error", self._handle_validation_error)
        self.register_error_handler("config_error", self._handle_config_error)
        self.register_error_handler("file_error", self._handle_file_error)
        self.register_error_handler("schema_error", self._handle_data_error)
        self.register_error_handler("data_error", self._handle_data_error)
        self.register_error_handler("rank_error", self._handle_rank_error)
        self.register_error_handler("convergence_error", self._handle_numerical_error)
        self.register_error_handler("numerical_error", self._handle_numerical_error)
        self.register_error_handler("undefined_turning_point", self._handle_numerical_error)

    def register_error_handler(self, error_type: str, handler: Callable[[UnderReportingError], int]) -> None:
        """Register a handler for a specific error type.

        Args:
            error_type: The type of error to handle
            handler: Function taking the error and returning an exit code
        """
        self._error_handlers[error_type] = handler
        logger.debug(f"Registered error handler for {error_type}")

    def handle_error(self, error: Exception) -> int:
        """Log an error and return the exit code for it.

        Args:
            error: The exception to handle

        Returns:
            1 for usage errors, 2 for data errors, 3 for numerical errors
        """
        if hasattr(error, "__traceback__"):
            logger.debug("".join(traceback.format_tb(error.__traceback__)))

        if isinstance(error, UnderReportingError):
            handler = self._error_handlers.get(error.error_type, self._handle_general_error)
            return handler(error)

        logger.error(f"An unexpected error occurred: {str(error)}")
        return EXIT_CODES["usage"]

    def _exit_code(self, error: UnderReportingError) -> int:
        return EXIT_CODES[error.category]

    def _handle_general_error(self, error: UnderReportingError) -> int:
        logger.error(f"Error: {error.message}")
        return self._exit_code(error)

    def _handle_validation_error(self, error: UnderReportingError) -> int:
        logger.error(f"Invalid input: {error.message}")
        return self._exit_code(error)

    def _handle_config_error(self, error: UnderReportingError) -> int:
        logger.error(f"Configuration error: {error.message}")
        return self._exit_code(error)

    def _handle_file_error(self, error: UnderReportingError) -> int:
        logger.error(f"File error: {error.message}")
        if error.original_error is not None:
            logger.debug(f"Caused by: {error.original_error!r}")
        return self._exit_code(error)

    def _handle_data_error(self, error: UnderReportingError) -> int:
        logger.error(f"Data error: {error.message}")
        return self._exit_code(error)

    def _handle_rank_error(self, error: UnderReportingError) -> int:
        logger.error(f"Rank-deficient design: {error.message}")
        logger.info("Drop or combine the named columns and retry")
        return self._exit_code(error)

    def _handle_numerical_error(self, error: UnderReportingError) -> int:
        logger.error(f"Numerical failure ({error.error_type}): {error.message}")
        return self._exit_code(error)
