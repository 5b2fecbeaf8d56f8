"""
Error type shared by every module of the package.
"""

from typing import Optional

# error_type -> category. Categories decide the CLI exit code.
ERROR_CATEGORIES = {
    "validation_error": "usage",
    "config_error": "usage",
    "schema_error": "data",
    "file_error": "data",
    "data_error": "data",
    "rank_error": "numerical",
    "convergence_error": "numerical",
    "numerical_error": "numerical",
    "undefined_turning_point": "numerical",
}


class UnderReportingError(Exception):
    """Custom exception class for under-reporting audit errors."""
    def __init__(self, message: str, error_type: str = "general", original_error: Optional[Exception] = None):
        self.message = message
        self.error_type = error_type
        self.original_error = original_error
        super().__init__(self.message)

    @property
    def category(self) -> str:
        """Category of the error ("usage", "data" or "numerical")."""
        return ERROR_CATEGORIES.get(self.error_type, "usage")
