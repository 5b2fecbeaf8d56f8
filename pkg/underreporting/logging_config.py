"""
Logging setup shared by the CLI and the experiment runner.
"""

import logging
import os
import sys
from typing import Optional, Union

from underreporting.errors import UnderReportingError

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = 'underreporting.log'


def setup_logging(output_dir: Optional[str] = None, level: Union[int, str] = logging.INFO) -> None:
    """Configure logging with a console handler and, given an output directory, a file handler."""
    try:
        if isinstance(level, str):
            level = logging.getLevelName(level.upper())
            if not isinstance(level, int):
                raise ValueError("unknown log level")

        formatter = logging.Formatter(LOG_FORMAT)

        root = logging.getLogger()
        root.setLevel(level)
        root.handlers.clear()

        # stderr keeps stdout free for reports printed by the CLI
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        console_handler.setLevel(level)
        root.addHandler(console_handler)

        if output_dir:
            os.makedirs(output_dir, exist_ok=True)
            file_handler = logging.FileHandler(os.path.join(output_dir, LOG_FILE), encoding='utf-8')
            file_handler.setFormatter(formatter)
            file_handler.setLevel(level)
            root.addHandler(file_handler)

    except Exception as e:
        raise UnderReportingError(
            f"Failed to setup logging: {str(e)}",
            "config_error",
            e
        )
