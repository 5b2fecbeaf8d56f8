"""
Configuration service for the under-reporting audit tools.
"""

import os
import logging
import json
from typing import Any, Dict, Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

DEFAULT_SETTINGS = {
    "run/seed": 0,
    "run/threads": 1,
    "output/directory": "output",
    "output/format": "csv",
    "logging/level": "INFO",
    "mitigate/n_draws": 5,
}

# environment variable -> (setting key, type)
ENV_OVERRIDES = {
    "UNDERREPORTING_SEED": ("run/seed", int),
    "UNDERREPORTING_OUTPUT_DIR": ("output/directory", str),
    "UNDERREPORTING_THREADS": ("run/threads", int),
    "UNDERREPORTING_LOG_LEVEL": ("logging/level", str),
}


class ConfigService:
    """Service for managing run configuration and settings."""

    def __init__(self, env_file: Optional[str] = None):
        """Initialize the configuration service.

        Args:
            env_file: Optional .env file; the default lookup of python-dotenv is used otherwise
        """
        self.settings: Dict[str, Any] = {}
        self._env_file = env_file
        self._initialize_default_settings()
        logger.debug("Configuration service initialized")

    def _initialize_default_settings(self):
        """Initialize default settings, then apply environment overrides."""
        self.settings = dict(DEFAULT_SETTINGS)
        if self._env_file:
            load_dotenv(self._env_file)
        else:
            load_dotenv()

        for env_name, (key, cast) in ENV_OVERRIDES.items():
            raw = os.getenv(env_name)
            if raw is None or raw == "":
                continue
            try:
                self.settings[key] = cast(raw)
            except ValueError:
                logger.warning(f"Ignoring {env_name}={raw!r}: expected {cast.__name__}")

    def get_setting(self, key: str, default: Any = None) -> Any:
        """Get a setting value.

        Args:
            key: The setting key in format "section/name"
            default: Default value if setting doesn't exist

        Returns:
            The setting value or default if not found
        """
        return self.settings.get(key, default)

    def set_setting(self, key: str, value: Any) -> None:
        """Set a setting value.

        Args:
            key: The setting key in format "section/name"
            value: The value to set
        """
        self.settings[key] = value
        logger.debug(f"Setting updated: {key} = {value}")

    def get_all_settings(self) -> Dict[str, Any]:
        return dict(self.settings)

    def export_settings(self, filepath: str) -> bool:
        """Export settings to a JSON file.

        Args:
            filepath: Path to save the settings file

        Returns:
            True if successful, False otherwise
        """
        try:
            with open(filepath, "w", encoding="utf-8") as f:
                json.dump(self.get_all_settings(), f, indent=2, sort_keys=True)
            logger.info(f"Settings exported to {filepath}")
            return True
        except Exception as e:
            logger.error(f"Failed to export settings: {e}")
            return False

    def import_settings(self, filepath: str) -> bool:
        """Import settings from a JSON file.

        Args:
            filepath: Path to the settings file

        Returns:
            True if successful, False otherwise
        """
        try:
            with open(filepath, "r", encoding="utf-8") as f:
                settings_dict = json.load(f)
            if not isinstance(settings_dict, dict):
                raise ValueError("settings file must hold a JSON object")
            for key, value in settings_dict.items():
                self.settings[key] = value
            logger.info(f"Settings imported from {filepath}")
            return True
        except Exception as e:
            logger.error(f"Failed to import settings: {e}")
            return False
