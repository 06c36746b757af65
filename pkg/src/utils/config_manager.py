from __future__ import annotations

import copy
import json
import os
import traceback
from typing import Any, Dict, List, Optional

from .logger import get_logger

LAST_USED_KEY = "_last_used_preset"
PRESET_PREFIX = "Preset: "


class ConfigError(ValueError):
    """The configuration file or a requested preset is unusable."""

    pass


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    result = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


class ConfigManager:
    """Loads named presets from a JSON file and layers run-time overrides on top.

    The file is read-only from the tool's point of view: overrides given on
    the command line live in memory for one run and are echoed into every
    output file instead of being written back.
    """

    def __init__(self, config_file: Optional[str] = "config.json", preset: Optional[str] = None) -> None:
        # Default configuration template
        self._config_template: Dict[str, Any] = {
            "learning": {
                "K": 5,
                "K_heading": 12,
                "L": 1,
                "threshold": None,
                "max_outer_iters": 100,
                "stagnation_iters": 20,
                "em_tol": 1e-6,
                "em_max_iter": 500,
                "scale_normalization": True,
            },
            "controller": {
                "rho0": 0.05,
                "target_radius": 0.5,
                "b_floor": 1e-10,
            },
            "preprocessing": {
                "r_corr": 5.0,
                "tol_target": 1e-6,
                "polar": False,
            },
            "simulation": {
                "dt": 0.1,
                "max_steps": 10000,
                "divergence_factor": 1e3,
                "max_halvings": 8,
            },
            "evaluation": {
                "sea_resolution": None,
            },
        }

        self._config_file = config_file
        self._presets: Dict[str, Dict[str, Any]] = {}
        self._current_preset: Optional[str] = None
        self._current_config: Dict[str, Any] = copy.deepcopy(self._config_template)

        self.load_config()
        if preset is not None:
            self.load_preset(preset)

    def load_config(self) -> None:
        """Read the presets file and activate the last used (or first) preset."""
        logger = get_logger()
        if not self._config_file or not os.path.exists(self._config_file):
            logger.info(f"No configuration file at {self._config_file!r}; using built-in defaults")
            return

        try:
            with open(self._config_file, "r", encoding="utf-8") as f:
                configs = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error loading config: {str(e)}")
            logger.debug(f"Traceback: {traceback.format_exception(type(e), e, e.__traceback__)}")
            raise ConfigError(f"cannot read configuration file {self._config_file}: {e}") from e

        if not isinstance(configs, dict):
            raise ConfigError(f"configuration file {self._config_file} must hold a JSON object")

        self._presets = {
            name: value for name, value in configs.items() if name != LAST_USED_KEY and isinstance(value, dict)
        }
        last_preset = configs.get(LAST_USED_KEY)
        if last_preset and last_preset in self._presets:
            self._activate(last_preset)
            logger.debug(f"Loaded configuration from last used preset: {last_preset}")
        elif self._presets:
            first_preset = next(iter(self._presets))
            self._activate(first_preset)
            logger.debug(f"Loaded configuration from first preset: {first_preset}")
        else:
            logger.warning("No presets found, using default configuration")

    def _activate(self, preset_name: str) -> None:
        self._current_config = self._merge_with_template(self._presets[preset_name])
        self._current_preset = preset_name

    def _merge_with_template(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """Merge a preset over the template; unknown keys are kept and reported."""
        unknown = [key for key in config if key not in self._config_template]
        if unknown:
            get_logger().warning(f"Unknown configuration sections ignored by the pipeline: {unknown}")
        return _deep_merge(self._config_template, config)

    def load_preset(self, preset_name: str) -> None:
        """Activate a preset by full key ("Preset: Polar") or short name ("Polar")."""
        name = preset_name if preset_name in self._presets else f"{PRESET_PREFIX}{preset_name}"
        if name not in self._presets:
            raise ConfigError(f"unknown preset {preset_name!r}; available: {self.get_preset_names()}")
        self._activate(name)
        get_logger().info(f"Using preset: {name}")

    def apply_overrides(self, overrides: Dict[str, Any]) -> None:
        """Layer values over the active configuration; None values are skipped."""
        logger = get_logger()
        cleaned: Dict[str, Any] = {}
        for section, values in overrides.items():
            if isinstance(values, dict):
                kept = {key: value for key, value in values.items() if value is not None}
                if kept:
                    cleaned[section] = kept
            elif values is not None:
                cleaned[section] = values
        if cleaned:
            logger.debug(f"Applying overrides: {cleaned}")
            self._current_config = _deep_merge(self._current_config, cleaned)

    def get_config(self) -> Dict[str, Any]:
        return copy.deepcopy(self._current_config)

    def get_section(self, section: str) -> Dict[str, Any]:
        if section not in self._current_config:
            raise ConfigError(f"missing configuration section: {section}")
        return copy.deepcopy(self._current_config[section])

    def get_preset_names(self) -> List[str]:
        return list(self._presets)

    def get_current_preset_name(self) -> str:
        return self._current_preset or "Default"
