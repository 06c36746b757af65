# Package marker for utils module

from .config_manager import ConfigError, ConfigManager
from .export_manager import ExportManager
from .logger import get_logger
from .performance_profiler import PerformanceProfiler

__all__ = [
    "ConfigError",
    "ConfigManager",
    "ExportManager",
    "PerformanceProfiler",
    "get_logger",
]
