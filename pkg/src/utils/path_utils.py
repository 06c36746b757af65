"""
Path handling for command inputs and outputs.

Every path given on the command line passes through ``normalize_path``;
every file written goes through ``prepare_output_path``.
"""

from __future__ import annotations

import os

from .logger import get_logger


def normalize_path(path: str) -> str:
    """Expand ``~`` and normalize separators.

    Args:
        path: The path to normalize

    Returns:
        str: Normalized path, or "" for an empty input
    """
    if not path:
        return ""
    return os.path.normpath(os.path.expanduser(path.replace("\\", os.sep).replace("/", os.sep)))


def prepare_output_path(path: str) -> str:
    """Normalize an output path and create its parent directory.

    Raises:
        OSError: The parent directory cannot be created or is not writable
    """
    normalized = normalize_path(path)
    if not normalized:
        raise OSError("empty output path")
    parent = os.path.dirname(normalized) or "."
    if not os.path.isdir(parent):
        get_logger().debug(f"Creating output directory: {parent}")
        os.makedirs(parent, exist_ok=True)
    if not os.access(parent, os.W_OK):
        raise OSError(f"output directory is not writable: {parent}")
    return normalized


def indexed_path(path: str, index: int, count: int) -> str:
    """``trace.csv`` -> ``trace_03.csv`` when several files share one output name."""
    if count <= 1:
        return path
    stem, suffix = os.path.splitext(path)
    return f"{stem}_{index:02d}{suffix}"
