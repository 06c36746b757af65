"""Wall-clock timing of learning and benchmark stages."""

import time
from contextlib import contextmanager
from typing import Any, Callable, Dict, List

from .logger import get_logger


class PerformanceProfiler:
    """Collects named wall-clock timings.

    Timings are reported on the console and by ``bench`` only; they are never
    written into model or report files.
    """

    def __init__(self, log_level_info: bool = True):
        self.samples: Dict[str, List[float]] = {}
        self._started: Dict[str, float] = {}
        self.logger = get_logger()
        self._log = self.logger.info if log_level_info else self.logger.debug

    def start_operation(self, name: str) -> None:
        self._started[name] = time.perf_counter()
        self.logger.debug(f"timing {name}")

    def end_operation(self, name: str) -> float:
        """End timing an operation and return the duration in seconds."""
        if name not in self._started:
            self.logger.warning(f"Operation '{name}' ended without a start")
            return 0.0

        duration = time.perf_counter() - self._started.pop(name)
        self.samples.setdefault(name, []).append(duration)
        self._log(f"{name}: {duration:.3f}s")
        return duration

    @contextmanager
    def time_operation(self, name: str):
        self.start_operation(name)
        try:
            yield
        finally:
            self.end_operation(name)

    def time_call(self, name: str, func: Callable[[], Any], repeats: int = 1) -> float:
        """Run func repeats times and return the mean duration of one call."""
        if repeats < 1:
            raise ValueError("repeats must be >= 1")
        start = time.perf_counter()
        for _ in range(repeats):
            func()
        mean = (time.perf_counter() - start) / repeats
        self.samples.setdefault(name, []).append(mean)
        self.logger.debug(f"{name}: {mean * 1e3:.3f}ms per call over {repeats} calls")
        return mean

    def get_stats(self, name: str) -> Dict[str, float]:
        """count, total, average, min, max and last duration for one name; {} if never timed."""
        samples = self.samples.get(name)
        if not samples:
            return {}
        total = sum(samples)
        return {
            "count": len(samples),
            "total": total,
            "average": total / len(samples),
            "min": min(samples),
            "max": max(samples),
            "last": samples[-1],
        }

    def get_all_stats(self) -> Dict[str, Dict[str, float]]:
        return {op: self.get_stats(op) for op in self.samples}

    def reset(self) -> None:
        self.samples.clear()
        self._started.clear()
