"""In-process counters and timers for training and attribution work."""
import time
from collections import defaultdict
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

import structlog

logger = structlog.get_logger()


class MetricsCollector:
    """Collects counters and timer samples keyed by name and labels."""

    def __init__(self):
        self.counters = defaultdict(int)
        self.timers = defaultdict(list)

    def increment_counter(self, name: str, value: int = 1, labels: Optional[Dict[str, str]] = None):
        """Increment a counter metric."""
        key = self._make_key(name, labels)
        self.counters[key] += value
        logger.debug("counter_incremented", name=name, value=value, labels=labels)

    def record_timer(self, name: str, duration: float, labels: Optional[Dict[str, str]] = None):
        """Record a timer duration in seconds."""
        key = self._make_key(name, labels)
        self.timers[key].append(duration)
        logger.debug("timer_recorded", name=name, duration=duration, labels=labels)

    @contextmanager
    def timed(self, name: str, labels: Optional[Dict[str, str]] = None) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.record_timer(name, time.perf_counter() - start, labels)

    def _make_key(self, name: str, labels: Optional[Dict[str, str]] = None) -> str:
        if not labels:
            return name
        label_str = ",".join(f"{k}={v}" for k, v in sorted(labels.items()))
        return f"{name}{{{label_str}}}"

    def get_metrics(self) -> Dict[str, Any]:
        """Snapshot of counters and per-timer summary statistics."""
        timers = {}
        for key, values in self.timers.items():
            if values:
                timers[key] = {
                    "count": len(values),
                    "sum": sum(values),
                    "min": min(values),
                    "max": max(values),
                    "avg": sum(values) / len(values),
                }
        return {"counters": dict(self.counters), "timers": timers}

    def reset(self):
        """Reset all metrics."""
        self.counters.clear()
        self.timers.clear()
        logger.debug("metrics_reset")


# Global metrics collector
metrics = MetricsCollector()


def record_models_trained(count: int, fit_seconds: float, method: str):
    """Record a batch of fitted and attributed models."""
    metrics.increment_counter("models_trained_total", count)
    metrics.increment_counter("attributions_computed_total", count, labels={"method": method})
    metrics.record_timer("fit_seconds", fit_seconds)


def record_attribution_time(seconds: float, method: str):
    metrics.record_timer("attribution_seconds", seconds, labels={"method": method})


def get_metrics() -> Dict[str, Any]:
    return metrics.get_metrics()
