"""Ordered fan-out over worker processes."""
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import structlog

logger = structlog.get_logger()

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Apply ``fn`` to every item; results keep input order.

    With ``threads > 1`` the work runs in a process pool, so ``fn`` and the
    items must be picklable (module-level functions, ``functools.partial``).
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    workers = min(threads, len(items))
    logger.debug("pool_started", workers=workers, tasks=len(items))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
