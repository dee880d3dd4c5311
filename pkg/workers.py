"""Background workers for independent sweep points and search trials."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import psutil

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def default_threads() -> int:
    """Physical core count, falling back to logical cores and then 1."""
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


class TaskPool:
    """Runs independent tasks and hands results back in submission order.

    Args:
        threads: Worker count; 1 runs every task inline on the caller's thread.
        log: Optional progress callback receiving one line per finished task.
    """

    def __init__(self, threads: int = 1, log: Callable[[str], None] | None = None) -> None:
        self.threads = max(1, int(threads))
        self.log: Callable[[str], None] = log if log else lambda msg: None

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        total = len(items)
        if self.threads == 1 or total <= 1:
            results = []
            for idx, item in enumerate(items):
                results.append(fn(item))
                self.log(f"task {idx + 1}/{total} finished")
            return results

        logger.debug(f"Running {total} tasks on {self.threads} threads")
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = [pool.submit(fn, item) for item in items]
            results = []
            for idx, future in enumerate(futures):
                # re-raises the first failure in submission order
                results.append(future.result())
                self.log(f"task {idx + 1}/{total} finished")
        return results


def run_ordered(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    return TaskPool(threads).map(fn, items)
