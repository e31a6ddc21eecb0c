from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Iterable, TypeVar

from core.config import get_settings

T = TypeVar("T")
R = TypeVar("R")

# Chunks per worker; numpy releases the GIL inside the per-chunk kernels
_CHUNKS_PER_WORKER = 4


def worker_count() -> int:
    return max(1, get_settings().threads)


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Map fn over items on a thread pool capped by ANISO_SIO_THREADS; results keep input order."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    results: list = [None] * len(items)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futures = {ex.submit(fn, item): i for i, item in enumerate(items)}
        for f in as_completed(futures):
            results[futures[f]] = f.result()
    return results


def chunked(seq: list, workers: int | None = None) -> list[list]:
    """Split seq into contiguous chunks sized for the pool."""
    count = max(1, (workers or worker_count()) * _CHUNKS_PER_WORKER)
    size = max(1, -(-len(seq) // count))
    return [seq[i:i + size] for i in range(0, len(seq), size)]
