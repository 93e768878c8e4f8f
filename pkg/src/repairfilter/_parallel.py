"""Order-preserving parallel map over a stream."""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def _chunks(items: Iterable[T], size: int) -> Iterator[list[T]]:
    it = iter(items)
    while chunk := list(islice(it, size)):
        yield chunk


def ordered_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    threads: int = 1,
    chunk_size: int = 2048,
) -> Iterator[R]:
    """Like ``map`` but spread over ``threads`` workers; output order always equals input order.

    At most ``2 * threads`` chunks are in flight, so memory stays bounded on long streams.
    """
    if threads <= 1:
        yield from map(fn, items)
        return

    def work(chunk: list[T]) -> list[R]:
        return [fn(x) for x in chunk]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending: deque = deque()
        for chunk in _chunks(items, chunk_size):
            pending.append(pool.submit(work, chunk))
            if len(pending) >= 2 * threads:
                yield from pending.popleft().result()
        while pending:
            yield from pending.popleft().result()
