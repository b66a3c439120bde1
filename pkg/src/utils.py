import contextlib
import os
import time
from typing import Iterator, List

try:
    import fcntl
except ImportError:  # Windows
    fcntl = None


def find_missing_entries_in_list(list_to_check, list_to_find):
    """
    Finds the missing entries in a list.

    Args:
        list_to_check (list): The list to check against.
        list_to_find (list): The list to find missing entries in.

    Returns:
        list: A list of missing entries found in list_to_find.
    """
    return [item for item in list_to_find if item not in list_to_check]


def batch_slices(count: int, batch_size: int) -> List[slice]:
    """
    Split range(count) into consecutive slices of at most batch_size.

    Returns:
        list: slices covering [0, count) in order.
    """
    return [slice(start, min(start + batch_size, count)) for start in range(0, count, batch_size)]



class Stopwatch:
    """Wall-clock timer used for every timing row."""

    def __init__(self):
        self.start = time.perf_counter()
        self.elapsed = 0.0

    def __enter__(self) -> "Stopwatch":
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.elapsed = time.perf_counter() - self.start


@contextlib.contextmanager
def exclusive_lock(path: str) -> Iterator[None]:
    """
    Hold an exclusive advisory lock on '<path>.lock' while writing path.
    Falls back to no locking where fcntl is unavailable.
    """
    lock_path = f"{path}.lock"
    os.makedirs(os.path.dirname(os.path.abspath(lock_path)), exist_ok=True)
    with open(lock_path, "a") as handle:
        if fcntl is not None:
            fcntl.flock(handle.fileno(), fcntl.LOCK_EX)
        try:
            yield
        finally:
            if fcntl is not None:
                fcntl.flock(handle.fileno(), fcntl.LOCK_UN)
