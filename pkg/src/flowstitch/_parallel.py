"""Thread-count control for the numba kernels.

Numba sizes its thread pool once, at import time. We raise the ceiling so that
``set_threads(8)`` works even on small machines; the active count defaults to
the number of CPUs (or ``FLOWSTITCH_THREADS`` when set).
"""
import os

os.environ.setdefault("NUMBA_NUM_THREADS", str(max(os.cpu_count() or 1, 8)))
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

import contextlib  # noqa: E402

import numba  # noqa: E402

ENV_THREADS = "FLOWSTITCH_THREADS"


def max_threads() -> int:
    return numba.config.NUMBA_NUM_THREADS


def default_threads() -> int:
    env = os.environ.get(ENV_THREADS, "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 0
        if n > 0:
            return min(n, max_threads())
    return min(os.cpu_count() or 1, max_threads())


def set_threads(n: int) -> int:
    """Set the number of worker threads (0 = auto). Returns the count in effect."""
    if n < 0:
        raise ValueError(f"thread count must be >= 0, got {n}")
    if n == 0:
        n = default_threads()
    n = min(n, max_threads())
    numba.set_num_threads(n)
    return n


def get_threads() -> int:
    return numba.get_num_threads()


@contextlib.contextmanager
def threads(n: int):
    """Temporarily run kernels with ``n`` threads."""
    prev = numba.get_num_threads()
    set_threads(n)
    try:
        yield
    finally:
        numba.set_num_threads(prev)


set_threads(0)
