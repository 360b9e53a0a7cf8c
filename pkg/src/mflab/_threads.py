"""Thread-pool control for bit-reproducible numerics.

BLAS backends parallelize reductions, and the summation order (hence the
floating-point result) can depend on the number of threads.  The replay
contract requires byte-identical outputs across ``--threads`` settings, so
all BLAS pools are pinned to a single thread.  Coarse-grained parallelism
(chunked cost-matrix assembly) is governed separately by :func:`worker_count`
and assembles results positionally, which keeps it bit-stable.
"""

import os

_worker_count = 1
_pinned = False


def pin_blas_threads() -> None:
    """Limit every detected BLAS/OpenMP pool to one thread (idempotent)."""
    global _pinned
    if _pinned:
        return
    # Environment hints help if numpy is imported later in a subprocess.
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=1)
        _pinned = True
    except ImportError:  # pragma: no cover - threadpoolctl is a hard dep
        pass


def set_worker_count(n: int) -> None:
    """Set the worker cap for chunk-parallel kernels (``--threads``)."""
    global _worker_count
    _worker_count = max(1, int(n))


def worker_count() -> int:
    return _worker_count
