"""Process allocator tuning for large-buffer reuse.

The training and attack loops allocate and free the same multi-megabyte
activation buffers thousands of times.  glibc serves such blocks via
mmap and returns them to the kernel on free, so every step pays page
faults for the full working set.  Raising the mmap/trim thresholds keeps
those blocks on the heap, where they are reused without faulting.

Called lazily (and idempotently) by the compute entry points; a no-op on
platforms without glibc mallopt.
"""

from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_THRESHOLD_BYTES = 1 << 30

_done = False


def tune_allocator() -> bool:
    global _done
    if _done:
        return True
    _done = True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
        libc.mallopt(_M_MMAP_THRESHOLD, _THRESHOLD_BYTES)
        libc.mallopt(_M_TRIM_THRESHOLD, _THRESHOLD_BYTES)
        return True
    except (OSError, AttributeError):
        return False
