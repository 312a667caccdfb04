"""Process-level performance settings."""

from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator():
    """Keep large numpy temporaries on the glibc heap instead of fresh mmaps.

    Training allocates megabyte-sized arrays every update; with the default
    dynamic mmap threshold each one is mapped, page-faulted and unmapped
    again, which costs as much as the matrix products on some hosts. Returns
    True when the settings were applied (glibc only, no-op elsewhere).
    """
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    if name is None:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = (mallopt(_M_MMAP_THRESHOLD, 256 << 20) == 1
          and mallopt(_M_TRIM_THRESHOLD, 512 << 20) == 1
          and mallopt(_M_TOP_PAD, 64 << 20) == 1)
    _done = ok
    return ok
