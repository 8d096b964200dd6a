"""Worker-count helper honoring the BELLMAN_LAB_THREADS environment cap."""

from __future__ import annotations

import os


def max_workers(default: int = 4) -> int:
    cap = os.environ.get("BELLMAN_LAB_THREADS")
    if cap is not None:
        try:
            return max(1, int(cap))
        except ValueError:
            pass
    return max(1, min(default, os.cpu_count() or 1))
