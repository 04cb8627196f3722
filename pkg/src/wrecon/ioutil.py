"""Atomic file writes: outputs appear fully written or not at all."""

from __future__ import annotations

import os
from contextlib import contextmanager

__all__ = ["atomic_write_bytes", "atomic_write_text", "atomic_output"]


def _tmp_name(path):
    return f"{path}.tmp-{os.getpid()}"


def atomic_write_bytes(path, data):
    tmp = _tmp_name(path)
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


@contextmanager
def atomic_output(path):
    """Yield a temp path for a writer (PIL, matplotlib), then rename into place."""
    tmp = _tmp_name(path)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
