"""Atomic file output.

Artifacts are written to a temporary file in the destination directory and
renamed into place, so an interrupted run never leaves a truncated CSV or
SVG behind. ``EVCSIM_OUT_ROOT`` re-roots relative output directories.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path


def resolve_out_dir(out_dir: str | Path) -> Path:
    """Apply the output-root override to relative destinations."""
    p = Path(out_dir)
    root = os.environ.get("EVCSIM_OUT_ROOT")
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path
