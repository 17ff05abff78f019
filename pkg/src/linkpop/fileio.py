"""Small file helpers: atomic text writes and numeric formatting."""

from __future__ import annotations

import os
import tempfile


def fmt(x) -> str:
    """Format a float at 17 significant digits (round-trip safe)."""
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temp file and rename, so readers never see a
    partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
