"""Atomic, idempotent file writes and a directory lock."""

from __future__ import annotations

import contextlib
import os
import tempfile
from pathlib import Path


def write_bytes_if_changed(path, data: bytes) -> bool:
    """Write via temp file + rename; skip entirely when contents are identical."""
    path = Path(path)
    if path.exists() and path.read_bytes() == data:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(tmp)
        raise
    return True


def write_text_if_changed(path, text: str) -> bool:
    return write_bytes_if_changed(path, text.encode("utf-8"))


class DirectoryLock:
    """Exclusive lock file; a second holder fails immediately."""

    def __init__(self, directory, name: str = ".lock"):
        self.path = Path(directory) / name
        self._fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"{self.path.parent} is locked by another process ({self.path})") from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self._fd)
        with contextlib.suppress(FileNotFoundError):
            os.remove(self.path)
