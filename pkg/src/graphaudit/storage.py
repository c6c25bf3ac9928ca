"""Atomic, lock-guarded JSON file persistence shared by every project store.

All mutation flows through :func:`atomic_update`, which holds an exclusive
inter-process lock (``fcntl.flock`` on a sidecar ``<path>.lock`` file) plus an
intra-process per-path lock for the read-transform-write cycle.  Writes go to
a temporary file in the same directory and are committed with ``os.replace``,
so a crash mid-write never exposes a partial document.

``flock`` is advisory and unreliable on networked filesystems; keep project
stores on local disk.
"""

from __future__ import annotations

import contextlib
import fcntl
import json
import os
import tempfile
import threading
import time
from pathlib import Path
from typing import Any, Callable, Iterator

from .errors import CorruptStore, LockTimeout, StoreVersionConflict

DEFAULT_LOCK_TIMEOUT = 30.0
LOCK_RETRY_INTERVAL = 0.01

# One lock per resolved path so threads in this process serialize before
# contending on the (process-wide) flock.
_path_locks: dict[str, threading.Lock] = {}
_path_locks_guard = threading.Lock()


def _thread_lock_for(path: Path) -> threading.Lock:
    key = str(path.resolve())
    with _path_locks_guard:
        lock = _path_locks.get(key)
        if lock is None:
            lock = _path_locks[key] = threading.Lock()
        return lock


@contextlib.contextmanager
def locked(path: Path, timeout: float = DEFAULT_LOCK_TIMEOUT) -> Iterator[None]:
    """Hold the exclusive thread + process lock for *path*.

    Raises LockTimeout if either level cannot be acquired before *timeout*
    elapses (total, not per level).
    """
    deadline = time.monotonic() + timeout
    tlock = _thread_lock_for(path)
    if not tlock.acquire(timeout=timeout):
        raise LockTimeout(f"thread lock on {path} not acquired within {timeout}s")
    lock_path = path.with_name(path.name + ".lock")
    fd = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(str(lock_path), os.O_CREAT | os.O_RDWR, 0o644)
        while True:
            try:
                fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
                break
            except OSError:
                if time.monotonic() >= deadline:
                    raise LockTimeout(
                        f"file lock on {path} not acquired within {timeout}s; "
                        f"remove {lock_path} if no other process is running"
                    )
                time.sleep(LOCK_RETRY_INTERVAL)
        yield
    finally:
        if fd is not None:
            with contextlib.suppress(OSError):
                fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)
        tlock.release()


def read_store(path: Path, default: Any) -> Any:
    """Parse the JSON document at *path*, or return *default* when absent.

    A file that exists but does not parse raises CorruptStore; the store is
    never silently reinitialized over unreadable data.
    """
    path = Path(path)
    if not path.exists():
        return default
    try:
        text = path.read_text(encoding="utf-8")
        return json.loads(text)
    except (OSError, ValueError) as exc:
        raise CorruptStore(f"{path}: {exc}") from exc


def dump_json(payload: Any) -> str:
    """Canonical serialization for store documents (sorted keys, trailing NL)."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_bytes_atomic(path: Path, data: bytes) -> None:
    """Write *data* via temp-file-then-rename; no locking (single writer)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _check_version_monotonic(old: Any, new: Any, path: Path) -> None:
    # Documents that track a schema_version may never write a smaller one.
    if isinstance(old, dict) and isinstance(new, dict):
        old_v, new_v = old.get("schema_version"), new.get("schema_version")
        if isinstance(old_v, int) and isinstance(new_v, int) and new_v < old_v:
            raise StoreVersionConflict(
                f"{path}: schema_version would regress {old_v} -> {new_v}"
            )


def atomic_update(
    path: Path,
    transform: Callable[[Any], Any],
    default: Any = None,
    timeout: float = DEFAULT_LOCK_TIMEOUT,
) -> Any:
    """Apply *transform* to the document at *path* under exclusive locks.

    Reads the current payload (or *default* when the file is absent), applies
    *transform*, writes the result to a temp file, and renames it over the
    original; the rename is the commit point.  Returns the new payload.

    *transform* must be pure with respect to the payload: it is invoked
    exactly once per call, with the payload as its only input.
    """
    path = Path(path)
    with locked(path, timeout=timeout):
        current = read_store(path, default)
        updated = transform(current)
        _check_version_monotonic(current, updated, path)
        write_bytes_atomic(path, dump_json(updated).encode("utf-8"))
        return updated
