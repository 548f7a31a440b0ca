"""Project trees on disk: load, save, and atomic replacement.

Layout: ``project.json`` at the root, one component document per file under
``mutators/`` and ``blocks/``, vendored packages under ``packages/`` and the
``packages.lock`` lockfile.  Saving writes each file to a temporary name and
renames it into place; two saves of the same project are byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

from .diagnostics import dumps_canonical
from .documents import ParseError, parse_project_payload, project_to_payload
from .model import Project, SchemaError


class ProjectIOError(OSError):
    """Filesystem-level failure while reading or writing a project tree."""


_MANAGED_DIRS = ("mutators", "blocks", "packages")


def read_payload(root: Path) -> dict[str, Any]:
    """Read a project tree into the canonical path -> document map."""
    root = Path(root)
    manifest = root / "project.json"
    if not manifest.is_file():
        raise ProjectIOError(f"missing manifest {manifest}")
    payload: dict[str, Any] = {}
    paths = [manifest, root / "packages.lock"]
    for sub in _MANAGED_DIRS:
        base = root / sub
        if base.is_dir():
            paths.extend(sorted(p for p in base.rglob("*.json") if p.is_file()))
    for path in paths:
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        try:
            payload[rel] = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{rel}: invalid JSON: {exc}") from None
    return payload


def load_project(root: Path, strict: bool = True) -> Project:
    """Load and resolve a project tree.

    Raises ParseError for malformed documents, SchemaError for invariant
    violations (including unresolved references and recursive block
    instantiation) and ProjectIOError when the manifest is missing.
    """
    return parse_project_payload(read_payload(root), strict=strict)


def write_file_atomic(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_payload(payload: Mapping[str, Any], root: Path) -> None:
    """Write a payload to disk, removing stale managed files."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for rel in sorted(payload):
        write_file_atomic(root / rel, dumps_canonical(payload[rel]))
    # Drop files a previous save produced that this project no longer has.
    keep = set(payload)
    for sub in _MANAGED_DIRS:
        base = root / sub
        if not base.is_dir():
            continue
        for path in sorted(base.rglob("*.json")):
            rel = path.relative_to(root).as_posix()
            if rel not in keep:
                path.unlink()
    lock = root / "packages.lock"
    if "packages.lock" not in keep and lock.is_file():
        lock.unlink()


def save_project(project: Project, root: Path) -> None:
    write_payload(project_to_payload(project), root)
