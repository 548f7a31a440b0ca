"""Local versioned component registry: publish, resolve, vendor.

The registry is a directory tree ``<root>/<name>/<version>/`` holding a
manifest, component documents and free-form docs.  Published versions are
immutable; publishing relies on an atomic directory rename so concurrent
publishes of the same version have exactly one winner.  Version
requirements use caret semantics: compatible within the leftmost nonzero
component.
"""

from __future__ import annotations

import json
import re
import shutil
import tempfile
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .diagnostics import dumps_canonical
from .documents import (
    ParseError,
    component_from_doc,
    parse_package_manifest,
    payload_hash,
)
from .model import SchemaError, component_namespace

_NAME_RE = re.compile(r"^[a-z0-9][a-z0-9_\-]*$")
_VERSION_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")


class RegistryError(Exception):
    """Base error for registry operations."""


class VersionExists(RegistryError):
    """Publishing a name+version that is already in the registry."""


class PackageInvalid(RegistryError):
    """The package directory fails manifest or component validation."""


class ResolutionError(RegistryError):
    """No version satisfies the collected constraints."""


class HashMismatch(RegistryError):
    """Registry content no longer matches a locked hash."""


@dataclass(frozen=True, order=True)
class Version:
    major: int
    minor: int
    patch: int

    @classmethod
    def parse(cls, text: str) -> "Version":
        match = _VERSION_RE.match(text)
        if not match:
            raise PackageInvalid(f"bad version {text!r}; expected MAJOR.MINOR.PATCH")
        return cls(*(int(g) for g in match.groups()))

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}"


@dataclass(frozen=True)
class Requirement:
    """``^X[.Y[.Z]]`` caret requirement or an exact ``X.Y.Z`` pin."""

    text: str

    def __post_init__(self) -> None:
        self._bounds()  # validate eagerly

    def _bounds(self) -> tuple[Version, Version]:
        """Half-open [low, high) interval of admitted versions."""
        text = self.text.strip()
        if text.startswith("^"):
            parts = text[1:].split(".")
            if not 1 <= len(parts) <= 3 or not all(p.isdigit() for p in parts):
                raise PackageInvalid(f"bad requirement {self.text!r}")
            nums = [int(p) for p in parts] + [0] * (3 - len(parts))
            low = Version(*nums)
            if nums[0] > 0:
                high = Version(nums[0] + 1, 0, 0)
            elif len(parts) >= 2 and nums[1] > 0:
                high = Version(0, nums[1] + 1, 0)
            elif len(parts) == 3 and nums[1] == 0:
                high = Version(0, 0, nums[2] + 1)
            elif len(parts) >= 2:
                high = Version(0, nums[1] + 1, 0)
            else:
                high = Version(1, 0, 0)
            return low, high
        exact = Version.parse(text)
        return exact, Version(exact.major, exact.minor, exact.patch + 1)

    def satisfied_by(self, version: Version) -> bool:
        low, high = self._bounds()
        if not self.text.strip().startswith("^"):
            return version == low
        return low <= version < high


@dataclass(frozen=True)
class VersionRecord:
    name: str
    version: str
    hash: str


def _package_payload_from_dir(package_dir: Path) -> tuple[dict[str, Any], dict[str, Any]]:
    """Load and validate a package directory; returns (manifest, payload)."""
    package_dir = Path(package_dir)
    manifest_path = package_dir / "manifest.json"
    if not manifest_path.is_file():
        raise PackageInvalid(f"missing manifest {manifest_path}")
    try:
        manifest = parse_package_manifest(json.loads(manifest_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ParseError) as exc:
        raise PackageInvalid(f"bad manifest: {exc}") from None

    name = manifest["name"]
    if not _NAME_RE.match(name):
        raise PackageInvalid(f"bad package name {name!r}")
    Version.parse(manifest["version"])
    for req in manifest["dependencies"].values():
        Requirement(req)

    payload: dict[str, Any] = {"manifest.json": manifest}
    found_ids = set()
    for sub in ("mutators", "blocks"):
        base = package_dir / sub
        if not base.is_dir():
            continue
        for path in sorted(base.glob("*.json")):
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
                component = component_from_doc(doc, strict=True)
            except (json.JSONDecodeError, ParseError, SchemaError) as exc:
                raise PackageInvalid(f"component {path.name}: {exc}") from None
            if component_namespace(component.id) != name:
                raise PackageInvalid(
                    f"component {component.id!r} is not namespaced by package {name!r}"
                )
            found_ids.add(component.id)
            payload[f"{sub}/{path.name}"] = doc
    declared = set(manifest["components"])
    if found_ids != declared:
        missing = sorted(declared - found_ids)
        extra = sorted(found_ids - declared)
        raise PackageInvalid(
            f"manifest component list does not match documents"
            f" (missing {missing}, undeclared {extra})"
        )
    docs_name = manifest.get("docs")
    if docs_name and not (package_dir / docs_name).is_file():
        raise PackageInvalid(f"docs file {docs_name!r} named in manifest is missing")
    return manifest, payload


def package_hash(payload: Mapping[str, Any]) -> str:
    return payload_hash(payload)


def publish(package_dir: Path, registry_root: Path) -> VersionRecord:
    """Copy a validated package into the registry; versions are immutable."""
    package_dir = Path(package_dir)
    registry_root = Path(registry_root)
    manifest, payload = _package_payload_from_dir(package_dir)
    name, version = manifest["name"], manifest["version"]

    final = registry_root / name / version
    if final.exists():
        raise VersionExists(f"{name} {version} is already published")
    (registry_root / name).mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=registry_root, prefix=f".publish-{name}-"))
    try:
        for rel in sorted(payload):
            target = tmp / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(dumps_canonical(payload[rel]), encoding="utf-8")
        docs_name = manifest.get("docs")
        if docs_name:
            shutil.copyfile(package_dir / docs_name, tmp / docs_name)
        try:
            os.rename(tmp, final)
        except OSError:
            raise VersionExists(f"{name} {version} is already published") from None
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)
    return VersionRecord(name=name, version=version, hash=package_hash(payload))


def list_packages(registry_root: Path) -> dict[str, list[str]]:
    registry_root = Path(registry_root)
    found: dict[str, list[str]] = {}
    if not registry_root.is_dir():
        return found
    for pkg_dir in sorted(registry_root.iterdir()):
        if not pkg_dir.is_dir() or pkg_dir.name.startswith("."):
            continue
        versions = [
            v.name for v in sorted(pkg_dir.iterdir(), key=lambda p: _version_key(p.name))
            if v.is_dir() and _VERSION_RE.match(v.name)
        ]
        if versions:
            found[pkg_dir.name] = versions
    return found


def _version_key(text: str):
    match = _VERSION_RE.match(text)
    return tuple(int(g) for g in match.groups()) if match else (0, 0, 0)


def read_package_payload(registry_root: Path, name: str, version: str) -> dict[str, Any]:
    base = Path(registry_root) / name / version
    manifest_path = base / "manifest.json"
    if not manifest_path.is_file():
        raise ResolutionError(f"package {name} {version} not found in registry")
    payload: dict[str, Any] = {
        "manifest.json": parse_package_manifest(json.loads(manifest_path.read_text(encoding="utf-8")))
    }
    for sub in ("mutators", "blocks"):
        sub_dir = base / sub
        if sub_dir.is_dir():
            for path in sorted(sub_dir.glob("*.json")):
                payload[f"{sub}/{path.name}"] = json.loads(path.read_text(encoding="utf-8"))
    return payload


def resolve(requirements: Mapping[str, str], registry_root: Path) -> dict[str, str]:
    """Pick the highest version of each package satisfying all constraints.

    Transitive dependencies are included.  A name whose accumulated
    constraints admit no available version is a conflict; the error reports
    the constraint set.
    """
    registry_root = Path(registry_root)
    available = {
        name: [Version.parse(v) for v in versions]
        for name, versions in list_packages(registry_root).items()
    }
    root_constraints = {name: Requirement(req) for name, req in requirements.items()}

    chosen: dict[str, Version] = {}
    for _ in range(100):
        constraints: dict[str, list[tuple[str, Requirement]]] = {
            name: [("project", req)] for name, req in root_constraints.items()
        }
        for name, version in sorted(chosen.items()):
            manifest_path = registry_root / name / str(version) / "manifest.json"
            manifest = parse_package_manifest(json.loads(manifest_path.read_text(encoding="utf-8")))
            for dep, req in manifest["dependencies"].items():
                constraints.setdefault(dep, []).append((f"{name} {version}", Requirement(req)))

        next_chosen: dict[str, Version] = {}
        for name in sorted(constraints):
            reqs = constraints[name]
            if name not in available:
                raise ResolutionError(f"package {name!r} not found in registry")
            candidates = [
                v for v in available[name]
                if all(req.satisfied_by(v) for _, req in reqs)
            ]
            if not candidates:
                detail = ", ".join(f"{origin} wants {req.text}" for origin, req in reqs)
                raise ResolutionError(f"no version of {name!r} satisfies: {detail}")
            next_chosen[name] = max(candidates)
        if next_chosen == chosen:
            break
        chosen = next_chosen
    else:  # pragma: no cover - tiny registries converge quickly
        raise ResolutionError("resolution did not converge")
    return {name: str(version) for name, version in sorted(chosen.items())}


def vendor(project_dir: Path, resolution: Mapping[str, str], registry_root: Path):
    """Copy resolved packages into the project store and write the lockfile.

    Returns the reloaded Project.  Vendoring the same resolution from an
    unchanged registry is a byte-level no-op; a registry whose content no
    longer matches an existing lock entry is reported as tampering.
    """
    from .documents import lockfile_doc
    from .model import LockEntry
    from .storage import load_project, write_file_atomic

    project_dir = Path(project_dir)
    registry_root = Path(registry_root)

    existing: dict[str, LockEntry] = {}
    lock_path = project_dir / "packages.lock"
    if lock_path.is_file():
        lock_doc = json.loads(lock_path.read_text(encoding="utf-8"))
        for entry in lock_doc.get("packages", []):
            existing[entry["name"]] = LockEntry(entry["name"], entry["version"], entry["hash"])

    entries = []
    for name in sorted(resolution):
        version = resolution[name]
        payload = read_package_payload(registry_root, name, version)
        digest = package_hash(payload)
        prior = existing.get(name)
        if prior is not None and prior.version == version and prior.hash != digest:
            raise HashMismatch(
                f"{name} {version} in the registry no longer matches the lockfile"
                f" ({prior.hash} -> {digest})"
            )
        entries.append(LockEntry(name=name, version=version, hash=digest))
        base = project_dir / "packages" / name / version
        for rel in sorted(payload):
            write_file_atomic(base / rel, dumps_canonical(payload[rel]))

    # Remove vendored packages that are no longer part of the resolution.
    store = project_dir / "packages"
    if store.is_dir():
        for pkg_dir in sorted(store.iterdir()):
            if not pkg_dir.is_dir():
                continue
            if pkg_dir.name not in resolution:
                shutil.rmtree(pkg_dir)
                continue
            for version_dir in sorted(pkg_dir.iterdir()):
                if version_dir.is_dir() and version_dir.name != resolution[pkg_dir.name]:
                    shutil.rmtree(version_dir)

    write_file_atomic(lock_path, dumps_canonical(lockfile_doc(tuple(entries))))
    return load_project(project_dir)
