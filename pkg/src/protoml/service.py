"""HTTP facade over validate/generate/projects/registry for the editor UI.

Validate and generate are stateless: the response is a function of the
request body alone.  Project storage uses optimistic concurrency with a
content-hash revision token and atomic single-file replacement, so a
reader always sees either the old or the new project, never a mix.
"""

from __future__ import annotations

import json
import re
import threading
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response

from . import api
from .diagnostics import dumps_canonical, dumps_compact
from .documents import ParseError, component_from_doc, parse_package_manifest, payload_hash
from .model import FORMAT_VERSION, SchemaError
from .registry import list_packages, read_package_payload
from .storage import write_file_atomic

_PROJECT_ID_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_\-]*$")


def _respond(status: int, envelope: Mapping[str, Any]) -> Response:
    return Response(
        content=dumps_canonical(envelope),
        status_code=status,
        media_type="application/json",
    )


def _request_id_for_raw(raw: bytes) -> str:
    import hashlib

    return "sha256:" + hashlib.sha256(raw).hexdigest()


def _request_id_for_route(method: str, path: str) -> str:
    return payload_hash({"method": method, "path": path})


class ProjectStore:
    """Workspace of project document sets, one JSON file per project."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, project_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(project_id, threading.Lock())

    def _path(self, project_id: str) -> Path:
        return self.root / f"{project_id}.json"

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))

    def get(self, project_id: str) -> tuple[str, dict] | None:
        path = self._path(project_id)
        if not path.is_file():
            return None
        stored = json.loads(path.read_text(encoding="utf-8"))
        documents = stored.get("documents", {})
        return payload_hash(documents), documents

    def put(self, project_id: str, base_revision: str | None, documents: Mapping[str, Any]) -> tuple[bool, str]:
        """Returns (accepted, revision); stale base revisions are rejected."""
        with self._lock(project_id):
            current = self.get(project_id)
            current_revision = current[0] if current is not None else None
            if base_revision != current_revision:
                return False, current_revision or ""
            write_file_atomic(
                self._path(project_id),
                dumps_canonical({"format_version": FORMAT_VERSION, "documents": dict(documents)}),
            )
            return True, payload_hash(documents)


def _check_document_schemas(documents: Mapping[str, Any]) -> str | None:
    """Schema-check a workspace payload without requiring a complete graph."""
    if "project.json" not in documents:
        return "missing project.json"
    for path in sorted(documents):
        doc = documents[path]
        parts = path.split("/")
        try:
            if parts[-1] == "manifest.json" and parts[0] == "packages":
                parse_package_manifest(doc, path)
            elif parts[0] in ("mutators", "blocks") and len(parts) == 2:
                component_from_doc(doc, strict=False)
            elif parts[0] == "packages" and len(parts) == 5 and parts[3] in ("mutators", "blocks"):
                component_from_doc(doc, strict=False)
            elif path in ("project.json", "packages.lock"):
                if not isinstance(doc, Mapping):
                    return f"{path}: expected an object"
            else:
                return f"{path}: unexpected file"
        except (ParseError, SchemaError) as exc:
            return f"{path}: {exc}"
    return None


def create_app(
    workspace: Path,
    registry_root: Path,
    cors_origins: list[str] | None = None,
) -> FastAPI:
    app = FastAPI(title="protoml service", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = ProjectStore(Path(workspace))
    registry = Path(registry_root)

    async def _body_documents(request: Request) -> tuple[Any, Response | None]:
        raw = await request.body()
        rid = _request_id_for_raw(raw)
        try:
            body = json.loads(raw) if raw else None
        except json.JSONDecodeError as exc:
            return None, _respond(400, api.error_envelope(rid, api.MALFORMED_BODY, f"invalid JSON: {exc}"))
        if not isinstance(body, Mapping) or not isinstance(body.get("documents"), Mapping):
            return None, _respond(
                400,
                api.error_envelope(rid, api.MALFORMED_BODY, "body must be an object with a 'documents' map"),
            )
        return body, None

    @app.post("/api/validate")
    async def validate(request: Request) -> Response:
        body, failure = await _body_documents(request)
        if failure is not None:
            return failure
        status, envelope = api.validate_documents(body["documents"], body.get("request_id"))
        return _respond(status, envelope)

    @app.post("/api/generate")
    async def generate(request: Request, force: bool = False) -> Response:
        body, failure = await _body_documents(request)
        if failure is not None:
            return failure
        status, envelope = api.generate_documents(body["documents"], force, body.get("request_id"))
        return _respond(status, envelope)

    @app.get("/api/projects")
    def list_projects() -> Response:
        rid = _request_id_for_route("GET", "/api/projects")
        return _respond(200, api.payload_envelope(rid, {"projects": store.list_ids()}))

    @app.get("/api/projects/{project_id}")
    def get_project(project_id: str) -> Response:
        rid = _request_id_for_route("GET", f"/api/projects/{project_id}")
        if not _PROJECT_ID_RE.match(project_id):
            return _respond(400, api.error_envelope(rid, api.MALFORMED_BODY, f"bad project id {project_id!r}"))
        found = store.get(project_id)
        if found is None:
            return _respond(404, api.error_envelope(rid, "NOT_FOUND", f"no project {project_id!r}"))
        revision, documents = found
        return _respond(200, api.payload_envelope(rid, {"revision": revision, "documents": documents}))

    @app.put("/api/projects/{project_id}")
    async def put_project(project_id: str, request: Request) -> Response:
        raw = await request.body()
        rid = _request_id_for_raw(raw)
        if not _PROJECT_ID_RE.match(project_id):
            return _respond(400, api.error_envelope(rid, api.MALFORMED_BODY, f"bad project id {project_id!r}"))
        try:
            body = json.loads(raw) if raw else None
        except json.JSONDecodeError as exc:
            return _respond(400, api.error_envelope(rid, api.MALFORMED_BODY, f"invalid JSON: {exc}"))
        if not isinstance(body, Mapping) or not isinstance(body.get("documents"), Mapping):
            return _respond(
                400,
                api.error_envelope(rid, api.MALFORMED_BODY, "body must be an object with a 'documents' map"),
            )
        problem = _check_document_schemas(body["documents"])
        if problem is not None:
            return _respond(400, api.error_envelope(rid, api.SCHEMA_ERROR, problem))
        accepted, revision = store.put(project_id, body.get("revision"), body["documents"])
        if not accepted:
            return _respond(
                409,
                api.error_envelope(rid, "STALE_REVISION", "project changed since the given revision", location=revision),
            )
        return _respond(200, api.payload_envelope(rid, {"revision": revision}))

    @app.get("/api/registry/packages")
    def registry_packages() -> Response:
        rid = _request_id_for_route("GET", "/api/registry/packages")
        packages = [
            {"name": name, "versions": versions}
            for name, versions in sorted(list_packages(registry).items())
        ]
        return _respond(200, api.payload_envelope(rid, {"packages": packages}))

    @app.get("/api/registry/packages/{name}/{version}")
    def registry_package(name: str, version: str) -> Response:
        rid = _request_id_for_route("GET", f"/api/registry/packages/{name}/{version}")
        try:
            payload = read_package_payload(registry, name, version)
        except Exception:
            return _respond(404, api.error_envelope(rid, "NOT_FOUND", f"no package {name} {version}"))
        return _respond(200, api.payload_envelope(rid, {
            "manifest": payload["manifest.json"],
            "documents": {k: v for k, v in payload.items() if k != "manifest.json"},
        }))

    return app
