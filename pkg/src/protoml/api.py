"""Request/response logic shared by the HTTP service and the CLI.

Responses are enveloped as ``{"request_id": ..., "payload": ...}`` or
``{"request_id": ..., "error": {code, message[, location]}}``.  When the
client does not supply a request id, one is derived from a content hash of
the request, so identical requests always produce byte-identical responses
and the CLI's --json output matches the service's bytes exactly.
"""

from __future__ import annotations

from typing import Any, Mapping

from .codegen import GenerationRefused, generate_project
from .diagnostics import ValidationReport
from .documents import ParseError, parse_project_payload, payload_hash
from .model import SchemaError
from .validation import validate_project

# Error codes used alongside the diagnostic codes.
MALFORMED_BODY = "MALFORMED_BODY"
PARSE_ERROR = "PARSE_ERROR"
SCHEMA_ERROR = "SCHEMA_ERROR"


def request_id_for_documents(documents: Mapping[str, Any]) -> str:
    return payload_hash(documents)


def error_envelope(request_id: str, code: str, message: str, location: str | None = None) -> dict:
    error: dict[str, Any] = {"code": code, "message": message}
    if location:
        error["location"] = location
    return {"request_id": request_id, "error": error}


def payload_envelope(request_id: str, payload: Mapping[str, Any]) -> dict:
    return {"request_id": request_id, "payload": dict(payload)}


def _parse_documents(documents: Mapping[str, Any], request_id: str):
    """Returns (project, None) or (None, (status, envelope))."""
    try:
        project = parse_project_payload(documents, strict=True)
    except ParseError as exc:
        return None, (400, error_envelope(request_id, PARSE_ERROR, str(exc)))
    except SchemaError as exc:
        if exc.diagnostics:
            report = ValidationReport(diagnostics=list(exc.diagnostics))
            return None, (422, payload_envelope(request_id, {"report": report.to_doc()}))
        return None, (400, error_envelope(request_id, SCHEMA_ERROR, str(exc), location=exc.path))
    return project, None


def validate_documents(documents: Mapping[str, Any], request_id: str | None = None) -> tuple[int, dict]:
    """Validate a serialized project; (status, envelope)."""
    rid = request_id or request_id_for_documents(documents)
    project, failure = _parse_documents(documents, rid)
    if failure is not None:
        return failure
    report = validate_project(project)
    status = 200 if report.passed else 422
    return status, payload_envelope(rid, {"report": report.to_doc()})


def generate_documents(
    documents: Mapping[str, Any],
    force: bool = False,
    request_id: str | None = None,
) -> tuple[int, dict]:
    """Generate source files for a serialized project; (status, envelope)."""
    rid = request_id or request_id_for_documents(documents)
    project, failure = _parse_documents(documents, rid)
    if failure is not None:
        status, envelope = failure
        if status == 422 and not force:
            return 409, envelope
        if status == 422 and force:
            # Structural load failures cannot be downgraded: there is no
            # graph to traverse.  Report them as refusal regardless.
            return 409, envelope
        return failure
    report = validate_project(project)
    if not report.passed and not force:
        return 409, payload_envelope(rid, {"report": report.to_doc()})
    try:
        files = generate_project(project, force=True, report=report, validate=True)
    except GenerationRefused as exc:  # pragma: no cover - force above prevents this
        return 409, payload_envelope(rid, {"report": exc.report.to_doc()})
    return 200, payload_envelope(rid, {
        "files": [{"path": f.path, "content": f.content} for f in files],
        "report": report.to_doc(),
    })
