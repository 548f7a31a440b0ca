"""Structured diagnostics and the validation report.

Diagnostic codes are a stable public contract; the service, CLI and editor
match on them.  See README for the full catalogue.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


# Graph structure
GRAPH_CYCLE = "GRAPH_CYCLE"
UNCONNECTED_INPUT = "UNCONNECTED_INPUT"
MISSING_JOIN_POLICY = "MISSING_JOIN_POLICY"
UNUSED_JOIN_POLICY = "UNUSED_JOIN_POLICY"
DANGLING_OUTPUT = "DANGLING_OUTPUT"
EDGE_PORT_RANGE = "EDGE_PORT_RANGE"

# Parameters
PARAM_MISSING = "PARAM_MISSING"
PARAM_TYPE = "PARAM_TYPE"
PARAM_RANGE = "PARAM_RANGE"
PARAM_UNKNOWN = "PARAM_UNKNOWN"

# Shapes
SHAPE_MISMATCH = "SHAPE_MISMATCH"
SHAPE_RANK = "SHAPE_RANK"
SHAPE_EVAL = "SHAPE_EVAL"
VALIDATION_SKIPPED = "VALIDATION_SKIPPED"
REPEAT_SHAPE = "REPEAT_SHAPE"
REPEAT_ARITY = "REPEAT_ARITY"
BRANCH_SHAPE = "BRANCH_SHAPE"

# Project level
NO_ENTRY_CONTENT = "NO_ENTRY_CONTENT"
UNRESOLVED_REF = "UNRESOLVED_REF"
RECURSIVE_BLOCK = "RECURSIVE_BLOCK"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str
    block: str | None = None
    node: str | None = None
    port: int | None = None
    param: str | None = None
    path: str | None = None  # instance path for diagnostics found during descent

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "severity": self.severity.value,
            "code": self.code,
            "message": self.message,
        }
        for key in ("block", "node", "port", "param", "path"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        return doc

    def render(self) -> str:
        where = [p for p in (self.block, self.path or None, self.node) if p]
        loc = ":".join(where)
        if self.port is not None:
            loc += f"#{self.port}"
        if self.param is not None:
            loc += f".{self.param}"
        return f"{self.severity.value}[{self.code}] {loc}: {self.message}"


def error(code: str, message: str, **loc: Any) -> Diagnostic:
    return Diagnostic(Severity.ERROR, code, message, **loc)


def warning(code: str, message: str, **loc: Any) -> Diagnostic:
    return Diagnostic(Severity.WARNING, code, message, **loc)


@dataclass
class ValidationReport:
    """Ordered diagnostics plus computed output shapes per block instance."""

    diagnostics: list[Diagnostic] = field(default_factory=list)
    shapes: dict[str, list] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not any(d.severity is Severity.ERROR for d in self.diagnostics)

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity is Severity.ERROR]

    def warnings(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity is Severity.WARNING]

    def to_doc(self) -> dict[str, Any]:
        return {
            "pass": self.passed,
            "diagnostics": [d.to_doc() for d in self.diagnostics],
            "shapes": {k: v for k, v in sorted(self.shapes.items())},
        }

    def render(self) -> str:
        lines = [d.render() for d in self.diagnostics]
        lines.append(f"{'pass' if self.passed else 'FAIL'}: {len(self.errors())} error(s), {len(self.warnings())} warning(s)")
        return "\n".join(lines)


def dumps_canonical(doc: Any) -> str:
    """The one JSON layout used for files, reports and HTTP bodies."""
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def dumps_compact(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))
