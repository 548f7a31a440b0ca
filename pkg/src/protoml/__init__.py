"""protoml: compile visual neural-network component graphs to PyTorch source.

Components (mutators) wrap init/forward code templates with ports, parameter
schemas and shape contracts; blocks compose them into DAGs.  This package
loads and saves component documents, validates graphs and shapes, emits one
module class per block, and manages a local versioned component registry,
with a CLI and an HTTP service on top.
"""

from .codegen import (
    GeneratedFile,
    GenerationError,
    GenerationRefused,
    generate_block,
    generate_project,
    substitute_tokens,
)
from .diagnostics import Diagnostic, Severity, ValidationReport
from .documents import (
    ParseError,
    component_from_doc,
    component_to_doc,
    parse_project_payload,
    payload_hash,
    project_to_payload,
)
from .graph import CycleError, topo_sort
from .model import (
    Block,
    Edge,
    JoinPolicy,
    LocalVar,
    LockEntry,
    Mutator,
    NodeInstance,
    ParamSpec,
    Project,
    SchemaError,
    VendoredPackage,
)
from .shapes import ShapePattern, UnifyMismatch, unify_shapes
from .storage import ProjectIOError, load_project, save_project
from .validation import (
    check_graph,
    propagate_shapes,
    validate_params,
    validate_project,
)

__version__ = "0.1.0"


def load_component(document: str):
    """Parse one component document (JSON text) into a Mutator or Block."""
    import json

    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    return component_from_doc(doc, strict=True)


__all__ = [
    "Block",
    "CycleError",
    "Diagnostic",
    "Edge",
    "GeneratedFile",
    "GenerationError",
    "GenerationRefused",
    "JoinPolicy",
    "LocalVar",
    "LockEntry",
    "Mutator",
    "NodeInstance",
    "ParamSpec",
    "ParseError",
    "Project",
    "ProjectIOError",
    "SchemaError",
    "Severity",
    "ShapePattern",
    "UnifyMismatch",
    "ValidationReport",
    "VendoredPackage",
    "check_graph",
    "component_from_doc",
    "component_to_doc",
    "generate_block",
    "generate_project",
    "load_component",
    "load_project",
    "parse_project_payload",
    "payload_hash",
    "project_to_payload",
    "propagate_shapes",
    "save_project",
    "substitute_tokens",
    "topo_sort",
    "unify_shapes",
    "validate_params",
    "validate_project",
]
