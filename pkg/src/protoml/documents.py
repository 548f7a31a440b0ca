"""Canonical on-disk / on-wire document formats.

One JSON document per component, one manifest per project.  The same
schemas travel over HTTP, so there is a single source of truth for the
editor, the CLI and the files.  All emission goes through the canonical
dumper (sorted keys, two-space indent, trailing newline), which is what
makes saves, reports and API responses byte-deterministic.
"""

from __future__ import annotations

import hashlib
from typing import Any, Mapping

from . import diagnostics as diag
from .diagnostics import dumps_compact
from .exprs import ExprError, ParamExpr, binding_to_doc, parse_binding
from .model import (
    FORMAT_VERSION,
    Block,
    Component,
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
    component_name,
    component_namespace,
)
from .shapes import (
    OutputShapeExpr,
    ShapeLanguageError,
    ShapePattern,
    parse_output_expr,
    parse_pattern,
)


class ParseError(ValueError):
    """The document is not well-formed (bad JSON shape, wrong field types)."""


def _expect_map(doc: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(doc, Mapping):
        raise ParseError(f"{path}: expected an object, got {type(doc).__name__}")
    return doc


def _take(doc: Mapping[str, Any], consumed: set[str], key: str, default: Any = None) -> Any:
    consumed.add(key)
    return doc.get(key, default)

def _reject_unknown(doc: Mapping[str, Any], consumed: set[str], path: str) -> None:
    unknown = sorted(set(doc) - consumed)
    if unknown:
        raise ParseError(f"{path}: unknown fields {unknown}")


def _check_version(doc: Mapping[str, Any], consumed: set[str], path: str) -> None:
    version = _take(doc, consumed, "format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format_version {version!r}")


def _parse_patterns(doc: Any, path: str) -> tuple[ShapePattern, ...] | None:
    if doc is None:
        return None
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a list of patterns")
    try:
        return tuple(parse_pattern(p) for p in doc)
    except ShapeLanguageError as exc:
        raise SchemaError(str(exc), path) from None


def _parse_output_exprs(doc: Any, path: str) -> tuple[OutputShapeExpr, ...] | None:
    if doc is None:
        return None
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a list of shape exprs")
    try:
        return tuple(parse_output_expr(e) for e in doc)
    except ShapeLanguageError as exc:
        raise SchemaError(str(exc), path) from None


def param_spec_from_doc(doc: Any, path: str) -> ParamSpec:
    doc = _expect_map(doc, path)
    consumed: set[str] = set()
    name = _take(doc, consumed, "name")
    ptype = _take(doc, consumed, "type")
    required = _take(doc, consumed, "required", False)
    default = _take(doc, consumed, "default")
    minimum = _take(doc, consumed, "min")
    maximum = _take(doc, consumed, "max")
    choices = _take(doc, consumed, "choices")
    shape_pattern = _take(doc, consumed, "shape_pattern")
    _reject_unknown(doc, consumed, path)
    if not isinstance(name, str) or not isinstance(ptype, str) or not isinstance(required, bool):
        raise ParseError(f"{path}: name/type/required have wrong types")
    if isinstance(default, list):
        default = list(default)
    try:
        return ParamSpec(
            name=name,
            ptype=ptype,
            required=required,
            default=default,
            min=minimum,
            max=maximum,
            choices=tuple(choices) if choices is not None else None,
            shape_pattern=parse_pattern(shape_pattern) if shape_pattern is not None else None,
        )
    except ShapeLanguageError as exc:
        raise SchemaError(str(exc), f"{path}.shape_pattern") from None


def param_spec_to_doc(spec: ParamSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {"name": spec.name, "type": spec.ptype, "required": spec.required}
    if spec.default is not None:
        doc["default"] = spec.default
    if spec.min is not None:
        doc["min"] = spec.min
    if spec.max is not None:
        doc["max"] = spec.max
    if spec.choices is not None:
        doc["choices"] = list(spec.choices)
    if spec.shape_pattern is not None:
        doc["shape_pattern"] = spec.shape_pattern.to_doc()
    return doc


def _parse_params(doc: Any, path: str) -> tuple[ParamSpec, ...]:
    if doc is None:
        return ()
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a list of parameter specs")
    return tuple(param_spec_from_doc(p, f"{path}[{i}]") for i, p in enumerate(doc))


def _parse_binding_doc(value: Any, path: str) -> ParamExpr:
    try:
        return parse_binding(value)
    except ExprError as exc:
        raise SchemaError(str(exc), path) from None


def mutator_from_doc(doc: Mapping[str, Any]) -> Mutator:
    doc = _expect_map(doc, "mutator")
    consumed: set[str] = set()
    _check_version(doc, consumed, "mutator")
    kind = _take(doc, consumed, "kind")
    if kind != "mutator":
        raise ParseError(f"mutator: kind must be 'mutator', got {kind!r}")
    mutator_id = _take(doc, consumed, "id")
    imports = _take(doc, consumed, "imports", [])
    input_count = _take(doc, consumed, "input_count")
    output_count = _take(doc, consumed, "output_count")
    input_patterns = _take(doc, consumed, "input_patterns")
    output_exprs = _take(doc, consumed, "output_exprs")
    params = _take(doc, consumed, "params", [])
    init_code = _take(doc, consumed, "init_code")
    forward_code = _take(doc, consumed, "forward_code")
    extra_code = _take(doc, consumed, "extra_code")
    _reject_unknown(doc, consumed, "mutator")
    if not isinstance(imports, list) or not all(isinstance(s, str) for s in imports):
        raise ParseError("mutator.imports: expected a list of strings")
    if not isinstance(input_count, int) or not isinstance(output_count, int):
        raise ParseError("mutator: input_count/output_count must be integers")
    if not isinstance(init_code, str) or not isinstance(forward_code, str):
        raise ParseError("mutator: init_code and forward_code must be strings")
    return Mutator(
        id=mutator_id,
        imports=tuple(imports),
        input_count=input_count,
        output_count=output_count,
        input_patterns=_parse_patterns(input_patterns, "mutator.input_patterns"),
        output_exprs=_parse_output_exprs(output_exprs, "mutator.output_exprs"),
        params=_parse_params(params, "mutator.params"),
        init_code=init_code,
        forward_code=forward_code,
        extra_code=extra_code,
    )


def mutator_to_doc(mutator: Mutator) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "mutator",
        "id": mutator.id,
        "imports": list(mutator.imports),
        "input_count": mutator.input_count,
        "output_count": mutator.output_count,
        "input_patterns": [p.to_doc() for p in mutator.input_patterns] if mutator.input_patterns is not None else None,
        "output_exprs": [e.to_doc() for e in mutator.output_exprs] if mutator.output_exprs is not None else None,
        "params": [param_spec_to_doc(p) for p in mutator.params],
        "init_code": mutator.init_code,
        "forward_code": mutator.forward_code,
        "extra_code": mutator.extra_code,
    }


def _parse_node(doc: Any, path: str) -> NodeInstance:
    doc = _expect_map(doc, path)
    consumed: set[str] = set()
    node_id = _take(doc, consumed, "id")
    ref = _take(doc, consumed, "ref")
    ref_version = _take(doc, consumed, "ref_version")
    params = _take(doc, consumed, "params", {})
    repeat = _take(doc, consumed, "repeat", 1)
    kind = _take(doc, consumed, "kind", "normal")
    condition = _take(doc, consumed, "condition")
    _reject_unknown(doc, consumed, path)
    if not isinstance(node_id, str) or not isinstance(ref, str):
        raise ParseError(f"{path}: id and ref must be strings")
    if not isinstance(params, Mapping):
        raise ParseError(f"{path}.params: expected an object")
    bindings = {
        name: _parse_binding_doc(value, f"{path}.params.{name}")
        for name, value in params.items()
    }
    if isinstance(repeat, str):
        expr = _parse_binding_doc(repeat, f"{path}.repeat")
        names = expr.names()
        if expr.is_literal or len(names) != 1 or expr.text not in names:
            raise SchemaError("repeat must be an int or a bare ${param} reference", f"{path}.repeat")
        repeat_value: int | str = expr.text
    else:
        repeat_value = repeat
    cond_expr = None
    if condition is not None:
        cond_expr = _parse_binding_doc(condition, f"{path}.condition")
        if cond_expr.is_literal:
            raise SchemaError("condition must be a ${...} expression", f"{path}.condition")
    return NodeInstance(
        node_id=node_id,
        ref=ref,
        ref_version=ref_version,
        bindings=bindings,
        repeat=repeat_value,
        kind=kind,
        condition=cond_expr,
    )


def _node_to_doc(node: NodeInstance) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": node.node_id,
        "ref": node.ref,
        "params": {name: binding_to_doc(expr) for name, expr in sorted(node.bindings.items())},
        "repeat": node.repeat if isinstance(node.repeat, int) else "${" + node.repeat + "}",
        "kind": node.kind,
    }
    if node.ref_version is not None:
        doc["ref_version"] = node.ref_version
    if node.condition is not None:
        doc["condition"] = binding_to_doc(node.condition)
    return doc


def _parse_edge(doc: Any, path: str) -> Edge:
    doc = _expect_map(doc, path)
    consumed: set[str] = set()
    src = _take(doc, consumed, "from")
    dst = _take(doc, consumed, "to")
    branch = _take(doc, consumed, "branch")
    _reject_unknown(doc, consumed, path)
    for end, label in ((src, "from"), (dst, "to")):
        if not (isinstance(end, list) and len(end) == 2 and isinstance(end[0], str) and isinstance(end[1], int)):
            raise ParseError(f"{path}.{label}: expected [node, port]")
    return Edge(src=(src[0], src[1]), dst=(dst[0], dst[1]), branch=branch)


def _edge_to_doc(edge: Edge) -> dict[str, Any]:
    doc: dict[str, Any] = {"from": list(edge.src), "to": list(edge.dst)}
    if edge.branch is not None:
        doc["branch"] = edge.branch
    return doc


def _parse_join(doc: Any, path: str) -> JoinPolicy:
    doc = _expect_map(doc, path)
    consumed: set[str] = set()
    node = _take(doc, consumed, "node")
    port = _take(doc, consumed, "port")
    op = _take(doc, consumed, "op")
    concat_axis = _take(doc, consumed, "concat_axis")
    branch = _take(doc, consumed, "branch")
    _reject_unknown(doc, consumed, path)
    if not isinstance(node, str) or not isinstance(port, int):
        raise ParseError(f"{path}: node must be a string and port an int")
    return JoinPolicy(node_id=node, port=port, op=op, concat_axis=concat_axis, branch=branch)


def _join_to_doc(join: JoinPolicy) -> dict[str, Any]:
    doc: dict[str, Any] = {"node": join.node_id, "port": join.port, "op": join.op}
    if join.concat_axis is not None:
        doc["concat_axis"] = join.concat_axis
    if join.branch is not None:
        doc["branch"] = join.branch
    return doc


def block_from_doc(doc: Mapping[str, Any]) -> Block:
    doc = _expect_map(doc, "block")
    consumed: set[str] = set()
    _check_version(doc, consumed, "block")
    kind = _take(doc, consumed, "kind")
    if kind != "block":
        raise ParseError(f"block: kind must be 'block', got {kind!r}")
    block_id = _take(doc, consumed, "id")
    input_count = _take(doc, consumed, "input_count")
    output_count = _take(doc, consumed, "output_count")
    input_patterns = _take(doc, consumed, "input_patterns")
    output_exprs = _take(doc, consumed, "output_exprs")
    params = _take(doc, consumed, "params", [])
    local_vars = _take(doc, consumed, "local_vars", [])
    nodes = _take(doc, consumed, "nodes", [])
    edges = _take(doc, consumed, "edges", [])
    joins = _take(doc, consumed, "joins", [])
    layout = _take(doc, consumed, "layout")
    _reject_unknown(doc, consumed, "block")
    if not isinstance(input_count, int) or not isinstance(output_count, int):
        raise ParseError("block: input_count/output_count must be integers")
    for name, value in (("local_vars", local_vars), ("nodes", nodes), ("edges", edges), ("joins", joins)):
        if not isinstance(value, list):
            raise ParseError(f"block.{name}: expected a list")
    parsed_vars = []
    for i, var in enumerate(local_vars):
        var = _expect_map(var, f"block.local_vars[{i}]")
        var_consumed: set[str] = set()
        name = _take(var, var_consumed, "name")
        expr = _take(var, var_consumed, "expr")
        _reject_unknown(var, var_consumed, f"block.local_vars[{i}]")
        if not isinstance(name, str):
            raise ParseError(f"block.local_vars[{i}].name: expected a string")
        parsed_vars.append(LocalVar(name=name, expr=_parse_binding_doc(expr, f"block.local_vars[{i}].expr")))
    return Block(
        id=block_id,
        input_count=input_count,
        output_count=output_count,
        input_patterns=_parse_patterns(input_patterns, "block.input_patterns"),
        output_exprs=_parse_output_exprs(output_exprs, "block.output_exprs"),
        params=_parse_params(params, "block.params"),
        local_vars=tuple(parsed_vars),
        nodes=tuple(_parse_node(n, f"block.nodes[{i}]") for i, n in enumerate(nodes)),
        edges=tuple(_parse_edge(e, f"block.edges[{i}]") for i, e in enumerate(edges)),
        joins=tuple(_parse_join(j, f"block.joins[{i}]") for i, j in enumerate(joins)),
        layout=layout,
    )


def block_to_doc(block: Block) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "kind": "block",
        "id": block.id,
        "input_count": block.input_count,
        "output_count": block.output_count,
        "input_patterns": [p.to_doc() for p in block.input_patterns] if block.input_patterns is not None else None,
        "output_exprs": [e.to_doc() for e in block.output_exprs] if block.output_exprs is not None else None,
        "params": [param_spec_to_doc(p) for p in block.params],
        "local_vars": [{"name": v.name, "expr": binding_to_doc(v.expr)} for v in block.local_vars],
        "nodes": [_node_to_doc(n) for n in block.nodes],
        "edges": [_edge_to_doc(e) for e in block.edges],
        "joins": [_join_to_doc(j) for j in block.joins],
    }
    if block.layout is not None:
        doc["layout"] = block.layout
    return doc


def component_from_doc(doc: Mapping[str, Any], strict: bool = True) -> Component:
    """Parse a component document.

    In strict mode, block graphs must also be structurally sound (acyclic,
    inputs connected, joins declared); violations raise SchemaError carrying
    the corresponding diagnostics.  Lenient mode keeps draft graphs loadable
    for the editor workspace.
    """
    kind = _expect_map(doc, "component").get("kind")
    if kind == "mutator":
        return mutator_from_doc(doc)
    if kind == "block":
        block = block_from_doc(doc)
        if strict:
            check_block_structure(block)
        return block
    raise ParseError(f"component: kind must be 'mutator' or 'block', got {kind!r}")


def check_block_structure(block: Block) -> None:
    """Raise SchemaError with diagnostics if the block graph is unsound."""
    from .validation import check_graph  # late import: validation builds on the model

    problems = [d for d in check_graph(block) if d.severity is diag.Severity.ERROR]
    if problems:
        raise SchemaError(
            "; ".join(d.message for d in problems),
            f"block {block.id}",
            diagnostics=problems,
        )


def component_to_doc(component: Component) -> dict[str, Any]:
    if isinstance(component, Mutator):
        return mutator_to_doc(component)
    return block_to_doc(component)


def component_filename(component_id: str) -> str:
    return f"{component_namespace(component_id)}__{component_name(component_id)}.json"


# --- project payloads ------------------------------------------------------

def project_manifest_doc(project: Project) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "name": project.name,
        "entry_block": project.entry_block,
        "requires": dict(sorted(project.requires.items())),
    }


def lockfile_doc(entries: tuple[LockEntry, ...]) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "packages": [
            {"name": e.name, "version": e.version, "hash": e.hash}
            for e in sorted(entries, key=lambda e: e.name)
        ],
    }


def package_manifest_doc(pkg: VendoredPackage) -> dict[str, Any]:
    return dict(pkg.manifest)


def project_to_payload(project: Project) -> dict[str, Any]:
    """Flatten a project to the canonical path -> document map."""
    payload: dict[str, Any] = {"project.json": project_manifest_doc(project)}
    for mutator in project.mutators:
        payload[f"mutators/{component_filename(mutator.id)}"] = mutator_to_doc(mutator)
    for block in project.blocks:
        payload[f"blocks/{component_filename(block.id)}"] = block_to_doc(block)
    if project.lock:
        payload["packages.lock"] = lockfile_doc(project.lock)
    for pkg in project.vendored:
        base = f"packages/{pkg.name}/{pkg.version}"
        payload[f"{base}/manifest.json"] = package_manifest_doc(pkg)
        for mutator in pkg.mutators:
            payload[f"{base}/mutators/{component_filename(mutator.id)}"] = mutator_to_doc(mutator)
        for block in pkg.blocks:
            payload[f"{base}/blocks/{component_filename(block.id)}"] = block_to_doc(block)
    return payload


def parse_package_manifest(doc: Mapping[str, Any], path: str = "manifest") -> dict[str, Any]:
    doc = _expect_map(doc, path)
    consumed: set[str] = set()
    _check_version(doc, consumed, path)
    name = _take(doc, consumed, "name")
    version = _take(doc, consumed, "version")
    components = _take(doc, consumed, "components", [])
    docs = _take(doc, consumed, "docs")
    weights = _take(doc, consumed, "weights", [])
    dependencies = _take(doc, consumed, "dependencies", {})
    _reject_unknown(doc, consumed, path)
    if not isinstance(name, str) or not isinstance(version, str):
        raise ParseError(f"{path}: name and version must be strings")
    if not isinstance(components, list) or not all(isinstance(c, str) for c in components):
        raise ParseError(f"{path}.components: expected a list of component ids")
    if not isinstance(dependencies, Mapping):
        raise ParseError(f"{path}.dependencies: expected an object")
    if not isinstance(weights, list):
        raise ParseError(f"{path}.weights: expected a list")
    for i, w in enumerate(weights):
        w = _expect_map(w, f"{path}.weights[{i}]")
        unknown = sorted(set(w) - {"dataset", "score", "url", "hash"})
        if unknown:
            raise ParseError(f"{path}.weights[{i}]: unknown fields {unknown}")
    return {
        "format_version": FORMAT_VERSION,
        "name": name,
        "version": version,
        "components": sorted(components),
        "docs": docs,
        "weights": weights,
        "dependencies": dict(sorted(dependencies.items())),
    }


def parse_project_payload(payload: Mapping[str, Any], strict: bool = True) -> Project:
    """Build a Project from a path -> document map (inverse of project_to_payload)."""
    if "project.json" not in payload:
        raise ParseError("missing manifest project.json")
    manifest = _expect_map(payload["project.json"], "project.json")
    consumed: set[str] = set()
    _check_version(manifest, consumed, "project.json")
    name = _take(manifest, consumed, "name")
    entry_block = _take(manifest, consumed, "entry_block")
    requires = _take(manifest, consumed, "requires", {})
    _reject_unknown(manifest, consumed, "project.json")
    if not isinstance(name, str):
        raise ParseError("project.json: name must be a string")
    if not isinstance(requires, Mapping):
        raise ParseError("project.json: requires must be an object")

    mutators: list[Mutator] = []
    blocks: list[Block] = []
    lock: tuple[LockEntry, ...] = ()
    packages: dict[tuple[str, str], dict[str, Any]] = {}

    for path in sorted(payload):
        doc = payload[path]
        parts = path.split("/")
        try:
            if path == "project.json":
                continue
            if path == "packages.lock":
                lock = _parse_lockfile(doc)
            elif parts[0] == "mutators" and len(parts) == 2:
                mutators.append(mutator_from_doc(_expect_map(doc, path)))
            elif parts[0] == "blocks" and len(parts) == 2:
                block = block_from_doc(_expect_map(doc, path))
                if strict:
                    check_block_structure(block)
                blocks.append(block)
            elif parts[0] == "packages" and len(parts) >= 4:
                pkg = packages.setdefault((parts[1], parts[2]), {"manifest": None, "mutators": [], "blocks": []})
                if parts[3] == "manifest.json":
                    pkg["manifest"] = parse_package_manifest(doc, path)
                elif parts[3] == "mutators" and len(parts) == 5:
                    pkg["mutators"].append(mutator_from_doc(_expect_map(doc, path)))
                elif parts[3] == "blocks" and len(parts) == 5:
                    block = block_from_doc(_expect_map(doc, path))
                    if strict:
                        check_block_structure(block)
                    pkg["blocks"].append(block)
                else:
                    raise ParseError(f"{path}: unexpected file in package store")
            else:
                raise ParseError(f"{path}: unexpected file")
        except (ParseError, SchemaError) as exc:
            raise type(exc)(f"{path}: {exc}") if isinstance(exc, ParseError) else SchemaError(
                str(exc), path, diagnostics=getattr(exc, "diagnostics", [])
            ) from None

    vendored = []
    for (pkg_name, version), data in sorted(packages.items()):
        if data["manifest"] is None:
            raise ParseError(f"packages/{pkg_name}/{version}: missing manifest.json")
        vendored.append(
            VendoredPackage(
                name=pkg_name,
                version=version,
                manifest=data["manifest"],
                mutators=tuple(sorted(data["mutators"], key=lambda m: m.id)),
                blocks=tuple(sorted(data["blocks"], key=lambda b: b.id)),
            )
        )

    return Project(
        name=name,
        entry_block=entry_block,
        mutators=tuple(sorted(mutators, key=lambda m: m.id)),
        blocks=tuple(sorted(blocks, key=lambda b: b.id)),
        requires=dict(requires),
        lock=lock,
        vendored=tuple(vendored),
    )


def _parse_lockfile(doc: Any) -> tuple[LockEntry, ...]:
    doc = _expect_map(doc, "packages.lock")
    consumed: set[str] = set()
    _check_version(doc, consumed, "packages.lock")
    packages = _take(doc, consumed, "packages", [])
    _reject_unknown(doc, consumed, "packages.lock")
    entries = []
    for i, entry in enumerate(packages):
        entry = _expect_map(entry, f"packages.lock[{i}]")
        unknown = sorted(set(entry) - {"name", "version", "hash"})
        if unknown:
            raise ParseError(f"packages.lock[{i}]: unknown fields {unknown}")
        entries.append(LockEntry(name=entry["name"], version=entry["version"], hash=entry["hash"]))
    return tuple(entries)


def payload_hash(payload: Mapping[str, Any]) -> str:
    return "sha256:" + hashlib.sha256(dumps_compact(payload).encode("utf-8")).hexdigest()
