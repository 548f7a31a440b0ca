"""Core component model: mutators, blocks, nodes, edges and projects.

All values are immutable after construction.  Constructors enforce the cheap
local invariants (identifier syntax, counts, token closure, reference
well-formedness inside one component); whole-graph conditions such as
acyclicity or connectivity are computed by the validation layer so that
draft graphs can still be represented and diagnosed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from . import diagnostics as diag
from .exprs import REPEAT_INDEX, ExprError, ParamExpr, is_valid_name, literal_ptype
from .shapes import OutputShapeExpr, ShapeLanguageError, ShapePattern, unify_shapes

INPUT_NODE = "Input"
OUTPUT_NODE = "Output"

TRUE_SIDE = "true_side"
FALSE_SIDE = "false_side"

PTYPES = ("int", "float", "string", "bool", "int_list", "shape")
JOIN_OPS = ("add", "concat", "multiply")

FORMAT_VERSION = 1

_COMPONENT_ID_RE = re.compile(r"^[A-Za-z0-9_\-]+/[A-Za-z0-9_\-]+$")
_TOKEN_RE = re.compile(r"\$\{([^}]*)\}")


class SchemaError(ValueError):
    """A document or component value violates its schema.

    ``path`` points at the offending field; ``diagnostics`` is filled when
    the violation maps onto validation diagnostics (e.g. graph cycles found
    while strictly loading a block document).
    """

    def __init__(self, message: str, path: str = "", diagnostics: list | None = None):
        self.path = path
        self.diagnostics = diagnostics or []
        super().__init__(f"{path}: {message}" if path else message)


def _require(condition: bool, message: str, path: str = "") -> None:
    if not condition:
        raise SchemaError(message, path)


def check_component_id(component_id: str, path: str = "id") -> None:
    _require(
        isinstance(component_id, str) and bool(_COMPONENT_ID_RE.match(component_id)),
        f"component id must look like namespace/name, got {component_id!r}",
        path,
    )


def component_namespace(component_id: str) -> str:
    return component_id.split("/", 1)[0]


def component_name(component_id: str) -> str:
    return component_id.split("/", 1)[1]


@dataclass(frozen=True)
class ParamSpec:
    """Declared parameter of a mutator or block."""

    name: str
    ptype: str
    required: bool = False
    default: Any = None
    min: int | float | None = None
    max: int | float | None = None
    choices: tuple | None = None
    shape_pattern: ShapePattern | None = None

    def __post_init__(self) -> None:
        _require(is_valid_name(self.name), f"bad parameter name {self.name!r}", "name")
        _require(self.ptype in PTYPES, f"unknown parameter type {self.ptype!r}", f"{self.name}.type")
        if self.shape_pattern is not None:
            _require(self.ptype == "shape", "shape_pattern only applies to shape parameters", f"{self.name}.shape_pattern")
        if self.default is not None:
            problem = self.check_value(self.default)
            _require(problem is None, f"default {self.default!r} invalid: {problem}", f"{self.name}.default")

    def check_type(self, value: Any) -> str | None:
        """Type violation description, or None when the value fits ptype."""
        vt = literal_ptype(value)
        if self.ptype in ("int", "float", "string", "bool"):
            ok = vt == self.ptype or (self.ptype == "float" and vt == "int")
        else:  # int_list / shape
            ok = vt == "int_list"
        if not ok:
            return f"parameter {self.name!r} expects {self.ptype}, got {value!r}"
        return None

    def check_range(self, value: Any) -> str | None:
        """Constraint violation description, or None when satisfied."""
        if self.min is not None and value < self.min:
            return f"parameter {self.name!r}: value {value!r} below minimum {self.min}"
        if self.max is not None and value > self.max:
            return f"parameter {self.name!r}: value {value!r} above maximum {self.max}"
        if self.choices is not None and value not in self.choices:
            return f"parameter {self.name!r}: value {value!r} not one of {list(self.choices)}"
        if self.ptype == "shape":
            if any(d < 1 for d in value):
                return f"parameter {self.name!r}: shape dims must be positive, got {value!r}"
            if self.shape_pattern is not None:
                outcome = unify_shapes(self.shape_pattern, tuple(value), {})
                if not isinstance(outcome, dict):
                    return f"parameter {self.name!r}: {outcome.describe()}"
        return None

    def check_value(self, value: Any) -> str | None:
        """Return a description of the violation, or None when valid."""
        return self.check_type(value) or self.check_range(value)


def _check_params(params: tuple[ParamSpec, ...], path: str) -> None:
    seen = set()
    for spec in params:
        _require(spec.name not in seen, f"duplicate parameter {spec.name!r}", f"{path}.{spec.name}")
        seen.add(spec.name)


def extract_tokens(code: str) -> list[str]:
    return _TOKEN_RE.findall(code)


def _check_code_tokens(
    code: str,
    field_name: str,
    input_count: int,
    output_count: int,
    param_names: set[str],
) -> None:
    for token in extract_tokens(code):
        if token in ("name", REPEAT_INDEX):
            continue
        if token == "input":
            _require(input_count >= 1, "${input} used but the component has no inputs", field_name)
            continue
        if token == "output":
            continue  # output_count >= 1 always
        m = re.fullmatch(r"input_(\d+)", token)
        if m:
            _require(int(m.group(1)) < input_count, f"${{{token}}} exceeds input count {input_count}", field_name)
            continue
        m = re.fullmatch(r"output_(\d+)", token)
        if m:
            _require(int(m.group(1)) < output_count, f"${{{token}}} exceeds output count {output_count}", field_name)
            continue
        m = re.fullmatch(r"props\.([A-Za-z_][A-Za-z0-9_]*)", token)
        if m:
            _require(m.group(1) in param_names, f"${{{token}}} references an undeclared parameter", field_name)
            continue
        raise SchemaError(f"unknown token ${{{token}}}", field_name)


def _check_shape_contract(
    input_patterns: tuple[ShapePattern, ...] | None,
    output_exprs: tuple[OutputShapeExpr, ...] | None,
    input_count: int,
    output_count: int,
    param_names: set[str],
) -> None:
    if input_patterns is not None:
        _require(
            len(input_patterns) == input_count,
            f"{len(input_patterns)} input patterns for {input_count} inputs",
            "input_patterns",
        )
        for i, pattern in enumerate(input_patterns):
            for name in pattern.prop_names():
                _require(name in param_names, f"pattern references undeclared parameter {name!r}", f"input_patterns[{i}]")
    if output_exprs is not None:
        _require(
            len(output_exprs) == output_count,
            f"{len(output_exprs)} output shape exprs for {output_count} outputs",
            "output_exprs",
        )
        for i, expr in enumerate(output_exprs):
            for name in expr.prop_names():
                _require(name in param_names, f"shape expr references undeclared parameter {name!r}", f"output_exprs[{i}]")
            for input_index in expr.input_refs():
                _require(
                    0 <= input_index < input_count,
                    f"shape expr references input {input_index} of {input_count}",
                    f"output_exprs[{i}]",
                )
            if input_patterns is not None:
                for input_index in range(input_count):
                    max_ref = expr.max_dim_ref(input_index)
                    if max_ref is not None:
                        _require(
                            max_ref < input_patterns[input_index].rank,
                            f"shape expr references dim {max_ref} of rank-{input_patterns[input_index].rank} input {input_index}",
                            f"output_exprs[{i}]",
                        )


@dataclass(frozen=True)
class Mutator:
    """Reusable code fragment: ports, parameter schema, shape contract, templates."""

    id: str
    input_count: int
    output_count: int
    init_code: str
    forward_code: str
    imports: tuple[str, ...] = ()
    input_patterns: tuple[ShapePattern, ...] | None = None
    output_exprs: tuple[OutputShapeExpr, ...] | None = None
    params: tuple[ParamSpec, ...] = ()
    extra_code: str | None = None

    def __post_init__(self) -> None:
        check_component_id(self.id)
        _require(self.input_count >= 0, f"input_count must be >= 0, got {self.input_count}", "input_count")
        _require(self.output_count >= 1, f"output_count must be >= 1, got {self.output_count}", "output_count")
        _require(bool(self.init_code.strip()), "init_code must not be empty", "init_code")
        _require(bool(self.forward_code.strip()), "forward_code must not be empty", "forward_code")
        _check_params(self.params, "params")
        names = {p.name for p in self.params}
        _check_code_tokens(self.init_code, "init_code", self.input_count, self.output_count, names)
        _check_code_tokens(self.forward_code, "forward_code", self.input_count, self.output_count, names)
        if self.extra_code is not None:
            _require(
                not extract_tokens(self.extra_code),
                "extra_code is emitted once per mutator and cannot use ${...} tokens",
                "extra_code",
            )
        _check_shape_contract(self.input_patterns, self.output_exprs, self.input_count, self.output_count, names)

    @property
    def param_map(self) -> dict[str, ParamSpec]:
        return {p.name: p for p in self.params}


@dataclass(frozen=True)
class LocalVar:
    """Block-level variable computed from block parameters."""

    name: str
    expr: ParamExpr

    def __post_init__(self) -> None:
        _require(is_valid_name(self.name), f"bad local variable name {self.name!r}", "local_vars")


@dataclass(frozen=True)
class NodeInstance:
    """A placed mutator/block instance inside a block graph."""

    node_id: str
    ref: str
    bindings: Mapping[str, ParamExpr] = field(default_factory=dict)
    repeat: int | str = 1
    kind: str = "normal"
    condition: ParamExpr | None = None
    ref_version: str | None = None

    def __post_init__(self) -> None:
        _require(
            bool(self.node_id) and self.node_id not in (INPUT_NODE, OUTPUT_NODE),
            f"bad node id {self.node_id!r}",
            "nodes",
        )
        check_component_id(self.ref, f"nodes.{self.node_id}.ref")
        _require(self.kind in ("normal", "conditional"), f"unknown node kind {self.kind!r}", f"nodes.{self.node_id}.kind")
        _require(
            (self.condition is not None) == (self.kind == "conditional"),
            "condition must be present exactly on conditional nodes",
            f"nodes.{self.node_id}.condition",
        )
        if isinstance(self.repeat, bool) or not isinstance(self.repeat, (int, str)):
            raise SchemaError("repeat must be a positive int or a parameter name", f"nodes.{self.node_id}.repeat")
        if isinstance(self.repeat, int):
            _require(self.repeat >= 1, f"repeat must be >= 1, got {self.repeat}", f"nodes.{self.node_id}.repeat")
        else:
            _require(is_valid_name(self.repeat), f"repeat parameter {self.repeat!r} is not a name", f"nodes.{self.node_id}.repeat")

    @property
    def is_conditional(self) -> bool:
        return self.kind == "conditional"

    @property
    def may_repeat(self) -> bool:
        return isinstance(self.repeat, str) or self.repeat > 1


@dataclass(frozen=True)
class Edge:
    """Directed connection between two ports.

    Endpoints are (node_id, port) where node_id may be the special Input or
    Output marker.  ``branch`` selects the side of a conditional target.
    """

    src: tuple[str, int]
    dst: tuple[str, int]
    branch: str | None = None

    def __post_init__(self) -> None:
        for end, label in ((self.src, "from"), (self.dst, "to")):
            _require(
                isinstance(end, tuple) and len(end) == 2 and isinstance(end[0], str)
                and isinstance(end[1], int) and end[1] >= 0,
                f"bad edge endpoint {end!r}",
                f"edges.{label}",
            )
        _require(self.src[0] != OUTPUT_NODE, "edges cannot start at the Output node", "edges.from")
        _require(self.dst[0] != INPUT_NODE, "edges cannot end at the Input node", "edges.to")
        if self.branch is not None:
            _require(self.branch in (TRUE_SIDE, FALSE_SIDE), f"bad branch {self.branch!r}", "edges.branch")


@dataclass(frozen=True)
class JoinPolicy:
    """Combining rule for an input port with more than one incoming edge."""

    node_id: str
    port: int
    op: str
    concat_axis: int | None = None
    branch: str | None = None

    def __post_init__(self) -> None:
        _require(self.op in JOIN_OPS, f"unknown join op {self.op!r}", "joins.op")
        _require(
            (self.concat_axis is not None) == (self.op == "concat"),
            "concat_axis must be present exactly for concat joins",
            "joins.concat_axis",
        )
        if self.branch is not None:
            _require(self.branch in (TRUE_SIDE, FALSE_SIDE), f"bad branch {self.branch!r}", "joins.branch")


@dataclass(frozen=True)
class Block:
    """A DAG of component instances between the special Input/Output nodes."""

    id: str
    input_count: int
    output_count: int
    params: tuple[ParamSpec, ...] = ()
    local_vars: tuple[LocalVar, ...] = ()
    nodes: tuple[NodeInstance, ...] = ()
    edges: tuple[Edge, ...] = ()
    joins: tuple[JoinPolicy, ...] = ()
    input_patterns: tuple[ShapePattern, ...] | None = None
    output_exprs: tuple[OutputShapeExpr, ...] | None = None
    layout: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        check_component_id(self.id)
        _require(self.input_count >= 0, f"input_count must be >= 0, got {self.input_count}", "input_count")
        _require(self.output_count >= 1, f"output_count must be >= 1, got {self.output_count}", "output_count")
        _check_params(self.params, "params")
        param_names = {p.name for p in self.params}
        _check_shape_contract(self.input_patterns, self.output_exprs, self.input_count, self.output_count, param_names)

        scope = set(param_names)
        for var in self.local_vars:
            _require(var.name not in scope, f"local variable {var.name!r} shadows an earlier name", f"local_vars.{var.name}")
            unknown = var.expr.names() - scope
            _require(not unknown, f"local variable {var.name!r} references unknown names {sorted(unknown)}", f"local_vars.{var.name}")
            scope.add(var.name)

        node_ids = set()
        for node in self.nodes:
            _require(node.node_id not in node_ids, f"duplicate node id {node.node_id!r}", f"nodes.{node.node_id}")
            node_ids.add(node.node_id)
            binding_scope = scope | ({REPEAT_INDEX} if node.may_repeat else set())
            for pname, expr in node.bindings.items():
                unknown = expr.names() - binding_scope
                _require(
                    not unknown,
                    f"binding {pname!r} references unknown names {sorted(unknown)}",
                    f"nodes.{node.node_id}.params.{pname}",
                )
            if isinstance(node.repeat, str):
                _require(
                    node.repeat in param_names,
                    f"repeat references unknown block parameter {node.repeat!r}",
                    f"nodes.{node.node_id}.repeat",
                )
            if node.condition is not None:
                cond_scope = scope | {f"input_{k}" for k in range(self.input_count)}
                unknown = node.condition.names() - cond_scope
                _require(
                    not unknown,
                    f"condition references unknown names {sorted(unknown)}",
                    f"nodes.{node.node_id}.condition",
                )

        by_id = {n.node_id: n for n in self.nodes}
        for i, edge in enumerate(self.edges):
            for end_node, label in ((edge.src[0], "from"), (edge.dst[0], "to")):
                _require(
                    end_node in (INPUT_NODE, OUTPUT_NODE) or end_node in node_ids,
                    f"edge references unknown node {end_node!r}",
                    f"edges[{i}].{label}",
                )
            target = by_id.get(edge.dst[0])
            if target is not None and target.is_conditional:
                _require(
                    edge.branch is not None,
                    f"edge into conditional node {target.node_id!r} must pick true_side or false_side",
                    f"edges[{i}].branch",
                )
            else:
                _require(
                    edge.branch is None,
                    "branch is only meaningful on edges into a conditional node",
                    f"edges[{i}].branch",
                )

        seen_joins = set()
        for i, join in enumerate(self.joins):
            _require(
                join.node_id == OUTPUT_NODE or join.node_id in node_ids,
                f"join references unknown node {join.node_id!r}",
                f"joins[{i}].node",
            )
            target = by_id.get(join.node_id)
            if target is not None and target.is_conditional:
                _require(join.branch is not None, "joins on a conditional node must name a branch", f"joins[{i}].branch")
            else:
                _require(join.branch is None, "branch is only meaningful on conditional nodes", f"joins[{i}].branch")
            key = (join.node_id, join.port, join.branch)
            _require(key not in seen_joins, f"duplicate join policy for {key}", f"joins[{i}]")
            seen_joins.add(key)

    @property
    def node_map(self) -> dict[str, NodeInstance]:
        return {n.node_id: n for n in self.nodes}

    @property
    def param_map(self) -> dict[str, ParamSpec]:
        return {p.name: p for p in self.params}

    def join_for(self, node_id: str, port: int, branch: str | None = None) -> JoinPolicy | None:
        for join in self.joins:
            if join.node_id == node_id and join.port == port and join.branch == branch:
                return join
        return None

    def incoming(self, node_id: str, port: int, branch: str | None = None) -> list[Edge]:
        return [
            e for e in self.edges
            if e.dst == (node_id, port) and (branch is None or e.branch == branch)
        ]

    def outgoing(self, node_id: str, port: int) -> list[Edge]:
        return [e for e in self.edges if e.src == (node_id, port)]


Component = Mutator | Block


def port_counts(component: Component) -> tuple[int, int]:
    return component.input_count, component.output_count


@dataclass(frozen=True)
class LockEntry:
    name: str
    version: str
    hash: str


@dataclass(frozen=True)
class VendoredPackage:
    """A resolved registry package copied into the project's package store."""

    name: str
    version: str
    manifest: Mapping[str, Any]
    mutators: tuple[Mutator, ...] = ()
    blocks: tuple[Block, ...] = ()


@dataclass(frozen=True)
class Project:
    """A named set of components with an entry block and vendored packages."""

    name: str
    entry_block: str | None
    mutators: tuple[Mutator, ...] = ()
    blocks: tuple[Block, ...] = ()
    requires: Mapping[str, str] = field(default_factory=dict)
    lock: tuple[LockEntry, ...] = ()
    vendored: tuple[VendoredPackage, ...] = ()

    def __post_init__(self) -> None:
        _require(bool(self.name), "project name must not be empty", "name")
        # Canonical order: projects are equal iff they hold the same components.
        object.__setattr__(self, "mutators", tuple(sorted(self.mutators, key=lambda m: m.id)))
        object.__setattr__(self, "blocks", tuple(sorted(self.blocks, key=lambda b: b.id)))
        object.__setattr__(self, "lock", tuple(sorted(self.lock, key=lambda e: e.name)))
        object.__setattr__(self, "vendored", tuple(sorted(self.vendored, key=lambda p: (p.name, p.version))))
        components: dict[str, Component] = {}
        for comp in self.all_components():
            _require(comp.id not in components, f"duplicate component id {comp.id!r}", "components")
            components[comp.id] = comp
        object.__setattr__(self, "_index", components)
        if self.entry_block is not None:
            _require(
                self.entry_block in components and isinstance(components[self.entry_block], Block),
                f"entry block {self.entry_block!r} is not a block in this project",
                "entry_block",
            )
        unresolved = sorted(
            (block.id, node.node_id, node.ref)
            for block in self.iter_blocks()
            for node in block.nodes
            if node.ref not in components
        )
        if unresolved:
            details = ", ".join(f"{b}:{n} -> {r}" for b, n, r in unresolved)
            raise SchemaError(
                f"unresolved component references: {details}",
                "components",
                diagnostics=[
                    diag.error(diag.UNRESOLVED_REF, f"component {r!r} not found", block=b, node=n)
                    for b, n, r in unresolved
                ],
            )
        _check_instantiation_acyclic(components)
        self._check_port_closure(components)

    def _check_port_closure(self, components: Mapping[str, Component]) -> None:
        bad: list = []
        for block in self.iter_blocks():
            node_map = block.node_map

            def out_count(name: str) -> int:
                if name == INPUT_NODE:
                    return block.input_count
                return components[node_map[name].ref].output_count

            def in_count(name: str) -> int:
                if name == OUTPUT_NODE:
                    return block.output_count
                return components[node_map[name].ref].input_count

            for edge in block.edges:
                if edge.src[1] >= out_count(edge.src[0]):
                    bad.append(diag.error(
                        diag.EDGE_PORT_RANGE,
                        f"edge source port {edge.src[1]} exceeds outputs of {edge.src[0]!r}",
                        block=block.id, node=edge.src[0], port=edge.src[1],
                    ))
                if edge.dst[1] >= in_count(edge.dst[0]):
                    bad.append(diag.error(
                        diag.EDGE_PORT_RANGE,
                        f"edge target port {edge.dst[1]} exceeds inputs of {edge.dst[0]!r}",
                        block=block.id, node=edge.dst[0], port=edge.dst[1],
                    ))
            for join in block.joins:
                if join.port >= in_count(join.node_id):
                    bad.append(diag.error(
                        diag.EDGE_PORT_RANGE,
                        f"join policy port {join.port} exceeds inputs of {join.node_id!r}",
                        block=block.id, node=join.node_id, port=join.port,
                    ))
        if bad:
            raise SchemaError(
                "; ".join(d.message for d in bad), "edges", diagnostics=bad,
            )

    def all_components(self) -> Iterable[Component]:
        yield from self.mutators
        yield from self.blocks
        for pkg in self.vendored:
            yield from pkg.mutators
            yield from pkg.blocks

    def iter_blocks(self) -> Iterable[Block]:
        yield from self.blocks
        for pkg in self.vendored:
            yield from pkg.blocks

    def resolve(self, ref: str) -> Component:
        try:
            return self._index[ref]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"unknown component {ref!r}", "components") from None

    def component_ids(self) -> list[str]:
        return sorted(self._index)  # type: ignore[attr-defined]


def _check_instantiation_acyclic(components: Mapping[str, Component]) -> None:
    """Reject block A containing (transitively) an instance of block A."""
    children = {
        cid: sorted({n.ref for n in comp.nodes if isinstance(components.get(n.ref), Block)})
        for cid, comp in components.items()
        if isinstance(comp, Block)
    }
    state: dict[str, int] = {}  # 1 = visiting, 2 = done
    stack: list[str] = []

    def visit(cid: str) -> None:
        if state.get(cid) == 2:
            return
        if state.get(cid) == 1:
            cycle = stack[stack.index(cid):] + [cid]
            raise SchemaError(
                f"recursive block instantiation: {' -> '.join(cycle)}",
                "blocks",
                diagnostics=[
                    diag.error(diag.RECURSIVE_BLOCK, f"instantiation cycle {' -> '.join(cycle)}", block=cycle[0])
                ],
            )
        state[cid] = 1
        stack.append(cid)
        for child in children.get(cid, ()):
            visit(child)
        stack.pop()
        state[cid] = 2

    for cid in sorted(children):
        visit(cid)
