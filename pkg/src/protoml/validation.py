"""Two-tier validation: parameter checking and symbolic shape propagation.

Shape propagation walks each block in topological order, unifying declared
input patterns against incoming shapes and evaluating output-shape
expressions.  A component without output expressions is assumed correct:
downstream shapes become unknown and a VALIDATION_SKIPPED warning is
emitted, once per node instance.  Block-instance nodes are validated by
descending into their graphs with the instance's resolved parameter values,
so a whole project is checked as concretely as its entry parameters allow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from . import diagnostics as diag
from .diagnostics import Diagnostic, Severity, ValidationReport
from .exprs import REPEAT_INDEX, ExprEvalError, ParamExpr
from .graph import cycles, topo_sort
from .model import (
    FALSE_SIDE,
    INPUT_NODE,
    OUTPUT_NODE,
    TRUE_SIDE,
    Block,
    Component,
    Mutator,
    NodeInstance,
    ParamSpec,
    Project,
)
from .shapes import (
    Shape,
    UnifyMismatch,
    concat_shapes,
    eval_pattern,
    merge_shapes,
    unify_shapes,
)

__all__ = [
    "check_graph",
    "validate_params",
    "unify_shapes",
    "propagate_shapes",
    "validate_project",
]

MAX_DESCENT_DEPTH = 64


def check_graph(block: Block) -> list[Diagnostic]:
    """Structural checks: cycles, unconnected inputs, join policies, dangling outputs."""
    found: list[Diagnostic] = []
    for members in cycles(block):
        found.append(diag.error(
            diag.GRAPH_CYCLE,
            f"cycle through nodes {members}",
            block=block.id, node=members[0],
        ))

    for node in block.nodes:
        sides = (TRUE_SIDE, FALSE_SIDE) if node.is_conditional else (None,)
        # Without resolving the ref the port count is unknown; check the ports
        # that edges actually use plus those join policies mention.  Wholly
        # unconnected ports are caught by the resolver-aware connectivity pass.
        ports = sorted({e.dst[1] for e in block.edges if e.dst[0] == node.node_id}
                       | {j.port for j in block.joins if j.node_id == node.node_id})
        for side in sides:
            for port in ports:
                incoming = block.incoming(node.node_id, port, side)
                policy = block.join_for(node.node_id, port, side)
                if len(incoming) > 1 and policy is None:
                    side_note = f" ({side})" if side else ""
                    found.append(diag.error(
                        diag.MISSING_JOIN_POLICY,
                        f"{len(incoming)} edges join at {node.node_id!r} port {port}{side_note} without a join policy",
                        block=block.id, node=node.node_id, port=port,
                    ))
                if len(incoming) <= 1 and policy is not None:
                    found.append(diag.warning(
                        diag.UNUSED_JOIN_POLICY,
                        f"join policy on {node.node_id!r} port {port} has fan-in {len(incoming)}",
                        block=block.id, node=node.node_id, port=port,
                    ))
    for port in range(block.output_count):
        incoming = block.incoming(OUTPUT_NODE, port)
        policy = block.join_for(OUTPUT_NODE, port)
        if not incoming:
            found.append(diag.error(
                diag.UNCONNECTED_INPUT,
                f"block output port {port} has no incoming edge",
                block=block.id, node=OUTPUT_NODE, port=port,
            ))
        if len(incoming) > 1 and policy is None:
            found.append(diag.error(
                diag.MISSING_JOIN_POLICY,
                f"{len(incoming)} edges join at the block output port {port} without a join policy",
                block=block.id, node=OUTPUT_NODE, port=port,
            ))
    return found


def connectivity_diagnostics(block: Block, resolve) -> list[Diagnostic]:
    """Port-count-aware connectivity checks (needs a component resolver)."""
    found: list[Diagnostic] = []
    for node in block.nodes:
        component = resolve(node.ref)
        sides = (TRUE_SIDE, FALSE_SIDE) if node.is_conditional else (None,)
        for side in sides:
            for port in range(component.input_count):
                if not block.incoming(node.node_id, port, side):
                    side_note = f" on {side}" if side else ""
                    found.append(diag.error(
                        diag.UNCONNECTED_INPUT,
                        f"input port {port} of {node.node_id!r}{side_note} has no incoming edge",
                        block=block.id, node=node.node_id, port=port,
                    ))
        for port in range(component.output_count):
            if not block.outgoing(node.node_id, port):
                found.append(diag.warning(
                    diag.DANGLING_OUTPUT,
                    f"output port {port} of {node.node_id!r} is never consumed",
                    block=block.id, node=node.node_id, port=port,
                ))
    for port in range(block.input_count):
        if not block.outgoing(INPUT_NODE, port):
            found.append(diag.warning(
                diag.DANGLING_OUTPUT,
                f"block input port {port} is never consumed",
                block=block.id, node=INPUT_NODE, port=port,
            ))
    return found


def _declared_types(block: Block) -> dict[str, str | None]:
    types: dict[str, str | None] = {p.name: p.ptype for p in block.params}
    for var in block.local_vars:
        types[var.name] = var.expr.infer_type(types)
    return types


def validate_params(
    node: NodeInstance,
    schema: Sequence[ParamSpec],
    env: Mapping[str, str | None],
) -> list[Diagnostic]:
    """Schema-level parameter validation against declared types.

    Literal bindings are fully checked; bindings over block parameters are
    checked against the declared types only, deferring value checks until
    the expression resolves (during shape propagation or generation).
    """
    found: list[Diagnostic] = []
    by_name = {spec.name: spec for spec in schema}
    for spec in schema:
        expr = node.bindings.get(spec.name)
        if expr is None:
            if spec.required:
                found.append(diag.error(
                    diag.PARAM_MISSING,
                    f"required parameter {spec.name!r} is not bound",
                    node=node.node_id, param=spec.name,
                ))
            continue
        if expr.is_literal:
            problem = spec.check_type(expr.literal)
            if problem is not None:
                found.append(diag.error(
                    diag.PARAM_TYPE, problem, node=node.node_id, param=spec.name,
                ))
                continue
            problem = spec.check_range(expr.literal)
            if problem is not None:
                found.append(diag.error(
                    diag.PARAM_RANGE, problem, node=node.node_id, param=spec.name,
                ))
            continue
        inferred = expr.infer_type(env)
        if inferred is not None and not _type_compatible(inferred, spec.ptype):
            found.append(diag.error(
                diag.PARAM_TYPE,
                f"expected {spec.ptype}, expression has type {inferred}",
                node=node.node_id, param=spec.name,
            ))
    for name in sorted(node.bindings):
        if name not in by_name:
            found.append(diag.error(
                diag.PARAM_UNKNOWN,
                f"component declares no parameter {name!r}",
                node=node.node_id, param=name,
            ))
    if isinstance(node.repeat, str):
        declared = env.get(node.repeat)
        if declared is not None and declared != "int":
            found.append(diag.error(
                diag.PARAM_TYPE,
                f"repeat count {node.repeat!r} must be an int parameter, found {declared}",
                node=node.node_id, param=node.repeat,
            ))
    if node.condition is not None:
        inferred = node.condition.infer_type(env)
        if inferred is not None and inferred != "bool":
            found.append(diag.error(
                diag.PARAM_TYPE,
                f"condition must be boolean, expression has type {inferred}",
                node=node.node_id, param="condition",
            ))
    return found


def _type_compatible(actual: str, expected: str) -> bool:
    if actual == expected:
        return True
    if expected == "float" and actual == "int":
        return True
    if expected in ("shape", "int_list") and actual in ("shape", "int_list"):
        return True
    return False


@dataclass
class _Propagation:
    """Mutable state shared across one shape-propagation descent."""

    resolve: Any  # callable ref -> Component, or None
    sink: list[Diagnostic] = field(default_factory=list)
    shapes: dict[str, list] = field(default_factory=dict)
    skipped: set[tuple[str, str]] = field(default_factory=set)
    reported: set[tuple] = field(default_factory=set)

    def add(self, d: Diagnostic) -> None:
        key = (d.path, d.block, d.node, d.port, d.param, d.code, d.message)
        if key in self.reported:
            return
        self.reported.add(key)
        self.sink.append(d)


def propagate_shapes(
    block: Block,
    input_shapes: Sequence[Shape],
    env: Mapping[str, Any] | None = None,
    *,
    resolve=None,
    project: Project | None = None,
) -> tuple[list[Shape], list[Diagnostic]]:
    """Propagate shapes through one block instance.

    ``input_shapes`` entries may be tuples with unknown (None) dims or None
    for a fully unknown input.  ``env`` supplies resolved block parameter
    values; unbound parameters fall back to their defaults and otherwise
    stay symbolic.  Returns the block's output shapes and the diagnostics
    collected along the way (including those from nested block instances).
    """
    if resolve is None and project is not None:
        resolve = project.resolve
    state = _Propagation(resolve=resolve)
    outputs = _propagate(block, list(input_shapes), dict(env or {}), state, path="", depth=0)
    return outputs, state.sink


def _resolve_values(block: Block, env: Mapping[str, Any], state: _Propagation, path: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for spec in block.params:
        value = env.get(spec.name)
        if value is None and spec.default is not None:
            value = spec.default
        values[spec.name] = value
    for var in block.local_vars:
        try:
            values[var.name] = var.expr.evaluate(values)
        except ExprEvalError as exc:
            state.add(diag.error(
                diag.PARAM_TYPE,
                f"local variable {var.name!r} failed to evaluate: {exc}",
                block=block.id, param=var.name, path=path or None,
            ))
            values[var.name] = None
    return values


def _propagate(
    block: Block,
    input_shapes: list[Shape],
    env: Mapping[str, Any],
    state: _Propagation,
    path: str,
    depth: int,
) -> list[Shape]:
    if depth > MAX_DESCENT_DEPTH:  # pragma: no cover - guarded by instantiation acyclicity
        return [None] * block.output_count
    loc_path = path or None
    values = _resolve_values(block, env, state, path)

    # The block's own input contract both checks and refines incoming shapes.
    inputs = list(input_shapes)
    while len(inputs) < block.input_count:
        inputs.append(None)
    if block.input_patterns is not None:
        binding: dict[str, int] = {}
        for i, pattern in enumerate(block.input_patterns):
            outcome = unify_shapes(pattern, inputs[i], binding, values)
            if isinstance(outcome, UnifyMismatch):
                state.add(diag.error(
                    diag.SHAPE_RANK if outcome.kind == "rank" else diag.SHAPE_MISMATCH,
                    f"block input {i}: {outcome.describe()}",
                    block=block.id, node=INPUT_NODE, port=i, path=loc_path,
                ))
            else:
                binding = outcome
        for i, pattern in enumerate(block.input_patterns):
            declared = eval_pattern(pattern, binding, values)
            merged, conflict = merge_shapes([inputs[i], declared])
            if conflict is None:
                inputs[i] = merged

    try:
        order = topo_sort(block)
    except Exception:
        return [None] * block.output_count

    computed: dict[tuple[str, int], Shape] = {}
    for port in range(block.input_count):
        computed[(INPUT_NODE, port)] = inputs[port]

    node_map = block.node_map
    for name in order:
        if name in (INPUT_NODE, OUTPUT_NODE):
            continue
        node = node_map[name]
        component = None
        if state.resolve is not None:
            try:
                component = state.resolve(node.ref)
            except Exception:
                component = None
        if component is None:
            state.add(diag.warning(
                diag.VALIDATION_SKIPPED,
                f"component {node.ref!r} is not resolvable; downstream shapes unknown",
                block=block.id, node=name, path=loc_path,
            ))
            continue
        outputs = _eval_node(block, node, component, computed, values, state, path, depth)
        for port, shape in enumerate(outputs):
            computed[(node.node_id, port)] = shape

    block_outputs: list[Shape] = []
    for port in range(block.output_count):
        block_outputs.append(_gather_port(block, OUTPUT_NODE, port, None, computed, state, path))
    if block.output_exprs is not None:
        for port, expr in enumerate(block.output_exprs):
            declared, err = expr.evaluate(inputs, values)
            if err is None and declared is not None:
                merged, conflict = merge_shapes([block_outputs[port], declared])
                if conflict is None:
                    block_outputs[port] = merged
    state.shapes[path] = [list(s) if s is not None else None for s in block_outputs]
    return block_outputs


def _gather_port(
    block: Block,
    node_id: str,
    port: int,
    branch: str | None,
    computed: Mapping[tuple[str, int], Shape],
    state: _Propagation,
    path: str,
) -> Shape:
    edges = block.incoming(node_id, port, branch)
    shapes = [computed.get(e.src) for e in edges]
    if not shapes:
        return None
    if len(shapes) == 1:
        return shapes[0]
    policy = block.join_for(node_id, port, branch)
    if policy is None:
        return None  # check_graph owns MISSING_JOIN_POLICY
    if policy.op in ("add", "multiply"):
        merged, conflict = merge_shapes(shapes)
        if conflict is not None:
            code = diag.SHAPE_MISMATCH
            state.add(diag.error(
                code,
                f"{policy.op} join operands disagree: {conflict.describe()}",
                block=block.id, node=node_id, port=port, path=path or None,
            ))
            return None
        return merged
    merged, err = concat_shapes(shapes, policy.concat_axis)
    if err is not None:
        state.add(diag.error(
            diag.SHAPE_MISMATCH,
            f"concat join failed: {err}",
            block=block.id, node=node_id, port=port, path=path or None,
        ))
        return None
    return merged


def _node_param_values(
    block: Block,
    node: NodeInstance,
    component: Component,
    values: Mapping[str, Any],
    repeat_index: int | None,
    state: _Propagation,
    path: str,
) -> dict[str, Any]:
    env = dict(values)
    env[REPEAT_INDEX] = repeat_index
    resolved: dict[str, Any] = {}
    for spec in component.params:
        expr = node.bindings.get(spec.name)
        if expr is None:
            resolved[spec.name] = spec.default
            continue
        try:
            value = expr.evaluate(env)
        except ExprEvalError as exc:
            state.add(diag.error(
                diag.PARAM_TYPE,
                f"binding for {spec.name!r} failed to evaluate: {exc}",
                block=block.id, node=node.node_id, param=spec.name, path=path or None,
            ))
            value = None
        if value is not None and not expr.is_literal:
            # Deferred checks re-run once the symbolic value is concrete.
            problem = spec.check_type(value) or spec.check_range(value)
            if problem is not None:
                code = diag.PARAM_TYPE if spec.check_type(value) else diag.PARAM_RANGE
                state.add(diag.error(
                    code, problem,
                    block=block.id, node=node.node_id, param=spec.name, path=path or None,
                ))
        resolved[spec.name] = value
    return resolved


def _apply_component(
    block: Block,
    node: NodeInstance,
    component: Component,
    in_shapes: list[Shape],
    node_values: dict[str, Any],
    state: _Propagation,
    path: str,
    depth: int,
    instance_suffix: str,
    mismatch_code: str,
) -> list[Shape]:
    """Shapes produced by one application of the node's component."""
    if isinstance(component, Mutator):
        if component.input_patterns is not None:
            binding: dict[str, int] = {}
            for i, pattern in enumerate(component.input_patterns):
                outcome = unify_shapes(pattern, in_shapes[i], binding, node_values)
                if isinstance(outcome, UnifyMismatch):
                    code = diag.SHAPE_RANK if outcome.kind == "rank" else mismatch_code
                    state.add(diag.error(
                        code,
                        f"input {i} of {node.node_id!r}: {outcome.describe()}",
                        block=block.id, node=node.node_id, port=i, path=path or None,
                    ))
                else:
                    binding = outcome
        if component.output_exprs is None:
            if (path, node.node_id) not in state.skipped:
                state.skipped.add((path, node.node_id))
                state.add(diag.warning(
                    diag.VALIDATION_SKIPPED,
                    f"{node.ref!r} declares no output shapes; assuming correct and skipping",
                    block=block.id, node=node.node_id, path=path or None,
                ))
            return [None] * component.output_count
        outputs: list[Shape] = []
        for port, expr in enumerate(component.output_exprs):
            shape, err = expr.evaluate(in_shapes, node_values)
            if err is not None:
                state.add(diag.error(
                    diag.SHAPE_EVAL,
                    f"output {port} of {node.node_id!r}: {err}",
                    block=block.id, node=node.node_id, port=port, path=path or None,
                ))
                shape = None
            outputs.append(shape)
        return outputs

    child_path = f"{path}/{node.node_id}{instance_suffix}" if path else f"{node.node_id}{instance_suffix}"
    return _propagate(component, in_shapes, node_values, state, child_path, depth + 1)


def _check_chaining(
    block: Block,
    node: NodeInstance,
    component: Component,
    out_shapes: list[Shape],
    node_values: dict[str, Any],
    state: _Propagation,
    path: str,
) -> None:
    patterns = component.input_patterns
    if patterns is None:
        return
    binding: dict[str, int] = {}
    for i, pattern in enumerate(patterns):
        outcome = unify_shapes(pattern, out_shapes[i], binding, node_values)
        if isinstance(outcome, UnifyMismatch):
            state.add(diag.error(
                diag.REPEAT_SHAPE,
                f"repeated node {node.node_id!r} cannot chain: output {i} {outcome.describe()}",
                block=block.id, node=node.node_id, port=i, path=path or None,
            ))
        else:
            binding = outcome


def _eval_repeated(
    block: Block,
    node: NodeInstance,
    component: Component,
    in_shapes: list[Shape],
    values: Mapping[str, Any],
    state: _Propagation,
    path: str,
    depth: int,
    side_suffix: str,
) -> list[Shape]:
    repeat = node.repeat
    count = repeat if isinstance(repeat, int) else values.get(repeat)
    if isinstance(count, bool) or not (count is None or isinstance(count, int)):
        count = None

    if (count is None or count > 1) and component.input_count != component.output_count:
        state.add(diag.error(
            diag.REPEAT_ARITY,
            f"node {node.node_id!r} repeats but has {component.input_count} inputs"
            f" and {component.output_count} outputs; chaining is undefined",
            block=block.id, node=node.node_id, path=path or None,
        ))
        return [None] * component.output_count

    if count is not None and count < 1:
        state.add(diag.error(
            diag.PARAM_RANGE,
            f"repeat count of {node.node_id!r} resolved to {count}",
            block=block.id, node=node.node_id, path=path or None,
        ))
        return [None] * component.output_count

    if count is not None:
        current = list(in_shapes)
        for i in range(count):
            node_values = _node_param_values(block, node, component, values, i, state, path)
            suffix = f"{side_suffix}[{i}]" if count > 1 or not isinstance(repeat, int) else side_suffix
            mismatch_code = diag.SHAPE_MISMATCH if i == 0 else diag.REPEAT_SHAPE
            current = _apply_component(
                block, node, component, current, node_values, state, path, depth, suffix, mismatch_code,
            )
        return current

    # Symbolic repeat count: validate one application, require chainability,
    # and keep only the dims one application provably preserves.
    node_values = _node_param_values(block, node, component, values, None, state, path)
    outs = _apply_component(
        block, node, component, list(in_shapes), node_values, state, path, depth,
        f"{side_suffix}[i]", diag.SHAPE_MISMATCH,
    )
    if isinstance(component, Mutator):
        _check_chaining(block, node, component, outs, node_values, state, path)
    stabilized: list[Shape] = []
    for in_shape, out_shape in zip(in_shapes, outs):
        if out_shape is None:
            stabilized.append(None)
            continue
        if in_shape is None or len(in_shape) != len(out_shape):
            stabilized.append(None)
            continue
        stabilized.append(tuple(
            o if (o is not None and o == i) else None
            for i, o in zip(in_shape, out_shape)
        ))
    return stabilized


def _eval_node(
    block: Block,
    node: NodeInstance,
    component: Component,
    computed: Mapping[tuple[str, int], Shape],
    values: Mapping[str, Any],
    state: _Propagation,
    path: str,
    depth: int,
) -> list[Shape]:
    if not node.is_conditional:
        in_shapes = [
            _gather_port(block, node.node_id, port, None, computed, state, path)
            for port in range(component.input_count)
        ]
        return _eval_repeated(block, node, component, in_shapes, values, state, path, depth, "")

    per_side: list[list[Shape]] = []
    for side, tag in ((TRUE_SIDE, "@true"), (FALSE_SIDE, "@false")):
        in_shapes = [
            _gather_port(block, node.node_id, port, side, computed, state, path)
            for port in range(component.input_count)
        ]
        per_side.append(
            _eval_repeated(block, node, component, in_shapes, values, state, path, depth, tag)
        )
    outputs: list[Shape] = []
    for port in range(component.output_count):
        merged, conflict = merge_shapes([per_side[0][port], per_side[1][port]])
        if conflict is not None:
            state.add(diag.error(
                diag.BRANCH_SHAPE,
                f"branches of {node.node_id!r} disagree on output {port}: {conflict.describe()}",
                block=block.id, node=node.node_id, port=port, path=path or None,
            ))
            outputs.append(None)
        else:
            outputs.append(merged)
    return outputs


def validate_project(project: Project) -> ValidationReport:
    """Whole-project validation.

    Graph and parameter schemas are checked per block; shape propagation
    starts at the entry block with symbolic inputs and descends through
    block instances with their resolved parameter values.
    """
    report = ValidationReport()
    if project.entry_block is None:
        report.diagnostics.append(diag.warning(
            diag.NO_ENTRY_CONTENT, "project has no entry block; nothing to validate",
        ))
        return report

    blocks = sorted(project.iter_blocks(), key=lambda b: b.id)
    graph_clean = True
    for block in blocks:
        graph_diags = check_graph(block)
        if any(d.severity is Severity.ERROR for d in graph_diags):
            graph_clean = False
        report.diagnostics.extend(graph_diags)
        report.diagnostics.extend(connectivity_diagnostics(block, project.resolve))
        env = _declared_types(block)
        for node in block.nodes:
            component = project.resolve(node.ref)
            for d in validate_params(node, component.params, env):
                report.diagnostics.append(Diagnostic(
                    d.severity, d.code, d.message,
                    block=block.id, node=d.node, port=d.port, param=d.param,
                ))

    if graph_clean:
        entry = project.resolve(project.entry_block)
        _, shape_diags = _run_entry_propagation(project, entry, report)
        report.diagnostics.extend(shape_diags)
    return report


def _run_entry_propagation(project: Project, entry: Block, report: ValidationReport):
    state = _Propagation(resolve=project.resolve)
    outputs = _propagate(entry, [None] * entry.input_count, {}, state, path="", depth=0)
    report.shapes.update(state.shapes)
    return outputs, state.sink
