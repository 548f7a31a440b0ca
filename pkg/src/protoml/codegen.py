"""Source emission: one PyTorch module class per block.

Each block compiles to a file containing its imports, the extra code of the
mutators it uses, and a single ``nn.Module`` subclass whose constructor
builds child components in topological order and whose ``forward`` wires
SSA-named values along the graph edges.  Repeats lower to an indexed module
container filled by a construction loop plus a runtime loop; conditional
nodes construct both branch submodules and route through ``if``/``else``.
Generation is a pure function of the project value: identical projects
produce identical bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .diagnostics import ValidationReport
from .exprs import REPEAT_INDEX, ParamExpr
from .graph import topo_sort
from .model import (
    FALSE_SIDE,
    INPUT_NODE,
    OUTPUT_NODE,
    TRUE_SIDE,
    Block,
    Component,
    Mutator,
    NodeInstance,
    Project,
    component_name,
)

BASE_IMPORTS = ("import torch", "import torch.nn as nn")

_TOKEN_RE = re.compile(r"\$\{([^}]*)\}")


class GenerationError(RuntimeError):
    """Internal invariant breach during emission (bad token, repeat misuse)."""


class GenerationRefused(RuntimeError):
    """Validation failed and force generation was not requested."""

    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__("project failed validation; pass force to generate anyway")


@dataclass(frozen=True)
class GeneratedFile:
    path: str
    content: str


def sanitize_identifier(text: str) -> str:
    cleaned = re.sub(r"[^0-9A-Za-z_]", "_", text)
    if not cleaned or cleaned[0].isdigit():
        cleaned = "_" + cleaned
    return cleaned


def snake_case(name: str) -> str:
    name = re.sub(r"[^0-9A-Za-z]+", "_", name)
    name = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", "_", name)
    name = re.sub(r"(?<=[A-Z])(?=[A-Z][a-z])", "_", name)
    out = name.lower().strip("_")
    return out or "block"


def block_class_name(block: Block) -> str:
    return sanitize_identifier(component_name(block.id))


def block_module_name(block: Block) -> str:
    return snake_case(component_name(block.id))


def substitute_tokens(template: str, env: Mapping[str, str]) -> str:
    """Replace every ``${...}`` occurrence in a single pass.

    Replacement text is never re-scanned.  An unknown token means the
    load-time closure check was bypassed, so it is an internal error.
    """

    def replace(match: re.Match) -> str:
        token = match.group(1)
        try:
            return env[token]
        except KeyError:
            raise GenerationError(f"UNKNOWN_TOKEN: ${{{token}}} has no replacement") from None

    return _TOKEN_RE.sub(replace, template)


class _Names:
    """Allocator for unique identifiers within one generated file."""

    def __init__(self) -> None:
        self._used: set[str] = set()

    def reserve(self, name: str) -> None:
        self._used.add(name)

    def alloc(self, base: str) -> str:
        name = base
        counter = 2
        while name in self._used:
            name = f"{base}_{counter}"
            counter += 1
        self._used.add(name)
        return name


@dataclass
class EmitContext:
    """Accumulates the sections of one generated module file."""

    block: Block
    resolve: Callable[[str], Component]
    instances: dict[str, str] = field(default_factory=dict)
    values: dict[tuple[str, int], str] = field(default_factory=dict)
    imports: list[str] = field(default_factory=list)
    extra_code: dict[str, str] = field(default_factory=dict)
    init_lines: list[str] = field(default_factory=list)
    forward_lines: list[str] = field(default_factory=list)
    names: _Names = field(default_factory=_Names)
    init_env: dict[str, str] = field(default_factory=dict)
    forward_env: dict[str, str] = field(default_factory=dict)
    _seen_imports: set[str] = field(default_factory=set)

    def add_import(self, statement: str) -> None:
        normalized = " ".join(statement.split())
        if not normalized or normalized in BASE_IMPORTS:
            return
        if normalized not in self._seen_imports:
            self._seen_imports.add(normalized)
            self.imports.append(normalized)

    def register_extra(self, mutator: Mutator) -> None:
        if mutator.extra_code and mutator.id not in self.extra_code:
            self.extra_code[mutator.id] = mutator.extra_code.rstrip("\n")


def _emit_lines(target: list[str], text: str, indent: int) -> None:
    pad = "    " * indent
    for line in text.splitlines():
        target.append(pad + line if line.strip() else "")


def _compile_binding(
    node: NodeInstance,
    component: Component,
    param_name: str,
    env: Mapping[str, str],
) -> str:
    expr = node.bindings.get(param_name)
    if expr is None:
        spec = next(p for p in component.params if p.name == param_name)
        return repr(spec.default) if spec.default is not None else "None"
    return expr.compile(env)


def _props_env(
    node: NodeInstance,
    component: Component,
    base_env: Mapping[str, str],
) -> dict[str, str]:
    env = dict(base_env)
    out = {}
    for spec in component.params:
        out[f"props.{spec.name}"] = _compile_binding(node, component, spec.name, env)
    return out


def _guard_repeat_name_usage(mutator: Mutator, node_id: str) -> None:
    for source, label in ((mutator.init_code, "init_code"), (mutator.forward_code, "forward_code")):
        for match in re.finditer(r"\$\{name\}([A-Za-z0-9_])", source):
            raise GenerationError(
                f"node {node_id!r} repeats, but {mutator.id} {label} continues the "
                f"${{name}} token with {match.group(1)!r}; repeated instances live in "
                "an indexed container, so ${name} must stand alone"
            )


def emit_node(node: NodeInstance, ctx: EmitContext) -> EmitContext:
    """Emit init/forward statements for one node (joins, repeats, branches)."""
    component = ctx.resolve(node.ref)
    if isinstance(component, Mutator):
        for statement in component.imports:
            ctx.add_import(statement)
        ctx.register_extra(component)
    else:
        ctx.add_import(f"from .{block_module_name(component)} import {block_class_name(component)}")

    inst = ctx.instances[node.node_id]
    out_names = [ctx.names.alloc(f"x_{inst}_{port}") for port in range(component.output_count)]

    if not node.is_conditional:
        in_names = [
            _gather_input(node, component, port, None, ctx, indent=2)
            for port in range(component.input_count)
        ]
        _emit_application(node, component, inst, in_names, out_names, ctx, fwd_indent=2)
    else:
        condition = node.condition.compile(ctx.forward_env)
        # Join statements for each side are emitted inside its branch.
        ctx.forward_lines.append(f"        if {condition}:")
        in_true = [
            _gather_input(node, component, port, TRUE_SIDE, ctx, indent=3)
            for port in range(component.input_count)
        ]
        _emit_application(node, component, f"{inst}_true", in_true, out_names, ctx, fwd_indent=3)
        ctx.forward_lines.append("        else:")
        in_false = [
            _gather_input(node, component, port, FALSE_SIDE, ctx, indent=3)
            for port in range(component.input_count)
        ]
        _emit_application(node, component, f"{inst}_false", in_false, out_names, ctx, fwd_indent=3)

    for port, name in enumerate(out_names):
        ctx.values[(node.node_id, port)] = name
    return ctx


def _gather_input(
    node: NodeInstance,
    component: Component,
    port: int,
    branch: str | None,
    ctx: EmitContext,
    indent: int,
) -> str:
    edges = ctx.block.incoming(node.node_id, port, branch)
    if not edges:
        raise GenerationError(
            f"input port {port} of {node.node_id!r}"
            + (f" ({branch})" if branch else "")
            + " has no incoming edge"
        )
    sources = [ctx.values[edge.src] for edge in edges]
    if len(sources) == 1:
        return sources[0]
    policy = ctx.block.join_for(node.node_id, port, branch)
    if policy is None:
        raise GenerationError(
            f"JOIN_WITHOUT_POLICY: {len(sources)} edges join at {node.node_id!r} port {port}"
        )
    suffix = {TRUE_SIDE: "_true", FALSE_SIDE: "_false", None: ""}[branch]
    inst = ctx.instances[node.node_id]
    joined = ctx.names.alloc(f"x_{inst}_in{port}{suffix}")
    if policy.op == "add":
        expression = " + ".join(sources)
    elif policy.op == "multiply":
        expression = " * ".join(sources)
    else:
        expression = f"torch.cat([{', '.join(sources)}], dim={policy.concat_axis})"
    _emit_lines(ctx.forward_lines, f"{joined} = {expression}", indent)
    return joined


def _mutator_forward_env(
    mutator: Mutator,
    name_text: str,
    in_names: list[str],
    out_names: list[str],
    props: Mapping[str, str],
    repeat_text: str,
) -> dict[str, str]:
    env = dict(props)
    env["name"] = name_text
    env[REPEAT_INDEX] = repeat_text
    for k, text in enumerate(in_names):
        env[f"input_{k}"] = text
    for k, text in enumerate(out_names):
        env[f"output_{k}"] = text
    if in_names:
        env["input"] = in_names[0]
    env["output"] = out_names[0]
    return env


def _child_call(instance_text: str, in_names: list[str], out_names: list[str]) -> str:
    call = f"self.{instance_text}({', '.join(in_names)})"
    targets = ", ".join(out_names)
    return f"({targets},) = {call}" if len(out_names) == 1 else f"({targets}) = {call}"


def _child_ctor(component: Block, node: NodeInstance, env: Mapping[str, str]) -> str:
    kwargs = [
        f"{spec.name}={_compile_binding(node, component, spec.name, env)}"
        for spec in component.params
        if spec.name in node.bindings
    ]
    return f"{block_class_name(component)}({', '.join(kwargs)})"


def _emit_application(
    node: NodeInstance,
    component: Component,
    inst: str,
    in_names: list[str],
    out_names: list[str],
    ctx: EmitContext,
    fwd_indent: int,
) -> None:
    """Emit init + forward for one application site (a node or one branch)."""
    repeat = node.repeat
    simple = isinstance(repeat, int) and repeat == 1

    if simple:
        init_props = _props_env(node, component, {**ctx.init_env, REPEAT_INDEX: "0"})
        fwd_props = _props_env(node, component, {**ctx.forward_env, REPEAT_INDEX: "0"})
        if isinstance(component, Mutator):
            init_env = {**init_props, "name": inst, REPEAT_INDEX: "0"}
            _emit_lines(ctx.init_lines, substitute_tokens(component.init_code, init_env), 2)
            fwd_env = _mutator_forward_env(component, inst, in_names, out_names, fwd_props, "0")
            _emit_lines(ctx.forward_lines, substitute_tokens(component.forward_code, fwd_env), fwd_indent)
        else:
            ctor = _child_ctor(component, node, {**ctx.init_env, REPEAT_INDEX: "0"})
            _emit_lines(ctx.init_lines, f"self.{inst} = {ctor}", 2)
            _emit_lines(ctx.forward_lines, _child_call(inst, in_names, out_names), fwd_indent)
        return

    if component.input_count != component.output_count:
        raise GenerationError(
            f"REPEAT_ARITY: node {node.node_id!r} repeats but component "
            f"{component.id} has {component.input_count} inputs and "
            f"{component.output_count} outputs"
        )
    if isinstance(component, Mutator):
        _guard_repeat_name_usage(component, node.node_id)

    index = ctx.names.alloc(f"{inst}_i")
    init_bound = str(repeat) if isinstance(repeat, int) else repeat
    fwd_bound = str(repeat) if isinstance(repeat, int) else f"self.{repeat}"
    item = f"{inst}[str({index})]"

    # Construction loop filling an indexed container.
    _emit_lines(ctx.init_lines, f"self.{inst} = nn.ModuleDict()", 2)
    _emit_lines(ctx.init_lines, f"for {index} in range({init_bound}):", 2)
    init_env_names = {**ctx.init_env, REPEAT_INDEX: index}
    if isinstance(component, Mutator):
        init_props = _props_env(node, component, init_env_names)
        init_env = {**init_props, "name": item, REPEAT_INDEX: index}
        _emit_lines(ctx.init_lines, substitute_tokens(component.init_code, init_env), 3)
    else:
        _emit_lines(ctx.init_lines, f"self.{item} = {_child_ctor(component, node, init_env_names)}", 3)

    # Runtime loop chaining iteration outputs into the next iteration.
    for carry, source in zip(out_names, in_names):
        _emit_lines(ctx.forward_lines, f"{carry} = {source}", fwd_indent)
    _emit_lines(ctx.forward_lines, f"for {index} in range({fwd_bound}):", fwd_indent)
    step_names = [ctx.names.alloc(f"{name}_step") for name in out_names]
    fwd_env_names = {**ctx.forward_env, REPEAT_INDEX: index}
    if isinstance(component, Mutator):
        fwd_props = _props_env(node, component, fwd_env_names)
        fwd_env = _mutator_forward_env(component, item, out_names, step_names, fwd_props, index)
        _emit_lines(ctx.forward_lines, substitute_tokens(component.forward_code, fwd_env), fwd_indent + 1)
    else:
        _emit_lines(ctx.forward_lines, _child_call(item, out_names, step_names), fwd_indent + 1)
    for carry, step in zip(out_names, step_names):
        _emit_lines(ctx.forward_lines, f"{carry} = {step}", fwd_indent + 1)


def generate_block(
    block: Block,
    resolve: Callable[[str], Component],
    *,
    warn_header: bool = False,
) -> GeneratedFile:
    """Fill the module-class template for one block."""
    ctx = EmitContext(block=block, resolve=resolve)
    order = topo_sort(block)
    node_map = block.node_map

    for name in (p.name for p in block.params):
        ctx.names.reserve(name)
    for var in block.local_vars:
        ctx.names.reserve(var.name)
    for reserved in ("self", "torch", "nn", block_class_name(block)):
        ctx.names.reserve(reserved)

    ordinal = 0
    for name in order:
        if name in (INPUT_NODE, OUTPUT_NODE):
            continue
        ctx.instances[name] = ctx.names.alloc(f"{sanitize_identifier(name)}_{ordinal}")
        ordinal += 1

    ctx.init_env = {p.name: p.name for p in block.params}
    ctx.init_env.update({v.name: v.name for v in block.local_vars})
    ctx.forward_env = {p.name: f"self.{p.name}" for p in block.params}
    ctx.forward_env.update({v.name: f"self.{v.name}" for v in block.local_vars})

    input_args = []
    for port in range(block.input_count):
        arg = ctx.names.alloc(f"x_input_{port}")
        input_args.append(arg)
        ctx.values[(INPUT_NODE, port)] = arg
        ctx.forward_env[f"input_{port}"] = arg

    for name in order:
        if name in (INPUT_NODE, OUTPUT_NODE):
            continue
        emit_node(node_map[name], ctx)

    returns = [_gather_output(block, port, ctx) for port in range(block.output_count)]

    class_name = block_class_name(block)
    required = [p for p in block.params if p.default is None]
    defaulted = [p for p in block.params if p.default is not None]
    signature = ["self"]
    signature += [p.name for p in required]
    signature += [f"{p.name}={p.default!r}" for p in defaulted]

    lines: list[str] = []
    lines.append(f"# Generated module for block '{block.id}'. Edit the block, not this file.")
    if warn_header:
        lines.append("# WARNING: generated with validation errors; inspect the validation report.")
    lines.append("")
    for statement in BASE_IMPORTS:
        lines.append(statement)
    for statement in ctx.imports:
        lines.append(statement)
    lines.append("")
    lines.append("")
    for fragment in ctx.extra_code.values():
        lines.append(fragment)
        lines.append("")
        lines.append("")
    lines.append(f"class {class_name}(nn.Module):")
    lines.append("")
    lines.append(f"    def __init__({', '.join(signature)}):")
    lines.append("        super().__init__()")
    for p in block.params:
        lines.append(f"        self.{p.name} = {p.name}")
    for var in block.local_vars:
        lines.append(f"        {var.name} = {var.expr.compile(ctx.init_env)}")
        lines.append(f"        self.{var.name} = {var.name}")
    lines.extend(ctx.init_lines)
    lines.append("")
    lines.append(f"    def forward({', '.join(['self'] + input_args)}):")
    lines.extend(ctx.forward_lines)
    lines.append(f"        return ({', '.join(returns)}{',' if len(returns) == 1 else ''})")
    lines.append("")

    return GeneratedFile(path=f"{block_module_name(block)}.py", content="\n".join(lines))


def _gather_output(block: Block, port: int, ctx: EmitContext) -> str:
    edges = block.incoming(OUTPUT_NODE, port)
    if not edges:
        raise GenerationError(f"block output port {port} has no incoming edge")
    sources = [ctx.values[edge.src] for edge in edges]
    if len(sources) == 1:
        return sources[0]
    policy = block.join_for(OUTPUT_NODE, port)
    if policy is None:
        raise GenerationError(f"JOIN_WITHOUT_POLICY: block output port {port}")
    joined = ctx.names.alloc(f"x_output_{port}")
    if policy.op == "add":
        expression = " + ".join(sources)
    elif policy.op == "multiply":
        expression = " * ".join(sources)
    else:
        expression = f"torch.cat([{', '.join(sources)}], dim={policy.concat_axis})"
    _emit_lines(ctx.forward_lines, f"{joined} = {expression}", 2)
    return joined


def generate_project(
    project: Project,
    *,
    force: bool = False,
    validate: bool = True,
    report: ValidationReport | None = None,
) -> list[GeneratedFile]:
    """Generate every block of the project plus the package index file.

    Refuses to generate when validation fails unless ``force`` is set, in
    which case every emitted file carries a warning header.  A caller that
    already ran validation can pass its ``report`` to avoid re-running.
    """
    warn = False
    if validate:
        if report is None:
            from .validation import validate_project

            report = validate_project(project)
        if not report.passed:
            if not force:
                raise GenerationRefused(report)
            warn = True

    blocks = sorted(project.iter_blocks(), key=block_module_name)
    seen_modules: dict[str, str] = {}
    for block in blocks:
        module = block_module_name(block)
        if module in seen_modules:
            raise GenerationError(
                f"blocks {seen_modules[module]!r} and {block.id!r} both map to module {module!r}"
            )
        seen_modules[module] = block.id

    files = [generate_block(b, project.resolve, warn_header=warn) for b in blocks]

    index_lines = ["# Generated package index."]
    if warn:
        index_lines.append("# WARNING: generated with validation errors; inspect the validation report.")
    index_lines.append("")
    exported = []
    for block in blocks:
        index_lines.append(f"from .{block_module_name(block)} import {block_class_name(block)}")
        exported.append(block_class_name(block))
    index_lines.append("")
    index_lines.append(f"__all__ = {exported!r}")
    index_lines.append("")
    files.append(GeneratedFile(path="__init__.py", content="\n".join(index_lines)))
    return sorted(files, key=lambda f: f.path)
