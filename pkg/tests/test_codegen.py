import ast

import pytest
import torch
from hypothesis import given, settings, strategies as st

from protoml.codegen import (
    GenerationError,
    GenerationRefused,
    generate_block,
    generate_project,
    substitute_tokens,
)
from protoml.exprs import ParamExpr
from protoml.graph import CycleError, topo_sort
from protoml.model import Block, Edge, JoinPolicy, LocalVar, NodeInstance, ParamSpec, Project
from protoml.stdlib import channel_scale, standard_mutators

from harness import instantiate, parameter_count, run_forward
from projects import broken_resnet_project, chain_edges, node


def std_project(*blocks) -> Project:
    return Project(
        name="demo", entry_block=blocks[0].id,
        mutators=standard_mutators(), blocks=tuple(blocks),
    )


# --- topo_sort --------------------------------------------------------------

def diamond_block() -> Block:
    return Block(
        id="demo/D", input_count=1, output_count=1,
        nodes=(node("a", "std/relu"), node("b", "std/relu"), node("c", "std/relu"), node("d", "std/relu")),
        edges=(
            Edge(src=("Input", 0), dst=("a", 0)),
            Edge(src=("a", 0), dst=("b", 0)),
            Edge(src=("a", 0), dst=("c", 0)),
            Edge(src=("b", 0), dst=("d", 0)),
            Edge(src=("c", 0), dst=("d", 0)),
            Edge(src=("d", 0), dst=("Output", 0)),
        ),
        joins=(JoinPolicy(node_id="d", port=0, op="add"),),
    )


def test_topo_diamond_declaration_ties():
    assert topo_sort(diamond_block()) == ["Input", "a", "b", "c", "d", "Output"]


def test_topo_single_node():
    block = Block(
        id="demo/S", input_count=1, output_count=1,
        nodes=(node("a", "std/relu"),),
        edges=tuple(chain_edges(("Input", "a"), ("a", "Output"))),
    )
    assert topo_sort(block) == ["Input", "a", "Output"]


def test_topo_cycle_raises():
    block = Block(
        id="demo/C", input_count=1, output_count=1,
        nodes=(node("a", "std/relu"), node("b", "std/relu")),
        edges=(
            Edge(src=("Input", 0), dst=("a", 0)),
            Edge(src=("a", 0), dst=("b", 0)),
            Edge(src=("b", 0), dst=("a", 0)),
            Edge(src=("b", 0), dst=("Output", 0)),
        ),
    )
    with pytest.raises(CycleError):
        topo_sort(block)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_topo_is_linear_extension_of_random_dags(data):
    # Random DAG: only edges i -> j with i < j, so acyclic by construction.
    count = data.draw(st.integers(min_value=1, max_value=7))
    names = [f"n{i}" for i in range(count)]
    pairs = [(i, j) for i in range(count) for j in range(i + 1, count)]
    chosen = data.draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    edges = [Edge(src=("Input", 0), dst=(names[0], 0))]
    edges += [Edge(src=(names[i], 0), dst=(names[j], 0)) for i, j in chosen]
    edges += [Edge(src=(names[-1], 0), dst=("Output", 0))]
    block = Block(
        id="demo/R", input_count=1, output_count=1,
        nodes=tuple(node(n, "std/relu") for n in names),
        edges=tuple(edges),
    )
    order = topo_sort(block)
    position = {name: i for i, name in enumerate(order)}
    assert order[0] == "Input" and order[-1] == "Output"
    # Brute-force check: every edge respects the order (linear extension).
    for edge in block.edges:
        assert position[edge.src[0]] < position[edge.dst[0]]


# --- substitute_tokens ------------------------------------------------------

def test_substitution_direct():
    out = substitute_tokens(
        "self.${name} = Linear(${props.in}, ${props.out})",
        {"name": "fc_0", "props.in": "512", "props.out": "10"},
    )
    assert out == "self.fc_0 = Linear(512, 10)"


def test_substitution_identity_without_tokens():
    assert substitute_tokens("x = y + 1", {}) == "x = y + 1"


def test_substitution_single_pass():
    out = substitute_tokens("${a}", {"a": "${b}", "b": "nope"})
    assert out == "${b}"  # replacements are never re-scanned


def test_substitution_unknown_token_is_internal_error():
    with pytest.raises(GenerationError, match="UNKNOWN_TOKEN"):
        substitute_tokens("${mystery}", {})


# --- generate_block / generate_project --------------------------------------

def test_identity_block_forward_returns_argument(tmp_path):
    block = Block(
        id="demo/Identity", input_count=1, output_count=1,
        edges=(Edge(src=("Input", 0), dst=("Output", 0)),),
    )
    project = std_project(block)
    files = generate_project(project)
    model = instantiate(files, tmp_path, "Identity")
    x = torch.randn(3, 5)
    assert torch.equal(run_forward(model, x), x)


def test_relu_block_applies_activation(tmp_path, relu_demo):
    files = generate_project(relu_demo)
    model = instantiate(files, tmp_path, "Act")
    x = torch.randn(64, 32)
    assert torch.equal(run_forward(model, x), torch.clamp(x, min=0))


def test_generated_files_parse(resnet):
    for f in generate_project(resnet):
        ast.parse(f.content)


def test_generation_is_deterministic(resnet):
    a = generate_project(resnet)
    b = generate_project(resnet)
    assert [(f.path, f.content) for f in a] == [(f.path, f.content) for f in b]


def test_values_assigned_before_use(resnet):
    for f in generate_project(resnet):
        if f.path == "__init__.py":
            continue
        tree = ast.parse(f.content)
        forward = next(
            n for n in ast.walk(tree)
            if isinstance(n, ast.FunctionDef) and n.name == "forward"
        )
        assigned = {a.arg for a in forward.args.args}
        for stmt in ast.walk(forward):
            if isinstance(stmt, ast.Name) and isinstance(stmt.ctx, ast.Load):
                if stmt.id.startswith("x_"):
                    assert stmt.id in assigned, f"{stmt.id} used before assignment in {f.path}"
            if isinstance(stmt, ast.Assign):
                for target in stmt.targets:
                    for name_node in ast.walk(target):
                        if isinstance(name_node, ast.Name):
                            assigned.add(name_node.id)
            if isinstance(stmt, ast.For):
                for name_node in ast.walk(stmt.target):
                    if isinstance(name_node, ast.Name):
                        assigned.add(name_node.id)


def test_refuses_invalid_project_without_force():
    with pytest.raises(GenerationRefused):
        generate_project(broken_resnet_project())


def test_force_marks_files_with_warning_header():
    files = generate_project(broken_resnet_project(), force=True)
    assert all("WARNING: generated with validation errors" in f.content for f in files)


def test_extra_code_emitted_once(tmp_path):
    block = Block(
        id="demo/TwoScales", input_count=1, output_count=1,
        nodes=(
            node("s1", "std/channel_scale", {"init_value": 2.0}),
            node("s2", "std/channel_scale", {"init_value": 3.0}),
        ),
        edges=tuple(chain_edges(("Input", "s1"), ("s1", "s2"), ("s2", "Output"))),
    )
    project = std_project(block)
    files = generate_project(project)
    content = next(f.content for f in files if f.path == "two_scales.py")
    assert content.count("class ScalarGain(nn.Module):") == 1
    model = instantiate(files, tmp_path, "TwoScales")
    x = torch.randn(4, 4)
    assert torch.allclose(run_forward(model, x), x * 6.0)


def test_imports_deduplicated(resnet):
    content = next(f.content for f in generate_project(resnet) if f.path == "resnet.py")
    assert content.count("import torch.nn as nn") == 1
    assert content.count("from .resnet_layer import ResnetLayer") == 1


def test_multi_output_and_multi_input_wiring(tmp_path):
    two_port = type(channel_scale())(
        id="demo/swap", input_count=2, output_count=2,
        imports=("import torch.nn as nn",),
        init_code="self.${name} = nn.Identity()",
        forward_code=(
            "${output_0} = self.${name}(${input_1})\n"
            "${output_1} = self.${name}(${input_0})"
        ),
        output_exprs=None,
    )
    block = Block(
        id="demo/Swap", input_count=2, output_count=2,
        nodes=(node("s", "demo/swap"),),
        edges=(
            Edge(src=("Input", 0), dst=("s", 0)),
            Edge(src=("Input", 1), dst=("s", 1)),
            Edge(src=("s", 0), dst=("Output", 0)),
            Edge(src=("s", 1), dst=("Output", 1)),
        ),
    )
    project = Project(
        name="demo", entry_block=block.id,
        mutators=standard_mutators() + (two_port,), blocks=(block,),
    )
    files = generate_project(project)
    model = instantiate(files, tmp_path, "Swap")
    a, b = torch.randn(2, 3), torch.randn(2, 3)
    model.eval()
    with torch.no_grad():
        out_a, out_b = model(a, b)
    assert torch.equal(out_a, b) and torch.equal(out_b, a)


# --- loop lowering ----------------------------------------------------------

def conv_chain_block(block_id: str, count: int) -> Block:
    """`count` explicit shape-preserving convs chained by hand."""
    names = [f"c{i}" for i in range(count)]
    nodes = tuple(
        node(name, "std/conv2d", {
            "in_channels": 4, "out_channels": 4, "kernel_size": 3,
            "stride": 1, "padding": 1, "bias": True,
        })
        for name in names
    )
    hops = [("Input", names[0])] + list(zip(names, names[1:])) + [(names[-1], "Output")]
    return Block(
        id=block_id, input_count=1, output_count=1,
        nodes=nodes, edges=tuple(chain_edges(*hops)),
    )


def repeat_conv_block(block_id: str, count: int) -> Block:
    return Block(
        id=block_id, input_count=1, output_count=1,
        nodes=(node("c", "std/conv2d", {
            "in_channels": 4, "out_channels": 4, "kernel_size": 3,
            "stride": 1, "padding": 1, "bias": True,
        }, repeat=count),),
        edges=tuple(chain_edges(("Input", "c"), ("c", "Output"))),
    )


@pytest.mark.parametrize("count", [1, 2, 5])
def test_loop_lowering_matches_hand_unrolled(tmp_path, count):
    looped = std_project(repeat_conv_block("demo/Looped", count))
    unrolled = std_project(conv_chain_block("demo/Unrolled", count))

    looped_files = generate_project(looped)
    unrolled_files = generate_project(unrolled)

    torch.manual_seed(7)
    looped_model = instantiate(looped_files, tmp_path, "Looped")
    torch.manual_seed(7)
    unrolled_model = instantiate(unrolled_files, tmp_path, "Unrolled")

    assert parameter_count(looped_model) == parameter_count(unrolled_model)
    x = torch.randn(2, 4, 8, 8)
    assert torch.allclose(run_forward(looped_model, x), run_forward(unrolled_model, x))


def test_parameter_bound_repeat(tmp_path):
    block = Block(
        id="demo/Deep", input_count=1, output_count=1,
        params=(ParamSpec(name="depth", ptype="int", required=True, min=1),),
        nodes=(node("c", "std/conv2d", {
            "in_channels": 4, "out_channels": 4, "kernel_size": 3,
            "stride": 1, "padding": 1, "bias": False,
        }, repeat="depth"),),
        edges=tuple(chain_edges(("Input", "c"), ("c", "Output"))),
    )
    files = generate_project(std_project(block))
    shallow = instantiate(files, tmp_path, "Deep", depth=1)
    deep = instantiate(files, tmp_path, "Deep", depth=4)
    assert parameter_count(deep) == 4 * parameter_count(shallow)
    out = run_forward(deep, torch.randn(2, 4, 8, 8))
    assert tuple(out.shape) == (2, 4, 8, 8)


def test_repeat_index_in_bindings(tmp_path):
    block = Block(
        id="demo/Widen", input_count=1, output_count=1,
        nodes=(node("c", "std/conv2d", {
            "in_channels": "${4 if repeat_index == 0 else 8}",
            "out_channels": 8,
            "kernel_size": 1,
        }, repeat=3),),
        edges=tuple(chain_edges(("Input", "c"), ("c", "Output"))),
    )
    files = generate_project(std_project(block))
    model = instantiate(files, tmp_path, "Widen")
    out = run_forward(model, torch.randn(2, 4, 6, 6))
    assert tuple(out.shape) == (2, 8, 6, 6)


def test_repeat_arity_refused():
    two_out = type(channel_scale())(
        id="demo/fork", input_count=1, output_count=2,
        imports=("import torch.nn as nn",),
        init_code="self.${name} = nn.Identity()",
        forward_code="${output_0} = self.${name}(${input})\n${output_1} = ${output_0}",
        output_exprs=None,
    )
    block = Block(
        id="demo/Forked", input_count=1, output_count=2,
        nodes=(node("f", "demo/fork", repeat=2),),
        edges=(
            Edge(src=("Input", 0), dst=("f", 0)),
            Edge(src=("f", 0), dst=("Output", 0)),
            Edge(src=("f", 1), dst=("Output", 1)),
        ),
    )
    project = Project(
        name="demo", entry_block=block.id,
        mutators=standard_mutators() + (two_out,), blocks=(block,),
    )
    with pytest.raises(GenerationError, match="REPEAT_ARITY"):
        generate_project(project, validate=False)


# --- conditional lowering ---------------------------------------------------

def conditional_pool_block() -> Block:
    return Block(
        id="demo/MaybePool", input_count=1, output_count=1,
        params=(ParamSpec(name="use_pool", ptype="bool", required=True),),
        nodes=(
            node("pool", "std/max_pool2d", {"kernel_size": 2, "stride": 2}),
            NodeInstance(
                node_id="route", ref="std/channel_scale",
                bindings={"init_value": ParamExpr.of_literal(2.0)},
                kind="conditional",
                condition=ParamExpr.of_text("use_pool"),
            ),
        ),
        edges=(
            Edge(src=("Input", 0), dst=("pool", 0)),
            Edge(src=("pool", 0), dst=("route", 0), branch="true_side"),
            Edge(src=("Input", 0), dst=("route", 0), branch="false_side"),
            Edge(src=("route", 0), dst=("Output", 0)),
        ),
    )


def test_conditional_lowering_routes_both_paths(tmp_path):
    project = std_project(conditional_pool_block())
    files = generate_project(project, validate=False)
    x = torch.randn(2, 3, 8, 8)

    pooled_model = instantiate(files, tmp_path, "MaybePool", use_pool=True)
    out_true = run_forward(pooled_model, x)
    assert tuple(out_true.shape) == (2, 3, 4, 4)

    plain_model = instantiate(files, tmp_path, "MaybePool", use_pool=False)
    out_false = run_forward(plain_model, x)
    assert torch.allclose(out_false, x * 2.0)

    # Both branch submodules exist regardless of the evaluated path.
    names = dict(pooled_model.named_modules())
    assert any(name.endswith("_true") for name in names)
    assert any(name.endswith("_false") for name in names)


def test_generated_class_signature_defaults(resnet):
    content = next(f.content for f in generate_project(resnet) if f.path == "resnet.py")
    assert "def __init__(self, num_classes=1000):" in content


# --- block-level variables, template repeat_index, conditional blocks ---------

def test_local_vars_flow_into_generated_code(tmp_path):
    block = Block(
        id="demo/Widened", input_count=1, output_count=1,
        params=(ParamSpec(name="base", ptype="int", required=True, min=1),),
        local_vars=(LocalVar(name="width", expr=ParamExpr.of_text("base * 2")),),
        nodes=(
            node("fc", "std/linear", {"in_features": "${base}", "out_features": "${width}"}),
            node("fc2", "std/linear", {"in_features": "${width}", "out_features": "${base}"}),
        ),
        edges=tuple(chain_edges(("Input", "fc"), ("fc", "fc2"), ("fc2", "Output"))),
    )
    project = std_project(block)
    from protoml.validation import propagate_shapes, validate_project

    assert validate_project(project).passed
    outs, diags = propagate_shapes(block, [(4, 6)], env={"base": 6}, project=project)
    assert outs == [(4, 6)]

    files = generate_project(project)
    content = next(f.content for f in files if f.path == "widened.py")
    assert "width = (base * 2)" in content
    model = instantiate(files, tmp_path, "Widened", base=6)
    out = run_forward(model, torch.randn(4, 6))
    assert tuple(out.shape) == (4, 6)


def test_repeat_index_token_in_forward_template(tmp_path):
    stepper = type(channel_scale())(
        id="demo/stepper", input_count=1, output_count=1,
        imports=("import torch.nn as nn",),
        init_code="self.${name} = nn.Identity()",
        forward_code="${output} = self.${name}(${input}) * (${repeat_index} + 1)",
        output_exprs=None,
    )
    block = Block(
        id="demo/Stepped", input_count=1, output_count=1,
        nodes=(node("s", "demo/stepper", repeat=3),),
        edges=tuple(chain_edges(("Input", "s"), ("s", "Output"))),
    )
    project = Project(
        name="demo", entry_block=block.id,
        mutators=standard_mutators() + (stepper,), blocks=(block,),
    )
    files = generate_project(project, validate=False)
    model = instantiate(files, tmp_path, "Stepped")
    x = torch.randn(2, 4)
    # iterations multiply by 1, 2, 3 -> overall 6x
    assert torch.allclose(run_forward(model, x), x * 6.0)


def test_conditional_block_component_builds_both_instances(tmp_path):
    inner = Block(
        id="demo/Gain", input_count=1, output_count=1,
        nodes=(node("g", "std/channel_scale", {"init_value": 5.0}),),
        edges=tuple(chain_edges(("Input", "g"), ("g", "Output"))),
    )
    outer = Block(
        id="demo/Outer", input_count=1, output_count=1,
        params=(ParamSpec(name="flag", ptype="bool", required=True),),
        nodes=(
            NodeInstance(
                node_id="route", ref="demo/Gain", kind="conditional",
                condition=ParamExpr.of_text("flag"),
            ),
        ),
        edges=(
            Edge(src=("Input", 0), dst=("route", 0), branch="true_side"),
            Edge(src=("Input", 0), dst=("route", 0), branch="false_side"),
            Edge(src=("route", 0), dst=("Output", 0)),
        ),
    )
    project = Project(
        name="demo", entry_block=outer.id,
        mutators=standard_mutators(), blocks=(outer, inner),
    )
    files = generate_project(project)
    model = instantiate(files, tmp_path, "Outer", flag=True)
    x = torch.randn(3, 3)
    assert torch.allclose(run_forward(model, x), x * 5.0)
    modules = dict(model.named_modules())
    assert any(name.endswith("_true") for name in modules)
    assert any(name.endswith("_false") for name in modules)


def test_conditional_side_join_emitted_inside_branch(tmp_path):
    block = Block(
        id="demo/SideJoin", input_count=2, output_count=1,
        params=(ParamSpec(name="both", ptype="bool", required=True),),
        nodes=(
            NodeInstance(
                node_id="mix", ref="std/relu", kind="conditional",
                condition=ParamExpr.of_text("both"),
            ),
        ),
        edges=(
            Edge(src=("Input", 0), dst=("mix", 0), branch="true_side"),
            Edge(src=("Input", 1), dst=("mix", 0), branch="true_side"),
            Edge(src=("Input", 0), dst=("mix", 0), branch="false_side"),
            Edge(src=("mix", 0), dst=("Output", 0)),
        ),
        joins=(JoinPolicy(node_id="mix", port=0, op="add", branch="true_side"),),
    )
    project = std_project(block)
    files = generate_project(project, validate=False)
    model = instantiate(files, tmp_path, "SideJoin", both=True)
    a, b = torch.rand(2, 4), torch.rand(2, 4)
    assert torch.allclose(run_forward(model, a, b), a + b)  # relu of positive sum
    single = instantiate(files, tmp_path, "SideJoin", both=False)
    assert torch.allclose(run_forward(single, a, b), a)


def test_condition_may_reference_inputs():
    block = Block(
        id="demo/Avail", input_count=1, output_count=1,
        nodes=(
            NodeInstance(
                node_id="route", ref="std/identity", kind="conditional",
                condition=ParamExpr.of_text("input_0 is not None"),
            ),
        ),
        edges=(
            Edge(src=("Input", 0), dst=("route", 0), branch="true_side"),
            Edge(src=("Input", 0), dst=("route", 0), branch="false_side"),
            Edge(src=("route", 0), dst=("Output", 0)),
        ),
    )
    project = std_project(block)
    content = next(f.content for f in generate_project(project) if f.path == "avail.py")
    assert "if (x_input_0 is not None):" in content
