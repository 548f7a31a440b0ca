import pytest
import torch

from protoml.diagnostics import (
    BRANCH_SHAPE,
    DANGLING_OUTPUT,
    GRAPH_CYCLE,
    MISSING_JOIN_POLICY,
    NO_ENTRY_CONTENT,
    PARAM_MISSING,
    PARAM_RANGE,
    PARAM_TYPE,
    PARAM_UNKNOWN,
    REPEAT_ARITY,
    REPEAT_SHAPE,
    SHAPE_MISMATCH,
    SHAPE_RANK,
    VALIDATION_SKIPPED,
    Severity,
)
from protoml.exprs import ParamExpr, parse_binding
from protoml.model import Block, Edge, JoinPolicy, NodeInstance, ParamSpec, Project
from protoml.stdlib import conv2d, relu, standard_mutators
from protoml.validation import (
    check_graph,
    propagate_shapes,
    validate_params,
    validate_project,
)

from projects import broken_resnet_project, chain_edges, node


def simple_block(nodes, edges, joins=(), block_id="demo/B", **kwargs) -> Block:
    return Block(
        id=block_id, input_count=1, output_count=1,
        nodes=tuple(nodes), edges=tuple(edges), joins=tuple(joins), **kwargs,
    )


def std_project(block, extra_blocks=()) -> Project:
    return Project(
        name="demo", entry_block=block.id,
        mutators=standard_mutators(), blocks=(block, *extra_blocks),
    )


def codes(diags, severity=None):
    return [d.code for d in diags if severity is None or d.severity is severity]


# --- check_graph -----------------------------------------------------------

def test_linear_chain_is_clean():
    block = simple_block(
        [node("a", "std/relu")],
        chain_edges(("Input", "a"), ("a", "Output")),
    )
    assert check_graph(block) == []


def test_cycle_names_members():
    block = simple_block(
        [node("a", "std/relu"), node("b", "std/relu")],
        [
            Edge(src=("Input", 0), dst=("a", 0)),
            Edge(src=("a", 0), dst=("b", 0)),
            Edge(src=("b", 0), dst=("a", 0)),
            Edge(src=("b", 0), dst=("Output", 0)),
        ],
    )
    diags = check_graph(block)
    assert GRAPH_CYCLE in codes(diags, Severity.ERROR)
    cycle = next(d for d in diags if d.code == GRAPH_CYCLE)
    assert "'a'" in cycle.message and "'b'" in cycle.message


def test_fan_in_without_policy():
    block = simple_block(
        [node("a", "std/relu"), node("b", "std/relu"), node("c", "std/relu")],
        [
            Edge(src=("Input", 0), dst=("a", 0)),
            Edge(src=("Input", 0), dst=("b", 0)),
            Edge(src=("a", 0), dst=("c", 0)),
            Edge(src=("b", 0), dst=("c", 0)),
            Edge(src=("c", 0), dst=("Output", 0)),
        ],
    )
    assert MISSING_JOIN_POLICY in codes(check_graph(block), Severity.ERROR)


def test_unconnected_output_port():
    block = simple_block([node("a", "std/relu")], [Edge(src=("Input", 0), dst=("a", 0))])
    diags = check_graph(block)
    assert "UNCONNECTED_INPUT" in codes(diags, Severity.ERROR)


def test_dangling_output_is_warning_only():
    block = simple_block(
        [node("a", "std/relu"), node("b", "std/relu")],
        chain_edges(("Input", "a"), ("a", "b"), ("a", "Output")),
    )
    project = std_project(block)
    report = validate_project(project)
    assert report.passed
    dangles = [d for d in report.diagnostics if d.code == DANGLING_OUTPUT]
    assert any(d.node == "b" for d in dangles)


# --- validate_params -------------------------------------------------------

def test_required_param_missing():
    n = node("fc", "std/linear", {"out_features": 10})
    diags = validate_params(n, conv2d().params, {})
    assert PARAM_MISSING in codes(diags)


def test_param_range_violation():
    n = node("c", "std/conv2d", {"in_channels": 3, "out_channels": 8, "kernel_size": 0})
    diags = validate_params(n, conv2d().params, {})
    assert PARAM_RANGE in codes(diags)
    assert any(d.param == "kernel_size" for d in diags)


def test_param_type_violation():
    n = node("c", "std/conv2d", {"in_channels": "three", "out_channels": 8, "kernel_size": 1})
    diags = validate_params(n, conv2d().params, {})
    assert PARAM_TYPE in codes(diags)


def test_symbolic_binding_defers_to_declared_type():
    n = node("c", "std/conv2d", {"in_channels": "${P}", "out_channels": 8, "kernel_size": 1})
    assert validate_params(n, conv2d().params, {"P": "int"}) == []
    diags = validate_params(n, conv2d().params, {"P": "string"})
    assert PARAM_TYPE in codes(diags)


def test_unknown_binding_flagged():
    n = node("r", "std/relu", {"slope": 1})
    diags = validate_params(n, relu().params, {})
    assert PARAM_UNKNOWN in codes(diags)


# --- propagate_shapes ------------------------------------------------------

def test_chain_propagates_shapes():
    block = simple_block(
        [
            node("fc", "std/linear", {"in_features": 32, "out_features": 64}),
            node("fc2", "std/linear", {"in_features": 64, "out_features": 10}),
        ],
        chain_edges(("Input", "fc"), ("fc", "fc2"), ("fc2", "Output")),
    )
    outs, diags = propagate_shapes(block, [(8, 32)], project=std_project(block))
    assert codes(diags, Severity.ERROR) == []
    assert outs == [(8, 10)]


def test_missing_output_exprs_skips_and_warns():
    bare = relu()
    stripped = type(bare)(
        id="std/opaque", input_count=1, output_count=1,
        init_code=bare.init_code, forward_code=bare.forward_code,
        imports=bare.imports, output_exprs=None,
    )
    block = simple_block(
        [
            node("fc", "std/linear", {"in_features": 32, "out_features": 64}),
            node("mid", "std/opaque"),
            node("fc2", "std/linear", {"in_features": 64, "out_features": 10}),
        ],
        chain_edges(("Input", "fc"), ("fc", "mid"), ("mid", "fc2"), ("fc2", "Output")),
    )
    project = Project(
        name="demo", entry_block=block.id,
        mutators=standard_mutators() + (stripped,), blocks=(block,),
    )
    outs, diags = propagate_shapes(block, [(8, 32)], project=project)
    assert codes(diags, Severity.ERROR) == []
    skipped = [d for d in diags if d.code == VALIDATION_SKIPPED]
    assert len(skipped) == 1 and skipped[0].node == "mid"
    # The skipped node hides the batch dim; the downstream contract still
    # pins what it can compute from its own parameters.
    assert outs == [(None, 10)]


def test_add_join_mismatch_matches_runtime_failure():
    # Independent oracle: the reference runtime rejects this very addition.
    with pytest.raises(RuntimeError):
        torch.randn(8, 64) + torch.randn(8, 32)

    block = simple_block(
        [
            node("a", "std/linear", {"in_features": 16, "out_features": 64}),
            node("b", "std/linear", {"in_features": 16, "out_features": 32}),
            node("j", "std/relu"),
        ],
        [
            Edge(src=("Input", 0), dst=("a", 0)),
            Edge(src=("Input", 0), dst=("b", 0)),
            Edge(src=("a", 0), dst=("j", 0)),
            Edge(src=("b", 0), dst=("j", 0)),
            Edge(src=("j", 0), dst=("Output", 0)),
        ],
        joins=[JoinPolicy(node_id="j", port=0, op="add")],
    )
    _, diags = propagate_shapes(block, [(8, 16)], project=std_project(block))
    mismatches = [d for d in diags if d.code == SHAPE_MISMATCH]
    assert len(mismatches) == 1 and mismatches[0].node == "j"


def test_rank_mismatch_reported_distinctly():
    block = simple_block(
        [node("fc", "std/linear", {"in_features": 32, "out_features": 64})],
        chain_edges(("Input", "fc"), ("fc", "Output")),
    )
    _, diags = propagate_shapes(block, [(8, 32, 4)], project=std_project(block))
    assert SHAPE_RANK in codes(diags, Severity.ERROR)


def test_repeat_chaining_mismatch():
    block = simple_block(
        [node("c", "std/conv2d", {
            "in_channels": 8, "out_channels": 16, "kernel_size": 1,
        }, repeat=3)],
        chain_edges(("Input", "c"), ("c", "Output")),
    )
    _, diags = propagate_shapes(block, [(2, 8, 8, 8)], project=std_project(block))
    assert REPEAT_SHAPE in codes(diags, Severity.ERROR)


def test_repeat_arity_mismatch_is_error():
    two_out = type(relu())(
        id="std/split", input_count=1, output_count=2,
        init_code="self.${name} = nn.Identity()",
        forward_code="${output_0} = self.${name}(${input})\n${output_1} = ${output_0}",
        imports=("import torch.nn as nn",),
    )
    block = Block(
        id="demo/B", input_count=1, output_count=2,
        nodes=(node("s", "std/split", repeat=2),),
        edges=(
            Edge(src=("Input", 0), dst=("s", 0)),
            Edge(src=("s", 0), dst=("Output", 0)),
            Edge(src=("s", 1), dst=("Output", 1)),
        ),
    )
    project = Project(
        name="demo", entry_block="demo/B",
        mutators=standard_mutators() + (two_out,), blocks=(block,),
    )
    _, diags = propagate_shapes(block, [(2, 4)], project=project)
    assert REPEAT_ARITY in codes(diags, Severity.ERROR)


def test_conditional_branches_must_unify():
    block = Block(
        id="demo/B", input_count=1, output_count=1,
        nodes=(
            node("a", "std/linear", {"in_features": 16, "out_features": 64}),
            node("b", "std/linear", {"in_features": 16, "out_features": 32}),
            NodeInstance(
                node_id="cond", ref="std/relu", kind="conditional",
                condition=ParamExpr.of_text("use_left"),
            ),
        ),
        params=(ParamSpec(name="use_left", ptype="bool", default=True),),
        edges=(
            Edge(src=("Input", 0), dst=("a", 0)),
            Edge(src=("Input", 0), dst=("b", 0)),
            Edge(src=("a", 0), dst=("cond", 0), branch="true_side"),
            Edge(src=("b", 0), dst=("cond", 0), branch="false_side"),
            Edge(src=("cond", 0), dst=("Output", 0)),
        ),
    )
    _, diags = propagate_shapes(block, [(8, 16)], project=std_project(block))
    assert BRANCH_SHAPE in codes(diags, Severity.ERROR)


def test_symbolic_repeat_keeps_fixpoint_dims():
    block = Block(
        id="demo/B", input_count=1, output_count=1,
        params=(ParamSpec(name="depth", ptype="int", required=True, min=1),),
        nodes=(node("c", "std/conv2d", {
            "in_channels": 8, "out_channels": 8, "kernel_size": 3,
            "stride": 1, "padding": 1,
        }, repeat="depth"),),
        edges=tuple(chain_edges(("Input", "c"), ("c", "Output"))),
    )
    outs, diags = propagate_shapes(block, [(2, 8, 8, 8)], project=std_project(block))
    assert codes(diags, Severity.ERROR) == []
    assert outs == [(2, 8, 8, 8)]


# --- validate_project ------------------------------------------------------

def test_resnet_project_passes(resnet):
    report = validate_project(resnet)
    assert report.passed
    assert report.errors() == []
    assert report.shapes[""] == [[None, 1000]]


def test_broken_stride_flags_add_join():
    report = validate_project(broken_resnet_project())
    assert not report.passed
    mismatches = [d for d in report.diagnostics if d.code == SHAPE_MISMATCH]
    assert mismatches, "expected the skip-add to be flagged"
    assert all(d.node == "relu_out" for d in mismatches)


def test_empty_project_warns():
    report = validate_project(Project(name="empty", entry_block=None))
    assert report.passed
    assert NO_ENTRY_CONTENT in codes(report.diagnostics)


def test_report_is_deterministic(resnet):
    from protoml.diagnostics import dumps_canonical

    a = dumps_canonical(validate_project(resnet).to_doc())
    b = dumps_canonical(validate_project(resnet).to_doc())
    assert a == b
