"""Symbolic tensor-shape patterns, output-shape expressions and unification.

Shapes flow through validation as tuples of dims where a dim is either a
positive int or None (unknown); a whole shape may also be None when nothing
about it is known.  Patterns fix the rank of an input and constrain dims
with literals, symbols, wildcards (``*``) or parameter references
(``props.<name>``).  Output shapes are computed either dim-by-dim from
expressions over ``in[i][j]`` / ``props.<name>`` / integers, or copied
wholesale from an input with the ``in[i]`` form.
"""

from __future__ import annotations

import ast
import keyword
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

Dim = int | None
#: Partially known shape; None means nothing (not even rank) is known.
Shape = tuple[Dim, ...] | None

_PROPS_PREFIX = "props."


class ShapeLanguageError(ValueError):
    """Raised for malformed pattern terms or shape expressions."""


def _is_symbol(term: str) -> bool:
    return term.isidentifier() and not keyword.iskeyword(term)


@dataclass(frozen=True)
class ShapePattern:
    """Fixed-rank constraint on one tensor shape."""

    terms: tuple[int | str, ...]

    def __post_init__(self) -> None:
        for i, term in enumerate(self.terms):
            if isinstance(term, bool) or not isinstance(term, (int, str)):
                raise ShapeLanguageError(f"pattern term {term!r} at axis {i}")
            if isinstance(term, int):
                if term < 1:
                    raise ShapeLanguageError(f"pattern literal must be positive, got {term} at axis {i}")
            elif term != "*":
                name = term[len(_PROPS_PREFIX):] if term.startswith(_PROPS_PREFIX) else term
                if not _is_symbol(name):
                    raise ShapeLanguageError(f"bad pattern term {term!r} at axis {i}")

    @property
    def rank(self) -> int:
        return len(self.terms)

    def symbols(self) -> set[str]:
        return {t for t in self.terms if isinstance(t, str) and t != "*" and not t.startswith(_PROPS_PREFIX)}

    def prop_names(self) -> set[str]:
        return {t[len(_PROPS_PREFIX):] for t in self.terms if isinstance(t, str) and t.startswith(_PROPS_PREFIX)}

    def to_doc(self) -> list[int | str]:
        return list(self.terms)


def parse_pattern(doc: Sequence[int | str]) -> ShapePattern:
    if not isinstance(doc, (list, tuple)):
        raise ShapeLanguageError(f"pattern must be a list of dim terms, got {doc!r}")
    return ShapePattern(tuple(doc))


@dataclass(frozen=True)
class UnifyMismatch:
    """Why a pattern failed against a shape; rank and dim failures differ."""

    kind: str  # "rank" | "dim"
    axis: int | None
    expected: Any
    got: Any

    def describe(self) -> str:
        if self.kind == "rank":
            return f"rank mismatch: pattern expects rank {self.expected}, got rank {self.got}"
        return f"dim mismatch at axis {self.axis}: expected {self.expected}, got {self.got}"


def unify_shapes(
    pattern: ShapePattern,
    shape: Shape,
    binding: Mapping[str, int],
    params: Mapping[str, Any] | None = None,
) -> dict[str, int] | UnifyMismatch:
    """Match ``shape`` against ``pattern``, extending ``binding``.

    Symbols bind at their first concrete occurrence and must match exactly
    afterwards.  Unknown dims (None) match anything without binding; a fully
    unknown shape trivially unifies.  Returns the extended binding or the
    first mismatch.
    """
    result = dict(binding)
    if shape is None:
        return result
    if len(shape) != pattern.rank:
        return UnifyMismatch("rank", None, pattern.rank, len(shape))
    for axis, (term, dim) in enumerate(zip(pattern.terms, shape)):
        if dim is None:
            continue
        if isinstance(term, int):
            if dim != term:
                return UnifyMismatch("dim", axis, term, dim)
        elif term == "*":
            continue
        elif term.startswith(_PROPS_PREFIX):
            value = None if params is None else params.get(term[len(_PROPS_PREFIX):])
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, int) or value != dim:
                return UnifyMismatch("dim", axis, value, dim)
        else:
            bound = result.get(term)
            if bound is None:
                result[term] = dim
            elif bound != dim:
                return UnifyMismatch("dim", axis, bound, dim)
    return result


def eval_pattern(
    pattern: ShapePattern,
    binding: Mapping[str, int],
    params: Mapping[str, Any] | None = None,
) -> Shape:
    """Instantiate a pattern under a binding; unresolvable terms become None."""
    dims: list[Dim] = []
    for term in pattern.terms:
        if isinstance(term, int):
            dims.append(term)
        elif term == "*":
            dims.append(None)
        elif term.startswith(_PROPS_PREFIX):
            value = None if params is None else params.get(term[len(_PROPS_PREFIX):])
            dims.append(value if isinstance(value, int) and not isinstance(value, bool) else None)
        else:
            dims.append(binding.get(term))
    return tuple(dims)


_DIM_BIN_OPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.FloorDiv: lambda a, b: a // b,
}

# ``in`` is a Python keyword; rewrite the surface token to a parseable name.
_IN_NAME = "_inputs_"
_IN_TOKEN_RE = __import__("re").compile(r"\bin\b")


def _parse_shape_source(text: str, what: str) -> ast.expr:
    rewritten = _IN_TOKEN_RE.sub(_IN_NAME, text)
    try:
        return ast.parse(rewritten, mode="eval").body
    except SyntaxError as exc:
        raise ShapeLanguageError(f"invalid {what} {text!r}: {exc.msg}") from None


def _check_dim_node(node: ast.expr) -> None:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, int) and not isinstance(node.value, bool):
            return
        raise ShapeLanguageError(f"only integer literals allowed, got {node.value!r}")
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _DIM_BIN_OPS:
            raise ShapeLanguageError(f"operator {type(node.op).__name__} is not allowed")
        _check_dim_node(node.left)
        _check_dim_node(node.right)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        _check_dim_node(node.operand)
        return
    if _input_dim_ref(node) is not None or _prop_ref(node) is not None:
        return
    raise ShapeLanguageError(f"unsupported shape expression syntax: {type(node).__name__}")


def _input_dim_ref(node: ast.expr) -> tuple[int, int] | None:
    """Match ``in[i][j]`` and return (i, j)."""
    if not isinstance(node, ast.Subscript):
        return None
    inner = node.value
    if not isinstance(inner, ast.Subscript):
        return None
    if not (isinstance(inner.value, ast.Name) and inner.value.id == _IN_NAME):
        return None
    i = _const_index(inner.slice)
    j = _const_index(node.slice)
    if i is None or j is None:
        raise ShapeLanguageError("input dim indices must be integer literals")
    return i, j


def _input_whole_ref(node: ast.expr) -> int | None:
    """Match ``in[i]`` and return i."""
    if not isinstance(node, ast.Subscript):
        return None
    if not (isinstance(node.value, ast.Name) and node.value.id == _IN_NAME):
        return None
    i = _const_index(node.slice)
    if i is None:
        raise ShapeLanguageError("input index must be an integer literal")
    return i


def _prop_ref(node: ast.expr) -> str | None:
    if isinstance(node, ast.Attribute) and isinstance(node.value, ast.Name) and node.value.id == "props":
        return node.attr
    return None


def _const_index(node: ast.expr) -> int | None:
    if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
        return node.value
    return None


@dataclass(frozen=True)
class DimExpr:
    """One output dim computed from input dims, parameters and integers."""

    text: str
    _tree: ast.expr = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        tree = _parse_shape_source(self.text, "shape expression")
        if _input_whole_ref(tree) is not None and _input_dim_ref(tree) is None:
            raise ShapeLanguageError(f"{self.text!r}: whole-input form not allowed inside a dim list")
        _check_dim_node(tree)
        object.__setattr__(self, "_tree", tree)

    def input_refs(self) -> set[tuple[int, int]]:
        refs = set()
        for node in ast.walk(self._tree):
            ref = _input_dim_ref(node)
            if ref is not None:
                refs.add(ref)
        return refs

    def prop_names(self) -> set[str]:
        return {name for node in ast.walk(self._tree) if (name := _prop_ref(node)) is not None}

    def evaluate(self, inputs: Sequence[Shape], params: Mapping[str, Any]) -> Dim:
        """Compute the dim; None when unknown inputs/params block it.

        Raises ShapeLanguageError for structural faults (bad input index,
        rank overrun, division by zero).
        """
        return _eval_dim(self._tree, inputs, params)


def _eval_dim(node: ast.expr, inputs: Sequence[Shape], params: Mapping[str, Any]) -> Dim:
    ref = _input_dim_ref(node)
    if ref is not None:
        i, j = ref
        if i < 0 or i >= len(inputs):
            raise ShapeLanguageError(f"expression references input {i} but only {len(inputs)} exist")
        shape = inputs[i]
        if shape is None:
            return None
        if j < 0 or j >= len(shape):
            raise ShapeLanguageError(f"input {i} has rank {len(shape)}, expression references dim {j}")
        return shape[j]
    name = _prop_ref(node)
    if name is not None:
        value = params.get(name)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ShapeLanguageError(f"parameter {name!r} used as a dim but is {value!r}")
        return value
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.UnaryOp):
        operand = _eval_dim(node.operand, inputs, params)
        return None if operand is None else -operand
    left = _eval_dim(node.left, inputs, params)
    right = _eval_dim(node.right, inputs, params)
    if left is None or right is None:
        return None
    if isinstance(node.op, ast.FloorDiv) and right == 0:
        raise ShapeLanguageError("division by zero in shape expression")
    return _DIM_BIN_OPS[type(node.op)](left, right)


@dataclass(frozen=True)
class OutputShapeExpr:
    """Shape rule for one output: either copy input i or a fixed dim list."""

    identity_input: int | None = None
    dims: tuple[DimExpr, ...] | None = None

    def __post_init__(self) -> None:
        if (self.identity_input is None) == (self.dims is None):
            raise ShapeLanguageError("output shape expr must be either in[i] or a dim list")

    def input_refs(self) -> set[int]:
        if self.identity_input is not None:
            return {self.identity_input}
        return {i for d in self.dims for (i, _) in d.input_refs()}

    def prop_names(self) -> set[str]:
        if self.dims is None:
            return set()
        return {name for d in self.dims for name in d.prop_names()}

    def max_dim_ref(self, input_index: int) -> int | None:
        if self.dims is None:
            return None
        refs = [j for d in self.dims for (i, j) in d.input_refs() if i == input_index]
        return max(refs) if refs else None

    def evaluate(self, inputs: Sequence[Shape], params: Mapping[str, Any]) -> tuple[Shape, str | None]:
        """Return (shape, error).  Non-positive computed dims are errors."""
        if self.identity_input is not None:
            if self.identity_input >= len(inputs):
                return None, f"output copies input {self.identity_input} but only {len(inputs)} exist"
            return inputs[self.identity_input], None
        dims: list[Dim] = []
        for expr in self.dims:
            try:
                value = expr.evaluate(inputs, params)
            except ShapeLanguageError as exc:
                return None, f"{expr.text}: {exc}"
            if value is not None and value < 1:
                return None, f"{expr.text}: computed non-positive dim {value}"
            dims.append(value)
        return tuple(dims), None

    def to_doc(self) -> str | list[str]:
        if self.identity_input is not None:
            return f"in[{self.identity_input}]"
        return [d.text for d in self.dims]


def parse_output_expr(doc: str | Sequence[str]) -> OutputShapeExpr:
    if isinstance(doc, str):
        tree = _parse_shape_source(doc, "output shape expr")
        index = _input_whole_ref(tree)
        if index is None:
            raise ShapeLanguageError(f"string output expr must have the form in[i], got {doc!r}")
        return OutputShapeExpr(identity_input=index)
    if isinstance(doc, (list, tuple)):
        return OutputShapeExpr(dims=tuple(DimExpr(str(t)) for t in doc))
    raise ShapeLanguageError(f"output shape expr must be a string or list, got {doc!r}")


def merge_shapes(shapes: Sequence[Shape]) -> tuple[Shape, UnifyMismatch | None]:
    """Combine shapes that must be identical (add/multiply joins, branches).

    Unknown dims defer to known ones; a conflict between two known dims (or
    two known ranks) is a mismatch.
    """
    known = [s for s in shapes if s is not None]
    if not known:
        return None, None
    rank = len(known[0])
    for s in known[1:]:
        if len(s) != rank:
            return None, UnifyMismatch("rank", None, rank, len(s))
    dims: list[Dim] = []
    for axis in range(rank):
        value: Dim = None
        for s in known:
            d = s[axis]
            if d is None:
                continue
            if value is None:
                value = d
            elif value != d:
                return None, UnifyMismatch("dim", axis, value, d)
        dims.append(value)
    return tuple(dims), None


def concat_shapes(shapes: Sequence[Shape], axis: int) -> tuple[Shape, str | None]:
    """Shape of concatenation along ``axis``; all other axes must agree."""
    known = [s for s in shapes if s is not None]
    if len(known) != len(shapes):
        return None, None  # an unknown operand hides both the sum and conflicts
    rank = len(known[0])
    for s in known[1:]:
        if len(s) != rank:
            return None, f"concat rank mismatch: {len(s)} vs {rank}"
    norm_axis = axis if axis >= 0 else rank + axis
    if norm_axis < 0 or norm_axis >= rank:
        return None, f"concat axis {axis} out of range for rank {rank}"
    dims: list[Dim] = []
    for ax in range(rank):
        if ax == norm_axis:
            parts = [s[ax] for s in known]
            dims.append(None if any(p is None for p in parts) else sum(parts))
            continue
        value: Dim = None
        for s in known:
            d = s[ax]
            if d is None:
                continue
            if value is None:
                value = d
            elif value != d:
                return None, f"concat operands disagree at axis {ax}: {value} vs {d}"
        dims.append(value)
    return tuple(dims), None
