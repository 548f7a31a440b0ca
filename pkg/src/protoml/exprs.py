"""Parameter binding and condition expressions.

A binding value in a component document is either a plain literal (number,
bool, string, list) or an expression string wrapped in ``${...}``.  The
expression language is a restricted subset of Python: names (block
parameters, block-level variables, ``repeat_index``, ``input_<k>``),
int/float/bool/str/None literals, arithmetic (``+ - * //``), comparisons,
``and``/``or``/``not`` and conditional expressions.  Calls, attribute access
and subscripts are rejected, which keeps evaluation total.
"""

from __future__ import annotations

import ast
import keyword
from dataclasses import dataclass, field
from typing import Any, Mapping

REPEAT_INDEX = "repeat_index"

#: Identifiers that may never be used as parameter or variable names; they
#: would collide with names the generated code depends on.
RESERVED_NAMES = frozenset({"self", "torch", "nn", REPEAT_INDEX, "in", "props"})


class ExprError(ValueError):
    """Raised when an expression fails to parse or uses forbidden syntax."""


class ExprEvalError(ValueError):
    """Raised when a structurally valid expression cannot be evaluated."""


def is_valid_name(name: str) -> bool:
    return name.isidentifier() and not keyword.iskeyword(name) and name not in RESERVED_NAMES


_BIN_OPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.FloorDiv: lambda a, b: a // b,
}

_CMP_OPS = {
    ast.Eq: lambda a, b: a == b,
    ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b,
    ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b,
    ast.GtE: lambda a, b: a >= b,
    ast.Is: lambda a, b: a is b,
    ast.IsNot: lambda a, b: a is not b,
}


def _check_node(node: ast.expr) -> None:
    if isinstance(node, ast.Constant):
        if node.value is None or isinstance(node.value, (bool, int, float, str)):
            return
        raise ExprError(f"unsupported literal {node.value!r}")
    if isinstance(node, ast.Name):
        return
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BIN_OPS:
            raise ExprError(f"operator {type(node.op).__name__} is not allowed")
        _check_node(node.left)
        _check_node(node.right)
        return
    if isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.Not)):
            raise ExprError(f"operator {type(node.op).__name__} is not allowed")
        _check_node(node.operand)
        return
    if isinstance(node, ast.BoolOp):
        for value in node.values:
            _check_node(value)
        return
    if isinstance(node, ast.Compare):
        if any(type(op) not in _CMP_OPS for op in node.ops):
            raise ExprError("unsupported comparison operator")
        _check_node(node.left)
        for comp in node.comparators:
            _check_node(comp)
        return
    if isinstance(node, ast.IfExp):
        _check_node(node.test)
        _check_node(node.body)
        _check_node(node.orelse)
        return
    if isinstance(node, ast.List):
        for elt in node.elts:
            _check_node(elt)
        return
    raise ExprError(f"unsupported syntax: {type(node).__name__}")


def _parse(text: str) -> ast.expr:
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"invalid expression {text!r}: {exc.msg}") from None
    _check_node(tree.body)
    return tree.body


def _eval_node(node: ast.expr, env: Mapping[str, Any]) -> Any:
    """Evaluate with unknown-propagation: any unresolved name yields None."""
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return env.get(node.id)
    if isinstance(node, ast.BinOp):
        left = _eval_node(node.left, env)
        right = _eval_node(node.right, env)
        if left is None or right is None:
            return None
        try:
            return _BIN_OPS[type(node.op)](left, right)
        except (TypeError, ZeroDivisionError) as exc:
            raise ExprEvalError(str(exc)) from None
    if isinstance(node, ast.UnaryOp):
        operand = _eval_node(node.operand, env)
        if operand is None:
            return None
        if isinstance(node.op, ast.USub):
            try:
                return -operand
            except TypeError as exc:
                raise ExprEvalError(str(exc)) from None
        return not operand
    if isinstance(node, ast.BoolOp):
        values = [_eval_node(v, env) for v in node.values]
        if any(v is None for v in values):
            return None
        if isinstance(node.op, ast.And):
            result = values[0]
            for v in values[1:]:
                result = result and v
            return result
        result = values[0]
        for v in values[1:]:
            result = result or v
        return result
    if isinstance(node, ast.Compare):
        left = _eval_node(node.left, env)
        for op, comp_node in zip(node.ops, node.comparators):
            right = _eval_node(comp_node, env)
            if isinstance(op, (ast.Is, ast.IsNot)):
                outcome = _CMP_OPS[type(op)](left, right)
            else:
                if left is None or right is None:
                    return None
                try:
                    outcome = _CMP_OPS[type(op)](left, right)
                except TypeError as exc:
                    raise ExprEvalError(str(exc)) from None
            if not outcome:
                return False
            left = right
        return True
    if isinstance(node, ast.IfExp):
        test = _eval_node(node.test, env)
        if test is None:
            return None
        return _eval_node(node.body if test else node.orelse, env)
    if isinstance(node, ast.List):
        values = [_eval_node(e, env) for e in node.elts]
        if any(v is None for v in values):
            return None
        return values
    raise ExprEvalError(f"unexpected node {type(node).__name__}")


class _Renamer(ast.NodeTransformer):
    def __init__(self, names: Mapping[str, str]):
        self.names = names

    def visit_Name(self, node: ast.Name) -> ast.expr:
        replacement = self.names.get(node.id)
        if replacement is None:
            raise ExprEvalError(f"no replacement for name {node.id!r}")
        return ast.parse(replacement, mode="eval").body


def _is_atom(node: ast.expr) -> bool:
    return isinstance(node, (ast.Name, ast.Constant, ast.Attribute, ast.List))


@dataclass(frozen=True)
class ParamExpr:
    """A literal value or a ``${...}`` expression bound to a node parameter."""

    literal: Any = None
    text: str | None = None
    _tree: ast.expr | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.text is not None:
            object.__setattr__(self, "_tree", _parse(self.text))

    @classmethod
    def of_literal(cls, value: Any) -> "ParamExpr":
        return cls(literal=value)

    @classmethod
    def of_text(cls, text: str) -> "ParamExpr":
        return cls(text=text)

    @property
    def is_literal(self) -> bool:
        return self.text is None

    def names(self) -> set[str]:
        if self._tree is None:
            return set()
        return {n.id for n in ast.walk(self._tree) if isinstance(n, ast.Name)}

    def evaluate(self, env: Mapping[str, Any]) -> Any:
        """Resolve to a value; None means the value is not yet known."""
        if self._tree is None:
            return self.literal
        return _eval_node(self._tree, env)

    def compile(self, names: Mapping[str, str]) -> str:
        """Render as Python source, rewriting names through ``names``.

        Non-atomic results are parenthesized so the output can be spliced
        into any expression context.
        """
        if self._tree is None:
            return repr(self.literal)
        rewritten = _Renamer(names).visit(
            ast.parse(self.text, mode="eval").body  # fresh tree; transformer mutates
        )
        source = ast.unparse(rewritten)
        if _is_atom(rewritten):
            return source
        return f"({source})"

    def infer_type(self, decls: Mapping[str, str | None]) -> str | None:
        """Best-effort result type (a ptype name), or None when undecidable."""
        if self._tree is None:
            return literal_ptype(self.literal)
        return _infer(self._tree, decls)


def literal_ptype(value: Any) -> str | None:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "string"
    if isinstance(value, (list, tuple)):
        if all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return "int_list"
        return None
    return None


def _infer(node: ast.expr, decls: Mapping[str, str | None]) -> str | None:
    if isinstance(node, ast.Constant):
        return literal_ptype(node.value)
    if isinstance(node, ast.Name):
        if node.id == REPEAT_INDEX:
            return "int"
        return decls.get(node.id)
    if isinstance(node, ast.BinOp):
        left = _infer(node.left, decls)
        right = _infer(node.right, decls)
        if left == "int" and right == "int":
            return "int"
        if {left, right} <= {"int", "float"} and None not in (left, right):
            return "float"
        return None
    if isinstance(node, ast.UnaryOp):
        if isinstance(node.op, ast.Not):
            return "bool"
        return _infer(node.operand, decls)
    if isinstance(node, (ast.BoolOp, ast.Compare)):
        return "bool"
    if isinstance(node, ast.IfExp):
        body = _infer(node.body, decls)
        orelse = _infer(node.orelse, decls)
        return body if body == orelse else None
    if isinstance(node, ast.List):
        if all(_infer(e, decls) == "int" for e in node.elts):
            return "int_list"
        return None
    return None


def parse_binding(value: Any) -> ParamExpr:
    """Decode the document form of a binding (literal or ``${expr}``)."""
    if isinstance(value, str):
        if value.startswith("${") and value.endswith("}"):
            return ParamExpr.of_text(value[2:-1])
        if value.startswith("$${"):
            return ParamExpr.of_literal(value[1:])
        return ParamExpr.of_literal(value)
    if isinstance(value, list):
        return ParamExpr.of_literal(list(value))
    if value is None or isinstance(value, (bool, int, float)):
        return ParamExpr.of_literal(value)
    raise ExprError(f"unsupported binding value {value!r}")


def binding_to_doc(expr: ParamExpr) -> Any:
    if expr.text is not None:
        return "${" + expr.text + "}"
    if isinstance(expr.literal, str) and expr.literal.startswith("${"):
        return "$" + expr.literal
    return expr.literal
