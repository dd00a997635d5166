"""Arithmetic expression language used for coefficients, nonlinearities and data.

Grammar (precedence climbing, ``^`` is right associative)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | 'pi' | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

Evaluation works on Python floats and on numpy arrays alike, so a coefficient
can be sampled on a whole grid in one call.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Expression",
    "Num",
    "Pi",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExpressionError",
    "ExpressionSyntaxError",
    "UnknownIdentifierError",
    "ArityError",
    "EvaluationDomainError",
    "MissingBindingError",
    "FUNCTIONS",
    "parse_expression",
    "evaluate",
    "to_source",
    "substitute",
    "variables_for_dimension",
]


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExpressionError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExpressionError):
    pass


class EvaluationDomainError(ExpressionError, ArithmeticError):
    pass


class MissingBindingError(ExpressionError, KeyError):
    pass


# name -> (min arity, max arity or None)
FUNCTIONS: dict[str, tuple[int, int | None]] = {
    "sin": (1, 1),
    "cos": (1, 1),
    "exp": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "tanh": (1, 1),
    "min": (2, None),
    "max": (2, None),
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Union[Num, Pi, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class Expression:
    """Parsed expression: the AST root plus the source it came from."""

    root: Node
    source: str = ""

    @property
    def variables(self) -> frozenset[str]:
        return _free_vars(self.root)

    def depends_on(self, *names: str) -> bool:
        return not self.variables.isdisjoint(names)

    def __call__(self, **bindings):
        return evaluate(self, bindings)

    def __str__(self) -> str:
        return to_source(self)

    def __eq__(self, other) -> bool:
        # structural equality, the source text is not part of identity
        if not isinstance(other, Expression):
            return NotImplemented
        return self.root == other.root

    def __hash__(self) -> int:
        return hash(self.root)


def variables_for_dimension(d: int, *, space=True, cell=True, tau=True, v=True) -> frozenset[str]:
    names = set()
    if space:
        names.update(f"x{i + 1}" for i in range(d))
    if cell:
        names.update(f"y{i + 1}" for i in range(d))
    if tau:
        names.add("tau")
    if v:
        names.add("v")
    return frozenset(names)


def _free_vars(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Neg):
        return _free_vars(node.operand)
    if isinstance(node, BinOp):
        return _free_vars(node.left) | _free_vars(node.right)
    if isinstance(node, Call):
        out = frozenset()
        for a in node.args:
            out |= _free_vars(a)
        return out
    return frozenset()


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[a-z][a-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExpressionSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, allowed_vars):
        self.src = src
        self.allowed = frozenset(allowed_vars)
        self.tokens = _tokenize(src)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text):
        kind, val, pos = self.tok
        if val != text or kind == "eof":
            found = "end of input" if kind == "eof" else repr(val)
            raise ExpressionSyntaxError(f"expected {text!r}, found {found}", pos)
        self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.tok
        if kind != "eof":
            raise ExpressionSyntaxError(f"unexpected token {val!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        base = self.unary()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            return BinOp("^", base, self.factor())
        return base

    def unary(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Node:
        kind, val, pos = self.tok
        if kind == "number":
            self.advance()
            value = float(val)
            if not math.isfinite(value):
                raise ExpressionSyntaxError(f"literal {val!r} overflows", pos)
            return Num(value)
        if kind == "ident":
            self.advance()
            if self.tok[0] == "op" and self.tok[1] == "(":
                return self.call(val, pos)
            if val == "pi":
                return Pi()
            if val in self.allowed:
                return Var(val)
            raise UnknownIdentifierError(val, pos)
        if kind == "op" and val == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "eof" else repr(val)
        raise ExpressionSyntaxError(f"unexpected {found}", pos)

    def call(self, name, pos) -> Node:
        if name not in FUNCTIONS:
            raise UnknownIdentifierError(name, pos)
        self.expect("(")
        args = [self.expr()]
        while self.tok[0] == "op" and self.tok[1] == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = str(lo) if hi == lo else f"at least {lo}"
            raise ArityError(f"{name}() takes {want} argument(s), got {len(args)} (offset {pos})")
        return Call(name, tuple(args))


def parse_expression(src: str, allowed_vars) -> Expression:
    """Parse ``src`` into an :class:`Expression` over ``allowed_vars``."""
    if not isinstance(src, str) or not src.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    return Expression(_Parser(src, allowed_vars).parse(), src)


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _fmt_num(x: float) -> str:
    s = repr(float(x))
    if s.startswith("-"):
        # literals are parsed unsigned; keep the sign as a unary minus
        return f"(-{s[1:]})"
    return s


def _print(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_print(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_print(node.left)} {node.op} {_print(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def to_source(expr: Expression | Node) -> str:
    """Canonical, fully parenthesised source text; re-parses to the same AST."""
    root = expr.root if isinstance(expr, Expression) else expr
    return _print(root)


# ---------------------------------------------------------------------------
# evaluation

_UNARY = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}


def _check(value, what):
    if not np.all(np.isfinite(value)):
        raise EvaluationDomainError(f"{what} produced a non-finite value")
    return value


def _eval(node: Node, env: Mapping):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Pi):
        return math.pi
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise MissingBindingError(f"no binding for variable {node.name!r}") from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        op = node.op
        with np.errstate(all="ignore"):
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if np.any(np.asarray(b) == 0):
                    raise EvaluationDomainError("division by zero")
                return _check(np.true_divide(a, b), "division")
            return _check(np.power(a, b), "power")
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        name = node.func
        if name == "sqrt" and np.any(np.asarray(args[0]) < 0):
            raise EvaluationDomainError("sqrt of a negative number")
        with np.errstate(all="ignore"):
            if name in _UNARY:
                return _check(_UNARY[name](args[0]), name)
            out = args[0]
            red = np.minimum if name == "min" else np.maximum
            for a in args[1:]:
                out = red(out, a)
            return out
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(expr: Expression, bindings: Mapping):
    """Evaluate ``expr``; returns a float for scalar bindings, an array otherwise."""
    env = {}
    for k, val in bindings.items():
        arr = np.asarray(val, dtype=float)
        env[k] = float(arr) if arr.ndim == 0 else arr
    out = _eval(expr.root, env)
    out = np.asarray(out, dtype=float)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# partial evaluation


def _fold(node: Node, env: Mapping) -> Node:
    if isinstance(node, Var):
        if node.name in env:
            return Num(float(env[node.name]))
        return node
    if isinstance(node, Neg):
        inner = _fold(node.operand, env)
        if isinstance(inner, Num):
            return Num(-inner.value)
        return Neg(inner)
    if isinstance(node, BinOp):
        left, right = _fold(node.left, env), _fold(node.right, env)
        if isinstance(left, (Num, Pi)) and isinstance(right, (Num, Pi)):
            return Num(float(_eval(BinOp(node.op, left, right), {})))
        return BinOp(node.op, left, right)
    if isinstance(node, Call):
        args = tuple(_fold(a, env) for a in node.args)
        if all(isinstance(a, (Num, Pi)) for a in args):
            return Num(float(_eval(Call(node.func, args), {})))
        return Call(node.func, args)
    return node


def substitute(expr: Expression, bindings: Mapping[str, float]) -> Expression:
    """Bind some variables to numbers and fold every constant subtree."""
    return Expression(_fold(expr.root, bindings))
