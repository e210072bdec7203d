"""Scalar expression language for user-supplied Lagrangians and embeddings.

Grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

``^`` is right associative and binds tighter than unary minus, so ``-x^2``
is ``-(x^2)``. Evaluation works on floats, numpy arrays and jets alike.
"""

import re
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from finsler_morse.errors import ExpressionSyntaxError, UnknownIdentifierError
from finsler_morse.geometry.jets import Jet

FUNCTIONS = ("sin", "cos", "exp", "sqrt")

_TOKEN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _apply(function: str, value):
    if isinstance(value, Jet):
        return getattr(value, function)()
    value = np.asarray(value, dtype=float)
    if function == "sqrt" and np.any(value < 0.0):
        raise ValueError("sqrt of a negative value")
    return getattr(np, function)(value)


def _power(base, exponent):
    if isinstance(base, Jet) or isinstance(exponent, Jet):
        return base**exponent
    return np.power(np.asarray(base, dtype=float), exponent)


@dataclass(frozen=True)
class Number:
    value: float

    def eval(self, environ: Dict[str, Any]):
        return self.value


@dataclass(frozen=True)
class Variable:
    name: str

    def eval(self, environ: Dict[str, Any]):
        return environ[self.name]


@dataclass(frozen=True)
class Negate:
    operand: Any

    def eval(self, environ: Dict[str, Any]):
        return -self.operand.eval(environ)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Any
    right: Any

    def eval(self, environ: Dict[str, Any]):
        a = self.left.eval(environ)
        b = self.right.eval(environ)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            if not isinstance(b, Jet) and np.any(np.asarray(b) == 0.0):
                raise ZeroDivisionError("division by zero in expression")
            return a / b
        return _power(a, b)


@dataclass(frozen=True)
class Call:
    function: str
    argument: Any

    def eval(self, environ: Dict[str, Any]):
        return _apply(self.function, self.argument.eval(environ))


class Expression:
    """Parsed expression bound to an ordered list of variable names"""

    def __init__(self, source: str, variables: Sequence[str], tree):
        self.source = source
        self.variables = tuple(variables)
        self.tree = tree

    def __call__(self, **values):
        return self.tree.eval(values)

    def evaluate(self, values: Sequence[Any]):
        return self.tree.eval(dict(zip(self.variables, values)))

    @property
    def is_constant(self) -> bool:
        return isinstance(self.tree, Number)

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"


class ExpressionParser:
    """Recursive-descent parser producing the AST above"""

    def __init__(self, source: str, variables: Sequence[str]):
        self.source = source
        self.variables = set(variables)
        self.tokens = self._tokenize(source)
        self.index = 0

    @staticmethod
    def _tokenize(source: str) -> List[Tuple[str, str, int]]:
        tokens = []
        position = 0
        while position < len(source):
            if source[position:].strip() == "":
                break
            match = _TOKEN.match(source, position)
            if not match or match.end() == position:
                offset = len(source[position:]) - len(source[position:].lstrip())
                raise ExpressionSyntaxError(
                    f"unexpected character {source[position + offset]!r}",
                    position + offset,
                )
            kind = match.lastgroup
            start = match.start(kind)
            tokens.append((kind, match.group(kind), start))
            position = match.end()
        tokens.append(("end", "", len(source)))
        return tokens

    def _peek(self) -> Tuple[str, str, int]:
        return self.tokens[self.index]

    def _take(self) -> Tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _expect(self, text: str):
        kind, value, position = self._take()
        if value != text:
            found = value or "end of input"
            raise ExpressionSyntaxError(f"expected {text!r}, found {found!r}", position)

    def parse(self):
        tree = self._expr()
        kind, value, position = self._peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {value!r}", position)
        return tree

    def _expr(self):
        node = self._term()
        while self._peek()[1] in ("+", "-") and self._peek()[0] == "op":
            op = self._take()[1]
            node = BinOp(op, node, self._term())
        return node

    def _term(self):
        node = self._unary()
        while self._peek()[1] in ("*", "/") and self._peek()[0] == "op":
            op = self._take()[1]
            node = BinOp(op, node, self._unary())
        return node

    def _unary(self):
        kind, value, _ = self._peek()
        if kind == "op" and value in ("+", "-"):
            self._take()
            operand = self._unary()
            return operand if value == "+" else Negate(operand)
        return self._power()

    def _power(self):
        node = self._atom()
        if self._peek()[1] == "^":
            self._take()
            node = BinOp("^", node, self._unary())
        return node

    def _atom(self):
        kind, value, position = self._take()
        if kind == "number":
            return Number(float(value))
        if kind == "name":
            if value in FUNCTIONS:
                self._expect("(")
                argument = self._expr()
                self._expect(")")
                return Call(value, argument)
            if value not in self.variables:
                raise UnknownIdentifierError(value, position)
            return Variable(value)
        if value == "(":
            node = self._expr()
            self._expect(")")
            return node
        found = value or "end of input"
        raise ExpressionSyntaxError(f"unexpected token {found!r}", position)


def parse_expression(source: str, variables: Sequence[str]) -> Expression:
    """Parse ``source`` over the given variable names"""
    if not isinstance(source, str):
        source = repr(float(source))
    tree = ExpressionParser(source, variables).parse()
    return Expression(source, variables, tree)


def evaluate_number(value, constants: Dict[str, float] = None) -> float:
    """Read a config number given either as a real or as an expression string"""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    constants = constants or {"pi": float(np.pi)}
    return float(parse_expression(str(value), list(constants)).tree.eval(constants))
