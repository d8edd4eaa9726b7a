"""Arithmetic formulas for expression mechanisms.

Grammar (precedence climbing, left associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | atom
    atom   := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

Identifiers are parent node names or ``eps``; the callable names are
``exp``, ``tanh``, ``sin`` and ``sigmoid``.  Evaluation is vectorised over
numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import SpecSyntaxError

NOISE = "eps"
FUNCTIONS = {"exp": np.exp, "tanh": np.tanh, "sin": np.sin, "sigmoid": expit}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/()]))"
)


@dataclass(frozen=True)
class Num:
    value: float


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
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


def _tokenize(text, line, col0):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            skipped = len(text[pos:]) - len(text[pos:].lstrip())
            raise SpecSyntaxError(f"unexpected character {text[pos + skipped]!r} in formula",
                                  line, col0 + pos + skipped, ("number", "identifier", "operator"))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), col0 + start))
        pos = m.end()
    tokens.append(("end", "", col0 + len(text)))
    return tokens


class _Parser:
    def __init__(self, text, line, col0):
        self.tokens = _tokenize(text, line, col0)
        self.i = 0
        self.line = line

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected):
        kind, value, col = self.peek()
        found = "end of formula" if kind == "end" else repr(value)
        raise SpecSyntaxError(f"unexpected {found} in formula", self.line, col, expected)

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(("operator", "end of formula"))
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, value, col = self.peek()
        if kind == "num":
            self.take()
            return Num(float(value))
        if kind == "id":
            self.take()
            if self.peek()[0:2] == ("op", "("):
                if value not in FUNCTIONS:
                    raise SpecSyntaxError(f"unknown function {value!r}", self.line, col, tuple(sorted(FUNCTIONS)))
                self.take()
                arg = self.expr()
                if self.peek()[0:2] != ("op", ")"):
                    self.fail(("')'",))
                self.take()
                return Call(value, arg)
            if value in FUNCTIONS:
                raise SpecSyntaxError(f"function {value!r} needs an argument", self.line, col, ("'('",))
            return Var(value)
        if (kind, value) == ("op", "("):
            self.take()
            node = self.expr()
            if self.peek()[0:2] != ("op", ")"):
                self.fail(("')'",))
            self.take()
            return node
        self.fail(("number", "identifier", "'('", "'-'"))


def parse_formula(text: str, line: int = 1, column: int = 1) -> Node:
    """Parse ``text``; error positions are reported relative to (line, column)."""
    return _Parser(text, line, column).parse()


def variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, Call):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def evaluate(node: Node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](evaluate(node.arg, env))
    left, right = evaluate(node.left, env), evaluate(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    with np.errstate(divide="ignore", invalid="ignore"):
        return left / right


def split_additive_noise(node: Node):
    """Return the noise-free part ``f`` when the formula reads ``f + eps``.

    Formulas that never mention ``eps`` are additive by convention (the
    mechanism adds its noise).  Returns ``None`` when ``eps`` enters in any
    other way.
    """
    if NOISE not in variables(node):
        return node
    terms = []

    def flatten(n, sign):
        if isinstance(n, BinOp) and n.op in "+-":
            flatten(n.left, sign)
            flatten(n.right, sign if n.op == "+" else -sign)
        else:
            terms.append((sign, n))

    flatten(node, 1)
    noise_terms = [(s, t) for s, t in terms if NOISE in variables(t)]
    if len(noise_terms) != 1 or noise_terms[0] != (1, Var(NOISE)):
        return None
    rest = [(s, t) for s, t in terms if (s, t) != (1, Var(NOISE))]
    if not rest:
        return Num(0.0)
    out = rest[0][1] if rest[0][0] > 0 else Neg(rest[0][1])
    for s, t in rest[1:]:
        out = BinOp("+" if s > 0 else "-", out, t)
    return out


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_source(node: Node, parent_prec: int = 0, right_side: bool = False) -> str:
    """Canonical text; ``parse_formula(to_source(n)) == n``."""
    if isinstance(node, Num):
        text = repr(node.value)
        return f"({text})" if text.startswith("-") or "inf" in text or "nan" in text else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Neg):
        text = "-" + to_source(node.operand, 3)
        return f"({text})" if parent_prec >= 3 else text
    prec = _PRECEDENCE[node.op]
    text = f"{to_source(node.left, prec)} {node.op} {to_source(node.right, prec, True)}"
    if prec < parent_prec or (prec == parent_prec and right_side):
        return f"({text})"
    return text
