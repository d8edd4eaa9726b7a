"""Scenario files (``.cg``).

A scenario is one ``graph`` block::

    # college admissions
    graph college {
      node A { kind: bernoulli, p: 0.5, role: sensitive }
      node D { kind: linear, intercept: 0.5, coef: { A: 4.0 }, sigma: 1.0 }
      node Y { kind: expr, expr: "A * D + eps", sigma: 1.0, role: outcome }
      edge A -> D { label: unfair }
      bind { group: A, label: Y, score: R, threshold: 0.5 }
      counts 0 { tp: 36, fp: 22, tn: 28, fn: 14 }
    }

Nodes without ``kind`` declare a graph only scenario.  Coefficients and
formula identifiers declare their edges implicitly; an explicit ``edge`` is
needed only to attach a label or when no mechanism is given.  ``bind`` names
the dataset columns used by the metrics and ``counts`` gives confusion
counts per group directly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from . import formula
from .errors import SemanticError, SpecSyntaxError, ValidationError
from .graph import FAIR, UNFAIR, UNKNOWN, CausalGraph, validate_graph
from .metrics import Confusion, GroupedCounts
from .scm import (
    BernoulliLogistic,
    BernoulliRoot,
    Expression,
    LinearGaussian,
    StructuralModel,
    build_model,
)

KINDS = ("bernoulli", "logistic", "linear", "expr")
ROLES = ("sensitive", "outcome")
NODE_KEYS = {
    None: {"role"},
    "bernoulli": {"kind", "p", "role"},
    "logistic": {"kind", "intercept", "coef", "role"},
    "linear": {"kind", "intercept", "coef", "sigma", "role"},
    "expr": {"kind", "expr", "sigma", "role"},
}
BIND_KEYS = ("group", "label", "prediction", "score", "threshold")
COUNT_KEYS = ("tp", "fp", "tn", "fn")


@dataclass(frozen=True)
class Bindings:
    group: str
    label: str
    prediction: Optional[str] = None
    score: Optional[str] = None
    threshold: float = 0.5

    def columns(self):
        return [c for c in (self.group, self.label, self.prediction, self.score) if c is not None]

    def to_dict(self):
        out = {"group": self.group, "label": self.label}
        if self.prediction is not None:
            out["prediction"] = self.prediction
        else:
            out.update(score=self.score, threshold=self.threshold)
        return out


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    graph: CausalGraph
    model: Optional[StructuralModel] = None
    bindings: Optional[Bindings] = None
    counts: Optional[GroupedCounts] = None


# ---------------------------------------------------------------- tokens

_TOKENS = re.compile(
    r"""(?P<ws>[ \t\r]+)
      | (?P<nl>\n)
      | (?P<comment>\#[^\n]*)
      | (?P<arrow>->)
      | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
      | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<str>"[^"\n]*")
      | (?P<punct>[{}:,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # id | num | str | arrow | punct | end
    text: str
    line: int
    column: int

    def describe(self):
        return "end of file" if self.kind == "end" else repr(self.text)


def tokenize(text: str) -> list[Token]:
    tokens, pos, line, col = [], 0, 1, 1
    while pos < len(text):
        m = _TOKENS.match(text, pos)
        if not m:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind, value = m.lastgroup, m.group()
        if kind == "nl":
            line, col = line + 1, 1
        else:
            if kind not in ("ws", "comment"):
                tokens.append(Token(kind, value, line, col))
            col += len(value)
        pos = m.end()
    tokens.append(Token("end", "", line, col))
    return tokens


# ---------------------------------------------------------------- parse tree

@dataclass
class _Value:
    kind: str  # num | id | str | map
    value: object
    token: Token


class _Parser:
    def __init__(self, text):
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def fail(self, expected):
        tok = self.peek()
        raise SpecSyntaxError(f"unexpected {tok.describe()}", tok.line, tok.column, expected)

    def expect(self, kind, text=None, name=None):
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            self.fail((name or (repr(text) if text else kind),))
        self.i += 1
        return tok

    def accept(self, kind, text=None):
        tok = self.peek()
        if tok.kind == kind and (text is None or tok.text == text):
            self.i += 1
            return tok
        return None

    def scenario(self):
        self.expect("id", "graph", "'graph'")
        name = self.expect("id", name="graph name")
        self.expect("punct", "{")
        items = []
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.text == "}":
                self.i += 1
                break
            if tok.kind != "id" or tok.text not in ("node", "edge", "bind", "counts"):
                self.fail(("'node'", "'edge'", "'bind'", "'counts'", "'}'"))
            items.append(getattr(self, tok.text)())
        self.expect("end", name="end of file")
        return name, items

    def pairs(self):
        """``{ key: value, ... }`` with an optional trailing comma."""
        self.expect("punct", "{")
        out = []
        while not self.accept("punct", "}"):
            key = self.expect("id", name="key")
            self.expect("punct", ":")
            out.append((key, self.value()))
            if not self.accept("punct", ","):
                self.expect("punct", "}", "',' or '}'")
                break
        return out

    def value(self):
        tok = self.peek()
        if tok.kind == "num":
            self.i += 1
            return _Value("num", float(tok.text), tok)
        if tok.kind == "id":
            self.i += 1
            return _Value("id", tok.text, tok)
        if tok.kind == "str":
            self.i += 1
            return _Value("str", tok.text[1:-1], tok)
        if tok.kind == "punct" and tok.text == "{":
            return _Value("map", self.pairs(), tok)
        self.fail(("number", "identifier", "string", "'{'"))

    def node(self):
        kw = self.expect("id", "node")
        name = self.expect("id", name="node name")
        pairs = self.pairs() if self.peek().kind == "punct" and self.peek().text == "{" else []
        return ("node", kw, name, pairs)

    def edge(self):
        kw = self.expect("id", "edge")
        src = self.expect("id", name="node name")
        self.expect("arrow", "->", "'->'")
        dst = self.expect("id", name="node name")
        pairs = self.pairs() if self.peek().kind == "punct" and self.peek().text == "{" else []
        return ("edge", kw, (src, dst), pairs)

    def bind(self):
        kw = self.expect("id", "bind")
        return ("bind", kw, None, self.pairs())

    def counts(self):
        kw = self.expect("id", "counts")
        group = self.expect("num", name="group (0 or 1)")
        return ("counts", kw, group, self.pairs())


# ---------------------------------------------------------------- semantics

def _semantic(message, tok: Token):
    return SemanticError(message, tok.line, tok.column)


def _as_dict(pairs, allowed, where):
    out = {}
    for key, val in pairs:
        if key.text not in allowed:
            raise _semantic(f"unknown key {key.text!r} in {where}; allowed: {', '.join(sorted(allowed))}", key)
        if key.text in out:
            raise _semantic(f"duplicate key {key.text!r} in {where}", key)
        out[key.text] = val
    return out


def _number(val: _Value, what):
    if val.kind != "num":
        raise _semantic(f"{what} must be a number", val.token)
    return val.value


def _ident(val: _Value, what, choices=None):
    if val.kind != "id" or (choices and val.value not in choices):
        allowed = f" (one of {', '.join(choices)})" if choices else ""
        raise _semantic(f"{what} must be an identifier{allowed}", val.token)
    return val.value


def _coefficients(val: _Value, declared):
    if val.kind != "map":
        raise _semantic("coef must be a map { parent: number, ... }", val.token)
    out = {}
    for key, v in val.value:
        if key.text not in declared:
            raise _semantic(f"unknown node {key.text!r}", key)
        if key.text in out:
            raise _semantic(f"duplicate coefficient for {key.text!r}", key)
        out[key.text] = _number(v, f"coefficient of {key.text}")
    return out


def _mechanism(kind, props, declared, name_tok):
    if kind == "bernoulli":
        if "p" not in props:
            raise _semantic("bernoulli nodes need p", name_tok)
        return BernoulliRoot(_number(props["p"], "p"))
    intercept = _number(props["intercept"], "intercept") if "intercept" in props else 0.0
    coef = _coefficients(props["coef"], declared) if "coef" in props else {}
    sigma = _number(props["sigma"], "sigma") if "sigma" in props else 1.0
    if kind == "logistic":
        return BernoulliLogistic(intercept, coef)
    if kind == "linear":
        return LinearGaussian(intercept, coef, sigma)
    if "expr" not in props or props["expr"].kind != "str":
        raise _semantic('expr nodes need expr: "<formula>"', name_tok)
    tok = props["expr"].token
    tree = formula.parse_formula(props["expr"].value, tok.line, tok.column + 1)
    for v in sorted(formula.variables(tree) - {formula.NOISE}):
        if v not in declared:
            raise _semantic(f"formula of {name_tok.text} uses unknown node {v!r}", tok)
    return Expression(props["expr"].value, sigma, tree=tree)


def _build(name_tok, items) -> ScenarioSpec:
    nodes = {}
    for item in items:
        if item[0] == "node":
            tok = item[2]
            if tok.text in nodes:
                raise _semantic(f"duplicate node {tok.text!r}", tok)
            nodes[tok.text] = item
    declared = set(nodes)

    roles, kinds, mechanisms = {}, {}, {}
    implicit = set()
    for name, (_, kw, tok, pairs) in nodes.items():
        kind_val = dict((k.text, v) for k, v in pairs).get("kind")
        kind = _ident(kind_val, "kind", KINDS) if kind_val is not None else None
        props = _as_dict(pairs, NODE_KEYS[kind], f"node {name}")
        kinds[name] = kind
        if "role" in props:
            role = _ident(props["role"], "role", ROLES)
            if role in roles:
                raise _semantic(f"two nodes have role {role}: {roles[role]} and {name}", props["role"].token)
            roles[role] = name
        if kind is not None:
            mech = _mechanism(kind, props, declared, tok)
            mechanisms[name] = mech
            implicit |= {(p, name) for p in mech.parents}

    edges, labels = [], {}
    seen = set()
    for item in items:
        if item[0] != "edge":
            continue
        _, kw, (src, dst), pairs = item
        for t in (src, dst):
            if t.text not in declared:
                raise _semantic(f"unknown node {t.text!r}", t)
        e = (src.text, dst.text)
        if e in seen:
            raise _semantic(f"duplicate edge {src.text} -> {dst.text}", kw)
        seen.add(e)
        props = _as_dict(pairs, {"label"}, f"edge {src.text} -> {dst.text}")
        if "label" in props:
            lab = _ident(props["label"], "label", (FAIR, UNFAIR, UNKNOWN))
            if lab != UNKNOWN:
                labels[e] = lab
        edges.append(e)
    edges += sorted(implicit - seen)

    try:
        graph = validate_graph(sorted(declared), edges, labels, roles.get("sensitive"), roles.get("outcome"))
    except ValidationError as exc:
        raise SemanticError(str(exc), name_tok.line, name_tok.column) from exc

    model = None
    if mechanisms:
        missing = [n for n in sorted(declared) if kinds[n] is None]
        if missing:
            tok = nodes[missing[0]][2]
            raise _semantic(f"node {missing[0]} has no kind but other nodes carry mechanisms", tok)
        try:
            model = build_model(graph, mechanisms)
        except ValidationError as exc:
            raise SemanticError(str(exc), name_tok.line, name_tok.column) from exc

    bindings, counts = None, {}
    for item in items:
        if item[0] == "bind":
            if bindings is not None:
                raise _semantic("only one bind block is allowed", item[1])
            bindings = _bindings(item[1], item[3])
        elif item[0] == "counts":
            g = item[2]
            if g.text not in ("0", "1"):
                raise _semantic("counts group must be 0 or 1", g)
            if int(g.text) in counts:
                raise _semantic(f"duplicate counts for group {g.text}", g)
            props = _as_dict(item[3], set(COUNT_KEYS), "counts")
            for key in COUNT_KEYS:
                if key not in props:
                    raise _semantic(f"counts need {key}", item[1])
            values = {}
            for key in COUNT_KEYS:
                v = _number(props[key], key)
                if v != int(v) or v < 0:
                    raise _semantic(f"{key} must be a non-negative integer", props[key].token)
                values[key] = int(v)
            counts[int(g.text)] = Confusion(**values)
    if counts and len(counts) != 2:
        raise SemanticError("counts must be given for both groups 0 and 1", name_tok.line, name_tok.column)
    return ScenarioSpec(name_tok.text, graph, model, bindings, GroupedCounts(counts) if counts else None)


def _bindings(kw, pairs):
    props = _as_dict(pairs, set(BIND_KEYS), "bind")
    for key in ("group", "label"):
        if key not in props:
            raise _semantic(f"bind needs {key}", kw)
    cols = {k: _ident(props[k], k) for k in ("group", "label", "prediction", "score") if k in props}
    if ("prediction" in cols) == ("score" in cols):
        raise _semantic("bind needs exactly one of prediction and score", kw)
    if "threshold" in props and "score" not in cols:
        raise _semantic("threshold only applies to score", props["threshold"].token)
    threshold = _number(props["threshold"], "threshold") if "threshold" in props else 0.5
    return Bindings(cols["group"], cols["label"], cols.get("prediction"), cols.get("score"), threshold)


def parse_spec(text: str) -> ScenarioSpec:
    """Parse scenario text; errors carry line and column."""
    name, items = _Parser(text).scenario()
    return _build(name, items)


# ---------------------------------------------------------------- serialization

def _num(v) -> str:
    return repr(float(v))


def _node_line(spec: ScenarioSpec, n: str) -> str:
    props = []
    if spec.model is not None:
        mech = spec.model.mechanisms[n]
        props.append(f"kind: {mech.kind}")
        if isinstance(mech, BernoulliRoot):
            props.append(f"p: {_num(mech.p)}")
        elif isinstance(mech, Expression):
            props.append(f'expr: "{formula.to_source(mech.tree)}"')
            props.append(f"sigma: {_num(mech.noise_std)}")
        else:
            props.append(f"intercept: {_num(mech.intercept)}")
            if mech.coefficients:
                inner = ", ".join(f"{p}: {_num(c)}" for p, c in sorted(mech.coefficients.items()))
                props.append(f"coef: {{ {inner} }}")
            if isinstance(mech, LinearGaussian):
                props.append(f"sigma: {_num(mech.noise_std)}")
    if spec.graph.sensitive == n:
        props.append("role: sensitive")
    if spec.graph.outcome == n:
        props.append("role: outcome")
    return f"  node {n}" + (f" {{ {', '.join(props)} }}" if props else "")


def serialize(spec: ScenarioSpec) -> str:
    """Canonical text: ``parse_spec(serialize(s)) == s``."""
    g = spec.graph
    lines = [f"graph {spec.name} {{"]
    lines += [_node_line(spec, n) for n in g.topological_order()]
    for u, v in g.sorted_edges():
        lab = g.label(u, v)
        lines.append(f"  edge {u} -> {v}" + (f" {{ label: {lab} }}" if lab != UNKNOWN else ""))
    if spec.bindings is not None:
        b = spec.bindings
        parts = [f"group: {b.group}", f"label: {b.label}"]
        parts += [f"prediction: {b.prediction}"] if b.prediction is not None \
            else [f"score: {b.score}", f"threshold: {_num(b.threshold)}"]
        lines.append(f"  bind {{ {', '.join(parts)} }}")
    if spec.counts is not None:
        for grp in (0, 1):
            c = spec.counts[grp]
            lines.append(f"  counts {grp} {{ tp: {c.tp}, fp: {c.fp}, tn: {c.tn}, fn: {c.fn} }}")
    lines.append("}")
    return "\n".join(lines) + "\n"
