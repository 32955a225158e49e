"""Discrete-time STL formula trees.

Formulas are immutable trees built from predicates, boolean connectives and
the bounded temporal operators F (eventually), G (always) and U (until).
Conjunction and disjunction are n-ary.  Intervals are step counts, so
``Eventually(1, 4, p)`` evaluated at step k looks at steps k+1 .. k+4 of the
signal.  Signals are 1-based: ``signal.state(1)`` is the first sample.

The module also carries the smoothing parameters (eps, p, w) that the
generalized-mean semantics attaches to every conjunction/disjunction node,
a plain-text parser, and JSON (de)serialization.
"""
from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping

import numpy as np

_ids = itertools.count()


class FormulaError(ValueError):
    """Malformed formula, bad interval, or bad smoothing parameters."""


class ParseError(FormulaError):
    """Syntax error in formula text; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class GmsrParams:
    """Smoothing parameters of one conjunction/disjunction node.

    eps > 0 regularizes the generalized means, p >= 1 is the power of the
    mean over violating entries, and w holds one positive integer weight
    per aggregated value.
    """

    eps: float
    p: int
    w: tuple[int, ...]

    def __post_init__(self):
        if not self.eps > 0.0:
            raise FormulaError(f"eps must be positive, got {self.eps}")
        if int(self.p) != self.p or self.p < 1:
            raise FormulaError(f"p must be an integer >= 1, got {self.p}")
        object.__setattr__(self, "p", int(self.p))
        w = tuple(int(wi) for wi in self.w)
        if len(w) == 0 or any(wi < 1 for wi in w) or w != tuple(self.w):
            raise FormulaError(f"w must be positive integers, got {self.w}")
        object.__setattr__(self, "w", w)

    @property
    def arity(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class UntilParams:
    """Parameter bundle for an until node with window width m = b - a + 1.

    outer  : disjunction over the m candidate switch steps
    inner  : binary conjunction (hold-prefix, target) shared by every step
    prefix : conjunction over the hold-prefix of length j+1, one per step
    """

    outer: GmsrParams
    inner: GmsrParams
    prefix: tuple[GmsrParams, ...]

    def __post_init__(self):
        m = self.outer.arity
        if self.inner.arity != 2:
            raise FormulaError("until inner conjunction must have arity 2")
        if len(self.prefix) != m:
            raise FormulaError(
                f"until needs {m} prefix parameter sets, got {len(self.prefix)}"
            )
        for j, pp in enumerate(self.prefix):
            if pp.arity != j + 1:
                raise FormulaError(
                    f"until prefix {j} must have arity {j + 1}, got {pp.arity}"
                )


@dataclass(frozen=True)
class Formula:
    """Base node. node_id is unique per constructed node and survives
    parameter assignment, so overrides can target specific nodes."""

    node_id: int = field(
        default_factory=lambda: next(_ids), init=False, compare=False, repr=False
    )


@dataclass(frozen=True)
class Predicate(Formula):
    pred_id: str


@dataclass(frozen=True)
class Not(Formula):
    child: Formula


@dataclass(frozen=True)
class And(Formula):
    children: tuple[Formula, ...]
    params: GmsrParams | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.children) < 2:
            raise FormulaError("conjunction needs at least two children")
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class Or(Formula):
    children: tuple[Formula, ...]
    params: GmsrParams | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.children) < 2:
            raise FormulaError("disjunction needs at least two children")
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class Implies(Formula):
    lhs: Formula
    rhs: Formula
    params: GmsrParams | None = field(default=None, compare=False)


def _check_interval(a: int, b: int) -> None:
    if int(a) != a or int(b) != b:
        raise FormulaError(f"interval bounds must be integers, got [{a},{b}]")
    if a < 0 or b < a:
        raise FormulaError(f"need 0 <= a <= b in interval, got [{a},{b}]")


@dataclass(frozen=True)
class Eventually(Formula):
    a: int
    b: int
    child: Formula
    params: GmsrParams | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_interval(self.a, self.b)


@dataclass(frozen=True)
class Always(Formula):
    a: int
    b: int
    child: Formula
    params: GmsrParams | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_interval(self.a, self.b)


@dataclass(frozen=True)
class Until(Formula):
    a: int
    b: int
    lhs: Formula
    rhs: Formula
    params: UntilParams | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_interval(self.a, self.b)


def make_derived(kind: str, operands, interval: tuple[int, int] | None = None) -> Formula:
    """Build one of the derived operators.

    'or' and 'implies' abbreviate negated conjunctions, 'eventually' is
    true-until and 'always' its dual; all four are native nodes here so the
    smooth semantics can aggregate them directly.
    """
    if kind == "or":
        return Or(tuple(operands))
    if kind == "implies":
        lhs, rhs = operands
        return Implies(lhs, rhs)
    if kind in ("eventually", "always"):
        (child,) = operands
        if interval is None:
            raise FormulaError(f"{kind} needs an interval")
        cls = Eventually if kind == "eventually" else Always
        return cls(interval[0], interval[1], child)
    raise FormulaError(f"unknown derived operator {kind!r}")


def iter_nodes(phi: Formula) -> Iterator[Formula]:
    """Yield every node of the tree, parents before children."""
    yield phi
    if isinstance(phi, Not):
        yield from iter_nodes(phi.child)
    elif isinstance(phi, (And, Or)):
        for c in phi.children:
            yield from iter_nodes(c)
    elif isinstance(phi, Implies):
        yield from iter_nodes(phi.lhs)
        yield from iter_nodes(phi.rhs)
    elif isinstance(phi, (Eventually, Always)):
        yield from iter_nodes(phi.child)
    elif isinstance(phi, Until):
        yield from iter_nodes(phi.lhs)
        yield from iter_nodes(phi.rhs)


def required_horizon(phi: Formula) -> int:
    """Largest step offset the formula can reach past its evaluation step."""
    if isinstance(phi, Predicate):
        return 0
    if isinstance(phi, Not):
        return required_horizon(phi.child)
    if isinstance(phi, (And, Or)):
        return max(required_horizon(c) for c in phi.children)
    if isinstance(phi, Implies):
        return max(required_horizon(phi.lhs), required_horizon(phi.rhs))
    if isinstance(phi, (Eventually, Always)):
        return phi.b + required_horizon(phi.child)
    if isinstance(phi, Until):
        return phi.b + max(required_horizon(phi.lhs), required_horizon(phi.rhs))
    raise FormulaError(f"unknown node {phi!r}")


# --- signals and predicates -------------------------------------------------


@dataclass(frozen=True)
class Signal:
    """A finite discrete-time trajectory, one state per row.

    Steps are 1-based to match the robustness definitions: state(1) is the
    first sample and state(K) the last.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise FormulaError(f"signal must be a K x n array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FormulaError("signal contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def K(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def state(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.K:
            raise FormulaError(f"step {k} outside signal range 1..{self.K}")
        return self.data[k - 1]


@dataclass(frozen=True)
class PredicateDef:
    """Scalar predicate function over one state, with its gradient."""

    pred_id: str
    f: Callable[[np.ndarray], float]
    grad_f: Callable[[np.ndarray], np.ndarray]


def coordinate_predicates(n: int, names: list[str] | None = None) -> dict[str, PredicateDef]:
    """Predicates that read out single state coordinates: p0 .. p{n-1}."""
    defs: dict[str, PredicateDef] = {}
    for i in range(n):
        name = names[i] if names is not None else f"p{i}"
        e_i = np.zeros(n)
        e_i[i] = 1.0
        defs[name] = PredicateDef(
            name,
            lambda x, i=i: float(x[i]),
            lambda x, e_i=e_i: e_i.copy(),
        )
    return defs


# --- parameter assignment ---------------------------------------------------


@dataclass(frozen=True)
class GmsrDefaults:
    """Template expanded to a GmsrParams of the right arity per node."""

    eps: float = 1e-8
    p: int = 1
    weight: int = 1

    def make(self, arity: int) -> GmsrParams:
        return GmsrParams(self.eps, self.p, (self.weight,) * arity)


def _rebuild(node: Formula, **changes) -> Formula:
    new = replace(node, **changes)
    object.__setattr__(new, "node_id", node.node_id)
    return new


def assign_params(
    phi: Formula,
    defaults: GmsrDefaults = GmsrDefaults(),
    overrides: Mapping[int, GmsrParams | UntilParams] | None = None,
) -> Formula:
    """Return a copy of phi with smoothing parameters on every aggregation node.

    Node ids are preserved, so ``overrides[node.node_id]`` replaces the
    defaults at exactly that node.  Arity mismatches raise.
    """
    ov = dict(overrides or {})
    seen: set[int] = set()

    def params_for(node: Formula, arity: int) -> GmsrParams:
        if node.node_id in ov:
            seen.add(node.node_id)
            par = ov[node.node_id]
            if not isinstance(par, GmsrParams):
                raise FormulaError(f"node {node.node_id} expects GmsrParams")
            if par.arity != arity:
                raise FormulaError(
                    f"node {node.node_id} needs arity {arity}, got {par.arity}"
                )
            return par
        return defaults.make(arity)

    def build(node: Formula) -> Formula:
        if isinstance(node, Predicate):
            return node
        if isinstance(node, Not):
            return _rebuild(node, child=build(node.child))
        if isinstance(node, (And, Or)):
            kids = tuple(build(c) for c in node.children)
            return _rebuild(node, children=kids, params=params_for(node, len(kids)))
        if isinstance(node, Implies):
            return _rebuild(
                node,
                lhs=build(node.lhs),
                rhs=build(node.rhs),
                params=params_for(node, 2),
            )
        if isinstance(node, (Eventually, Always)):
            width = node.b - node.a + 1
            return _rebuild(
                node, child=build(node.child), params=params_for(node, width)
            )
        if isinstance(node, Until):
            width = node.b - node.a + 1
            if node.node_id in ov:
                seen.add(node.node_id)
                par = ov[node.node_id]
                if not isinstance(par, UntilParams):
                    raise FormulaError(f"until node {node.node_id} expects UntilParams")
                if par.outer.arity != width:
                    raise FormulaError(
                        f"until node {node.node_id} outer arity must be {width}"
                    )
            else:
                par = UntilParams(
                    outer=defaults.make(width),
                    inner=defaults.make(2),
                    prefix=tuple(defaults.make(j + 1) for j in range(width)),
                )
            return _rebuild(
                node, lhs=build(node.lhs), rhs=build(node.rhs), params=par
            )
        raise FormulaError(f"unknown node {node!r}")

    out = build(phi)
    unused = set(ov) - seen
    if unused:
        raise FormulaError(f"overrides reference unknown node ids {sorted(unused)}")
    return out


# --- text syntax ------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)|(?P<name>[A-Za-z_]\w*)|(?P<int>\d+)|(?P<op>->|[!&|()\[\],])"
)

_PREC_ATOM = 5
_PREC_UNARY = 4
_PREC_UNTIL = 3
_PREC_AND = 2
_PREC_OR = 1
_PREC_IMPLIES = 0


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, table: Mapping[str, str]):
        self.tokens = _tokenize(text)
        self.table = table
        self.i = 0

    def peek(self, ahead: int = 0):
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.next()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def interval(self) -> tuple[int, int]:
        self.expect("[")
        kind, val, pos = self.next()
        if kind != "int":
            raise ParseError("expected interval lower bound", pos)
        a = int(val)
        self.expect(",")
        kind, val, pos = self.next()
        if kind != "int":
            raise ParseError("expected interval upper bound", pos)
        b = int(val)
        self.expect("]")
        if b < a:
            raise ParseError(f"interval [{a},{b}] has a > b", pos)
        return a, b

    def parse(self) -> Formula:
        phi = self.implies()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return phi

    def implies(self) -> Formula:
        lhs = self.disjunction()
        if self.peek()[1] == "->":
            self.next()
            return Implies(lhs, self.implies())
        return lhs

    def disjunction(self) -> Formula:
        parts = [self.conjunction()]
        while self.peek()[1] == "|":
            self.next()
            parts.append(self.conjunction())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conjunction(self) -> Formula:
        parts = [self.until()]
        while self.peek()[1] == "&":
            self.next()
            parts.append(self.until())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def until(self) -> Formula:
        phi = self.unary()
        while self.peek()[1] == "U" and self.peek(1)[1] == "[":
            self.next()
            a, b = self.interval()
            phi = Until(a, b, phi, self.unary())
        return phi

    def unary(self) -> Formula:
        kind, val, pos = self.peek()
        if val == "!":
            self.next()
            return Not(self.unary())
        if val in ("F", "G") and self.peek(1)[1] == "[":
            self.next()
            a, b = self.interval()
            child = self.unary()
            return Eventually(a, b, child) if val == "F" else Always(a, b, child)
        if val == "(":
            self.next()
            phi = self.implies()
            self.expect(")")
            return phi
        if kind == "name":
            self.next()
            if val not in self.table:
                raise ParseError(f"unknown predicate {val!r}", pos)
            return Predicate(self.table[val])
        raise ParseError(f"expected a formula, found {val or 'end of input'!r}", pos)


def parse_formula(text: str, predicate_table: Mapping[str, str]) -> Formula:
    """Parse formula text.

    Grammar, loosest first: ``->`` (right assoc), ``|``, ``&``,
    ``U[a,b]`` (left assoc), then ``!``/``F[a,b]``/``G[a,b]``, atoms.
    ``F``, ``G`` and ``U`` act as operators only when followed by ``[``.
    """
    return _Parser(text, predicate_table).parse()


def _prec(phi: Formula) -> int:
    if isinstance(phi, Predicate):
        return _PREC_ATOM
    if isinstance(phi, (Not, Eventually, Always)):
        return _PREC_UNARY
    if isinstance(phi, Until):
        return _PREC_UNTIL
    if isinstance(phi, And):
        return _PREC_AND
    if isinstance(phi, Or):
        return _PREC_OR
    return _PREC_IMPLIES


def format_formula(phi: Formula, names: Mapping[str, str] | None = None) -> str:
    """Render phi as parseable text; inverse of parse_formula up to layout."""

    def name_of(pred_id: str) -> str:
        return names[pred_id] if names is not None else str(pred_id)

    def wrap(child: Formula, minimum: int, same_kind: bool = False) -> str:
        text = fmt(child)
        if _prec(child) < minimum or same_kind:
            return f"({text})"
        return text

    def fmt(node: Formula) -> str:
        if isinstance(node, Predicate):
            return name_of(node.pred_id)
        if isinstance(node, Not):
            return "!" + wrap(node.child, _PREC_UNARY)
        if isinstance(node, Eventually):
            return f"F[{node.a},{node.b}]" + wrap(node.child, _PREC_UNARY)
        if isinstance(node, Always):
            return f"G[{node.a},{node.b}]" + wrap(node.child, _PREC_UNARY)
        if isinstance(node, Until):
            lhs = wrap(node.lhs, _PREC_UNTIL, same_kind=isinstance(node.lhs, Until))
            rhs = wrap(node.rhs, _PREC_UNARY)
            return f"{lhs} U[{node.a},{node.b}] {rhs}"
        if isinstance(node, And):
            return " & ".join(
                wrap(c, _PREC_AND, same_kind=isinstance(c, And)) for c in node.children
            )
        if isinstance(node, Or):
            return " | ".join(
                wrap(c, _PREC_OR, same_kind=isinstance(c, Or)) for c in node.children
            )
        if isinstance(node, Implies):
            return f"{wrap(node.lhs, _PREC_OR)} -> {wrap(node.rhs, _PREC_IMPLIES)}"
        raise FormulaError(f"unknown node {node!r}")

    return fmt(phi)


# --- JSON serialization -----------------------------------------------------

_KIND_NAMES = {
    Predicate: "pred",
    Not: "not",
    And: "and",
    Or: "or",
    Implies: "implies",
    Eventually: "eventually",
    Always: "always",
    Until: "until",
}


def _params_to_dict(par: GmsrParams) -> dict:
    return {"eps": par.eps, "p": par.p, "w": list(par.w)}


def _params_from_dict(d: dict) -> GmsrParams:
    return GmsrParams(float(d["eps"]), int(d["p"]), tuple(d["w"]))


def formula_to_dict(phi: Formula) -> dict:
    """JSON-ready dict: kind, pred for atoms, children plus a/b elsewhere.

    Until carries three parameter groups, serialized as params (outer),
    inner_params, and prefix_params.
    """
    out: dict = {"kind": _KIND_NAMES[type(phi)]}
    if isinstance(phi, Predicate):
        out["pred"] = str(phi.pred_id)
        return out
    if isinstance(phi, Not):
        out["children"] = [formula_to_dict(phi.child)]
        return out
    if isinstance(phi, (And, Or)):
        out["children"] = [formula_to_dict(c) for c in phi.children]
    elif isinstance(phi, Implies):
        out["children"] = [formula_to_dict(phi.lhs), formula_to_dict(phi.rhs)]
    elif isinstance(phi, (Eventually, Always)):
        out["a"], out["b"] = phi.a, phi.b
        out["children"] = [formula_to_dict(phi.child)]
    elif isinstance(phi, Until):
        out["a"], out["b"] = phi.a, phi.b
        out["children"] = [formula_to_dict(phi.lhs), formula_to_dict(phi.rhs)]
        if phi.params is not None:
            out["params"] = _params_to_dict(phi.params.outer)
            out["inner_params"] = _params_to_dict(phi.params.inner)
            out["prefix_params"] = [_params_to_dict(pp) for pp in phi.params.prefix]
        return out
    par = getattr(phi, "params", None)
    if par is not None:
        out["params"] = _params_to_dict(par)
    return out


def formula_from_dict(d: dict) -> Formula:
    kind = d.get("kind")
    kids = [formula_from_dict(c) for c in d.get("children", [])]
    par = _params_from_dict(d["params"]) if "params" in d else None
    if kind == "pred":
        return Predicate(d["pred"])
    if kind == "not":
        (child,) = kids
        return Not(child)
    if kind == "and":
        return And(tuple(kids), params=par)
    if kind == "or":
        return Or(tuple(kids), params=par)
    if kind == "implies":
        lhs, rhs = kids
        return Implies(lhs, rhs, params=par)
    if kind in ("eventually", "always"):
        (child,) = kids
        cls = Eventually if kind == "eventually" else Always
        return cls(int(d["a"]), int(d["b"]), child, params=par)
    if kind == "until":
        lhs, rhs = kids
        upar = None
        if "params" in d:
            upar = UntilParams(
                outer=par,
                inner=_params_from_dict(d["inner_params"]),
                prefix=tuple(_params_from_dict(pp) for pp in d["prefix_params"]),
            )
        return Until(int(d["a"]), int(d["b"]), lhs, rhs, params=upar)
    raise FormulaError(f"unknown formula kind {kind!r}")


def formula_to_json(phi: Formula) -> str:
    return json.dumps(formula_to_dict(phi), sort_keys=True)


def formula_from_json(text: str) -> Formula:
    return formula_from_dict(json.loads(text))
