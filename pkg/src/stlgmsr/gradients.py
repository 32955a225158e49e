"""Analytic gradients of the smooth robustness measures.

Forward evaluation records, per (node, step), the local derivative of each
aggregation with respect to its argument vector; a reverse sweep over that
tape then accumulates d(robustness)/d(signal).  Values produced here match
eval_robustness bit for bit because the same key functions compute them.

The generalized-mean derivatives follow from differentiating the two
regularized means.  Writing S = sum(w), M0 for the geometric mean of the
squared positive parts and Mp for the power mean of the squared negative
parts, the conjunction gradient splits into two branches:

  all y_i > 0:   dy_i = c0 * c0m * w_i / y_i
                 c0  = 1 / (2 sqrt(M0))
                 c0m = 2 prod_j y_j^(2 w_j) / (S * M0^(S-1))
  some y_i < 0:  dy_i = cp * cpm * w_i * |y_i|^(2p-1)   (0 for y_i >= 0)
                 cp  = 1 / (2 sqrt(Mp))
                 cpm = 2 / (S * Mp^(p-1))

Every dy_i is nonnegative and, inside its branch, strictly positive: the
measure never masks an argument.  At y_i = 0 both branches meet with zero
slope, so the function is C1.  Exact min/max semantics have no gradient and
raise.
"""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Mapping

import numpy as np

from .formula import (
    Always,
    And,
    Eventually,
    Formula,
    FormulaError,
    GmsrParams,
    Implies,
    Not,
    Or,
    Predicate,
    PredicateDef,
    Signal,
    Until,
)
from .semantics import (
    DSR,
    DSSR,
    HorizonError,
    RobustnessOutput,
    Semantics,
    _logsumexp,
    eval_robustness,
    gmsr_and,
    soft_max,
    soft_min,
)

_LOG2 = math.log(2.0)


def grad_gmsr_and(y, params: GmsrParams) -> tuple[float, np.ndarray]:
    """Value and argument gradient of the smooth conjunction."""
    y = np.asarray(y, dtype=float)
    value = gmsr_and(y, params)
    w = np.asarray(params.w, dtype=float)
    s = w.sum()
    p = params.p
    dy = np.zeros_like(y)
    if np.all(y > 0.0):
        logy = np.log(y)
        log_prod = float((2.0 * w * logy).sum())
        log_m0 = np.logaddexp(s * math.log(params.eps), log_prod) / s
        log_c0 = -_LOG2 - 0.5 * log_m0
        log_c0m = _LOG2 + log_prod - math.log(s) - (s - 1.0) * log_m0
        dy = np.exp(log_c0 + log_c0m + np.log(w) - logy)
    elif np.any(y < 0.0):
        neg = y < 0.0
        log_abs = np.log(-y[neg])
        terms = np.log(w[neg]) + 2.0 * p * log_abs
        log_mp = np.logaddexp(p * math.log(params.eps), _logsumexp(terms) - math.log(s)) / p
        log_cp = -_LOG2 - 0.5 * log_mp
        log_cpm = _LOG2 - math.log(s) - (p - 1.0) * log_mp
        dy[neg] = np.exp(log_cp + log_cpm + np.log(w[neg]) + (2.0 * p - 1.0) * log_abs)
    # remaining case: min(y) == 0 with no negatives, zero slope everywhere
    return value, dy


def grad_gmsr_or(y, params: GmsrParams) -> tuple[float, np.ndarray]:
    """Value and argument gradient of the smooth disjunction (negation dual)."""
    value, dy = grad_gmsr_and(-np.asarray(y, dtype=float), params)
    return -value, dy


def grad_soft_min(y, kappa: float) -> tuple[float, np.ndarray]:
    y = np.asarray(y, dtype=float)
    value = soft_min(y, kappa)
    e = np.exp(-kappa * (y - y.min()))
    return value, e / e.sum()


def grad_soft_max(y, kappa: float) -> tuple[float, np.ndarray]:
    # the weighted-average form is not monotone: entries far below the
    # current value get a negative slope through the weight shift
    y = np.asarray(y, dtype=float)
    value = soft_max(y, kappa)
    e = np.exp(kappa * (y - y.max()))
    s = e / e.sum()
    return value, s * (1.0 + kappa * (y - value))


class _Tape:
    """Forward pass that stores, per (node_id, step), the aggregation value
    and the chain weights to the child entries."""

    def __init__(
        self,
        predicates: Mapping[str, PredicateDef],
        signal: Signal,
        semantics: Semantics,
    ):
        self.predicates = predicates
        self.signal = signal
        self.semantics = semantics
        self.entries: dict[tuple[int, int], tuple] = {}
        self.order: list[tuple[int, int]] = []

    def conj(self, values, params):
        if isinstance(self.semantics, DSSR):
            return grad_soft_min(values, self.semantics.kappa)
        if params is None:
            raise FormulaError("missing smoothing parameters; run assign_params first")
        return grad_gmsr_and(values, params)

    def disj(self, values, params):
        if isinstance(self.semantics, DSSR):
            return grad_soft_max(values, self.semantics.kappa)
        if params is None:
            raise FormulaError("missing smoothing parameters; run assign_params first")
        return grad_gmsr_or(values, params)

    def forward(self, node: Formula, k: int) -> tuple[int, int]:
        key = (node.node_id, k)
        if key in self.entries:
            return key
        value, children, pred = self._compute(node, k)
        self.entries[key] = (value, children, pred)
        self.order.append(key)
        return key

    def val(self, key) -> float:
        return self.entries[key][0]

    def _compute(self, node: Formula, k: int):
        if isinstance(node, Predicate):
            if not 1 <= k <= self.signal.K:
                raise HorizonError(node.node_id, k, self.signal.K)
            value = float(self.predicates[node.pred_id].f(self.signal.state(k)))
            return value, None, node.pred_id
        if isinstance(node, Not):
            ck = self.forward(node.child, k)
            return -self.val(ck), [(ck, -1.0)], None
        if isinstance(node, (And, Or)):
            keys = [self.forward(c, k) for c in node.children]
            vals = [self.val(ck) for ck in keys]
            agg = self.conj if isinstance(node, And) else self.disj
            value, dy = agg(vals, node.params)
            return value, list(zip(keys, dy)), None
        if isinstance(node, Implies):
            lk = self.forward(node.lhs, k)
            rk = self.forward(node.rhs, k)
            value, dy = self.disj([-self.val(lk), self.val(rk)], node.params)
            return value, [(lk, -dy[0]), (rk, dy[1])], None
        if isinstance(node, (Eventually, Always)):
            keys = [self.forward(node.child, k + j) for j in range(node.a, node.b + 1)]
            vals = [self.val(ck) for ck in keys]
            agg = self.disj if isinstance(node, Eventually) else self.conj
            value, dy = agg(vals, node.params)
            return value, list(zip(keys, dy)), None
        if isinstance(node, Until):
            return self._until(node, k)
        raise FormulaError(f"unknown node {node!r}")

    def _until(self, node: Until, k: int):
        pars = node.params
        width = node.b - node.a + 1
        lhs_keys = [self.forward(node.lhs, k + j) for j in range(node.a, node.b + 1)]
        rhs_keys = [self.forward(node.rhs, k + j) for j in range(node.a, node.b + 1)]
        lhs_vals = [self.val(ck) for ck in lhs_keys]
        disjuncts = []
        prefix_dys = []
        inner_dys = []
        for i in range(width):
            prefix_par = pars.prefix[i] if pars is not None else None
            inner_par = pars.inner if pars is not None else None
            held, pdy = self.conj(lhs_vals[: i + 1], prefix_par)
            inner_val, idy = self.conj([held, self.val(rhs_keys[i])], inner_par)
            disjuncts.append(inner_val)
            prefix_dys.append(pdy)
            inner_dys.append(idy)
        value, ody = self.disj(disjuncts, pars.outer if pars is not None else None)
        contrib: dict[tuple[int, int], float] = defaultdict(float)
        for i in range(width):
            contrib[rhs_keys[i]] += ody[i] * inner_dys[i][1]
            hold_w = ody[i] * inner_dys[i][0]
            for j in range(i + 1):
                contrib[lhs_keys[j]] += hold_w * prefix_dys[i][j]
        return value, list(contrib.items()), None


def grad_eval(
    phi: Formula,
    predicates: Mapping[str, PredicateDef],
    signal: Signal,
    k: int,
    semantics: Semantics,
) -> RobustnessOutput:
    """Robustness and its gradient with respect to every signal entry.

    The gradient has the signal's K x n shape; row k-1 collects the
    contributions of all predicate reads at step k.
    """
    if isinstance(semantics, DSR):
        raise FormulaError("exact min/max robustness is not differentiable")
    tape = _Tape(predicates, signal, semantics)
    root = tape.forward(phi, k)
    adjoint: dict[tuple[int, int], float] = defaultdict(float)
    adjoint[root] = 1.0
    gradient = np.zeros((signal.K, signal.n))
    for key in reversed(tape.order):
        a = adjoint[key]
        if a == 0.0:
            continue
        value, children, pred = tape.entries[key]
        if pred is not None:
            step = key[1]
            gradient[step - 1] += a * np.asarray(
                predicates[pred].grad_f(signal.state(step)), dtype=float
            )
            continue
        for child_key, weight in children:
            adjoint[child_key] += a * weight
    node_values = {key: entry[0] for key, entry in tape.entries.items()}
    return RobustnessOutput(tape.val(root), gradient, node_values)


def fd_check(
    phi: Formula,
    predicates: Mapping[str, PredicateDef],
    signal: Signal,
    k: int,
    semantics: Semantics,
    h: float = 1e-5,
) -> float:
    """Max over signal entries of |analytic - central difference| scaled by
    max(1, |analytic|)."""
    out = grad_eval(phi, predicates, signal, k, semantics)
    worst = 0.0
    base = np.array(signal.data)
    for idx in np.ndindex(base.shape):
        bumped = base.copy()
        bumped[idx] += h
        hi = eval_robustness(phi, predicates, Signal(bumped), k, semantics)
        bumped[idx] -= 2.0 * h
        lo = eval_robustness(phi, predicates, Signal(bumped), k, semantics)
        fd = (hi - lo) / (2.0 * h)
        an = out.gradient[idx]
        err = abs(an - fd) / max(1.0, abs(an))
        worst = max(worst, err)
    return worst
