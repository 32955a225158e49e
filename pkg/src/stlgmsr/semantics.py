"""Robustness semantics for discrete-time STL.

Three interchangeable measures over the same formula trees:

  DSR   exact min/max robustness (sound and complete, not differentiable)
  DSSR  log-sum-exp smoothing of min/max, an under-approximation of DSR
  DGMSR sign-preserving smooth semantics built from epsilon-regularized
        generalized means of the clipped-squared arguments

For DGMSR a conjunction value is

    gmsr_and(y) = sqrt(M0(y+^2)) - sqrt(Mp(y-^2))

where y+^2 / y-^2 square the entrywise positive/negative parts, M0 is the
weighted geometric mean regularized by eps, and Mp the weighted power mean
of order p.  Disjunction is the negation dual.  Both means run in the log
domain so large powers (p up to 64 and beyond) stay inside float range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
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


@dataclass(frozen=True)
class DSR:
    """Exact discrete-time robustness, min/max aggregation."""


@dataclass(frozen=True)
class DSSR:
    """Smoothed robustness with log-sum-exp min and softmax-weighted max."""

    kappa: float = 25.0

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise FormulaError(f"kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class DGMSR:
    """Generalized-mean smooth robustness; parameters live on the formula."""


Semantics = DSR | DSSR | DGMSR


class HorizonError(FormulaError):
    """Formula asked for a signal step outside 1..K."""

    def __init__(self, node_id: int, step: int, K: int):
        super().__init__(
            f"node {node_id} needs signal step {step}, but the signal has "
            f"steps 1..{K}"
        )
        self.node_id = node_id
        self.step = step


@dataclass
class RobustnessOutput:
    """Value plus signal-space gradient, with the per-(node, step) values
    visited during evaluation."""

    value: float
    gradient: np.ndarray
    node_values: dict[tuple[int, int], float] = field(default_factory=dict)


# --- key functions ----------------------------------------------------------


def _logsumexp(a: np.ndarray) -> float:
    m = a.max()
    return float(m + np.log(np.exp(a - m).sum()))


def clip_sq(y, side: str) -> np.ndarray:
    """Squared positive part ('+') or squared negative part ('-')."""
    y = np.asarray(y, dtype=float)
    if side == "+":
        c = np.maximum(y, 0.0)
    elif side == "-":
        c = np.minimum(y, 0.0)
    else:
        raise ValueError(f"side must be '+' or '-', got {side!r}")
    return c * c


def gm_mean_eps(z, eps: float, w) -> float:
    """Weighted geometric mean with eps floor: (eps^S + prod z_i^w_i)^(1/S).

    Any zero entry collapses the product, so the result is exactly eps.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    s = w.sum()
    if np.any(z == 0.0):
        return eps
    log_prod = float((w * np.log(z)).sum())
    return math.exp(np.logaddexp(s * math.log(eps), log_prod) / s)


def pm_mean_eps(z, eps: float, p: int, w) -> float:
    """Weighted power mean with eps floor: (eps^p + (1/S) sum w_i z_i^p)^(1/p)."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    s = w.sum()
    mask = z > 0.0
    if not mask.any():
        return eps
    terms = np.log(w[mask]) + p * np.log(z[mask])
    log_mean = _logsumexp(terms) - math.log(s)
    return math.exp(np.logaddexp(p * math.log(eps), log_mean) / p)


def gmsr_and(y, params: GmsrParams) -> float:
    """Smooth conjunction. Positive iff all entries positive, negative iff
    any entry negative (zero only on the boundary)."""
    y = np.asarray(y, dtype=float)
    if params.arity != y.size:
        raise FormulaError(
            f"parameter arity {params.arity} does not match {y.size} values"
        )
    w = np.asarray(params.w, dtype=float)
    pos = gm_mean_eps(clip_sq(y, "+"), params.eps, w)
    neg = pm_mean_eps(clip_sq(y, "-"), params.eps, params.p, w)
    return math.sqrt(pos) - math.sqrt(neg)


def gmsr_or(y, params: GmsrParams) -> float:
    """Smooth disjunction, the negation dual of gmsr_and."""
    return -gmsr_and(-np.asarray(y, dtype=float), params)


def soft_min(y, kappa: float) -> float:
    """-(1/kappa) log sum exp(-kappa y); under-approximates min(y)."""
    y = np.asarray(y, dtype=float)
    m = y.min()
    return float(m - np.log(np.exp(-kappa * (y - m)).sum()) / kappa)


def soft_max(y, kappa: float) -> float:
    """exp(kappa y)-weighted average of y; under-approximates max(y)."""
    y = np.asarray(y, dtype=float)
    e = np.exp(kappa * (y - y.max()))
    return float((y * e).sum() / e.sum())


# --- evaluation -------------------------------------------------------------


class _Evaluator:
    def __init__(
        self,
        predicates: Mapping[str, PredicateDef],
        signal: Signal,
        semantics: Semantics,
    ):
        self.predicates = predicates
        self.signal = signal
        self.semantics = semantics
        self.cache: dict[tuple[int, int], float] = {}

    def conj(self, values: list[float], params: GmsrParams | None, node: Formula) -> float:
        sem = self.semantics
        if isinstance(sem, DSR):
            return min(values)
        if isinstance(sem, DSSR):
            return soft_min(values, sem.kappa)
        if params is None:
            raise FormulaError(
                f"node {node.node_id} has no smoothing parameters; "
                "run assign_params first"
            )
        return gmsr_and(values, params)

    def disj(self, values: list[float], params: GmsrParams | None, node: Formula) -> float:
        sem = self.semantics
        if isinstance(sem, DSR):
            return max(values)
        if isinstance(sem, DSSR):
            return soft_max(values, sem.kappa)
        if params is None:
            raise FormulaError(
                f"node {node.node_id} has no smoothing parameters; "
                "run assign_params first"
            )
        return gmsr_or(values, params)

    def value(self, node: Formula, k: int) -> float:
        key = (node.node_id, k)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        val = self._compute(node, k)
        self.cache[key] = val
        return val

    def _compute(self, node: Formula, k: int) -> float:
        if isinstance(node, Predicate):
            if not 1 <= k <= self.signal.K:
                raise HorizonError(node.node_id, k, self.signal.K)
            return float(self.predicates[node.pred_id].f(self.signal.state(k)))
        if isinstance(node, Not):
            return -self.value(node.child, k)
        if isinstance(node, And):
            return self.conj([self.value(c, k) for c in node.children], node.params, node)
        if isinstance(node, Or):
            return self.disj([self.value(c, k) for c in node.children], node.params, node)
        if isinstance(node, Implies):
            vals = [-self.value(node.lhs, k), self.value(node.rhs, k)]
            return self.disj(vals, node.params, node)
        if isinstance(node, Eventually):
            vals = [self.value(node.child, k + j) for j in range(node.a, node.b + 1)]
            return self.disj(vals, node.params, node)
        if isinstance(node, Always):
            vals = [self.value(node.child, k + j) for j in range(node.a, node.b + 1)]
            return self.conj(vals, node.params, node)
        if isinstance(node, Until):
            return self._until(node, k)
        raise FormulaError(f"unknown node {node!r}")

    def _until(self, node: Until, k: int) -> float:
        # disjunction over switch steps tau of (hold lhs through tau) and
        # (rhs at tau); the hold prefix is the conjunction of lhs values at
        # offsets a .. tau
        pars = node.params
        lhs_vals = [self.value(node.lhs, k + j) for j in range(node.a, node.b + 1)]
        rhs_vals = [self.value(node.rhs, k + j) for j in range(node.a, node.b + 1)]
        disjuncts = []
        for i in range(len(lhs_vals)):
            prefix_par = pars.prefix[i] if pars is not None else None
            inner_par = pars.inner if pars is not None else None
            held = self.conj(lhs_vals[: i + 1], prefix_par, node)
            disjuncts.append(self.conj([held, rhs_vals[i]], inner_par, node))
        return self.disj(disjuncts, pars.outer if pars is not None else None, node)


def eval_robustness(
    phi: Formula,
    predicates: Mapping[str, PredicateDef],
    signal: Signal,
    k: int,
    semantics: Semantics,
) -> float:
    """Robustness of phi over the signal at evaluation step k (1-based)."""
    return _Evaluator(predicates, signal, semantics).value(phi, k)


def check_sat(
    phi: Formula,
    predicates: Mapping[str, PredicateDef],
    signal: Signal,
    k: int,
    semantics: Semantics,
) -> tuple[bool, float]:
    """Satisfaction verdict (value >= 0) together with the value itself."""
    value = eval_robustness(phi, predicates, signal, k, semantics)
    return value >= 0.0, value
