"""Randomized agreement checking between the exact and smooth semantics.

The smooth generalized-mean measure is built to keep the sign of the exact
robustness, so random (formula, signal) pairs give a cheap soundness and
completeness probe: whenever the exact value is meaningfully away from
zero, the sign of the smooth value must match.  A small dead band around
zero is skipped; the sign guarantee holds only off the boundary and the
exact value sitting at the noise floor says nothing about either side.

Generated formulas track their step horizon so every temporal window fits
inside the signal; evaluation is at step 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .formula import (
    Always,
    And,
    Eventually,
    Formula,
    GmsrDefaults,
    Implies,
    Not,
    Or,
    Predicate,
    PredicateDef,
    Signal,
    Until,
    assign_params,
    coordinate_predicates,
    formula_to_dict,
    required_horizon,
)
from .semantics import DGMSR, DSR, Semantics, eval_robustness


@dataclass
class FuzzCase:
    formula: Formula
    signal: Signal
    n: int
    seed: int


@dataclass
class FuzzReport:
    checked: int = 0
    skipped_near_zero: int = 0
    disagreements: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.disagreements


def random_formula(
    rng: np.random.Generator, budget: int, depth: int, n_preds: int
) -> Formula:
    """Random formula whose required horizon stays within budget steps."""
    kinds = ["pred", "not", "and", "or", "implies", "eventually", "always", "until"]
    if depth <= 0:
        kind = "pred"
    else:
        kind = kinds[rng.integers(0, len(kinds))]
    if kind == "pred":
        return Predicate(f"p{rng.integers(0, n_preds)}")
    if kind == "not":
        return Not(random_formula(rng, budget, depth - 1, n_preds))
    if kind in ("and", "or"):
        width = int(rng.integers(2, 4))
        kids = tuple(
            random_formula(rng, budget, depth - 1, n_preds) for _ in range(width)
        )
        return And(kids) if kind == "and" else Or(kids)
    if kind == "implies":
        return Implies(
            random_formula(rng, budget, depth - 1, n_preds),
            random_formula(rng, budget, depth - 1, n_preds),
        )
    # temporal operators spend part of the budget on their own window
    a = int(rng.integers(0, min(2, budget) + 1))
    b = a + int(rng.integers(0, min(2, budget - a) + 1))
    if kind == "eventually":
        return Eventually(a, b, random_formula(rng, budget - b, depth - 1, n_preds))
    if kind == "always":
        return Always(a, b, random_formula(rng, budget - b, depth - 1, n_preds))
    return Until(
        a,
        b,
        random_formula(rng, budget - b, depth - 1, n_preds),
        random_formula(rng, budget - b, depth - 1, n_preds),
    )


def random_case(
    seed: int, max_depth: int = 4, max_K: int = 8, max_n: int = 3
) -> FuzzCase:
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, max_K + 1))
    n = int(rng.integers(1, max_n + 1))
    formula = random_formula(rng, budget=K - 1, depth=max_depth, n_preds=n)
    assert required_horizon(formula) <= K - 1
    data = rng.uniform(-5.0, 5.0, size=(K, n))
    return FuzzCase(formula, Signal(data), n, seed)


def run_sign_fuzz(
    count: int,
    seed: int = 0,
    band: float = 1e-6,
    max_depth: int = 4,
    max_K: int = 8,
    max_n: int = 3,
    defaults: GmsrDefaults = GmsrDefaults(),
    smooth: Semantics = DGMSR(),
) -> FuzzReport:
    """Compare sign(smooth) against sign(exact) on random cases.

    Cases whose exact robustness lies inside the dead band are counted as
    skipped.  Any sign disagreement is recorded with enough detail to
    replay it.
    """
    report = FuzzReport()
    for i in range(count):
        case = random_case(seed + i, max_depth=max_depth, max_K=max_K, max_n=max_n)
        preds = coordinate_predicates(case.n)
        exact = eval_robustness(case.formula, preds, case.signal, 1, DSR())
        if abs(exact) < band:
            report.skipped_near_zero += 1
            continue
        phi = assign_params(case.formula, defaults)
        value = eval_robustness(phi, preds, case.signal, 1, smooth)
        report.checked += 1
        if math.copysign(1.0, exact) != math.copysign(1.0, value) or value == 0.0:
            report.disagreements.append(
                {
                    "seed": case.seed,
                    "exact": float(exact),
                    "smooth": float(value),
                    "formula": formula_to_dict(case.formula),
                    "signal": case.signal.data.tolist(),
                }
            )
    return report
