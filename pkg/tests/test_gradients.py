"""Analytic gradients against central differences and closed-form ratio laws.

The ratio laws are derived independently on paper from the two regularized
means: in the all-satisfying branch dy_i/dy_j = (w_i/w_j) (y_j/y_i), in the
violating branch dy_i/dy_j = (w_i/w_j) (|y_i|/|y_j|)^(2p-1) over negative
entries with exact zeros elsewhere.  Finite differences use the plain
evaluators, never the tape.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlgmsr.formula import (
    Always,
    And,
    Eventually,
    FormulaError,
    GmsrDefaults,
    GmsrParams,
    Implies,
    Not,
    Or,
    Predicate,
    Signal,
    Until,
    assign_params,
    coordinate_predicates,
)
from stlgmsr.fuzz import random_case
from stlgmsr.gradients import (
    fd_check,
    grad_eval,
    grad_gmsr_and,
    grad_gmsr_or,
    grad_soft_max,
    grad_soft_min,
)
from stlgmsr.semantics import DGMSR, DSR, DSSR, eval_robustness, gmsr_and, gmsr_or


def central_diff(fun, y, h=1e-6):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for i in range(y.size):
        hi = y.copy()
        hi[i] += h
        lo = y.copy()
        lo[i] -= h
        out[i] = (fun(hi) - fun(lo)) / (2.0 * h)
    return out


class TestKeyGradients:
    def test_value_matches_evaluator_bitwise(self):
        params = GmsrParams(1e-8, 2, (1, 3, 2))
        for y in ([0.4, 1.2, 0.7], [-0.3, 0.8, -1.5], [0.0, 0.2, 0.9]):
            assert grad_gmsr_and(y, params)[0] == gmsr_and(y, params)
            assert grad_gmsr_or(y, params)[0] == gmsr_or(y, params)

    def test_all_positive_ratio_law(self):
        params = GmsrParams(1e-8, 1, (2, 1, 4))
        y = np.array([0.7, 2.1, 0.35])
        _, dy = grad_gmsr_and(y, params)
        w = np.array(params.w, dtype=float)
        for i in range(3):
            for j in range(3):
                want = (w[i] / w[j]) * (y[j] / y[i])
                assert dy[i] / dy[j] == pytest.approx(want, rel=1e-12)

    def test_violating_branch_ratio_law_and_exact_zeros(self):
        params = GmsrParams(1e-8, 3, (1, 2, 1, 5))
        y = np.array([-0.4, 0.9, -1.7, 0.02])
        _, dy = grad_gmsr_and(y, params)
        assert dy[1] == 0.0 and dy[3] == 0.0
        p, w = params.p, np.array(params.w, dtype=float)
        want = (w[0] / w[2]) * (abs(y[0]) / abs(y[2])) ** (2 * p - 1)
        assert dy[0] / dy[2] == pytest.approx(want, rel=1e-12)

    def test_or_mirrors_and(self):
        params = GmsrParams(1e-8, 2, (1, 1, 2))
        y = np.array([0.5, -0.2, 1.1])
        v_or, dy_or = grad_gmsr_or(y, params)
        v_and, dy_and = grad_gmsr_and(-y, params)
        assert v_or == -v_and
        assert np.array_equal(dy_or, dy_and)

    @pytest.mark.parametrize(
        "y",
        [
            [0.9, 0.4, 1.6],
            [2.0, 0.05, 0.7],
            [-0.8, 0.3, -0.1],
            [-2.5, -0.6, -0.01],
            [1.4, -0.9, 0.2],
        ],
    )
    def test_finite_difference(self, y):
        params = GmsrParams(1e-8, 2, (2, 1, 3))
        for fun, grad in ((gmsr_and, grad_gmsr_and), (gmsr_or, grad_gmsr_or)):
            _, dy = grad(y, params)
            fd = central_diff(lambda z: fun(z, params), y)
            assert np.allclose(dy, fd, rtol=1e-6, atol=1e-9)

    def test_zero_entry_kills_the_slope(self):
        # the boundary case reports an exact zero gradient, and both branch
        # slopes vanish linearly as the entry approaches zero (the epsilon
        # term keeps the means away from the singular point)
        params = GmsrParams(1e-8, 1, (1, 1))
        _, dy = grad_gmsr_and([0.0, 0.5], params)
        assert np.array_equal(dy, np.zeros(2))
        for sign in (1.0, -1.0):
            slopes = [grad_gmsr_and([sign * d, 0.5], params)[1][0] for d in (1e-9, 1e-10, 1e-11)]
            assert slopes[0] > slopes[1] > slopes[2] > 0.0
            assert slopes[0] / slopes[1] == pytest.approx(10.0, rel=1e-3)

    @given(
        st.lists(
            st.floats(min_value=-4.0, max_value=4.0).filter(lambda v: abs(v) > 1e-3),
            min_size=2,
            max_size=6,
        ),
        st.integers(min_value=1, max_value=4),
    )
    @settings(max_examples=60, deadline=None)
    def test_gradient_never_negative(self, values, p):
        params = GmsrParams(1e-8, p, (1,) * len(values))
        _, dy = grad_gmsr_and(values, params)
        assert np.all(dy >= 0.0)
        _, dy = grad_gmsr_or(values, params)
        assert np.all(dy >= 0.0)


class TestSoftGradients:
    def test_soft_min_finite_difference(self):
        y = np.array([0.3, -0.9, 0.31, 2.0])
        value, dy = grad_soft_min(y, 25.0)
        fd = central_diff(lambda z: grad_soft_min(z, 25.0)[0], y)
        assert np.allclose(dy, fd, rtol=1e-5, atol=1e-8)
        assert np.all(dy >= 0.0) and dy.sum() == pytest.approx(1.0, abs=1e-12)

    def test_soft_max_finite_difference(self):
        y = np.array([0.1, 0.5, -1.2, 0.48])
        value, dy = grad_soft_max(y, 25.0)
        fd = central_diff(lambda z: grad_soft_max(z, 25.0)[0], y)
        assert np.allclose(dy, fd, rtol=1e-5, atol=1e-8)

    def test_soft_max_weighting_is_not_monotone(self):
        # entries far below the softmax pick up a negative slope, the
        # masking pathology the generalized means are built to avoid
        _, dy = grad_soft_max(np.array([0.0, 10.0]), 1.0)
        assert dy[0] < 0.0


def nested_formula():
    phi = Until(
        0,
        2,
        Or((Predicate("p0"), Not(Predicate("p1")))),
        Always(0, 1, And((Predicate("p0"), Predicate("p1")))),
    )
    return Implies(Eventually(0, 1, Predicate("p1")), phi)


class TestGradEval:
    def test_exact_semantics_has_no_gradient(self):
        phi = Predicate("p0")
        preds = coordinate_predicates(1)
        signal = Signal(np.ones((2, 1)))
        with pytest.raises(FormulaError):
            grad_eval(phi, preds, signal, 1, DSR())

    def test_value_matches_eval_robustness(self, rng):
        phi = assign_params(nested_formula(), GmsrDefaults())
        preds = coordinate_predicates(2)
        signal = Signal(rng.uniform(-2.0, 2.0, size=(6, 2)))
        for semantics in (DGMSR(), DSSR(kappa=10.0)):
            out = grad_eval(phi, preds, signal, 1, semantics)
            assert out.value == eval_robustness(phi, preds, signal, 1, semantics)

    def test_gradient_lands_on_the_read_rows(self):
        phi = assign_params(Always(0, 2, Predicate("p0")), GmsrDefaults())
        preds = coordinate_predicates(2)
        signal = Signal(np.array([[1.0, 9.0], [2.0, 9.0], [3.0, 9.0], [4.0, 9.0]]))
        out = grad_eval(phi, preds, signal, 1, DGMSR())
        assert out.gradient.shape == (4, 2)
        assert np.all(out.gradient[:, 1] == 0.0)
        assert np.all(out.gradient[3] == 0.0)
        assert np.all(out.gradient[:3, 0] > 0.0)

    def test_structured_formulas_match_finite_differences(self, rng):
        preds = coordinate_predicates(2)
        phi = assign_params(nested_formula(), GmsrDefaults())
        for _ in range(5):
            signal = Signal(rng.uniform(-2.0, 2.0, size=(6, 2)))
            assert fd_check(phi, preds, signal, 1, DGMSR()) < 1e-4
            assert fd_check(phi, preds, signal, 1, DSSR(kappa=8.0)) < 1e-6

    def test_fuzzed_formulas_match_finite_differences(self):
        checked = 0
        for seed in range(40):
            case = random_case(seed)
            phi = assign_params(case.formula, GmsrDefaults())
            preds = coordinate_predicates(case.n)
            out = grad_eval(phi, preds, case.signal, 1, DGMSR())
            # skip draws that straddle a branch switch: central differences
            # see the second-derivative jump and the comparison means nothing
            if min(abs(v) for v in out.node_values.values()) < 1e-3:
                continue
            checked += 1
            assert fd_check(phi, preds, case.signal, 1, DGMSR()) < 1e-4, case.seed
        assert checked >= 20
