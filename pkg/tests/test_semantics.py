"""Robustness semantics: exact, smooth and generalized-mean variants.

Scalar oracle values are frozen from independent hand computations (plain
arithmetic on the defining formulas), not from the implementation.
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
    parse_formula,
)
from stlgmsr.semantics import (
    DGMSR,
    DSR,
    DSSR,
    HorizonError,
    check_sat,
    clip_sq,
    eval_robustness,
    gm_mean_eps,
    gmsr_and,
    gmsr_or,
    pm_mean_eps,
    soft_max,
    soft_min,
)

TABLE = {f"p{i}": f"p{i}" for i in range(4)}
DEFAULTS = GmsrDefaults()


def ev(text, data, k=1, semantics=DSR()):
    arr = np.atleast_2d(np.array(data, dtype=float).T).T
    if arr.shape[1] == 1 and not isinstance(data[0], (list, tuple, np.ndarray)):
        arr = np.array(data, dtype=float).reshape(-1, 1)
    phi = parse_formula(text, TABLE)
    if isinstance(semantics, DGMSR):
        phi = assign_params(phi, DEFAULTS)
    preds = coordinate_predicates(arr.shape[1])
    return float(eval_robustness(phi, preds, Signal(arr), k, semantics))


class TestKeyFunctions:
    def test_clip_sq(self):
        y = np.array([-2.0, 0.0, 3.0])
        assert clip_sq(y, "+").tolist() == [0.0, 0.0, 9.0]
        assert clip_sq(y, "-").tolist() == [4.0, 0.0, 0.0]

    def test_gm_mean_one_zero_entry_collapses_to_eps(self):
        # any zero factor wipes the product: the mean equals eps exactly
        assert gm_mean_eps(np.array([0.0, 4.0]), 1e-8, np.array([1, 1])) == 1e-8

    def test_gm_mean_equal_entries(self):
        # geometric mean of (4, 4) is 4; eps shifts cancel in the limit
        assert gm_mean_eps(np.array([4.0, 4.0]), 1e-8, np.array([1, 1])) == pytest.approx(
            4.0, abs=1e-7
        )

    def test_gm_mean_weighted(self):
        # weights (2, 1) on (1, 8): (1^2 * 8)^(1/3) = 2
        got = gm_mean_eps(np.array([1.0, 8.0]), 1e-12, np.array([2, 1]))
        assert got == pytest.approx(2.0, abs=1e-9)

    def test_pm_mean_p1_is_arithmetic(self):
        # p=1: eps + mean(4, 0) = 2 + eps
        got = pm_mean_eps(np.array([4.0, 0.0]), 1e-8, 1, np.array([1, 1]))
        assert got == pytest.approx(2.00000001, abs=1e-12)

    def test_pm_mean_large_p_tends_to_max(self):
        # ((4^64 + 9^64)/2)^(1/64) frozen via log-domain arithmetic
        got = pm_mean_eps(np.array([4.0, 9.0]), 1e-8, 64, np.array([1, 1]))
        assert got == pytest.approx(8.90305211874578, rel=1e-12)

    def test_gmsr_and_frozen_values(self):
        par = DEFAULTS.make(2)
        # all positive: sqrt(gm(1,4) + eps-ish) = sqrt(2 + ...) hand value
        assert gmsr_and(np.array([1.0, 2.0]), par) == pytest.approx(
            1.4141135623730952, rel=1e-12
        )
        # mixed sign: sqrt(eps) - sqrt(eps + 1/2), hand value
        assert gmsr_and(np.array([-1.0, 2.0]), par) == pytest.approx(
            -0.7070067882576153, rel=1e-12
        )

    def test_gmsr_arity_checked(self):
        with pytest.raises(ValueError):
            gmsr_and(np.array([1.0, 2.0, 3.0]), DEFAULTS.make(2))

    def test_soft_min_frozen(self):
        # -(1/25) log(1 + e^-25), about -5.5552e-13
        got = soft_min(np.array([0.0, 1.0]), 25.0)
        want = -math.log(1.0 + math.exp(-25.0)) / 25.0
        assert got == pytest.approx(want, rel=1e-9)
        assert got < 0.0

    def test_soft_bounds(self):
        # both smoothings under-approximate, so satisfaction is sound
        y = np.array([0.3, -1.2, 0.9])
        assert soft_min(y, 25.0) <= y.min()
        assert y.min() <= soft_max(y, 25.0) <= y.max()


class TestGmsrSignProperties:
    @given(
        st.lists(st.floats(-50, 50), min_size=2, max_size=6).filter(
            lambda ys: min(abs(v) for v in ys) > 1e-6
        ),
        st.integers(1, 4),
    )
    @settings(max_examples=300, deadline=None)
    def test_and_sign_matches_min(self, ys, p):
        y = np.array(ys)
        par = GmsrParams(1e-8, p, (1,) * len(ys))
        assert np.sign(gmsr_and(y, par)) == np.sign(y.min())

    @given(
        st.lists(st.floats(-50, 50), min_size=2, max_size=6).filter(
            lambda ys: min(abs(v) for v in ys) > 1e-6
        ),
        st.integers(1, 4),
    )
    @settings(max_examples=300, deadline=None)
    def test_or_sign_matches_max(self, ys, p):
        y = np.array(ys)
        par = GmsrParams(1e-8, p, (1,) * len(ys))
        assert np.sign(gmsr_or(y, par)) == np.sign(y.max())

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=5))
    @settings(max_examples=200, deadline=None)
    def test_or_is_dual_of_and(self, ys):
        y = np.array(ys)
        par = DEFAULTS.make(len(ys))
        assert gmsr_or(y, par) == -gmsr_and(-y, par)

    def test_zero_vector_boundary(self):
        par = DEFAULTS.make(2)
        assert gmsr_and(np.zeros(2), par) == 0.0


class TestExactSemantics:
    def test_predicate_value(self):
        assert ev("p0", [3.0, -1.0]) == 3.0

    def test_negation(self):
        assert ev("!p0", [3.0]) == -3.0

    def test_and_is_min_or_is_max(self):
        sig = [[1.0, -2.0, 5.0]]
        assert ev("p0 & p1 & p2", sig) == -2.0
        assert ev("p0 | p1 | p2", sig) == 5.0

    def test_implies(self):
        sig = [[2.0, -3.0]]
        # max(-lhs, rhs)
        assert ev("p0 -> p1", sig) == -2.0

    def test_always_eventually(self):
        vals = [3.0, 2.0, 1.0, 5.0]
        assert ev("G[0,2](p0)", vals) == 1.0
        assert ev("F[0,3](p0)", vals) == 5.0
        assert ev("F[1,2](p0)", vals) == 2.0

    def test_evaluation_step_shifts_window(self):
        vals = [3.0, 2.0, 1.0, 5.0]
        assert ev("G[0,1](p0)", vals, k=3) == 1.0

    def test_until_oracle(self):
        # switch at step j maximizing min(rhs(j), min lhs(1..j)):
        # p0 = (3, 2, 1), p1 = (-1, 1, 5) => best is j=2: min(1, min(3,2)) = 1
        sig = np.array([[3.0, -1.0], [2.0, 1.0], [1.0, 5.0]])
        assert ev("p0 U[0,2] p1", sig) == 1.0

    def test_until_prefix_includes_switch_step(self):
        # lhs dies at step 2, so switching later cannot help
        sig = np.array([[5.0, -1.0], [-4.0, 10.0]])
        assert ev("p0 U[0,1] p1", sig) == -1.0

    def test_horizon_error(self):
        with pytest.raises(HorizonError):
            ev("G[0,5](p0)", [1.0, 2.0])
        with pytest.raises(HorizonError):
            ev("p0", [1.0, 2.0], k=3)

    def test_horizon_error_details(self):
        # the first out-of-range step is reported
        with pytest.raises(HorizonError) as err:
            ev("F[0,9](p0)", [1.0])
        assert err.value.step == 2


class TestSmoothSemantics:
    def test_dssr_under_approximates_min(self):
        vals = [3.0, 2.0, 1.0]
        exact = ev("G[0,2](p0)", vals)
        smooth = ev("G[0,2](p0)", vals, semantics=DSSR(kappa=25.0))
        assert smooth <= exact

    def test_dssr_kappa_sharpens(self):
        vals = [3.0, 2.0, 1.0]
        exact = ev("G[0,2](p0)", vals)
        errs = [
            abs(ev("G[0,2](p0)", vals, semantics=DSSR(kappa=kap)) - exact)
            for kap in (5.0, 25.0, 125.0)
        ]
        assert errs[0] > errs[1] > errs[2]

    def test_dssr_kappa_validated(self):
        with pytest.raises(ValueError):
            DSSR(kappa=0.0)

    def test_gmsr_until_equals_staged_min_structure(self):
        # against a direct min/max computation of the same tree
        sig = np.array([[3.0, -1.0], [2.0, 1.0], [1.0, 5.0]])
        out = ev("p0 U[0,2] p1", sig, semantics=DGMSR())
        exact = ev("p0 U[0,2] p1", sig)
        assert np.sign(out) == np.sign(exact)

    def test_gmsr_sign_agrees_on_formula(self):
        sig = np.array([[1.0, -0.5], [0.4, 2.0], [3.0, 0.7]])
        for text in ("p0 & p1", "p0 | p1", "F[0,2](p1)", "G[0,1](p0)", "p0 U[0,2] p1"):
            exact = ev(text, sig)
            smooth = ev(text, sig, semantics=DGMSR())
            assert np.sign(exact) == np.sign(smooth), text


class TestCheckSat:
    def test_verdict_and_value(self):
        sig = Signal(np.array([[1.0], [-2.0], [3.0]]))
        preds = coordinate_predicates(1)
        phi = parse_formula("G[0,2](p0)", TABLE)
        sat, value = check_sat(phi, preds, sig, 1, DSR())
        assert value == -2.0 and not sat
        phi2 = parse_formula("F[0,2](p0)", TABLE)
        sat2, value2 = check_sat(phi2, preds, sig, 1, DSR())
        assert value2 == 3.0 and sat2

    def test_zero_counts_as_satisfied(self):
        sig = Signal(np.array([[0.0]]))
        preds = coordinate_predicates(1)
        sat, value = check_sat(parse_formula("p0", TABLE), preds, sig, 1, DSR())
        assert value == 0.0 and sat


class TestNodeValues:
    def test_per_node_values_exposed(self):
        phi = parse_formula("p0 & p1", TABLE)
        sig = Signal(np.array([[2.0, -1.0]]))
        preds = coordinate_predicates(2)
        out = eval_robustness(phi, preds, sig, 1, DSR())
        assert out == -1.0
