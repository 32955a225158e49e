"""Formula construction, parsing, parameter assignment and serialization."""
import numpy as np
import pytest

from stlgmsr.formula import (
    Always,
    And,
    Eventually,
    Formula,
    FormulaError,
    GmsrDefaults,
    GmsrParams,
    Implies,
    Not,
    Or,
    ParseError,
    Predicate,
    Signal,
    Until,
    UntilParams,
    assign_params,
    coordinate_predicates,
    format_formula,
    formula_from_json,
    formula_to_json,
    iter_nodes,
    make_derived,
    parse_formula,
    required_horizon,
)

TABLE = {f"p{i}": f"p{i}" for i in range(4)}


def p(i):
    return Predicate(f"p{i}")


class TestParser:
    def test_atom(self):
        assert parse_formula("p0", TABLE) == p(0)

    def test_precedence_and_binds_tighter_than_or(self):
        phi = parse_formula("p0 & p1 | p2", TABLE)
        assert phi == Or((And((p(0), p(1))), p(2)))

    def test_or_binds_tighter_than_implies(self):
        phi = parse_formula("p0 | p1 -> p2", TABLE)
        assert phi == Implies(Or((p(0), p(1))), p(2))

    def test_implies_right_associative(self):
        phi = parse_formula("p0 -> p1 -> p2", TABLE)
        assert phi == Implies(p(0), Implies(p(1), p(2)))

    def test_until_left_associative(self):
        phi = parse_formula("p0 U[0,1] p1 U[0,2] p2", TABLE)
        assert phi == Until(0, 2, Until(0, 1, p(0), p(1)), p(2))

    def test_unary_operators(self):
        phi = parse_formula("!F[0,2](p0) & G[1,3](p1)", TABLE)
        assert phi == And((Not(Eventually(0, 2, p(0))), Always(1, 3, p(1))))

    def test_temporal_name_without_interval_is_a_predicate(self):
        # F and G are operators only when directly followed by '['
        table = dict(TABLE, F="p0", G="p1")
        phi = parse_formula("F & G", table)
        assert phi == And((p(0), p(1)))

    def test_nested_parentheses(self):
        phi = parse_formula("((p0))", TABLE)
        assert phi == p(0)

    def test_unknown_predicate(self):
        with pytest.raises(ParseError, match="p9"):
            parse_formula("p9", TABLE)

    def test_error_position(self):
        with pytest.raises(ParseError) as err:
            parse_formula("p0 & ", TABLE)
        assert err.value.position == 5

    def test_interval_reversed(self):
        with pytest.raises(ParseError):
            parse_formula("F[3,1](p0)", TABLE)

    def test_missing_closing_paren(self):
        with pytest.raises(ParseError):
            parse_formula("(p0 & p1", TABLE)

    def test_garbage_character(self):
        with pytest.raises(ParseError):
            parse_formula("p0 $ p1", TABLE)


class TestFormat:
    CASES = [
        "p0",
        "!p0",
        "p0 & p1 & p2",
        "p0 | p1 -> p2",
        "p0 -> p1 -> p2",
        "F[0,3](p0 U[1,2] p1)",
        "G[0,5](!p0 | p1)",
        "(p0 U[0,1] p1) U[0,2] p2",
    ]

    @pytest.mark.parametrize("text", CASES)
    def test_round_trip(self, text):
        phi = parse_formula(text, TABLE)
        assert parse_formula(format_formula(phi), TABLE) == phi


class TestConstructors:
    def test_and_needs_two_children(self):
        with pytest.raises(FormulaError):
            And((p(0),))

    def test_or_needs_two_children(self):
        with pytest.raises(FormulaError):
            Or((p(0),))

    def test_interval_validation(self):
        with pytest.raises(FormulaError):
            Always(-1, 2, p(0))
        with pytest.raises(FormulaError):
            Eventually(3, 1, p(0))

    def test_node_ids_unique(self):
        phi = And((p(0), p(1)))
        ids = [node.node_id for node in iter_nodes(phi)]
        assert len(ids) == len(set(ids))

    def test_make_derived(self):
        assert make_derived("or", [p(0), p(1)]) == Or((p(0), p(1)))
        assert make_derived("implies", [p(0), p(1)]) == Implies(p(0), p(1))
        assert make_derived("always", [p(0)], (0, 2)) == Always(0, 2, p(0))
        assert make_derived("eventually", [p(0)], (1, 3)) == Eventually(1, 3, p(0))

    def test_make_derived_needs_interval(self):
        with pytest.raises(FormulaError):
            make_derived("always", [p(0)])

    def test_make_derived_unknown(self):
        with pytest.raises(FormulaError):
            make_derived("xor", [p(0), p(1)])


class TestRequiredHorizon:
    # horizon is the farthest step offset the formula reads beyond k
    def test_predicate(self):
        assert required_horizon(p(0)) == 0

    def test_nested_temporal(self):
        phi = Always(0, 3, Eventually(1, 2, p(0)))
        assert required_horizon(phi) == 3 + 2

    def test_until(self):
        phi = Until(0, 4, Always(0, 2, p(0)), p(1))
        # switch step up to 4, holding the lhs window through it
        assert required_horizon(phi) == 4 + 2


class TestGmsrParams:
    def test_validation(self):
        with pytest.raises(FormulaError):
            GmsrParams(0.0, 1, (1, 1))
        with pytest.raises(FormulaError):
            GmsrParams(1e-8, 0, (1, 1))
        with pytest.raises(FormulaError):
            GmsrParams(1e-8, 1, ())
        with pytest.raises(FormulaError):
            GmsrParams(1e-8, 1, (1, 0))

    def test_arity(self):
        assert GmsrParams(1e-8, 2, (1, 2, 3)).arity == 3

    def test_defaults_make(self):
        par = GmsrDefaults().make(4)
        assert par == GmsrParams(1e-8, 1, (1, 1, 1, 1))


class TestAssignParams:
    def test_defaults_fill_every_aggregation(self):
        phi = assign_params(parse_formula("p0 & p1 | p2", TABLE), GmsrDefaults())
        by_type = {type(n).__name__: n for n in iter_nodes(phi)}
        assert by_type["And"].params.arity == 2
        assert by_type["Or"].params.arity == 2

    def test_temporal_window_arity(self):
        phi = assign_params(Always(0, 4, p(0)), GmsrDefaults())
        assert phi.params.arity == 5

    def test_until_params_structure(self):
        phi = assign_params(Until(0, 3, p(0), p(1)), GmsrDefaults())
        par = phi.params
        assert isinstance(par, UntilParams)
        assert par.outer.arity == 4
        assert par.inner.arity == 2
        assert [pp.arity for pp in par.prefix] == [1, 2, 3, 4]

    def test_override_by_node_id(self):
        raw = And((p(0), p(1)))
        custom = GmsrParams(1e-6, 8, (2, 3))
        phi = assign_params(raw, GmsrDefaults(), {raw.node_id: custom})
        assert phi.params == custom
        assert phi.node_id == raw.node_id

    def test_override_arity_mismatch(self):
        raw = And((p(0), p(1)))
        with pytest.raises(FormulaError, match="arity"):
            assign_params(raw, GmsrDefaults(), {raw.node_id: GmsrParams(1e-8, 1, (1,))})

    def test_unknown_override_id(self):
        with pytest.raises(FormulaError):
            assign_params(And((p(0), p(1))), GmsrDefaults(), {10**9: GmsrParams(1e-8, 1, (1, 1))})

    def test_until_params_validation(self):
        outer = GmsrParams(1e-8, 1, (1, 1, 1))
        inner = GmsrParams(1e-8, 1, (1, 1))
        good = tuple(GmsrParams(1e-8, 1, (1,) * (j + 1)) for j in range(3))
        UntilParams(outer, inner, good)
        with pytest.raises(FormulaError):
            UntilParams(outer, GmsrParams(1e-8, 1, (1, 1, 1)), good)
        with pytest.raises(FormulaError):
            UntilParams(outer, inner, good[:2])
        with pytest.raises(FormulaError):
            UntilParams(outer, inner, (good[1],) + good[1:])


class TestJson:
    CASES = [
        "p0",
        "!p0 & p1",
        "F[0,3](p0) -> G[1,2](p1)",
        "p0 U[0,3] (p1 | p2)",
    ]

    @pytest.mark.parametrize("text", CASES)
    def test_round_trip_structure(self, text):
        phi = parse_formula(text, TABLE)
        assert formula_from_json(formula_to_json(phi)) == phi

    def test_round_trip_preserves_params(self):
        phi = assign_params(parse_formula("p0 U[0,2] p1", TABLE), GmsrDefaults(1e-6, 2, 3))
        back = formula_from_json(formula_to_json(phi))
        assert back == phi
        assert back.params == phi.params

    def test_bad_payload(self):
        with pytest.raises(FormulaError):
            formula_from_json('{"kind": "frobnicate"}')


class TestSignal:
    def test_shape_and_indexing(self):
        sig = Signal(np.arange(6.0).reshape(3, 2))
        assert sig.K == 3 and sig.n == 2
        assert sig.state(1).tolist() == [0.0, 1.0]
        assert sig.state(3).tolist() == [4.0, 5.0]

    def test_one_based_range(self):
        sig = Signal(np.zeros((2, 1)))
        with pytest.raises(FormulaError):
            sig.state(0)
        with pytest.raises(FormulaError):
            sig.state(3)

    def test_rejects_non_finite(self):
        with pytest.raises(FormulaError):
            Signal(np.array([[np.nan]]))
        with pytest.raises(FormulaError):
            Signal(np.array([[np.inf]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(FormulaError):
            Signal(np.zeros(3))

    def test_immutable(self):
        sig = Signal(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            sig.data[0, 0] = 1.0


class TestCoordinatePredicates:
    def test_values_and_gradients(self):
        preds = coordinate_predicates(3)
        x = np.array([1.5, -2.0, 7.0])
        assert set(preds) == {"p0", "p1", "p2"}
        assert preds["p1"].f(x) == -2.0
        assert preds["p2"].grad_f(x).tolist() == [0.0, 0.0, 1.0]

    def test_custom_names(self):
        preds = coordinate_predicates(2, names=["alt", "speed"])
        assert set(preds) == {"alt", "speed"}
        assert preds["speed"].f(np.array([0.0, 3.0])) == 3.0
