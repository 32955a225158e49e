"""Smooth robustness measures for discrete-time STL with gradients and a
prox-linear SCP trajectory optimizer."""

from .formula import (
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
    PredicateDef,
    Signal,
    Until,
    UntilParams,
    assign_params,
    coordinate_predicates,
    format_formula,
    formula_from_dict,
    formula_from_json,
    formula_to_dict,
    formula_to_json,
    iter_nodes,
    make_derived,
    parse_formula,
    required_horizon,
)
from .gradients import (
    fd_check,
    grad_eval,
    grad_gmsr_and,
    grad_gmsr_or,
    grad_soft_max,
    grad_soft_min,
)
from .semantics import (
    DGMSR,
    DSR,
    DSSR,
    HorizonError,
    RobustnessOutput,
    Semantics,
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

__all__ = [name for name in dir() if not name.startswith("_")]
