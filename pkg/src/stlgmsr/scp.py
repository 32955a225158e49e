"""Prox-linear sequential convex programming over robustness objectives.

The decision variable is the stacked trajectory z = (x_1..x_K, u_1..u_K).
Dynamics enter through multiple-shooting defects d_k = F(x_k, u_k, u_k+1)
- x_k+1 under an exact l1 penalty, the robustness objective enters through
its first-order model, and each iteration solves

    min  -(G + g' dx) + lam * sum |d_k + linearized defect change|
         + (sigma/2) |dz|^2
    s.t. boundary equalities, per-node balls / cones / boxes on z + dz

with the l1 terms rewritten as nonnegative slack pairs.  A standard ratio
test compares actual to predicted merit decrease; sigma shrinks on
accepted steps and grows on rejections, so iterates stay where the
linearization is trustworthy.  Accepted steps never increase the exact
merit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .formula import Formula, PredicateDef, Signal
from .gradients import grad_eval
from .qp import ConeBlock, ConvexQP, solve_qp
from .semantics import Semantics, eval_robustness
from .shooting import IntegrationError


# --- problem description ----------------------------------------------------


@dataclass(frozen=True)
class BoundaryEq:
    """Pin a full state or input vector at one node (1-based)."""

    var: str  # 'x' or 'u'
    node: int
    value: np.ndarray

    def __post_init__(self):
        if self.var not in ("x", "u"):
            raise ValueError("boundary var must be 'x' or 'u'")
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))


@dataclass(frozen=True)
class BallConstraint:
    """Norm bound on selected components of x or u at the given nodes."""

    var: str
    idx: tuple[int, ...]
    radius: float
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class ConeConstraint:
    """|u| cos(theta) <= axis . u at the given nodes (axis is unit)."""

    axis: np.ndarray
    cos_angle: float
    nodes: tuple[int, ...]

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        nrm = np.linalg.norm(axis)
        if not nrm > 0.0:
            raise ValueError("cone axis must be nonzero")
        object.__setattr__(self, "axis", axis / nrm)
        if not 0.0 < self.cos_angle <= 1.0:
            raise ValueError("cos_angle must lie in (0, 1]")


@dataclass(frozen=True)
class BoxConstraint:
    var: str
    idx: tuple[int, ...]
    lb: np.ndarray
    ub: np.ndarray
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class StlTerm:
    """A robustness expression attached to the trajectory signal."""

    formula: Formula
    predicates: Mapping[str, PredicateDef]
    k: int
    semantics: Semantics
    weight: float = 1.0  # penalty weight when used as a constraint


@dataclass
class OcpProblem:
    """Trajectory optimization problem over K nodes.

    The STL objective is maximized; stl_constraints are penalized through
    hinge terms weight * max(0, -robustness).
    """

    transcription: object
    K: int
    times: np.ndarray
    boundary: list[BoundaryEq] = field(default_factory=list)
    balls: list[BallConstraint] = field(default_factory=list)
    cones: list[ConeConstraint] = field(default_factory=list)
    boxes: list[BoxConstraint] = field(default_factory=list)
    objective: StlTerm | None = None
    stl_constraints: list[StlTerm] = field(default_factory=list)
    # Optional model Hessian for the objective: called with the iterate X and
    # the robustness gradient (K, n_x), returns a PSD (K*n_x, K*n_x) matrix.
    # A linear model of a concave robustness term over-promises; adding its
    # Gauss-Newton curvature to the subproblem lets the solver take steps
    # sized by the prox weight instead of by model error rejections.
    objective_curvature: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    @property
    def n_x(self) -> int:
        return self.transcription.n_x

    @property
    def n_u(self) -> int:
        return self.transcription.n_u


@dataclass
class ScpConfig:
    sigma0: float = 1.0
    gamma_inc: float = 2.0
    gamma_dec: float = 1.5
    eta1: float = 0.1
    eta2: float = 0.7
    sigma_min: float = 1e-4
    sigma_max: float = 1e8
    lam_dyn: float = 1e3
    tol_step: float = 1e-6
    tol_dyn: float = 1e-7
    max_iter: int = 120
    qp_tol: float = 1e-8
    qp_tol_min: float = 1e-12
    qp_max_iter: int = 40000
    max_rejects: int = 40
    # Retry rejected steps once with defect offsets re-measured at the trial
    # point (second-order correction); a no-op for exact transcriptions.
    corrector: bool = True


@dataclass
class ScpState:
    X: np.ndarray
    U: np.ndarray
    sigma: float
    lam: float
    iteration: int
    history: list[dict] = field(default_factory=list)


@dataclass
class ScpReport:
    status: str  # 'converged' | 'max_iter' | 'stalled' | 'qp_failure'
    iterations: list[dict]
    robustness: float
    defect_l1: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# --- evaluation helpers -----------------------------------------------------


def linearize_dynamics(problem: OcpProblem, X: np.ndarray, U: np.ndarray):
    """Per-interval transition Jacobians and defects at the current iterate."""
    out = []
    for k in range(problem.K - 1):
        try:
            x_next, A, B, Bp = problem.transcription.propagate(X[k], U[k], U[k + 1])
        except IntegrationError:
            raise IntegrationError(k + 1) from None
        out.append((A, B, Bp, x_next - X[k + 1]))
    return out


def defect_vectors(problem: OcpProblem, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Per-interval dynamics defects, shape (K-1, n_x)."""
    out = np.empty((problem.K - 1, problem.n_x))
    for k in range(problem.K - 1):
        x_next = problem.transcription.propagate_state(X[k], U[k], U[k + 1])
        out[k] = x_next - X[k + 1]
    return out


def defect_l1(problem: OcpProblem, X: np.ndarray, U: np.ndarray) -> float:
    return float(np.abs(defect_vectors(problem, X, U)).sum())


def violation_l1(problem: OcpProblem, X: np.ndarray, U: np.ndarray) -> float:
    """l1 violation of the node constraints (pins, balls, cones, boxes)."""
    total = 0.0
    for eq in problem.boundary:
        cur = X[eq.node - 1] if eq.var == "x" else U[eq.node - 1]
        total += float(np.abs(cur - eq.value).sum())
    for ball in problem.balls:
        arr = X if ball.var == "x" else U
        for k in ball.nodes:
            total += max(0.0, float(np.linalg.norm(arr[k - 1, list(ball.idx)])) - ball.radius)
    for cone in problem.cones:
        for k in cone.nodes:
            u = U[k - 1]
            total += max(0.0, cone.cos_angle * float(np.linalg.norm(u)) - float(cone.axis @ u))
    for box in problem.boxes:
        arr = X if box.var == "x" else U
        for k in box.nodes:
            vals = arr[k - 1, list(box.idx)]
            total += float(np.maximum(box.lb - vals, 0.0).sum())
            total += float(np.maximum(vals - box.ub, 0.0).sum())
    return total


def _term_value(term: StlTerm, X: np.ndarray) -> float:
    return eval_robustness(term.formula, term.predicates, Signal(X), term.k, term.semantics)


def merit_value(
    problem: OcpProblem, X: np.ndarray, U: np.ndarray, lam_dyn: float
) -> tuple[float, float, float]:
    """Exact penalty merit with its robustness and defect parts.

    Node constraints enter the merit as an l1 penalty even though the
    subproblem enforces them exactly: an infeasible initial guess can only
    be repaired by a step that trades new linearization defect against the
    violation it removes, and a merit blind to the violation would reject
    every such step.
    """
    defects = defect_l1(problem, X, U)
    robustness = _term_value(problem.objective, X) if problem.objective else 0.0
    merit = lam_dyn * (defects + violation_l1(problem, X, U)) - robustness
    for term in problem.stl_constraints:
        merit += term.weight * max(0.0, -_term_value(term, X))
    return merit, robustness, defects


# --- subproblem -------------------------------------------------------------


@dataclass
class Subproblem:
    qp: ConvexQP
    K: int
    n_x: int
    n_u: int
    lam_dyn: float
    lin: list
    obj_value: float
    obj_grad: np.ndarray  # flattened over states, zeros if no objective
    con_values: list[float]
    con_grads: list[np.ndarray]
    con_weights: list[float]
    defect_rows: slice = slice(0, 0)  # rows of qp.A holding the defect equalities
    obj_curv: np.ndarray | None = None  # curvature model over the dX block

    @property
    def n_dx(self) -> int:
        return self.K * self.n_x

    @property
    def n_du(self) -> int:
        return self.K * self.n_u

    def split(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dX = v[: self.n_dx].reshape(self.K, self.n_x)
        dU = v[self.n_dx : self.n_dx + self.n_du].reshape(self.K, self.n_u)
        return dX, dU

    def slacks(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        base = self.n_dx + self.n_du
        ns = (self.K - 1) * self.n_x
        return v[base : base + ns], v[base + ns : base + 2 * ns]

    def model_merit(self, v: np.ndarray) -> float:
        """Convex model of the exact merit at the trial step (no prox term)."""
        dX, dU = self.split(v)
        total = 0.0
        for k, (A, B, Bp, d) in enumerate(self.lin):
            resid = d + A @ dX[k] + B @ dU[k] + Bp @ dU[k + 1] - dX[k + 1]
            total += float(np.abs(resid).sum())
        model = self.lam_dyn * total
        dx_flat = v[: self.n_dx]
        model -= self.obj_value + float(self.obj_grad @ dx_flat)
        if self.obj_curv is not None:
            model += 0.5 * float(dx_flat @ (self.obj_curv @ dx_flat))
        for val, grad, weight in zip(self.con_values, self.con_grads, self.con_weights):
            model += weight * max(0.0, -(val + float(grad @ dx_flat)))
        return model


def build_subproblem(
    problem: OcpProblem,
    X: np.ndarray,
    U: np.ndarray,
    lin: list,
    sigma: float,
    lam_dyn: float,
) -> Subproblem:
    """Assemble the prox-linear QP around the iterate (X, U).

    Layout: v = [dX, dU, s_plus, s_minus, hinge].  Defects become equality
    rows with the slack pair absorbing the l1 penalty; convex path sets act
    on z + dz directly, so any accepted iterate satisfies them to solver
    tolerance.
    """
    K, n_x, n_u = problem.K, problem.n_x, problem.n_u
    n_dx, n_du = K * n_x, K * n_u
    n_slack = (K - 1) * n_x
    n_con = len(problem.stl_constraints)
    n_var = n_dx + n_du + 2 * n_slack + n_con

    def xs(k):  # 1-based node -> slice into dX
        return slice((k - 1) * n_x, k * n_x)

    def us(k):
        return slice(n_dx + (k - 1) * n_u, n_dx + k * n_u)

    sp0 = n_dx + n_du
    sm0 = sp0 + n_slack
    hg0 = sm0 + n_slack

    obj_value = 0.0
    obj_grad = np.zeros(n_dx)
    obj_curv = None
    if problem.objective is not None:
        out = grad_eval(
            problem.objective.formula,
            problem.objective.predicates,
            Signal(X),
            problem.objective.k,
            problem.objective.semantics,
        )
        obj_value = out.value
        obj_grad = out.gradient.reshape(-1)
        if problem.objective_curvature is not None:
            obj_curv = problem.objective_curvature(X, out.gradient)

    con_values, con_grads, con_weights = [], [], []
    for term in problem.stl_constraints:
        out = grad_eval(term.formula, term.predicates, Signal(X), term.k, term.semantics)
        con_values.append(out.value)
        con_grads.append(out.gradient.reshape(-1))
        con_weights.append(term.weight)

    p_diag = np.zeros(n_var)
    p_diag[: n_dx + n_du] = sigma
    q = np.zeros(n_var)
    q[:n_dx] = -obj_grad
    q[sp0:hg0] = lam_dyn
    for j, weight in enumerate(con_weights):
        q[hg0 + j] = weight

    rows: list[np.ndarray] = []
    offs: list[float] = []
    blocks: list[ConeBlock] = []

    def add_block(kind, row_list, off_list, **kw):
        start = len(rows)
        rows.extend(row_list)
        offs.extend(off_list)
        blocks.append(ConeBlock(kind, start, len(rows), **kw))

    # dynamics defects: A dx_k + B du_k + Bp du_k+1 - dx_k+1 - s+ + s- + d = 0
    def_rows, def_offs = [], []
    for k in range(1, K):
        A, B, Bp, d = lin[k - 1]
        for i in range(n_x):
            row = np.zeros(n_var)
            row[xs(k)] = A[i]
            row[us(k)] = B[i]
            row[us(k + 1)] = Bp[i]
            row[xs(k + 1).start + i] = -1.0
            srow = (k - 1) * n_x + i
            row[sp0 + srow] = -1.0
            row[sm0 + srow] = 1.0
            def_rows.append(row)
            def_offs.append(float(d[i]))
    add_block("zero", def_rows, def_offs)

    # boundary pins: dz = target - current
    bnd_rows, bnd_offs = [], []
    for bc in problem.boundary:
        sl = xs(bc.node) if bc.var == "x" else us(bc.node)
        cur = X[bc.node - 1] if bc.var == "x" else U[bc.node - 1]
        for i in range(sl.stop - sl.start):
            row = np.zeros(n_var)
            row[sl.start + i] = 1.0
            bnd_rows.append(row)
            bnd_offs.append(float(cur[i] - bc.value[i]))
    if bnd_rows:
        add_block("zero", bnd_rows, bnd_offs)

    # slack and hinge nonnegativity
    nn_rows = []
    for j in range(2 * n_slack + n_con):
        row = np.zeros(n_var)
        row[sp0 + j] = 1.0
        nn_rows.append(row)
    if nn_rows:
        add_block("nonneg", nn_rows, [0.0] * len(nn_rows))

    # hinge epigraph: value + grad . dx + t_j >= 0
    hinge_rows, hinge_offs = [], []
    for j, (val, grad) in enumerate(zip(con_values, con_grads)):
        row = np.zeros(n_var)
        row[:n_dx] = grad
        row[hg0 + j] = 1.0
        hinge_rows.append(row)
        hinge_offs.append(float(val))
    if hinge_rows:
        add_block("nonneg", hinge_rows, hinge_offs)

    # per-node norm balls on z + dz
    for ball in problem.balls:
        for node in ball.nodes:
            sl = xs(node) if ball.var == "x" else us(node)
            cur = X[node - 1] if ball.var == "x" else U[node - 1]
            brows, boffs = [], []
            for i in ball.idx:
                row = np.zeros(n_var)
                row[sl.start + i] = 1.0
                brows.append(row)
                boffs.append(float(cur[i]))
            add_block("ball", brows, boffs, radius=ball.radius)

    # pointing cones on the input
    for cone in problem.cones:
        for node in cone.nodes:
            sl = us(node)
            cur = U[node - 1]
            crows, coffs = [], []
            row = np.zeros(n_var)
            row[sl] = cone.axis / cone.cos_angle
            crows.append(row)
            coffs.append(float(cone.axis @ cur / cone.cos_angle))
            for i in range(n_u):
                row = np.zeros(n_var)
                row[sl.start + i] = 1.0
                crows.append(row)
                coffs.append(float(cur[i]))
            add_block("soc", crows, coffs)

    # interval bounds on selected components
    for box in problem.boxes:
        for node in box.nodes:
            sl = xs(node) if box.var == "x" else us(node)
            cur = X[node - 1] if box.var == "x" else U[node - 1]
            brows, boffs = [], []
            for i in box.idx:
                row = np.zeros(n_var)
                row[sl.start + i] = 1.0
                brows.append(row)
                boffs.append(float(cur[i]))
            add_block(
                "box",
                brows,
                boffs,
                lb=np.asarray(box.lb, dtype=float),
                ub=np.asarray(box.ub, dtype=float),
            )

    p_extra = None
    if obj_curv is not None:
        p_extra = np.zeros((n_var, n_var))
        p_extra[:n_dx, :n_dx] = obj_curv
    qp = ConvexQP(p_diag, q, np.array(rows), np.array(offs), blocks, p_extra=p_extra)
    return Subproblem(
        qp,
        K,
        n_x,
        n_u,
        lam_dyn,
        lin,
        obj_value,
        obj_grad,
        con_values,
        con_grads,
        con_weights,
        defect_rows=slice(0, (K - 1) * n_x),
        obj_curv=obj_curv,
    )


# --- main loop --------------------------------------------------------------


def prox_linear_solve(
    problem: OcpProblem,
    X0: np.ndarray,
    U0: np.ndarray,
    config: ScpConfig = ScpConfig(),
) -> tuple[np.ndarray, np.ndarray, ScpReport]:
    """Run the prox-linear iteration from (X0, U0) until the step and the
    dynamics defects are below tolerance."""
    state = ScpState(
        X=np.array(X0, dtype=float),
        U=np.array(U0, dtype=float),
        sigma=config.sigma0,
        lam=config.lam_dyn,
        iteration=0,
    )
    merit, robustness, defects = merit_value(problem, state.X, state.U, state.lam)
    status = "max_iter"
    warm = None
    rejects_in_a_row = 0
    # Running subproblem accuracy: rejected steps near a kink are often an
    # artifact of a loosely solved QP (the ratio test compares differences
    # far below the solver noise), so each rejection tightens the inner
    # tolerance and each acceptance relaxes it back toward the configured
    # value.
    qp_tol = config.qp_tol

    for it in range(1, config.max_iter + 1):
        state.iteration = it
        lin = linearize_dynamics(problem, state.X, state.U)
        sub = build_subproblem(problem, state.X, state.U, lin, state.sigma, state.lam)
        result = solve_qp(sub.qp, tol=qp_tol, max_iter=config.qp_max_iter, warm=warm)
        record = {
            "iteration": it,
            "merit": merit,
            "robustness": robustness,
            "defect_l1": defects,
            "sigma": state.sigma,
            "accepted": False,
            "qp_status": result.status,
            "qp_iterations": result.iterations,
        }
        if result.status != "solved":
            # Iteration budget ran out: a larger sigma strengthens the
            # quadratic term and makes the subproblem easier, and asking for
            # less accuracy is the only other safe response.
            state.sigma = min(state.sigma * config.gamma_inc, config.sigma_max)
            qp_tol = min(config.qp_tol, qp_tol * 10.0)
            rejects_in_a_row += 1
            state.history.append(record)
            if rejects_in_a_row > config.max_rejects:
                status = "qp_failure"
                break
            continue
        warm = (result.w, result.mu)

        dX, dU = sub.split(result.x)
        step_inf = float(max(np.abs(dX).max(), np.abs(dU).max()))
        record["step_inf"] = step_inf
        model = sub.model_merit(result.x)
        predicted = merit - model
        if predicted <= 1e-12 * max(1.0, abs(merit)):
            # No model progress.  Genuine stationarity only when the prox
            # step itself is negligible or sigma is already maxed out;
            # otherwise the QP may just be underresolved, so reject and
            # tighten the prox term instead of giving up.
            record["accepted"] = False
            state.history.append(record)
            if step_inf <= config.tol_step or qp_tol <= config.qp_tol_min:
                done = defects <= config.tol_dyn and step_inf <= config.tol_step
                status = "converged" if done else "stalled"
                break
            # An accuracy failure, not a trust-region failure: re-solve the
            # same subproblem tighter instead of shrinking the step.
            qp_tol = max(qp_tol * 0.1, config.qp_tol_min)
            rejects_in_a_row += 1
            if rejects_in_a_row > config.max_rejects:
                status = "stalled"
                break
            continue

        X_new = state.X + dX
        U_new = state.U + dU
        try:
            merit_new, rob_new, def_new = merit_value(problem, X_new, U_new, state.lam)
            ratio = (merit - merit_new) / predicted
        except IntegrationError:
            merit_new, rob_new, def_new = np.inf, np.nan, np.inf
            ratio = -np.inf
        record["ratio"] = float(ratio)

        if ratio < config.eta1 and np.isfinite(merit_new) and config.corrector:
            # Most late rejections are the penalty term re-introducing true
            # dynamics curvature that the linear model cannot see (a gap of
            # order lam * step^2).  Re-solve the same subproblem with the
            # defect offsets shifted by the error measured at the trial
            # point; the combined step cancels the gap to third order.  The
            # predicted decrease stays that of the first model.
            correction = defect_vectors(problem, X_new, U_new)
            for k, (A, B, Bp, d) in enumerate(sub.lin):
                correction[k] -= d + A @ dX[k] + B @ dU[k] + Bp @ dU[k + 1] - dX[k + 1]
            if np.abs(correction).max() > 1e-12 * (1.0 + defects):
                h_soc = sub.qp.h.copy()
                h_soc[sub.defect_rows] += correction.reshape(-1)
                qp_soc = ConvexQP(
                    sub.qp.p_diag, sub.qp.q, sub.qp.A, h_soc, sub.qp.blocks,
                    p_extra=sub.qp.p_extra,
                )
                result_soc = solve_qp(
                    qp_soc, tol=qp_tol, max_iter=config.qp_max_iter, warm=warm
                )
                if result_soc.status == "solved":
                    warm = (result_soc.w, result_soc.mu)
                    dX_soc, dU_soc = sub.split(result_soc.x)
                    try:
                        m_soc, r_soc, d_soc = merit_value(
                            problem, state.X + dX_soc, state.U + dU_soc, state.lam
                        )
                        ratio_soc = (merit - m_soc) / predicted
                    except IntegrationError:
                        ratio_soc = -np.inf
                    if ratio_soc >= config.eta1:
                        dX, dU = dX_soc, dU_soc
                        X_new, U_new = state.X + dX, state.U + dU
                        merit_new, rob_new, def_new = m_soc, r_soc, d_soc
                        ratio = ratio_soc
                        step_inf = float(max(np.abs(dX).max(), np.abs(dU).max()))
                        record["step_inf"] = step_inf
                        record["corrected"] = True
                        record["ratio"] = float(ratio)

        if ratio >= config.eta1:
            state.X, state.U = X_new, U_new
            merit, robustness, defects = merit_new, rob_new, def_new
            # model agreed well -> grow the trust region faster; a step that
            # only passed after correction says the plain model was already
            # wrong at this sigma, so grow cautiously there
            plain = not record.get("corrected", False)
            shrink = config.gamma_dec**2 if (ratio >= config.eta2 and plain) else config.gamma_dec
            state.sigma = max(state.sigma / shrink, config.sigma_min)
            qp_tol = min(config.qp_tol, qp_tol * 2.0)
            record["accepted"] = True
            rejects_in_a_row = 0
            state.history.append(record)
            if step_inf <= config.tol_step and defects <= config.tol_dyn:
                status = "converged"
                break
        else:
            # model disagreed with the true merit: genuine trust-region
            # rejection, keep the subproblem accuracy as is
            state.sigma = min(state.sigma * config.gamma_inc, config.sigma_max)
            rejects_in_a_row += 1
            state.history.append(record)
            if rejects_in_a_row > config.max_rejects:
                status = "stalled"
                break

    report = ScpReport(
        status=status,
        iterations=state.history,
        robustness=robustness,
        defect_l1=defects,
    )
    return state.X, state.U, report
