"""Dense ADMM solver for quadratic programs over simple cone blocks.

Problems have the form

    minimize   0.5 v' diag(p) v + q' v
    subject to A v + h  in  K

where K is a product of per-row-range blocks: zero (equalities), the
nonnegative orthant, Euclidean balls, second-order cones (t, x) with
|x| <= t, and boxes.  The solver splits A v + h = w with w constrained to
K, alternating a prefactorized linear solve for v with projections of w
onto the blocks, plus over-relaxation and a scaled dual update.  The
penalty vector is chosen per block (stiffer on equalities) and rescaled
when the primal and stationarity residuals drift apart.

This is the subproblem workhorse of the trajectory optimizer; it has no
dependencies beyond numpy/scipy so results are reproducible to the bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import splu


@dataclass(frozen=True)
class ConeBlock:
    """One factor of the constraint cone, covering rows start..stop-1."""

    kind: str  # 'zero' | 'nonneg' | 'ball' | 'soc' | 'box'
    start: int
    stop: int
    radius: float = 0.0
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "nonneg", "ball", "soc", "box"):
            raise ValueError(f"unknown cone block kind {self.kind!r}")
        if self.stop <= self.start:
            raise ValueError("empty cone block")
        if self.kind == "ball" and not self.radius >= 0.0:
            raise ValueError("ball radius must be nonnegative")
        if self.kind == "soc" and self.stop - self.start < 2:
            raise ValueError("second-order cone block needs at least 2 rows")


@dataclass
class ConvexQP:
    p_diag: np.ndarray
    q: np.ndarray
    A: np.ndarray
    h: np.ndarray
    blocks: list[ConeBlock] = field(default_factory=list)
    # optional dense PSD addition to the quadratic term (curvature models)
    p_extra: np.ndarray | None = None

    def __post_init__(self):
        self.p_diag = np.asarray(self.p_diag, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        m, n = self.A.shape if self.A.size else (0, self.q.size)
        if self.p_diag.shape != (n,) or self.q.shape != (n,):
            raise ValueError("objective size mismatch")
        if self.p_extra is not None:
            self.p_extra = np.asarray(self.p_extra, dtype=float)
            if self.p_extra.shape != (n, n):
                raise ValueError("extra quadratic term size mismatch")
        if self.h.shape != (m,):
            raise ValueError("constraint offset size mismatch")
        covered = np.zeros(m, dtype=bool)
        for blk in self.blocks:
            if blk.stop > m:
                raise ValueError("cone block outside constraint rows")
            if covered[blk.start : blk.stop].any():
                raise ValueError("cone blocks overlap")
            covered[blk.start : blk.stop] = True
        if m and not covered.all():
            raise ValueError("constraint rows not covered by cone blocks")


@dataclass
class QpResult:
    x: np.ndarray
    status: str
    iterations: int
    primal_res: float
    stat_res: float
    y: np.ndarray
    w: np.ndarray
    mu: np.ndarray


def project_block(v: np.ndarray, block: ConeBlock) -> np.ndarray:
    """Euclidean projection of a segment onto its cone block."""
    if block.kind == "zero":
        return np.zeros_like(v)
    if block.kind == "nonneg":
        return np.maximum(v, 0.0)
    if block.kind == "ball":
        nrm = np.linalg.norm(v)
        if nrm <= block.radius:
            return v.copy()
        if nrm == 0.0:
            return np.zeros_like(v)
        return v * (block.radius / nrm)
    if block.kind == "soc":
        t, x = v[0], v[1:]
        nx = np.linalg.norm(x)
        if nx <= t:
            return v.copy()
        if nx <= -t:
            return np.zeros_like(v)
        c = 0.5 * (t + nx)
        out = np.empty_like(v)
        out[0] = c
        out[1:] = x * (c / nx)
        return out
    if block.kind == "box":
        return np.clip(v, block.lb, block.ub)
    raise ValueError(f"unknown cone block kind {block.kind!r}")


def _project(v: np.ndarray, blocks: Sequence[ConeBlock]) -> np.ndarray:
    out = np.empty_like(v)
    for blk in blocks:
        out[blk.start : blk.stop] = project_block(v[blk.start : blk.stop], blk)
    return out


class _Projector:
    """Projection onto the whole product cone, vectorized across blocks.

    The per-iteration cost of the ADMM loop is dominated by the cone
    projection when done block by block in Python, so the block list is
    compiled once into flat index arrays grouped by kind and every kind is
    projected with a handful of array operations (segment sums via
    ``np.add.reduceat``).
    """

    def __init__(self, blocks: Sequence[ConeBlock]):
        zero, nonneg = [], []
        ball_idx, ball_starts, ball_lens, ball_radii = [], [], [], []
        soc_t, soc_x, soc_starts, soc_lens = [], [], [], []
        box_idx, box_lb, box_ub = [], [], []
        for blk in blocks:
            rng = np.arange(blk.start, blk.stop)
            if blk.kind == "zero":
                zero.append(rng)
            elif blk.kind == "nonneg":
                nonneg.append(rng)
            elif blk.kind == "ball":
                ball_starts.append(sum(ball_lens))
                ball_lens.append(rng.size)
                ball_idx.append(rng)
                ball_radii.append(blk.radius)
            elif blk.kind == "soc":
                soc_t.append(blk.start)
                soc_starts.append(sum(soc_lens))
                soc_lens.append(rng.size - 1)
                soc_x.append(rng[1:])
            else:  # box
                box_idx.append(rng)
                box_lb.append(np.asarray(blk.lb, dtype=float))
                box_ub.append(np.asarray(blk.ub, dtype=float))

        def cat(parts, dtype=np.intp):
            return (
                np.concatenate(parts)
                if parts
                else np.empty(0, dtype=dtype)
            )

        self.zero = cat(zero)
        self.nonneg = cat(nonneg)
        self.ball_idx = cat(ball_idx)
        self.ball_starts = np.asarray(ball_starts, dtype=np.intp)
        self.ball_lens = np.asarray(ball_lens, dtype=np.intp)
        self.ball_radii = np.asarray(ball_radii, dtype=float)
        self.soc_t = np.asarray(soc_t, dtype=np.intp)
        self.soc_x = cat(soc_x)
        self.soc_starts = np.asarray(soc_starts, dtype=np.intp)
        self.soc_lens = np.asarray(soc_lens, dtype=np.intp)
        self.box_idx = cat(box_idx)
        self.box_lb = cat(box_lb, dtype=float)
        self.box_ub = cat(box_ub, dtype=float)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        if self.zero.size:
            out[self.zero] = 0.0
        if self.nonneg.size:
            out[self.nonneg] = np.maximum(v[self.nonneg], 0.0)
        if self.ball_idx.size:
            seg = v[self.ball_idx]
            nrm = np.sqrt(np.add.reduceat(seg * seg, self.ball_starts))
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.where(nrm > self.ball_radii, self.ball_radii / nrm, 1.0)
            f[~np.isfinite(f)] = 0.0
            out[self.ball_idx] = seg * np.repeat(f, self.ball_lens)
        if self.soc_t.size:
            t = v[self.soc_t]
            xs = v[self.soc_x]
            nx = np.sqrt(np.add.reduceat(xs * xs, self.soc_starts))
            inside = nx <= t
            polar = nx <= -t
            c = 0.5 * (t + nx)
            with np.errstate(divide="ignore", invalid="ignore"):
                fx = np.where(inside, 1.0, c / nx)
            fx[polar | ~np.isfinite(fx)] = 0.0
            ct = np.where(inside, t, np.where(polar, 0.0, c))
            out[self.soc_t] = ct
            out[self.soc_x] = xs * np.repeat(fx, self.soc_lens)
        if self.box_idx.size:
            out[self.box_idx] = np.clip(v[self.box_idx], self.box_lb, self.box_ub)
        return out


def _rho_vector(qp: ConvexQP, rho: float, eq_scale: float) -> np.ndarray:
    r = np.full(qp.h.shape, rho)
    for blk in qp.blocks:
        if blk.kind == "zero":
            r[blk.start : blk.stop] = rho * eq_scale
    return r


def solve_qp(
    qp: ConvexQP,
    tol: float = 1e-8,
    max_iter: int = 20000,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
    rho: float = 1.0,
    eq_scale: float = 1e3,
    alpha: float = 1.6,
    check_every: int = 25,
) -> QpResult:
    """Solve the block-cone QP.

    Declares success when the feasibility residual |Av + h - w| drops to
    tol and the stationarity residual |diag(p) v + q + A' y| to 10 tol,
    both in the max norm and scaled by the size of the terms they compare
    (so on unit-scale data the thresholds are absolute).  status is
    'max_iter' otherwise; callers treat that as a request to take a more
    cautious step.
    """
    n = qp.q.size
    m = qp.h.size
    if m == 0:
        if np.any(qp.p_diag <= 0.0):
            raise ValueError("unconstrained problem needs a positive quadratic")
        if qp.p_extra is not None:
            chol = cho_factor(np.diag(qp.p_diag) + qp.p_extra, lower=True, check_finite=False)
            x = cho_solve(chol, -qp.q, check_finite=False)
        else:
            x = -qp.q / qp.p_diag
        return QpResult(x, "solved", 0, 0.0, 0.0, np.zeros(0), np.zeros(0), np.zeros(0))

    r_vec = _rho_vector(qp, rho, eq_scale)
    project = _Projector(qp.blocks)
    if warm is not None:
        w = np.array(warm[0], dtype=float)
        mu = np.array(warm[1], dtype=float)
    else:
        w = project(qp.h.copy())
        mu = np.zeros(m)

    A_dense = np.ascontiguousarray(qp.A)
    At_dense = np.ascontiguousarray(qp.A.T)
    h = qp.h
    q = qp.q
    # constraint matrices of trajectory subproblems are very sparse; the
    # per-iteration matvec and back solve are the hot path
    sparse_mode = np.count_nonzero(A_dense) < 0.25 * A_dense.size
    if sparse_mode:
        A = sp.csr_matrix(A_dense)
        At = sp.csr_matrix(At_dense)
    else:
        A, At = A_dense, At_dense

    def factor(rv):
        M = np.diag(qp.p_diag) + (At_dense * rv) @ A_dense
        if qp.p_extra is not None:
            M = M + qp.p_extra
        if sparse_mode:
            return splu(sp.csc_matrix(M)).solve
        chol = cho_factor(M, lower=True, check_finite=False)
        return lambda b: cho_solve(chol, b, check_finite=False)

    solve = factor(r_vec)
    x = np.zeros(n)
    prim = stat = np.inf
    it = 0
    refactors = 0
    for it in range(1, max_iter + 1):
        rhs = At @ (r_vec * (w - mu - h)) - q
        x = solve(rhs)
        ax_h = A @ x + h
        t_relaxed = alpha * ax_h + (1.0 - alpha) * w
        w = project(t_relaxed + mu)
        mu = mu + t_relaxed - w
        if it % check_every == 0 or it == max_iter:
            prim = float(np.abs(ax_h - w).max())
            y = r_vec * mu
            px = qp.p_diag * x
            if qp.p_extra is not None:
                px = px + qp.p_extra @ x
            aty = At @ y
            stat = float(np.abs(px + q + aty).max())
            prim_scale = 1.0 + max(float(np.abs(ax_h).max()), float(np.abs(w).max()))
            stat_scale = 1.0 + max(
                float(np.abs(px).max()),
                float(np.abs(q).max()),
                float(np.abs(aty).max()),
            )
            if prim <= tol * prim_scale and stat <= 10.0 * tol * stat_scale:
                return QpResult(x, "solved", it, prim, stat, y, w, mu)
            # rebalance the penalty when one residual lags far behind
            if it % (check_every * 10) == 0 and refactors < 20:
                ratio = prim / max(stat, 1e-30)
                if ratio > 10.0 or ratio < 0.1:
                    scale = float(np.clip(np.sqrt(ratio), 1e-3, 1e3))
                    r_vec = r_vec * scale
                    mu = mu / scale
                    solve = factor(r_vec)
                    refactors += 1
    y = r_vec * mu
    return QpResult(x, "max_iter", it, prim, stat, y, w, mu)
