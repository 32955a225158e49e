"""Multiple-shooting transcription of continuous dynamics.

Controls are first-order-hold across each node interval and states are
propagated with fixed-step RK4.  The state transition Jacobians come from
integrating the variational equations on the same RK4 grid, which makes
them the exact derivatives of the discrete update map (not an ODE-level
approximation), so finite differences of the propagated state reproduce
them to roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class IntegrationError(RuntimeError):
    """Propagation produced a non-finite state."""

    def __init__(self, node: int | None = None):
        where = f" on interval {node}" if node is not None else ""
        super().__init__(f"state propagation diverged{where}")
        self.node = node


@dataclass(frozen=True)
class Dynamics:
    """Continuous-time dynamics x' = f(x, u) with analytic Jacobians."""

    n_x: int
    n_u: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_u: Callable[[np.ndarray, np.ndarray], np.ndarray]


def rk4_foh_step(
    dynamics: Dynamics,
    x: np.ndarray,
    u0: np.ndarray,
    u1: np.ndarray,
    dt: float,
    n_sub: int = 10,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Propagate one node interval and return (x_next, A, B0, B1).

    A = d x_next / d x, B0 = d x_next / d u0, B1 = d x_next / d u1 for the
    discrete map defined by n_sub RK4 substeps under linear interpolation
    of the control from u0 at t=0 to u1 at t=dt.
    """
    n_x, n_u = dynamics.n_x, dynamics.n_u
    x = np.asarray(x, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    A = np.eye(n_x)
    B0 = np.zeros((n_x, n_u))
    B1 = np.zeros((n_x, n_u))

    def rhs(t, state):
        xs, As, B0s, B1s = state
        s = t / dt
        u = (1.0 - s) * u0 + s * u1
        jx = dynamics.jac_x(xs, u)
        ju = dynamics.jac_u(xs, u)
        return (
            dynamics.f(xs, u),
            jx @ As,
            jx @ B0s + (1.0 - s) * ju,
            jx @ B1s + s * ju,
        )

    h = dt / n_sub
    state = (x, A, B0, B1)
    for i in range(n_sub):
        t = i * h
        k1 = rhs(t, state)
        k2 = rhs(t + 0.5 * h, _axpy(state, 0.5 * h, k1))
        k3 = rhs(t + 0.5 * h, _axpy(state, 0.5 * h, k2))
        k4 = rhs(t + h, _axpy(state, h, k3))
        state = tuple(
            s + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)
        )
    x1, A, B0, B1 = state
    if not (
        np.all(np.isfinite(x1))
        and np.all(np.isfinite(A))
        and np.all(np.isfinite(B0))
        and np.all(np.isfinite(B1))
    ):
        raise IntegrationError()
    return x1, A, B0, B1


def _axpy(state, scale, delta):
    return tuple(s + scale * d for s, d in zip(state, delta))


def rk4_foh_state(
    dynamics: Dynamics,
    x: np.ndarray,
    u0: np.ndarray,
    u1: np.ndarray,
    dt: float,
    n_sub: int = 10,
) -> np.ndarray:
    """State-only propagation over one interval (for replay checks)."""
    x = np.asarray(x, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    h = dt / n_sub
    for i in range(n_sub):
        t = i * h

        def f_at(tau, xs):
            s = tau / dt
            return dynamics.f(xs, (1.0 - s) * u0 + s * u1)

        k1 = f_at(t, x)
        k2 = f_at(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = f_at(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = f_at(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x)):
        raise IntegrationError()
    return x


class FohRk4Transcription:
    """Discrete transition map induced by RK4 under first-order-hold input."""

    def __init__(self, dynamics: Dynamics, dt: float, n_sub: int = 10):
        if dt <= 0.0 or n_sub < 1:
            raise ValueError("need dt > 0 and n_sub >= 1")
        self.dynamics = dynamics
        self.dt = float(dt)
        self.n_sub = int(n_sub)

    @property
    def n_x(self) -> int:
        return self.dynamics.n_x

    @property
    def n_u(self) -> int:
        return self.dynamics.n_u

    def propagate(self, x, u0, u1):
        return rk4_foh_step(self.dynamics, x, u0, u1, self.dt, self.n_sub)

    def propagate_state(self, x, u0, u1):
        return rk4_foh_state(self.dynamics, x, u0, u1, self.dt, self.n_sub)


class SingleIntegratorMap:
    """Explicit discrete map x_next = x + u, the simplest kinematic model.

    The second control argument is ignored; it exists so the interface
    matches the first-order-hold transcription.
    """

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._eye = np.eye(self.dim)
        self._zero = np.zeros((self.dim, self.dim))

    @property
    def n_x(self) -> int:
        return self.dim

    @property
    def n_u(self) -> int:
        return self.dim

    def propagate(self, x, u0, u1):
        x1 = np.asarray(x, dtype=float) + np.asarray(u0, dtype=float)
        return x1, self._eye.copy(), self._eye.copy(), self._zero.copy()

    def propagate_state(self, x, u0, u1):
        return np.asarray(x, dtype=float) + np.asarray(u0, dtype=float)
