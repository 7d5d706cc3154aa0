"""Ego-vehicle kinematic bicycle model and the target-vehicle double integrator.

EV states use the ordering ``[s, d, phi, v]`` (road frame), inputs ``[a, delta]``.
TV states use ``[x, vx, y, vy]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm


@dataclass(frozen=True)
class EvState:
    s: float
    d: float
    phi: float
    v: float

    def array(self) -> np.ndarray:
        return np.array([self.s, self.d, self.phi, self.v], dtype=float)

    @classmethod
    def from_array(cls, xi) -> "EvState":
        return cls(*(float(c) for c in xi))


@dataclass(frozen=True)
class EvInput:
    a: float
    delta: float

    def array(self) -> np.ndarray:
        return np.array([self.a, self.delta], dtype=float)

    @classmethod
    def from_array(cls, u) -> "EvInput":
        return cls(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class TvState:
    x: float
    vx: float
    y: float
    vy: float

    def array(self) -> np.ndarray:
        return np.array([self.x, self.vx, self.y, self.vy], dtype=float)

    @classmethod
    def from_array(cls, xi) -> "TvState":
        return cls(*(float(c) for c in xi))


@dataclass(frozen=True)
class VehicleGeometry:
    l_f: float = 2.0
    l_r: float = 2.0
    l_veh: float = 5.0
    w_veh: float = 2.0

    def __post_init__(self):
        if min(self.l_f, self.l_r, self.l_veh, self.w_veh) <= 0:
            raise ValueError("vehicle geometry entries must be strictly positive")
        if self.l_f + self.l_r > self.l_veh:
            raise ValueError("l_f + l_r must not exceed l_veh")


@dataclass(frozen=True)
class DiscreteEvModel:
    """Affine prediction model ``xi_next = affine + A_d @ xi + B_d @ u``."""

    A_d: np.ndarray
    B_d: np.ndarray
    affine: np.ndarray
    T: float

    def step(self, xi, u) -> np.ndarray:
        return self.affine + self.A_d @ np.asarray(xi, float) + self.B_d @ np.asarray(u, float)


def _as_ev(state) -> np.ndarray:
    return state.array() if isinstance(state, EvState) else np.asarray(state, dtype=float)


def _as_input(u) -> np.ndarray:
    return u.array() if isinstance(u, EvInput) else np.asarray(u, dtype=float)


def slip_angle(delta: float, geom: VehicleGeometry) -> float:
    return float(np.arctan(geom.l_r / (geom.l_r + geom.l_f) * np.tan(delta)))


def ev_dynamics_continuous(state, u, geom: VehicleGeometry) -> np.ndarray:
    """Time derivative of the kinematic bicycle model."""
    _, _, phi, v = _as_ev(state)
    a, delta = _as_input(u)
    alpha = slip_angle(delta, geom)
    return np.array([
        v * np.cos(phi + alpha),
        v * np.sin(phi + alpha),
        v / geom.l_r * np.sin(alpha),
        a,
    ])


def ev_integrate(state, u, geom: VehicleGeometry, dt: float) -> EvState:
    """One classical RK4 step with a zero-order hold on ``u``; speed is clamped at 0."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi = _as_ev(state)
    uu = _as_input(u)
    f = ev_dynamics_continuous
    k1 = f(xi, uu, geom)
    k2 = f(xi + 0.5 * dt * k1, uu, geom)
    k3 = f(xi + 0.5 * dt * k2, uu, geom)
    k4 = f(xi + dt * k3, uu, geom)
    nxt = xi + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    nxt[3] = max(nxt[3], 0.0)
    return EvState.from_array(nxt)


def ev_jacobians(state, u, geom: VehicleGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians ``(df/dxi, df/du)`` of the bicycle model."""
    _, _, phi, v = _as_ev(state)
    _, delta = _as_input(u)
    ratio = geom.l_r / (geom.l_r + geom.l_f)
    tan_d = np.tan(delta)
    alpha = np.arctan(ratio * tan_d)
    dalpha = ratio * (1.0 + tan_d**2) / (1.0 + (ratio * tan_d) ** 2)
    c, s = np.cos(phi + alpha), np.sin(phi + alpha)

    A = np.zeros((4, 4))
    A[0, 2], A[0, 3] = -v * s, c
    A[1, 2], A[1, 3] = v * c, s
    A[2, 3] = np.sin(alpha) / geom.l_r

    B = np.zeros((4, 2))
    B[0, 1] = -v * s * dalpha
    B[1, 1] = v * c * dalpha
    B[2, 1] = v / geom.l_r * np.cos(alpha) * dalpha
    B[3, 0] = 1.0
    return A, B


def ev_linearize_discretize(state0, geom: VehicleGeometry, T: float,
                            scheme: str = "euler") -> DiscreteEvModel:
    """Linearize at ``(xi0, u=0)`` and discretize.

    ``scheme="euler"`` gives ``A_d = I + T A_c``, ``B_d = T B_c``; ``"zoh"`` uses
    the exact zero-order-hold matrices of the linearization, which capture the
    heading build-up within a step. Either way the model reproduces
    ``xi0 + T f(xi0, 0)`` exactly when propagated from ``xi0`` with zero input.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    xi0 = _as_ev(state0)
    u0 = np.zeros(2)
    A_c, B_c = ev_jacobians(xi0, u0, geom)
    if scheme == "euler":
        A_d = np.eye(4) + T * A_c
        B_d = T * B_c
    elif scheme == "zoh":
        M = np.zeros((6, 6))
        M[:4, :4] = A_c * T
        M[:4, 4:] = B_c * T
        E = expm(M)
        A_d, B_d = E[:4, :4], E[:4, 4:]
    else:
        raise ValueError(f"unknown discretization scheme '{scheme}'")
    affine = xi0 + T * ev_dynamics_continuous(xi0, u0, geom) - A_d @ xi0
    return DiscreteEvModel(A_d=A_d, B_d=B_d, affine=affine, T=float(T))


def tv_model_matrices(T: float) -> tuple[np.ndarray, np.ndarray]:
    """Double-integrator matrices for the TV in ``[x, vx, y, vy]`` ordering."""
    if T < 0:
        raise ValueError("T must be non-negative")
    A = np.array([
        [1.0, T, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, T],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B = np.array([
        [0.5 * T**2, 0.0],
        [T, 0.0],
        [0.0, 0.5 * T**2],
        [0.0, T],
    ])
    return A, B
