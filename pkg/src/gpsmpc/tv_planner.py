"""Blocking opponent: saturated linear feedback on a double integrator.

While the EV is behind, the TV steers toward the EV's lateral position. It may
commit to one lateral direction only; moves the other way are replaced by
holding its current lane position.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .vehicle import EvState, TvState, tv_model_matrices

K_TV_DEFAULT = ((0.0, -0.55, 0.0, 0.0), (0.0, 0.0, -0.63, -1.15))


class Direction(str, enum.Enum):
    NONE = "none"
    LEFT = "left"      # towards positive lateral position
    RIGHT = "right"
    STRAIGHT = "straight"


@dataclass
class TvPolicyState:
    v_ref: float
    K: np.ndarray = field(default_factory=lambda: np.array(K_TV_DEFAULT))
    u_min: np.ndarray = field(default_factory=lambda: np.array([-15.0, -0.4]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([10.0, 0.4]))
    commit_threshold: float = 0.5
    committed_direction: Direction = Direction.NONE

    @property
    def committed(self) -> bool:
        return self.committed_direction is not Direction.NONE

    def commit(self, direction: Direction):
        if self.committed and direction is not self.committed_direction:
            raise RuntimeError("the TV may choose its maneuver only once")
        self.committed_direction = direction


def _ev(ev) -> EvState:
    return ev if isinstance(ev, EvState) else EvState.from_array(ev)


def _tv(tv) -> TvState:
    return tv if isinstance(tv, TvState) else TvState.from_array(tv)


def tv_reference(ev, tv, policy: TvPolicyState) -> TvState:
    """Reference state for this step; may fix the policy's committed direction."""
    ev, tv = _ev(ev), _tv(tv)
    if ev.s >= tv.x:
        return TvState(tv.x, policy.v_ref, tv.y, 0.0)

    target = ev.d
    move = target - tv.y
    if not policy.committed:
        if abs(move) > policy.commit_threshold:
            policy.commit(Direction.LEFT if move > 0 else Direction.RIGHT)
    elif policy.committed_direction is Direction.LEFT and move < 0:
        target = tv.y
    elif policy.committed_direction is Direction.RIGHT and move > 0:
        target = tv.y
    elif policy.committed_direction is Direction.STRAIGHT:
        target = tv.y
    return TvState(tv.x, policy.v_ref, target, 0.0)


def tv_feedback(tv, ref, K, u_min, u_max) -> np.ndarray:
    err = _tv(tv).array() - _tv(ref).array()
    return np.clip(np.asarray(K) @ err, u_min, u_max)


def tv_step(tv, ref, K, u_min, u_max, T: float) -> tuple[TvState, np.ndarray]:
    """Advance the TV one sampling interval; returns the new state and applied input."""
    if T <= 0:
        raise ValueError("T must be positive")
    A, B = tv_model_matrices(T)
    u = tv_feedback(tv, ref, K, u_min, u_max)
    return TvState.from_array(A @ _tv(tv).array() + B @ u), u
