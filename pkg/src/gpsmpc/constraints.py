"""Safety rectangles around the TV and the linear collision constraints derived from them."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .vehicle import EvState, TvState, VehicleGeometry


@dataclass(frozen=True)
class SafetyRectangle:
    """Exclusion box for the EV reference point, centred on the TV.

    ``half_length``/``half_width`` are the semi-extents ``a_r``/``b_r``: the EV
    centre must stay at least that far from the TV centre on one axis.
    """

    center_x: float
    center_y: float
    half_length: float
    half_width: float

    @property
    def rear(self) -> float:
        return self.center_x - self.half_length

    @property
    def front(self) -> float:
        return self.center_x + self.half_length

    @property
    def top(self) -> float:
        return self.center_y + self.half_width

    @property
    def bottom(self) -> float:
        return self.center_y - self.half_width

    def contains(self, s: float, d: float) -> bool:
        return abs(s - self.center_x) < self.half_length and abs(d - self.center_y) < self.half_width


@dataclass(frozen=True)
class HalfPlaneConstraint:
    """``q_y * d + q_x * s + q_t <= 0``; inactive constraints admit everything."""

    q_y: float
    q_x: float
    q_t: float
    active: bool = True

    def value(self, s: float, d: float) -> float:
        return self.q_y * d + self.q_x * s + self.q_t

    def satisfied(self, s: float, d: float, tol: float = 0.0) -> bool:
        return (not self.active) or self.value(s, d) <= tol


INACTIVE = HalfPlaneConstraint(0.0, 0.0, 0.0, active=False)


def chi2_quantile_2dof(beta: float) -> float:
    """Quantile of the 2-dof chi-squared distribution, whose CDF is ``1 - exp(-x/2)``."""
    return -2.0 * np.log1p(-beta)


@dataclass(frozen=True)
class RiskParams:
    beta: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta out of (0,1)")

    @property
    def eta(self) -> float:
        return chi2_quantile_2dof(self.beta)


class ConstraintCase(str, enum.Enum):
    A = "A"  # far away: no constraint
    B = "B"  # EV left of TV: pass on the left
    C = "C"  # EV right of TV: pass on the right
    D = "D"  # left of TV near the road limit: switch to the right
    E = "E"  # right of TV near the road limit: switch to the left

    @property
    def left_side(self) -> bool:
        return self in (ConstraintCase.B, ConstraintCase.D)

    @property
    def right_side(self) -> bool:
        return self in (ConstraintCase.C, ConstraintCase.E)


@dataclass(frozen=True)
class RoadBounds:
    d_min: float = -6.0
    d_max: float = 6.0

    def __post_init__(self):
        if not self.d_min < self.d_max:
            raise ValueError("road bounds must satisfy d_min < d_max")


@dataclass(frozen=True)
class CaseThresholds:
    d_far_factor: float = 3.0
    margin_switch: float = 1.5


def _ev(ev) -> EvState:
    return ev if isinstance(ev, EvState) else EvState.from_array(ev)


def _tv(tv) -> TvState:
    return tv if isinstance(tv, TvState) else TvState.from_array(tv)


def headway_length(ev, tv, t_headway: float) -> float:
    ev, tv = _ev(ev), _tv(tv)
    return t_headway * max(0.0, ev.v * np.cos(ev.phi) - tv.vx)


def base_rectangle(ev, tv_pred, geom: VehicleGeometry, eps_safe: float,
                   t_headway: float = 1.0) -> SafetyRectangle:
    if eps_safe < 0:
        raise ValueError("eps_safe must be non-negative")
    tv = _tv(tv_pred)
    a_r = geom.l_veh + headway_length(ev, tv, t_headway)
    b_r = geom.w_veh + eps_safe
    return SafetyRectangle(tv.x, tv.y, a_r, b_r)


def tightening(variance_k, risk: RiskParams, literal_pairing: bool = False) -> tuple[float, float]:
    """Return ``(length_growth, width_growth)`` for one prediction step.

    By default the lateral TV variance widens the box and the longitudinal
    variance lengthens it. ``literal_pairing`` swaps the two.
    """
    var = np.maximum(np.asarray(variance_k, float), 0.0)
    root_eta = np.sqrt(risk.eta)
    e_lon = np.sqrt(var[0]) * root_eta
    e_lat = np.sqrt(var[2]) * root_eta
    if literal_pairing:
        e_lon, e_lat = e_lat, e_lon
    return float(e_lon), float(e_lat)


def tighten_rectangle(rect: SafetyRectangle, variance_k, risk: RiskParams,
                      literal_pairing: bool = False) -> SafetyRectangle:
    if np.any(np.asarray(variance_k) < 0):
        raise ValueError("variances must be non-negative")
    e_lon, e_lat = tightening(variance_k, risk, literal_pairing)
    return SafetyRectangle(rect.center_x, rect.center_y,
                           rect.half_length + e_lon, rect.half_width + e_lat)


def classify_case(ev, tv_pred, road: RoadBounds, rect: SafetyRectangle,
                  thresholds: CaseThresholds = CaseThresholds(),
                  previous: ConstraintCase | None = None,
                  predicted=None) -> ConstraintCase:
    """Pick the constraint case for the current configuration.

    ``previous`` adds hysteresis to the side switch: once D (or E) was chosen
    it is kept until the EV has crossed to the other side of the TV.
    ``predicted`` (tightened rectangles over the horizon) also triggers the
    switch when the predicted box leaves less than ``margin_switch`` of road
    on the EV's side.
    """
    ev, tv = _ev(ev), _tv(tv_pred)
    gap = tv.x - ev.s
    if gap > thresholds.d_far_factor * rect.half_length or ev.s > rect.front:
        return ConstraintCase.A
    predicted = list(predicted or ())
    if ev.d >= tv.y:
        blocked = any(r.top >= road.d_max - thresholds.margin_switch for r in predicted)
        if previous is ConstraintCase.D or blocked or road.d_max - ev.d <= thresholds.margin_switch:
            return ConstraintCase.D
        return ConstraintCase.B
    blocked = any(r.bottom <= road.d_min + thresholds.margin_switch for r in predicted)
    if previous is ConstraintCase.E or blocked or ev.d - road.d_min <= thresholds.margin_switch:
        return ConstraintCase.E
    return ConstraintCase.C


def build_constraint(case: ConstraintCase, ev0, tv_pred_k, rect_k: SafetyRectangle,
                     road: RoadBounds | None = None, s_k: float | None = None,
                     eps_anchor: float = 0.01, max_slope: float = np.inf) -> HalfPlaneConstraint:
    """Linear half-plane separating the EV from ``rect_k`` on the chosen side.

    The line runs from the current EV position to the near rear corner of the
    rectangle. It becomes horizontal at the rectangle edge when the EV (or its
    anticipated position ``s_k`` at this step) is already level with or past
    the rear edge, or when the EV is already beyond the edge laterally. When
    the EV is alongside the box and on the wrong side of the edge, the line is
    shifted to pass ``eps_anchor`` beyond the EV so the current state stays
    admissible. ``max_slope`` limits the incline to what the EV can follow in
    one step; the horizontal caps at later steps still enforce the separation.
    """
    case = ConstraintCase(case)
    if case is ConstraintCase.A:
        return INACTIVE
    ev = _ev(ev0)
    above = case in (ConstraintCase.B, ConstraintCase.E)
    edge = rect_k.top if above else rect_k.bottom
    corner_s = rect_k.rear
    s_probe = ev.s if s_k is None else max(ev.s, s_k)

    horizontal = ev.s >= corner_s or s_probe >= corner_s
    slope = 0.0
    if not horizontal:
        slope = (edge - ev.d) / (corner_s - ev.s)
        # an inclined line pointing away from the box is capped at the edge level
        if (above and slope <= 0.0) or (not above and slope >= 0.0):
            horizontal = True
        slope = float(np.clip(slope, -max_slope, max_slope))

    if horizontal:
        q_y, q_x, q_t = (-1.0, 0.0, edge) if above else (1.0, 0.0, -edge)
    elif above:
        q_y, q_x, q_t = -1.0, slope, ev.d - slope * ev.s
    else:
        q_y, q_x, q_t = 1.0, -slope, -(ev.d - slope * ev.s)

    # only a line the EV cannot steer around before reaching the box is re-anchored;
    # caps ahead of a trailing EV are targets for the planned motion
    violation = q_y * ev.d + q_x * ev.s + q_t
    if violation > 0.0 and ev.s >= corner_s:
        q_t -= violation + eps_anchor
    return HalfPlaneConstraint(float(q_y), float(q_x), float(q_t), True)
