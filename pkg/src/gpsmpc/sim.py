"""Closed-loop EV/TV simulation on a straight road."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .constraints import ConstraintCase
from .gp import (
    GpDataset,
    GpNumericalError,
    constant_velocity_prediction,
    gp_fit,
    gp_observe,
    grid_search_lengthscales,
    sample_tv_trajectories,
)
from .smpc import SmpcController
from .tv_planner import TvPolicyState, tv_reference, tv_step
from .vehicle import EvInput, EvState, TvState, VehicleGeometry, ev_integrate

log = logging.getLogger(__name__)


@dataclass
class StepRecord:
    step: int
    time: float
    ev: EvState
    u: EvInput
    tv: TvState
    status: str
    case: str
    gp_size: int
    tv_commit: str
    gap: float
    pred_means: np.ndarray     # (N, 4)
    pred_vars: np.ndarray      # (N, 4)
    plan: np.ndarray           # (N + 1, 4)


@dataclass
class RunResult:
    seed: int
    records: list = field(default_factory=list)
    overtake_success: bool = False
    overtake_step: int | None = None
    min_gap: float = np.inf
    collision: bool = False
    infeasible_cycles: int = 0
    error: str | None = None
    final_ev: EvState | None = None
    final_tv: TvState | None = None

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "overtake_success": self.overtake_success,
            "overtake_step": self.overtake_step,
            "min_gap": self.min_gap,
            "collision": self.collision,
            "infeasible_cycles": self.infeasible_cycles,
            "steps": len(self.records),
            "side_switch": side_switched(self.records),
            "error": self.error,
        }


def vehicle_box(s: float, d: float, phi: float, geom: VehicleGeometry) -> tuple[float, float, float, float]:
    """Axis-aligned bounds ``(s_lo, s_hi, d_lo, d_hi)`` of a rotated vehicle footprint."""
    hl, hw = geom.l_veh / 2.0, geom.w_veh / 2.0
    c, sn = abs(np.cos(phi)), abs(np.sin(phi))
    ext_s = hl * c + hw * sn
    ext_d = hl * sn + hw * c
    return s - ext_s, s + ext_s, d - ext_d, d + ext_d


def box_gap(ev: EvState, tv: TvState, geom: VehicleGeometry) -> float:
    """Euclidean clearance between the vehicle boxes; 0 when they touch or overlap."""
    e = vehicle_box(ev.s, ev.d, ev.phi, geom)
    t = vehicle_box(tv.x, tv.y, 0.0, geom)
    gs = max(t[0] - e[1], e[0] - t[1], 0.0)
    gd = max(t[2] - e[3], e[2] - t[3], 0.0)
    return float(np.hypot(gs, gd))


def collision_check(ev: EvState, tv: TvState, geom: VehicleGeometry) -> bool:
    """Closed-box overlap test: touching boxes count as a collision."""
    e = vehicle_box(ev.s, ev.d, ev.phi, geom)
    t = vehicle_box(tv.x, tv.y, 0.0, geom)
    return e[0] <= t[1] and t[0] <= e[1] and e[2] <= t[3] and t[2] <= e[3]


def overtake_detect(ev_s, tv_x, l_veh: float, settle_steps: int) -> int | None:
    """First step at which the EV leads by more than ``l_veh`` for ``settle_steps`` steps."""
    ahead = np.asarray(ev_s, float) - np.asarray(tv_x, float) > l_veh
    run = 0
    for i, flag in enumerate(ahead):
        run = run + 1 if flag else 0
        if run >= settle_steps:
            return i - settle_steps + 1
    return None


def side_switched(records) -> bool:
    """Whether the active case moved between the left {B, D} and right {C, E} groups before the pass."""
    side = None
    for rec in records:
        case = ConstraintCase(rec.case)
        if case is ConstraintCase.A:
            continue
        here = "left" if case.left_side else "right"
        if side is not None and here != side:
            return True
        side = here
    return False


def cycle_seed(seed: int, step: int) -> int:
    return (int(seed) * 100_000 + int(step)) * 1_000


def load_dataset_csv(path, capacity: int) -> GpDataset:
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 columns (8 inputs, 4 outputs)")
    return GpDataset(data[:, :8], data[:, 8:], capacity)


def run_scenario(config: ScenarioConfig, seed: int) -> RunResult:
    """Simulate one closed-loop run; deterministic in ``(config, seed)``."""
    sim, gp_cfg, tv_cfg = config["sim"], config["gp"], config["tv"]
    T, N = config.T, config.N
    geom = config.geometry()
    ctrl = SmpcController(config.smpc_config())
    policy = TvPolicyState(
        v_ref=tv_cfg["initial"][1],
        K=np.array(tv_cfg["K"]),
        u_min=np.array(tv_cfg["u_min"]),
        u_max=np.array(tv_cfg["u_max"]),
        commit_threshold=tv_cfg["commit_threshold"],
    )
    params = config.kernel_params()
    if gp_cfg["initial_dataset"]:
        dataset = load_dataset_csv(gp_cfg["initial_dataset"], gp_cfg["capacity"])
        if gp_cfg["grid_search"] and len(dataset) > 1:
            params = grid_search_lengthscales(dataset, params)
    else:
        dataset = GpDataset(capacity=gp_cfg["capacity"])
    model = gp_fit(dataset, params) if len(dataset) else None

    ev = EvState.from_array(config["ev"]["initial"])
    tv = TvState.from_array(tv_cfg["initial"])
    result = RunResult(seed=seed)
    ev_s, tv_x = [], []

    for step in range(sim["max_steps"]):
        plan_guess = ctrl.anticipated_plan(ev)
        try:
            if model is not None and model.n >= sim["n_warmup"]:
                stats = sample_tv_trajectories(model, plan_guess[:N], tv, gp_cfg["M"], N,
                                               cycle_seed(seed, step))
            else:
                stats = constant_velocity_prediction(tv, N, T, sim["warmup_variance"])
        except GpNumericalError as exc:
            result.error = f"step {step}: {exc}"
            log.warning("seed %d: %s", seed, result.error)
            break

        u, plan, diag = ctrl.step(ev, tv, stats)
        if diag.fallback:
            result.infeasible_cycles += 1
        gap = box_gap(ev, tv, geom)
        result.records.append(StepRecord(
            step=step, time=step * T, ev=ev, u=EvInput.from_array(u), tv=tv,
            status=diag.status.value, case=diag.case.value,
            gp_size=0 if model is None else model.n,
            tv_commit=policy.committed_direction.value, gap=gap,
            pred_means=stats.means, pred_vars=stats.variances, plan=plan,
        ))
        result.min_gap = min(result.min_gap, gap)
        if collision_check(ev, tv, geom):
            result.collision = True
            break

        ev_next = ev_integrate(ev, u, geom, T)
        ref = tv_reference(ev, tv, policy)
        tv_next, _ = tv_step(tv, ref, policy.K, policy.u_min, policy.u_max, T)
        try:
            if model is None:
                dataset = dataset.append(np.concatenate([ev.array(), tv.array()]), tv_next.array() - tv.array())
                model = gp_fit(dataset, params)
            else:
                model = gp_observe(model, ev, tv, tv_next)
        except GpNumericalError as exc:
            result.error = f"step {step}: {exc}"
            break
        ev, tv = ev_next, tv_next

        ev_s.append(ev.s)
        tv_x.append(tv.x)
        hit = overtake_detect(ev_s, tv_x, geom.l_veh, sim["settle_steps"])
        if hit is not None:
            result.overtake_step = hit + 1   # ev_s[i] is the state entering step i + 1
            break

    result.final_ev, result.final_tv = ev, tv
    if not result.collision:
        gap = box_gap(ev, tv, geom)
        result.min_gap = min(result.min_gap, gap)
        result.collision = collision_check(ev, tv, geom)
    result.overtake_success = result.overtake_step is not None and not result.collision
    return result
