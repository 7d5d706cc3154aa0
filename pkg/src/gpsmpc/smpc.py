"""Condensed SMPC quadratic program and the receding-horizon controller around it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    INACTIVE,
    CaseThresholds,
    ConstraintCase,
    HalfPlaneConstraint,
    RiskParams,
    RoadBounds,
    base_rectangle,
    build_constraint,
    classify_case,
    tighten_rectangle,
)
from .gp import TvPredictionStats
from .qp import QpProblem, QpSolution, QpStatus, QpTolerances, solve_qp
from .vehicle import DiscreteEvModel, EvState, VehicleGeometry, ev_linearize_discretize


@dataclass(frozen=True)
class MpcWeights:
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.0, 0.25, 0.2, 10.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.33, 5.0]))
    S: np.ndarray = field(default_factory=lambda: np.diag([0.33, 15.0]))


@dataclass(frozen=True)
class InputBounds:
    u_min: np.ndarray = field(default_factory=lambda: np.array([-15.0, -0.2]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([10.0, 0.2]))
    du_min: np.ndarray = field(default_factory=lambda: np.array([-5.0, -0.1]))
    du_max: np.ndarray = field(default_factory=lambda: np.array([5.0, 0.1]))


def condense(model: DiscreteEvModel, xi0, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked predictions ``X_k = c[k] + G[k] @ U`` for k = 0..N."""
    nx, nu = model.B_d.shape
    c = np.zeros((N + 1, nx))
    G = np.zeros((N + 1, nx, nu * N))
    c[0] = np.asarray(xi0, float)
    for k in range(N):
        c[k + 1] = model.affine + model.A_d @ c[k]
        G[k + 1] = model.A_d @ G[k]
        G[k + 1][:, nu * k:nu * (k + 1)] += model.B_d
    return c, G


def build_qp(model: DiscreteEvModel, ev0, u_prev, refs, weights: MpcWeights,
             bounds: InputBounds, road: RoadBounds, collision, reg: float = 1e-8) -> QpProblem:
    """Assemble the QP in the stacked inputs ``U = [u_0; ...; u_{N-1}]``.

    The QP objective is half the tracking cost, so both share a minimizer.
    ``collision`` holds one half-plane per step k = 0..N; inactive ones add no rows.
    """
    xi0 = ev0.array() if isinstance(ev0, EvState) else np.asarray(ev0, float)
    refs = np.asarray(refs, float)
    N = len(refs)
    if N < 1:
        raise ValueError("horizon must be at least one step")
    if refs.shape != (N, 4):
        raise ValueError("refs must be an (N, 4) array of reference states")
    if len(collision) != N + 1:
        raise ValueError(f"expected {N + 1} collision constraints, got {len(collision)}")
    u_prev = np.asarray(u_prev, float)
    nu = 2
    nU = nu * N
    c, G = condense(model, xi0, N)

    H = reg * np.eye(nU)
    g = np.zeros(nU)
    for k in range(1, N + 1):
        H += G[k].T @ weights.Q @ G[k]
        g += G[k].T @ weights.Q @ (c[k] - refs[k - 1])
    H += np.kron(np.eye(N), weights.R)
    Dm = np.eye(nU) - np.eye(nU, k=-nu)   # Delta u_k = u_k - u_{k-1}
    Sbar = np.kron(np.eye(N), weights.S)
    H += Dm.T @ Sbar @ Dm
    e0 = np.zeros(nU)
    e0[:nu] = u_prev
    g -= Dm.T @ Sbar @ e0
    H = 0.5 * (H + H.T)

    rows, rhs, labels = [], [], []

    def add(a, b, label):
        rows.append(a)
        rhs.append(b)
        labels.append(label)

    I = np.eye(nU)
    for k in range(N):
        for j in range(nu):
            i = nu * k + j
            add(I[i], bounds.u_max[j], f"u_max[{k},{j}]")
            add(-I[i], -bounds.u_min[j], f"u_min[{k},{j}]")
    for k in range(N):
        for j in range(nu):
            i = nu * k + j
            add(Dm[i], bounds.du_max[j] + e0[i], f"du_max[{k},{j}]")
            add(-Dm[i], -bounds.du_min[j] - e0[i], f"du_min[{k},{j}]")
    for k in range(1, N + 1):
        add(G[k][1], road.d_max - c[k][1], f"d_max[{k}]")
        add(-G[k][1], c[k][1] - road.d_min, f"d_min[{k}]")
        add(-G[k][3], c[k][3], f"v_min[{k}]")
    for k, con in enumerate(collision):
        if not con.active:
            continue
        a = con.q_y * G[k][1] + con.q_x * G[k][0]
        add(a, -(con.q_t + con.q_y * c[k][1] + con.q_x * c[k][0]), f"collision[{k}]")

    return QpProblem(H, g, np.array(rows), np.array(rhs), tuple(labels))


def rollout(model: DiscreteEvModel, xi0, U) -> np.ndarray:
    """Planned states k = 0..N obtained by iterating the affine model."""
    U = np.asarray(U, float).reshape(-1, 2)
    xs = [np.asarray(xi0, float)]
    for u in U:
        xs.append(model.step(xs[-1], u))
    return np.array(xs)


@dataclass
class SmpcConfig:
    N: int = 10
    T: float = 0.2
    weights: MpcWeights = field(default_factory=MpcWeights)
    bounds: InputBounds = field(default_factory=InputBounds)
    road: RoadBounds = field(default_factory=RoadBounds)
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    eps_safe: float = 0.5
    t_headway: float = 1.0
    risk: RiskParams = field(default_factory=RiskParams)
    thresholds: CaseThresholds = field(default_factory=CaseThresholds)
    eps_anchor: float = 0.01
    literal_pairing: bool = False
    reg: float = 1e-8
    tolerances: QpTolerances = field(default_factory=QpTolerances)
    ref_state: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 60.0]))
    discretization: str = "euler"
    max_slope: float = np.inf
    predictive_switch: bool = False


@dataclass
class SmpcDiagnostics:
    status: QpStatus
    case: ConstraintCase
    fallback: bool
    objective: float
    kkt_residual: float
    iterations: int
    constraints: list
    rectangles: list


class SmpcController:
    """Receding-horizon controller holding ``u_prev`` and the fallback input buffer."""

    def __init__(self, config: SmpcConfig):
        self.config = config
        self.u_prev = np.zeros(2)
        self.buffer: list[np.ndarray] = []
        self.plan: np.ndarray | None = None   # states k = 0..N of the last plan
        self.case: ConstraintCase | None = None
        self.extra_rows: list[tuple[np.ndarray, float]] = []

    def anticipated_plan(self, ev0) -> np.ndarray:
        """Best guess of the EV states k = 0..N: the shifted previous plan."""
        cfg = self.config
        xi0 = ev0.array() if isinstance(ev0, EvState) else np.asarray(ev0, float)
        out = np.zeros((cfg.N + 1, 4))
        out[0] = xi0
        tail = self.plan[2:] if self.plan is not None else np.zeros((0, 4))
        for k in range(1, cfg.N + 1):
            if k - 1 < len(tail):
                out[k] = tail[k - 1]
            else:
                prev = out[k - 1]
                out[k] = prev + cfg.T * np.array([prev[3] * np.cos(prev[2]), prev[3] * np.sin(prev[2]), 0.0, 0.0])
        return out

    def references(self, ev0) -> np.ndarray:
        cfg = self.config
        xi0 = ev0.array() if isinstance(ev0, EvState) else np.asarray(ev0, float)
        ref = np.tile(np.asarray(cfg.ref_state, float), (cfg.N, 1))
        ref[:, 0] = xi0[0] + cfg.ref_state[3] * cfg.T * np.arange(1, cfg.N + 1)
        return ref

    def collision_constraints(self, ev0, tv0, stats: TvPredictionStats | None,
                              anticipated=None):
        """Case label, one half-plane per step k = 0..N and the tightened rectangles."""
        cfg = self.config
        ev = ev0 if isinstance(ev0, EvState) else EvState.from_array(ev0)
        tv_now = np.asarray(tv0.array() if hasattr(tv0, "array") else tv0, float)
        if stats is None:
            tv_means = np.tile(tv_now, (cfg.N, 1))
            tv_vars = np.zeros((cfg.N, 4))
        else:
            tv_means, tv_vars = stats.means, stats.variances
        tv_seq = np.vstack([tv_now, tv_means])
        var_seq = np.vstack([np.zeros(4), tv_vars])
        rects = [tighten_rectangle(base_rectangle(ev, tv_seq[k], cfg.geom, cfg.eps_safe, cfg.t_headway),
                                   var_seq[k], cfg.risk, cfg.literal_pairing)
                 for k in range(cfg.N + 1)]
        case = classify_case(ev, tv_now, cfg.road, rects[0], cfg.thresholds, previous=self.case,
                             predicted=rects[1:] if cfg.predictive_switch else None)
        if anticipated is None:
            anticipated = self.anticipated_plan(ev)
        cons = [INACTIVE if case is ConstraintCase.A else
                build_constraint(case, ev, tv_seq[k], rects[k], cfg.road,
                                 s_k=float(anticipated[k][0]), eps_anchor=cfg.eps_anchor,
                                 max_slope=cfg.max_slope)
                for k in range(cfg.N + 1)]
        return case, cons, rects

    def step(self, ev0, tv0, stats: TvPredictionStats | None):
        """One control cycle; returns ``(input, planned states, diagnostics)``."""
        cfg = self.config
        ev = ev0 if isinstance(ev0, EvState) else EvState.from_array(ev0)
        xi0 = ev.array()
        case, cons, rects = self.collision_constraints(ev, tv0, stats)
        self.case = case
        model = ev_linearize_discretize(xi0, cfg.geom, cfg.T, cfg.discretization)
        qp = build_qp(model, xi0, self.u_prev, self.references(xi0), cfg.weights,
                      cfg.bounds, cfg.road, cons, cfg.reg)
        if self.extra_rows:
            A = np.vstack([qp.A_ineq] + [r[0][None, :] for r in self.extra_rows])
            b = np.concatenate([qp.b_ineq, [r[1] for r in self.extra_rows]])
            qp = QpProblem(qp.H, qp.g, A, b, qp.row_labels + ("injected",) * len(self.extra_rows))
        sol: QpSolution = solve_qp(qp, cfg.tolerances)

        if sol.status is QpStatus.OPTIMAL:
            U = sol.x.reshape(cfg.N, 2)
            u = np.clip(U[0], cfg.bounds.u_min, cfg.bounds.u_max)
            self.buffer = [row.copy() for row in U[1:]]
            self.plan = rollout(model, xi0, U)
            fallback = False
        else:
            u = self.buffer.pop(0) if self.buffer else np.zeros(2)
            u = np.clip(u, cfg.bounds.u_min, cfg.bounds.u_max)
            rest = np.array([u] + self.buffer).reshape(-1, 2)
            self.plan = rollout(model, xi0, rest)
            fallback = True
        self.u_prev = u.copy()
        diag = SmpcDiagnostics(sol.status, case, fallback, sol.objective, sol.kkt_residual,
                               sol.iterations, cons, rects)
        return u, self.plan, diag


def smpc_step(controller: SmpcController, ev0, tv0, tv_stats):
    return controller.step(ev0, tv0, tv_stats)
