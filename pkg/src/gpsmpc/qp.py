"""Dense convex QP solver for ``min 1/2 x'Hx + g'x  s.t.  A x <= b``.

Operator splitting (ADMM) in the form used by OSQP, with adaptive step size,
primal infeasibility detection and a final active-set polish that solves the
equality-constrained KKT system on the identified active rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    row_labels: tuple = ()

    def __post_init__(self):
        H = np.asarray(self.H, float)
        g = np.asarray(self.g, float).ravel()
        n = len(g)
        A = np.asarray(self.A_ineq, float).reshape(-1, n)
        b = np.asarray(self.b_ineq, float).ravel()
        if H.shape != (n, n):
            raise ValueError(f"H has shape {H.shape}, expected {(n, n)}")
        if len(A) != len(b):
            raise ValueError("A_ineq and b_ineq row counts differ")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "A_ineq", A)
        object.__setattr__(self, "b_ineq", b)

    @property
    def n(self) -> int:
        return len(self.g)

    def objective(self, x) -> float:
        x = np.asarray(x, float)
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass(frozen=True)
class QpTolerances:
    kkt: float = 1e-6
    feas: float = 1e-6
    max_iter: int = 4000


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    kkt_residual: float
    primal_residual: float
    iterations: int
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residuals(qp: QpProblem, x, lam) -> tuple[float, float]:
    """Return ``(kkt_residual, primal_residual)`` for a candidate primal/dual pair.

    The KKT residual is the worst of stationarity, dual feasibility and
    complementary slackness, all in infinity norm.
    """
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    slack = qp.b_ineq - qp.A_ineq @ x
    primal = float(np.max(-slack, initial=0.0))
    stat = qp.H @ x + qp.g + qp.A_ineq.T @ lam
    kkt = max(float(np.max(np.abs(stat), initial=0.0)),
              float(np.max(-lam, initial=0.0)),
              float(np.max(np.abs(lam * slack), initial=0.0)))
    return kkt, primal


def _polish(qp: QpProblem, active: np.ndarray):
    H, g, A, b = qp.H, qp.g, qp.A_ineq, qp.b_ineq
    Aa = A[active]
    n, m = qp.n, len(Aa)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    rhs = np.concatenate([-g, b[active]])
    try:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        for _ in range(3):  # iterative refinement
            sol = sol + np.linalg.lstsq(K, rhs - K @ sol, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    lam = np.zeros(len(b))
    lam[active] = sol[n:]
    return sol[:n], lam


def solve_qp(qp: QpProblem, tol: QpTolerances = QpTolerances(), rho: float = 0.1,
             sigma: float = 1e-6, relax: float = 1.6, x0=None) -> QpSolution:
    H, g, A, b = qp.H, qp.g, qp.A_ineq, qp.b_ineq
    n = qp.n

    # rows without decision dependence are either vacuous or a certificate of infeasibility
    row_norm = np.abs(A).max(axis=1) if len(A) else np.zeros(0)
    const = row_norm == 0.0
    if np.any(b[const] < -tol.feas):
        x = np.zeros(n)
        return QpSolution(x, qp.objective(x), QpStatus.INFEASIBLE, np.inf,
                          float(-b[const].min()), 0, np.zeros(len(b)))
    keep = ~const
    m = int(keep.sum())

    # Jacobi scaling of the variables, then unit-norm rows
    dv = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-12 * max(np.max(np.abs(np.diag(H))), 1e-12)))
    H_orig, g_orig = H, g
    H = dv[:, None] * H_orig * dv[None, :]
    g = dv * g_orig
    Ak = A[keep] * dv[None, :]
    bk = b[keep]
    scale = 1.0 / np.abs(Ak).max(axis=1) if m else np.zeros(0)
    As, bs = Ak * scale[:, None], bk * scale

    x = np.zeros(n) if x0 is None else np.asarray(x0, float) / dv
    z = np.minimum(As @ x, bs)
    y = np.zeros(m)
    AtA = As.T @ As

    def factor(r):
        return cho_factor(H + sigma * np.eye(n) + r * AtA)

    F = factor(rho)
    status = QpStatus.MAX_ITER
    best = None
    it = 0
    eps_abs, eps_rel = 0.1 * tol.kkt, 1e-9
    for it in range(1, tol.max_iter + 1):
        x_t = cho_solve(F, sigma * x - g + As.T @ (rho * z - y))
        z_t = As @ x_t
        x = relax * x_t + (1 - relax) * x
        z_rel = relax * z_t + (1 - relax) * z
        z_new = np.minimum(z_rel + y / rho, bs)
        dy = rho * (z_rel - z_new)
        y = y + dy
        z = z_new

        if it % 10 and it != tol.max_iter:
            continue
        Ax = As @ x
        r_prim = float(np.max(np.abs(Ax - z), initial=0.0))
        Hx, Aty = H @ x, As.T @ y
        r_dual = float(np.max(np.abs(Hx + g + Aty), initial=0.0))
        prim_scale = max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0))
        dual_scale = max(np.max(np.abs(Hx)), np.max(np.abs(Aty), initial=0.0), np.max(np.abs(g)))

        dy_norm = float(np.max(np.abs(dy), initial=0.0))
        if m and dy_norm > 1e-12:
            dyp = np.maximum(dy, 0.0)
            if (np.max(np.abs(As.T @ dy)) <= 1e-6 * dy_norm
                    and np.max(-dy) <= 1e-6 * dy_norm
                    and bs @ dyp < -1e-6 * dy_norm):
                status = QpStatus.INFEASIBLE
                break

        near = r_prim <= 1e-3 * (1 + prim_scale) and r_dual <= 1e-3 * (1 + dual_scale)
        if near:
            lam_full = np.zeros(len(b))
            lam_full[keep] = y * scale
            active = np.zeros(len(b), bool)
            active[keep] = (y > 1e-9) | (bs - Ax <= 1e-7)
            cand = _polish(qp, active)
            if cand is not None:
                xp, lp = cand
                res = kkt_residuals(qp, xp, lp)
                if res[0] <= tol.kkt and res[1] <= tol.feas:
                    best = (xp, lp, res)
                    status = QpStatus.OPTIMAL
                    break
            res = kkt_residuals(qp, dv * x, lam_full)
            if res[0] <= tol.kkt and res[1] <= tol.feas:
                best = (dv * x, lam_full, res)
                status = QpStatus.OPTIMAL
                break

        if r_prim <= eps_abs + eps_rel * prim_scale and r_dual <= eps_abs + eps_rel * dual_scale:
            continue
        if it % 50 == 0 and r_prim > 0 and r_dual > 0:
            ratio = np.sqrt((r_prim / (prim_scale + 1e-12)) / (r_dual / (dual_scale + 1e-12)))
            new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
            if new_rho > 5 * rho or new_rho < rho / 5:
                rho = new_rho
                F = factor(rho)

    if best is not None:
        xo, lo, (kkt, prim) = best
        return QpSolution(xo, qp.objective(xo), status, kkt, prim, it, lo)
    lam_full = np.zeros(len(b))
    lam_full[keep] = y * scale
    x = dv * x
    kkt, prim = kkt_residuals(qp, x, lam_full)
    return QpSolution(x, qp.objective(x), status, kkt, prim, it, lam_full)
