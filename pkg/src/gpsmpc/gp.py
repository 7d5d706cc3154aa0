"""Squared-exponential GP regression of TV state increments.

Each of the four TV state increments is an independent zero-mean GP over the
8-dimensional joint input ``(ev_state, tv_state)``. Models are immutable;
``gp_observe`` returns a new model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

log = logging.getLogger(__name__)

INPUT_DIM = 8
OUTPUT_DIM = 4
JITTER_MAX = 1e-2


class GpNumericalError(RuntimeError):
    """Raised when the Gram matrix stays indefinite after jitter escalation."""


@dataclass(frozen=True)
class KernelParams:
    sigma2: float = 1.0
    lengthscales: tuple = (10.0,) * INPUT_DIM
    noise2: float = 1e-6

    def __post_init__(self):
        ls = tuple(float(v) for v in np.broadcast_to(self.lengthscales, (INPUT_DIM,)))
        object.__setattr__(self, "lengthscales", ls)
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if min(ls) <= 0:
            raise ValueError("lengthscales must be positive")
        if self.noise2 < 0:
            raise ValueError("noise2 must be non-negative")

    def scaled(self, factor: float) -> "KernelParams":
        return KernelParams(self.sigma2, tuple(l * factor for l in self.lengthscales), self.noise2)


def kernel_matrix(X, Y, params: KernelParams) -> np.ndarray:
    """Cross-covariance ``k(X_i, Y_j)`` for row-stacked inputs."""
    inv_l = 1.0 / np.asarray(params.lengthscales)
    A = np.atleast_2d(X) * inv_l
    B = np.atleast_2d(Y) * inv_l
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return params.sigma2 * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel_eval(x, xp, params: KernelParams) -> float:
    diff = (np.asarray(x, float) - np.asarray(xp, float)) / np.asarray(params.lengthscales)
    return float(params.sigma2 * np.exp(-0.5 * diff @ diff))


@dataclass(frozen=True)
class GpDataset:
    inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, INPUT_DIM)))
    outputs: np.ndarray = field(default_factory=lambda: np.zeros((0, OUTPUT_DIM)))
    capacity: int = 300

    def __post_init__(self):
        X = np.asarray(self.inputs, float).reshape(-1, INPUT_DIM)
        Y = np.asarray(self.outputs, float).reshape(-1, OUTPUT_DIM)
        if len(X) != len(Y):
            raise ValueError("inputs and outputs must have equal length")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", Y)

    def __len__(self):
        return len(self.inputs)

    def append(self, x, y) -> "GpDataset":
        X = np.vstack([self.inputs, np.asarray(x, float).reshape(1, INPUT_DIM)])
        Y = np.vstack([self.outputs, np.asarray(y, float).reshape(1, OUTPUT_DIM)])
        return GpDataset(X[-self.capacity:], Y[-self.capacity:], self.capacity)


def _factor(K: np.ndarray, noise2: float, sigma2: float) -> tuple[np.ndarray, float]:
    n = len(K)
    jitter = noise2
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            # a numerically zero pivot means K was singular; treat like a failure
            if np.min(np.diag(L)) ** 2 > 1e-13 * sigma2:
                if jitter != noise2:
                    log.debug("GP fit needed jitter %.1e (requested %.1e)", jitter, noise2)
                return L, jitter
        except np.linalg.LinAlgError:
            pass
        if jitter >= JITTER_MAX:
            raise GpNumericalError("Gram matrix not positive definite after jitter escalation")
        jitter = min(max(jitter * 10.0, 1e-10), JITTER_MAX)


@dataclass(frozen=True)
class GpModel:
    params: tuple
    dataset: GpDataset
    chol: tuple          # per output dim, lower factor of K + noise2 I
    alpha: tuple         # per output dim, (K + noise2 I)^-1 gamma_d
    noise2: tuple        # effective noise per dim after any jitter escalation

    @property
    def n(self) -> int:
        return len(self.dataset)

    def posterior(self, x) -> tuple[np.ndarray, np.ndarray]:
        return gp_posterior(self, x)


def _normalize_params(params) -> tuple:
    if isinstance(params, KernelParams):
        return (params,) * OUTPUT_DIM
    params = tuple(params)
    if len(params) != OUTPUT_DIM:
        raise ValueError(f"expected {OUTPUT_DIM} kernel parameter sets")
    return params


def gp_fit(dataset: GpDataset, params) -> GpModel:
    """Factorize the per-dimension Gram matrices of ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("cannot fit a GP to an empty dataset")
    params = _normalize_params(params)
    X, Y = dataset.inputs, dataset.outputs
    chols, alphas, noises = [], [], []
    for d, p in enumerate(params):
        L, jitter = _factor(kernel_matrix(X, X, p), p.noise2, p.sigma2)
        chols.append(L)
        alphas.append(cho_solve((L, True), Y[:, d]))
        noises.append(jitter)
    return GpModel(params, dataset, tuple(chols), tuple(alphas), tuple(noises))


def gp_posterior(model: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance of each increment dimension at ``x``."""
    if not isinstance(model, GpModel):
        raise TypeError("gp_posterior needs a fitted GpModel")
    x = np.asarray(x, float).reshape(1, INPUT_DIM)
    mean = np.empty(OUTPUT_DIM)
    var = np.empty(OUTPUT_DIM)
    for d, p in enumerate(model.params):
        k = kernel_matrix(model.dataset.inputs, x, p)[:, 0]
        v = solve_triangular(model.chol[d], k, lower=True)
        mean[d] = k @ model.alpha[d]
        var[d] = max(p.sigma2 - v @ v, 0.0)
    return mean, var


def gp_observe(model: GpModel, ev, tv, tv_next) -> GpModel:
    """Condition on one realized TV transition.

    Grows the Cholesky factors by one row; when the dataset is at capacity the
    oldest point is evicted and the model is refitted from scratch.
    """
    ev = np.asarray(ev.array() if hasattr(ev, "array") else ev, float)
    tv = np.asarray(tv.array() if hasattr(tv, "array") else tv, float)
    tv_next = np.asarray(tv_next.array() if hasattr(tv_next, "array") else tv_next, float)
    x = np.concatenate([ev, tv])
    y = tv_next - tv
    ds = model.dataset
    new_ds = ds.append(x, y)
    if len(new_ds) <= len(ds):
        return gp_fit(new_ds, model.params)

    chols, alphas = [], []
    for d, p in enumerate(model.params):
        L = model.chol[d]
        k = kernel_matrix(ds.inputs, x[None, :], p)[:, 0]
        c = solve_triangular(L, k, lower=True)
        pivot2 = p.sigma2 + model.noise2[d] - c @ c
        if pivot2 <= 1e-13 * p.sigma2:
            return gp_fit(new_ds, model.params)
        n = len(L)
        L_new = np.zeros((n + 1, n + 1))
        L_new[:n, :n] = L
        L_new[n, :n] = c
        L_new[n, n] = np.sqrt(pivot2)
        chols.append(L_new)
        alphas.append(cho_solve((L_new, True), new_ds.outputs[:, d]))
    return GpModel(model.params, new_ds, tuple(chols), tuple(alphas), model.noise2)


def log_marginal_likelihood(model: GpModel) -> float:
    total = 0.0
    n = model.n
    for d in range(OUTPUT_DIM):
        y = model.dataset.outputs[:, d]
        total += -0.5 * y @ model.alpha[d] - np.log(np.diag(model.chol[d])).sum() - 0.5 * n * np.log(2 * np.pi)
    return float(total)


def grid_search_lengthscales(dataset: GpDataset, params, scales=(0.25, 0.5, 1.0, 2.0, 4.0)):
    """Pick a common lengthscale multiplier per output dim by marginal likelihood."""
    params = _normalize_params(params)
    best = []
    for d, p in enumerate(params):
        scored = []
        for s in scales:
            cand = p.scaled(s)
            m = gp_fit(dataset, (cand,) * OUTPUT_DIM)
            y = dataset.outputs[:, d]
            lml = -0.5 * y @ m.alpha[d] - np.log(np.diag(m.chol[d])).sum()
            scored.append((lml, s, cand))
        best.append(max(scored, key=lambda t: (t[0], -t[1]))[2])
    return tuple(best)


@dataclass(frozen=True)
class TvPredictionStats:
    means: np.ndarray        # (N, 4), steps k = 1..N
    variances: np.ndarray    # (N, 4), unbiased sample variances
    samples: np.ndarray | None = None   # (M, N, 4) when retained


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index``; independent of batch layout."""
    return np.random.Generator(np.random.Philox(key=int(seed) + int(index)))


def sample_tv_trajectories(model: GpModel, ev_plan, tv0, M: int, N_horizon: int,
                           rng_seed: int, keep_samples: bool = False) -> TvPredictionStats:
    """Draw ``M`` TV rollouts by sequential GP sampling and summarize them.

    Every trajectory conditions its own copy of the GP on the increments it
    has sampled so far. The copies share the base factor and store only the
    appended rows, so all trajectories advance together in vectorized form.
    """
    if M < 2:
        raise ValueError("need at least two sample trajectories")
    if N_horizon < 1:
        raise ValueError("horizon must be at least one step")
    ev_plan = np.asarray(ev_plan, float).reshape(-1, 4)
    if len(ev_plan) < N_horizon:
        raise ValueError("ev_plan shorter than the horizon")
    tv0 = np.asarray(tv0.array() if hasattr(tv0, "array") else tv0, float)

    z = np.stack([trajectory_rng(rng_seed, m).standard_normal((N_horizon, OUTPUT_DIM))
                  for m in range(M)])
    X = model.dataset.inputs
    n = len(X)
    w1 = [solve_triangular(model.chol[d], model.dataset.outputs[:, d], lower=True)
          for d in range(OUTPUT_DIM)]
    Xs = np.zeros((M, N_horizon, INPUT_DIM))
    C = np.zeros((OUTPUT_DIM, M, N_horizon, n))
    D = np.zeros((OUTPUT_DIM, M, N_horizon, N_horizon))
    w2 = np.zeros((OUTPUT_DIM, M, N_horizon))

    tv = np.tile(tv0, (M, 1))
    traj = np.zeros((M, N_horizon, 4))
    for k in range(N_horizon):
        xq = np.hstack([np.tile(ev_plan[k], (M, 1)), tv])
        delta = np.empty((M, OUTPUT_DIM))
        for d, p in enumerate(model.params):
            noise = max(model.noise2[d], 1e-12)
            v1 = solve_triangular(model.chol[d], kernel_matrix(X, xq, p), lower=True)  # (n, M)
            mean = v1.T @ w1[d]
            var = p.sigma2 - (v1 * v1).sum(0)
            if k:
                diff = (Xs[:, :k] - xq[:, None, :]) / np.asarray(p.lengthscales)
                r = p.sigma2 * np.exp(-0.5 * (diff * diff).sum(2))   # (M, k)
                r -= np.einsum("mjn,nm->mj", C[d, :, :k], v1)
                v2 = np.zeros((M, k))
                for i in range(k):
                    v2[:, i] = (r[:, i] - (D[d, :, i, :i] * v2[:, :i]).sum(1)) / D[d, :, i, i]
                mean += (v2 * w2[d, :, :k]).sum(1)
                var -= (v2 * v2).sum(1)
            else:
                v2 = np.zeros((M, 0))
            var = np.maximum(var, 0.0)
            f = mean + np.sqrt(var) * z[:, k, d]
            delta[:, d] = f

            # extend each trajectory's factor with the sampled point
            C[d, :, k, :] = v1.T
            D[d, :, k, :k] = v2
            D[d, :, k, k] = np.sqrt(var + noise)
            w2[d, :, k] = (f - v1.T @ w1[d] - (v2 * w2[d, :, :k]).sum(1)) / D[d, :, k, k]
        Xs[:, k] = xq
        tv = tv + delta
        traj[:, k] = tv

    means = traj.mean(0)
    # shifted-data formula: exact zero when all trajectories coincide
    dev = traj - traj[0]
    variances = np.maximum(((dev * dev).sum(0) - dev.sum(0) ** 2 / M) / (M - 1), 0.0)
    return TvPredictionStats(means, variances, traj if keep_samples else None)


def constant_velocity_prediction(tv0, N_horizon: int, T: float, var_ramp) -> TvPredictionStats:
    """Fallback prediction used before the GP has data."""
    tv0 = np.asarray(tv0.array() if hasattr(tv0, "array") else tv0, float)
    ks = np.arange(1, N_horizon + 1)
    means = np.tile(tv0, (N_horizon, 1))
    means[:, 0] += tv0[1] * T * ks
    means[:, 2] += tv0[3] * T * ks
    variances = np.outer(ks, np.asarray(var_ramp, float))
    return TvPredictionStats(means, variances)
