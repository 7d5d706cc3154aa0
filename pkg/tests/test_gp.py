import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpsmpc.gp import (
    GpDataset,
    GpModel,
    GpNumericalError,
    KernelParams,
    constant_velocity_prediction,
    gp_fit,
    gp_observe,
    gp_posterior,
    grid_search_lengthscales,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    sample_tv_trajectories,
    trajectory_rng,
)
from gpsmpc.vehicle import EvState, TvState

UNIT = KernelParams(sigma2=1.0, lengthscales=(1.0,) * 8, noise2=1e-6)


def random_dataset(rng, n, capacity=300):
    return GpDataset(rng.normal(size=(n, 8)), rng.normal(size=(n, 4)), capacity)


def posterior_2x2_oracle(X, y, xs, sigma2, ell, noise2):
    """Posterior of a 2-point GP written out with the explicit 2x2 inverse."""
    def k(a, b):
        r = (np.asarray(a) - np.asarray(b)) / ell
        return sigma2 * math.exp(-0.5 * float(r @ r))
    a = k(X[0], X[0]) + noise2
    b = k(X[0], X[1])
    c = k(X[1], X[1]) + noise2
    det = a * c - b * b
    inv = [[c / det, -b / det], [-b / det, a / det]]
    kv = [k(X[0], xs), k(X[1], xs)]
    w = [inv[0][0] * kv[0] + inv[0][1] * kv[1], inv[1][0] * kv[0] + inv[1][1] * kv[1]]
    mean = w[0] * y[0] + w[1] * y[1]
    var = sigma2 - (w[0] * kv[0] + w[1] * kv[1])
    return mean, var


# --- kernel -----------------------------------------------------------------

def test_kernel_at_zero_distance():
    x = np.arange(8.0)
    assert kernel_eval(x, x, KernelParams(sigma2=2.5)) == 2.5


def test_kernel_example_value():
    x = np.zeros(8)
    xp = np.zeros(8)
    xp[:2] = 1.0
    assert kernel_eval(x, xp, UNIT) == pytest.approx(math.exp(-1.0), rel=1e-15)


def test_kernel_decays():
    assert kernel_eval(np.zeros(8), np.full(8, 1e3), UNIT) == 0.0


@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8), st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_kernel_symmetric(x, y):
    assert kernel_eval(x, y, UNIT) == kernel_eval(y, x, UNIT)


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(sigma2=0.0)
    with pytest.raises(ValueError):
        KernelParams(lengthscales=(1.0,) * 7 + (0.0,))
    with pytest.raises(ValueError):
        KernelParams(noise2=-1.0)


@settings(max_examples=30)
@given(st.integers(2, 25), st.integers(0, 10_000))
def test_gram_matrix_psd(n, seed):
    X = np.random.default_rng(seed).normal(size=(n, 8))
    K = kernel_matrix(X, X, UNIT)
    assert np.array_equal(K, K.T) or np.allclose(K, K.T, atol=1e-15)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * UNIT.sigma2


# --- dataset ----------------------------------------------------------------

def test_dataset_validation():
    with pytest.raises(ValueError):
        GpDataset(np.zeros((2, 8)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        GpDataset(np.full((1, 8), np.nan), np.zeros((1, 4)))


# --- fit / posterior --------------------------------------------------------

def test_fit_single_point():
    model = gp_fit(random_dataset(np.random.default_rng(0), 1), UNIT)
    assert model.chol[0].shape == (1, 1)
    assert model.chol[0][0, 0] ** 2 == pytest.approx(1.0 + 1e-6, rel=1e-14)


def test_fit_reconstructs_gram():
    ds = random_dataset(np.random.default_rng(1), 3)
    model = gp_fit(ds, UNIT)
    K = kernel_matrix(ds.inputs, ds.inputs, UNIT) + 1e-6 * np.eye(3)
    for L in model.chol:
        np.testing.assert_allclose(L @ L.T, K, atol=1e-10)


def test_duplicate_inputs_trigger_jitter():
    X = np.zeros((2, 8))
    ds = GpDataset(X, np.array([[1.0] * 4, [1.1] * 4]))
    model = gp_fit(ds, KernelParams(noise2=0.0))
    assert all(nz > 0.0 for nz in model.noise2)


def test_fit_failure_is_signalled(monkeypatch):
    import gpsmpc.gp as gp_mod

    def always_fail(*_):
        raise np.linalg.LinAlgError("forced")

    monkeypatch.setattr(gp_mod.np.linalg, "cholesky", always_fail)
    with pytest.raises(GpNumericalError):
        gp_fit(random_dataset(np.random.default_rng(0), 2), UNIT)


def test_fit_empty_rejected():
    with pytest.raises(ValueError):
        gp_fit(GpDataset(), UNIT)


def test_posterior_requires_model():
    with pytest.raises(TypeError):
        gp_posterior(None, np.zeros(8))


def test_posterior_interpolates_training_points():
    ds = random_dataset(np.random.default_rng(2), 5)
    params = KernelParams(sigma2=1.0, lengthscales=(1.0,) * 8, noise2=1e-8)
    model = gp_fit(ds, params)
    for x, y in zip(ds.inputs, ds.outputs):
        mean, var = gp_posterior(model, x)
        np.testing.assert_allclose(mean, y, atol=1e-3)
        assert np.all(var <= 1e-6)


def test_posterior_recovers_prior_far_away():
    model = gp_fit(random_dataset(np.random.default_rng(3), 4), UNIT)
    mean, var = gp_posterior(model, np.full(8, 1e4))
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_allclose(var, 1.0)


def test_posterior_matches_2x2_closed_form():
    X = np.array([[0.0, 1, 0, 2, 0, 0, 1, 0], [0.5, 0, 0, 1, 1, 0, 0, 0.5]])
    Y = np.array([[1.0, -2.0, 0.5, 3.0], [0.3, 0.7, -1.0, 2.0]])
    params = KernelParams(sigma2=1.7, lengthscales=(1.3,) * 8, noise2=1e-4)
    model = gp_fit(GpDataset(X, Y), params)
    for xs in (np.zeros(8), X[0] + 0.1, np.linspace(-1, 1, 8)):
        mean, var = gp_posterior(model, xs)
        for d in range(4):
            m_ref, v_ref = posterior_2x2_oracle(X, Y[:, d], xs, 1.7, 1.3, 1e-4)
            assert abs(mean[d] - m_ref) <= 1e-10
            assert abs(var[d] - v_ref) <= 1e-10


@settings(max_examples=30)
@given(st.integers(1, 15), st.integers(0, 10_000), st.floats(-5, 5))
def test_posterior_mean_linear_in_outputs(n, seed, c):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n)
    xs = rng.normal(size=8)
    m1, _ = gp_posterior(gp_fit(ds, UNIT), xs)
    m2, _ = gp_posterior(gp_fit(GpDataset(ds.inputs, c * ds.outputs), UNIT), xs)
    np.testing.assert_allclose(m2, c * m1, rtol=1e-9, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(1, 15), st.integers(0, 10_000))
def test_posterior_variance_bounded_by_prior(n, seed):
    rng = np.random.default_rng(seed)
    model = gp_fit(random_dataset(rng, n), UNIT)
    _, var = gp_posterior(model, rng.normal(size=8))
    assert np.all(var >= 0.0) and np.all(var <= UNIT.sigma2)


# --- online updates ----------------------------------------------------------

def _state_pair(rng):
    return EvState(*rng.normal(size=4)), TvState(*rng.normal(size=4)), TvState(*rng.normal(size=4))


def test_observe_reduces_variance_at_datum():
    rng = np.random.default_rng(4)
    model = gp_fit(random_dataset(rng, 6), UNIT)
    ev, tv, tv_next = _state_pair(rng)
    x = np.concatenate([ev.array(), tv.array()])
    _, before = gp_posterior(model, x)
    _, after = gp_posterior(gp_observe(model, ev, tv, tv_next), x)
    assert np.all(after < before)


def test_rank_one_extension_matches_refit():
    rng = np.random.default_rng(5)
    model = gp_fit(random_dataset(rng, 8), UNIT)
    for _ in range(5):
        model = gp_observe(model, *_state_pair(rng))
    refit = gp_fit(model.dataset, UNIT)
    for L, L_ref in zip(model.chol, refit.chol):
        np.testing.assert_allclose(L, L_ref, atol=1e-8)
    for a, a_ref in zip(model.alpha, refit.alpha):
        np.testing.assert_allclose(a, a_ref, atol=1e-8)


def test_capacity_eviction():
    rng = np.random.default_rng(6)
    ds = random_dataset(rng, 4, capacity=4)
    model = gp_fit(ds, UNIT)
    ev, tv, tv_next = _state_pair(rng)
    model = gp_observe(model, ev, tv, tv_next)
    assert model.n == 4
    np.testing.assert_array_equal(model.dataset.inputs[:3], ds.inputs[1:])
    np.testing.assert_array_equal(model.dataset.inputs[-1], np.concatenate([ev.array(), tv.array()]))


def test_log_marginal_likelihood_single_point():
    ds = GpDataset(np.zeros((1, 8)), np.ones((1, 4)))
    model = gp_fit(ds, KernelParams(sigma2=1.0, noise2=0.0))
    # one point with unit variance and unit output: -1/2 - 0 - log(2 pi)/2 per dimension
    expected = 4 * (-0.5 - 0.5 * math.log(2 * math.pi))
    assert log_marginal_likelihood(model) == pytest.approx(expected, rel=1e-9)


def test_grid_search_prefers_matching_lengthscale():
    rng = np.random.default_rng(8)
    X = rng.uniform(-3, 3, size=(40, 8))
    Y = np.tile(np.sin(X[:, :1]), (1, 4))
    best = grid_search_lengthscales(GpDataset(X, Y), KernelParams(1.0, (1.0,) * 8, 1e-4), scales=(0.01, 1.0, 100.0))
    assert all(p.lengthscales[0] == 1.0 for p in best)


# --- trajectory sampling -----------------------------------------------------

def _sampling_model(rng, n=10, sigma2=0.5, noise2=1e-6):
    ds = GpDataset(rng.normal(size=(n, 8)), 0.1 * rng.normal(size=(n, 4)))
    return gp_fit(ds, KernelParams(sigma2, (2.0,) * 8, noise2))


def test_sampling_is_deterministic():
    rng = np.random.default_rng(9)
    model = _sampling_model(rng)
    plan = rng.normal(size=(5, 4))
    a = sample_tv_trajectories(model, plan, np.zeros(4), 8, 5, 123, keep_samples=True)
    b = sample_tv_trajectories(model, plan, np.zeros(4), 8, 5, 123, keep_samples=True)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.variances, b.variances)
    assert not np.array_equal(a.samples[0], a.samples[1])


def test_sampling_trajectories_do_not_depend_on_batch_size():
    rng = np.random.default_rng(10)
    model = _sampling_model(rng)
    plan = rng.normal(size=(4, 4))
    small = sample_tv_trajectories(model, plan, np.zeros(4), 3, 4, 77, keep_samples=True)
    large = sample_tv_trajectories(model, plan, np.zeros(4), 9, 4, 77, keep_samples=True)
    np.testing.assert_allclose(small.samples, large.samples[:3], rtol=1e-12, atol=1e-14)


def test_sampling_statistics_use_unbiased_variance():
    rng = np.random.default_rng(11)
    model = _sampling_model(rng)
    stats = sample_tv_trajectories(model, rng.normal(size=(3, 4)), np.zeros(4), 3, 3, 5, keep_samples=True)
    s = stats.samples
    np.testing.assert_allclose(stats.means, s.mean(0), rtol=1e-15)
    manual = ((s - s.mean(0)) ** 2).sum(0) / (3 - 1)
    np.testing.assert_allclose(stats.variances, manual, rtol=1e-12)
    assert np.all(stats.variances >= 0)


def test_sampling_degenerate_model_has_no_spread():
    rng = np.random.default_rng(12)
    model = _sampling_model(rng, sigma2=1e-300, noise2=0.0)
    stats = sample_tv_trajectories(model, rng.normal(size=(4, 4)), np.ones(4), 5, 4, 0, keep_samples=True)
    assert np.all(stats.samples == stats.samples[0])
    assert np.all(stats.variances == 0.0)


def test_sampling_one_step_matches_posterior():
    rng = np.random.default_rng(13)
    model = _sampling_model(rng)
    ev = rng.normal(size=4)
    tv0 = rng.normal(size=4)
    M = 10_000
    stats = sample_tv_trajectories(model, ev[None, :], tv0, M, 1, 2024)
    mean, var = gp_posterior(model, np.concatenate([ev, tv0]))
    assert np.all(np.abs(stats.means[0] - (tv0 + mean)) <= 3 * np.sqrt(var) / np.sqrt(M))
    np.testing.assert_allclose(stats.variances[0], var, rtol=0.10)


def test_sampling_matches_refit_oracle():
    """Each trajectory equals sampling with a GP refitted on data plus its own earlier draws."""
    rng = np.random.default_rng(14)
    model = _sampling_model(rng, n=6)
    plan = 0.3 * rng.normal(size=(4, 4))
    tv0 = 0.3 * rng.normal(size=4)
    seed, M, N = 31, 3, 4
    stats = sample_tv_trajectories(model, plan, tv0, M, N, seed, keep_samples=True)
    for m in range(M):
        z = trajectory_rng(seed, m).standard_normal((N, 4))
        X, Y = model.dataset.inputs, model.dataset.outputs
        tv = tv0.copy()
        for k in range(N):
            x = np.concatenate([plan[k], tv])
            mean, var = gp_posterior(gp_fit(GpDataset(X, Y), model.params), x)
            inc = mean + np.sqrt(var) * z[k]
            X, Y = np.vstack([X, x]), np.vstack([Y, inc])
            tv = tv + inc
            np.testing.assert_allclose(stats.samples[m, k], tv, rtol=1e-7, atol=1e-9)


def test_sampling_argument_checks():
    model = _sampling_model(np.random.default_rng(15))
    with pytest.raises(ValueError):
        sample_tv_trajectories(model, np.zeros((3, 4)), np.zeros(4), 1, 3, 0)
    with pytest.raises(ValueError):
        sample_tv_trajectories(model, np.zeros((3, 4)), np.zeros(4), 4, 0, 0)
    with pytest.raises(ValueError):
        sample_tv_trajectories(model, np.zeros((2, 4)), np.zeros(4), 4, 3, 0)


def test_constant_velocity_prediction():
    stats = constant_velocity_prediction(np.array([80.0, 50.0, -2.5, 1.0]), 3, 0.2, [0.1, 0.0, 0.2, 0.0])
    np.testing.assert_allclose(stats.means[:, 0], [90, 100, 110])
    np.testing.assert_allclose(stats.means[:, 2], [-2.3, -2.1, -1.9])
    np.testing.assert_allclose(stats.variances[:, 2], [0.2, 0.4, 0.6])
