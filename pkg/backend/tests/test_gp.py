import numpy as np
import pytest

from app.changepoint.gp import (
    FitConfig,
    PrefixPredictor,
    fit_hyperparameters,
    lml_and_gradient,
    log_marginal_likelihood,
    posterior_predictive,
)
from app.changepoint.kernels import KernelSpec, covariance_matrix
from app.changepoint.synth import ScenarioSpec, Segment, sample_piecewise_gp
from app.errors import ValidationFailed


def _explicit_lml(k, x):
    m = covariance_matrix(k, len(x)).entries
    _, logdet = np.linalg.slogdet(m)
    return -0.5 * x @ np.linalg.inv(m) @ x - 0.5 * logdet - 0.5 * len(x) * np.log(2 * np.pi)


def _draw(k, n, seed):
    spec = ScenarioSpec(total_length=n, segments=[Segment(start=1, kernel=k.with_noise(0.0))],
                        noise_variance=k.noise_variance, seed=seed)
    return sample_piecewise_gp(spec).values


def test_lml_single_point_examples():
    k = KernelSpec(signal_variance=0.6, length_scale=1.0, noise_variance=0.4)
    assert np.isclose(log_marginal_likelihood(k, [0.0]), -0.918939, atol=1e-6)
    assert np.isclose(log_marginal_likelihood(k, [2.0]), -2.918939, atol=1e-6)


def test_lml_matches_explicit_inverse(rng, random_kernel):
    for _ in range(20):
        k = random_kernel()
        x = rng.standard_normal(5)
        assert np.isclose(log_marginal_likelihood(k, x), _explicit_lml(k, x), atol=1e-9)


def test_lml_is_shift_invariant(rng):
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.1)
    x = rng.standard_normal(12)
    assert np.isclose(log_marginal_likelihood(k, x, offset=1), log_marginal_likelihood(k, x, offset=101))


def test_lml_gradient_matches_finite_differences(rng, random_kernel):
    for _ in range(50):
        k = random_kernel(length=(0.5, 5.0))
        n = int(rng.integers(2, 31))
        x = rng.standard_normal(n)
        _, grad = lml_and_gradient(k, x)
        params = k.as_vector()
        fd = np.empty(3)
        for i in range(3):
            h = 1e-5 * params[i]
            up, down = params.copy(), params.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (log_marginal_likelihood(KernelSpec.from_vector(up), x)
                     - log_marginal_likelihood(KernelSpec.from_vector(down), x)) / (2 * h)
        assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6)


def test_predictive_with_empty_history_is_prior():
    k = KernelSpec(signal_variance=1.5, length_scale=2.0, noise_variance=0.2)
    p = posterior_predictive(k, [], 1)
    assert p.mean == 0.0
    assert np.isclose(p.variance, 1.7)


def test_predictive_far_from_history_is_prior():
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.1)
    p = posterior_predictive(k, [1.0, -2.0, 0.5], 1000)
    assert abs(p.mean) < 1e-12
    assert np.isclose(p.variance, 1.1)


def test_predictive_matches_joint_conditioning(rng):
    k = KernelSpec(signal_variance=1.3, length_scale=1.5, noise_variance=0.2)
    x = rng.standard_normal(3)
    joint = covariance_matrix(k, 4).entries
    a, b = joint[:3, :3], joint[:3, 3]
    p = posterior_predictive(k, x, 4)
    assert np.isclose(p.mean, b @ np.linalg.solve(a, x))
    assert np.isclose(p.variance, joint[3, 3] - b @ np.linalg.solve(a, b))


def test_predictive_variance_floored_at_noise(rng, random_kernel):
    for _ in range(20):
        k = random_kernel()
        x = rng.standard_normal(int(rng.integers(1, 20)))
        p = posterior_predictive(k, x, x.size + 1)
        assert p.variance >= k.noise_variance


def test_predictive_rejects_horizon_inside_history():
    k = KernelSpec(signal_variance=1.0, length_scale=1.0, noise_variance=0.1)
    with pytest.raises(ValidationFailed):
        posterior_predictive(k, [1.0, 2.0], 2)


def test_prefix_predictor_matches_direct_predictive(rng):
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.1)
    series = rng.standard_normal(15)
    recent = series[::-1]
    predictor = PrefixPredictor(k, 10)
    means, variances = predictor.predict(recent)
    assert means.size == 11
    for r in range(11):
        hist = series[series.size - r:] if r else np.zeros(0)
        p = posterior_predictive(k, hist, r + 1)
        assert np.isclose(means[r], p.mean, atol=1e-9)
        assert np.isclose(variances[r], p.variance, atol=1e-9)


def test_fit_recovers_length_scale():
    truth = KernelSpec(signal_variance=1.0, length_scale=3.0, noise_variance=0.1)
    init = KernelSpec(signal_variance=1.0, length_scale=10.0, noise_variance=0.1)
    hits = 0
    for seed in range(20):
        fit = fit_hyperparameters(_draw(truth, 200, seed), init)
        hits += 1.5 <= fit.kernel.length_scale <= 6.0
    assert hits >= 15


def test_fit_never_scores_below_init(rng, random_kernel):
    for _ in range(5):
        init = random_kernel()
        x = rng.standard_normal(40)
        fit = fit_hyperparameters(x, init)
        assert fit.lml >= fit.initial_lml
        assert np.isclose(fit.initial_lml, log_marginal_likelihood(init, x))


def test_fit_on_zero_series_drives_signal_to_lower_bound():
    init = KernelSpec(signal_variance=1.0, length_scale=5.0, noise_variance=0.1)
    fit = fit_hyperparameters(np.zeros(30), init)
    assert fit.improved
    assert fit.kernel.signal_variance <= 1e-3


@pytest.mark.parametrize("seed", [3, 7, 8, 11, 19])
def test_fit_is_a_fixed_point(seed):
    truth = KernelSpec(signal_variance=1.0, length_scale=3.0, noise_variance=0.1)
    x = _draw(truth, 120, seed)
    first = fit_hyperparameters(x, truth)
    second = fit_hyperparameters(x, first.kernel)
    assert np.isclose(second.lml, first.lml, rtol=1e-9)
    assert np.allclose(second.kernel.as_vector(), first.kernel.as_vector(), rtol=1e-6, atol=0)


def test_fit_with_fixed_noise_keeps_noise():
    init = KernelSpec(signal_variance=1.0, length_scale=3.0, noise_variance=0.25)
    x = 2.0 * _draw(init, 40, 5)
    fit = fit_hyperparameters(x, init, FitConfig(fix_noise=True))
    assert fit.kernel.noise_variance == 0.25
    assert fit.lml >= fit.initial_lml
    again = fit_hyperparameters(x, fit.kernel, FitConfig(fix_noise=True))
    assert np.allclose(again.kernel.as_vector(), fit.kernel.as_vector(), rtol=1e-6, atol=0)


def test_fit_respects_bounds():
    truth = KernelSpec(signal_variance=1.0, length_scale=3.0, noise_variance=0.1)
    x = _draw(truth, 60, 3)
    cfg = FitConfig(lower=1e-2, upper=1e2)
    fit = fit_hyperparameters(x, KernelSpec(signal_variance=1.0, length_scale=5.0, noise_variance=0.1), cfg)
    v = fit.kernel.as_vector()
    assert np.all(v >= 1e-2 * (1 - 1e-9)) and np.all(v <= 1e2 * (1 + 1e-9))


def test_fit_needs_four_points():
    with pytest.raises(ValidationFailed):
        fit_hyperparameters([1.0, 2.0, 3.0], KernelSpec(signal_variance=1.0, length_scale=1.0, noise_variance=0.1))
