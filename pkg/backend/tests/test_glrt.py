import math

import numpy as np
import pytest
from scipy import optimize

from app.changepoint import glrt, matcore
from app.changepoint.glrt import (
    CandidateSet,
    HypothesisModel,
    Verdict,
    cov_lrt,
    lrt_spectrum,
    mean_glrt,
    mean_threshold,
    run_test,
    scaled_alpha,
    variance_lrt,
)
from app.changepoint.kernels import (
    ChangeFamily,
    KernelSpec,
    alternative_covariance,
    compatible_cross_kernel,
    covariance_matrix,
    null_covariance,
)
from app.errors import CandidateOutOfRange, ValidationFailed


def _gauss_logpdf(x, m):
    _, logdet = np.linalg.slogdet(m)
    return -0.5 * x @ np.linalg.inv(m) @ x - 0.5 * logdet


def _explicit_stat(x, sigma, sigma_alt):
    return 2.0 * (_gauss_logpdf(x, sigma_alt) - _gauss_logpdf(x, sigma))


# ---------------------------------------------------------------------------
# candidates and verdicts
# ---------------------------------------------------------------------------

def test_default_candidates():
    c = CandidateSet.default(100)
    assert c.margin == 5
    assert c.indices[0] == 6 and c.indices[-1] == 95
    assert len(c) == 90
    assert CandidateSet.default(10).margin == 2


def test_candidate_set_validation():
    with pytest.raises(CandidateOutOfRange):
        CandidateSet.default(4, margin=2)
    with pytest.raises(CandidateOutOfRange):
        CandidateSet.explicit([1], n=5)
    with pytest.raises(CandidateOutOfRange):
        CandidateSet.explicit([6], n=5)
    with pytest.raises(ValidationFailed):
        CandidateSet.explicit([3, 3], n=5)


def test_run_test_verdicts():
    out = glrt._outcome("x", [2, 3], [1.0, 5.0])
    assert run_test(out, (1.0, 2.0)).verdict_star == Verdict.CHANGE
    assert run_test(out, (6.0, 7.0)).verdict_star == Verdict.NO_CHANGE
    assert run_test(out, (6.0, 2.0)).verdict_star == Verdict.INCONCLUSIVE
    at_boundary = run_test(out, (5.0, 5.0))
    assert at_boundary.verdict_t0 and at_boundary.verdict_t1


def test_shifting_statistics_up_never_weakens_verdict_t0():
    stats = [0.5, 2.0, 1.0]
    for shift in (0.0, 0.5, 3.0):
        before = run_test(glrt._outcome("x", [2, 3, 4], stats), (1.5, 0.0))
        after = run_test(glrt._outcome("x", [2, 3, 4], [s + shift for s in stats]), (1.5, 0.0))
        assert after.verdict_t0 >= before.verdict_t0


def test_ties_resolve_to_smallest_candidate():
    out = glrt._outcome("x", [3, 4, 5], [1.0, 2.0, 2.0])
    assert out.t_star == 4
    assert out.stat_at(5) == 2.0


# ---------------------------------------------------------------------------
# mean change
# ---------------------------------------------------------------------------

def test_mean_glrt_example():
    out = mean_glrt([-1.0, -1.0, 1.0, 1.0], np.eye(4), CandidateSet.explicit([2], n=4), 0.05)
    assert np.isclose(out.stat_max, 3.0)


def test_mean_glrt_zero_series():
    out = mean_glrt(np.zeros(10), np.eye(10), CandidateSet.default(10), 0.05)
    assert np.allclose(out.stats, 0.0)
    assert out.verdict_star == Verdict.NO_CHANGE


def test_mean_threshold_value():
    assert math.isclose(mean_threshold(400, 0.05), 26.583, abs_tol=1e-3)


def test_mean_glrt_power_and_size():
    n = 100
    cands = CandidateSet.default(n)
    step = np.where(np.arange(1, n + 1) >= 51, 3.0, 0.0)
    gen = np.random.Generator(np.random.PCG64(5))
    detected = sum(mean_glrt(step + gen.standard_normal(n), np.eye(n), cands, 0.05).verdict_t0 for _ in range(200))
    false_alarms = sum(mean_glrt(gen.standard_normal(n), np.eye(n), cands, 0.05).verdict_t0 for _ in range(200))
    assert detected >= 180
    assert false_alarms <= 10


# ---------------------------------------------------------------------------
# covariance change
# ---------------------------------------------------------------------------

def test_cov_lrt_with_alternative_equal_to_null_is_zero(rng):
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.1)
    fam = ChangeFamily.general(k, k, k.with_noise(0.0))
    cands = CandidateSet.default(20)
    out = cov_lrt(rng.standard_normal(20), k, fam, cands)
    assert np.allclose(out.stats, 0.0, atol=1e-9)


def test_cov_lrt_matches_explicit_densities(rng, random_kernel):
    for _ in range(200):
        pre, post = random_kernel(), random_kernel()
        post = post.with_noise(pre.noise_variance)
        n = int(rng.integers(6, 17))
        families = [
            ChangeFamily.general(pre, post, compatible_cross_kernel(pre, post)),
            ChangeFamily.structural_break(pre, post),
            ChangeFamily.variance_only(pre, float(rng.uniform(0.5, 2.0))),
            ChangeFamily.scaled(pre),
        ]
        fam = families[int(rng.integers(0, 4))]
        x = rng.standard_normal(n)
        cands = CandidateSet.default(n)
        out = cov_lrt(x, pre, fam, cands)
        sigma = null_covariance(fam, n).entries
        for i, t in enumerate(out.candidates):
            f = fam
            if fam.needs_estimate:
                key = "post_variance" if fam.kind.value == "variance_only" else "scale"
                f = fam.resolved(**{key: out.estimates[i]})
            expected = _explicit_stat(x, sigma, alternative_covariance(f, n, t).entries)
            assert abs(out.stats[i] - expected) < 1e-8


def test_zero_series_statistic_is_log_determinant_ratio():
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.2)
    post = KernelSpec(signal_variance=3.0, length_scale=1.0, noise_variance=0.2)
    fam = ChangeFamily.structural_break(k, post)
    n = 12
    out = cov_lrt(np.zeros(n), k, fam, CandidateSet.default(n))
    sigma = covariance_matrix(k, n).entries
    for t, s in zip(out.candidates, out.stats):
        expected = np.linalg.slogdet(sigma)[1] - np.linalg.slogdet(alternative_covariance(fam, n, t).entries)[1]
        assert np.isclose(s, expected)


def test_vectorised_statistics_match_per_sample(rng):
    k = KernelSpec(signal_variance=1.0, length_scale=3.0, noise_variance=0.1)
    fam = ChangeFamily.structural_break(k, KernelSpec(signal_variance=2.0, length_scale=1.0, noise_variance=0.1))
    n = 15
    model = HypothesisModel(fam, n)
    cands = CandidateSet.default(n)
    xs = rng.standard_normal((4, n))
    mat = model.statistics(xs, cands)
    for i, x in enumerate(xs):
        assert np.allclose(mat[i], [model.statistic(x, t) for t in cands])


def test_variance_lrt_example():
    out = variance_lrt([0.0, 0.0, 2.0, 2.0], 1.0, CandidateSet.explicit([2], n=4))
    assert math.isclose(out.stat_max, 3.2274, abs_tol=1e-4)
    assert out.estimates == [4.0]


def test_variance_lrt_zero_when_estimate_equals_a():
    x = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
    out = variance_lrt(x, 1.0, CandidateSet.explicit([2, 3, 4], n=8))
    assert np.allclose(out.stats, 0.0)


def test_variance_lrt_degenerate_tail():
    x = np.array([1.0, 2.0, 0.0, 0.0, 0.0])
    out = variance_lrt(x, 1.0, CandidateSet.explicit([2, 3], n=5))
    assert math.isinf(out.stats[1])
    assert "degenerate_segment:3" in out.flags


def test_variance_lrt_needs_two_tail_points():
    with pytest.raises(CandidateOutOfRange):
        variance_lrt(np.ones(5), 1.0, CandidateSet.explicit([4], n=5))


def test_variance_lrt_maximizes_over_b(rng):
    for _ in range(100):
        n = int(rng.integers(6, 30))
        a = float(rng.uniform(0.3, 3.0))
        x = rng.standard_normal(n) * rng.uniform(0.3, 3.0)
        t = int(rng.integers(2, n - 1))
        tail = x[t:]

        def neg(logb):
            b = math.exp(logb)
            return -float(np.sum(tail ** 2 / a - tail ** 2 / b) + tail.size * math.log(a / b))

        res = optimize.minimize_scalar(neg, bounds=(-12.0, 8.0), method="bounded", options={"xatol": 1e-10})
        got = variance_lrt(x, a, CandidateSet.explicit([t], n=n)).stat_max
        assert abs(got - (-res.fun)) < 1e-6


def test_variance_lrt_is_variance_family_one_step_later(rng):
    n, a = 20, 1.5
    x = rng.standard_normal(n) * 1.3
    zero_noise = KernelSpec(signal_variance=1.0, length_scale=1.0, noise_variance=0.0)
    out = variance_lrt(x, a, CandidateSet.default(n))
    for t, s, b in zip(out.candidates, out.stats, out.estimates):
        fam = ChangeFamily.variance_only(zero_noise, a, b)
        expected = cov_lrt(x, zero_noise, fam, CandidateSet.explicit([t + 1], n=n)).stat_max
        assert np.isclose(s, expected, atol=1e-9)


def test_scaled_alpha_examples():
    k = KernelSpec(signal_variance=1.0, length_scale=1e-3, noise_variance=0.0)
    x = np.array([0.3, -0.7, 1.0, -1.0, 1.0])
    assert np.isclose(scaled_alpha(x, k, 3), 1.0)
    assert np.isclose(scaled_alpha(np.concatenate((x[:2], 2.0 * x[2:])), k, 3), 2.0)


def _scaled_stat(x, k, t, alpha):
    n = x.size
    sigma = covariance_matrix(k, n).entries
    alt = alternative_covariance(ChangeFamily.scaled(k, alpha), n, t).entries
    return _explicit_stat(x, sigma, alt)


def test_scaled_alpha_is_a_stationary_point(rng):
    k = KernelSpec(signal_variance=1.0, length_scale=0.7, noise_variance=0.0)
    for _ in range(10):
        x = rng.standard_normal(10)
        t = int(rng.integers(3, 9))
        alpha = scaled_alpha(x, k, t)
        h = 1e-5 * alpha
        slope = (_scaled_stat(x, k, t, alpha + h) - _scaled_stat(x, k, t, alpha - h)) / (2 * h)
        assert abs(slope) < 1e-5


def test_scaled_alpha_matches_numeric_maximum(rng):
    k = KernelSpec(signal_variance=1.0, length_scale=0.8, noise_variance=0.0)
    for _ in range(30):
        x = rng.standard_normal(10) * rng.uniform(0.5, 2.0)
        t = int(rng.integers(3, 9))
        res = optimize.minimize_scalar(lambda a: -_scaled_stat(x, k, t, a), bounds=(1e-3, 50.0),
                                       method="bounded", options={"xatol": 1e-10})
        assert abs(scaled_alpha(x, k, t) - res.x) < 1e-5 * max(1.0, res.x)


# ---------------------------------------------------------------------------
# spectra and thresholds
# ---------------------------------------------------------------------------

def test_spectrum_examples(random_spd):
    m = random_spd(5)
    assert np.allclose(lrt_spectrum(m, m), 1.0)
    assert np.allclose(lrt_spectrum(np.eye(2), 2.0 * np.eye(2)), [0.5, 0.5])
    assert np.allclose(lrt_spectrum(np.eye(2), 2.0 * np.eye(2), hypothesis="alternative"), [2.0, 2.0])


def test_spectrum_matches_general_eigenproblem(random_spd):
    s, s_alt = random_spd(6, cond=20.0), random_spd(6, cond=20.0)
    expected = np.sort(np.linalg.eigvals(s @ np.linalg.inv(s_alt)).real)
    assert np.allclose(lrt_spectrum(s, s_alt), expected, rtol=1e-8)


def test_theoretical_thresholds_with_alternative_equal_to_null():
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.2)
    n, delta, v = 20, 0.05, 1.5
    spec = glrt.theoretical_thresholds(k, ChangeFamily.general(k, k, k.with_noise(0.0)), n, delta, v)
    lmin = matcore.sym_eigenvalues(covariance_matrix(k, n))[0]
    assert np.isclose(spec.c0, 2.0 / lmin)
    spread = spec.c0 * v ** 2 * n * math.sqrt(0.5 * math.log(2.0 / delta))
    assert np.isclose(spec.r_h0, spread, atol=1e-6)
    assert np.isclose(spec.r_h1, -spread, atol=1e-6)
    assert spec.regime == "none" and not spec.valid


def test_c0_dominates_every_candidate(random_kernel):
    for _ in range(10):
        pre, post = random_kernel(), random_kernel()
        fam = ChangeFamily.structural_break(pre, post.with_noise(pre.noise_variance))
        spec = glrt.theoretical_thresholds(pre, fam, 16, 0.1, 1.0)
        assert spec.c0_dominates


def test_spread_as_delta_approaches_one():
    s = glrt.ThresholdSpec.spread(2.0, 1.0, 10, 1.0 - 1e-12)
    assert np.isclose(s / 20.0, math.sqrt(0.5 * math.log(2.0)), rtol=1e-9)


def test_rescaled_changes_only_the_spread():
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.2)
    fam = ChangeFamily.structural_break(k, KernelSpec(signal_variance=4.0, length_scale=2.0, noise_variance=0.2))
    spec = glrt.theoretical_thresholds(k, fam, 20, 0.05, 1.0)
    wider = spec.rescaled(2.0)
    assert wider.h0_base == spec.h0_base and wider.h1_base == spec.h1_base
    assert np.isclose(wider.r_h0 - wider.h0_base, 4.0 * (spec.r_h0 - spec.h0_base))


def test_theoretical_thresholds_input_checks():
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.2)
    fam = ChangeFamily.structural_break(k, k)
    with pytest.raises(ValidationFailed):
        glrt.theoretical_thresholds(k, fam, 20, 1.0, 1.0)
    with pytest.raises(ValidationFailed):
        glrt.theoretical_thresholds(k, fam, 20, 0.05, 0.0)
    with pytest.raises(ValidationFailed):
        glrt.theoretical_thresholds(k, ChangeFamily.scaled(k), 20, 0.05, 1.0)
