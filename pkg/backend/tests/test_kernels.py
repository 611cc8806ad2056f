import numpy as np
import pydantic
import pytest

from app.changepoint import matcore
from app.changepoint.kernels import (
    ChangeFamily,
    ChangeKind,
    KernelSpec,
    alternative_covariance,
    compatible_cross_kernel,
    covariance_matrix,
    kernel_gradients,
    null_covariance,
    post_regime_covariance,
)
from app.errors import CandidateOutOfRange, ValidationFailed

K = KernelSpec(signal_variance=1.0, length_scale=1.0, noise_variance=0.0)


def test_covariance_examples():
    assert np.allclose(covariance_matrix(K, 1).entries, [[1.0]])
    e = np.exp(-0.5)
    assert np.allclose(covariance_matrix(K, 2).entries, [[1.0, e], [e, 1.0]])
    k = KernelSpec(signal_variance=2.0, length_scale=1.0, noise_variance=0.5)
    assert np.allclose(covariance_matrix(k, 2).entries, [[2.5, 2 * e], [2 * e, 2.5]])


def test_huge_length_scale_gives_constant_matrix():
    k = KernelSpec(signal_variance=4.0, length_scale=1e6, noise_variance=0.1)
    m = covariance_matrix(k, 3).entries
    assert np.allclose(m, 4.0 + 0.1 * np.eye(3))


def test_covariance_is_shift_invariant():
    k = KernelSpec(signal_variance=1.3, length_scale=2.5, noise_variance=0.2)
    assert np.allclose(covariance_matrix(k, 6, offset=1).entries, covariance_matrix(k, 6, offset=101).entries)


def test_kernel_spec_validation():
    with pytest.raises(pydantic.ValidationError):
        KernelSpec(signal_variance=0.0, length_scale=1.0)
    with pytest.raises(pydantic.ValidationError):
        KernelSpec(signal_variance=1.0, length_scale=1.0, noise_variance=-0.1)
    with pytest.raises(pydantic.ValidationError):
        KernelSpec(signal_variance=1.0, length_scale=1.0, period=3.0)


def test_structural_break_zeroes_cross_blocks():
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.1)
    expected = covariance_matrix(k, 4).entries.copy()
    expected[:2, 2:] = 0.0
    expected[2:, :2] = 0.0
    got = alternative_covariance(ChangeFamily.structural_break(k, k), 4, 3).entries
    assert np.allclose(got, expected)


def test_variance_only_example():
    k = KernelSpec(signal_variance=1.0, length_scale=1.0, noise_variance=0.0)
    got = alternative_covariance(ChangeFamily.variance_only(k, 1.0, 4.0), 3, 2).entries
    assert np.allclose(got, np.diag([1.0, 4.0, 4.0]))
    assert np.allclose(null_covariance(ChangeFamily.variance_only(k, 1.0, 4.0), 3).entries, np.eye(3))


def test_scaled_with_unit_scale_is_null():
    k = KernelSpec(signal_variance=1.5, length_scale=2.0, noise_variance=0.3)
    fam = ChangeFamily.scaled(k, 1.0)
    for t in range(2, 9):
        assert np.array_equal(alternative_covariance(fam, 8, t).entries, covariance_matrix(k, 8).entries)


def test_general_with_null_blocks_is_null():
    k = KernelSpec(signal_variance=1.5, length_scale=2.0, noise_variance=0.3)
    fam = ChangeFamily.general(k, k, k.with_noise(0.0))
    for t in range(2, 11):
        assert np.allclose(alternative_covariance(fam, 10, t).entries, covariance_matrix(k, 10).entries)


def test_first_segment_block_equals_null(random_kernel):
    pre, post = random_kernel(), random_kernel()
    n = 12
    families = [
        ChangeFamily.general(pre, post, compatible_cross_kernel(pre, post)),
        ChangeFamily.structural_break(pre, post),
        ChangeFamily.variance_only(pre, 1.0, 3.0),
        ChangeFamily.scaled(pre, 2.0),
    ]
    for fam in families:
        sigma = null_covariance(fam, n).entries
        for t in range(2, n + 1):
            alt = alternative_covariance(fam, n, t).entries
            assert np.allclose(alt[: t - 1, : t - 1], sigma[: t - 1, : t - 1])


def test_alternatives_factorize_for_moderate_kernels():
    for l in (0.5, 5.0, 50.0):
        pre = KernelSpec(signal_variance=1.0, length_scale=l, noise_variance=0.1)
        post = KernelSpec(signal_variance=2.0, length_scale=l / 2, noise_variance=0.1)
        fam = ChangeFamily.structural_break(pre, post)
        for t in (2, 100, 200):
            matcore.cholesky(alternative_covariance(fam, 200, t))


def test_compatible_cross_kernel_keeps_general_family_psd(random_kernel):
    for _ in range(10):
        pre, post = random_kernel(), random_kernel()
        post = post.with_noise(pre.noise_variance)
        fam = ChangeFamily.general(pre, post, compatible_cross_kernel(pre, post))
        for t in (2, 7, 15):
            assert matcore.sym_eigenvalues(alternative_covariance(fam, 15, t))[0] > 0.0


def test_candidate_range_checked():
    fam = ChangeFamily.structural_break(K, K)
    with pytest.raises(CandidateOutOfRange):
        alternative_covariance(fam, 5, 1)
    with pytest.raises(CandidateOutOfRange):
        alternative_covariance(fam, 5, 6)


def test_estimated_family_must_be_resolved():
    with pytest.raises(ValidationFailed):
        alternative_covariance(ChangeFamily.scaled(K), 5, 3)
    with pytest.raises(ValidationFailed):
        alternative_covariance(ChangeFamily.variance_only(K, 1.0), 5, 3)
    resolved = ChangeFamily.scaled(K).resolved(scale=2.0)
    assert not resolved.needs_estimate
    alternative_covariance(resolved, 5, 3)


def test_family_fields_must_match_kind():
    with pytest.raises(pydantic.ValidationError):
        ChangeFamily(kind="structural_break", pre_kernel=K)
    with pytest.raises(pydantic.ValidationError):
        ChangeFamily(kind="general", pre_kernel=K, post_kernel=K)
    with pytest.raises(pydantic.ValidationError):
        ChangeFamily(kind="scaled", pre_kernel=K, post_kernel=K)
    with pytest.raises(pydantic.ValidationError):
        ChangeFamily(kind="variance_only", pre_kernel=K)


def test_post_regime_covariance():
    k = KernelSpec(signal_variance=1.0, length_scale=2.0, noise_variance=0.1)
    post = KernelSpec(signal_variance=3.0, length_scale=1.0)
    got = post_regime_covariance(ChangeFamily.structural_break(k, post), 5).entries
    assert np.allclose(got, covariance_matrix(post.with_noise(0.1), 5).entries)
    got = post_regime_covariance(ChangeFamily.scaled(k, 2.0), 5).entries
    assert np.allclose(got, 4.0 * covariance_matrix(k.with_noise(0.0), 5).entries + 0.1 * np.eye(5))


def test_gradient_examples():
    k = KernelSpec(signal_variance=2.0, length_scale=1.0, noise_variance=0.3)
    d_signal, d_length, d_noise = kernel_gradients(k, 3)
    assert np.allclose(d_noise, np.eye(3))
    assert np.isclose(d_signal[0, 1], np.exp(-0.5))
    assert np.allclose(np.diag(d_length), 0.0)


def test_length_gradient_matches_finite_differences():
    k = KernelSpec(signal_variance=1.7, length_scale=2.3, noise_variance=0.2)
    h = 1e-6
    up = covariance_matrix(k.model_copy(update={"length_scale": 2.3 + h}), 6).entries
    down = covariance_matrix(k.model_copy(update={"length_scale": 2.3 - h}), 6).entries
    fd = (up - down) / (2 * h)
    _, d_length, _ = kernel_gradients(k, 6)
    assert np.allclose(d_length, fd, rtol=1e-5, atol=1e-8)


def test_change_kinds_are_the_covariance_families():
    assert {k.value for k in ChangeKind} == {"general", "structural_break", "variance_only", "scaled"}
