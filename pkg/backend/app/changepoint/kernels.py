# app/changepoint/kernels.py
"""
RBF kernel evaluation and covariance assembly for the null and the
per-candidate alternative hypotheses.

Time indices are the integers 1..n. For a candidate t the first regime is
indices < t and the second is indices >= t, so x_t is the first point of the
new regime. Observation noise is added to every assembled matrix after the
kernel blocks are placed.
"""
from enum import Enum
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.changepoint.matcore import SymMatrix
from app.errors import CandidateOutOfRange, ValidationFailed


class KernelSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Literal["RBF"] = "RBF"
    signal_variance: float = Field(gt=0)
    length_scale: float = Field(gt=0)
    noise_variance: float = Field(default=0.0, ge=0)

    def with_noise(self, noise_variance: float) -> "KernelSpec":
        return self.model_copy(update={"noise_variance": noise_variance})

    def as_vector(self) -> np.ndarray:
        return np.array([self.signal_variance, self.length_scale, self.noise_variance])

    @classmethod
    def from_vector(cls, v) -> "KernelSpec":
        return cls(signal_variance=float(v[0]), length_scale=float(v[1]), noise_variance=float(v[2]))


class ChangeKind(str, Enum):
    GENERAL = "general"
    STRUCTURAL_BREAK = "structural_break"
    VARIANCE_ONLY = "variance_only"
    SCALED = "scaled"


ZERO = "zero"


class ChangeFamily(BaseModel):
    """
    Alternative-hypothesis covariance family.

    pre_kernel is always the null kernel (its noise is the noise used by every
    assembled matrix). post_variance=None or scale=None mean "estimate per
    candidate from the data".
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ChangeKind
    pre_kernel: KernelSpec
    post_kernel: Optional[KernelSpec] = None
    cross_kernel: Optional[Union[KernelSpec, Literal["zero"]]] = None
    pre_variance: Optional[float] = Field(default=None, gt=0)
    post_variance: Optional[float] = Field(default=None, gt=0)
    scale: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _fields_match_kind(self):
        kind = self.kind
        if kind in (ChangeKind.GENERAL, ChangeKind.STRUCTURAL_BREAK) and self.post_kernel is None:
            raise ValueError(f"{kind.value} needs post_kernel")
        if kind == ChangeKind.GENERAL and self.cross_kernel is None:
            raise ValueError("general needs cross_kernel (a KernelSpec or 'zero')")
        if kind != ChangeKind.GENERAL and self.cross_kernel is not None:
            raise ValueError(f"{kind.value} takes no cross_kernel")
        if kind not in (ChangeKind.GENERAL, ChangeKind.STRUCTURAL_BREAK) and self.post_kernel is not None:
            raise ValueError(f"{kind.value} takes no post_kernel")
        if kind == ChangeKind.VARIANCE_ONLY:
            if self.pre_variance is None:
                raise ValueError("variance_only needs pre_variance")
        elif self.pre_variance is not None or self.post_variance is not None:
            raise ValueError(f"{kind.value} takes no pre/post variance")
        if kind != ChangeKind.SCALED and self.scale is not None:
            raise ValueError(f"{kind.value} takes no scale")
        return self

    @property
    def noise_variance(self) -> float:
        return self.pre_kernel.noise_variance

    @property
    def needs_estimate(self) -> bool:
        return (self.kind == ChangeKind.VARIANCE_ONLY and self.post_variance is None) or (
            self.kind == ChangeKind.SCALED and self.scale is None
        )

    @classmethod
    def general(cls, pre: KernelSpec, post: KernelSpec, cross: Union[KernelSpec, str]) -> "ChangeFamily":
        return cls(kind=ChangeKind.GENERAL, pre_kernel=pre, post_kernel=post, cross_kernel=cross)

    @classmethod
    def structural_break(cls, pre: KernelSpec, post: KernelSpec) -> "ChangeFamily":
        return cls(kind=ChangeKind.STRUCTURAL_BREAK, pre_kernel=pre, post_kernel=post)

    @classmethod
    def variance_only(cls, pre: KernelSpec, a: float, b: Optional[float] = None) -> "ChangeFamily":
        return cls(kind=ChangeKind.VARIANCE_ONLY, pre_kernel=pre, pre_variance=a, post_variance=b)

    @classmethod
    def scaled(cls, pre: KernelSpec, alpha: Optional[float] = None) -> "ChangeFamily":
        return cls(kind=ChangeKind.SCALED, pre_kernel=pre, scale=alpha)

    def resolved(self, **update) -> "ChangeFamily":
        return self.model_copy(update=update)


def kernel_block(k: KernelSpec, rows, cols) -> np.ndarray:
    """Noise-free RBF block K(rows, cols)."""
    d = np.subtract.outer(np.asarray(rows, dtype=float), np.asarray(cols, dtype=float))
    return k.signal_variance * np.exp(-0.5 * d * d / (k.length_scale ** 2))


def compatible_cross_kernel(k: KernelSpec, k_other: KernelSpec) -> KernelSpec:
    """
    Cross kernel of two RBF processes driven by the same white noise:
    sqrt(s s') sqrt(2 l l' / (l^2 + l'^2)) exp(-d^2 / (l^2 + l'^2)).
    Used as the general-change cross block it keeps Sigma'_t positive semi-definite.
    """
    l2 = k.length_scale ** 2 + k_other.length_scale ** 2
    amp = np.sqrt(k.signal_variance * k_other.signal_variance) * np.sqrt(
        2.0 * k.length_scale * k_other.length_scale / l2
    )
    return KernelSpec(signal_variance=float(amp), length_scale=float(np.sqrt(0.5 * l2)), noise_variance=0.0)


def _indices(n: int, offset: int = 1) -> np.ndarray:
    return np.arange(offset, offset + n, dtype=float)


def covariance_matrix(k: KernelSpec, n: int, offset: int = 1) -> SymMatrix:
    if n < 1:
        raise ValidationFailed(f"covariance order must be >= 1, got {n}")
    idx = _indices(n, offset)
    return SymMatrix(kernel_block(k, idx, idx) + k.noise_variance * np.eye(n))


def null_covariance(fam: ChangeFamily, n: int) -> SymMatrix:
    """Sigma under H0. The variance-only family's null is a*I plus noise."""
    if fam.kind == ChangeKind.VARIANCE_ONLY:
        return SymMatrix((fam.pre_variance + fam.noise_variance) * np.eye(n))
    return covariance_matrix(fam.pre_kernel, n)


def _check_candidate(n: int, t: int) -> None:
    if not (1 < t <= n):
        raise CandidateOutOfRange(f"candidate {t} outside (1, {n}]")


def alternative_covariance(fam: ChangeFamily, n: int, t: int) -> SymMatrix:
    _check_candidate(n, t)
    if fam.needs_estimate:
        raise ValidationFailed(f"{fam.kind.value} family has an unresolved parameter; estimate it first")
    idx = _indices(n)
    a_idx, b_idx = idx[: t - 1], idx[t - 1:]
    pre = fam.pre_kernel
    noise = fam.noise_variance * np.eye(n)

    if fam.kind == ChangeKind.VARIANCE_ONLY:
        diag = np.where(idx < t, fam.pre_variance, fam.post_variance)
        return SymMatrix(np.diag(diag) + noise)

    if fam.kind == ChangeKind.SCALED:
        base = kernel_block(pre, idx, idx)
        d = np.where(idx < t, 1.0, fam.scale)
        return SymMatrix(base * np.outer(d, d) + noise)

    out = np.zeros((n, n))
    out[: t - 1, : t - 1] = kernel_block(pre, a_idx, a_idx)
    out[t - 1:, t - 1:] = kernel_block(fam.post_kernel, b_idx, b_idx)
    if fam.kind == ChangeKind.GENERAL and fam.cross_kernel != ZERO:
        cross = kernel_block(fam.cross_kernel, a_idx, b_idx)
        out[: t - 1, t - 1:] = cross
        out[t - 1:, : t - 1] = cross.T
    return SymMatrix(out + noise)


def post_regime_covariance(fam: ChangeFamily, n: int) -> SymMatrix:
    """Covariance with the whole window in the post-change regime (t = 1)."""
    if fam.kind == ChangeKind.VARIANCE_ONLY:
        return SymMatrix((fam.post_variance + fam.noise_variance) * np.eye(n))
    if fam.kind == ChangeKind.SCALED:
        idx = _indices(n)
        return SymMatrix(fam.scale ** 2 * kernel_block(fam.pre_kernel, idx, idx) + fam.noise_variance * np.eye(n))
    return covariance_matrix(fam.post_kernel.with_noise(fam.noise_variance), n)


def kernel_gradients(k: KernelSpec, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of Sigma (noise included) w.r.t. (sigma^2, l, sigma_no^2)."""
    idx = _indices(n)
    d2 = np.subtract.outer(idx, idx) ** 2
    base = np.exp(-0.5 * d2 / (k.length_scale ** 2))
    d_signal = base
    d_length = k.signal_variance * base * d2 / (k.length_scale ** 3)
    d_noise = np.eye(n)
    return d_signal, d_length, d_noise
