# app/changepoint/glrt.py
"""
Likelihood ratio tests for a single change inside a window.

Statistics:
  - mean_glrt: mean shift under a known covariance
  - cov_lrt: 2L_t = x'S^-1 x - x'S'_t^-1 x + ln(|S| / |S'_t|) for any change family
  - variance_lrt / scaled_alpha: closed forms for the diagonal-variance and
    scaled-covariance families

Thresholds come either from the concentration bounds (theoretical_thresholds)
or from Monte-Carlo quantiles of the max statistic under H0 and H1 draws
(calibrate_family_thresholds). run_test combines both thresholds into a
Change / NoChange / Inconclusive verdict.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict
from scipy import linalg

from app.changepoint import matcore
from app.changepoint.kernels import (
    ChangeFamily,
    ChangeKind,
    KernelSpec,
    alternative_covariance,
    null_covariance,
    post_regime_covariance,
)
from app.errors import CandidateOutOfRange, NoPositiveRoot, ValidationFailed
from app.metrics import CALIBRATION_SECONDS
from app.settings import settings

log = structlog.get_logger("gpcpd.glrt")


@dataclass(frozen=True)
class CandidateSet:
    """Candidate change indices t with max(margin, 1) < t <= n - margin, strictly increasing."""
    n: int
    margin: int
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(t) for t in self.indices))
        if not self.indices:
            raise CandidateOutOfRange(f"empty candidate set for n={self.n}, margin={self.margin}")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValidationFailed("candidate indices must be strictly increasing")
        lo, hi = max(self.margin, 1), self.n - self.margin
        bad = [t for t in self.indices if not (lo < t <= hi)]
        if bad:
            raise CandidateOutOfRange(f"candidates {bad} outside ({lo}, {hi}]")

    @staticmethod
    def default_margin(n: int) -> int:
        return max(2, math.ceil(0.05 * n))

    @classmethod
    def default(cls, n: int, margin: Optional[int] = None) -> "CandidateSet":
        margin = cls.default_margin(n) if margin is None else margin
        return cls(n=n, margin=margin, indices=tuple(range(margin + 1, n - margin + 1)))

    @classmethod
    def explicit(cls, indices: Sequence[int], n: int, margin: int = 0) -> "CandidateSet":
        return cls(n=n, margin=margin, indices=tuple(indices))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


class Verdict(str, Enum):
    CHANGE = "Change"
    NO_CHANGE = "NoChange"
    INCONCLUSIVE = "Inconclusive"


class LrtOutcome(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    statistic: str
    candidates: list[int]
    stats: list[float]
    t_star: int
    stat_max: float
    estimates: Optional[list[float]] = None
    threshold_h0: Optional[float] = None
    threshold_h1: Optional[float] = None
    verdict_t0: Optional[bool] = None
    verdict_t1: Optional[bool] = None
    verdict_star: Optional[Verdict] = None
    flags: list[str] = []

    def stat_at(self, t: int) -> float:
        return self.stats[self.candidates.index(t)]


def _outcome(statistic: str, candidates, stats, estimates=None, flags=None) -> LrtOutcome:
    stats = np.asarray(stats, dtype=float)
    # np.argmax returns the first maximum, i.e. the smallest candidate on ties
    i = int(np.argmax(stats))
    return LrtOutcome(
        statistic=statistic,
        candidates=[int(t) for t in candidates],
        stats=[float(s) for s in stats],
        t_star=int(candidates[i]),
        stat_max=float(stats[i]),
        estimates=None if estimates is None else [float(e) for e in estimates],
        flags=list(flags or []),
    )


def _as_series(x, n: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if n is not None and x.size != n:
        raise ValidationFailed(f"series has length {x.size}, expected {n}")
    return x


# ---------------------------------------------------------------------------
# mean change
# ---------------------------------------------------------------------------

def mean_threshold(n: int, delta: float) -> float:
    """R_{n,delta} = 1 + 2[ln(2n/delta) + sqrt(ln(2n/delta))]."""
    if not (0.0 < delta < 1.0):
        raise ValidationFailed(f"delta must lie in (0, 1), got {delta}")
    lg = math.log(2.0 * n / delta)
    return 1.0 + 2.0 * (lg + math.sqrt(lg))


def mean_glrt(x, sigma, cands: CandidateSet, delta: float) -> LrtOutcome:
    x = _as_series(x)
    n = x.size
    if cands.n != n:
        raise CandidateOutOfRange(f"candidate set built for n={cands.n}, series has n={n}")
    f = matcore.cholesky(sigma)
    sx = matcore.solve(f, x)
    k = np.arange(1, n + 1)
    stats = []
    for t in cands:
        zeta = np.sign(k - t).astype(float)
        num = float(zeta @ sx)
        stats.append(num * num / matcore.quad_form(f, zeta))
    out = _outcome("mean", list(cands), stats)
    r = mean_threshold(n, delta)
    return run_test(out, (r, r))


# ---------------------------------------------------------------------------
# covariance change
# ---------------------------------------------------------------------------

def scaled_alpha(x, null_k: KernelSpec, t: int, sigma_inv: Optional[np.ndarray] = None) -> float:
    """
    Positive root of a*alpha^2 - b*alpha - c = 0 with a the size of the second
    segment (indices >= t), b = x1' B x2 and c = x2' C x2 from the blocks of
    the inverse null covariance.
    """
    x = _as_series(x)
    n = x.size
    if not (1 < t <= n):
        raise CandidateOutOfRange(f"candidate {t} outside (1, {n}]")
    if sigma_inv is None:
        sigma_inv = matcore.inverse(matcore.cholesky(null_covariance(ChangeFamily.scaled(null_k), n)))
    s = t - 1
    x1, x2 = x[:s], x[s:]
    a = float(n - s)
    b = float(x1 @ sigma_inv[:s, s:] @ x2)
    c = float(x2 @ sigma_inv[s:, s:] @ x2)
    disc = b * b + 4.0 * a * c
    if disc < 0 or not np.isfinite(disc):
        raise NoPositiveRoot(f"negative discriminant at t={t}")
    root = (b + math.sqrt(disc)) / (2.0 * a)
    if not (root > 0.0 and np.isfinite(root)):
        raise NoPositiveRoot(f"no positive scale root at t={t} (b={b:.3g}, c={c:.3g})")
    return root


def _tail_variance(x: np.ndarray, t: int, noise: float) -> float:
    ms = float(np.mean(x[t - 1:] ** 2))
    return max(ms - noise, settings.PARAM_LOWER)


class HypothesisModel:
    """
    Null covariance Sigma and per-candidate alternatives Sigma'_t for one
    change family and window length. Factorizations of fully specified
    alternatives are built once per candidate and reused across samples.
    """

    def __init__(self, fam: ChangeFamily, n: int):
        self.family = fam
        self.n = n
        self.sigma = null_covariance(fam, n)
        self.null_factor = matcore.cholesky(self.sigma)
        self.null_logdet = matcore.log_det(self.null_factor)
        self._alt: dict[int, matcore.SpdFactorization] = {}
        self._sigma_inv: Optional[np.ndarray] = None

    @property
    def sigma_inv(self) -> np.ndarray:
        if self._sigma_inv is None:
            self._sigma_inv = matcore.inverse(self.null_factor)
        return self._sigma_inv

    def alternative(self, t: int, fam: Optional[ChangeFamily] = None) -> matcore.SymMatrix:
        return alternative_covariance(fam or self.family, self.n, t)

    def alt_factor(self, t: int) -> matcore.SpdFactorization:
        f = self._alt.get(t)
        if f is None:
            f = matcore.cholesky(self.alternative(t))
            self._alt[t] = f
        return f

    def resolve(self, x: np.ndarray, t: int) -> tuple[ChangeFamily, float]:
        """Plug the per-candidate estimate into an estimated family."""
        fam = self.family
        if fam.kind == ChangeKind.VARIANCE_ONLY:
            b = _tail_variance(x, t, fam.noise_variance)
            return fam.resolved(post_variance=b), b
        alpha = scaled_alpha(x, fam.pre_kernel, t, sigma_inv=self.sigma_inv)
        return fam.resolved(scale=alpha), alpha

    def statistic(self, x, t: int) -> float:
        x = _as_series(x, self.n)
        q0 = matcore.quad_form(self.null_factor, x)
        if self.family.needs_estimate:
            f = matcore.cholesky(self.alternative(t, self.resolve(x, t)[0]))
        else:
            f = self.alt_factor(t)
        return q0 - matcore.quad_form(f, x) + self.null_logdet - matcore.log_det(f)

    def statistics(self, xs, cands: CandidateSet) -> np.ndarray:
        """(samples, candidates) matrix of 2L_t; NaN where a candidate was skipped."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != self.n:
            raise ValidationFailed(f"samples have length {xs.shape[1]}, model has n={self.n}")
        out = np.empty((xs.shape[0], len(cands)))
        if not self.family.needs_estimate:
            q0 = matcore.quad_forms(self.null_factor, xs)
            for j, t in enumerate(cands):
                f = self.alt_factor(t)
                out[:, j] = q0 - matcore.quad_forms(f, xs) + self.null_logdet - matcore.log_det(f)
            return out
        for i, x in enumerate(xs):
            for j, t in enumerate(cands):
                try:
                    out[i, j] = self.statistic(x, t)
                except NoPositiveRoot:
                    out[i, j] = np.nan
        return out

    def max_statistics(self, xs, cands: CandidateSet) -> np.ndarray:
        return np.nanmax(self.statistics(xs, cands), axis=1)


def cov_lrt(x, null_k: KernelSpec, fam: ChangeFamily, cands: CandidateSet,
            model: Optional[HypothesisModel] = None) -> LrtOutcome:
    """Per-candidate 2L_t for the given family; verdicts left unset."""
    x = _as_series(x)
    n = x.size
    if cands.n != n:
        raise CandidateOutOfRange(f"candidate set built for n={cands.n}, series has n={n}")
    if fam.pre_kernel != null_k:
        fam = fam.resolved(pre_kernel=null_k)
    model = model or HypothesisModel(fam, n)

    q0 = matcore.quad_form(model.null_factor, x)
    kept, stats, estimates, flags = [], [], [], []
    for t in cands:
        if fam.needs_estimate:
            try:
                resolved, est = model.resolve(x, t)
            except NoPositiveRoot:
                flags.append(f"no_positive_root:{t}")
                continue
            f = matcore.cholesky(model.alternative(t, resolved))
            estimates.append(est)
        else:
            f = model.alt_factor(t)
        stats.append(q0 - matcore.quad_form(f, x) + model.null_logdet - matcore.log_det(f))
        kept.append(t)
    if not kept:
        raise NoPositiveRoot("every candidate was skipped")
    return _outcome(fam.kind.value, kept, stats, estimates if fam.needs_estimate else None, flags)


def variance_lrt(x, a: float, cands: CandidateSet) -> LrtOutcome:
    """
    Diagonal variance change a -> b with b estimated on the tail i > t:
    2L_t = sum_{i>t}(x_i^2/a - 1) + (n-t) ln(a (n-t) / sum_{i>t} x_i^2).
    """
    if a <= 0:
        raise ValidationFailed(f"pre-change variance must be positive, got {a}")
    x = _as_series(x)
    n = x.size
    stats, b_hat, flags = [], [], []
    for t in cands:
        m = n - t
        if m < 2:
            raise CandidateOutOfRange(f"candidate {t} leaves {m} tail points, need >= 2")
        s = float(np.sum(x[t:] ** 2))
        if s == 0.0:
            stats.append(math.inf)
            b_hat.append(0.0)
            flags.append(f"degenerate_segment:{t}")
            log.warning("degenerate_tail", t=t)
            continue
        stats.append(s / a - m + m * math.log(a * m / s))
        b_hat.append(s / m)
    return _outcome("variance", list(cands), stats, b_hat, flags)


# ---------------------------------------------------------------------------
# spectra and mixture laws
# ---------------------------------------------------------------------------

def lrt_spectrum(sigma, sigma_alt, hypothesis: Literal["null", "alternative"] = "null") -> np.ndarray:
    """
    Ascending eigenvalues of S^1/2 S'^-1 S^1/2 (null) or S'^1/2 S^-1 S'^1/2
    (alternative), computed as the spectrum of B'B with B = L_num^-1 L_other.
    """
    f = matcore.cholesky(sigma)
    f_alt = matcore.cholesky(sigma_alt)
    if hypothesis == "null":
        b = linalg.solve_triangular(f_alt.lower, f.lower, lower=True)
    else:
        b = linalg.solve_triangular(f.lower, f_alt.lower, lower=True)
    return matcore.sym_eigenvalues(b.T @ b)


def lrt_mixture_sample(eigenvalues, size: int, rng: np.random.Generator,
                       hypothesis: Literal["null", "alternative"] = "null") -> np.ndarray:
    """
    Draws of the fixed-t statistic minus its log-determinant term:
    sum (1 - lambda_i) w_i under H0, sum (mu_i - 1) w_i under H1, w_i ~ chi2(1).
    """
    lam = np.asarray(eigenvalues, dtype=float)
    w = rng.chisquare(1.0, size=(size, lam.size))
    weights = 1.0 - lam if hypothesis == "null" else lam - 1.0
    return w @ weights


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

class ThresholdSpec(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    delta: float
    bound_V: float
    c0: float
    n: int
    h0_base: float
    h1_base: float
    r_h0: float
    r_h1: float
    regime: Literal["separated", "unique", "none"]
    valid: bool
    c0_dominates: bool

    @staticmethod
    def spread(c0: float, bound_v: float, n: int, delta: float) -> float:
        return c0 * bound_v ** 2 * n * math.sqrt(0.5 * math.log(2.0 / delta))

    def rescaled(self, bound_V: float) -> "ThresholdSpec":
        """Same covariance terms, different data bound V."""
        return _threshold_spec(self.h0_base, self.h1_base, self.c0, self.n, self.delta, bound_V, self.c0_dominates)


def _threshold_spec(h0_base, h1_base, c0, n, delta, bound_v, c0_dominates) -> ThresholdSpec:
    s = ThresholdSpec.spread(c0, bound_v, n, delta)
    r_h0, r_h1 = h0_base + s, h1_base - s
    if math.isclose(r_h0, r_h1, rel_tol=1e-12, abs_tol=1e-12):
        regime = "unique"
    elif r_h0 < r_h1:
        regime = "separated"
    else:
        regime = "none"
    return ThresholdSpec(
        delta=delta, bound_V=bound_v, c0=c0, n=n, h0_base=h0_base, h1_base=h1_base,
        r_h0=r_h0, r_h1=r_h1, regime=regime, valid=r_h1 >= r_h0, c0_dominates=c0_dominates,
    )


def theoretical_thresholds(null_k: KernelSpec, fam: ChangeFamily, n: int, delta: float,
                           bound_V: float, cands: Optional[CandidateSet] = None) -> ThresholdSpec:
    """
    r_h0 = max_t (n - tr(S S'_t^-1) + ln|S|/|S'_t|) + C0 V^2 n sqrt(ln(2/delta)/2)
    r_h1 = min_t (tr(S'_t S^-1) - n + ln|S|/|S'_t|) - C0 V^2 n sqrt(ln(2/delta)/2)
    with C0 = 1/lmin(S) + 1/min(lmin(S), lmin(S'_post)).
    """
    if not (0.0 < delta < 1.0):
        raise ValidationFailed(f"delta must lie in (0, 1), got {delta}")
    if bound_V <= 0:
        raise ValidationFailed(f"bound V must be positive, got {bound_V}")
    if fam.needs_estimate:
        raise ValidationFailed("theoretical thresholds need a fully specified change family")
    if fam.pre_kernel != null_k:
        fam = fam.resolved(pre_kernel=null_k)
    cands = cands or CandidateSet.default(n)
    model = HypothesisModel(fam, n)
    sigma = model.sigma.entries
    lmin_null = float(matcore.sym_eigenvalues(model.sigma)[0])
    lmin_post = float(matcore.sym_eigenvalues(post_regime_covariance(fam, n))[0])
    c0 = 1.0 / lmin_null + 1.0 / min(lmin_null, lmin_post)

    h0_terms, h1_terms, dominated = [], [], True
    for t in cands:
        alt = model.alternative(t)
        f_alt = model.alt_factor(t)
        ld = model.null_logdet - matcore.log_det(f_alt)
        h0_terms.append(n - float(np.trace(matcore.solve(f_alt, sigma))) + ld)
        h1_terms.append(float(np.trace(matcore.solve(model.null_factor, alt.entries))) - n + ld)
        c_t = 1.0 / lmin_null + 1.0 / float(matcore.sym_eigenvalues(alt)[0])
        dominated = dominated and c_t <= c0 * (1.0 + 1e-9)
    if not dominated:
        log.warning("c0_not_dominating", n=n, kind=fam.kind.value)
    return _threshold_spec(max(h0_terms), min(h1_terms), c0, n, delta, bound_V, dominated)


@dataclass(frozen=True)
class EmpiricalThresholds:
    r_h0: float
    r_h1: float
    null_stats: np.ndarray = field(repr=False)
    alt_stats: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {"r_h0": self.r_h0, "r_h1": self.r_h1, "mc_samples": int(self.null_stats.size)}


def make_rng(seed: Union[int, np.random.Generator, None]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(settings.SEED if seed is None else seed))


def _draw(factor: matcore.SpdFactorization, size: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((size, factor.order))
    return z @ factor.lower.T


def calibrate_family_thresholds(fam: ChangeFamily, n: int, delta: float, mc_samples: int, seed,
                                cands: Optional[CandidateSet] = None,
                                change_at: Optional[int] = None) -> EmpiricalThresholds:
    """
    r_h0 = (1-delta) quantile of max_t 2L_t under H0 draws from Sigma;
    r_h1 = delta quantile of the same statistic under H1 draws from
    Sigma'_{change_at} (default: the window centre n//2 + 1).
    """
    if mc_samples < 200:
        raise ValidationFailed(f"mc_samples must be >= 200, got {mc_samples}")
    if not (0.0 < delta < 1.0):
        raise ValidationFailed(f"delta must lie in (0, 1), got {delta}")
    if fam.needs_estimate:
        raise ValidationFailed("empirical calibration needs a fully specified change family")
    cands = cands or CandidateSet.default(n)
    change_at = n // 2 + 1 if change_at is None else change_at
    rng = make_rng(seed)

    with CALIBRATION_SECONDS.time():
        model = HypothesisModel(fam, n)
        h1_factor = matcore.cholesky(model.alternative(change_at))
        null_draws = _draw(model.null_factor, mc_samples, rng)
        alt_draws = _draw(h1_factor, mc_samples, rng)
        null_stats = model.max_statistics(null_draws, cands)
        alt_stats = model.max_statistics(alt_draws, cands)

    r_h0 = float(np.quantile(null_stats, 1.0 - delta, method="linear"))
    r_h1 = float(np.quantile(alt_stats, delta, method="linear"))
    log.debug("thresholds_calibrated", n=n, delta=delta, mc_samples=mc_samples, r_h0=r_h0, r_h1=r_h1)
    return EmpiricalThresholds(r_h0=r_h0, r_h1=r_h1, null_stats=null_stats, alt_stats=alt_stats)


def calibrate_empirical_thresholds(null_k: KernelSpec, alt_k: KernelSpec, window_n: int, delta: float,
                                   mc_samples: int, seed, cands: Optional[CandidateSet] = None) -> EmpiricalThresholds:
    """Structural-break calibration: first half null_k, second half alt_k (noise from null_k)."""
    fam = ChangeFamily.structural_break(null_k, alt_k.with_noise(null_k.noise_variance))
    return calibrate_family_thresholds(fam, window_n, delta, mc_samples, seed, cands=cands)


Thresholds = Union[ThresholdSpec, EmpiricalThresholds, tuple]


def run_test(outcome: LrtOutcome, thresholds: Thresholds) -> LrtOutcome:
    if isinstance(thresholds, tuple):
        r_h0, r_h1 = thresholds
    else:
        r_h0, r_h1 = thresholds.r_h0, thresholds.r_h1
    t0 = bool(outcome.stat_max >= r_h0)
    t1 = bool(outcome.stat_max >= r_h1)
    if t0 and t1:
        verdict = Verdict.CHANGE
    elif not t0 and not t1:
        verdict = Verdict.NO_CHANGE
    else:
        verdict = Verdict.INCONCLUSIVE
    return outcome.model_copy(update={
        "threshold_h0": float(r_h0),
        "threshold_h1": float(r_h1),
        "verdict_t0": t0,
        "verdict_t1": t1,
        "verdict_star": verdict,
    })
