# app/changepoint/cbocpd.py
"""
Confirmatory BOCPD: a structural-break likelihood ratio test on the window
x_{t-m..t+m} sets the hazard handed to the BOCPD recursion at step t.

  Change and tau* == t  -> 1 - delta
  NoChange              -> delta
  otherwise             -> hazard_const

Steps with t <= m or t >= n - m keep hazard_const. Window tests depend only
on the raw series, so they are computed up front on a thread pool and the
recursion then runs sequentially.

With refit_alternative the second half of every window gets its own signal
variance and length scale. The H0 threshold is then calibrated with that
same refit applied to each null draw, and a confirmed change hands its
refitted kernel to the run lengths that start inside the new regime.
"""
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.changepoint import matcore
from app.changepoint.bocpd import BocpdConfig, BocpdResult, HazardPolicy, bocpd_run
from app.changepoint.glrt import (
    CandidateSet,
    EmpiricalThresholds,
    LrtOutcome,
    Verdict,
    calibrate_empirical_thresholds,
    cov_lrt,
    make_rng,
    run_test,
)
from app.changepoint.gp import FitConfig, PrefixPredictor, fit_hyperparameters
from app.changepoint.kernels import ChangeFamily, KernelSpec, covariance_matrix
from app.errors import NumericalFailure, ValidationFailed
from app.metrics import CALIBRATION_SECONDS, HAZARD_OVERRIDES_TOTAL, THRESHOLD_CACHE_TOTAL, WINDOWS_TESTED_TOTAL
from app.settings import settings

log = structlog.get_logger("gpcpd.cbocpd")

MIN_FIT_POINTS = 4


class CbocpdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    half_window: int = Field(default_factory=lambda: settings.HALF_WINDOW, ge=1)
    delta: float = Field(default_factory=lambda: settings.DELTA, gt=0, lt=0.5)
    hazard_const: float = Field(default_factory=lambda: 1.0 / settings.HAZARD_LAMBDA, gt=0, lt=1)
    mc_samples: int = Field(default_factory=lambda: settings.MC_SAMPLES, ge=200)
    seed: int = Field(default_factory=lambda: settings.SEED)
    refit_alternative: bool = True
    regime_kernels: bool = True
    threshold_override: Optional[tuple[float, float]] = None
    margin: Optional[int] = Field(default=None, ge=0)
    threads: int = Field(default_factory=lambda: settings.THREADS, ge=1)
    cache_digits: int = Field(default_factory=lambda: settings.THRESHOLD_CACHE_DIGITS, ge=1)
    bocpd: BocpdConfig = Field(default_factory=BocpdConfig)
    fit: FitConfig = Field(default_factory=FitConfig)

    @model_validator(mode="after")
    def _window_fits_margin(self):
        n_w = 2 * self.half_window + 1
        margin = CandidateSet.default_margin(n_w) if self.margin is None else self.margin
        if self.half_window + 1 <= margin or self.half_window + 1 > n_w - margin:
            raise ValueError(f"window centre {self.half_window + 1} is not a candidate with margin {margin}")
        if self.refit_alternative and self.half_window + 1 < MIN_FIT_POINTS:
            raise ValueError(
                f"half_window={self.half_window} leaves {self.half_window + 1} points for the refit, "
                f"need at least {MIN_FIT_POINTS}"
            )
        return self

    @property
    def window_length(self) -> int:
        return 2 * self.half_window + 1

    @property
    def candidates(self) -> CandidateSet:
        return CandidateSet.default(self.window_length, self.margin)

    @property
    def refit(self) -> FitConfig:
        return self.fit.model_copy(update={"fix_noise": True})


def _round_sig(v: float, digits: int) -> float:
    return float(f"{v:.{digits - 1}e}")


def _rounded(k: KernelSpec, digits: int) -> KernelSpec:
    return KernelSpec(
        signal_variance=_round_sig(k.signal_variance, digits),
        length_scale=_round_sig(k.length_scale, digits),
        noise_variance=_round_sig(k.noise_variance, digits) if k.noise_variance > 0 else 0.0,
    )


def refit_alternative(window, null_k: KernelSpec, cfg: CbocpdConfig) -> KernelSpec:
    """Signal variance and length scale of window[m:], noise held at null_k's."""
    return fit_hyperparameters(np.asarray(window)[cfg.half_window:], null_k, cfg.refit).kernel


def refit_statistic(window, null_k: KernelSpec, cfg: CbocpdConfig) -> tuple[LrtOutcome, KernelSpec]:
    alt_k = refit_alternative(window, null_k, cfg)
    return cov_lrt(window, null_k, ChangeFamily.structural_break(null_k, alt_k), cfg.candidates), alt_k


def calibrate_refit_null(null_k: KernelSpec, cfg: CbocpdConfig, seed=None) -> np.ndarray:
    """
    max_t 2L_t of cfg.mc_samples H0 draws, each tested against the kernel
    refitted on its own second half. Draws whose test fails come back NaN.
    """
    rng = make_rng(cfg.seed if seed is None else seed)
    factor = matcore.cholesky(covariance_matrix(null_k, cfg.window_length))
    draws = rng.standard_normal((cfg.mc_samples, cfg.window_length)) @ factor.lower.T
    stats = np.full(cfg.mc_samples, np.nan)
    with CALIBRATION_SECONDS.time():
        for i, draw in enumerate(draws):
            try:
                stats[i] = refit_statistic(draw, null_k, cfg)[0].stat_max
            except NumericalFailure as exc:
                log.debug("refit_draw_failed", draw=i, error=str(exc))
    return stats


class ThresholdCache:
    """
    Empirical thresholds keyed on kernels rounded to a few significant digits.
    Calibration runs on the rounded kernels, so a cached value is a pure
    function of its key no matter which window computed it first.
    """

    def __init__(self, digits: int = 4):
        self.digits = digits
        self._store: dict[tuple, object] = {}
        self._lock = threading.Lock()
        self._key_locks: dict[tuple, threading.Lock] = {}

    def __len__(self) -> int:
        return len(self._store)

    def _lookup(self, key: tuple):
        with self._lock:
            hit = self._store.get(key)
        THRESHOLD_CACHE_TOTAL.labels(result="miss" if hit is None else "hit").inc()
        return hit

    def _insert(self, key: tuple, value):
        with self._lock:
            return self._store.setdefault(key, value)

    def get(self, null_k: KernelSpec, alt_k: KernelSpec, window_n: int, delta: float,
            mc_samples: int, seed: int, margin: Optional[int] = None) -> EmpiricalThresholds:
        rn, ra = _rounded(null_k, self.digits), _rounded(alt_k, self.digits)
        key = ("pair", tuple(rn.as_vector()), tuple(ra.as_vector()), window_n, delta, mc_samples, seed, margin)
        hit = self._lookup(key)
        if hit is not None:
            return hit
        cands = CandidateSet.default(window_n, margin)
        return self._insert(key, calibrate_empirical_thresholds(rn, ra, window_n, delta, mc_samples, seed, cands=cands))

    def refit_null(self, null_k: KernelSpec, cfg: CbocpdConfig) -> float:
        """(1 - delta) quantile of the refit statistic under H0; one calibration per rounded null kernel."""
        rn = _rounded(null_k, self.digits)
        key = ("refit_h0", tuple(rn.as_vector()), cfg.window_length, cfg.delta, cfg.mc_samples, cfg.seed,
               cfg.margin, tuple(sorted(cfg.refit.model_dump().items())))
        hit = self._lookup(key)
        if hit is not None:
            return hit
        # double-checked so concurrent windows share one calibration
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                hit = self._store.get(key)
            if hit is not None:
                return hit
            stats = calibrate_refit_null(rn, cfg)
            kept = stats[np.isfinite(stats)]
            if kept.size < 0.5 * stats.size:
                raise NumericalFailure(f"refit calibration failed on {stats.size - kept.size} of {stats.size} draws")
            r_h0 = float(np.quantile(kept, 1.0 - cfg.delta, method="linear"))
            log.info("refit_threshold_calibrated", r_h0=r_h0, draws=int(kept.size), **rn.model_dump(exclude={"family"}))
            return self._insert(key, r_h0)

    def thresholds(self, null_k: KernelSpec, alt_k: KernelSpec, cfg: CbocpdConfig) -> EmpiricalThresholds:
        """
        Thresholds for one window. Without refit both come from the fixed
        (null_k, alt_k) calibration. With refit r_h0 comes from the refit null
        calibration and r_h1 stays the delta quantile under draws from alt_k.
        """
        pair = self.get(null_k, alt_k, cfg.window_length, cfg.delta, cfg.mc_samples, cfg.seed, cfg.margin)
        if not cfg.refit_alternative:
            return pair
        return EmpiricalThresholds(r_h0=self.refit_null(null_k, cfg), r_h1=pair.r_h1,
                                   null_stats=pair.null_stats, alt_stats=pair.alt_stats)


@dataclass(frozen=True)
class WindowTest:
    outcome: LrtOutcome
    alt_kernel: KernelSpec


def window_verdict(window, null_k: KernelSpec, cfg: CbocpdConfig,
                   cache: Optional[ThresholdCache] = None) -> WindowTest:
    """Structural-break test on one window of length 2m+1; verdicts set."""
    window = np.asarray(window, dtype=float).ravel()
    if window.size != cfg.window_length:
        raise ValidationFailed(f"window has length {window.size}, expected {cfg.window_length}")

    if cfg.refit_alternative:
        outcome, alt_k = refit_statistic(window, null_k, cfg)
    else:
        alt_k = null_k
        outcome = cov_lrt(window, null_k, ChangeFamily.structural_break(null_k, alt_k), cfg.candidates)

    if cfg.threshold_override is not None:
        thresholds = cfg.threshold_override
    else:
        cache = cache or ThresholdCache(cfg.cache_digits)
        thresholds = cache.thresholds(null_k, alt_k, cfg)
    return WindowTest(outcome=run_test(outcome, thresholds), alt_kernel=alt_k)


class RegimePredictor:
    """
    Run-length predictive where a run length that started at or after a
    confirmed change uses the kernel refitted at that change. Run lengths
    that started before the first confirmed change use the null kernel.
    """

    def __init__(self, null_k: KernelSpec, regimes: Mapping[int, KernelSpec], max_history: int):
        self.starts = np.array(sorted(regimes), dtype=int)
        kernels = [null_k] + [regimes[int(s)] for s in self.starts]
        built: dict[KernelSpec, PrefixPredictor] = {}
        for k in kernels:
            if k not in built:
                built[k] = PrefixPredictor(k, max_history)
        self._predictors = [built[k] for k in kernels]
        self.max_history = max_history

    def kernel_at(self, start: int) -> KernelSpec:
        """Kernel of a segment whose first point is x_start."""
        return self._predictors[int(np.searchsorted(self.starts, start, side="right"))].kernel

    def predict(self, recent, t: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        if t is None:
            raise ValidationFailed("RegimePredictor needs the step index t")
        recent = np.asarray(recent, dtype=float)
        m = min(recent.size, self.max_history)
        regime = np.searchsorted(self.starts, t - np.arange(m + 1), side="right")
        means, variances = np.empty(m + 1), np.empty(m + 1)
        for j in np.unique(regime):
            mu, var = self._predictors[j].predict(recent[:m])
            sel = regime == j
            means[sel], variances[sel] = mu[sel], var[sel]
        return means, variances


class WindowRecord(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    t: int
    hazard: float
    verdict: Optional[Verdict] = None
    tau_star: Optional[int] = None
    stat_max: Optional[float] = None
    threshold_h0: Optional[float] = None
    threshold_h1: Optional[float] = None
    alt_kernel: Optional[KernelSpec] = None
    failed: bool = False


@dataclass
class CbocpdResult:
    bocpd: BocpdResult
    windows: list[WindowRecord]
    confirmed_changes: list[WindowRecord]
    confirmed_nonchanges: list[WindowRecord]
    null_kernel: Optional[KernelSpec] = None
    regimes: dict[int, KernelSpec] = field(default_factory=dict)

    @property
    def hazards(self) -> np.ndarray:
        return self.bocpd.hazards

    def regime_rows(self) -> list[dict]:
        """One row per regime: first index and the kernel its run lengths use."""
        rows = [] if self.null_kernel is None else [{"start": 1, **self.null_kernel.model_dump(exclude={"family"})}]
        return rows + [{"start": t, **k.model_dump(exclude={"family"})} for t, k in sorted(self.regimes.items())]

    def regime_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.regime_rows(), columns=["start", "signal_variance", "length_scale", "noise_variance"])


def cbocpd_run(x, null_k: KernelSpec, cfg: Optional[CbocpdConfig] = None,
               cache: Optional[ThresholdCache] = None) -> CbocpdResult:
    cfg = cfg or CbocpdConfig()
    x = np.asarray(x, dtype=float).ravel()
    n, m = x.size, cfg.half_window
    if cfg.window_length > n:
        raise ValidationFailed(f"window length {cfg.window_length} exceeds series length {n}")
    cache = cache or ThresholdCache(cfg.cache_digits)
    centres = list(range(m + 1, n - m))
    if cfg.refit_alternative and cfg.threshold_override is None and centres:
        cache.refit_null(null_k, cfg)

    def test(t: int) -> Optional[WindowTest]:
        try:
            return window_verdict(x[t - m - 1: t + m], null_k, cfg, cache)
        except NumericalFailure as exc:
            log.warning("window_failed", t=t, error=str(exc))
            return None

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        tests = list(pool.map(test, centres))

    overrides: dict[int, float] = {}
    regimes: dict[int, KernelSpec] = {}
    records: list[WindowRecord] = []
    changes, nonchanges = [], []
    for t, wt in zip(centres, tests):
        if wt is None:
            records.append(WindowRecord(t=t, hazard=cfg.hazard_const, failed=True))
            HAZARD_OVERRIDES_TOTAL.labels(kind="const").inc()
            continue
        out = wt.outcome
        tau_star = t - m - 1 + out.t_star
        WINDOWS_TESTED_TOTAL.labels(verdict=out.verdict_star.value).inc()
        if out.verdict_star == Verdict.CHANGE and tau_star == t:
            hazard, kind = 1.0 - cfg.delta, "change"
        elif out.verdict_star == Verdict.NO_CHANGE:
            hazard, kind = cfg.delta, "nonchange"
        else:
            hazard, kind = cfg.hazard_const, "const"
        HAZARD_OVERRIDES_TOTAL.labels(kind=kind).inc()
        rec = WindowRecord(
            t=t, hazard=hazard, verdict=out.verdict_star, tau_star=tau_star, stat_max=out.stat_max,
            threshold_h0=out.threshold_h0, threshold_h1=out.threshold_h1,
            alt_kernel=wt.alt_kernel if cfg.refit_alternative else None,
        )
        records.append(rec)
        if kind == "change":
            overrides[t] = hazard
            changes.append(rec)
            if cfg.refit_alternative and cfg.regime_kernels and wt.alt_kernel != null_k:
                regimes[t] = wt.alt_kernel
        elif kind == "nonchange":
            overrides[t] = hazard
            nonchanges.append(rec)

    log.info("cbocpd_windows", n=n, tested=len(centres), changes=[r.t for r in changes],
             nonchanges=len(nonchanges), regimes=sorted(regimes), cached_thresholds=len(cache))
    model = RegimePredictor(null_k, regimes, cfg.bocpd.max_run_length) if regimes else null_k
    result = bocpd_run(x, model, HazardPolicy(base=cfg.hazard_const, overrides=overrides), cfg.bocpd)
    return CbocpdResult(bocpd=result, windows=records, confirmed_changes=changes, confirmed_nonchanges=nonchanges,
                        null_kernel=null_k, regimes=regimes)
