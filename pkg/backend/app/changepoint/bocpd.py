# app/changepoint/bocpd.py
"""
Bayesian online change point detection with a GP underlying predictive model.

The run-length posterior is kept in log space. Each step:
  1. score x_t under every run length's one-step predictive
  2. growth: r -> r+1 with weight (1 - H_t)
  3. reset: r -> 0 collecting H_t from every run length
  4. fold run lengths above max_run_length into the cap bin, normalize,
     drop entries below prune_mass and renormalize
"""
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, field_validator
from scipy.special import logsumexp
from scipy.stats import norm

from app.changepoint.gp import PredictiveGaussian, PrefixPredictor
from app.changepoint.kernels import KernelSpec
from app.errors import ValidationFailed
from app.settings import settings

log = structlog.get_logger("gpcpd.bocpd")


class RunLengthPredictor(Protocol):
    def predict(self, recent, t: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """
        Means and variances of x_t for run lengths 0..len(recent), recent
        newest first. Run length r covers the segment that started at t - r.
        """
        ...


class HazardPolicy(BaseModel):
    base: float = Field(default_factory=lambda: 1.0 / settings.HAZARD_LAMBDA, gt=0, lt=1)
    overrides: dict[int, float] = {}

    @field_validator("overrides")
    @classmethod
    def _in_unit_interval(cls, v: dict[int, float]) -> dict[int, float]:
        bad = {t: h for t, h in v.items() if not (0.0 < h < 1.0)}
        if bad:
            raise ValueError(f"hazard overrides outside (0, 1): {bad}")
        return v

    def at(self, t: int) -> float:
        return self.overrides.get(t, self.base)


class BocpdConfig(BaseModel):
    max_run_length: int = Field(default_factory=lambda: settings.MAX_RUN_LENGTH, ge=1)
    prune_mass: float = Field(default_factory=lambda: settings.PRUNE_MASS, ge=0, lt=1)
    drop_from: int = Field(default_factory=lambda: settings.DROP_FROM, ge=1)
    drop_below: int = Field(default_factory=lambda: settings.DROP_BELOW, ge=1)


@dataclass
class BocpdState:
    """Posterior over run lengths 0..len(log_probs)-1 after t steps."""
    log_probs: np.ndarray
    history: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls) -> "BocpdState":
        return cls(log_probs=np.zeros(1), history=np.zeros(0), t=0)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class StepPrediction:
    """Run-length mixture predictive for x_t made before x_t is absorbed."""
    mean: float
    variance: float
    log_evidence: float

    def as_gaussian(self) -> PredictiveGaussian:
        return PredictiveGaussian(mean=self.mean, variance=self.variance)


def bocpd_step(state: BocpdState, x: float, predictor: RunLengthPredictor, hazard: float,
               config: Optional[BocpdConfig] = None) -> tuple[BocpdState, StepPrediction]:
    cfg = config or BocpdConfig()
    if not (0.0 < hazard < 1.0):
        raise ValidationFailed(f"hazard must lie in (0, 1), got {hazard}")
    lp = state.log_probs
    width = lp.size
    means, variances = predictor.predict(state.history, state.t + 1)
    means, variances = means[:width], variances[:width]

    log_pi = norm.logpdf(x, loc=means, scale=np.sqrt(variances))
    joint = lp + log_pi

    # pre-update mixture predictive
    w = np.exp(lp)
    mix_mean = float(w @ means)
    mix_var = float(w @ (variances + means * means) - mix_mean * mix_mean)
    prediction = StepPrediction(mean=mix_mean, variance=max(mix_var, float(variances.min())),
                                log_evidence=float(logsumexp(joint)))

    growth = joint + np.log1p(-hazard)
    reset = logsumexp(joint) + np.log(hazard)
    new = np.concatenate(([reset], growth))
    cap = cfg.max_run_length
    if new.size > cap + 1:
        new[cap] = np.logaddexp(new[cap], logsumexp(new[cap + 1:]))
        new = new[: cap + 1]
    new -= logsumexp(new)
    if cfg.prune_mass > 0:
        keep = new >= np.log(cfg.prune_mass)
        if not keep.all():
            keep[int(np.argmax(new))] = True
            new = np.where(keep, new, -np.inf)
            new -= logsumexp(new)

    history = np.concatenate(([x], state.history))[:cap]
    return BocpdState(log_probs=new, history=history, t=state.t + 1), prediction


@dataclass
class RunLengthPosterior:
    """Trace of log P(r_t | x_1:t) for t = 1..n; row t has support 0..min(t, cap)."""
    log_rows: list[np.ndarray] = field(default_factory=list)

    def append(self, row: np.ndarray) -> None:
        self.log_rows.append(row)

    def __len__(self) -> int:
        return len(self.log_rows)

    def dense(self) -> np.ndarray:
        width = max((r.size for r in self.log_rows), default=0)
        out = np.zeros((len(self.log_rows), width))
        for i, row in enumerate(self.log_rows):
            out[i, : row.size] = np.exp(row)
        return out

    def map_path(self) -> np.ndarray:
        return np.array([int(np.argmax(r)) for r in self.log_rows], dtype=int)

    def to_frame(self) -> pd.DataFrame:
        mat = self.dense()
        df = pd.DataFrame(mat, columns=[f"r{j}" for j in range(mat.shape[1])])
        df.index = pd.RangeIndex(1, len(df) + 1, name="t")
        return df


def declare_changes(map_path: Sequence[int], drop_from: int, drop_below: int) -> list[int]:
    """Steps where the MAP run length falls below drop_below after reaching drop_from."""
    changes, armed = [], False
    for t, r in enumerate(map_path, start=1):
        if r >= drop_from:
            armed = True
        elif armed and r < drop_below:
            changes.append(t)
            armed = False
    return changes


@dataclass
class BocpdResult:
    posterior: RunLengthPosterior
    means: np.ndarray
    variances: np.ndarray
    log_evidence: np.ndarray
    hazards: np.ndarray
    map_path: np.ndarray
    changes: list[int]

    def predictives(self) -> list[PredictiveGaussian]:
        return [PredictiveGaussian(mean=float(m), variance=float(v)) for m, v in zip(self.means, self.variances)]

    def trace_frame(self, values) -> pd.DataFrame:
        return pd.DataFrame({
            "t": np.arange(1, len(self.means) + 1),
            "value": np.asarray(values, dtype=float),
            "mean": self.means,
            "variance": self.variances,
            "log_evidence": self.log_evidence,
            "hazard": self.hazards,
            "map_run_length": self.map_path,
        })


Hazards = Union[HazardPolicy, Mapping[int, float], float]


def _hazard_policy(hazard: Hazards) -> HazardPolicy:
    if isinstance(hazard, HazardPolicy):
        return hazard
    if isinstance(hazard, Mapping):
        return HazardPolicy(overrides=dict(hazard))
    return HazardPolicy(base=float(hazard))


def bocpd_run(x, model: Union[KernelSpec, RunLengthPredictor], hazard: Hazards,
              config: Optional[BocpdConfig] = None) -> BocpdResult:
    cfg = config or BocpdConfig()
    x = np.asarray(x, dtype=float).ravel()
    policy = _hazard_policy(hazard)
    predictor = PrefixPredictor(model, cfg.max_run_length) if isinstance(model, KernelSpec) else model

    n = x.size
    means, variances, evidence, hazards = (np.empty(n) for _ in range(4))
    trace = RunLengthPosterior()
    state = BocpdState.initial()
    for i in range(n):
        t = i + 1
        h = policy.at(t)
        state, pred = bocpd_step(state, float(x[i]), predictor, h, cfg)
        means[i], variances[i], evidence[i], hazards[i] = pred.mean, pred.variance, pred.log_evidence, h
        trace.append(state.log_probs)

    path = trace.map_path()
    changes = declare_changes(path, cfg.drop_from, cfg.drop_below)
    log.info("bocpd_done", n=n, changes=changes, overrides=len(policy.overrides))
    return BocpdResult(posterior=trace, means=means, variances=variances, log_evidence=evidence,
                       hazards=hazards, map_path=path, changes=changes)
