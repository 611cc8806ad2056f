# app/changepoint/evaluation.py
"""
One-step-ahead prediction scores (NLL, MSE) and paired detector comparison.
"""
import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy import stats

from app.errors import InsufficientRuns, Misalignment, ValidationFailed

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ScoreSummary(BaseModel):
    mean_nll: float
    mean_mse: float
    ci95_nll: float
    ci95_mse: float
    n_points: int


class PairedComparison(BaseModel):
    metric: str
    n_runs: int
    mean_difference: float
    t_statistic: Optional[float]
    p_value: float


def _ci95(v: np.ndarray) -> float:
    if v.size < 2:
        return 0.0
    return float(1.96 * np.std(v, ddof=1) / math.sqrt(v.size))


def pointwise_scores(means, variances, actual) -> pd.DataFrame:
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if not (means.shape == variances.shape == actual.shape):
        raise Misalignment(f"trace shapes differ: means {means.shape}, variances {variances.shape}, actual {actual.shape}")
    if np.any(variances <= 0):
        raise ValidationFailed("predictive variances must be positive")
    resid = actual - means
    return pd.DataFrame({
        "t": np.arange(1, actual.size + 1),
        "actual": actual,
        "mean": means,
        "variance": variances,
        "nll": HALF_LOG_2PI + 0.5 * np.log(variances) + 0.5 * resid * resid / variances,
        "se": resid * resid,
    })


def score(means, variances, actual, eval_range: Optional[tuple[int, int]] = None) -> ScoreSummary:
    """
    Mean NLL and MSE over eval_range, given as 1-based inclusive (start, end);
    the whole trace when omitted.
    """
    frame = pointwise_scores(means, variances, actual)
    if eval_range is not None:
        lo, hi = eval_range
        if not (1 <= lo <= hi <= len(frame)):
            raise Misalignment(f"eval range {eval_range} outside 1..{len(frame)}")
        frame = frame.iloc[lo - 1: hi]
    nll, se = frame["nll"].to_numpy(), frame["se"].to_numpy()
    return ScoreSummary(
        mean_nll=float(nll.mean()),
        mean_mse=float(se.mean()),
        ci95_nll=_ci95(nll),
        ci95_mse=_ci95(se),
        n_points=int(nll.size),
    )


def paired_compare(a: Sequence[float], b: Sequence[float], metric: str = "nll") -> PairedComparison:
    """
    One-sided paired t-test of "a scores lower than b". A zero spread of
    differences gives p = 0.5 for a zero mean and 0 or 1 otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise Misalignment(f"run counts differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise InsufficientRuns(f"need at least 2 paired runs, got {a.size}")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        p = 0.5 if mean == 0.0 else (0.0 if mean < 0 else 1.0)
        return PairedComparison(metric=metric, n_runs=int(d.size), mean_difference=mean, t_statistic=None, p_value=p)
    t = mean / (sd / math.sqrt(d.size))
    p = float(stats.t.cdf(t, df=d.size - 1))
    return PairedComparison(metric=metric, n_runs=int(d.size), mean_difference=mean, t_statistic=t, p_value=p)


def rebase(values: dict[str, float]) -> dict[str, float]:
    """Subtract the best (lowest) entry so the winner reads 0.00."""
    best = min(values.values())
    return {k: v - best for k, v in values.items()}
