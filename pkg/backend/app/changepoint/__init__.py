# Numerical core: kernels, GP, likelihood ratio tests, BOCPD and Confirmatory BOCPD

from app.changepoint.bocpd import BocpdConfig, HazardPolicy, bocpd_run, bocpd_step
from app.changepoint.cbocpd import CbocpdConfig, RegimePredictor, ThresholdCache, cbocpd_run, window_verdict
from app.changepoint.evaluation import ScoreSummary, paired_compare, score
from app.changepoint.glrt import (
    CandidateSet,
    LrtOutcome,
    Verdict,
    calibrate_empirical_thresholds,
    cov_lrt,
    mean_glrt,
    run_test,
    theoretical_thresholds,
    variance_lrt,
)
from app.changepoint.gp import fit_hyperparameters, log_marginal_likelihood, posterior_predictive
from app.changepoint.kernels import ChangeFamily, KernelSpec
from app.changepoint.synth import ScenarioSpec, preset, sample_piecewise_gp

__all__ = [
    "BocpdConfig", "HazardPolicy", "bocpd_run", "bocpd_step",
    "CbocpdConfig", "RegimePredictor", "ThresholdCache", "cbocpd_run", "window_verdict",
    "ScoreSummary", "paired_compare", "score",
    "CandidateSet", "LrtOutcome", "Verdict", "calibrate_empirical_thresholds", "cov_lrt", "mean_glrt",
    "run_test", "theoretical_thresholds", "variance_lrt",
    "fit_hyperparameters", "log_marginal_likelihood", "posterior_predictive",
    "ChangeFamily", "KernelSpec",
    "ScenarioSpec", "preset", "sample_piecewise_gp",
]
