# app/orchestrator.py
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
import pydantic
import structlog

from app.changepoint.bocpd import BocpdConfig, HazardPolicy, bocpd_run
from app.changepoint.cbocpd import CbocpdConfig, ThresholdCache, cbocpd_run
from app.changepoint.evaluation import paired_compare, rebase, score
from app.changepoint.gp import fit_hyperparameters
from app.changepoint.synth import preset, sample_piecewise_gp
from app.errors import ValidationFailed
from app.schemas import ExperimentConfig, RunScores

log = structlog.get_logger("gpcpd.orchestrator")


class ExperimentOrchestrator:
    """
    Runs seeded synthetic experiments:
    - pipeline: simulate -> fit null kernel on the training prefix -> BOCPD and
      CBOCPD over the whole series -> score the test range
    - fan-out over seeds on a thread pool, gathered in seed order
    Calibrated thresholds are shared across runs through one cache.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.cache = ThresholdCache()
        # one calibration seed for every run so the cache is shared
        self.cbocpd_config = self._cbocpd_config()

    def _cbocpd_config(self) -> CbocpdConfig:
        c = self.cfg
        try:
            return CbocpdConfig(
                half_window=c.half_window,
                delta=c.delta,
                hazard_const=1.0 / c.hazard_lambda,
                mc_samples=c.mc_samples,
                seed=c.seed,
                refit_alternative=c.refit_alternative,
            )
        except pydantic.ValidationError as exc:
            raise ValidationFailed(str(exc)) from exc

    def pipeline(self, seed: int) -> RunScores:
        c = self.cfg
        series = sample_piecewise_gp(preset(c.preset, seed))
        x = series.values
        null_k = fit_hyperparameters(x[: c.train_end], c.init).kernel
        eval_range = (c.train_end + 1, x.size)

        base = bocpd_run(x, null_k, HazardPolicy(base=1.0 / c.hazard_lambda), BocpdConfig())
        confirm = cbocpd_run(x, null_k, self.cbocpd_config, cache=self.cache)
        s_base = score(base.means, base.variances, x, eval_range)
        s_conf = score(confirm.bocpd.means, confirm.bocpd.variances, x, eval_range)
        log.info("experiment_run", seed=seed, bocpd_nll=s_base.mean_nll, cbocpd_nll=s_conf.mean_nll,
                 true_cps=series.true_cps, cbocpd_changes=confirm.bocpd.changes)
        return RunScores(
            seed=seed, true_cps=series.true_cps, null_kernel=null_k,
            bocpd_nll=s_base.mean_nll, bocpd_mse=s_base.mean_mse,
            cbocpd_nll=s_conf.mean_nll, cbocpd_mse=s_conf.mean_mse,
            bocpd_changes=base.changes, cbocpd_changes=confirm.bocpd.changes,
            cbocpd_regimes=sorted(confirm.regimes),
        )

    def fan_out(self) -> list[RunScores]:
        seeds = [self.cfg.seed + i for i in range(self.cfg.runs)]
        with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
            return list(pool.map(self.pipeline, seeds))

    def summarize(self, runs: list[RunScores]) -> dict:
        b_nll = np.array([r.bocpd_nll for r in runs])
        c_nll = np.array([r.cbocpd_nll for r in runs])
        b_mse = np.array([r.bocpd_mse for r in runs])
        c_mse = np.array([r.cbocpd_mse for r in runs])
        summary = {
            "preset": self.cfg.preset,
            "runs": len(runs),
            "mean_nll": {"bocpd": float(b_nll.mean()), "cbocpd": float(c_nll.mean())},
            "mean_mse": {"bocpd": float(b_mse.mean()), "cbocpd": float(c_mse.mean())},
        }
        summary["rebased_nll"] = rebase(summary["mean_nll"])
        if len(runs) >= 2:
            summary["paired"] = {
                "nll": paired_compare(c_nll, b_nll, metric="nll").model_dump(),
                "mse": paired_compare(c_mse, b_mse, metric="mse").model_dump(),
            }
        return summary


def run_experiment(cfg: ExperimentConfig, orchestrator: Optional[ExperimentOrchestrator] = None) -> tuple[list[RunScores], dict]:
    orch = orchestrator or ExperimentOrchestrator(cfg)
    runs = orch.fan_out()
    return runs, orch.summarize(runs)
