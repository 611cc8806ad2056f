# app/schemas.py
"""
Run configurations for the CLI commands and the report payloads they emit.
Configs reject unknown keys; every default is resolved here so it can be
echoed into the report.
"""
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.changepoint.bocpd import BocpdConfig
from app.changepoint.kernels import KernelSpec
from app.settings import settings


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default_factory=lambda: settings.SEED)
    threads: int = Field(default_factory=lambda: settings.THREADS, ge=1)


class DataConfig(RunConfig):
    data: str
    column: Optional[str] = None
    center: bool = False
    standardize: bool = False
    train_end: int = Field(default_factory=lambda: settings.TRAIN_END, ge=1)


class SimulateConfig(RunConfig):
    preset: Optional[str] = None
    spec_file: Optional[str] = None
    out: str = "data.csv"

    @model_validator(mode="after")
    def _one_source(self):
        if (self.preset is None) == (self.spec_file is None):
            raise ValueError("give exactly one of preset or spec_file")
        return self


DEFAULT_FIT_INIT = KernelSpec(signal_variance=1.0, length_scale=10.0, noise_variance=0.1)


class FitCommandConfig(DataConfig):
    train_start: int = Field(default=1, ge=1)
    init: KernelSpec = DEFAULT_FIT_INIT
    max_iters: int = Field(default_factory=lambda: settings.FIT_MAX_ITERS, ge=1)
    out: Optional[str] = None

    @field_validator("init", mode="before")
    @classmethod
    def _fill_init(cls, v):
        if isinstance(v, dict):
            return {**DEFAULT_FIT_INIT.model_dump(), **v}
        return v


FamilyName = Literal["general", "structural_break", "variance_only", "scaled", "mean"]


class LrtTestConfig(DataConfig):
    kernel: KernelSpec
    family: FamilyName = "structural_break"
    mode: Literal["theoretical", "empirical"] = "empirical"
    post_kernel: Optional[KernelSpec] = None
    cross: Literal["zero", "compatible", "null"] = "zero"
    pre_variance: Optional[float] = Field(default=None, gt=0)
    post_variance: Optional[float] = Field(default=None, gt=0)
    scale: Optional[float] = Field(default=None, gt=0)
    delta: float = Field(default_factory=lambda: settings.DELTA, gt=0, lt=1)
    mc_samples: int = Field(default_factory=lambda: settings.MC_SAMPLES, ge=200)
    bound_v: Optional[float] = Field(default=None, gt=0)
    margin: Optional[int] = Field(default=None, ge=0)
    start: int = Field(default=1, ge=1)
    end: Optional[int] = None
    out: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _fill_post_kernel(cls, data):
        if isinstance(data, dict) and isinstance(data.get("post_kernel"), dict):
            base = data.get("kernel")
            base = base.model_dump() if isinstance(base, KernelSpec) else (base or {})
            data = {**data, "post_kernel": {**base, **data["post_kernel"]}}
        return data


class BocpdCommandConfig(DataConfig):
    kernel: KernelSpec
    hazard_lambda: float = Field(default_factory=lambda: settings.HAZARD_LAMBDA, gt=1)
    bocpd: BocpdConfig = Field(default_factory=BocpdConfig)
    out: Optional[str] = None
    run_length_csv: Optional[str] = None
    trace_csv: Optional[str] = None


class CbocpdCommandConfig(BocpdCommandConfig):
    half_window: int = Field(default_factory=lambda: settings.HALF_WINDOW, ge=1)
    delta: float = Field(default_factory=lambda: settings.DELTA, gt=0, lt=0.5)
    mc_samples: int = Field(default_factory=lambda: settings.MC_SAMPLES, ge=200)
    refit_alternative: bool = True
    threshold_h0: Optional[float] = None
    threshold_h1: Optional[float] = None
    margin: Optional[int] = Field(default=None, ge=0)
    windows_csv: Optional[str] = None

    @model_validator(mode="after")
    def _override_pair(self):
        if (self.threshold_h0 is None) != (self.threshold_h1 is None):
            raise ValueError("threshold_h0 and threshold_h1 must be given together")
        return self


class EvalConfig(RunConfig):
    predictions: Optional[str] = None
    data: Optional[str] = None
    column: Optional[str] = None
    eval_start: Optional[int] = Field(default=None, ge=1)
    eval_end: Optional[int] = Field(default=None, ge=1)
    paired_a: Optional[str] = None
    paired_b: Optional[str] = None
    scores_csv: Optional[str] = None
    out: Optional[str] = None

    @model_validator(mode="after")
    def _something_to_do(self):
        if self.predictions is None and self.paired_a is None:
            raise ValueError("give predictions or paired_a/paired_b")
        if (self.paired_a is None) != (self.paired_b is None):
            raise ValueError("paired_a and paired_b must be given together")
        return self


class ExperimentConfig(RunConfig):
    preset: str = "LEN_CHANGE"
    runs: int = Field(default=10, ge=1)
    train_end: int = Field(default_factory=lambda: settings.TRAIN_END, ge=4)
    init: KernelSpec = KernelSpec(signal_variance=1.0, length_scale=5.0, noise_variance=0.1)
    hazard_lambda: float = Field(default_factory=lambda: settings.HAZARD_LAMBDA, gt=1)
    half_window: int = Field(default_factory=lambda: settings.HALF_WINDOW, ge=1)
    delta: float = Field(default_factory=lambda: settings.DELTA, gt=0, lt=0.5)
    mc_samples: int = Field(default_factory=lambda: settings.MC_SAMPLES, ge=200)
    refit_alternative: bool = True
    out: Optional[str] = None
    runs_csv: Optional[str] = None


class RunScores(BaseModel):
    seed: int
    true_cps: list[int]
    null_kernel: KernelSpec
    bocpd_nll: float
    bocpd_mse: float
    cbocpd_nll: float
    cbocpd_mse: float
    bocpd_changes: list[int]
    cbocpd_changes: list[int]
    cbocpd_regimes: list[int] = []


class DetectionReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    command: str
    n: int
    kernel: KernelSpec
    changes: list[int]
    confirmed_changes: list[dict] = []
    confirmed_nonchanges: list[dict] = []
    regimes: list[dict] = []
    hazards: list[float]
    map_run_length: list[int]
    predictive_mean: list[float]
    predictive_variance: list[float]
    score: Optional[dict] = None
    config: dict
    provenance: dict
