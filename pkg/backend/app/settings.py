# app/settings.py
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False

    # Cholesky jitter ladder: JITTER_BASE * tr(m)/n * factor
    JITTER_BASE: float = 1e-10
    JITTER_FACTORS: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)

    # Run-length support
    MAX_RUN_LENGTH: int = 256
    PRUNE_MASS: float = 1e-12

    # BOCPD / CBOCPD defaults (timescale lambda=200 -> hazard 0.005)
    HAZARD_LAMBDA: float = 200.0
    HALF_WINDOW: int = 25
    DELTA: float = 0.05
    MC_SAMPLES: int = 1000
    SEED: int = 0
    THREADS: int = 1
    THRESHOLD_CACHE_DIGITS: int = 4

    # change declaration from the MAP run-length path
    DROP_FROM: int = 10
    DROP_BELOW: int = 3

    # training prefix (1..TRAIN_END) used for the null kernel
    TRAIN_END: int = 100

    # hyperparameter fitting
    FIT_MAX_ITERS: int = 200
    FIT_TOL: float = 1e-6
    FIT_GTOL: float = 1e-5
    PARAM_LOWER: float = 1e-4
    PARAM_UPPER: float = 1e4

    model_config = SettingsConfigDict(env_file=".env", env_prefix="GPCPD_", case_sensitive=False)


settings = Settings()
