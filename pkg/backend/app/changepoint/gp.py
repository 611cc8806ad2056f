# app/changepoint/gp.py
"""
Zero-mean GP utilities: log marginal likelihood and its gradient, the
one-step posterior predictive, type-II maximum likelihood fitting of the RBF
hyperparameters, and a prefix predictor that serves every run length of the
online detector from one factorization.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import linalg, optimize
from scipy.stats import norm

from app.changepoint import matcore
from app.changepoint.kernels import KernelSpec, covariance_matrix, kernel_block, kernel_gradients
from app.errors import NumericalFailure, ValidationFailed
from app.metrics import HYPERPARAMETER_FITS_TOTAL
from app.settings import settings

log = structlog.get_logger("gpcpd.gp")

LOG_2PI = float(np.log(2.0 * np.pi))


def _series(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValidationFailed("series contains non-finite values")
    return x


@dataclass(frozen=True)
class PredictiveGaussian:
    mean: float
    variance: float

    def logpdf(self, value: float) -> float:
        return float(norm.logpdf(value, loc=self.mean, scale=np.sqrt(self.variance)))


def log_marginal_likelihood(k: KernelSpec, x, offset: int = 1) -> float:
    x = _series(x)
    f = matcore.cholesky(covariance_matrix(k, len(x), offset=offset))
    return -0.5 * matcore.quad_form(f, x) - 0.5 * matcore.log_det(f) - 0.5 * len(x) * LOG_2PI


def lml_and_gradient(k: KernelSpec, x) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient w.r.t. (sigma^2, l, sigma_no^2)."""
    x = _series(x)
    n = len(x)
    f = matcore.cholesky(covariance_matrix(k, n))
    alpha = matcore.solve(f, x)
    lml = -0.5 * float(x @ alpha) - 0.5 * matcore.log_det(f) - 0.5 * n * LOG_2PI
    w = np.outer(alpha, alpha) - matcore.inverse(f)
    grad = np.array([0.5 * np.sum(w * d) for d in kernel_gradients(k, n)])
    return lml, grad


def posterior_predictive(k: KernelSpec, history, horizon_index: int, history_start: int = 1) -> PredictiveGaussian:
    """
    Predictive for x at horizon_index given history observed at
    history_start, history_start+1, ... An empty history returns the prior.
    """
    prior = k.signal_variance + k.noise_variance
    history = _series(history)
    if history.size == 0:
        return PredictiveGaussian(mean=0.0, variance=prior)
    idx = np.arange(history_start, history_start + history.size, dtype=float)
    if horizon_index <= idx[-1]:
        raise ValidationFailed(f"horizon {horizon_index} must come after the last history index {int(idx[-1])}")
    f = matcore.cholesky(covariance_matrix(k, history.size, offset=history_start))
    k_star = kernel_block(k, idx, [float(horizon_index)])[:, 0]
    mean = float(k_star @ matcore.solve(f, history))
    variance = prior - matcore.quad_form(f, k_star)
    return PredictiveGaussian(mean=mean, variance=max(variance, k.noise_variance))


class FitConfig(BaseModel):
    max_iters: int = Field(default_factory=lambda: settings.FIT_MAX_ITERS, ge=1)
    tol: float = Field(default_factory=lambda: settings.FIT_TOL, gt=0)
    gtol: float = Field(default_factory=lambda: settings.FIT_GTOL, gt=0)
    lower: float = Field(default_factory=lambda: settings.PARAM_LOWER, gt=0)
    upper: float = Field(default_factory=lambda: settings.PARAM_UPPER, gt=0)
    fix_noise: bool = False


class FitResult(BaseModel):
    kernel: KernelSpec
    lml: float
    initial_lml: float
    improved: bool
    iterations: int = 0
    message: str = ""


def _projected_gradient(theta: np.ndarray, g: np.ndarray, lo: float, hi: float) -> np.ndarray:
    pg = g.copy()
    pg[(theta <= lo) & (g > 0)] = 0.0
    pg[(theta >= hi) & (g < 0)] = 0.0
    return pg


def fit_hyperparameters(x, init: KernelSpec, config: Optional[FitConfig] = None) -> FitResult:
    """
    Maximize the log marginal likelihood over log(sigma^2, l, sigma_no^2)
    inside [lower, upper] with L-BFGS-B. With fix_noise the noise variance
    stays at init's value and only sigma^2 and l move.

    The first pass stops on a relative likelihood change of tol; when that
    leaves a projected gradient above gtol / 10 a second, gradient-only pass
    polishes the point, so a refit from a fitted kernel returns it unchanged.
    The result never scores below init: if the optimum does not beat it,
    init comes back with improved=False.
    """
    cfg = config or FitConfig()
    x = _series(x)
    if x.size < 4:
        raise ValidationFailed(f"need at least 4 points to fit hyperparameters, got {x.size}")

    free = 2 if cfg.fix_noise else 3
    lo, hi = np.log(cfg.lower), np.log(cfg.upper)
    init_lml, init_grad = lml_and_gradient(init, x)

    params0 = init.as_vector()
    inside = bool(np.all((params0[:free] >= cfg.lower) & (params0[:free] <= cfg.upper)))
    theta0 = np.log(np.clip(params0[:free], cfg.lower, cfg.upper))
    start_grad = -init_grad[:free] * params0[:free]
    if inside and np.max(np.abs(_projected_gradient(theta0, start_grad, lo, hi))) < cfg.gtol:
        HYPERPARAMETER_FITS_TOTAL.labels(improved="false").inc()
        return FitResult(kernel=init, lml=init_lml, initial_lml=init_lml, improved=False, message="stationary at init")

    def unpack(theta) -> np.ndarray:
        return np.concatenate((np.exp(theta), params0[free:]))

    def objective(theta):
        params = unpack(theta)
        try:
            lml, grad = lml_and_gradient(KernelSpec.from_vector(params), x)
        except NumericalFailure:
            return np.inf, np.zeros_like(theta)
        return -lml, -grad[:free] * params[:free]

    def minimize(start, ftol: float, gtol: float):
        return optimize.minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=[(lo, hi)] * free,
            options={"maxiter": cfg.max_iters, "ftol": ftol, "gtol": gtol},
        )

    res = minimize(theta0, cfg.tol / max(1.0, abs(init_lml)), cfg.gtol)
    iterations = int(res.nit)
    polish_gtol = 0.1 * cfg.gtol
    if np.isfinite(res.fun) and np.max(np.abs(_projected_gradient(res.x, res.jac, lo, hi))) > polish_gtol:
        polished = minimize(res.x, 0.0, polish_gtol)
        iterations += int(polished.nit)
        if np.isfinite(polished.fun) and polished.fun <= res.fun:
            res = polished
    fitted = KernelSpec.from_vector(unpack(res.x))
    fitted_lml = log_marginal_likelihood(fitted, x)

    if not np.isfinite(fitted_lml) or fitted_lml < init_lml:
        log.warning("fit_did_not_improve", initial_lml=init_lml, fitted_lml=fitted_lml, message=str(res.message))
        HYPERPARAMETER_FITS_TOTAL.labels(improved="false").inc()
        return FitResult(kernel=init, lml=init_lml, initial_lml=init_lml, improved=False,
                         iterations=iterations, message=str(res.message))

    HYPERPARAMETER_FITS_TOTAL.labels(improved="true").inc()
    log.debug("fit_done", lml=fitted_lml, initial_lml=init_lml, iterations=iterations, **fitted.model_dump(exclude={"family"}))
    return FitResult(kernel=fitted, lml=fitted_lml, initial_lml=init_lml, improved=fitted_lml > init_lml,
                     iterations=iterations, message=str(res.message))


class PrefixPredictor:
    """
    One-step predictives for every run length r = 0..max_history.

    The recent history is ordered newest first. Under a stationary kernel its
    covariance is the same Toeplitz matrix at every step, and the leading r x r
    block of its Cholesky factor is the factor for the last r points, so a
    single triangular solve gives all run lengths at once.
    """

    def __init__(self, k: KernelSpec, max_history: int):
        if max_history < 1:
            raise ValidationFailed("max_history must be >= 1")
        self.kernel = k
        self.max_history = max_history
        self.prior_variance = k.signal_variance + k.noise_variance
        self.floor = max(k.noise_variance, 1e-12 * self.prior_variance)
        factor = matcore.cholesky(covariance_matrix(k, max_history))
        self._lower = factor.lower
        lags = np.arange(1, max_history + 1, dtype=float)
        k_star = k.signal_variance * np.exp(-0.5 * lags * lags / k.length_scale ** 2)
        self._v = linalg.solve_triangular(self._lower, k_star, lower=True)
        self._var_drop = np.cumsum(self._v * self._v)

    def predict(self, recent, t: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances for run lengths 0..len(recent); the kernel is stationary, so t is unused."""
        recent = np.asarray(recent, dtype=float)
        m = min(recent.size, self.max_history)
        means = np.zeros(m + 1)
        variances = np.full(m + 1, self.prior_variance)
        if m:
            w = linalg.solve_triangular(self._lower[:m, :m], recent[:m], lower=True)
            means[1:] = np.cumsum(self._v[:m] * w)
            variances[1:] = self.prior_variance - self._var_drop[:m]
        return means, np.maximum(variances, self.floor)
