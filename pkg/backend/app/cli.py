# app/cli.py
"""
Command-line entry point: python -m app.cli <command> [options]

Commands: simulate, fit, test, bocpd, cbocpd, eval, experiment.
Reports go to stdout (and --out) as sorted-key JSON; logs go to stderr.
Exit codes: 0 ok, 2 validation error, 3 numerical failure, 4 I/O error.
"""
import argparse
import os
import sys
from typing import Any, Optional

import numpy as np
import pandas as pd
import pydantic
import structlog

from app import __version__
from app.changepoint.bocpd import HazardPolicy, bocpd_run
from app.changepoint.cbocpd import CbocpdConfig, cbocpd_run
from app.changepoint.evaluation import paired_compare, pointwise_scores, score
from app.changepoint.glrt import (
    CandidateSet,
    calibrate_family_thresholds,
    cov_lrt,
    mean_glrt,
    run_test,
    theoretical_thresholds,
)
from app.changepoint.gp import FitConfig, fit_hyperparameters
from app.changepoint.kernels import ChangeFamily, ChangeKind, compatible_cross_kernel, covariance_matrix
from app.changepoint.synth import ScenarioSpec, preset, sample_piecewise_gp
from app.errors import ChangepointError, ValidationFailed
from app.logconfig import configure_logging
from app.metrics import write_metrics
from app.orchestrator import run_experiment
from app.provenance import make_provenance
from app.schemas import (
    BocpdCommandConfig,
    CbocpdCommandConfig,
    DetectionReport,
    EvalConfig,
    ExperimentConfig,
    FitCommandConfig,
    LrtTestConfig,
    SimulateConfig,
)
from app.storage import dumps_report, read_frame, read_json, read_series, read_yaml, write_frame, write_json, write_series

log = structlog.get_logger("gpcpd.cli")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _flag_kernel(args, prefix: str = "") -> Optional[dict]:
    vals = {
        "signal_variance": getattr(args, f"{prefix}signal", None),
        "length_scale": getattr(args, f"{prefix}length", None),
        "noise_variance": getattr(args, f"{prefix}noise", None),
    }
    vals = {k: v for k, v in vals.items() if v is not None}
    return vals or None


def _load_kernel(path: str) -> dict:
    data = read_json(path)
    return data.get("kernel", data) if isinstance(data, dict) else data


def resolve_config(model_cls, args, flags: dict[str, Any]):
    """YAML file (--config) first, explicit flags on top, then pydantic validation."""
    merged: dict[str, Any] = read_yaml(args.config) if getattr(args, "config", None) else {}
    for key, value in flags.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    try:
        return model_cls.model_validate(merged)
    except pydantic.ValidationError as exc:
        raise ValidationFailed(str(exc)) from exc


def _common_flags(args) -> dict:
    return {"seed": args.seed, "threads": args.threads}


def _data_flags(args) -> dict:
    return {
        **_common_flags(args),
        "data": args.data,
        "column": args.column,
        "center": True if args.center else None,
        "standardize": True if args.standardize else None,
        "train_end": args.train_end,
    }


def _kernel_flag(args) -> Optional[dict]:
    kernel = _load_kernel(args.kernel) if args.kernel else None
    overrides = _flag_kernel(args)
    if kernel is None:
        return overrides
    return {**kernel, **(overrides or {})}


def load_data(cfg) -> tuple[np.ndarray, dict]:
    """Read the series and apply training-prefix centering/standardizing."""
    x = read_series(cfg.data, cfg.column)
    prep: dict[str, Any] = {"center": cfg.center, "standardize": cfg.standardize}
    train = x[: min(cfg.train_end, x.size)]
    if cfg.center or cfg.standardize:
        mu = float(train.mean())
        x = x - mu
        prep["mean"] = mu
    if cfg.standardize:
        sd = float(train.std(ddof=1)) if train.size > 1 else 0.0
        if sd <= 0:
            raise ValidationFailed("cannot standardize: training prefix has zero spread")
        x = x / sd
        prep["std"] = sd
    return x, prep


def _report_base(cfg, data_path: Optional[str] = None) -> dict:
    resolved = cfg.model_dump(mode="json")
    return {
        "config": resolved,
        "provenance": make_provenance(config=resolved, data_path=data_path, seed=getattr(cfg, "seed", None)),
    }


def _eval_range(n: int, train_end: int) -> tuple[int, int]:
    return (train_end + 1, n) if n > train_end else (1, n)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> dict:
    cfg = resolve_config(SimulateConfig, args, {
        **_common_flags(args), "preset": args.preset, "spec_file": args.spec, "out": args.out,
    })
    if cfg.preset is not None:
        spec = preset(cfg.preset, cfg.seed)
    else:
        raw = read_json(cfg.spec_file) if cfg.spec_file.endswith(".json") else read_yaml(cfg.spec_file)
        try:
            spec = ScenarioSpec.model_validate(raw).model_copy(update={"seed": cfg.seed})
        except pydantic.ValidationError as exc:
            raise ValidationFailed(str(exc)) from exc
    series = sample_piecewise_gp(spec)
    write_series(cfg.out, series.values)
    truth_path = os.path.splitext(cfg.out)[0] + ".truth.json"
    report = {
        "command": "simulate",
        "data": cfg.out,
        "n": int(series.values.size),
        "true_cps": series.true_cps,
        "spec": spec.model_dump(mode="json"),
        **_report_base(cfg),
    }
    write_json(truth_path, report)
    log.info("simulated", out=cfg.out, truth=truth_path, true_cps=series.true_cps)
    return report


def cmd_fit(args) -> dict:
    init = _flag_kernel(args, "init_")
    cfg = resolve_config(FitCommandConfig, args, {
        **_data_flags(args), "train_start": args.train_start, "init": init,
        "max_iters": args.max_iters, "out": args.out,
    })
    x, prep = load_data(cfg)
    end = min(cfg.train_end, x.size)
    if cfg.train_start > end:
        raise ValidationFailed(f"empty training range {cfg.train_start}..{end}")
    fit = fit_hyperparameters(x[cfg.train_start - 1: end], cfg.init, FitConfig(max_iters=cfg.max_iters))
    report = {
        "command": "fit",
        "kernel": fit.kernel.model_dump(mode="json"),
        "init": cfg.init.model_dump(mode="json"),
        "lml": fit.lml,
        "initial_lml": fit.initial_lml,
        "improved": fit.improved,
        "iterations": fit.iterations,
        "train_range": [cfg.train_start, end],
        "preprocessing": prep,
        **_report_base(cfg, cfg.data),
    }
    if cfg.out:
        write_json(cfg.out, report)
    return report


def build_family(cfg: LrtTestConfig) -> ChangeFamily:
    k = cfg.kernel
    kind = ChangeKind(cfg.family)
    if kind == ChangeKind.STRUCTURAL_BREAK:
        return ChangeFamily.structural_break(k, cfg.post_kernel or k)
    if kind == ChangeKind.GENERAL:
        post = cfg.post_kernel or k
        if cfg.cross == "zero":
            cross = "zero"
        elif cfg.cross == "compatible":
            cross = compatible_cross_kernel(k, post)
        else:
            cross = k.with_noise(0.0)
        return ChangeFamily.general(k, post, cross)
    if kind == ChangeKind.VARIANCE_ONLY:
        return ChangeFamily.variance_only(k, cfg.pre_variance or k.signal_variance, cfg.post_variance)
    return ChangeFamily.scaled(k, cfg.scale)


def cmd_test(args) -> dict:
    cfg = resolve_config(LrtTestConfig, args, {
        **_data_flags(args),
        "kernel": _kernel_flag(args),
        "family": args.family,
        "mode": args.mode,
        "post_kernel": _flag_kernel(args, "post_"),
        "cross": args.cross,
        "pre_variance": args.pre_variance,
        "post_variance": args.post_variance,
        "scale": args.scale,
        "delta": args.delta,
        "mc_samples": args.mc_samples,
        "bound_v": args.bound_v,
        "margin": args.margin,
        "start": args.start,
        "end": args.end,
        "out": args.out,
    })
    x, prep = load_data(cfg)
    end = cfg.end or x.size
    if not (cfg.start < end <= x.size):
        raise ValidationFailed(f"test range {cfg.start}..{end} outside 1..{x.size}")
    window = x[cfg.start - 1: end]
    n = window.size
    cands = CandidateSet.default(n, cfg.margin)
    extra: dict[str, Any] = {}

    if cfg.family == "mean":
        outcome = mean_glrt(window, covariance_matrix(cfg.kernel, n), cands, cfg.delta)
    else:
        fam = build_family(cfg)
        outcome = cov_lrt(window, cfg.kernel, fam, cands)
        if fam.needs_estimate:
            # thresholds for the alternative estimated at the maximizing candidate
            est = outcome.estimates[outcome.candidates.index(outcome.t_star)]
            key = "post_variance" if fam.kind == ChangeKind.VARIANCE_ONLY else "scale"
            fam = fam.resolved(**{key: est})
            extra["threshold_family_estimate"] = {key: est, "t": outcome.t_star}
        if cfg.mode == "theoretical":
            bound_v = cfg.bound_v or float(np.max(np.abs(window)))
            if bound_v <= 0:
                raise ValidationFailed("bound V must be positive; the window is all zeros")
            spec = theoretical_thresholds(cfg.kernel, fam, n, cfg.delta, bound_v, cands)
            outcome = run_test(outcome, spec)
            extra["thresholds"] = spec.model_dump(mode="json")
            if not spec.valid:
                outcome = outcome.model_copy(update={"flags": outcome.flags + ["no_valid_threshold"]})
        else:
            emp = calibrate_family_thresholds(fam, n, cfg.delta, cfg.mc_samples, cfg.seed, cands)
            outcome = run_test(outcome, emp)
            extra["thresholds"] = emp.summary()

    report = {
        "command": "test",
        "outcome": outcome.model_dump(mode="json"),
        "t_star_global": cfg.start - 1 + outcome.t_star,
        "preprocessing": prep,
        **extra,
        **_report_base(cfg, cfg.data),
    }
    if cfg.out:
        write_json(cfg.out, report)
    return report


def _detection_report(command: str, cfg, x: np.ndarray, result, prep: dict, extra: dict) -> dict:
    rng = _eval_range(x.size, cfg.train_end)
    summary = score(result.means, result.variances, x, rng)
    report = DetectionReport(
        command=command,
        n=int(x.size),
        kernel=cfg.kernel,
        changes=result.changes,
        hazards=result.hazards.tolist(),
        map_run_length=result.map_path.tolist(),
        predictive_mean=result.means.tolist(),
        predictive_variance=result.variances.tolist(),
        score={**summary.model_dump(), "eval_range": list(rng)},
        **extra,
        **_report_base(cfg, cfg.data),
    ).model_dump(mode="json")
    report["preprocessing"] = prep
    if cfg.run_length_csv:
        write_frame(cfg.run_length_csv, result.posterior.to_frame(), index=True)
    if cfg.trace_csv:
        write_frame(cfg.trace_csv, result.trace_frame(x))
    if cfg.out:
        write_json(cfg.out, report)
    return report


def _detector_flags(args) -> dict:
    bocpd = {"max_run_length": args.max_run_length}
    return {
        **_data_flags(args),
        "kernel": _kernel_flag(args),
        "hazard_lambda": args.hazard_lambda,
        "bocpd": {k: v for k, v in bocpd.items() if v is not None} or None,
        "out": args.out,
        "run_length_csv": args.run_length_csv,
        "trace_csv": args.trace_csv,
    }


def cmd_bocpd(args) -> dict:
    cfg = resolve_config(BocpdCommandConfig, args, _detector_flags(args))
    x, prep = load_data(cfg)
    result = bocpd_run(x, cfg.kernel, HazardPolicy(base=1.0 / cfg.hazard_lambda), cfg.bocpd)
    return _detection_report("bocpd", cfg, x, result, prep, {})


def cmd_cbocpd(args) -> dict:
    cfg = resolve_config(CbocpdCommandConfig, args, {
        **_detector_flags(args),
        "half_window": args.half_window,
        "delta": args.delta,
        "mc_samples": args.mc_samples,
        "refit_alternative": False if args.no_refit else None,
        "threshold_h0": args.threshold_h0,
        "threshold_h1": args.threshold_h1,
        "margin": args.margin,
        "windows_csv": args.windows_csv,
    })
    x, prep = load_data(cfg)
    override = None if cfg.threshold_h0 is None else (cfg.threshold_h0, cfg.threshold_h1)
    try:
        run_cfg = CbocpdConfig(
            half_window=cfg.half_window, delta=cfg.delta, hazard_const=1.0 / cfg.hazard_lambda,
            mc_samples=cfg.mc_samples, seed=cfg.seed, refit_alternative=cfg.refit_alternative,
            threshold_override=override, margin=cfg.margin, threads=cfg.threads, bocpd=cfg.bocpd,
        )
    except pydantic.ValidationError as exc:
        raise ValidationFailed(str(exc)) from exc
    result = cbocpd_run(x, cfg.kernel, run_cfg)
    if cfg.windows_csv:
        write_frame(cfg.windows_csv, pd.DataFrame([r.model_dump(mode="json", exclude={"alt_kernel"}) for r in result.windows]))
    extra = {
        "confirmed_changes": [r.model_dump(mode="json") for r in result.confirmed_changes],
        "confirmed_nonchanges": [r.model_dump(mode="json") for r in result.confirmed_nonchanges],
        "regimes": result.regime_rows(),
    }
    return _detection_report("cbocpd", cfg, x, result.bocpd, prep, extra)


def cmd_eval(args) -> dict:
    cfg = resolve_config(EvalConfig, args, {
        **_common_flags(args),
        "predictions": args.predictions, "data": args.data, "column": args.column,
        "eval_start": args.eval_start, "eval_end": args.eval_end,
        "paired_a": args.paired[0] if args.paired else None,
        "paired_b": args.paired[1] if args.paired else None,
        "scores_csv": args.scores_csv, "out": args.out,
    })
    report: dict[str, Any] = {"command": "eval"}
    if cfg.predictions:
        pred = read_frame(cfg.predictions)
        missing = {"mean", "variance"} - set(pred.columns)
        if missing:
            raise ValidationFailed(f"{cfg.predictions} lacks columns {sorted(missing)}")
        if cfg.data:
            actual = read_series(cfg.data, cfg.column)
        elif "value" in pred.columns:
            actual = pred["value"].to_numpy(dtype=float)
        else:
            raise ValidationFailed("give --data or a predictions file with a 'value' column")
        n = len(pred)
        rng = (cfg.eval_start or 1, cfg.eval_end or n)
        summary = score(pred["mean"].to_numpy(), pred["variance"].to_numpy(), actual, rng)
        report["score"] = {**summary.model_dump(), "eval_range": list(rng)}
        if cfg.scores_csv:
            write_frame(cfg.scores_csv, pointwise_scores(pred["mean"], pred["variance"], actual))
    if cfg.paired_a:
        a, b = read_frame(cfg.paired_a), read_frame(cfg.paired_b)
        metrics = [m for m in ("nll", "mse") if m in a.columns and m in b.columns]
        if not metrics:
            raise ValidationFailed("paired score files need an 'nll' or 'mse' column")
        report["paired"] = {m: paired_compare(a[m].to_numpy(), b[m].to_numpy(), metric=m).model_dump() for m in metrics}
    report.update(_report_base(cfg, cfg.predictions))
    if cfg.out:
        write_json(cfg.out, report)
    return report


def cmd_experiment(args) -> dict:
    cfg = resolve_config(ExperimentConfig, args, {
        **_common_flags(args),
        "preset": args.preset, "runs": args.runs, "train_end": args.train_end,
        "hazard_lambda": args.hazard_lambda, "half_window": args.half_window, "delta": args.delta,
        "mc_samples": args.mc_samples, "refit_alternative": False if args.no_refit else None,
        "out": args.out, "runs_csv": args.runs_csv,
    })
    preset(cfg.preset)  # validates the name before any work
    runs, summary = run_experiment(cfg)
    if cfg.runs_csv:
        write_frame(cfg.runs_csv, pd.DataFrame([
            r.model_dump(include={"seed", "bocpd_nll", "bocpd_mse", "cbocpd_nll", "cbocpd_mse"}) for r in runs
        ]))
    report = {
        "command": "experiment",
        "summary": summary,
        "runs": [r.model_dump(mode="json") for r in runs],
        **_report_base(cfg),
    }
    if cfg.out:
        write_json(cfg.out, report)
    return report


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--config", help="YAML run configuration; flags override it")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    p.add_argument("--log-json", action="store_true", help="JSON log lines")
    p.add_argument("--metrics-file", help="write Prometheus metrics here on exit")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="CSV of values")
    p.add_argument("--column", help="column name or 0-based position for multi-column CSVs")
    p.add_argument("--center", action="store_true", help="subtract the training-prefix mean")
    p.add_argument("--standardize", action="store_true", help="center and divide by the training-prefix std")
    p.add_argument("--train-end", type=int, help="last index (1-based) of the training prefix")


def _add_kernel(p: argparse.ArgumentParser, prefix: str = "") -> None:
    dash = prefix.replace("_", "-")
    if not prefix:
        p.add_argument("--kernel", help="kernel JSON (a fit report or a flat KernelSpec)")
    p.add_argument(f"--{dash}signal", type=float, dest=f"{prefix}signal", help="signal variance")
    p.add_argument(f"--{dash}length", type=float, dest=f"{prefix}length", help="length scale")
    p.add_argument(f"--{dash}noise", type=float, dest=f"{prefix}noise", help="noise variance")


def _add_detector(p: argparse.ArgumentParser) -> None:
    _add_data(p)
    _add_kernel(p)
    p.add_argument("--hazard-lambda", type=float, help="constant hazard timescale (H = 1/lambda)")
    p.add_argument("--max-run-length", type=int, help="run-length cap")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--run-length-csv", help="dense run-length posterior CSV")
    p.add_argument("--trace-csv", help="per-step predictive trace CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpcpd", description="GP change-point detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic series")
    _add_common(p)
    p.add_argument("--preset", help="LEN_CHANGE or VAR_CHANGE")
    p.add_argument("--spec", help="scenario spec (JSON or YAML)")
    p.add_argument("--out", help="output CSV (truth JSON written alongside)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit RBF hyperparameters on a training range")
    _add_common(p)
    _add_data(p)
    _add_kernel(p, "init_")
    p.add_argument("--train-start", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out", help="kernel report JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="likelihood ratio test for one change")
    _add_common(p)
    _add_data(p)
    _add_kernel(p)
    _add_kernel(p, "post_")
    p.add_argument("--family", choices=["general", "structural_break", "variance_only", "scaled", "mean"])
    p.add_argument("--mode", choices=["theoretical", "empirical"])
    p.add_argument("--cross", choices=["zero", "compatible", "null"])
    p.add_argument("--pre-variance", type=float)
    p.add_argument("--post-variance", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--bound-v", type=float)
    p.add_argument("--margin", type=int)
    p.add_argument("--start", type=int, help="first index of the tested window")
    p.add_argument("--end", type=int, help="last index of the tested window")
    p.add_argument("--out")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bocpd", help="BOCPD with a constant hazard")
    _add_common(p)
    _add_detector(p)
    p.set_defaults(func=cmd_bocpd)

    p = sub.add_parser("cbocpd", help="Confirmatory BOCPD")
    _add_common(p)
    _add_detector(p)
    p.add_argument("--half-window", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--no-refit", action="store_true", help="use the null kernel as the alternative")
    p.add_argument("--threshold-h0", type=float, help="fixed H0 threshold (skips calibration)")
    p.add_argument("--threshold-h1", type=float, help="fixed H1 threshold (skips calibration)")
    p.add_argument("--margin", type=int)
    p.add_argument("--windows-csv", help="per-window test records CSV")
    p.set_defaults(func=cmd_cbocpd)

    p = sub.add_parser("eval", help="score predictions / compare runs")
    _add_common(p)
    p.add_argument("--predictions", help="trace CSV with mean, variance (and value) columns")
    p.add_argument("--data")
    p.add_argument("--column")
    p.add_argument("--eval-start", type=int)
    p.add_argument("--eval-end", type=int)
    p.add_argument("--paired", nargs=2, metavar=("A_CSV", "B_CSV"), help="per-run scores; tests A lower than B")
    p.add_argument("--scores-csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="seeded synthetic BOCPD vs CBOCPD comparison")
    _add_common(p)
    p.add_argument("--preset")
    p.add_argument("--runs", type=int)
    p.add_argument("--train-end", type=int)
    p.add_argument("--hazard-lambda", type=float)
    p.add_argument("--half-window", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--no-refit", action="store_true")
    p.add_argument("--out")
    p.add_argument("--runs-csv")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, True if args.log_json else None)
    code = 0
    try:
        report = args.func(args)
        sys.stdout.write(dumps_report(report))
    except ChangepointError as exc:
        log.error("command_failed", command=args.command, error=str(exc), kind=type(exc).__name__)
        code = exc.exit_code
    finally:
        if args.metrics_file:
            write_metrics(args.metrics_file)
    return code


if __name__ == "__main__":
    sys.exit(main())
