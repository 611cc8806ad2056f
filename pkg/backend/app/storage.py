# app/storage.py
"""Local file I/O for series, traces and reports. Every OS/parse failure becomes DataIOError."""
import json
import os
from typing import Any, Optional

import numpy as np
import pandas as pd
import yaml

from app.errors import DataIOError, ValidationFailed


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def read_series(path: str, column: Optional[str] = None) -> np.ndarray:
    """
    One-column CSV of values, with or without a header row. Files with more
    than one column need `column` (a header name or a 0-based position).
    """
    try:
        raw = pd.read_csv(path, header=None)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc

    header = None
    first = raw.iloc[0]
    if pd.to_numeric(first, errors="coerce").isna().any():
        header = [str(v) for v in first]
        raw = raw.iloc[1:].reset_index(drop=True)
        raw.columns = header

    if raw.shape[1] > 1:
        if column is None:
            raise ValidationFailed(f"{path} has {raw.shape[1]} columns; pass --column")
        if header is not None and column in header:
            col = raw[column]
        elif column.isdigit() and int(column) < raw.shape[1]:
            col = raw.iloc[:, int(column)]
        else:
            raise ValidationFailed(f"column {column!r} not found in {path}")
    else:
        col = raw.iloc[:, 0]

    values = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise ValidationFailed(f"{path} holds empty or non-numeric values")
    return values


def write_series(path: str, values) -> str:
    _ensure_parent(path)
    try:
        pd.DataFrame({"value": np.asarray(values, dtype=float)}).to_csv(path, index=False, float_format="%.17g")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    return path


def write_frame(path: str, frame: pd.DataFrame, index: bool = False) -> str:
    _ensure_parent(path)
    try:
        frame.to_csv(path, index=index, float_format="%.17g")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_frame(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


def dumps_report(report: Any) -> str:
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=True) + "\n"


def write_json(path: str, report: Any) -> str:
    _ensure_parent(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(dumps_report(report))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


def read_yaml(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationFailed(f"{path} must hold a mapping at the top level")
    return data
