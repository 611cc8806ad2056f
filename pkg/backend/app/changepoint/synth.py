# app/changepoint/synth.py
"""
Seeded piecewise-GP series with planted covariance changes.

Every segment is an independent zero-mean GP draw (structural-break
semantics); white observation noise is added on top of the whole path.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.changepoint import matcore
from app.changepoint.kernels import KernelSpec, kernel_block
from app.errors import UnknownPreset


class Segment(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    start: int = Field(ge=1)
    kernel: KernelSpec


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    total_length: int = Field(gt=0)
    segments: list[Segment]
    noise_variance: float = Field(default=0.1, ge=0)
    cp_draw_intervals: Optional[list[tuple[int, int]]] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check_layout(self):
        starts = [s.start for s in self.segments]
        if not starts or starts[0] != 1:
            raise ValueError("first segment must start at index 1")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        if starts[-1] > self.total_length:
            raise ValueError("segment starts beyond total_length")
        if self.cp_draw_intervals is not None:
            iv = self.cp_draw_intervals
            if len(iv) != len(starts) - 1:
                raise ValueError("need one draw interval per change point")
            for lo, hi in iv:
                if not (1 <= lo and hi <= self.total_length and hi - lo >= 2):
                    raise ValueError(f"draw interval ({lo}, {hi}) must hold an integer strictly inside (1, T)")
            if any(b[0] < a[1] for a, b in zip(iv, iv[1:])):
                raise ValueError("draw intervals must be disjoint and ordered")
        return self


@dataclass(frozen=True)
class SyntheticSeries:
    values: np.ndarray
    true_cps: list[int]
    spec: ScenarioSpec


class Preset(str, Enum):
    LEN_CHANGE = "LEN_CHANGE"
    VAR_CHANGE = "VAR_CHANGE"


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_piecewise_gp(spec: ScenarioSpec) -> SyntheticSeries:
    rng = _generator(spec.seed)
    if spec.cp_draw_intervals is not None:
        cps = [int(rng.integers(lo + 1, hi)) for lo, hi in spec.cp_draw_intervals]
    else:
        cps = [s.start for s in spec.segments[1:]]

    bounds = [1] + cps + [spec.total_length + 1]
    parts = []
    for seg, lo, hi in zip(spec.segments, bounds, bounds[1:]):
        idx = np.arange(lo, hi, dtype=float)
        factor = matcore.cholesky(kernel_block(seg.kernel, idx, idx))
        parts.append(factor.lower @ rng.standard_normal(idx.size))
    values = np.concatenate(parts)
    if spec.noise_variance > 0:
        values = values + np.sqrt(spec.noise_variance) * rng.standard_normal(spec.total_length)
    return SyntheticSeries(values=values, true_cps=cps, spec=spec)


def preset(name, seed: int = 0) -> ScenarioSpec:
    try:
        which = Preset(name)
    except ValueError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {[p.value for p in Preset]}") from None

    if which == Preset.LEN_CHANGE:
        kernels = [KernelSpec(signal_variance=1.0, length_scale=l) for l in (3.0, 20.0, 1.0)]
    else:
        kernels = [KernelSpec(signal_variance=s, length_scale=3.0) for s in (1.0, 4.0, 0.3)]
    return ScenarioSpec(
        total_length=400,
        segments=[Segment(start=s, kernel=k) for s, k in zip((1, 100, 300), kernels)],
        noise_variance=0.1,
        cp_draw_intervals=[(75, 125), (275, 325)],
        seed=seed,
    )
