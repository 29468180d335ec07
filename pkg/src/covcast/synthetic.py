"""Deterministic synthetic series used as test oracles and pretraining corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import ChannelSchema, SeriesFrame

KINDS = ("periodic", "periodic_plus_future_driver", "var_coupled")
_EPOCH = np.datetime64("2020-01-01T00:00:00", "ns")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "periodic"
    length: int = 2400
    noise_std: float = 0.1
    driver_gain: float = 1.0   # weight of the future-known driver in the target
    seed: int = 0
    period: int = 24
    frequency: str = "1h"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; choose from {KINDS}")
        if self.length < 2:
            raise ValueError("length must be >= 2")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.period < 1:
            raise ValueError("period must be >= 1")


def gen_synthetic(spec: SyntheticSpec) -> SeriesFrame:
    """Build one of the oracle tasks:

    * periodic:  target = sinusoid + noise, no covariates.
    * periodic_plus_future_driver:  target_t = sinusoid_t + gain * c_t + noise,
      with c white noise exposed as a future-known channel. The driver is
      unpredictable from history alone, so any headroom over the no-covariate
      model must come from reading c.
    * var_coupled:  y_t = 0.9 * x_{t-1} + noise, x white noise as a past
      covariate; the canonical Granger-detectable coupling.
    """
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length)
    step = pd.Timedelta(spec.frequency.replace("H", "h")).to_numpy()
    timestamps = _EPOCH + step * t
    wave = np.sin(2.0 * np.pi * t / spec.period)
    noise = rng.normal(0.0, spec.noise_std, spec.length)

    if spec.kind == "periodic":
        schema = ChannelSchema(targets=("target",), frequency=spec.frequency)
        values = (wave + noise)[None, :]
        return SeriesFrame(timestamps, values, ("target",), schema)

    if spec.kind == "periodic_plus_future_driver":
        driver = rng.normal(0.0, 1.0, spec.length)
        target = wave + spec.driver_gain * driver + noise
        schema = ChannelSchema(targets=("target",), future_covariates=("driver",),
                               frequency=spec.frequency)
        values = np.stack([target, driver])
        return SeriesFrame(timestamps, values, ("target", "driver"), schema)

    # var_coupled
    x = rng.normal(0.0, 1.0, spec.length)
    y = np.empty(spec.length)
    y[0] = noise[0]
    y[1:] = 0.9 * x[:-1] + noise[1:]
    schema = ChannelSchema(targets=("y",), past_covariates=("x",), frequency=spec.frequency)
    return SeriesFrame(timestamps, np.stack([y, x]), ("y", "x"), schema)
