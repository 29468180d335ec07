"""Shared builders for small models and window sets."""

import numpy as np
import pytest
import torch

from covcast import (BackboneConfig, ChannelSchema, CovariateForecaster, FusionConfig,
                     PatchConfig, SeriesFrame, WindowSet)


def tiny_backbone_cfg(**overrides) -> BackboneConfig:
    base = dict(latent_dim=8, n_enc_layers=1, n_dec_layers=1, n_heads=2, ff_dim=16,
                dropout=0.0, max_input_patches=16, max_horizon_tokens=16)
    base.update(overrides)
    return BackboneConfig(**base)


def tiny_model(n_targets=1, n_past=1, n_future=1, patch_len=4, with_fusion=True,
               seed=0, **backbone_overrides) -> CovariateForecaster:
    torch.manual_seed(seed)
    fusion = FusionConfig() if with_fusion else None
    return CovariateForecaster(PatchConfig(patch_len=patch_len), tiny_backbone_cfg(**backbone_overrides),
                               fusion, n_targets=n_targets, n_past=n_past, n_future=n_future)


def random_windows(n=4, n_targets=1, n_past=1, n_future=1, lookback=8, horizon=4,
                   seed=0) -> WindowSet:
    rng = np.random.default_rng(seed)
    return WindowSet(
        x_target=rng.normal(size=(n, n_targets, lookback)),
        x_past=rng.normal(size=(n, n_past, lookback)),
        y_future=rng.normal(size=(n, n_future, horizon)),
        y_target=rng.normal(size=(n, n_targets, horizon)),
        origins=np.arange(n, dtype=np.intp),
        lookback=lookback,
        horizon=horizon,
    )


def hourly_frame(values: np.ndarray, names, schema: ChannelSchema,
                 start="2021-01-01") -> SeriesFrame:
    n = values.shape[1]
    ts = np.datetime64(f"{start}T00:00:00", "ns") + np.timedelta64(3600, "s") * np.arange(n)
    return SeriesFrame(ts, values, tuple(names), schema)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(1234)
    yield
