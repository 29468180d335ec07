"""Shared dataset-to-model plumbing used by the CLI commands and the benchmark runner."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .backbone import BackboneConfig
from .data import (DEFAULT_MAX_GAP, ChannelSchema, NormStats, SeriesFrame, SplitSpec,
                   chrono_split, fit_apply_norm, forward_fill, load_frame, make_windows)
from .errors import CheckpointError, ConfigError
from .fusion import CovariateForecaster, FusionConfig
from .patching import PatchConfig
from .synthetic import SyntheticSpec, gen_synthetic


@dataclass(frozen=True)
class DatasetConfig:
    """Either a file-backed dataset (path + schema) or a synthetic spec."""

    path: Path | None = None
    delimiter: str = ","
    schema: ChannelSchema | None = None
    synthetic: SyntheticSpec | None = None
    max_gap: int = DEFAULT_MAX_GAP
    split: SplitSpec = SplitSpec()

    def __post_init__(self):
        if (self.path is None) == (self.synthetic is None):
            raise ConfigError("provide exactly one of path or synthetic", "dataset")
        if self.path is not None and self.schema is None:
            raise ConfigError("file-backed datasets need a schema", "dataset.schema")


def build_frame(cfg: DatasetConfig) -> SeriesFrame:
    if cfg.synthetic is not None:
        frame = gen_synthetic(cfg.synthetic)
    else:
        frame = load_frame(cfg.path, cfg.schema, delimiter=cfg.delimiter)
    return forward_fill(frame, max_gap=cfg.max_gap)


@dataclass(frozen=True)
class PreparedSplits:
    stats: NormStats
    train: SeriesFrame
    val: SeriesFrame
    test: SeriesFrame


def prepare_splits(frame: SeriesFrame, split: SplitSpec, lookback: int, horizon: int) -> PreparedSplits:
    """Chronological split, then leak-free standardization from the train part."""
    train, val, test = chrono_split(frame, split, min_rows=lookback + horizon)
    stats, (train_n, val_n, test_n) = fit_apply_norm(train, val, test)
    return PreparedSplits(stats, train_n, val_n, test_n)


def split_windows(splits: PreparedSplits, lookback: int, horizon: int,
                  with_future_cov: bool, train_stride: int = 1, eval_stride: int = 1):
    train = make_windows(splits.train, lookback, horizon, stride=train_stride,
                         with_future_cov=with_future_cov)
    val = make_windows(splits.val, lookback, horizon, stride=eval_stride,
                       with_future_cov=with_future_cov)
    test = make_windows(splits.test, lookback, horizon, stride=eval_stride,
                        with_future_cov=with_future_cov)
    return train, val, test


def build_backbone_model(patch_cfg: PatchConfig, backbone_cfg: BackboneConfig,
                         schema: ChannelSchema, seed: int = 0) -> CovariateForecaster:
    import torch

    torch.manual_seed(seed)
    return CovariateForecaster(patch_cfg, backbone_cfg, None,
                               n_targets=schema.n_targets, n_past=0, n_future=0)


def build_plugin_model(patch_cfg: PatchConfig, backbone_cfg: BackboneConfig,
                       fusion_cfg: FusionConfig, schema: ChannelSchema,
                       with_future_cov: bool, seed: int = 0) -> CovariateForecaster:
    import torch

    torch.manual_seed(seed)
    return CovariateForecaster(
        patch_cfg, backbone_cfg, fusion_cfg,
        n_targets=schema.n_targets,
        n_past=schema.n_past,
        n_future=schema.n_future if with_future_cov else 0,
    )


def transfer_backbone(source: CovariateForecaster, dest: CovariateForecaster) -> None:
    """Copy pretrained backbone weights into another model, dimension-checked."""
    mismatches = []
    for field in ("patch_cfg", "backbone_cfg"):
        if getattr(source, field) != getattr(dest, field):
            mismatches.append(f"{field}: {getattr(source, field)} != {getattr(dest, field)}")
    if source.n_targets != dest.n_targets:
        mismatches.append(f"n_targets: {source.n_targets} != {dest.n_targets}")
    if mismatches:
        raise CheckpointError("backbone transfer mismatch:\n  " + "\n  ".join(mismatches))
    dest.backbone.load_state_dict(source.backbone.state_dict())
