"""Metrics, evaluation protocols and the benchmark runner.

Metrics are computed on normalized test data, matching the convention of the
published 168->24 electricity benchmarks whose error magnitudes sit far
below raw price scale. Published reference results for this architecture
are attached to reports as context and are never used as pass/fail
thresholds.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
import torch

from .data import WindowSet
from .errors import CovcastError, DataFileError
from .fusion import CovariateForecaster
from .pipeline import (DatasetConfig, build_backbone_model, build_frame, build_plugin_model,
                       prepare_splits, split_windows, transfer_backbone)
from .backbone import BackboneConfig
from .patching import PatchConfig
from .fusion import FusionConfig
from .training import TrainConfig, fit

logger = logging.getLogger(__name__)

FUTURE_COV_MODES = ("provided", "withheld")
BENCHMARK_VARIANTS = ("plugin", "backbone")

# Published 168->24 benchmark results for this covariate plug-in on the
# public electricity datasets (normalized MSE/MAE, with and without
# future-known covariates). Context only; never asserted against.
PUBLISHED_REFERENCE: dict[str, dict[str, dict[str, float]]] = {
    "NP": {"provided": {"mse": 0.167, "mae": 0.216}, "withheld": {"mse": 0.221, "mae": 0.259}},
    "PJM": {"provided": {"mse": 0.070, "mae": 0.157}, "withheld": {"mse": 0.072, "mae": 0.168}},
    "BE": {"provided": {"mse": 0.338, "mae": 0.224}, "withheld": {"mse": 0.365, "mae": 0.243}},
    "FR": {"provided": {"mse": 0.347, "mae": 0.177}, "withheld": {"mse": 0.486, "mae": 0.198}},
    "DE": {"provided": {"mse": 0.289, "mae": 0.331}, "withheld": {"mse": 0.414, "mae": 0.399}},
    "ENERGY": {"provided": {"mse": 0.079, "mae": 0.218}, "withheld": {"mse": 0.100, "mae": 0.243}},
}


def mse(y_true, y_pred) -> float:
    a = np.asarray(y_true, dtype=np.float64)
    b = np.asarray(y_pred, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def mae(y_true, y_pred) -> float:
    a = np.asarray(y_true, dtype=np.float64)
    b = np.asarray(y_pred, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True)
class EvalProtocol:
    lookback: int = 168
    horizon: int = 24
    future_cov_mode: str = "provided"
    stride: int = 1

    def __post_init__(self):
        if self.future_cov_mode not in FUTURE_COV_MODES:
            raise ValueError(f"future_cov_mode must be one of {FUTURE_COV_MODES}")
        if min(self.lookback, self.horizon, self.stride) < 1:
            raise ValueError("lookback, horizon and stride must be positive")

    def to_dict(self) -> dict:
        return {"lookback": self.lookback, "horizon": self.horizon,
                "future_cov_mode": self.future_cov_mode, "stride": self.stride}


@dataclass
class ForecastReport:
    dataset: str
    model_id: str
    protocol: dict
    mse: float
    mae: float
    n_windows: int
    trainable_params: int
    runtime_s: float
    reference: dict | None = None

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model_id": self.model_id,
            "protocol": self.protocol,
            "mse": self.mse,
            "mae": self.mae,
            "n_windows": self.n_windows,
            "trainable_params": self.trainable_params,
            "reference": self.reference,
            "timing": {"runtime_s": self.runtime_s},
        }


def reference_for(dataset: str, future_cov_mode: str) -> dict | None:
    entry = PUBLISHED_REFERENCE.get(dataset.upper())
    return None if entry is None else dict(entry[future_cov_mode])


def evaluate(model: CovariateForecaster, windows: WindowSet, protocol: EvalProtocol,
             dataset: str = "", model_id: str = "", chunk: int = 256) -> ForecastReport:
    """Equal-weight average of per-window MSE/MAE over the supplied windows."""
    if len(windows) == 0:
        raise ValueError("empty evaluation window set")
    start = time.perf_counter()
    model.eval()
    x_t = torch.from_numpy(windows.x_target)
    x_p = torch.from_numpy(windows.x_past)
    y_f = torch.from_numpy(windows.y_future)
    y_t = torch.from_numpy(windows.y_target)
    per_mse, per_mae = [], []
    with torch.no_grad():
        for lo in range(0, len(windows), chunk):
            hi = lo + chunk
            pred = model(x_t[lo:hi], x_p[lo:hi], y_f[lo:hi], horizon=windows.horizon)
            err = y_t[lo:hi] - pred
            per_mse.append((err ** 2).mean(dim=(1, 2)))
            per_mae.append(err.abs().mean(dim=(1, 2)))
    runtime = time.perf_counter() - start
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return ForecastReport(
        dataset=dataset,
        model_id=model_id,
        protocol=protocol.to_dict(),
        mse=float(torch.cat(per_mse).mean()),
        mae=float(torch.cat(per_mae).mean()),
        n_windows=len(windows),
        trainable_params=trainable,
        runtime_s=runtime,
        reference=reference_for(dataset, protocol.future_cov_mode),
    )


# ---------------------------------------------------------------------------
# benchmark runner

@dataclass(frozen=True)
class BenchmarkDataset:
    name: str
    dataset: DatasetConfig


@dataclass(frozen=True)
class BenchmarkConfig:
    datasets: tuple[BenchmarkDataset, ...]
    protocols: tuple[str, ...] = FUTURE_COV_MODES
    variants: tuple[str, ...] = BENCHMARK_VARIANTS
    pretrain_epochs: int = 30
    finetune_epochs: int = 50
    pretrain_lr: float = 1e-3
    train_stride: int = 1

    def __post_init__(self):
        for p in self.protocols:
            if p not in FUTURE_COV_MODES:
                raise ValueError(f"unknown protocol {p!r}")
        for v in self.variants:
            if v not in BENCHMARK_VARIANTS:
                raise ValueError(f"unknown variant {v!r}")


@dataclass
class BenchmarkCell:
    dataset: str
    protocol: str
    variant: str
    status: str = "OK"          # OK | SKIPPED | FAILED
    mse: float | None = None
    mae: float | None = None
    n_windows: int = 0
    trainable_params: int = 0
    runtime_s: float = 0.0
    reference: dict | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset, "protocol": self.protocol, "variant": self.variant,
            "status": self.status, "mse": self.mse, "mae": self.mae,
            "n_windows": self.n_windows, "trainable_params": self.trainable_params,
            "reference": self.reference, "detail": self.detail,
            "timing": {"runtime_s": self.runtime_s},
        }


@dataclass
class BenchmarkResult:
    cells: list[BenchmarkCell]

    @property
    def n_failed(self) -> int:
        return sum(c.status == "FAILED" for c in self.cells)

    @property
    def n_skipped(self) -> int:
        return sum(c.status == "SKIPPED" for c in self.cells)

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells],
                "n_failed": self.n_failed, "n_skipped": self.n_skipped}

    def render_table(self) -> str:
        header = (f"{'dataset':<14} {'protocol':<9} {'variant':<9} {'status':<8} "
                  f"{'mse':>9} {'mae':>9} {'ref_mse':>9} {'ref_mae':>9} {'params':>9}")
        lines = [header, "-" * len(header)]

        def fmt(v):
            return f"{v:>9.4f}" if isinstance(v, float) else f"{'-':>9}"

        for c in self.cells:
            ref = c.reference or {}
            lines.append(f"{c.dataset:<14} {c.protocol:<9} {c.variant:<9} {c.status:<8} "
                         f"{fmt(c.mse)} {fmt(c.mae)} {fmt(ref.get('mse'))} "
                         f"{fmt(ref.get('mae'))} {c.trainable_params:>9d}")
        lines.append("reference columns: published results for this architecture, context only")
        return "\n".join(lines) + "\n"


def run_benchmark(bench: BenchmarkConfig, patch_cfg: PatchConfig, backbone_cfg: BackboneConfig,
                  fusion_cfg: FusionConfig, train_cfg: TrainConfig,
                  protocol: EvalProtocol) -> BenchmarkResult:
    """Train and evaluate every (dataset x protocol x variant) cell.

    The plug-in variant fine-tunes on a shared per-dataset pretrained
    backbone; the backbone variant fine-tunes the head only. Per-cell
    failures are recorded without aborting the rest of the grid.
    """
    cells: list[BenchmarkCell] = []
    for job in bench.datasets:
        cells.extend(_run_dataset(job, bench, patch_cfg, backbone_cfg, fusion_cfg,
                                  train_cfg, protocol))
    return BenchmarkResult(cells)


def _run_dataset(job: BenchmarkDataset, bench: BenchmarkConfig, patch_cfg: PatchConfig,
                 backbone_cfg: BackboneConfig, fusion_cfg: FusionConfig,
                 train_cfg: TrainConfig, protocol: EvalProtocol) -> list[BenchmarkCell]:
    grid = [(p, v) for p in bench.protocols for v in bench.variants]

    def all_cells(status: str, detail: str) -> list[BenchmarkCell]:
        return [BenchmarkCell(job.name, p, v, status=status, detail=detail) for p, v in grid]

    try:
        frame = build_frame(job.dataset)
        splits = prepare_splits(frame, job.dataset.split, protocol.lookback, protocol.horizon)
    except DataFileError as exc:
        logger.warning("benchmark dataset %s skipped: %s", job.name, exc)
        return all_cells("SKIPPED", str(exc))
    except (CovcastError, ValueError) as exc:
        logger.error("benchmark dataset %s failed: %s", job.name, exc)
        return all_cells("FAILED", str(exc))

    schema = frame.schema
    pretrain_cfg = replace(train_cfg, mode="pretrain", epochs=bench.pretrain_epochs,
                           lr=bench.pretrain_lr, patience=None)
    try:
        base = build_backbone_model(patch_cfg, backbone_cfg, schema, seed=train_cfg.seed)
        train_w, val_w, _ = split_windows(splits, protocol.lookback, protocol.horizon,
                                          with_future_cov=False,
                                          train_stride=bench.train_stride,
                                          eval_stride=protocol.stride)
        fit(base, train_w, val_w, pretrain_cfg)
    except (CovcastError, ValueError) as exc:
        logger.error("benchmark dataset %s pretraining failed: %s", job.name, exc)
        return all_cells("FAILED", f"pretrain: {exc}")

    cells = []
    for cell_index, (proto_mode, variant) in enumerate(grid):
        cell = BenchmarkCell(job.name, proto_mode, variant,
                             reference=reference_for(job.name, proto_mode))
        begin = time.perf_counter()
        try:
            with_future = proto_mode == "provided"
            seed = train_cfg.seed + 1 + cell_index
            if variant == "plugin":
                model = build_plugin_model(patch_cfg, backbone_cfg, fusion_cfg, schema,
                                           with_future_cov=with_future, seed=seed)
            else:
                model = build_backbone_model(patch_cfg, backbone_cfg, schema, seed=seed)
            transfer_backbone(base, model)

            carries_future = with_future and model.n_future > 0
            train_w, val_w, test_w = split_windows(splits, protocol.lookback, protocol.horizon,
                                                   with_future_cov=carries_future,
                                                   train_stride=bench.train_stride,
                                                   eval_stride=protocol.stride)
            finetune_cfg = replace(train_cfg, mode="frozen_backbone",
                                   epochs=bench.finetune_epochs, seed=seed)
            report = fit(model, train_w, val_w, finetune_cfg)
            cell_proto = replace(protocol, future_cov_mode=proto_mode)
            result = evaluate(model, test_w, cell_proto, dataset=job.name,
                              model_id=variant)
            cell.mse, cell.mae = result.mse, result.mae
            cell.n_windows = result.n_windows
            cell.trainable_params = report.trainable_params
        except (CovcastError, ValueError) as exc:
            logger.error("benchmark cell %s/%s/%s failed: %s", job.name, proto_mode, variant, exc)
            cell.status = "FAILED"
            cell.detail = str(exc)
        cell.runtime_s = time.perf_counter() - begin
        cells.append(cell)
    return cells
