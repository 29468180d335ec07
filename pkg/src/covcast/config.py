"""Run configuration: structured YAML with strict key validation.

Every command takes one config file. Unknown keys are rejected with the
dotted path of the offending field, and all sections resolve to validated
dataclasses before any computation starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .backbone import BackboneConfig
from .data import DEFAULT_MAX_GAP, ChannelSchema, SplitSpec
from .errors import ConfigError, DataFileError, SchemaError, SplitError
from .evaluation import BenchmarkConfig, BenchmarkDataset, EvalProtocol
from .fusion import FusionConfig
from .patching import PatchConfig
from .pipeline import DatasetConfig
from .synthetic import SyntheticSpec
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig | None
    patch: PatchConfig
    backbone: BackboneConfig
    fusion: FusionConfig
    train: TrainConfig
    protocol: EvalProtocol
    output_dir: Path
    backbone_checkpoint: Path | None = None
    benchmark: BenchmarkConfig | None = None


def _require_mapping(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"expected a mapping, got {type(node).__name__}", path)
    return node


def _check_keys(node: dict, allowed: set[str], path: str) -> None:
    for key in node:
        if key not in allowed:
            raise ConfigError(f"unknown key (allowed: {sorted(allowed)})",
                              f"{path}.{key}" if path else str(key))


def _str_list(node, path: str) -> tuple[str, ...]:
    if node is None:
        return ()
    if not isinstance(node, list) or not all(isinstance(x, str) for x in node):
        raise ConfigError("expected a list of channel names", path)
    return tuple(node)


def _parse_schema(node, path: str) -> ChannelSchema:
    node = _require_mapping(node, path)
    _check_keys(node, {"targets", "past_covariates", "future_covariates", "frequency"}, path)
    try:
        return ChannelSchema(
            targets=_str_list(node.get("targets"), f"{path}.targets"),
            past_covariates=_str_list(node.get("past_covariates"), f"{path}.past_covariates"),
            future_covariates=_str_list(node.get("future_covariates"), f"{path}.future_covariates"),
            frequency=str(node.get("frequency", "1h")),
        )
    except SchemaError as exc:
        raise ConfigError(str(exc), path) from None


def _parse_synthetic(node, path: str) -> SyntheticSpec:
    node = _require_mapping(node, path)
    allowed = {"kind", "length", "noise_std", "driver_gain", "seed", "period", "frequency"}
    _check_keys(node, allowed, path)
    try:
        return SyntheticSpec(**node)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def _parse_split(node, path: str) -> SplitSpec:
    if node is None:
        return SplitSpec()
    node = _require_mapping(node, path)
    _check_keys(node, {"train", "val", "test"}, path)
    try:
        return SplitSpec(float(node.get("train", 0.7)), float(node.get("val", 0.1)),
                         float(node.get("test", 0.2)))
    except SplitError as exc:
        raise ConfigError(str(exc), path) from None


def _parse_dataset(node, path: str) -> DatasetConfig:
    node = _require_mapping(node, path)
    allowed = {"path", "delimiter", "schema", "synthetic", "max_gap", "split"}
    _check_keys(node, allowed, path)
    schema = _parse_schema(node["schema"], f"{path}.schema") if "schema" in node else None
    synthetic = _parse_synthetic(node["synthetic"], f"{path}.synthetic") if "synthetic" in node else None
    try:
        return DatasetConfig(
            path=Path(node["path"]) if node.get("path") else None,
            delimiter=str(node.get("delimiter", ",")),
            schema=schema,
            synthetic=synthetic,
            max_gap=int(node.get("max_gap", DEFAULT_MAX_GAP)),
            split=_parse_split(node.get("split"), f"{path}.split"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def _parse_model(node, path: str) -> tuple[PatchConfig, BackboneConfig, FusionConfig]:
    node = _require_mapping(node, path) if node is not None else {}
    allowed = {"patch_len", "future_patch_len", "resample_future_tokens", "latent_dim",
               "n_enc_layers", "n_dec_layers", "n_heads", "ff_dim", "dropout",
               "max_input_patches", "max_horizon_tokens", "instance_norm", "fusion"}
    _check_keys(node, allowed, path)
    try:
        patch = PatchConfig(
            patch_len=int(node.get("patch_len", 24)),
            future_patch_len=(int(node["future_patch_len"])
                              if node.get("future_patch_len") is not None else None),
            resample_future_tokens=bool(node.get("resample_future_tokens", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    backbone_keys = {"latent_dim", "n_enc_layers", "n_dec_layers", "n_heads", "ff_dim",
                     "dropout", "max_input_patches", "max_horizon_tokens", "instance_norm"}
    try:
        backbone = BackboneConfig(**{k: node[k] for k in backbone_keys if k in node})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None

    fusion_node = node.get("fusion") or {}
    fusion_node = _require_mapping(fusion_node, f"{path}.fusion")
    fusion_allowed = {"hidden_dim", "depth", "activation", "zero_init",
                      "residual_head_bias", "mf_zero_mode"}
    _check_keys(fusion_node, fusion_allowed, f"{path}.fusion")
    try:
        fusion = FusionConfig(**fusion_node)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), f"{path}.fusion") from None
    return patch, backbone, fusion


def _parse_train(node, path: str) -> tuple[TrainConfig, Path | None]:
    node = _require_mapping(node, path) if node is not None else {}
    allowed = {"mode", "lr", "schedule", "epochs", "batch_size", "seed", "patience",
               "backbone_checkpoint"}
    _check_keys(node, allowed, path)
    schedule = node.get("schedule") or {}
    schedule = _require_mapping(schedule, f"{path}.schedule")
    _check_keys(schedule, {"step", "gamma"}, f"{path}.schedule")
    ckpt = Path(node["backbone_checkpoint"]) if node.get("backbone_checkpoint") else None
    kwargs = {}
    for key in ("mode", "lr", "epochs", "batch_size", "seed", "patience"):
        if key in node:
            kwargs[key] = node[key]
    if "step" in schedule:
        kwargs["step_size"] = int(schedule["step"])
    if "gamma" in schedule:
        kwargs["gamma"] = float(schedule["gamma"])
    try:
        return TrainConfig(**kwargs), ckpt
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def _parse_eval(node, path: str) -> EvalProtocol:
    node = _require_mapping(node, path) if node is not None else {}
    _check_keys(node, {"lookback", "horizon", "future_cov_mode", "stride"}, path)
    try:
        return EvalProtocol(**node)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def _parse_benchmark(node, path: str) -> BenchmarkConfig:
    node = _require_mapping(node, path)
    allowed = {"datasets", "protocols", "variants", "pretrain_epochs", "finetune_epochs",
               "pretrain_lr", "train_stride"}
    _check_keys(node, allowed, path)
    raw = node.get("datasets")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("expected a non-empty list of datasets", f"{path}.datasets")
    datasets = []
    for i, entry in enumerate(raw):
        entry_path = f"{path}.datasets[{i}]"
        entry = _require_mapping(entry, entry_path)
        if "name" not in entry:
            raise ConfigError("dataset entry needs a name", entry_path)
        name = str(entry.pop("name"))
        datasets.append(BenchmarkDataset(name, _parse_dataset(entry, entry_path)))
    try:
        return BenchmarkConfig(
            datasets=tuple(datasets),
            protocols=tuple(node.get("protocols", ("provided", "withheld"))),
            variants=tuple(node.get("variants", ("plugin", "backbone"))),
            pretrain_epochs=int(node.get("pretrain_epochs", 30)),
            finetune_epochs=int(node.get("finetune_epochs", 50)),
            pretrain_lr=float(node.get("pretrain_lr", 1e-3)),
            train_stride=int(node.get("train_stride", 1)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataFileError(f"config file not found: {path}")
    try:
        root = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    root = _require_mapping(root, "")
    _check_keys(root, {"dataset", "model", "train", "eval", "benchmark", "output_dir"}, "")

    dataset = _parse_dataset(root["dataset"], "dataset") if "dataset" in root else None
    patch, backbone, fusion = _parse_model(root.get("model"), "model")
    train, ckpt = _parse_train(root.get("train"), "train")
    protocol = _parse_eval(root.get("eval"), "eval")
    benchmark = _parse_benchmark(root["benchmark"], "benchmark") if "benchmark" in root else None
    output_dir = Path(root.get("output_dir", "runs"))
    return RunConfig(dataset, patch, backbone, fusion, train, protocol, output_dir,
                     backbone_checkpoint=ckpt, benchmark=benchmark)
