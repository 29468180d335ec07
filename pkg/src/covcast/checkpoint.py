"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic b"PPFC0001" (format name + version)
    bytes 8..15   uint64 header length H
    bytes 16..16+H  UTF-8 JSON header: configs, dimensions, normalization
                    stats, schema, per-tensor directory (name, shape, offset,
                    trainable flag)
    remainder     concatenated raw little-endian float64 tensor payloads

The header's tensor order matches the payload order, so a round trip
restores every parameter bit-exactly, including requires_grad flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .backbone import BackboneConfig
from .data import ChannelSchema, NormStats
from .errors import CheckpointError, DataFileError
from .fusion import CovariateForecaster, FusionConfig
from .patching import PatchConfig

MAGIC = b"PPFC0001"
_DTYPE = "<f8"


@dataclass
class LoadedCheckpoint:
    model: CovariateForecaster
    stats: NormStats | None
    schema: ChannelSchema | None
    meta: dict[str, Any]


def _schema_dict(schema: ChannelSchema | None) -> dict | None:
    if schema is None:
        return None
    return {
        "targets": list(schema.targets),
        "past_covariates": list(schema.past_covariates),
        "future_covariates": list(schema.future_covariates),
        "frequency": schema.frequency,
    }


def _schema_from(payload: dict | None) -> ChannelSchema | None:
    if payload is None:
        return None
    return ChannelSchema(tuple(payload["targets"]), tuple(payload["past_covariates"]),
                         tuple(payload["future_covariates"]), payload["frequency"])


def save_checkpoint(path: str | Path, model: CovariateForecaster, *,
                    stats: NormStats | None = None, schema: ChannelSchema | None = None,
                    train_mode: str | None = None, extra: dict | None = None) -> None:
    path = Path(path)
    trainable = {name for name, p in model.named_parameters() if p.requires_grad}

    directory = []
    payloads = []
    offset = 0
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().numpy().astype(_DTYPE, copy=False)
        raw = array.tobytes()
        directory.append({
            "name": name,
            "shape": list(tensor.shape),
            "offset": offset,
            "trainable": name in trainable,
        })
        payloads.append(raw)
        offset += len(raw)

    header = {
        "format_version": 1,
        "dtype": "float64",
        "endianness": "little",
        "model": {
            "patch": dataclasses.asdict(model.patch_cfg),
            "backbone": dataclasses.asdict(model.backbone_cfg),
            "fusion": dataclasses.asdict(model.fusion_cfg) if model.fusion_cfg else None,
            "n_targets": model.n_targets,
            "n_past": model.n_past,
            "n_future": model.n_future,
        },
        "norm": stats.to_dict() if stats is not None else None,
        "schema": _schema_dict(schema),
        "train_mode": train_mode,
        "extra": extra or {},
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for raw in payloads:
                fh.write(raw)
    except OSError as exc:
        raise DataFileError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    path = Path(path)
    if not path.exists():
        raise DataFileError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}, expected {MAGIC!r}")
    header_len = int.from_bytes(blob[8:16], "little")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    payload = blob[16 + header_len:]

    spec = header["model"]
    patch_cfg = PatchConfig(**spec["patch"])
    backbone_cfg = BackboneConfig(**spec["backbone"])
    fusion_cfg = FusionConfig(**spec["fusion"]) if spec["fusion"] else None
    model = CovariateForecaster(patch_cfg, backbone_cfg, fusion_cfg,
                                n_targets=spec["n_targets"], n_past=spec["n_past"],
                                n_future=spec["n_future"])

    state = {}
    trainable_flags = {}
    for entry in header["tensors"]:
        numel = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        stop = start + numel * 8
        if stop > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} overruns payload")
        array = np.frombuffer(payload[start:stop], dtype=_DTYPE).reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(array)
        trainable_flags[entry["name"]] = entry["trainable"]

    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: tensor directory does not match the model: {exc}") from exc
    for name, param in model.named_parameters():
        param.requires_grad_(trainable_flags.get(name, True))

    stats = NormStats.from_dict(header["norm"]) if header.get("norm") else None
    schema = _schema_from(header.get("schema"))
    meta = {"train_mode": header.get("train_mode"), "extra": header.get("extra", {}),
            "format_version": header.get("format_version")}
    return LoadedCheckpoint(model, stats, schema, meta)
