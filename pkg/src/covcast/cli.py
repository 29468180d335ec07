"""Single command-line entry point.

Subcommands: pretrain, finetune, evaluate, forecast, screen, benchmark.
Exit codes are a stable contract: 0 success, 1 runtime failure, 2 config
error, 3 I/O error (also used when benchmark cells are skipped for missing
data). Log verbosity comes from the COVCAST_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .data import load_frame, forward_fill, chrono_split, make_windows
from .errors import ConfigError, CovcastError, DataFileError
from .evaluation import evaluate, run_benchmark
from .pipeline import (build_backbone_model, build_frame, build_plugin_model,
                       prepare_splits, split_windows, transfer_backbone)
from .screening import daytime_mask, screen_frame
from .training import fit, select_trainables

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _setup_logging() -> None:
    level = os.environ.get("COVCAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataFileError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise DataFileError(f"output directory {path} is not writable")
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require_dataset(cfg: RunConfig) -> None:
    if cfg.dataset is None:
        raise ConfigError("this command needs a dataset section", "dataset")


def _dataset_name(cfg: RunConfig) -> str:
    if cfg.dataset.path is not None:
        return cfg.dataset.path.stem
    return f"synthetic:{cfg.dataset.synthetic.kind}"


# ---------------------------------------------------------------------------
# commands

def cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config)
    _require_dataset(cfg)
    out = _ensure_dir(cfg.output_dir)

    frame = build_frame(cfg.dataset)
    proto = cfg.protocol
    splits = prepare_splits(frame, cfg.dataset.split, proto.lookback, proto.horizon)
    train_w, val_w, _ = split_windows(splits, proto.lookback, proto.horizon,
                                      with_future_cov=False, train_stride=args.train_stride,
                                      eval_stride=proto.stride)
    model = build_backbone_model(cfg.patch, cfg.backbone, frame.schema, seed=cfg.train.seed)
    report = fit(model, train_w, val_w, replace(cfg.train, mode="pretrain"))

    ckpt = out / "pretrain.ckpt"
    save_checkpoint(ckpt, model, stats=splits.stats, schema=frame.schema, train_mode="pretrain",
                    extra={"default_lookback": proto.lookback, "default_horizon": proto.horizon,
                           "dataset": _dataset_name(cfg)})
    _write_json(out / "pretrain_report.json", report.to_dict())
    print(f"pretrained backbone: {ckpt}")
    print(f"parameters: {report.total_params} (all trainable)")
    print(f"best val MSE {report.best_val_loss:.6f} at epoch {report.best_epoch}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = load_run_config(args.config)
    _require_dataset(cfg)
    out = _ensure_dir(cfg.output_dir)

    ckpt_path = Path(args.backbone) if args.backbone else cfg.backbone_checkpoint
    if ckpt_path is None:
        raise ConfigError("finetune needs a pretrained checkpoint "
                          "(train.backbone_checkpoint or --backbone)", "train.backbone_checkpoint")
    loaded = load_checkpoint(ckpt_path)

    frame = build_frame(cfg.dataset)
    proto = cfg.protocol
    if args.with_future_cov is None:
        with_future = proto.future_cov_mode == "provided"
    else:
        with_future = args.with_future_cov == "true"
    with_future = with_future and frame.schema.n_future > 0

    mode = {"frozen": "frozen_backbone", "full": "full_finetune", None: cfg.train.mode}[args.mode]
    if mode == "pretrain":
        raise ConfigError("finetune mode must be frozen_backbone or full_finetune", "train.mode")

    splits = prepare_splits(frame, cfg.dataset.split, proto.lookback, proto.horizon)
    train_w, val_w, _ = split_windows(splits, proto.lookback, proto.horizon,
                                      with_future_cov=with_future,
                                      train_stride=args.train_stride, eval_stride=proto.stride)
    model = build_plugin_model(cfg.patch, cfg.backbone, cfg.fusion, frame.schema,
                               with_future_cov=with_future, seed=cfg.train.seed)
    transfer_backbone(loaded.model, model)

    report = fit(model, train_w, val_w, replace(cfg.train, mode=mode))
    tag = "cov" if with_future else "nocov"
    ckpt = out / f"finetune_{tag}.ckpt"
    save_checkpoint(ckpt, model, stats=splits.stats, schema=frame.schema, train_mode=mode,
                    extra={"default_lookback": proto.lookback, "default_horizon": proto.horizon,
                           "dataset": _dataset_name(cfg), "with_future_cov": with_future})
    _write_json(out / f"finetune_{tag}_report.json", report.to_dict())

    groups = select_trainables(model, mode)
    print(f"fine-tuned checkpoint: {ckpt}")
    print(f"mode {mode}: {report.trainable_params} trainable / {report.total_params} total parameters")
    if groups.frozen:
        print(f"frozen parameter groups: {len(groups.frozen)} (backbone encoder/decoder/input projection)")
    print(f"best val MSE {report.best_val_loss:.6f} at epoch {report.best_epoch}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config)
    _require_dataset(cfg)
    out = _ensure_dir(cfg.output_dir)
    loaded = load_checkpoint(args.checkpoint)
    if loaded.stats is None:
        raise CovcastError("checkpoint carries no normalization statistics; cannot evaluate")

    frame = build_frame(cfg.dataset)
    proto = cfg.protocol
    _, _, test = chrono_split(frame, cfg.dataset.split, min_rows=proto.lookback + proto.horizon)
    test_n = loaded.stats.transform(test)
    carries_future = proto.future_cov_mode == "provided" and loaded.model.n_future > 0
    windows = make_windows(test_n, proto.lookback, proto.horizon, stride=proto.stride,
                           with_future_cov=carries_future)
    report = evaluate(loaded.model, windows, proto, dataset=_dataset_name(cfg),
                      model_id=Path(args.checkpoint).stem)
    _write_json(out / "evaluation.json", report.to_dict())
    print(f"{report.dataset} [{proto.future_cov_mode}] "
          f"MSE {report.mse:.6f}  MAE {report.mae:.6f}  ({report.n_windows} windows)")
    if report.reference:
        print(f"published reference: MSE {report.reference['mse']:.3f}  "
              f"MAE {report.reference['mae']:.3f} (context only)")
    return EXIT_OK


def cmd_forecast(args) -> int:
    loaded = load_checkpoint(args.checkpoint)
    model, stats, schema = loaded.model, loaded.stats, loaded.schema
    if stats is None or schema is None:
        raise CovcastError("checkpoint carries no normalization stats/schema; cannot forecast raw files")
    lookback = int(loaded.meta["extra"].get("default_lookback", 168))
    horizon = args.horizon or int(loaded.meta["extra"].get("default_horizon", 24))

    frame = forward_fill(load_frame(args.input, schema, delimiter=args.delimiter))
    observed = ~frame.target_missing().any(axis=0)
    if not observed.any():
        raise CovcastError("input contains no observed target rows")
    end = int(np.flatnonzero(observed)[-1]) + 1
    if end < lookback:
        raise CovcastError(f"history shorter than lookback: required {lookback} rows, "
                           f"provided {end}")

    normalized = stats.transform(frame)
    x_target = torch.from_numpy(normalized.target_values[:, end - lookback:end].copy())
    x_past = torch.from_numpy(normalized.past_values[:, end - lookback:end].copy())
    if model.n_past > 0 and frame.past_missing()[:, end - lookback:end].any():
        raise CovcastError("past covariates contain unfilled gaps inside the lookback window")

    y_future = None
    if model.n_future > 0:
        if frame.n_rows < end + horizon:
            raise CovcastError(f"missing expected future covariates: need rows up to "
                               f"{end + horizon}, file has {frame.n_rows}")
        if frame.future_missing()[:, end:end + horizon].any():
            raise CovcastError("future-known covariates contain gaps over the forecast horizon")
        y_future = torch.from_numpy(normalized.future_values[:, end:end + horizon].copy())

    model.eval()
    with torch.no_grad():
        pred_norm = model(x_target.unsqueeze(0),
                          x_past.unsqueeze(0) if model.n_past else None,
                          y_future.unsqueeze(0) if y_future is not None else None,
                          horizon=horizon)[0].numpy()
    pred = stats.inverse(pred_norm, schema.targets)

    step = frame.freq
    future_ts = frame.timestamps[end - 1] + step * np.arange(1, horizon + 1)
    out_path = Path(args.output)
    header = "timestamp," + ",".join(schema.targets)
    lines = [header]
    for k in range(horizon):
        stamp = np.datetime_as_string(future_ts[k], unit="s")
        lines.append(stamp + "," + ",".join(f"{v:.6f}" for v in pred[:, k]))
    try:
        out_path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataFileError(f"cannot write forecast {out_path}: {exc}") from exc
    print(f"forecast written: {out_path} ({horizon} rows x {len(schema.targets)} channel(s))")

    if args.emit_plot_data:
        plot_lines = ["timestamp,channel,series,value"]
        for c, name in enumerate(schema.targets):
            hist = frame.target_values[c, end - lookback:end]
            for k in range(lookback):
                stamp = np.datetime_as_string(frame.timestamps[end - lookback + k], unit="s")
                if np.isfinite(hist[k]):
                    plot_lines.append(f"{stamp},{name},history,{hist[k]:.6f}")
            actual = frame.target_values[c, end:end + horizon]
            actual_miss = frame.target_missing()[c, end:end + horizon] if frame.n_rows > end else None
            for k in range(min(horizon, frame.n_rows - end)):
                if not actual_miss[k] and np.isfinite(actual[k]):
                    stamp = np.datetime_as_string(frame.timestamps[end + k], unit="s")
                    plot_lines.append(f"{stamp},{name},actual,{actual[k]:.6f}")
            for k in range(horizon):
                stamp = np.datetime_as_string(future_ts[k], unit="s")
                plot_lines.append(f"{stamp},{name},forecast,{pred[c, k]:.6f}")
        plot_path = Path(args.emit_plot_data)
        try:
            plot_path.write_text("\n".join(plot_lines) + "\n")
        except OSError as exc:
            raise DataFileError(f"cannot write plot data {plot_path}: {exc}") from exc
        print(f"plot data written: {plot_path}")
    return EXIT_OK


def cmd_screen(args) -> int:
    cfg = load_run_config(args.config)
    _require_dataset(cfg)
    out = _ensure_dir(cfg.output_dir)
    frame = build_frame(cfg.dataset)

    if frame.schema.n_past + frame.schema.n_future == 0:
        (out / "screening.json").write_text(json.dumps({"covariates": [], "rankings": {}},
                                                       indent=2, sort_keys=True) + "\n")
        print("no covariate channels declared; empty screening report written")
        return EXIT_OK

    if args.mask_channel:
        mask = daytime_mask(frame, channel=args.mask_channel, threshold=args.mask_threshold)
        mask_desc = f"{args.mask_channel} > {args.mask_threshold}"
    elif args.mask_hours:
        lo, hi = (int(h) for h in args.mask_hours.split("-"))
        mask = daytime_mask(frame, hours=(lo, hi))
        mask_desc = f"clock window {lo:02d}:00-{hi:02d}:00"
    else:
        mask = None
        mask_desc = "all rows"

    report = screen_frame(frame, max_lag=args.max_lag, alpha=args.alpha,
                          mask=mask, mask_description=mask_desc)
    _write_json(out / "screening.json", report.to_dict())
    (out / "screening.txt").write_text(report.render_table())
    print(report.render_table())
    print(f"screening report written: {out / 'screening.json'}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.benchmark is None:
        raise ConfigError("this command needs a benchmark section", "benchmark")
    out = _ensure_dir(cfg.output_dir)
    result = run_benchmark(cfg.benchmark, cfg.patch, cfg.backbone, cfg.fusion,
                           cfg.train, cfg.protocol)
    _write_json(out / "benchmark.json", result.to_dict())
    (out / "benchmark.txt").write_text(result.render_table())
    print(result.render_table())
    if result.n_failed:
        print(f"{result.n_failed} cell(s) FAILED", file=sys.stderr)
        return EXIT_RUNTIME
    if result.n_skipped:
        print(f"{result.n_skipped} cell(s) SKIPPED (missing data)", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covcast",
        description="Covariate-aware period-patch forecasting: train, evaluate, screen, benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a backbone from scratch on target-only windows")
    p.add_argument("config")
    p.add_argument("--train-stride", type=int, default=1)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fit the covariate plug-in on a pretrained backbone")
    p.add_argument("config")
    p.add_argument("--mode", choices=["frozen", "full"], default=None)
    p.add_argument("--with-future-cov", choices=["true", "false"], default=None)
    p.add_argument("--backbone", help="pretrained checkpoint (overrides config)")
    p.add_argument("--train-stride", type=int, default=1)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("config")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="forecast beyond the end of an input file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--emit-plot-data", default=None,
                   help="also write history/actual/forecast rows for external plotting")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--delimiter", default=",")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("screen", help="covariate screening report")
    p.add_argument("config")
    p.add_argument("--max-lag", type=int, default=24)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mask-channel", default=None)
    p.add_argument("--mask-threshold", type=float, default=0.0)
    p.add_argument("--mask-hours", default=None, help="clock window, e.g. 8-18")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("benchmark", help="train/evaluate the full dataset x protocol x variant grid")
    p.add_argument("config")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    torch.use_deterministic_algorithms(True)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFileError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CovcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("unhandled failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
