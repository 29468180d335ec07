import json

import numpy as np
import pytest
import yaml

from covcast import ConfigError
from covcast.cli import main
from covcast.config import load_run_config


BASE_CONFIG = {
    "dataset": {
        "synthetic": {"kind": "periodic_plus_future_driver", "length": 400,
                      "noise_std": 0.1, "driver_gain": 1.0, "seed": 3, "period": 8},
    },
    "model": {
        "patch_len": 8,
        "latent_dim": 8,
        "n_enc_layers": 1,
        "n_dec_layers": 1,
        "n_heads": 2,
        "ff_dim": 16,
        "dropout": 0.0,
        "max_input_patches": 16,
        "max_horizon_tokens": 16,
        "fusion": {"depth": 1, "activation": "gelu"},
    },
    "train": {"mode": "frozen_backbone", "lr": 1.0e-3, "epochs": 2, "batch_size": 64,
              "seed": 0, "patience": None, "schedule": {"step": 10, "gamma": 0.5}},
    "eval": {"lookback": 24, "horizon": 8, "future_cov_mode": "provided", "stride": 1},
}


def write_config(tmp_path, overrides=None, name="run.yaml", output_dir=None):
    cfg = json.loads(json.dumps(BASE_CONFIG))  # deep copy
    cfg["output_dir"] = str(output_dir or tmp_path / "out")
    if overrides:
        for key, value in overrides.items():
            node = cfg
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestShippedConfigs:
    def test_all_shipped_configs_parse(self):
        from pathlib import Path
        config_dir = Path(__file__).resolve().parent.parent / "configs"
        paths = sorted(config_dir.glob("*.yaml"))
        assert paths, "no shipped configs found"
        for path in paths:
            cfg = load_run_config(path)
            assert cfg.output_dir is not None, path.name


class TestConfigParsing:
    def test_valid_config_resolves(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path))
        assert cfg.patch.patch_len == 8
        assert cfg.backbone.latent_dim == 8
        assert cfg.train.epochs == 2
        assert cfg.protocol.horizon == 8

    def test_unknown_key_reports_path(self, tmp_path):
        path = write_config(tmp_path, {"model.fusion.depht": 2})
        with pytest.raises(ConfigError) as err:
            load_run_config(path)
        assert "model.fusion.depht" in str(err.value)

    def test_bad_value_reports_section(self, tmp_path):
        path = write_config(tmp_path, {"train.lr": -1.0})
        with pytest.raises(ConfigError) as err:
            load_run_config(path)
        assert "train" in str(err.value)

    def test_schedule_keys_map_to_step_and_gamma(self, tmp_path):
        path = write_config(tmp_path, {"train.schedule": {"step": 3, "gamma": 0.25}})
        cfg = load_run_config(path)
        assert cfg.train.step_size == 3 and cfg.train.gamma == 0.25

    def test_invalid_yaml_is_config_error(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("dataset: [unclosed")
        with pytest.raises(ConfigError):
            load_run_config(path)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """pretrain + finetune once; reused by the command tests below."""
    root = tmp_path_factory.mktemp("cli_run")
    cfg_path = write_config(root, output_dir=root / "out")
    assert main(["pretrain", str(cfg_path), "--train-stride", "4"]) == 0
    backbone = root / "out" / "pretrain.ckpt"
    assert backbone.exists()
    code = main(["finetune", str(cfg_path), "--backbone", str(backbone),
                 "--mode", "frozen", "--with-future-cov", "true", "--train-stride", "4"])
    assert code == 0
    return root, cfg_path


class TestPretrain:
    def test_writes_checkpoint_and_report(self, trained_run):
        root, _ = trained_run
        assert (root / "out" / "pretrain.ckpt").exists()
        report = json.loads((root / "out" / "pretrain_report.json").read_text())
        assert report["mode"] == "pretrain"
        assert report["trainable_params"] == report["total_params"]

    def test_malformed_config_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, {"model.latent_dmi": 8})
        assert main(["pretrain", str(path)]) == 2
        assert "model.latent_dmi" in capsys.readouterr().err

    def test_unwritable_output_dir_exits_3(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("i am a file")
        path = write_config(tmp_path, output_dir=blocker / "out")
        assert main(["pretrain", str(path)]) == 3

    def test_idempotent_given_seed(self, tmp_path):
        p1 = write_config(tmp_path, name="a.yaml", output_dir=tmp_path / "o1")
        p2 = write_config(tmp_path, name="b.yaml", output_dir=tmp_path / "o2")
        assert main(["pretrain", str(p1), "--train-stride", "8"]) == 0
        assert main(["pretrain", str(p2), "--train-stride", "8"]) == 0
        b1 = (tmp_path / "o1" / "pretrain.ckpt").read_bytes()
        b2 = (tmp_path / "o2" / "pretrain.ckpt").read_bytes()
        assert b1 == b2
        r1 = json.loads((tmp_path / "o1" / "pretrain_report.json").read_text())
        r2 = json.loads((tmp_path / "o2" / "pretrain_report.json").read_text())
        r1.pop("timing"), r2.pop("timing")
        assert r1 == r2


class TestFinetune:
    def test_frozen_report_excludes_backbone(self, trained_run, capsys):
        root, cfg_path = trained_run
        report = json.loads((root / "out" / "finetune_cov_report.json").read_text())
        assert report["mode"] == "frozen_backbone"
        assert 0 < report["trainable_params"] < report["total_params"]

    def test_full_mode_trains_everything(self, trained_run):
        root, cfg_path = trained_run
        backbone = root / "out" / "pretrain.ckpt"
        code = main(["finetune", str(cfg_path), "--backbone", str(backbone),
                     "--mode", "full", "--with-future-cov", "false", "--train-stride", "4"])
        assert code == 0
        report = json.loads((root / "out" / "finetune_nocov_report.json").read_text())
        assert report["trainable_params"] == report["total_params"]

    def test_missing_backbone_reference_exits_2(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["finetune", str(path)]) == 2

    def test_dimension_mismatch_reported_field_by_field(self, trained_run, tmp_path, capsys):
        root, _ = trained_run
        backbone = root / "out" / "pretrain.ckpt"
        bigger = write_config(tmp_path, {"model.latent_dim": 16, "model.n_heads": 2})
        assert main(["finetune", str(bigger), "--backbone", str(backbone)]) == 1
        err = capsys.readouterr().err
        assert "latent_dim" in err and "mismatch" in err

    def test_schema_not_in_data_exits_nonzero(self, trained_run, tmp_path, capsys):
        root, _ = trained_run
        backbone = root / "out" / "pretrain.ckpt"
        csv = tmp_path / "thin.csv"
        stamps = [str(np.datetime64("2021-01-01T00:00:00") + np.timedelta64(h, "h"))
                  for h in range(64)]
        csv.write_text("\n".join(["timestamp,y"] + [f"{t},1.0" for t in stamps]) + "\n")
        cfg = write_config(tmp_path, {
            "dataset": {"path": str(csv),
                        "schema": {"targets": ["y"], "future_covariates": ["ghost"],
                                   "frequency": "1h"}},
        }, name="mismatch.yaml")
        code = main(["finetune", str(cfg), "--backbone", str(backbone)])
        assert code == 1
        assert "ghost" in capsys.readouterr().err


class TestEvaluateCmd:
    def test_evaluate_finetuned_checkpoint(self, trained_run, capsys):
        root, cfg_path = trained_run
        ckpt = root / "out" / "finetune_cov.ckpt"
        assert main(["evaluate", str(cfg_path), "--checkpoint", str(ckpt)]) == 0
        payload = json.loads((root / "out" / "evaluation.json").read_text())
        assert payload["mse"] >= 0.0 and payload["n_windows"] > 0


class TestScreenCmd:
    def test_three_ranking_sections(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "dataset.synthetic": {"kind": "var_coupled", "length": 500, "seed": 1}})
        assert main(["screen", str(cfg), "--max-lag", "4"]) == 0
        payload = json.loads((tmp_path / "out" / "screening.json").read_text())
        assert set(payload["rankings"]) == {"pearson", "granger", "lasso"}
        assert (tmp_path / "out" / "screening.txt").exists()

    def test_no_covariates_is_notice_not_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "dataset.synthetic": {"kind": "periodic", "length": 300, "seed": 1}})
        assert main(["screen", str(cfg)]) == 0
        assert "no covariate channels" in capsys.readouterr().out

    def test_short_series_skips_with_reason(self, tmp_path):
        cfg = write_config(tmp_path, {
            "dataset.synthetic": {"kind": "var_coupled", "length": 40, "seed": 1}})
        assert main(["screen", str(cfg), "--max-lag", "18"]) == 0
        payload = json.loads((tmp_path / "out" / "screening.json").read_text())
        notes = [n for rec in payload["covariates"] for n in rec["notes"]]
        assert any("skipped" in n for n in notes)


class TestBenchmarkCmd:
    def bench_config(self, tmp_path, extra=None):
        cfg = {
            "model": BASE_CONFIG["model"],
            "train": BASE_CONFIG["train"],
            "eval": BASE_CONFIG["eval"],
            "output_dir": str(tmp_path / "bench_out"),
            "benchmark": {
                "pretrain_epochs": 1,
                "finetune_epochs": 1,
                "train_stride": 8,
                "datasets": [{"name": "driver",
                              "synthetic": {"kind": "periodic_plus_future_driver",
                                            "length": 400, "seed": 2, "period": 8}}],
            },
        }
        if extra:
            cfg["benchmark"]["datasets"].append(extra)
        path = tmp_path / "bench.yaml"
        path.write_text(yaml.safe_dump(cfg))
        return path

    def test_full_grid_exit_0(self, tmp_path):
        path = self.bench_config(tmp_path)
        assert main(["benchmark", str(path)]) == 0
        table = (tmp_path / "bench_out" / "benchmark.txt").read_text()
        assert table.count("driver") == 4

    def test_missing_file_exit_3_table_still_written(self, tmp_path):
        extra = {"name": "ghost", "path": "no/such/file.csv",
                 "schema": {"targets": ["y"], "frequency": "1h"}}
        path = self.bench_config(tmp_path, extra=extra)
        assert main(["benchmark", str(path)]) == 3
        payload = json.loads((tmp_path / "bench_out" / "benchmark.json").read_text())
        assert payload["n_skipped"] == 4
        statuses = {c["dataset"]: c["status"] for c in payload["cells"]}
        assert statuses["driver"] == "OK" and statuses["ghost"] == "SKIPPED"


class TestForecastCmd:
    def make_checkpoint(self, tmp_path, patch_len, lookback, horizon, freq,
                        n_targets=1, max_tokens=16, max_patches=16):
        import torch
        from covcast import (BackboneConfig, ChannelSchema, CovariateForecaster,
                             FusionConfig, NormStats, PatchConfig, save_checkpoint)
        torch.manual_seed(0)
        schema = ChannelSchema(targets=tuple(f"t{i}" for i in range(n_targets)),
                               future_covariates=("drv",), frequency=freq)
        model = CovariateForecaster(
            PatchConfig(patch_len=patch_len),
            BackboneConfig(latent_dim=8, n_enc_layers=1, n_dec_layers=1, n_heads=2,
                           ff_dim=16, dropout=0.0, max_input_patches=max_patches,
                           max_horizon_tokens=max_tokens),
            FusionConfig(), n_targets=n_targets, n_past=0, n_future=1)
        names = schema.channel_names
        stats = NormStats(names, np.zeros(len(names)), np.ones(len(names)))
        path = tmp_path / "fc.ckpt"
        save_checkpoint(path, model, stats=stats, schema=schema, train_mode="frozen_backbone",
                        extra={"default_lookback": lookback, "default_horizon": horizon})
        return path, schema

    def write_input(self, tmp_path, schema, n_history, n_future, step_minutes):
        rng = np.random.default_rng(0)
        total = n_history + n_future
        stamps = [str(np.datetime64("2021-01-01T00:00:00") +
                      np.timedelta64(step_minutes * k, "m")) for k in range(total)]
        names = schema.channel_names
        lines = ["timestamp," + ",".join(names)]
        for k in range(total):
            cells = []
            for name in names:
                if name in schema.targets and k >= n_history:
                    cells.append("")  # horizon rows: future covariates only
                else:
                    cells.append(f"{rng.normal():.4f}")
            lines.append(stamps[k] + "," + ",".join(cells))
        path = tmp_path / "input.csv"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_multiday_high_resolution_forecast(self, tmp_path):
        # 10 days of 5-minute history, 15-day horizon: 4320 forecast rows
        ckpt, schema = self.make_checkpoint(tmp_path, patch_len=288, lookback=2880,
                                            horizon=4320, freq="5min")
        inp = self.write_input(tmp_path, schema, n_history=2880, n_future=4320,
                               step_minutes=5)
        out = tmp_path / "forecast.csv"
        assert main(["forecast", "--checkpoint", str(ckpt), "--input", str(inp),
                     "--output", str(out)]) == 0
        rows = out.read_text().strip().splitlines()
        assert len(rows) == 1 + 4320

    def test_day_ahead_quarter_hour_forecast(self, tmp_path):
        # 7-day lookback at 15 minutes, next-day curve: 96 rows
        ckpt, schema = self.make_checkpoint(tmp_path, patch_len=96, lookback=672,
                                            horizon=96, freq="15min")
        inp = self.write_input(tmp_path, schema, n_history=672, n_future=96,
                               step_minutes=15)
        out = tmp_path / "day_ahead.csv"
        plot = tmp_path / "plot.csv"
        assert main(["forecast", "--checkpoint", str(ckpt), "--input", str(inp),
                     "--output", str(out), "--emit-plot-data", str(plot)]) == 0
        rows = out.read_text().strip().splitlines()
        assert len(rows) == 1 + 96
        plot_rows = plot.read_text().strip().splitlines()
        kinds = {line.split(",")[2] for line in plot_rows[1:]}
        assert kinds == {"history", "forecast"}

    def test_short_history_reports_lengths(self, tmp_path, capsys):
        ckpt, schema = self.make_checkpoint(tmp_path, patch_len=8, lookback=64,
                                            horizon=8, freq="1h")
        inp = self.write_input(tmp_path, schema, n_history=32, n_future=8, step_minutes=60)
        out = tmp_path / "f.csv"
        assert main(["forecast", "--checkpoint", str(ckpt), "--input", str(inp),
                     "--output", str(out)]) == 1
        err = capsys.readouterr().err
        assert "required 64" in err and "32" in err

    def test_missing_future_covariates_detected(self, tmp_path, capsys):
        ckpt, schema = self.make_checkpoint(tmp_path, patch_len=8, lookback=32,
                                            horizon=8, freq="1h")
        inp = self.write_input(tmp_path, schema, n_history=48, n_future=0, step_minutes=60)
        out = tmp_path / "f.csv"
        assert main(["forecast", "--checkpoint", str(ckpt), "--input", str(inp),
                     "--output", str(out)]) == 1
        assert "future" in capsys.readouterr().err
