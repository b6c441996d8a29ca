import json

import pytest
import torch

from hierloc.cli import main
from hierloc.config import ConfigError, RunConfig, from_mapping, load_config
from hierloc.model import MobilityModel
from hierloc.training import save_checkpoint

from conftest import TINY

SMALL = {**{k: v for k, v in TINY.items()}, "n_users": 3, "n_days": 10, "batch_size": 8, "epochs": 2}


def write_config(tmp_path, **extra):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**SMALL, "out_dir": str(tmp_path / "out"), **extra}))
    return path


def test_defaults_mirror_reference_settings():
    cfg = RunConfig()
    assert (cfg.slots_per_day, cfg.lookback, cfg.horizon, cfg.segment_length) == (48, 336, 48, 48)
    assert cfg.sweep_learning_rates == (1e-4, 3e-4, 5e-4)
    assert cfg.sweep_weight_decays == (0.0, 0.001, 0.01)


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        from_mapping({"bogus": 1})
    path = tmp_path / "c.json"
    path.write_text('{"grid_width": 10, "typo_key": 3}')
    with pytest.raises(ConfigError):
        load_config(path)
    assert main(["generate", "--config", str(path)]) == 2


@pytest.mark.parametrize("values", [{"lookback": "x"}, {"use_tokenization": 1}, {"lookback": 50},
                                    {"provider": "llm"}, {"grid_width": 2.5}])
def test_bad_values(values):
    with pytest.raises(ConfigError):
        from_mapping(values)


def test_missing_data_exit_code(tmp_path):
    assert main(["train", "--config", str(write_config(tmp_path))]) == 3


def test_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    for cmd in ("generate", "emit-prompts", "precompute", "train", "eval"):
        assert main([cmd, "--config", str(cfg)]) == 0, cmd
    assert (out / "trajectories.csv").exists()
    assert any((out / "prompts").iterdir())
    assert (out / "semantics.rsem").read_bytes()[:4] == b"RSEM"
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 2
    report = json.loads((out / "eval" / "metrics.json").read_text())
    assert 0 <= report["acc1"] <= report["acc3"] <= report["acc5"] <= 1
    assert (out / "eval" / "predictions.csv").read_text().startswith("user_id,day_index,tod_slot,rank")
    first = (out / "eval" / "metrics.json").read_text()
    assert main(["eval", "--config", str(cfg)]) == 0
    assert (out / "eval" / "metrics.json").read_text() == first


def test_ablate_and_sweep(tmp_path):
    cfg = write_config(tmp_path, epochs=1, sweep_learning_rates=[3e-4], sweep_weight_decays=[0.0, 0.01])
    assert main(["generate", "--config", str(cfg)]) == 0
    assert main(["ablate", "--config", str(cfg)]) == 0
    rows = json.loads((tmp_path / "out" / "ablation.json").read_text())
    assert [r["variant"] for r in rows] == ["full", "no-token", "no-ha", "no-traj-info", "no-task-desc"]
    assert rows[0]["delta_vs_full"] == 0
    assert main(["sweep", "--config", str(cfg)]) == 0
    assert len((tmp_path / "out" / "sweep.csv").read_text().splitlines()) == 3


def test_uniform_head_is_chance_level(tmp_path):
    cfg = write_config(tmp_path, grid_width=20, grid_height=20, n_users=20)
    assert main(["generate", "--config", str(cfg)]) == 0
    run = load_config(cfg)
    model = MobilityModel(run.model_config())
    with torch.no_grad():
        model.head.proj.weight.zero_()
        model.head.proj.bias.zero_()
    save_checkpoint(tmp_path / "uniform.ckpt", model)
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "uniform.ckpt")]) == 0
    report = json.loads((tmp_path / "out" / "eval" / "metrics.json").read_text())
    assert report["max_row_sum_error"] < 1e-6
    n = report["n_predictions"]
    # ties go to cell 0, which is a hit with probability about 1/400
    assert report["acc1"] <= 1 / 400 + 3 * (1 / 400 / n) ** 0.5 + 1 / n


def test_no_token_flag(tmp_path):
    cfg = write_config(tmp_path, epochs=1, data_path=str(tmp_path / "out" / "trajectories.csv"))
    assert main(["generate", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg), "--no-token", "--out", str(tmp_path / "nt")]) == 0
    from hierloc.training import load_model

    assert not load_model(tmp_path / "nt" / "checkpoint.ckpt").config.use_tokenization


def test_backbone_flag(tmp_path):
    from hierloc.cli import build_parser, resolve_config

    args = build_parser().parse_args(["train", "--backbone", "depth=3,heads=2,seed=9"])
    cfg = resolve_config(args)
    assert (cfg.backbone_depth, cfg.backbone_heads, cfg.backbone_seed) == (3, 2, 9)
    for bad in ("depth=x", "width=3", "depth"):
        with pytest.raises(ConfigError):
            resolve_config(build_parser().parse_args(["train", "--backbone", bad]))
    assert main(["generate", "--config", str(write_config(tmp_path)), "--backbone", "layers=2"]) == 2
