import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import pytest

import conveyor_vla.__main__ as cli
from conveyor_vla.__main__ import build_parser, main
from conveyor_vla.models.metrics import AblationReport, SuiteSummary, TierSummary
from conveyor_vla.models.training import AblationThresholds
from conveyor_vla.persistence import load_checkpoint, load_manifest
from conveyor_vla.services.ablation_service import VARIANTS, build_report


def test_mask_dump(capsys):
    assert main(["mask-dump", "--prefix", "2", "--action", "1"]) == 0
    assert capsys.readouterr().out == "1100\n1100\n1110\n1111\n"


def test_mask_dump_invalid_layout():
    assert main(["mask-dump", "--prefix", "2", "--action", "0"]) == 2


def test_lpt_plan_from_metas(tmp_path, capsys):
    sizes = {"d1": 208, "d2": 122.5, "d3": 96, "d4": 90.5, "d5": 16}
    path = tmp_path / "datasets.json"
    path.write_text(json.dumps([{"id": k, "size": v} for k, v in sizes.items()]))
    assert main(["lpt-plan", "--manifest", str(path), "--workers", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["workers"] == {"0": ["d1", "d4"], "1": ["d2", "d3", "d5"]}
    assert out["balance"]["max_load"] == 298.5
    assert out["balance"]["exact"] is True


def test_lpt_plan_from_dataset_dirs(dataset_dir, tmp_path, capsys):
    path = tmp_path / "datasets.json"
    path.write_text(json.dumps([str(dataset_dir)]))
    assert main(["lpt-plan", "--manifest", str(path), "--workers", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["workers"] == {"0": ["static_small"], "1": ["static_small"]}
    assert out["seeds"] == {"0": 0, "1": 1}


def test_lpt_plan_missing_file(tmp_path):
    assert main(["lpt-plan", "--manifest", str(tmp_path / "none.json"), "--workers", "2"]) == 2


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "demo"
    argv = ["gen-data", "--out", str(out), "--episodes", "1", "--tier", "static", "--workers", "1"]
    assert main(argv) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["episode_count"] == 1
    assert "norm_stats" not in printed
    assert load_manifest(out).name == "demo"


def test_unknown_tier(tmp_path):
    argv = ["gen-data", "--out", str(tmp_path / "x"), "--episodes", "1", "--tier", "warp"]
    assert main(argv) == 2


def test_train_then_eval(env_cfg, dataset_dir, tmp_path, capsys):
    run = tmp_path / "run"
    config = {
        "datasets": [str(dataset_dir)],
        "model": env_cfg.model_dump(mode="json"),
        "batch_size": 2,
        "total_steps": 2,
        "k": 4,
        "m": 3,
        "K_euler": 2,
        "num_workers": 0,
        "output_dir": str(run),
    }
    path = tmp_path / "train.json"
    path.write_text(json.dumps(config))
    assert main(["train", "--config", str(path), "--no-foresight"]) == 0
    ckpt = run / "checkpoint.ia1w"
    assert not load_checkpoint(ckpt).model.foresight

    argv = ["eval", "--ckpt", str(ckpt), "--settings", "1", "--tiers", "static"]
    argv += ["--workers", "1", "--out", str(tmp_path / "eval")]
    assert main(argv) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["euler_steps"] == 2
    assert (tmp_path / "eval" / "results.csv").exists()


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def _report(rate: float) -> AblationReport:
    tiers = [
        TierSummary(
            tier=tier,
            rollouts=2,
            success_rate=rate,
            mean_steps=50.0,
            foresight_beats_persistence=1.0 if tier == "moving" else None,
        )
        for tier in ("slow", "moving")
    ]
    summary = SuiteSummary(
        checkpoint="policy",
        euler_steps=10,
        settings_per_tier=2,
        tiers=tiers,
        overall_success_rate=rate,
    )
    thresholds = AblationThresholds(pretrain_gain=0.0, foresight_gain=0.0)
    return build_report(dict.fromkeys(VARIANTS, summary), {10: summary}, thresholds)


@pytest.mark.parametrize("rate,status", [(1.0, 0), (0.0, 1)])
def test_ablate_exit_status_follows_checks(monkeypatch, tmp_path, capsys, rate, status):
    seen = {}

    def fake_run(config):
        seen["config"] = config
        return _report(rate)

    monkeypatch.setattr(cli, "run_ablation", fake_run)
    overrides = tmp_path / "ablation.json"
    overrides.write_text(json.dumps({"posttrain_episodes": 5}))
    argv = ["ablate", "--config", str(overrides), "--out", str(tmp_path / "study")]
    assert main([*argv, "--settings", "2", "--workers", "1"]) == status
    config = seen["config"]
    assert config.output_dir == str(tmp_path / "study")
    assert config.eval_settings == 2 and config.workers == 1
    assert config.posttrain_episodes == 5
    printed = json.loads(capsys.readouterr().out)
    assert "variants" not in printed
    assert printed["checks"]["slow_success"] is bool(status == 0)


def test_ablate_rejects_bad_config(tmp_path):
    overrides = tmp_path / "ablation.json"
    overrides.write_text(json.dumps({"eval_tiers": ["static"]}))
    assert main(["ablate", "--config", str(overrides)]) == 2


def test_console_scripts_share_one_entry_point():
    pyproject = Path(__file__).resolve().parent.parent / "pyproject.toml"
    scripts = tomllib.loads(pyproject.read_text())["project"]["scripts"]
    assert scripts["cvla"] == scripts["a1"] == "conveyor_vla.__main__:main"
