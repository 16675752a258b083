import json
from pathlib import Path

import pytest
import yaml

from dtqncc.bench.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, **over):
    data = {"cc": "reno", "duration_s": 2,
            "links": [{"rate_bps": 10_000_000, "prop_delay_us": 5000, "buffer_bdp": 1.0}] * 2}
    data.update(over)
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return str(p)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_load(name):
    from dtqncc.bench.config import load
    load(CONFIGS / name)


def test_eval_writes_outputs_and_replays(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["eval", "--config", cfg, "--out", str(out), "--seed", "4"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 4 and summary["metrics"]["goodput_bps"] > 0
    assert (out / "timeseries.csv").stat().st_size > 0 and (out / "flows.csv").exists()
    assert "goodput" in capsys.readouterr().out
    assert main(["replay", str(out / "summary.json"), "--out", str(tmp_path / "again")]) == 0
    assert "identical" in capsys.readouterr().out


def test_replay_detects_edits(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    main(["eval", "--config", cfg, "--out", str(out)])
    s = json.loads((out / "summary.json").read_text())
    s["config"]["seed"] = 99
    (out / "summary.json").write_text(json.dumps(s))
    assert main(["replay", str(out / "summary.json")]) == 2
    main(["eval", "--config", cfg, "--out", str(out)])
    ts = out / "timeseries.csv"
    ts.write_text(ts.read_text().replace("\n0,", "\n7,", 1))
    assert main(["replay", str(out / "summary.json")]) == 1


def test_sweep_writes_long_csv(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--axis", "loss", "--values", "0,0.01"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("axis,value,point,rep,seed") and len(lines) == 3
    assert json.loads((out / "summary.json").read_text())["values"] == [0.0, 0.01]


def test_fct_and_fairness(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["fct", "--config", cfg, "--out", str(tmp_path / "f"), "--sizes", "20000", "--reps", "2"]) == 0
    lines = (tmp_path / "f" / "fct.csv").read_text().splitlines()
    assert lines[1].startswith("20000,2,")
    assert main(["fairness", "--config", cfg, "--out", str(tmp_path / "j"), "--competing-cc", "reno",
                 "--link", "0"]) == 0
    jfi = json.loads((tmp_path / "j" / "summary.json").read_text())["metrics"]["jfi"]
    assert 0 < jfi <= 1
    assert "jfi" in capsys.readouterr().out


def test_train_checkpoint_then_eval_only(tmp_path):
    cfg = write_cfg(tmp_path, cc="dtqn", duration_s=1)
    out = tmp_path / "t"
    assert main(["train", "--config", cfg, "--out", str(out), "--episodes", "1", "--episode-s", "1"]) == 0
    ckpt = out / "agent.ckpt"
    assert ckpt.exists() and (out / "training.csv").read_text().startswith("episode,")
    assert main(["train", "--config", cfg, "--out", str(out), "--checkpoint", str(ckpt), "--eval-only"]) == 0
    assert main(["eval", "--config", cfg, "--out", str(tmp_path / "e"), "--checkpoint", str(ckpt),
                 "--edge-latency-us", "1000"]) == 0
    s = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert s["config"]["engine"]["edge_latency_us"] == 1000 and s["config"]["checkpoint"] == str(ckpt)


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("links: [{rate_bps: 1, prop_delay_us: 1, colour: red}]\n")
    assert main(["eval", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "links[0].colour" in capsys.readouterr().err


def test_bad_engine_address_is_a_usage_error(tmp_path):
    cfg = write_cfg(tmp_path, cc="dtqn")
    assert main(["eval", "--config", cfg, "--engine", "socket:nohost"]) == 2
