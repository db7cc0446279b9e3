import json

import numpy as np
import pytest

from uavswarm.cli import EXIT_CONFIG, EXIT_OK, main
from uavswarm.comms import ChannelConfig
from uavswarm.ddql import TrainerConfig
from uavswarm.gridenv import read_map
from uavswarm.scenario import ConfigError, Scenario, read_config, scenario_from_config, write_config

TINY_INI = """
[scenario]
M = 8
F = 8
U = 2
K = 2
steps = 10

[trainer]
episodes = 2
short_episode = 4
long_episode = 6
warmup_episodes = 1
batch_size = 4
replay_capacity = 200
eval_every = 2
eval_episodes = 3
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(TINY_INI)
    return p


def test_config_round_trip(tmp_path):
    sc = Scenario(M=24, K=6, clusters=2, target_mode="sparse", eta=0.1, channel=ChannelConfig(mode="none"))
    write_config(tmp_path / "c.ini", sc, {"trainer": TrainerConfig(episodes=10)})
    back = scenario_from_config(read_config(tmp_path / "c.ini"))
    assert back == sc


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[scenario]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        scenario_from_config(read_config(p))
    p.write_text("[nonsense]\na = 1\n")
    with pytest.raises(ConfigError):
        read_config(p)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        Scenario(M=10, F=20)
    with pytest.raises(ConfigError):
        Scenario(K=3, clusters=2)
    with pytest.raises(ConfigError):
        Scenario(target_mode="ring")


def test_channel_overrides():
    sc = scenario_from_config({}, {"channel.mode": "lossy", "channel.cell_side_m": "20", "U": "3"})
    assert sc.U == 3 and sc.channel.mode == "lossy" and sc.channel.cell_side_m == 20.0
    assert sc.channel.pathloss_ref_db is not None


def test_gen_map(tmp_path, cfg_file, capsys):
    out = tmp_path / "map.txt"
    assert main(["gen-map", "--config", str(cfg_file), "--set", "eta=0.1", "--seed", "3", "--out", str(out)]) == EXIT_OK
    g, U = read_map(out)
    assert g.M == 8 and U == 2 and g.seed == 3


def test_calibrate_channel(tmp_path, capsys):
    assert main(["calibrate-channel", "--out", str(tmp_path / "ch.ini")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "pathloss_ref_db" in text and "loss(110 m) = 0.500000" in text
    ch = read_config(tmp_path / "ch.ini")["channel"]
    assert ch["mode"] == "lossy"


def test_eval_compare_export(tmp_path, cfg_file, capsys):
    res = tmp_path / "res.json"
    assert main(["compare", "--config", str(cfg_file), "--policy", "la:1", "--policy", "stay",
                 "--episodes", "6", "--seed", "1", "--out", str(res)]) == EXIT_OK
    payload = json.loads(res.read_text())
    assert set(payload["reports"]) == {"la(1)", "stay"}
    assert payload["manifest"]["scenario"]["M"] == 8
    assert main(["export-plots", "--results", str(res), "--out", str(tmp_path / "tables")]) == EXIT_OK
    assert (tmp_path / "tables" / "cdf.tsv").exists() and (tmp_path / "tables" / "manifest.json").exists()
    assert main(["eval", "--config", str(cfg_file), "--policy", "random", "--episodes", "3"]) == EXIT_OK


def test_train_then_transfer_then_eval(tmp_path, cfg_file):
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--out", str(run)]) == EXIT_OK
    assert (run / "final.bin").exists() and (run / "manifest.json").exists()
    tl = tmp_path / "tl"
    assert main(["transfer", "--config", str(cfg_file), "--set", "target_mode=sparse", "--set", "d_sparse=2",
                 "--checkpoint", str(run / "final.bin"), "--episodes", "1", "--out", str(tl)]) == EXIT_OK
    assert main(["eval", "--config", str(cfg_file), "--policy", f"ddql-soft:{tl / 'final.bin'}",
                 "--episodes", "2"]) == EXIT_OK


def test_ingest_heightmap(tmp_path, capsys):
    h = np.zeros((10, 10))
    h[2:4, 2:4] = 60
    src = tmp_path / "h.csv"
    src.write_text("\n".join(",".join(str(v) for v in row) for row in h))
    out = tmp_path / "omega.txt"
    assert main(["ingest-heightmap", "--input", str(src), "--out", str(out)]) == EXIT_OK
    assert "coverage 0.040" in capsys.readouterr().out


def test_exit_codes_for_bad_config(tmp_path, capsys):
    assert main(["eval", "--set", "F=40", "--policy", "stay"]) == EXIT_CONFIG
    assert main(["eval", "--set", "nonsense", "--policy", "stay"]) == EXIT_CONFIG
    assert main(["eval", "--policy", "ddql:/does/not/exist.bin"]) == EXIT_CONFIG
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--policy", f"ddql:{bad}"]) == EXIT_CONFIG
