from __future__ import annotations

import json

import pytest

from fedcondense.cli import main
from fedcondense.config import load_config
from fedcondense.errors import ConfigError

MINI_CONFIG = """
[dataset]
source = synthetic
classes = 2
nodes_per_class = 10
p_in = 0.4
p_out = 0.05

[text]
dim = 32

[condense]
ratio = 0.3
prototypes = 2
period = 2

[evidence]
b_tok = 3

[topology]
ista_iters = 10

[federation]
rounds = 3
clients = 2

[run]
seeds = 0, 1
out_dir = {out}
"""


def write_config(tmp_path, body=None):
    path = tmp_path / "run.cfg"
    path.write_text((body or MINI_CONFIG).format(out=tmp_path / "out"))
    return path


class TestConfigFile:
    def test_defaults_and_overrides(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.settings.rounds == 3
        assert cfg.settings.lr == 0.01  # table default
        assert cfg.settings.weight_decay == 5e-4
        assert cfg.settings.b1 == 3 and cfg.settings.b2 == 2
        assert cfg.settings.hidden == cfg.settings.dim == 32
        assert cfg.seeds == [0, 1]

    def test_unknown_key_is_an_error(self, tmp_path):
        bad = MINI_CONFIG.replace("ratio = 0.3", "ratio = 0.3\nratioo = 0.5")
        with pytest.raises(ConfigError, match="ratioo"):
            load_config(write_config(tmp_path, bad))

    def test_unknown_section_is_an_error(self, tmp_path):
        bad = MINI_CONFIG + "\n[llm]\nmodel = big\n"
        with pytest.raises(ConfigError, match="llm"):
            load_config(write_config(tmp_path, bad))

    def test_bad_value_reports_key(self, tmp_path):
        bad = MINI_CONFIG.replace("rounds = 3", "rounds = soon")
        with pytest.raises(ConfigError, match="federation.rounds"):
            load_config(write_config(tmp_path, bad))

    def test_hidden_must_match_dim(self, tmp_path):
        bad = MINI_CONFIG + "\n[training]\nhidden = 64\n"
        with pytest.raises(ConfigError, match="hidden"):
            load_config(write_config(tmp_path, bad))

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")


class TestCli:
    def test_run_writes_reports_and_summary(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--quiet"]) == 0
        out = tmp_path / "out"
        for seed in (0, 1):
            lines = (out / f"rounds_seed{seed}.jsonl").read_text().strip().splitlines()
            assert len(lines) == 3
            assert json.loads(lines[0])["round"] == 1
            assert (out / f"checkpoint_seed{seed}.bin").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["accuracy"]["per_seed"]) == 2
        assert "settings.lr" in summary["config"]
        assert (out / "rounds.csv").exists()

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["run", "--config", str(cfg), "--quiet"])
        first = (tmp_path / "out" / "rounds_seed0.jsonl").read_bytes()
        main(["run", "--config", str(cfg), "--quiet"])
        assert (tmp_path / "out" / "rounds_seed0.jsonl").read_bytes() == first

    def test_seed_override_runs_single_seed(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--seed", "5", "--quiet"]) == 0
        assert (tmp_path / "out" / "rounds_seed5.jsonl").exists()

    def test_generate_data_roundtrips(self, tmp_path):
        from fedcondense.graph import load_tag

        cfg = write_config(tmp_path)
        data_dir = tmp_path / "data"
        assert main(["generate-data", "--config", str(cfg), "--out", str(data_dir), "--quiet"]) == 0
        tag = load_tag(data_dir)
        assert tag.node_count == 20

    def test_bad_config_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, MINI_CONFIG.replace("ratio = 0.3", "mystery = 1"))
        assert main(["run", "--config", str(cfg), "--quiet"]) == 2

    def test_report_prints_summary(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        main(["run", "--config", str(cfg), "--quiet"])
        assert main(["report", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "accuracy" in out

    def test_report_without_run_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["report", "--config", str(cfg)]) == 2

    def test_pack_store_written_per_client_per_refresh(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["run", "--config", str(cfg), "--seed", "0", "--quiet"])
        packs = sorted((tmp_path / "out" / "seed0" / "packs").glob("*.json"))
        # full policy: 3 rounds x 2 clients
        assert len(packs) == 6
        payload = json.loads(packs[0].read_text())
        assert all("chunks" in p and "core_node" in p for p in payload)
