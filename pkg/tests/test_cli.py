import csv
import json
import struct

import numpy as np
import pytest

from pfedsv.cli import main
from pfedsv.learner import load_params

SMOKE = """
algorithm = pfedsv
clients = 4
rounds = 2
epochs = 1
lr = 0.2
batch_size = 16
k = 2
synth_classes = 6
synth_dim = 8
synth_per_class = 30
synth_spread = 0.08
labels_per_client = 2
seed = 0
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SMOKE)
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestRunCommand:
    def test_writes_artifact_set(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg_path, "--out", out) == 0
        for name in (
            "rounds.csv",
            "summary.json",
            "relevance_final.csv",
            "relevance_truth.csv",
            "partition_labels.csv",
        ):
            assert (out / name).exists()

    def test_reruns_byte_identical(self, cfg_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("run", "--config", cfg_path, "--out", a)
        run_cli("run", "--config", cfg_path, "--out", b)
        assert (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()

    def test_zero_rounds_header_only(self, cfg_path, tmp_path):
        cfg0 = cfg_path.parent / "zero.cfg"
        cfg0.write_text(SMOKE.replace("rounds = 2", "rounds = 0"))
        out = tmp_path / "zero"
        assert run_cli("run", "--config", cfg0, "--out", out) == 0
        lines = (out / "rounds.csv").read_text().splitlines()
        assert lines == ["round,client,participated,test_accuracy,k_eff,coalition,shapley,weights,fallback"]

    def test_summary_mta_recomputable(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        run_cli("run", "--config", cfg_path, "--out", out)
        summary = json.loads((out / "summary.json").read_text())
        per_round = {}
        with open(out / "rounds.csv") as fh:
            for row in csv.DictReader(fh):
                per_round.setdefault(int(row["round"]), []).append(
                    float(row["test_accuracy"])
                )
        for t, accs in per_round.items():
            assert abs(summary["mta_per_round"][t] - np.mean(accs)) < 1e-9
        assert abs(summary["final_mta"] - np.mean(per_round[max(per_round)])) < 1e-9

    def test_refuses_nonempty_without_force(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "out"
        run_cli("run", "--config", cfg_path, "--out", out)
        assert run_cli("run", "--config", cfg_path, "--out", out) == 1
        assert "--force" in capsys.readouterr().err
        assert run_cli("run", "--config", cfg_path, "--out", out, "--force") == 0

    def test_seed_override(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        run_cli("run", "--config", cfg_path, "--out", out, "--seed", 5)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 5

    def test_repeats_layout_and_stats(self, cfg_path, tmp_path):
        out = tmp_path / "rep"
        assert run_cli("run", "--config", cfg_path, "--out", out, "--repeats", 2) == 0
        assert (out / "run_seed0" / "rounds.csv").exists()
        assert (out / "run_seed1" / "rounds.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        per_seed = summary["mta_per_seed"]
        assert summary["seeds"] == [0, 1]
        assert summary["mta_mean"] == pytest.approx(np.mean(per_seed))
        assert summary["mta_std"] == pytest.approx(np.std(per_seed, ddof=1))

    def test_checkpoints_round_trip(self, cfg_path, tmp_path):
        out = tmp_path / "ck"
        run_cli("run", "--config", cfg_path, "--out", out, "--checkpoints")
        files = sorted((out / "checkpoints").iterdir())
        assert len(files) == 4
        params = load_params(files[0])
        assert params.arch.input_dim == 8

    def test_relevance_matrices(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        run_cli("run", "--config", cfg_path, "--out", out)
        final = np.loadtxt(out / "relevance_final.csv", delimiter=",")
        truth = np.loadtxt(out / "relevance_truth.csv", delimiter=",", dtype=int)
        assert final.shape == (4, 4)
        assert truth.shape == (4, 4)
        assert np.array_equal(truth, truth.T)
        assert set(truth.ravel().tolist()) <= {0, 1}

    def test_default_out_honors_env(self, cfg_path, tmp_path, monkeypatch):
        root = tmp_path / "root"
        monkeypatch.setenv("PFEDSV_OUT", str(root))
        assert run_cli("run", "--config", cfg_path) == 0
        assert (root / "exp-pfedsv-seed0" / "rounds.csv").exists()

    def test_bad_config_exit_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("clients = 0\n")
        assert run_cli("run", "--config", bad, "--out", tmp_path / "x") == 1
        assert "clients" in capsys.readouterr().err

    def test_missing_file_exit_two(self, tmp_path):
        assert run_cli("run", "--config", tmp_path / "ghost.cfg") == 2


class TestCompareCommand:
    def test_table_and_json(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "cmp"
        code = run_cli(
            "compare",
            "--config",
            cfg_path,
            "--algorithms",
            "separate,fedavg",
            "--repeats",
            2,
            "--out",
            out,
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "separate" in printed and "fedavg" in printed
        payload = json.loads((out / "compare_summary.json").read_text())
        assert set(payload["results"]) == {"separate", "fedavg"}
        for row in payload["results"].values():
            assert len(row["mta_per_seed"]) == 2

    def test_empty_algorithms_rejected(self, cfg_path, tmp_path):
        assert (
            run_cli(
                "compare", "--config", cfg_path, "--algorithms", ",", "--out", tmp_path / "x"
            )
            == 1
        )


class TestInspectCommand:
    def test_prints_shape_and_histogram(self, tmp_path, capsys):
        img = tmp_path / "im.idx"
        lbl = tmp_path / "lb.idx"
        img.write_bytes(struct.pack(">IIII", 2051, 3, 2, 2) + bytes(range(12)))
        lbl.write_bytes(struct.pack(">II", 2049, 3) + bytes([0, 1, 1]))
        assert run_cli("inspect", "--idx", img, lbl) == 0
        out = capsys.readouterr().out
        assert "samples: 3" in out
        assert "features per sample: 4" in out
        assert "label 1: 2" in out

    def test_bad_magic_exit_two(self, tmp_path):
        img = tmp_path / "im.idx"
        lbl = tmp_path / "lb.idx"
        img.write_bytes(struct.pack(">IIII", 9999, 1, 2, 2) + bytes(4))
        lbl.write_bytes(struct.pack(">II", 2049, 1) + bytes([0]))
        assert run_cli("inspect", "--idx", img, lbl) == 2
