import csv
import json
import subprocess
import sys

import pytest

from qsteer.cli import EXIT_CONFIG, EXIT_DATA, main
from qsteer.steering import fidelity_oracle


def write_cfg(path, data_dir, **kw):
    body = dict(
        model="qnn", dataset="mnist5k", data_dir=str(data_dir), n_train=60, n_test=20, sweep_n=20,
        defense="single_qubit_steer", J_list=["pi/16"], N_list=[20, 27], budget=1.0,
        attacks=[{"kind": "fgsm", "eps": [0.0, 0.1]}], train={"epochs": 2, "batch_size": 16}, seed=1,
    )
    body.update(kw)
    path.write_text(json.dumps(body))
    return path


class TestErrors:
    def test_bad_config_exit_code(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"model": "cnn"}))
        assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_missing_data_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.json", tmp_path / "nowhere")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_bad_strength(self, tmp_path):
        assert main(["fidelity-curve", "--J", "pi", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["dance"])


class TestFidelityCurve:
    def test_rows(self, tmp_path):
        assert main(["fidelity-curve", "--J", "pi/10", "pi/4", "--n-max", "20", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "fidelity.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 42
        assert float(rows[20]["fidelity"]) == pytest.approx(fidelity_oracle(0.0, 0.3141592653589793, 20), abs=1e-12)
        run = json.loads((tmp_path / "run.json").read_text())
        assert run["command"] == "fidelity-curve" and run["n_max"] == 20

    def test_console_script(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "qsteer.cli", "fidelity-curve", "--n-max", "3", "--out", str(tmp_path)],
                             capture_output=True, text=True, check=True)
        assert "wrote 16 rows" in out.stdout


class TestPipeline:
    def test_train_attack_evaluate(self, tmp_path, mnist5k_dir):
        cfg = write_cfg(tmp_path / "c.json", mnist5k_dir)
        common = ["--config", str(cfg)]
        assert main(["train", *common, "--out", str(tmp_path / "t")]) == 0
        params = tmp_path / "t" / "params.json"
        assert main(["sweep", *common, "--params", str(params), "--out", str(tmp_path / "s")]) == 0
        assert main(["attack", *common, "--params", str(params), "--out", str(tmp_path / "a")]) == 0
        assert (tmp_path / "a" / "adv_fgsm_0.1.npy").exists()
        assert main(["evaluate", *common, "--params", str(params), "--adv-dir", str(tmp_path / "a"),
                     "--out", str(tmp_path / "e1")]) == 0
        assert main(["evaluate", *common, "--params", str(params), "--out", str(tmp_path / "e2")]) == 0
        r1 = json.loads((tmp_path / "e1" / "record.json").read_text())
        r2 = json.loads((tmp_path / "e2" / "record.json").read_text())
        for k in ("clean_undefended", "clean_defended", "adversarial", "predictions", "J", "N"):
            assert r1[k] == r2[k]
        assert json.loads((tmp_path / "t" / "run.json").read_text())["config_hash"] == r1["config_hash"]

    def test_missing_adversarial_sets(self, tmp_path, mnist5k_dir):
        cfg = write_cfg(tmp_path / "c.json", mnist5k_dir)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
        code = main(["evaluate", "--config", str(cfg), "--params", str(tmp_path / "t" / "params.json"),
                     "--adv-dir", str(tmp_path / "empty"), "--out", str(tmp_path / "e")])
        assert code == EXIT_DATA

    def test_seed_override(self, tmp_path, mnist5k_dir):
        cfg = write_cfg(tmp_path / "c.json", mnist5k_dir)
        assert main(["train", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "t")]) == 0
        assert json.loads((tmp_path / "t" / "config.json").read_text())["seed"] == 9

    def test_fetch_mnist5k(self, tmp_path, mnist5k_dir):
        assert main(["fetch-data", "mnist5k", "--data-dir", str(tmp_path)]) == 0
        assert (tmp_path / "mnist5k" / "t10k-images-idx3-ubyte").exists()
