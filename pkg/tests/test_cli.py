import json
import subprocess
import sys


from latentrl.cli import main


def test_cost_report(capsys):
    assert main(["cost-report", "--G", "64", "--K", "12"]) == 0
    out = capsys.readouterr().out
    assert "0.1875" in out and "5.33x" in out


def test_cost_report_budget_error(capsys):
    assert main(["cost-report", "--G", "4", "--K", "5"]) == 2


def test_missing_config_exit_2(capsys, tmp_path):
    missing = tmp_path / "absent.yaml"
    assert main(["train", "--config", str(missing)]) == 2
    assert "absent.yaml" in capsys.readouterr().err


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("train", "eval", "variance-lab", "cost-report", "ablate"):
        assert cmd in out


def test_unknown_flag_rejected(capsys):
    assert main(["cost-report", "--G", "4", "--K", "2", "--bogus"]) == 2


def test_train_then_eval(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("iterations: 2\nG: 4\nK: 2\neval_instances: 10\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--seed", "3", "--modulus", "8"]) == 0
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["seed"] == 3 and resolved["modulus"] == 8 and resolved["G"] == 4
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(out / "ckpt_2.bin"), "--n", "10"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0 <= rep["pass_at_1"] <= 1
    assert main(["eval", "--ckpt", str(out / "ckpt_2.bin"), "--n", "0"]) == 2


def test_corrupt_checkpoint_exit_4(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"LRCKPT\x00\x01" + b"\x00" * 64)
    assert main(["eval", "--ckpt", str(bad), "--n", "5"]) == 4


def test_bad_config_value_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"K": 99}')
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2


def test_variance_lab_csv(tmp_path, capsys):
    assert main(["variance-lab", "--horizons", "4,8", "--samples", "500", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "variance.csv").read_text().splitlines()
    assert lines[0].startswith("kind,L,n_samples") and len(lines) == 5


def test_default_out_uses_env(tmp_path, monkeypatch):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("iterations: 1\nG: 4\nK: 2\neval_instances: 5\n")
    monkeypatch.setenv("DLR_RUN_DIR", str(tmp_path / "root"))
    assert main(["train", "--config", str(cfg)]) == 0
    (run,) = (tmp_path / "root").iterdir()
    assert (run / "metrics.jsonl").exists()


def test_ablate(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("iterations: 2\neval_instances: 5\n")
    assert main(["ablate", "--config", str(cfg), "--kind", "trainable_decoder", "--seeds", "1",
                 "--out", str(tmp_path / "a")]) == 0
    assert "changed" in capsys.readouterr().out
    assert (tmp_path / "a/ablation.csv").exists()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "latentrl", "cost-report", "--G", "64", "--K", "12"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "reduction=5.33x" in r.stdout
