import json
import os
import subprocess
import sys


from surrocal.cli import run

WORLD = json.dumps({"n_design": 30, "upper_dims": [6, 4]})


def _files(root):
    out = {}
    for d, _, fs in os.walk(root):
        for f in fs:
            p = os.path.join(d, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_gen_synthetic_reproducible(tmp_path):
    for tag in ("a", "b"):
        assert run(["gen-synthetic", "--seed", "3", "--world", WORLD, "-o", str(tmp_path / tag)]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b and "manifest.json" in a and "run_config.json" in a


def test_pipeline_and_errors(tmp_path):
    arch = str(tmp_path / "arch")
    assert run(["gen-synthetic", "--world", WORLD, "-o", arch]) == 0
    fits = str(tmp_path / "fits")
    assert run(["fit-emulator", arch, "--max-evals", "300", "-o", fits]) == 0
    assert sorted(f for f in os.listdir(fits) if f != "run_config.json") == \
        ["ocean.json", "surface.json", "upper_air.json"]
    cal = str(tmp_path / "cal")
    assert run(["calibrate", arch, "--fits", fits, "--top-k", "1", "--max-evals", "300",
                "-o", cal]) == 0
    res = json.load(open(os.path.join(cal, "calibration.json")))
    assert set(res["theta_hat"]) == {"S", "sqrt_Kv", "F_aer"}
    assert run(["verify", arch, "-o", str(tmp_path / "v")]) == 0

    os.remove(os.path.join(arch, "design.csv"))
    assert run(["fit-emulator", arch, "-o", fits]) == 2


def test_sensitivity_demo(tmp_path):
    assert run(["sensitivity-demo", "--n", "1000", "-o", str(tmp_path)]) == 0
    meta = json.load(open(tmp_path / "sensitivity.json"))
    assert meta["summary"]["n"] == 1000


def test_config_file_and_usage_errors(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 500}))
    assert run(["sensitivity-demo", "--config", str(cfg), "-o", str(tmp_path / "o")]) == 0
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["sensitivity-demo", "--config", str(cfg), "-o", str(tmp_path / "o")]) == 2
    assert run(["sensitivity-demo", "--no-such-flag"]) == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "surrocal.cli", "verify", "-o", ""],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "[PASS]" in r.stdout and "[FAIL]" not in r.stdout
