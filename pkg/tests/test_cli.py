import os
import subprocess
import sys

import pytest

from measureflow.cli import main

CONFIG_OK = """\
seed = 0
output_dir = "{out}"
diagnostics = ["lyapunov_convex"]
gap_levels = [1.0, 0.1]

[problem]
kind = "quadratic_potential"
dim = 3
n_particles = 8
eig_min = 0.2
eig_max = 1.0
b_scale = 1.0

[methods]
list = ["WGF", "HB", "Nes", "Exp"]
a = 0.5
t_start = 0.01

[integrator]
rtol = 1e-6
atol = 1e-6
t_end = 5.0
max_steps = 20000
n_record = 50
"""


def write_config(tmp_path, text=None, **fmt):
    out = tmp_path / "out"
    cfg = tmp_path / "run.toml"
    cfg.write_text((text or CONFIG_OK).format(out=out, **fmt))
    return str(cfg), str(out)


def test_run_produces_artifacts(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    code = main(["run", cfg])
    assert code == 0
    for m in ("WGF", "HB", "Nes", "Exp"):
        assert os.path.exists(os.path.join(out, f"trace_{m}.csv"))
    assert os.path.exists(os.path.join(out, "summary.txt"))
    assert os.path.exists(os.path.join(out, "gap.svg"))


def test_run_deterministic_bytes(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    d1.mkdir()
    d2.mkdir()
    cfg1, out1 = write_config(d1)
    cfg2, out2 = write_config(d2)
    assert main(["run", cfg1]) == 0
    assert main(["run", cfg2]) == 0
    for name in ("trace_WGF.csv", "trace_HB.csv", "gap.svg", "summary.txt"):
        with open(os.path.join(out1, name), "rb") as f1, \
             open(os.path.join(out2, name), "rb") as f2:
            assert f1.read() == f2.read()


def test_unknown_key_rejected_with_line(tmp_path, capsys):
    bad = CONFIG_OK.replace("rtol = 1e-6", "rtoll = 1e-6")
    cfg, _ = write_config(tmp_path, text=bad)
    code = main(["run", cfg])
    assert code == 1
    err = capsys.readouterr().err
    assert "rtoll" in err
    assert "line" in err


def test_malformed_toml_rejected(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, text="problem = [unclosed")
    assert main(["run", cfg]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_config_rejected(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.toml")]) == 1


def test_empty_method_list_rejected(tmp_path, capsys):
    bad = CONFIG_OK.replace('list = ["WGF", "HB", "Nes", "Exp"]', "list = []")
    cfg, _ = write_config(tmp_path, text=bad)
    assert main(["run", cfg]) == 1


def test_sweep_outputs_and_schema(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    code = main(["sweep", cfg])
    assert code == 0
    sweep = os.path.join(out, "sweep.csv")
    lines = open(sweep).read().splitlines()
    assert lines[0] == "method,gap_level,total_steps"
    # 4 methods x 2 levels
    assert len(lines) == 1 + 8
    assert os.path.exists(os.path.join(out, "sweep.svg"))


def test_sweep_requires_decreasing_levels(tmp_path, capsys):
    bad = CONFIG_OK.replace("gap_levels = [1.0, 0.1]", "gap_levels = [0.1, 1.0]")
    cfg, _ = write_config(tmp_path, text=bad)
    assert main(["sweep", cfg]) == 1
    assert "decreasing" in capsys.readouterr().err


def test_sweep_requires_levels(tmp_path, capsys):
    bad = CONFIG_OK.replace("gap_levels = [1.0, 0.1]\n", "")
    cfg, _ = write_config(tmp_path, text=bad)
    assert main(["sweep", cfg]) == 1


def test_svg_schema_stable(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["run", cfg])
    svg = open(os.path.join(out, "gap.svg")).read()
    assert 'viewBox="0 0 640 480"' in svg
    assert svg.count("<polyline") == 4
    assert "optimality gap" in svg


def test_verify_passes(capsys):
    code = main(["verify"])
    out = capsys.readouterr().out
    assert code == 0
    for name in ("dirac-consistency", "pushforward-equivalence",
                 "lyapunov-monotonicity", "finite-difference-gradients",
                 "w2-assignment-oracle"):
        assert f"{name}: pass" in out


def test_verify_detects_injected_gradient_sign_error(capsys):
    code = main(["verify", "--inject-blob-sign-error"])
    out = capsys.readouterr().out
    assert code == 1
    assert "finite-difference-gradients: FAIL" in out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "measureflow.cli", "verify"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "w2-assignment-oracle: pass" in proc.stdout


def test_thread_env_var_validation(tmp_path, monkeypatch):
    from measureflow.experiments import _thread_count
    monkeypatch.setenv("WFLOW_THREADS", "2")
    assert _thread_count() == 2
    monkeypatch.setenv("WFLOW_THREADS", "many")
    from measureflow.errors import InvalidArgument
    with pytest.raises(InvalidArgument):
        _thread_count()
