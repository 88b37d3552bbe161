import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from wgqed.analysis import load_xy_csv
from wgqed.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from wgqed.config import RunManifest, load_config, sha256_file
from wgqed.polarization import build_waveplate_map, equal_amplitude_contour, waveplate_output

SMALL_G2 = """
[system]
gamma1_ghz = 0.73
gamma2_ghz = 0.79
beta1 = 0.59
beta2 = 0.59

[drive]
omega1_ghz = 0.25

[instrument]
sd1_ghz = 0.1
sd2_ghz = 0.1
quadrature_order = 3

[grid]
tau_max_ns = 1.0
tau_step_ns = 0.01
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def run(tmp_path, command, config, *extra, out="out"):
    target = tmp_path / out
    code = main([command, "--config", config, "--out", str(target), "--threads", "2", *extra])
    return code, target


def test_g2_outputs_and_manifest(tmp_path, capsys):
    code, out = run(tmp_path, "g2", write(tmp_path, SMALL_G2))
    assert code == EXIT_OK
    header, data = read_csv(out / "g2.csv")
    assert header == ["tau_ns", "g2"]
    assert data.shape == (201, 2)
    assert (out / "g2.svg").is_file()
    man = json.loads((out / "manifest.json").read_text())
    files = {o["file"]: o for o in man["outputs"]}
    assert set(files) == {"g2.csv", "g2.svg"}
    assert files["g2.csv"]["sha256"] == sha256_file(out / "g2.csv")
    assert "g2(0)" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL_G2)
    _, a = run(tmp_path, "g2", cfg, "--format", "csv", out="a")
    _, b = run(tmp_path, "g2", cfg, "--format", "csv", "--threads", "1", out="b")
    assert (a / "g2.csv").read_bytes() == (b / "g2.csv").read_bytes()
    da = json.loads((a / "manifest.json").read_text())["outputs"]
    db = json.loads((b / "manifest.json").read_text())["outputs"]
    assert da == db


def test_manifest_config_round_trip(tmp_path):
    cfg = write(tmp_path, SMALL_G2)
    _, out = run(tmp_path, "g2", cfg, "--format", "csv")
    echoed = RunManifest.read_config(out / "manifest.json")
    assert echoed == load_config(cfg)
    # the echo is itself a runnable config
    again = tmp_path / "echo.ini"
    again.write_text(json.loads((out / "manifest.json").read_text())["config"])
    _, out2 = run(tmp_path, "g2", str(again), "--format", "csv", out="again")
    assert (out / "g2.csv").read_bytes() == (out2 / "g2.csv").read_bytes()


@pytest.mark.parametrize("fmt, csv_expected, svg_expected", [("csv", True, False), ("svg", False, True)])
def test_format_flag(tmp_path, fmt, csv_expected, svg_expected):
    _, out = run(tmp_path, "g2", write(tmp_path, SMALL_G2), "--format", fmt)
    assert (out / "g2.csv").exists() == csv_expected
    assert (out / "g2.svg").exists() == svg_expected


def test_unknown_key_exit_code_and_message(tmp_path, capsys):
    text = SMALL_G2 + "\n[output]\ncolour = red\n"
    line = text.splitlines().index("colour = red") + 1
    code, _ = run(tmp_path, "g2", write(tmp_path, text))
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"run.ini:{line}: unknown key 'colour' in [output]" in err


def test_missing_config_and_wrong_mode(tmp_path, capsys):
    assert main(["g2", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["g2", "--config", "nope", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["lifetime", "--config", write(tmp_path, SMALL_G2), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["g2", "--config", write(tmp_path, SMALL_G2), "--threads", "0"]) == EXIT_CONFIG
    assert "needs" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    text = """
[system]
gamma1_ghz = 0.76
gamma2_ghz = 0.76
beta1 = 1
beta2 = 1
[drive]
omega1_ghz = 0.01
omega2_ghz = 0.01
[instrument]
enabled = false
[grid]
tau_max_ns = 0.1
tau_step_ns = 0.01
"""
    code, _ = run(tmp_path, "g2", write(tmp_path, text))
    assert code == EXIT_NUMERICAL
    assert "not unique" in capsys.readouterr().err


def test_uncoupled_variant_is_antibunched(tmp_path):
    text = SMALL_G2.replace("beta2 = 0.59", "beta2 = 0.0") + "\n[output]\nformat = csv\n"
    text = text.replace("[instrument]\n", "[instrument]\nenabled = false\n")
    _, out = run(tmp_path, "g2", write(tmp_path, text))
    _, data = read_csv(out / "g2.csv")
    assert data[np.argmin(np.abs(data[:, 0])), 1] < 0.05


def test_g2_sweep_matrix(tmp_path):
    text = SMALL_G2 + "\n[sweep]\naxis = beta2\nstart = 0\nstop = 1\nsteps = 3\n"
    text = text.replace("[instrument]\n", "[instrument]\nenabled = false\n")
    _, out = run(tmp_path, "g2", write(tmp_path, text), "--format", "csv")
    header, data = read_csv(out / "g2_sweep.csv")
    assert header == ["tau_ns", "beta2=0.0", "beta2=0.5", "beta2=1.0"]
    assert data.shape == (201, 4)
    _, zero = read_csv(out / "g2_zero.csv")
    assert np.all(np.diff(zero[:, 1]) >= 0)


def test_lifetime_with_bloch(tmp_path):
    text = """
[system]
gamma1_ghz = 0.76
gamma2_ghz = 0.76
beta1 = 1
beta2 = 1
[drive]
mode = pulsed
area_rad = 0.7853981633974483
center_ns = 0.2
[grid]
t_stop_ns = 2
t_step_ns = 0.01
[output]
bloch = true
format = csv
"""
    code, out = run(tmp_path, "lifetime", write(tmp_path, text))
    assert code == EXIT_OK
    header, data = read_csv(out / "lifetime.csv")
    assert header == ["t_ns", "intensity", "p_e1", "p_e2", "p_plus", "p_minus"]
    assert data.shape == (201, 6)
    header, bloch = read_csv(out / "bloch.csv")
    assert header == ["t_ns", "x", "y", "z", "w"]
    # in-phase excitation of a symmetric pair stays on the bright pole
    assert np.allclose(bloch[:, 1], 1.0, atol=1e-9)


def test_steadystate_map_zero_drive(tmp_path):
    text = """
[drive]
omega1_ghz = 0
[sweep]
axis = detuning_split
start = -1
stop = 1
steps = 3
axis2 = laser_detuning
start2 = -1
stop2 = 1
steps2 = 4
[output]
format = csv
"""
    code, out = run(tmp_path, "steadystate-map", write(tmp_path, text))
    assert code == EXIT_OK
    header, data = read_csv(out / "steadystate_map.csv")
    assert header[0] == "laser_detuning_ghz\\detuning_split_ghz"
    assert data.shape == (4, 4)
    assert np.all(data[:, 1:] == 0.0)


def test_steadystate_single_emitter_ridge_width(tmp_path):
    text = """
[system]
gamma1_ghz = 0.73
beta1 = 0.95
beta2 = 0
[drive]
omega1_ghz = 0.01
[sweep]
axis = detuning_split
start = 20
stop = 20
steps = 1
axis2 = laser_detuning
start2 = -1.5
stop2 = 1.5
steps2 = 601
[output]
format = csv
"""
    _, out = run(tmp_path, "steadystate-map", write(tmp_path, text))
    _, data = read_csv(out / "steadystate_map.csv")
    nu, inten = data[:, 0], data[:, 1]
    above = nu[inten >= inten.max() / 2]
    step = nu[1] - nu[0]
    fwhm = above[-1] - above[0] + step
    assert fwhm == pytest.approx(0.73, rel=0.02)


def test_waveplate_map_and_contour_replay(tmp_path):
    text = """
[sweep]
axis = qwp_deg
start = -45
stop = 135
steps = 91
axis2 = hwp_deg
start2 = 0
stop2 = 180
steps2 = 91
[output]
format = csv
"""
    code, out = run(tmp_path, "waveplate-map", write(tmp_path, text))
    assert code == EXIT_OK
    for name in ("A1sq", "A2sq", "rel_A1", "phase"):
        assert (out / f"waveplate_{name}.csv").is_file()
    header, flat = read_csv(out / "waveplate_map.csv")
    assert header == ["qwp_deg", "hwp_deg", "A1sq", "A2sq", "rel_A1", "phase_rad"]
    assert flat.shape == (91 * 91, 6)
    header, rows = read_csv(out / "contour.csv")
    assert header == ["qwp_deg", "hwp_deg", "phase_rad", "A1sq", "A2sq"]
    # replaying the stored angles reproduces the stored phases and amplitudes
    for q, h, phase, a1, a2 in rows[:: max(1, len(rows) // 25)]:
        eps = waveplate_output(q, h)
        amp = np.array([np.vdot(np.array([1, 1j]) / np.sqrt(2), eps), np.vdot(np.array([1, -1j]) / np.sqrt(2), eps)])
        assert abs(amp[0]) ** 2 == pytest.approx(a1, abs=1e-12)
        assert abs(amp[1]) ** 2 == pytest.approx(a2, abs=1e-12)
        rel = np.angle(amp[0] / amp[1])
        assert abs(np.angle(np.exp(1j * (rel - phase)))) < 1e-9
    # and a contour rebuilt from the same grid yields the same angles
    m = build_waveplate_map(np.linspace(-45, 135, 91), np.linspace(0, 180, 91))
    c = equal_amplitude_contour(m)
    assert np.array_equal(np.round(c.qwp_deg, 12), np.round(rows[:, 0], 12))


def test_waveplate_empty_contour_exit_code(tmp_path, capsys):
    text = """
[sweep]
axis = qwp_deg
start = 40
stop = 50
steps = 11
axis2 = hwp_deg
start2 = -5
stop2 = 5
steps2 = 11
[output]
format = csv
"""
    code, _ = run(tmp_path, "waveplate-map", write(tmp_path, text))
    assert code == EXIT_NUMERICAL
    assert "level set is empty" in capsys.readouterr().err


def test_rabi_equal_and_single(tmp_path):
    for name in ("rabi_equal", "rabi_emitter1"):
        cfg = load_config(name)
        text = cfg.replace("sweep", steps=21).replace("output", format="csv").to_ini()
        code, out = run(tmp_path, "rabi", write(tmp_path, text, f"{name}.ini"), out=name)
        assert code == EXIT_OK
        header, data = read_csv(out / "rabi.csv")
        assert header == ["power_mw", "I1", "I2"]
        report = (out / "rabi_fit.txt").read_text()
        if name == "rabi_equal":
            ratio = float(report.rsplit(":", 1)[1])
            assert ratio == pytest.approx(1.0, abs=0.02)
        else:
            assert "emitter 2\nnot driven" in report


def test_fit_on_g2_output(tmp_path):
    _, out = run(tmp_path, "g2", write(tmp_path, SMALL_G2), "--format", "csv")
    code = main(
        ["fit", "--data", str(out / "g2.csv"), "--model", "two_sided_exp", "--out", str(tmp_path / "fit"), "--format", "csv"]
    )
    assert code == EXIT_OK
    report = (tmp_path / "fit" / "fit_report.txt").read_text()
    assert "gamma_adip" in report
    with open(tmp_path / "fit" / "fit_params.csv") as fh:
        assert fh.readline().strip() == "model,parameter,value,stderr,fixed"
    xname, x, y, _ = load_xy_csv(tmp_path / "fit" / "fit_curve.csv", "two_sided_exp")
    assert xname == "tau_ns" and (x[0], x[-1]) == (-1.0, 1.0)
    assert np.isfinite(y).any()


def test_fit_bad_data_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("tau_ns,g2\n0,1\nx,2\n")
    code = main(["fit", "--data", str(bad), "--model", "rabi", "--out", str(tmp_path / "f")])
    assert code == EXIT_CONFIG
    assert "bad.csv:3" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("wgqed")
    cmd = [exe] if exe else [sys.executable, "-m", "wgqed.cli"]
    res = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("wgqed")
    res = subprocess.run(cmd + ["g2", "--config", "no_such_config"], capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == EXIT_CONFIG
