import json
import os

import numpy as np
import pytest

from fibershape import cli
from fibershape import constellation as cst
from fibershape.channel import NlinCoefficients, load_coefficients, save_coefficients
from fibershape.report import read_sweep_csv

# small split-step grid: same physics, laptop-fast
TINY_CFG = """
link.n_spans = 1
link.span_length_km = 100
link.attenuation_db_per_km = 0.2
link.gamma_per_w_km = 1.3
link.dispersion_ps_nm_km = 16.48
link.noise_figure_db = 5
link.symbol_rate_hz = 32e9
link.n_channels = 3
link.channel_spacing_hz = 50e9
link.center_wavelength_nm = 1550

train.m = 8
train.hidden_units = 16
train.learning_rate = 0.003
train.batch_schedule = 0:8
train.max_iterations = 60
train.seed = 0
train.launch_power_dbm = 0.0
train.kappa_path = {kappa}
train.mi_samples = 4096

ssf.n_symbols = 2048
ssf.oversampling = 8
ssf.rolloff = 0.05
ssf.step_km = 1.0
ssf.seed = 0
"""


@pytest.fixture
def workdir(tmp_path):
    kappa = tmp_path / "kappa.json"
    save_coefficients(NlinCoefficients(kappa0=1.6e-3, kappa1=8.5e-4, kappa2=8.2e-5), kappa)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(TINY_CFG.format(kappa=kappa), encoding="utf-8")
    return tmp_path, str(cfg)


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def test_train_writes_artifacts(workdir, capsys):
    tmp, cfg = workdir
    out = tmp / "train_run"
    rc = cli.main(["train", cfg, "--model", "gn", "--M", "8",
                   "--power-dbm", "0.0", "--out", str(out)])
    assert rc == 0
    c = cst.load(out / "constellation.json")
    assert c.order == 8
    assert c.symbol_power().mean() == pytest.approx(1.0, abs=1e-9)
    trace = (out / "trace.csv").read_text(encoding="utf-8").strip().splitlines()
    assert trace[0] == "iteration,loss,mu4,mu6,power_dbm"
    assert len(trace) == 1 + 60
    man = read_manifest(out / "manifest.json")
    assert man["status"] == "completed"
    assert man["wall_clock_seconds"] > 0
    assert man["code_version"]
    assert man["command"].startswith("fibershape train")
    for path in man["output_paths"]:
        assert os.path.exists(path)
    assert "trained gn M=8" in capsys.readouterr().out


def test_train_missing_kappa_names_calibrate_command(workdir, capsys):
    tmp, _ = workdir
    cfg = tmp / "nokappa.cfg"
    cfg.write_text(TINY_CFG.format(kappa=tmp / "absent.json"), encoding="utf-8")
    rc = cli.main(["train", str(cfg), "--model", "nlin", "--out", str(tmp / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "calibrate-nlin" in err
    assert "absent.json" in err


def test_train_joint_power_recorded_in_manifest(workdir):
    tmp, cfg = workdir
    out = tmp / "joint"
    rc = cli.main(["train", cfg, "--joint-power", "--out", str(out)])
    assert rc == 0
    man = read_manifest(out / "manifest.json")
    power = man["results"]["converged_power_dbm"]
    assert isinstance(power, float) and np.isfinite(power)


def test_train_divergence_maps_to_domain_error(workdir, capsys):
    tmp, _ = workdir
    cfg = tmp / "diverge.cfg"
    cfg.write_text(
        TINY_CFG.format(kappa=tmp / "kappa.json").replace(
            "train.learning_rate = 0.003", "train.learning_rate = 1e200"),
        encoding="utf-8",
    )
    out = tmp / "boom"
    rc = cli.main(["train", str(cfg), "--out", str(out)])
    assert rc == 1
    assert "iteration" in capsys.readouterr().err
    man = read_manifest(out / "manifest.json")
    assert man["status"] == "diverged"
    assert man["results"]["last_finite_loss"] is not None


def test_sweep_model_writes_rows_and_figures(workdir):
    tmp, cfg = workdir
    f4 = tmp / "qam4.json"
    f16 = tmp / "qam16.json"
    cst.save(cst.new_qam(4), f4)
    cst.save(cst.new_qam(16), f16)
    out = tmp / "sweep"
    rc = cli.main(["sweep", cfg, "--powers", "-2:2:2",
                   "--constellations", str(f4), str(f16), "--out", str(out)])
    assert rc == 0
    rows = read_sweep_csv(out / "sweep.csv")
    assert len(rows) == 6
    assert [r.constellation for r in rows] == ["qam16"] * 3 + ["qam4"] * 3
    assert all(r.source == "model" and not r.failed for r in rows)
    assert all(np.isfinite(r.snr_eff_db) and np.isfinite(r.mi_bit_4d) for r in rows)
    # qam4 moments pinned: mu4 = mu6 = 1 for a constant-modulus set
    assert rows[-1].mu4 == pytest.approx(1.0, abs=1e-12)
    for name in ("snr_vs_power.png", "mi_vs_power.png", "manifest.json"):
        assert (out / name).exists()
    man = read_manifest(out / "manifest.json")
    assert man["results"] == {"rows": 6, "failed_rows": 0}


def test_sweep_is_deterministic(workdir):
    tmp, cfg = workdir
    f4 = tmp / "qam4.json"
    cst.save(cst.new_qam(4), f4)
    outs = []
    for name in ("s1", "s2"):
        out = tmp / name
        rc = cli.main(["sweep", cfg, "--powers", "0:1:2",
                       "--constellations", str(f4), "--out", str(out)])
        assert rc == 0
        outs.append((out / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]


def test_sweep_ssf_source(workdir):
    tmp, cfg = workdir
    f4 = tmp / "qam4.json"
    cst.save(cst.new_qam(4), f4)
    out = tmp / "ssfsweep"
    rc = cli.main(["sweep", cfg, "--powers", "3.0", "--eval", "ssf",
                   "--constellations", str(f4), "--out", str(out)])
    assert rc == 0
    rows = read_sweep_csv(out / "sweep.csv")
    assert len(rows) == 1
    assert rows[0].source == "ssf"
    assert rows[0].snr_eff_db > 10.0  # short link, must be comfortably clean


def test_sweep_failure_recorded_per_row(workdir, monkeypatch):
    tmp, cfg = workdir
    f4 = tmp / "qam4.json"
    f16 = tmp / "qam16.json"
    cst.save(cst.new_qam(4), f4)
    cst.save(cst.new_qam(16), f16)

    real = cli._model_point

    def flaky(name, points, power, channel, n_samples, seed):
        if name == "qam16":
            raise ValueError("synthetic point failure")
        return real(name, points, power, channel, n_samples, seed)

    monkeypatch.setattr(cli, "_model_point", flaky)
    out = tmp / "partial"
    rc = cli.main(["sweep", cfg, "--powers", "0.0", "--jobs", "1",
                   "--constellations", str(f4), str(f16), "--out", str(out)])
    assert rc == 0  # sweep continues, failure recorded in its row
    rows = read_sweep_csv(out / "sweep.csv")
    by_name = {r.constellation: r for r in rows}
    assert not by_name["qam4"].failed
    assert "synthetic point failure" in by_name["qam16"].error
    assert by_name["qam16"].snr_eff_db is None
    man = read_manifest(out / "manifest.json")
    assert man["results"]["failed_rows"] == 1


def test_sweep_empty_powers_is_usage_error(workdir, capsys):
    tmp, cfg = workdir
    f4 = tmp / "qam4.json"
    cst.save(cst.new_qam(4), f4)
    rc = cli.main(["sweep", cfg, "--powers", "",
                   "--constellations", str(f4), "--out", str(tmp / "x")])
    assert rc == 2
    assert "usage error" in capsys.readouterr().err
    rc = cli.main(["sweep", cfg, "--powers", "5:1:0",
                   "--constellations", str(f4), "--out", str(tmp / "x")])
    assert rc == 2


def test_sweep_missing_constellation_is_domain_error(workdir, capsys):
    tmp, cfg = workdir
    rc = cli.main(["sweep", cfg, "--powers", "0.0",
                   "--constellations", str(tmp / "ghost.json"),
                   "--out", str(tmp / "x")])
    assert rc == 1
    assert "constellation" in capsys.readouterr().err


def test_calibrate_nlin_writes_coefficients(workdir, capsys):
    tmp, cfg = workdir
    out = tmp / "fit" / "kappa.json"
    rc = cli.main(["calibrate-nlin", cfg, "--out", str(out)])
    assert rc == 0
    coeffs = load_coefficients(out)
    assert coeffs.kappa0 > 0
    assert np.isfinite(coeffs.fit_residual)
    man = read_manifest(str(out) + ".manifest.json")
    assert man["status"] == "completed"
    assert man["results"]["n_points"] == 9
    assert "kappa0" in capsys.readouterr().out


def test_unknown_command_exits_with_usage(workdir):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
