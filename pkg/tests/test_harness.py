import json
from dataclasses import replace

import numpy as np
import pytest

from cyberdse import cli
from cyberdse import harness as hn
from cyberdse.estimators import CovarianceError


def short(attack="none", level=None, seed=0):
    """A 6 s nine-bus-like scenario with the attack window at [2, 4] s."""
    cfg = hn.preset("ninebus", attack, level, seed)
    return replace(cfg, duration_s=6.0, attack=replace(cfg.attack, window_s=(2.0, 4.0)))


def quiet(seed=0):
    """No fault, quarter noise and a small initial error: no residual reaches the Huber band."""
    cfg = short(seed=seed)
    return replace(cfg, network=replace(cfg.network, t_on=None, t_off=None),
                   noise=cfg.noise.scaled(0.25), x0_sigma_pu=0.0025)


@pytest.fixture(scope="module")
def clean_art():
    art = hn.run_pipeline(quiet())
    assert np.nanmax(np.abs(art.runs["rckf"].r_std)) <= art.config.filter.C
    return art


@pytest.fixture(scope="module")
def dos_art():
    return hn.run_pipeline(short("dos", 1.0))


# --- configuration ----------------------------------------------------------------

def test_default_config_is_the_ninebus_preset():
    assert hn.default_config() == hn.preset("ninebus")


def test_config_round_trip():
    for cfg in (hn.preset("ninebus", "fdi", 1e-3, seed=7), hn.preset("sixtyeightbus", "dos", 0.85)):
        again = hn.config_from_dict(json.loads(cfg.to_json()))
        assert again == cfg
        assert again.to_json() == cfg.to_json()


def test_config_keys_carry_units():
    doc = hn.default_config().to_dict()
    assert "duration_s" in doc and "X_dp_pu" in doc["machine"] and "omega_b_rad_s" in doc["machine"]
    assert "Q_diag_pu2" in doc["filter"]


@pytest.mark.parametrize("doc, msg", [
    ({"machine": {"X_dp": 0.3}}, "unknown key"),
    ({"durations_s": 1.0}, "unknown key"),
    ({"duration_s": "ten"}, "finite number"),
    ({"seed": -1}, "non-negative"),
    ({"sample_rate_hz": 30.0}, "divisor"),
    ({"machine": {"X_dp_pu": 1.5}}, "machine"),
    ({"attack": {"kind": "replay"}}, "attack.kind"),
    ({"attack": {"kind": "dos", "rho": 0.0}}, "attack"),
    ({"attack": {"kind": "fdi", "window_s": [0.2, 3.0]}}, "warm-up"),
    ({"filter": {"Q_diag_pu2": [1e-8, 1e-8]}}, "four"),
    ({"filter": {"dj_safety_factor": 0.9}}, "at least 1"),
])
def test_config_validation(doc, msg):
    with pytest.raises(hn.ConfigError, match=msg):
        hn.config_from_dict(doc)


def test_load_config_with_preset(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "sixtyeightbus", "seed": 3, "attack": {"kind": "dos", "rho": 0.95}}))
    cfg = hn.load_config(p)
    assert cfg.duration_s == 10.0 and cfg.seed == 3 and cfg.attack.rho == 0.95
    assert cfg.attack.window_s == (4.0, 8.0) and cfg.attack.B_j_pu == 1.6
    assert cfg.name == "sixtyeightbus-dos-rho0.95"
    p.write_text("{not json")
    with pytest.raises(hn.ConfigError, match="invalid JSON"):
        hn.load_config(p)


def test_presets():
    fam = hn.preset_family("ninebus")
    assert [c.attack.kind for c in fam] == ["fdi"] * 3 + ["dos"] * 4
    assert [c.attack.sigma_c_pu for c in fam[:3]] == [1e-4, 1e-3, 1e-2]
    assert [c.attack.rho for c in fam[3:]] == [1.0, 0.95, 0.85, 0.75]
    s = hn.preset("sixtyeightbus", "fdi", 1.0)
    assert (s.network.t_on, s.network.t_off, s.attack.B_j_pu) == (1.0, 1.2, 1.6)
    with pytest.raises(hn.ConfigError):
        hn.preset("ieee14")


def test_derived_seeds_are_independent():
    a, b = hn.derive_seeds(0), hn.derive_seeds(1)
    assert len(set(a.values())) == len(a) and a != b
    assert a == hn.derive_seeds(0)


# --- pipeline -----------------------------------------------------------------------

def test_attack_does_not_change_noise(dos_art):
    clean = hn.run_pipeline(short())
    assert np.array_equal(clean.clean.z, dos_art.clean.z)
    assert np.array_equal(clean.runs["ckf"].x_post, dos_art.calibration["ckf"].x_post)


def test_clean_run_filters_agree(clean_art):
    ra, rb = clean_art.report("ckf", "full"), clean_art.report("rckf", "full")
    for var in ("delta", "omega", "Eqp", "Edp"):
        for k, v in ra[var].items():
            assert abs(v - rb[var][k]) <= 1e-9


def test_dos_run_structure(dos_art):
    mask = dos_art.attack_mask
    assert mask.sum() == 101
    assert np.all(dos_art.attacked.z[mask] == 0)
    r = dos_art.report("ckf")
    assert r.N == 101 and r.window == pytest.approx((2.0, 4.0))
    summary = dos_art.identification_summary()
    assert summary["rckf"]["flagged_in_window"] >= 50
    m = dos_art.metrics()[dos_art.config.name]
    assert m["attack_log"]["attacked_samples"] == 101
    assert m["attack"]["ckf"]["delta"]["tau1"] is None        # every measurement is zero


def test_stage_errors_name_the_stage(monkeypatch):
    def boom(*a, **k):
        raise CovarianceError("broken")
    monkeypatch.setattr(hn, "run_filter", boom)
    with pytest.raises(hn.StageError, match="filter-clean") as e:
        hn.run_pipeline(short())
    assert isinstance(e.value.cause, CovarianceError)


def test_artifacts_are_reproducible(tmp_path):
    cfg = short("fdi", 1e-2, seed=4)
    a = tmp_path / "a"
    b = tmp_path / "b"
    hn.run_pipeline(cfg, a)
    hn.run_pipeline(hn.load_config(a / "config.json"), b)   # replay from the embedded config
    files = sorted(p.name for p in a.iterdir())
    assert "attack_log.csv" in files and "trajectory_rckf.csv" in files
    for name in files:
        if name != "timing.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_plot_files(tmp_path, clean_art, dos_art):
    paths = hn.emit_plots_data(dos_art, tmp_path / "dos")
    assert [p.name for p in paths] == ["plot_delta.csv", "plot_omega.csv", "plot_Eqp.csv", "plot_Edp.csv"]
    data = np.genfromtxt(paths[0], delimiter=",", names=True)
    assert data.dtype.names == hn.PLOT_COLUMNS
    assert len(data) == len(dos_art.attacked)
    assert data["attack_window"].sum() == 101
    clean = np.genfromtxt(hn.emit_plots_data(clean_art, tmp_path / "clean")[0], delimiter=",", names=True)
    assert np.max(np.abs(clean["ckf"] - clean["rckf"])) <= 1e-9


# --- batches ------------------------------------------------------------------------

def test_batch_needs_configs():
    with pytest.raises(ValueError):
        hn.run_batch([])


def test_batch_is_deterministic(tmp_path):
    cfgs = [short("dos", 0.85), short("fdi", 1e-3)]
    a = hn.run_batch(cfgs, [0, 1], tmp_path / "a")
    b = hn.run_batch(cfgs, [0, 1])
    assert a.summary == b.summary and a.table() == b.table()
    assert len([p for p in (tmp_path / "a").iterdir() if p.is_dir()]) == 4
    assert (tmp_path / "a" / "summary.txt").read_text() == a.table()
    assert a.summary[cfgs[0].name]["ckf"]["delta"]["tau3"]["n"] == 2


def test_batch_records_failures(monkeypatch):
    real = hn.run_pipeline

    def flaky(cfg, out=None):
        if cfg.seed == 1:
            raise hn.StageError("filter", FloatingPointError("overflow"), 42)
        return real(cfg, out)
    monkeypatch.setattr(hn, "run_pipeline", flaky)
    res = hn.run_batch([short("dos", 1.0)], [0, 1])
    assert len(res.failures) == 1 and res.failures[0][1] == 1
    assert "sample 42" in res.failures[0][2]
    assert res.summary[short("dos", 1.0).name]["rckf"]["delta"]["tau3"]["n"] == 1
    assert "FAILED" in res.table()


# --- command line -------------------------------------------------------------------

def _short_config(tmp_path, **attack):
    doc = {"preset": "ninebus", "duration_s": 6.0}
    if attack:
        doc["attack"] = {"window_s": [2.0, 4.0], **attack}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_cli_simulate_attack_estimate(tmp_path, capsys):
    cfg = _short_config(tmp_path, kind="dos", rho=0.75)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "sim")]) == 0
    stream = str(tmp_path / "sim" / "stream.csv")
    assert cli.main(["attack", "--config", cfg, "--stream", stream, "--out", str(tmp_path / "atk")]) == 0
    assert (tmp_path / "atk" / "attack_log.csv").exists()
    assert cli.main(["estimate", "--config", cfg, "--stream", str(tmp_path / "atk" / "stream_attacked.csv"),
                     "--filter", "rckf", "--out", str(tmp_path / "est")]) == 0
    assert sorted(p.name for p in (tmp_path / "est").iterdir()) == ["trajectory_rckf.csv"]
    assert "rckf:" in capsys.readouterr().out


def test_cli_pipeline_and_report(tmp_path, capsys):
    cfg = _short_config(tmp_path, kind="fdi", sigma_c_pu=0.01)
    out = tmp_path / "run"
    assert cli.main(["pipeline", "--config", cfg, "--seed", "2", "--out", str(out)]) == 0
    assert (out / "plots" / "plot_omega.csv").exists()
    assert json.loads((out / "config.json").read_text())["seed"] == 2
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "tau3(delta)" in text and "[timing]" in text


def test_cli_batch(tmp_path, capsys):
    cfg = _short_config(tmp_path, kind="dos", rho=1.0)
    assert cli.main(["batch", "--config", cfg, "--seeds", "2", "--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("== ninebus-dos-rho1") and "rckf" in out
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert summary["failures"] == []


def test_cli_validation_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"machine": {"X_d": 1.0}}))
    assert cli.main(["pipeline", "--config", str(bad)]) == 1
    assert "unknown key" in capsys.readouterr().err
    assert cli.main(["pipeline", "--preset", "ninebus", "--seed", "-1"]) == 1
    assert cli.main(["estimate", "--preset", "ninebus", "--stream", str(tmp_path / "missing.csv")]) == 1
    assert cli.main(["report", str(tmp_path)]) == 1
    clean = _short_config(tmp_path)
    assert cli.main(["attack", "--config", clean, "--stream", str(tmp_path / "x.csv")]) == 1
    with pytest.raises(SystemExit):
        cli.main(["pipeline", "--preset", "ieee14"])


def test_cli_numeric_failure(tmp_path, monkeypatch, capsys):
    cfg = _short_config(tmp_path)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "sim")]) == 0

    def boom(*a, **k):
        raise CovarianceError("P lost positive definiteness")
    monkeypatch.setattr(cli, "run_filter", boom)
    assert cli.main(["estimate", "--config", cfg, "--stream", str(tmp_path / "sim" / "stream.csv")]) == 2
    monkeypatch.setattr(hn, "run_filter", boom)
    assert cli.main(["pipeline", "--config", cfg, "--out", str(tmp_path / "p")]) == 2
    assert "filter-clean" in capsys.readouterr().err
