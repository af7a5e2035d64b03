import numpy as np
import pytest
import yaml

from pairbath.errors import ConfigError
from pairbath.cli_runner import (
    _fmt,
    cmd_run,
    cmd_scan,
    load_config,
    main,
    validate_config,
)

CHAIN = {"kind": "chain", "n": 4, "spacing": 8.0, "z0": 100.0}


def _write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_fmt_types():
    assert _fmt(True) == "true" and _fmt(False) == "false"
    assert _fmt(7) == "7"
    assert _fmt(0.1) == "0.1"
    assert _fmt(1 / 3) == "0.333333333333333"  # 15 significant digits
    assert _fmt(float("nan")) == "nan"


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("geometry:\n  kind: [unclosed\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(bad)
    top = tmp_path / "top.yaml"
    top.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(top)


def test_load_config_accepts_manifest(tmp_path):
    doc = {"tool": "pairbath 0.1.0", "command": "run",
           "config": {"seed": 3, "geometry": dict(CHAIN)},
           "resolved": {}, "outputs": {}}
    p = tmp_path / "manifest.yaml"
    p.write_text(yaml.safe_dump(doc))
    raw = load_config(p)
    assert raw == {"seed": 3, "geometry": dict(CHAIN)}


def test_validate_minimal_config_golden_defaults():
    cfg = validate_config({"geometry": dict(CHAIN)})
    s = 1 / np.sqrt(2)
    assert cfg == {
        "seed": 0,
        "geometry": {"kind": "chain", "n": 4, "spacing": 8.0, "z0": 100.0,
                     "x0": 0.0},
        "coupling": {"prefactor": 1.0},
        "protocol": {"omega": "auto", "tau": "auto", "units": "absolute",
                     "measurements": 100, "alpha": [s, 0.0], "beta": [s, 0.0],
                     "dephasing_rate": 0.0, "readout_time": None},
        "engine": {"name": "dense", "dense_limit": 12, "branch_cap": 2**20,
                   "samples": 200, "sample_basis": "haar",
                   "initial_state": "polarized", "purity_pairs": 256},
    }


def test_validate_collects_every_error():
    raw = {
        "seed": -1,
        "extras": {},
        "geometry": {"kind": "ring"},
        "protocol": {"tau": -2.0, "measurements": 0},
        "engine": {"name": "gpu"},
    }
    with pytest.raises(ConfigError) as exc:
        validate_config(raw)
    msg = str(exc.value)
    assert msg.startswith("invalid configuration:")
    for frag in ("seed:", "extras: unknown section", "geometry.kind",
                 "protocol.tau", "protocol.measurements", "engine.name"):
        assert frag in msg, frag


def test_validate_dense_limit_conflict():
    raw = {"geometry": {"kind": "chain", "n": 13, "spacing": 1.0, "z0": 5.0}}
    with pytest.raises(ConfigError, match="limited to 12 spins.*has 13"):
        validate_config(raw)
    raw["engine"] = {"name": "factored"}
    validate_config(raw)  # other engines take any N
    raw["engine"] = {"name": "dense", "dense_limit": 14}
    validate_config(raw)  # raised limit clears it too


def test_validate_scan_section_required():
    with pytest.raises(ConfigError, match="scan: is required"):
        validate_config({"geometry": dict(CHAIN)}, command="scan")
    cfg = validate_config(
        {"geometry": dict(CHAIN),
         "scan": {"omega": {"start": 0.5, "stop": 2.0, "points": 3},
                  "tau": {"start": 0.5, "stop": 2.0, "points": 3}}},
        command="scan")
    assert cfg["scan"]["measurements"] == 40  # default


def test_validate_amplitudes():
    base = {"geometry": dict(CHAIN)}
    cfg = validate_config({**base, "protocol": {"alpha": 0.6, "beta": [0.0, 0.8]}})
    assert cfg["protocol"]["alpha"] == [0.6, 0.0]
    assert cfg["protocol"]["beta"] == [0.0, 0.8]
    with pytest.raises(ConfigError, match="must be 1"):
        validate_config({**base, "protocol": {"alpha": 0.6, "beta": 0.6}})


def test_run_records_g_eff_unit_conversion(tmp_path):
    raw = {
        "geometry": {"kind": "explicit",
                     "g_vectors": [[2.5, 0.0, 0.0], [0.0, 2.5, 0.0]]},
        "protocol": {"omega": 1.0, "tau": 2.0, "units": "g_eff",
                     "measurements": 2},
    }
    cfg = validate_config(raw)
    cmd_run(cfg, tmp_path)
    man = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    res = man["resolved"]
    assert abs(res["g_eff"] - 2.5) < 1e-12
    assert abs(res["omega"] - 2.5) < 1e-12          # 1.0 in g_eff units
    assert abs(res["tau"] - 0.8) < 1e-12            # 2.0 / g_eff
    assert abs(res["omega_over_g_eff"] - 1.0) < 1e-12
    assert abs(res["tau_times_g_eff"] - 2.0) < 1e-12


def test_run_outputs_and_determinism(tmp_path):
    raw = {"geometry": {"kind": "dimer_chain", "n_pairs": 2,
                        "pair_spacing": 8.0, "dimer_gap": 1.0,
                        "z0": 100.0, "x0": 60.0},
           "protocol": {"measurements": 10}}
    cfg = validate_config(raw)
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert cmd_run(cfg, a) == 0
    assert cmd_run(cfg, b) == 0
    for name in ("trajectory.csv", "pairs.csv", "manifest.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    lines = (a / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "step,conditional_p,cumulative_p,purity"
    assert len(lines) == 11
    pairs = (a / "pairs.csv").read_text().splitlines()
    assert pairs[0] == "spin_i,spin_j,fidelity,phase,concurrence"


def test_run_manifest_round_trip(tmp_path):
    raw = {"seed": 9,
           "geometry": {"kind": "explicit",
                        "g_vectors": [[0.9, 0.1, 0.3], [-0.4, 0.8, 0.1],
                                      [0.2, -0.5, 0.6]]},
           "protocol": {"omega": 1.5, "tau": 0.4, "measurements": 8}}
    first, second = tmp_path / "first", tmp_path / "second"
    first.mkdir(), second.mkdir()
    cmd_run(validate_config(raw), first)
    # the manifest is itself a loadable config
    raw2 = load_config(first / "manifest.yaml")
    cmd_run(validate_config(raw2), second)
    for name in ("trajectory.csv", "pairs.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_scan_thread_invariance(tmp_path):
    raw = {"geometry": {"kind": "explicit",
                        "g_vectors": [[1.2, 0.0, 0.4], [0.0, 0.9, -0.2]]},
           "scan": {"omega": {"start": 0.5, "stop": 1.5, "points": 2},
                    "tau": {"start": 0.5, "stop": 1.5, "points": 2},
                    "measurements": 5}}
    cfg = validate_config(raw, command="scan")
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert cmd_scan(cfg, a, threads=1) == 0
    assert cmd_scan(cfg, b, threads=2) == 0
    assert (a / "scan.csv").read_bytes() == (b / "scan.csv").read_bytes()
    lines = (a / "scan.csv").read_text().splitlines()
    assert lines[0] == "omega,tau,purity,cumulative_p,n_pairs"
    assert len(lines) == 5
    man = yaml.safe_load((a / "manifest.yaml").read_text())
    assert man["resolved"]["points"] == 4
    assert len(man["resolved"]["omega_grid_absolute"]) == 2


def test_scan_pairing_region_straddles_resonance_line(tmp_path):
    # 8-spin dimer chain, omega and tau grids in g_eff units: the region
    # of maximal pairing must cover both sides of omega = 1/tau
    raw = {"geometry": {"kind": "dimer_chain", "n_pairs": 4,
                        "pair_spacing": 8.0, "dimer_gap": 1.0,
                        "z0": 100.0, "x0": 60.0},
           "scan": {"omega": {"start": 0.5, "stop": 2.0, "points": 5},
                    "tau": {"start": 0.5, "stop": 2.0, "points": 5},
                    "measurements": 30}}
    cfg = validate_config(raw, command="scan")
    assert cmd_scan(cfg, tmp_path) == 0
    rows = np.loadtxt(tmp_path / "scan.csv", delimiter=",", skiprows=1)
    products = rows[:, 0] * rows[:, 1]      # omega * tau, unit-free
    n_pairs = rows[:, 4]
    top = products[n_pairs == n_pairs.max()]
    assert n_pairs.max() == 4
    assert top.min() <= 1.0 <= top.max()


def test_main_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("geometry:\n  kind: [unclosed\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err
    missing = tmp_path / "none.yaml"
    assert main(["run", "--config", str(missing)]) == 2
    semantic = _write_yaml(tmp_path / "sem.yaml",
                           {"geometry": {"kind": "chain", "n": 0}})
    assert main(["run", "--config", semantic]) == 2


def test_main_exit_code_extinction(tmp_path):
    # transverse g with tau = pi/2 makes V vanish identically
    doc = {"geometry": {"kind": "explicit", "g_vectors": [[1.0, 0.0, 0.0]]},
           "protocol": {"omega": 0.0, "tau": float(np.pi / 2),
                        "measurements": 3},
           "engine": {"name": "factored"}}
    p = _write_yaml(tmp_path / "ext.yaml", doc)
    assert main(["run", "--config", p, "--out", str(tmp_path)]) == 3
    man = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert man["resolved"]["status"] == "extinct"


def test_main_exit_code_capacity(tmp_path, capsys):
    doc = {"geometry": {"kind": "explicit",
                        "g_vectors": [[0.5, 0.1, -0.3], [0.2, 0.0, 0.4]]},
           "protocol": {"omega": 1.0, "tau": 0.3, "measurements": 25},
           "engine": {"name": "factored", "branch_cap": 4096}}
    p = _write_yaml(tmp_path / "cap.yaml", doc)
    assert main(["run", "--config", p, "--out", str(tmp_path)]) == 4
    assert "capacity" in capsys.readouterr().err


def test_main_seed_and_engine_overrides(tmp_path):
    doc = {"seed": 1,
           "geometry": {"kind": "explicit",
                        "g_vectors": [[0.8, 0.0, 0.2], [0.0, 0.7, -0.1]]},
           "protocol": {"omega": 1.0, "tau": 0.4, "measurements": 3},
           "engine": {"samples": 20}}
    p = _write_yaml(tmp_path / "run.yaml", doc)
    out = tmp_path / "out"
    rc = main(["run", "--config", p, "--out", str(out),
               "--engine", "montecarlo", "--seed", "5"])
    assert rc == 0
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    assert man["config"]["engine"]["name"] == "montecarlo"
    assert man["config"]["seed"] == 5
    assert "purity_estimate" in man["resolved"]


def test_main_verify_subcommand(tmp_path):
    doc = {"verify": {"g1": 3.0, "g2": 4.0, "omega": 10.0, "m_max": 12}}
    p = _write_yaml(tmp_path / "v.yaml", doc)
    out = tmp_path / "out"
    assert main(["verify", "--config", p, "--out", str(out)]) == 0
    lines = (out / "verify.csv").read_text().splitlines()
    assert lines[0] == "m,flip_unpolarized,flip_singlet"
    assert len(lines) == 13
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    preps = man["resolved"]["preparations"]
    assert preps["unpolarized"]["m_star"] == 2
    assert preps["singlet"]["m_star"] == 11
    assert abs(man["resolved"]["tau_v"] - np.pi / 40) < 1e-12


def test_main_sense_subcommand(tmp_path):
    doc = {"sense": {
        "m": 16,
        "omega": 10.0,
        "epsilon": 1.0,
        "species": [
            {"omega": 11.0, "g_vectors": [[0.45, 0.0, 0.12]],
             "preparation": "mixed"},
            {"omega": 9.0, "g_vectors": [[0.40, 0.1, 0.10]],
             "preparation": "mixed"},
        ],
        "tau_grid": {"start": 0.055, "stop": 0.105, "points": 101},
        "time_grid": {"start": 0.0, "stop": 2.0, "points": 41},
    }}
    p = _write_yaml(tmp_path / "s.yaml", doc)
    out = tmp_path / "out"
    assert main(["sense", "--config", p, "--out", str(out)]) == 0
    spec = (out / "spectroscopy.csv").read_text().splitlines()
    assert spec[0] == "tau,signal,signal_mixed"
    assert len(spec) == 102
    coh = (out / "coherence.csv").read_text().splitlines()
    assert coh[0] == "t,coherence,coherence_mixed"
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    assert man["resolved"]["resolves_side_features"] is True
    assert len(man["resolved"]["peaks"]) == 2


def test_main_selftest_single_criterion(capsys):
    assert main(["selftest", "--criteria", "1"]) == 0
    out = capsys.readouterr().out
    assert "criterion 1 [PASS]" in out
