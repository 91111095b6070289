import csv
import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opinionlab.cli import emit_psi_curve, main, read_trajectory_csv
from opinionlab.config import SCHEMAS, ConfigError, parse_config, write_config
from opinionlab.influence import builtin_shapes
from opinionlab.sde_sim import SimConfig, run
from opinionlab.stability import DomainParams, FrequencyGrid, critical_sigma

SHAPES = builtin_shapes()
DOM = DomainParams(10.0, 1.0, 500)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config("simulate")
        assert (cfg["dt"], cfg["length"], cfg["radius"], cfg["n_agents"], cfg["sample_every"]) == (0.1, 10.0, 1.0, 500, 10)
        assert parse_config("analyze")["q_cap"] == 100.0
        assert parse_config("clusters")["gap"] == 0.5
        assert parse_config("ensemble", {"radius": 2.0})["gap"] == 1.0

    @pytest.mark.parametrize("sub", sorted(SCHEMAS))
    def test_unknown_key(self, sub):
        with pytest.raises(ConfigError) as info:
            parse_config(sub, {"velocity": 1.0})
        assert info.value.key == "velocity"

    @pytest.mark.parametrize("sub", sorted(SCHEMAS))
    def test_negative_sigma(self, sub):
        with pytest.raises(ConfigError) as info:
            parse_config(sub, {"sigma": -0.1})
        assert info.value.key == "sigma"

    @pytest.mark.parametrize("raw, key", [
        ({"n_agents": 1}, "n_agents"), ({"n_agents": 2.5}, "n_agents"), ({"boundary": "open"}, "boundary"),
        ({"influence": "phi9"}, "influence"), ({"dt": 0}, "dt"), ({"t_end": 0.05}, "t_end"),
        ({"seed": -1}, "seed"), ({"sigma": "a"}, "sigma"), ({"sigma": float("nan")}, "sigma"),
    ])
    def test_bad_values(self, raw, key):
        with pytest.raises(ConfigError) as info:
            parse_config("simulate", raw)
        assert info.value.key == key

    def test_observables_checked(self):
        with pytest.raises(ConfigError) as info:
            parse_config("ensemble", {"observables": ["widths", "speed"]})
        assert info.value.key == "observables[1]"

    def test_file_and_override(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"sigma": 0.2, "seed": 4}))
        cfg = parse_config("simulate", p, {"seed": 9})
        assert cfg["sigma"] == 0.2 and cfg["seed"] == 9

    def test_missing_and_invalid_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config("simulate", tmp_path / "nope.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError):
            parse_config("simulate", bad)
        arr = tmp_path / "arr.json"
        arr.write_text("[]")
        with pytest.raises(ConfigError):
            parse_config("simulate", arr)

    @settings(max_examples=60)
    @given(
        sub=st.sampled_from(["simulate", "clusters", "ensemble"]),
        n=st.integers(2, 5000),
        sigma=st.floats(0, 2),
        dt=st.floats(0.001, 1.0),
        boundary=st.sampled_from(["free", "reflecting", "periodic"]),
        seed=st.integers(0, 2**64 - 1),
        influence=st.sampled_from([f"phi{i}" for i in range(1, 7)]),
    )
    def test_round_trip(self, tmp_path_factory, sub, n, sigma, dt, boundary, seed, influence):
        raw = dict(n_agents=n, sigma=sigma, dt=dt, t_end=10 * dt, boundary=boundary, seed=seed, influence=influence)
        cfg = parse_config(sub, raw)
        path = tmp_path_factory.mktemp("rt") / "cfg.json"
        write_config(cfg, path)
        assert parse_config(sub, path) == cfg

    @pytest.mark.parametrize("sub", sorted(SCHEMAS))
    def test_round_trip_defaults(self, sub, tmp_path):
        cfg = parse_config(sub)
        write_config(cfg, tmp_path / "d.json")
        assert parse_config(sub, tmp_path / "d.json") == cfg


class TestPsiCurve:
    def test_rows(self):
        grid = FrequencyGrid.for_domain(DOM)
        rows = emit_psi_curve(SHAPES["phi2"], 0.0, DOM, grid)
        assert len(rows) == len(grid) + 1000
        grid_rows = [r for r in rows if r[2] == "grid"]
        assert max(grid_rows, key=lambda r: r[1])[0] == pytest.approx(2.5133, abs=1e-4)
        assert {r[2] for r in rows} == {"grid", "continuum"}

    @pytest.mark.parametrize("name", sorted(SHAPES))
    def test_critical_noise(self, name):
        sc = critical_sigma(SHAPES[name], DOM)
        rows = emit_psi_curve(SHAPES[name], sc, DOM, FrequencyGrid.for_domain(DOM))
        assert max(r[1] for r in rows) <= 1e-9


def run_cli(*args):
    return main([str(a) for a in args])


def output_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != "manifest.json"}


CONFIGS = {
    "analyze": {"influence": "phi1", "sigma": 0.05},
    "simulate": {"n_agents": 40, "sigma": 0.2, "t_end": 5.0, "boundary": "reflecting"},
    "clusters": {"n_agents": 100, "sigma": 0.1, "t_end": 30.0, "boundary": "reflecting"},
    "reduced": {"sigma": 0.1, "n_agents": 50, "record_every": 100},
    "ensemble": {
        "n_agents": 60, "sigma": 0.1, "t_end": 3.0, "boundary": "periodic", "n_realizations": 4,
        "observables": ["counts", "widths", "onset", "modes"], "mode_wavenumbers": [0.6283185307179586],
    },
}

HEADERS = {
    "psi_curve.csv": ["q", "psi_sigma", "kind"],
    "trajectory.csv": ["time", "agent_id", "position"],
    "clusters.csv": ["time", "cluster_id", "center", "mass", "width"],
    "merges.csv": ["time", "absorbed", "survivor"],
    "merge_log.csv": ["tau", "merged_a", "merged_b", "new_center", "new_mass", "new_width"],
    "center_paths.csv": ["time", "slot", "center"],
    "ensemble_long.csv": ["time", "observable", "mean", "stderr"],
    "modes.csv": ["k", "t", "empirical", "predicted", "z"],
}


class TestCli:
    @pytest.mark.parametrize("sub", sorted(CONFIGS))
    def test_rerun_identical(self, sub, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(CONFIGS[sub]))
        first = tmp_path / "a"
        assert run_cli(sub, "--config", cfg_path, "--out", first, "--seed", 7) == 0
        manifest = json.loads((first / "manifest.json").read_text())
        assert manifest["subcommand"] == sub and manifest["seed"] == 7
        assert manifest["config"] == parse_config(sub, {**CONFIGS[sub], "seed": 7})
        assert sorted(manifest["outputs"]) == sorted(output_bytes(first))
        assert manifest["duration_s"] >= 0 and manifest["version"]
        second = tmp_path / "b"
        assert run_cli("rerun", first / "manifest.json", "--out", second) == 0
        assert output_bytes(first) == output_bytes(second)
        for name, body in output_bytes(first).items():
            if name in HEADERS:
                assert body.decode().splitlines()[0].split(",") == HEADERS[name]

    def test_analyze_report(self, tmp_path):
        assert run_cli("analyze", "--out", tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["q_max"] == pytest.approx(2.5133, abs=1e-4) and rep["regime"] == "unstable"
        assert len(read_rows(tmp_path / "psi_curve.csv")) == 1 + 159 + 1000

    def test_stable_report_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sigma": 0.5}))
        assert run_cli("analyze", "--config", cfg, "--out", tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["regime"] == "stable" and rep["t_clu"] is None

    def test_trajectory_round_trip(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_agents": 30, "sigma": 0.2, "t_end": 3.0, "seed": 2}))
        assert run_cli("simulate", "--config", cfg, "--out", tmp_path) == 0
        sc = SimConfig(n_agents=30, sigma=0.2, t_end=3.0, seed=2)
        traj = read_trajectory_csv(tmp_path / "trajectory.csv", sc)
        ref = run(sc)
        assert np.array_equal(traj.times, ref.times) and np.array_equal(traj.positions, ref.positions)

    def test_npz_trajectory(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_agents": 30, "t_end": 2.0, "trajectory_file": "traj.npz"}))
        assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
        assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "traj.npz").read_bytes() == (tmp_path / "b" / "traj.npz").read_bytes()
        traj = read_trajectory_csv(tmp_path / "a" / "traj.npz", SimConfig(n_agents=30, t_end=2.0))
        assert np.array_equal(traj.positions, run(SimConfig(n_agents=30, t_end=2.0)).positions)

    def test_clusters_from_file(self, tmp_path):
        cfg = tmp_path / "s.json"
        cfg.write_text(json.dumps({"n_agents": 100, "t_end": 40.0, "influence": "phi1"}))
        assert run_cli("simulate", "--config", cfg, "--out", tmp_path) == 0
        ccfg = tmp_path / "c.json"
        ccfg.write_text(json.dumps({"trajectory": str(tmp_path / "trajectory.csv"), "n_agents": 100}))
        assert run_cli("clusters", "--config", ccfg, "--out", tmp_path / "c") == 0
        rows = read_rows(tmp_path / "c" / "clusters.csv")[1:]
        last = max(float(r[0]) for r in rows)
        masses = [float(r[3]) for r in rows if float(r[0]) == last]
        assert sum(masses) == pytest.approx(1.0)

    def test_exit_codes(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"velocity": 3}))
        assert run_cli("simulate", "--config", bad, "--out", tmp_path) == 2
        assert "velocity" in capsys.readouterr().err
        neg = tmp_path / "neg.json"
        neg.write_text(json.dumps({"sigma": -0.1}))
        assert run_cli("simulate", "--config", neg, "--out", tmp_path) == 2
        stable = tmp_path / "stable.json"
        stable.write_text(json.dumps({"sigma": 0.5}))
        assert run_cli("reduced", "--config", stable, "--out", tmp_path) == 3
        assert run_cli("rerun", tmp_path / "missing.json", "--out", tmp_path) == 2

    def test_console_script(self, tmp_path):
        exe = shutil.which("opinionlab")
        cmd = [exe] if exe else [sys.executable, "-m", "opinionlab.cli"]
        res = subprocess.run([*cmd, "analyze", "--out", str(tmp_path)], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        assert (tmp_path / "report.json").exists()
