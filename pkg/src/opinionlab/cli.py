"""Command-line entry point: ``opinionlab <subcommand> --config --out --seed``.

Each run writes its outputs plus ``manifest.json`` into ``--out``;
``opinionlab rerun <manifest>`` repeats a run from its manifest.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import zipfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .clusters import detect_clusters, track_centers
from .config import ConfigError, parse_config
from .ensemble import EnsembleConfig, OnsetExceeded, mode_variance_check, run_ensemble
from .influence import get_shape
from .reduced import ReducedParams, init_from_report, run_to_consensus
from .sde_sim import SimConfig, Trajectory, run
from .stability import DomainParams, FrequencyGrid, StabilityReport, predict_clusters, psi_sigma

__all__ = ["main", "emit_psi_curve", "write_csv", "write_manifest", "read_trajectory_csv"]

SUBCOMMANDS = ("analyze", "simulate", "clusters", "reduced", "ensemble")
CONTINUUM_POINTS = 1000


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # noqa: BLE001 - not installed as a distribution
        return "0+unknown"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_csv(path, header: Iterable[str], rows: Iterable) -> Path:
    """CSV with a header row; floats written as shortest round-trip reprs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path = Path(path)
    _atomic_write_bytes(path, buf.getvalue().encode())
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    _atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n").encode())
    return path


def write_manifest(out_dir: Path, subcommand: str, config: dict, outputs: list, duration: float) -> Path:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "version": _version(),
        "seed": config.get("seed"),
        "outputs": sorted(Path(p).name for p in outputs),
        "duration_s": round(duration, 6),
    }
    return write_json(out_dir / "manifest.json", manifest)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


# analyze ---------------------------------------------------------------------

def emit_psi_curve(shape, sigma: float, dom: DomainParams, grid: FrequencyGrid) -> list:
    """Rows ``(q, psi_sigma, kind)``: every grid frequency, then 1000
    evenly spaced continuum samples on (0, q_cap]."""
    rows = [(float(q), psi_sigma(shape, float(q), sigma, dom), "grid") for q in grid.entries]
    qs = np.linspace(grid.q_cap / CONTINUUM_POINTS, grid.q_cap, CONTINUUM_POINTS)
    rows += [(float(q), psi_sigma(shape, float(q), sigma, dom), "continuum") for q in qs]
    return rows


def _domain(cfg: dict) -> DomainParams:
    return DomainParams(cfg["length"], cfg["radius"], cfg["n_agents"])


def cmd_analyze(cfg: dict, out: Path) -> list:
    shape = get_shape(cfg["influence"])
    dom = _domain(cfg)
    grid = FrequencyGrid.for_domain(dom, cfg["q_cap"])
    report = predict_clusters(shape, cfg["sigma"], dom, grid)
    outputs = [write_json(out / "report.json", _json_safe(report.to_dict()))]
    if cfg["psi_curve"]:
        rows = emit_psi_curve(shape, cfg["sigma"], dom, grid)
        outputs.append(write_csv(out / "psi_curve.csv", ("q", "psi_sigma", "kind"), rows))
    return outputs


# simulate --------------------------------------------------------------------

def sim_config(cfg: dict) -> SimConfig:
    keys = ("n_agents", "length", "radius", "influence", "sigma", "dt", "t_end", "boundary", "seed", "sample_every")
    return SimConfig(**{k: cfg[k] for k in keys})


def _write_npz(path: Path, traj: Trajectory) -> Path:
    # fixed zip timestamps keep the file byte-identical across runs
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in (("time", traj.times), ("position", traj.positions)):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            body = io.BytesIO()
            np.lib.format.write_array(body, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(info, body.getvalue())
    _atomic_write_bytes(path, buf.getvalue())
    return path


def write_trajectory(path: Path, traj: Trajectory) -> Path:
    if path.suffix == ".npz":
        return _write_npz(path, traj)
    n = traj.positions.shape[1]
    rows = ((t, j, x[j]) for t, x in zip(traj.times, traj.positions) for j in range(n))
    return write_csv(path, ("time", "agent_id", "position"), rows)


def read_trajectory_csv(path, config: SimConfig) -> Trajectory:
    """Inverse of the ``time,agent_id,position`` writer."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return Trajectory(config, z["time"], z["position"])
    with path.open() as fh:
        header = fh.readline().strip().split(",")
        if header != ["time", "agent_id", "position"]:
            raise ValueError(f"{path}: unexpected header {header}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    times = np.unique(data[:, 0])
    n = int(data[:, 1].max()) + 1
    if data.shape[0] != times.size * n:
        raise ValueError(f"{path}: expected {n} agents per snapshot")
    order = np.lexsort((data[:, 1], data[:, 0]))
    pos = data[order, 2].reshape(times.size, n)
    return Trajectory(config, times, pos)


def cmd_simulate(cfg: dict, out: Path) -> list:
    traj = run(sim_config(cfg))
    return [write_trajectory(out / cfg["trajectory_file"], traj)]


# clusters --------------------------------------------------------------------

def cmd_clusters(cfg: dict, out: Path) -> list:
    sc = sim_config(cfg)
    traj = read_trajectory_csv(cfg["trajectory"], sc) if cfg["trajectory"] else run(sc)
    if cfg["trajectory"] and traj.positions.shape[1] != sc.n_agents:
        sc = sc.with_(n_agents=traj.positions.shape[1])
        traj = Trajectory(sc, traj.times, traj.positions)
    series = track_centers(traj, cfg["gap"], min_members=cfg["min_members"])
    n = traj.positions.shape[1]
    rows = []
    for label in sorted(series.tracks):
        tr = series.tracks[label]
        for t, c, m, w in zip(tr.times, tr.centers, tr.masses, tr.widths):
            rows.append((t, label, c, m / n, w))
    rows.sort(key=lambda r: (r[0], r[2]))
    outputs = [
        write_csv(out / "clusters.csv", ("time", "cluster_id", "center", "mass", "width"), rows),
        write_csv(out / "merges.csv", ("time", "absorbed", "survivor"), series.merges),
    ]
    return outputs


# reduced ---------------------------------------------------------------------

def cmd_reduced(cfg: dict, out: Path) -> list:
    if cfg["report"]:
        report = StabilityReport.from_dict(json.loads(Path(cfg["report"]).read_text()))
    else:
        report = predict_clusters(get_shape(cfg["influence"]), cfg["sigma"], _domain(cfg),
                                  FrequencyGrid.for_domain(_domain(cfg), cfg["q_cap"]))
    params = ReducedParams(
        sigma=report.sigma, n_agents=report.n_agents, radius=report.radius,
        phi0=report.phi0_at_zero, length=report.length, boundary=cfg["boundary"],
    )
    state = init_from_report(report, params)
    t_max = cfg["t_max"] if cfg["t_max"] is not None else math.inf
    log = run_to_consensus(state, dt=cfg["dt"], seed=cfg["seed"], t_max=t_max, record_every=cfg["record_every"])
    rows = [(e.tau, e.merged_a, e.merged_b, e.new_center, e.new_mass, e.new_width) for e in log.events]
    outputs = [write_csv(out / "merge_log.csv", ("tau", "merged_a", "merged_b", "new_center", "new_mass", "new_width"), rows)]
    if log.paths is not None:
        times, centers = log.paths
        prow = [(t, j, x) for t, xs in zip(times, centers) for j, x in enumerate(xs) if np.isfinite(x)]
        outputs.append(write_csv(out / "center_paths.csv", ("time", "slot", "center"), prow))
    outputs.append(write_json(out / "reduced_summary.json", {
        "status": log.status,
        "final_time": log.final.time,
        "n_clusters_initial": len(state),
        "n_clusters_final": len(log.final),
    }))
    return outputs


# ensemble --------------------------------------------------------------------

def cmd_ensemble(cfg: dict, out: Path) -> list:
    ec = EnsembleConfig(
        base=sim_config(cfg),
        n_realizations=cfg["n_realizations"],
        observables=frozenset(cfg["observables"]),
        mode_wavenumbers=tuple(cfg["mode_wavenumbers"]),
        stat_times=tuple(cfg["stat_times"]) if cfg["stat_times"] is not None else None,
        gap=cfg["gap"],
        min_members=cfg["min_members"],
        workers=cfg["workers"],
    )
    stats = run_ensemble(ec)
    outputs = [
        write_json(out / "ensemble_stats.json", _json_safe(stats.to_dict())),
        write_csv(out / "ensemble_long.csv", ("time", "observable", "mean", "stderr"), stats.long_rows()),
    ]
    if "modes" in ec.observables:
        report = predict_clusters(get_shape(cfg["influence"]), cfg["sigma"], _domain(cfg))
        rows = []
        for k in ec.mode_wavenumbers:
            for t in stats.times:
                try:
                    c = mode_variance_check(stats, report, k, float(t))
                except OnsetExceeded:
                    continue
                rows.append((c.k, c.t, c.empirical, c.predicted, c.z))
        outputs.append(write_csv(out / "modes.csv", ("k", "t", "empirical", "predicted", "z"), rows))
    return outputs


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "clusters": cmd_clusters,
    "reduced": cmd_reduced,
    "ensemble": cmd_ensemble,
}


def execute(subcommand: str, cfg: dict, out: Path) -> list:
    """Run a resolved config and write its outputs and manifest."""
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outputs = COMMANDS[subcommand](cfg, out)
    write_manifest(out, subcommand, cfg, outputs, time.perf_counter() - start)
    return outputs


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opinionlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults for missing keys)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=_seed, help="overrides the config seed")
    p = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.subcommand == "rerun":
            try:
                manifest = json.loads(Path(args.manifest).read_text())
                subcommand, raw = manifest["subcommand"], manifest["config"]
            except (OSError, ValueError, KeyError, TypeError) as exc:
                raise ConfigError("<manifest>", f"cannot read manifest: {exc}") from None
            cfg = parse_config(subcommand, raw)
        else:
            subcommand = args.subcommand
            cfg = parse_config(subcommand, args.config, {"seed": args.seed})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        outputs = execute(subcommand, cfg, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime-failure exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for p in outputs:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
