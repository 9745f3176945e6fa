"""Command-line entry point: ``qcelast <subcommand> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 invariant violation or numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, config, diagnostics, qclab, sim, snapshot, torus
from .config import ConfigError
from .energies import get_energy
from .torus import MATRIX, VECTOR, Grid, PeriodicField

log = logging.getLogger("qcelast")

SUBCOMMANDS = ("simulate", "qc-test", "garding", "young-measure", "compare")
MANIFEST = "manifest.json"
RESOLVED = "config.resolved"

# tolerances for the exit-1 invariant checks on emitted states
INVARIANT_TOLERANCES = {
    "curl_growth": 1e-10,
    "mean_u_drift": 1e-12,
    "potential_mismatch": 1e-9,
}


class InvariantViolation(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _matrix(value, d: int) -> np.ndarray:
    if isinstance(value, list):
        return np.array(value, dtype=float)
    return float(value) * np.eye(d)


def build_id() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        return out.stdout.strip() or f"artifact-{__version__}"
    except (OSError, subprocess.SubprocessError):
        return f"artifact-{__version__}"


def write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: Path, obj: Any) -> None:
    write_text_atomic(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _grid(cfg: dict) -> Grid:
    return Grid(d=cfg["d"], n=cfg["n"], t_end=cfg["t_end"], dt=cfg["dt"])


def _initial_state(cfg: dict, grid: Grid) -> sim.ElastoState:
    d = grid.d
    try:
        return sim.build_initial_data(
            cfg["init.kind"], grid, cfg["init.amplitude"], N=cfg["init.N"],
            F_mean=_matrix(cfg["init.F_mean"], d), seed=cfg["seed"],
            velocity=cfg["init.velocity"],
        )
    except ValueError as exc:
        key = "init.N" if "frequency" in str(exc) else "init.kind"
        raise ConfigError(str(exc), key) from exc


def _snapshot_path(root: Path, tag: str, index: int) -> Path:
    return root / tag / f"t{index:06d}.field"


def _load_run(run_dir: Path):
    """Manifest and states of a finished simulate run."""
    mpath = run_dir / MANIFEST
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {mpath}: {exc}", "reference.dir") from exc
    if manifest.get("subcommand") != "simulate":
        raise ConfigError(f"{run_dir} is not a simulate run", "reference.dir")
    rc = manifest["config"]
    grid = Grid(d=rc["d"], n=rc["n"], t_end=rc["t_end"], dt=rc["dt"])
    states = []
    for index, t in zip(manifest["stride_indices"], manifest["stride_times"]):
        u = snapshot.read_field(_snapshot_path(run_dir, "u", index), grid)
        F = snapshot.read_field(_snapshot_path(run_dir, "F", index), grid)
        states.append(sim.ElastoState.from_fields(t, u, F))
    traj = sim.Trajectory(sim.SimConfig(rc["energy"], grid, epsilon=rc["epsilon"]))
    traj.states = states
    traj.dissipation = manifest["dissipation"]
    return manifest, traj


# ---------------------------------------------------------------------------
# subcommands; each returns (exit code, manifest extras)


def cmd_simulate(cfg: dict, out: Path) -> tuple[int, dict]:
    grid = _grid(cfg)
    try:
        scfg = sim.SimConfig(cfg["energy"], grid, epsilon=cfg["epsilon"], dealias=cfg["dealias"],
                             output_stride=cfg["output.stride"])
        scfg.steps
    except ValueError as exc:
        raise ConfigError(str(exc), "t_end") from exc
    init = _initial_state(cfg, grid)
    W = scfg.energy
    try:
        traj = sim.simulate(scfg, init)
    except sim.SimulationError as exc:
        print(f"numerical failure at {exc}", file=sys.stderr)
        return 1, {"error": str(exc), "failed_step": exc.step}
    ref = None
    if cfg["reference.dir"]:
        _, ref = _load_run(Path(cfg["reference.dir"]))
    indices = [int(round((s.t - init.t) / grid.dt)) for s in traj.states]
    for i, s in zip(indices, traj.states):
        snapshot.write_field(_snapshot_path(out, "u", i), s.u)
        snapshot.write_field(_snapshot_path(out, "F", i), s.F)
        snapshot.write_field(_snapshot_path(out, "y", i), s.y)
    report = diagnostics.entropy_report(traj, W, ref)
    write_text_atomic(out / "entropy.csv", report.to_csv())
    maxima = traj.invariant_maxima()
    extras = {
        "dissipation": [float(v) for v in traj.dissipation],
        "invariant_maxima": maxima,
        "min_dissipation_defect": float(np.min(report.dissipation_defect)),
        "stride_indices": indices,
        "stride_times": [float(t) for t in traj.times],
    }
    bad = [k for k, tol in INVARIANT_TOLERANCES.items() if maxima[k] > tol]
    if bad:
        print("invariant violation: " + ", ".join(f"{k}={maxima[k]:.3e}" for k in bad), file=sys.stderr)
        return 1, extras
    return 0, extras


def cmd_qc_test(cfg: dict, out: Path) -> tuple[int, dict]:
    grid = Grid(d=cfg["d"], n=cfg["n"])
    W = get_energy(cfg["energy"], grid.d)
    try:
        problem = qclab.QCTestProblem(
            W, _matrix(cfg["xi"], grid.d), cfg["c0"], grid,
            restarts=cfg["qc.restarts"], max_iters=cfg["qc.max_iters"], seed=cfg["seed"],
        )
        verdict = qclab.qc_minimize(problem)
    except ValueError as exc:
        raise ConfigError(str(exc), "n" if "n >=" in str(exc) else "xi") from exc
    doc = verdict.to_json(problem)
    write_json(out / "verdict.json", doc)
    snapshot.write_field(out / "witness.field", verdict.witness)
    print(json.dumps(doc, sort_keys=True))
    return 0, {"verdict": doc}


def garding_family(grid: Grid, rng: np.random.Generator, amplitude: float) -> list[PeriodicField]:
    """Zero-mean perturbations w: random low-band fields at a few scales and
    the high-frequency shear family a sin(2 pi N x_1) e_1 / (2 pi N)."""
    out = []
    for scale in (0.1, 1.0, 3.0):
        w = torus.band_limited_random(grid, VECTOR, rng, kmax=2)
        out.append(w * (scale * max(amplitude, 1e-3) / torus.gradient(w).l2_norm()))
    x1 = grid.coords()[0]
    N = 1
    while N <= grid.n // 4:
        data = np.zeros(grid.shape + (grid.d,))
        data[..., 0] = np.sin(2 * np.pi * N * x1) / (2 * np.pi * N)
        out.append(PeriodicField(grid, VECTOR, data))
        N *= 2
    return out


def cmd_garding(cfg: dict, out: Path) -> tuple[int, dict]:
    grid = _grid(cfg)
    W = get_energy(cfg["energy"], grid.d)
    base = _initial_state(cfg, grid)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))
    ws = garding_family(grid, rng, cfg["init.amplitude"])
    samples = [base.y + w for w in ws]
    rep = qclab.garding_probe(W, base.y, samples, F_mean=base.F_mean)
    doc = {
        "C0": rep.C0, "C1": rep.C1, "energy": W.name, "feasible": rep.feasible,
        "frontier": [list(p) for p in rep.frontier], "message": rep.message, "n": grid.n,
        "samples": len(samples), "min_slack": min(rep.slack) if rep.slack else None,
    }
    write_json(out / "garding.json", doc)
    lines = ["sample,lhs,g_int,v_int,slack\n"]
    for i, r in enumerate(rep.samples):
        slack = repr(rep.slack[i]) if rep.slack else ""
        lines.append(f"{i},{r.lhs!r},{r.g_int!r},{r.v_int!r},{slack}\n")
    write_text_atomic(out / "garding.csv", "".join(lines))
    print(json.dumps(doc, sort_keys=True))
    return 0, {"garding": doc}


def cmd_young_measure(cfg: dict, out: Path) -> tuple[int, dict]:
    if cfg["reference.dir"]:
        _, traj = _load_run(Path(cfg["reference.dir"]))
        F = traj.states[-1].F
        W = traj.cfg.energy
    else:
        grid = _grid(cfg)
        F = _initial_state(cfg, grid).F
        W = get_energy(cfg["energy"], grid.d)
    try:
        ym = diagnostics.empirical_young_measure([F], cfg["young.cells"], p=W.p)
    except ValueError as exc:
        raise ConfigError(str(exc), "young.cells") from exc
    doc = ym.to_json()
    doc["energy_action"] = ym.action(W.W).ravel().tolist()
    write_json(out / "young.json", doc)
    write_text_atomic(out / "young_hist.csv", ym.histogram_csv())
    var = ym.variance()
    summary = {"max_variance": float(var.max()), "dirac_cells": int(np.count_nonzero(ym.is_dirac()))}
    print(json.dumps(summary, sort_keys=True))
    return 0, {"young": summary}


def cmd_compare(cfg: dict, out: Path, run_a: Path, run_b: Path) -> tuple[int, dict]:
    ma, ta = _load_run(run_a)
    mb, tb = _load_run(run_b)
    try:
        W = get_energy(ma["config"]["energy"], ta.states[0].grid.d)
        rep = diagnostics.gronwall_monitor(ta, tb, W)
        gamma = diagnostics.energy_defect_difference(ta, tb, W)
    except ValueError as exc:
        raise ConfigError(f"mismatched runs: {exc}", "reference.dir") from exc
    relent = [diagnostics.relative_entropy(a, b, W).total for a, b in zip(ta.states, tb.states)]
    lines = ["t,D,residual,D_y,y_chain_rhs,relent,gamma_proxy\n"]
    for i, t in enumerate(rep.times):
        vals = (t, rep.D[i], rep.residual[i], rep.D_y[i], rep.y_chain_rhs[i], relent[i], gamma[i])
        lines.append(",".join(repr(float(v)) for v in vals) + "\n")
    write_text_atomic(out / "stability.csv", "".join(lines))
    doc = {
        "Lambda": rep.Lambda, "Lambda_fit": rep.Lambda_fit, "D0": float(rep.D[0]), "D_max": float(rep.D.max()),
        "dty_residual": rep.dty_residual, "run_a": str(run_a), "run_b": str(run_b),
        "y_chain_holds": rep.y_chain_holds,
    }
    write_json(out / "stability.json", doc)
    print(json.dumps(doc, sort_keys=True))
    failed = [str(r) for r, m in ((run_a, ma), (run_b, mb)) if m.get("exit_status", 0) != 0]
    if failed:
        print("input run(s) violated invariants: " + ", ".join(failed), file=sys.stderr)
        return 1, {"stability": doc}
    return 0, {"stability": doc}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcelast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="key = value configuration file")
        for key, spec in config.KEYS.items():
            sp.add_argument(f"--{key}", dest=key, metavar="VALUE", default=None, help=spec.help)
        if name == "compare":
            sp.add_argument("run_a", type=Path)
            sp.add_argument("run_b", type=Path, nargs="?")
    return parser


def run_experiment(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        raw = config.read_file(args.config) if args.config else {}
        raw.update({k: getattr(args, k) for k in config.KEYS if getattr(args, k) is not None})
        cfg = config.resolve(raw)
        out = Path(cfg["output.dir"])
        if args.subcommand == "compare":
            run_b = args.run_b or (Path(cfg["reference.dir"]) if cfg["reference.dir"] else None)
            if run_b is None:
                raise ConfigError("compare needs a second run directory", "reference.dir")
        if (out / MANIFEST).exists():
            prev = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
            if prev.get("subcommand") != args.subcommand:
                raise ConfigError(f"{out} already holds a {prev.get('subcommand')} run", "output.dir")
        out.mkdir(parents=True, exist_ok=True)
        write_text_atomic(out / RESOLVED, config.dump(cfg))
        if args.subcommand == "simulate":
            code, extras = cmd_simulate(cfg, out)
        elif args.subcommand == "qc-test":
            code, extras = cmd_qc_test(cfg, out)
        elif args.subcommand == "garding":
            code, extras = cmd_garding(cfg, out)
        elif args.subcommand == "young-measure":
            code, extras = cmd_young_measure(cfg, out)
        else:
            code, extras = cmd_compare(cfg, out, args.run_a, run_b)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "build_id": build_id(),
        "config": cfg,
        "exit_status": code,
        "subcommand": args.subcommand,
        "wall_time": time.perf_counter() - start,
        **extras,
    }
    manifest.setdefault("invariant_maxima", {})
    write_json(out / MANIFEST, manifest)
    return code


def main() -> None:
    sys.exit(run_experiment())
