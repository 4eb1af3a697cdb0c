"""Run configured experiments end to end and persist everything under one directory."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import verify as V
from .energy import ForcingField, compile_unaries, evaluate_FH
from .flow import ChainRecord, Trajectory, extract_gmm, holder_pairs, run_chains
from .grid import LabelField, Neighborhood, min_pairwise_distance, partition_perimeter
from .io import read_label_pgm, write_label_pgm
from .scene import ConfigError, ExperimentConfig, ShapeConfig, rasterize_scene
from .solver import solve_binary, solve_exhaustive, solve_multilabel

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "ATWFLOW_OUTPUT_ROOT"
MANIFEST_FORMAT = "atwflow-manifest/1"


class MissingSnapshot(FileNotFoundError):
    pass


def output_root(config: ExperimentConfig) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def build_forcing(config: ExperimentConfig, initial: LabelField) -> Optional[ForcingField]:
    if config.forcing is None:
        return None
    return config.forcing.build(initial, Path(config.base_dir))


def inject_violation(chain: ChainRecord, spec: dict) -> ChainRecord:
    """Corrupt a chain on purpose (mutation testing of the verifiers).

    ``perimeter_increase`` replaces state ``k`` (default: the last one) by
    state ``k-1`` plus an isolated phase-0 cell, so the perimeter goes up
    while the state moves.
    """
    if spec.get("kind") != "perimeter_increase":
        raise ConfigError(f"unknown injection {spec.get('kind')!r}")
    if chain.steps < 1:
        raise ConfigError("injection needs a chain with at least one step")
    k = int(spec.get("k", chain.steps))
    if not 1 <= k <= chain.steps:
        raise ConfigError(f"injection step {k} outside 1..{chain.steps}")
    prev = chain.states[k - 1]
    ext = prev.exterior
    free = (prev.labels == ext) & ~prev.spec.frame_mask(2)
    # all 8 neighbours exterior so the planted cell is isolated
    pad = np.pad(prev.labels != ext, 1)
    busy = np.zeros_like(free)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            busy |= pad[1 + di : 1 + di + free.shape[0], 1 + dj : 1 + dj + free.shape[1]]
    cand = np.argwhere(free & ~busy)
    if len(cand) == 0:
        raise ConfigError("no room to inject a violation")
    i, j = cand[len(cand) // 2]
    labels = np.array(prev.labels)
    labels[i, j] = 0
    states = list(chain.states)
    states[k] = prev.with_labels(labels)
    return ChainRecord(
        lam=chain.lam,
        nb=chain.nb,
        states=states,
        energies=list(chain.energies),
        moved_area=list(chain.moved_area),
        sup_displacement=list(chain.sup_displacement),
        forcing=chain.forcing,
        extinction_step=chain.extinction_step,
    )


def _opts(val) -> dict:
    return val if isinstance(val, dict) else {}


def run_verifiers(
    config: ExperimentConfig,
    initial: LabelField,
    chains: list[ChainRecord],
    traj: Trajectory,
) -> list[V.VerifierReport]:
    nb = config.neighborhood()
    ver = config.verifiers
    reports: list[V.VerifierReport] = []
    per_chain = {
        "energy_descent": V.check_energy_descent,
        "monotone_energy": V.check_monotone_energy,
        "distance_monotone": V.check_distance_monotone,
        "decoupling": V.check_decoupling,
        "hull_confinement": V.check_hull_confinement,
        "linf": V.check_linf,
    }
    for name, fn in per_chain.items():
        if name in ver:
            reports.extend(fn(c) for c in chains)
    if "density" in ver:
        r_samples = int(_opts(ver["density"]).get("r_samples", 3))
        reports.extend(V.check_density(c, r_samples) for c in chains)
    if "disjointness" in ver:
        eps0 = _opts(ver["disjointness"]).get("eps0")
        if eps0 is None:
            eps0 = min_pairwise_distance(initial)
        reports.extend(V.check_disjointness(c, float(eps0)) for c in chains)
    if "shrinking_disk" in ver:
        o = _opts(ver["shrinking_disk"])
        if "r0" not in o:
            raise ConfigError("shrinking_disk needs r0")
        reports.append(V.check_shrinking_disk(traj, float(o["r0"]), int(o.get("label", 0))))
    if "holder" in ver:
        reports.append(V.check_holder(traj))
    if "small_time" in ver:
        lams = _opts(ver["small_time"]).get("lambdas", [50, 100, 200, 400, 800])
        reports.append(V.check_small_time_consistency(initial, lams, nb))
    if "stability" in ver:
        o = _opts(ver["stability"])
        perts = [
            rasterize_scene(config, [ShapeConfig.from_dict(s) for s in shapes])
            for shapes in o.get("perturbations", [])
        ]
        t_probe = float(o.get("t_probe", traj.times[-1]))
        lam = float(o.get("lambda", max(config.lambdas)))
        reports.append(V.check_stability(initial, perts, t_probe, lam, nb))
    return reports


def _chain_entry(chain: ChainRecord, run_dir: Path, tag: str) -> dict:
    snaps = []
    for k, s in enumerate(chain.states):
        rel = Path("snapshots") / tag / f"k{k:05d}.pgm"
        write_label_pgm(s, run_dir / rel)
        snaps.append(str(rel))
    return {
        "lambda": chain.lam,
        "steps": chain.steps,
        "extinction_step": chain.extinction_step,
        "extinction_time": chain.extinction_time,
        "snapshots": snaps,
        "energies": [e.as_dict() if e is not None else None for e in chain.energies],
        "moved_area": chain.moved_area,
        "sup_displacement": chain.sup_displacement,
    }


def _lam_tag(lam: float) -> str:
    return f"lam{lam:g}".replace(".", "p")


def run_experiment(config: ExperimentConfig, run_dir: Optional[Path] = None) -> tuple[int, Path]:
    """Run every chain, extract the trajectory, verify, and write all artifacts.

    Returns ``(exit_status, manifest_path)``; the status is 0 iff every enabled
    verifier passed (skipped checks do not fail a run).
    """
    digest = config.digest()
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    if run_dir is None:
        run_dir = output_root(config) / f"{stamp}_{config.name}_{digest[:12]}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    initial = rasterize_scene(config)
    H = build_forcing(config, initial)
    nb = config.neighborhood()
    lams = sorted(config.lambdas)
    chains = run_chains(
        initial,
        lams,
        [config.steps_for(l) for l in lams],
        nb,
        H,
        config.max_sweeps,
        config.order_seed,
        config.workers,
    )
    if config.inject:
        chains = [inject_violation(c, config.inject) for c in chains]
    times = config.sample_times()
    traj = extract_gmm(chains, times)
    reports = run_verifiers(config, initial, chains, traj)

    manifest = {
        "format": MANIFEST_FORMAT,
        "name": config.name,
        "created": stamp,
        "config_hash": digest,
        "config": config.to_dict(),
        "config_dir": config.base_dir,
        "initial": str(write_label_pgm(initial, run_dir / "snapshots" / "initial.pgm").relative_to(run_dir)),
        "chains": [_chain_entry(c, run_dir, _lam_tag(c.lam)) for c in chains],
    }
    traj_snaps = []
    for m, s in enumerate(traj.states):
        rel = Path("snapshots") / "trajectory" / f"t{m:03d}.pgm"
        write_label_pgm(s, run_dir / rel)
        traj_snaps.append(str(rel))
    manifest["trajectory"] = {
        "times": traj.times,
        "lambdas": traj.lambdas,
        "snapshots": traj_snaps,
        "discrepancy": traj.discrepancy.tolist(),
        "pairwise_discrepancy": traj.pairwise_discrepancy.tolist(),
        "extinction_time": traj.extinction_time,
    }
    status = 0 if all(r.passed for r in reports) else 1
    _write_json(run_dir / "reports.json", [r.to_dict() for r in reports])
    manifest["reports"] = "reports.json"
    manifest["all_passed"] = status == 0
    manifest_path = run_dir / "manifest.json"
    _write_json(manifest_path, manifest)
    print(V.print_table(reports))
    log.info("wrote %s", manifest_path)
    return status, manifest_path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, default=_jsonable), encoding="utf-8")


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        return json.load(f), path.parent


def _load_snapshot(run_dir: Path, rel: str) -> LabelField:
    p = run_dir / rel
    if not p.exists():
        raise MissingSnapshot(f"snapshot {p} is missing")
    return read_label_pgm(p)


def load_chains(manifest: dict, run_dir: Path) -> tuple[ExperimentConfig, LabelField, list[ChainRecord]]:
    config = ExperimentConfig.from_dict(manifest["config"], base_dir=manifest.get("config_dir", "."))
    nb = config.neighborhood()
    if not manifest.get("chains"):
        raise MissingSnapshot("manifest lists no chains")
    initial = _load_snapshot(run_dir, manifest["initial"])
    H = build_forcing(config, initial)
    chains = []
    for entry in manifest["chains"]:
        if not entry["snapshots"]:
            raise MissingSnapshot(f"chain lambda={entry['lambda']} has no snapshots")
        states = [_load_snapshot(run_dir, s) for s in entry["snapshots"]]
        lam = float(entry["lambda"])
        energies = [evaluate_FH(states[0], states[0], lam, H, nb)]
        energies += [evaluate_FH(b, a, lam, H, nb) for a, b in zip(states, states[1:])]
        chains.append(
            ChainRecord(
                lam=lam,
                nb=nb,
                states=states,
                energies=energies,
                moved_area=list(entry.get("moved_area", [])),
                sup_displacement=list(entry.get("sup_displacement", [])),
                forcing=H,
                extinction_step=entry.get("extinction_step"),
            )
        )
    return config, initial, chains


def verify_manifest(path) -> int:
    """Re-run the configured verifiers on the stored snapshots."""
    manifest, run_dir = load_manifest(path)
    config, initial, chains = load_chains(manifest, run_dir)
    traj = extract_gmm(chains, manifest["trajectory"]["times"])
    reports = run_verifiers(config, initial, chains, traj)
    _write_json(run_dir / "reports_verify.json", [r.to_dict() for r in reports])
    print(V.print_table(reports))
    return 0 if all(r.passed for r in reports) else 1


def emit_plot_data(path) -> list[Path]:
    """CSV tables for plotting: area vs t, perimeter vs k, Hoelder pairs, discrepancy vs t."""
    manifest, run_dir = load_manifest(path)
    config, initial, chains = load_chains(manifest, run_dir)
    nb = config.neighborhood()
    out = run_dir / "plot"
    out.mkdir(exist_ok=True)
    N = initial.num_bounded
    written = []

    p = out / "area_vs_t.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["lambda", "k", "t"] + [f"area_{j}" for j in range(N)])
        for c in chains:
            for k, s in enumerate(c.states):
                w.writerow([c.lam, k, k / c.lam] + [repr(s.area(j)) for j in range(N)])
    written.append(p)

    p = out / "perimeter_vs_k.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["lambda", "k", "perimeter"])
        for c in chains:
            for k, s in enumerate(c.states):
                w.writerow([c.lam, k, repr(partition_perimeter(s, nb))])
    written.append(p)

    tr = manifest["trajectory"]
    states = [_load_snapshot(run_dir, s) for s in tr["snapshots"]]
    traj = Trajectory(tr["times"], states, tr["lambdas"], np.array(tr["pairwise_discrepancy"]), tr["extinction_time"])
    gaps, diffs = holder_pairs(traj)
    p = out / "holder_pairs.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["log_gap", "log_diff"])
        for g, d in zip(gaps, diffs):
            if d > 0:
                w.writerow([repr(math.log(g)), repr(math.log(d))])
    written.append(p)

    p = out / "discrepancy.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "delta"])
        for t, d in zip(tr["times"], tr["discrepancy"]):
            w.writerow([t, repr(d)])
    written.append(p)
    return written


def run_oracle(config: ExperimentConfig) -> int:
    """Compare the graph-cut step with exhaustive enumeration on a tiny grid."""
    initial = rasterize_scene(config)
    H = build_forcing(config, initial)
    nb = config.neighborhood()
    status = 0
    for lam in sorted(config.lambdas):
        costs = compile_unaries(initial, lam, H)
        # adding c0 turns the objective back into the step energy, which is nonnegative
        opt = solve_exhaustive(initial, costs, nb).objective + costs.c0
        if initial.num_bounded == 1:
            got = solve_binary(initial, costs, nb, confine=False).objective + costs.c0
            ok = math.isclose(got, opt, rel_tol=1e-9, abs_tol=1e-12)
        else:
            res = solve_multilabel(initial, costs, nb, config.max_sweeps, config.order_seed, confine=False)
            got = res.objective + costs.c0
            ok = opt - 1e-9 * max(1.0, abs(opt)) <= got <= 2 * opt + 1e-9 * max(1.0, abs(opt))
        print(f"lambda={lam:g} exhaustive={opt:.12g} graph_cut={got:.12g} {'ok' if ok else 'MISMATCH'}")
        status |= 0 if ok else 1
    return status
