"""Executable checks of the quantitative statements about minimizers and flows.

Every continuum bound gets an explicit grid slack; all slacks live in
``SLACKS`` so that no tolerance is hidden inside a check. A report passes iff
every measurement respects its bound up to its slack; checks whose
preconditions fail are marked skipped and carry no measurements.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .energy import compile_unaries, forcing_energy, sigma
from .flow import ChainRecord, Trajectory, holder_modulus, holder_pairs, run_chain, sup_displacement
from .grid import (
    EmptyPhase,
    LabelField,
    Neighborhood,
    boundary_cells,
    convex_hull_mask,
    hausdorff_distance,
    min_pairwise_distance,
    partition_perimeter,
    phase_perimeter,
    symmetric_difference_volume,
    _hull_vertices,
)
from .solver import solve_binary

SLACKS = {
    "energy_descent_rel": 1e-9,  # times Per(initial)
    "density_radius_cells": 4.0,  # slack 4h/r on volume ratios
    "density_min_radius_cells": 3.0,
    "density_max_samples": 64,
    "disjointness_cells": 1.0,
    "decoupling_factor": 2.0,  # symmetric difference <= 2 h * P(phase)
    "distance_monotone_cells": 2.0,
    "linf_cells": 2.0,
    "shrinking_rel": 0.07,
    "shrinking_abs_factor": 4.0 * math.pi,  # times r0 h
    "extinction_rel": 0.10,
    "small_time_boundary_factor": 3.0,  # times h^2 * boundary cells
    "stability_factor": 2.0,
    "stability_cells": 4.0,
    "holder_exponent": 0.05,
    "holder_constant_factor": 1.5,
}


@dataclass(frozen=True)
class Measurement:
    quantity: str
    value: float
    bound: float
    slack: float
    upper: bool = True
    context: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        if self.upper:
            return bool(self.value <= self.bound + self.slack)
        return bool(self.value >= self.bound - self.slack)


@dataclass
class VerifierReport:
    check: str
    measured: list[Measurement] = field(default_factory=list)
    context: dict = field(default_factory=dict)
    skipped: bool = False
    reason: str = ""

    @property
    def passed(self) -> bool:
        return all(m.ok for m in self.measured)

    @property
    def status(self) -> str:
        if self.skipped:
            return "skip"
        return "pass" if self.passed else "fail"

    def violations(self) -> list[Measurement]:
        return [m for m in self.measured if not m.ok]

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "status": self.status,
            "passed": self.passed,
            "skipped": self.skipped,
            "reason": self.reason,
            "context": self.context,
            "measured": [dict(asdict(m), ok=m.ok) for m in self.measured],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerifierReport":
        ms = [
            Measurement(m["quantity"], m["value"], m["bound"], m["slack"], m["upper"], m["context"])
            for m in d["measured"]
        ]
        return cls(d["check"], ms, d["context"], d["skipped"], d["reason"])

    def summary(self) -> str:
        worst = ""
        if self.measured:
            m = max(self.measured, key=_excess)
            worst = f" worst {m.quantity}={m.value:.6g} (bound {m.bound:.6g} +/- {m.slack:.3g})"
        extra = f" [{self.reason}]" if self.reason else ""
        return f"{self.status.upper():4s} {self.check}: {len(self.measured)} measurements{worst}{extra}"


def _excess(m: Measurement) -> float:
    return (m.value - m.bound - m.slack) if m.upper else (m.bound - m.slack - m.value)


def _dim(field: LabelField) -> int:
    return field.spec.n


def check_energy_descent(chain: ChainRecord) -> VerifierReport:
    """lambda sigma(L_k, L_{k-1}) <= 2 (E(L_{k-1}) - E(L_k)) with E = Per (+ forcing when forced)."""
    nb = chain.nb
    H = chain.forcing
    base = [partition_perimeter(s, nb) + forcing_energy(s, H) for s in chain.states]
    slack = SLACKS["energy_descent_rel"] * max(base[0], 1e-300)
    rep = VerifierReport(
        "energy_descent",
        context={"lambda": chain.lam, "forced": H is not None, "steps": chain.steps},
    )
    for k in range(1, len(chain.states)):
        lhs = chain.lam * sigma(chain.states[k], chain.states[k - 1])
        rhs = 2.0 * (base[k - 1] - base[k])
        rep.measured.append(
            Measurement("lambda*sigma - 2*drop", lhs - rhs, 0.0, slack, context={"k": k})
        )
    return rep


def check_monotone_energy(chain: ChainRecord) -> VerifierReport:
    """The map k -> Per(L_k) + forcing(L_k) is nonincreasing."""
    nb, H = chain.nb, chain.forcing
    vals = [partition_perimeter(s, nb) + forcing_energy(s, H) for s in chain.states]
    slack = SLACKS["energy_descent_rel"] * max(abs(vals[0]), 1e-300)
    rep = VerifierReport("monotone_energy", context={"lambda": chain.lam, "forced": H is not None})
    for k in range(1, len(vals)):
        rep.measured.append(
            Measurement("increase of Per+forcing", vals[k] - vals[k - 1], 0.0, slack, context={"k": k})
        )
    return rep


def hull_diameter(field: LabelField) -> float:
    pts = np.argwhere(field.bounded_mask())
    if len(pts) == 0:
        return 0.0
    v = np.array(_hull_vertices(pts), dtype=float)
    d = np.sqrt(((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)).max()
    return float(d) * field.spec.h


def density_radius_limit(prev: LabelField, lam: float) -> float:
    n, N = _dim(prev), prev.num_bounded
    return min(1.0, n / (2.0 * lam * N * (hull_diameter(prev) + 2.0)))


def _disk_stencil(radius_cells: float):
    R = int(math.floor(radius_cells))
    di, dj = np.mgrid[-R : R + 1, -R : R + 1]
    keep = di * di + dj * dj <= radius_cells * radius_cells
    return di[keep], dj[keep]


def volume_ratios(mask: np.ndarray, centers: np.ndarray, radius_cells: float) -> np.ndarray:
    """|mask cap B_r(x)| / |B_r(x)| for each center, counting only cells inside the grid."""
    di, dj = _disk_stencil(radius_cells)
    W, H = mask.shape
    out = np.empty(len(centers))
    for n, (i, j) in enumerate(centers):
        ii, jj = i + di, j + dj
        ok = (ii >= 0) & (ii < W) & (jj >= 0) & (jj < H)
        out[n] = mask[ii[ok], jj[ok]].mean()
    return out


def density_bounds(N: int, n: int = 2) -> tuple[float, float]:
    lower = (1.0 / (2.0 * (N + 1))) ** n
    upper = 1.0 - (1.0 / 2**n) * (1.0 - 1.0 / (2.0 * N)) ** n
    return lower, upper


def check_density(chain: ChainRecord, r_samples: int = 3) -> VerifierReport:
    """Volume-density bounds at sampled boundary cells for admissible radii."""
    h = chain.initial.spec.h
    N, n = chain.initial.num_bounded, _dim(chain.initial)
    lower, upper = density_bounds(N, n)
    rmin = SLACKS["density_min_radius_cells"] * h
    rep = VerifierReport("density", context={"lambda": chain.lam, "lower": lower, "upper": upper})
    skipped = []
    for k in range(1, len(chain.states)):
        prev, cur = chain.states[k - 1], chain.states[k]
        rmax = density_radius_limit(prev, chain.lam)
        if rmax <= rmin:
            skipped.append({"k": k, "r_max": rmax})
            continue
        radii = np.linspace(rmin, rmax, r_samples, endpoint=False)
        for i in range(cur.num_labels):
            mask = cur.labels == i
            if not mask.any() or mask.all():
                continue
            cells = np.argwhere(boundary_cells(mask))
            take = np.unique(
                np.linspace(0, len(cells) - 1, min(len(cells), SLACKS["density_max_samples"])).astype(int)
            )
            cells = cells[take]
            for r in radii:
                ratios = volume_ratios(mask, cells, r / h)
                slack = SLACKS["density_radius_cells"] * h / r
                ctx = {"k": k, "phase": i, "r": float(r)}
                rep.measured.append(Measurement("min volume ratio", float(ratios.min()), lower, slack, False, ctx))
                rep.measured.append(Measurement("max volume ratio", float(ratios.max()), upper, slack, True, ctx))
    rep.context["skipped_radii"] = skipped
    if not rep.measured:
        rep.skipped = True
        rep.reason = "NoAdmissibleRadius"
    return rep


def disjointness_threshold(eps0: float, n: int = 2) -> float:
    return 2.0 ** (n + 6) * n / eps0**2


def check_disjointness(chain: ChainRecord, eps0: float) -> VerifierReport:
    """Each phase stays inside the eps0/4-neighbourhood of its previous self."""
    init = chain.initial
    h = init.spec.h
    rep = VerifierReport("disjointness", context={"lambda": chain.lam, "eps0": eps0})
    if len(init.nonempty_bounded()) < 2:
        rep.reason = "single phase: vacuous"
        return rep
    thr = disjointness_threshold(eps0, _dim(init))
    rep.context["threshold"] = thr
    if chain.lam < thr:
        rep.skipped, rep.reason = True, f"PreconditionUnmet: lambda {chain.lam} < {thr:.6g}"
        return rep
    d0 = min_pairwise_distance(init)
    if d0 < eps0:
        rep.skipped, rep.reason = True, f"PreconditionUnmet: initial distance {d0:.6g} < eps0"
        return rep
    slack = SLACKS["disjointness_cells"] * h
    for k in range(1, len(chain.states)):
        prev, cur = chain.states[k - 1], chain.states[k]
        for j in range(init.num_bounded):
            cm = cur.labels == j
            if not cm.any():
                continue
            pm = prev.labels == j
            reach = (
                float(ndimage.distance_transform_edt(~pm, sampling=h)[cm].max()) if pm.any() else math.inf
            )
            rep.measured.append(
                Measurement("distance to previous phase", reach, eps0 / 4.0, slack, context={"k": k, "phase": j})
            )
    return rep


def check_distance_monotone(chain: ChainRecord) -> VerifierReport:
    """min_{i<j} dist(L_i, L_j) is nondecreasing along the chain, up to grid slack."""
    h = chain.initial.spec.h
    rep = VerifierReport("distance_monotone", context={"lambda": chain.lam})
    slack = SLACKS["distance_monotone_cells"] * h
    prev = None
    for k, s in enumerate(chain.states):
        if len(s.nonempty_bounded()) < 2:
            break
        d = min_pairwise_distance(s)
        if prev is not None:
            rep.measured.append(Measurement("distance decrease", prev - d, 0.0, slack, context={"k": k}))
        prev = d
    if not rep.measured:
        rep.reason = "fewer than two phases: vacuous"
    return rep


def binary_split(field: LabelField, label: int) -> LabelField:
    """Two-phase field holding one bounded phase of ``field`` against everything else."""
    return LabelField(field.spec, 1, np.where(field.labels == label, 0, 1))


def check_decoupling(
    chain: ChainRecord, per_phase_steps: Optional[dict] = None
) -> VerifierReport:
    """Multiphase steps agree with independent two-phase steps of each phase.

    ``per_phase_steps[(k, j)]`` may supply precomputed binary minimizers (a
    boolean mask); otherwise they are solved here.
    """
    init = chain.initial
    h = init.spec.h
    nb = chain.nb
    rep = VerifierReport("decoupling", context={"lambda": chain.lam})
    if len(init.nonempty_bounded()) >= 2:
        eps0 = min_pairwise_distance(init)
        rep.context["eps0"] = eps0
        if eps0 <= h:
            rep.skipped, rep.reason = True, "PreconditionUnmet: phases touch"
            return rep
        thr = disjointness_threshold(eps0, _dim(init))
        rep.context["threshold"] = thr
        if chain.lam < thr:
            rep.skipped, rep.reason = True, f"PreconditionUnmet: lambda {chain.lam} < {thr:.6g}"
            return rep
    for k in range(1, len(chain.states)):
        prev, cur = chain.states[k - 1], chain.states[k]
        for j in prev.nonempty_bounded():
            if per_phase_steps is not None and (k, j) in per_phase_steps:
                single = np.asarray(per_phase_steps[(k, j)], dtype=bool)
            else:
                b = binary_split(prev, j)
                single = solve_binary(b, compile_unaries(b, chain.lam), nb).minimizer.labels == 0
            diff = float(np.count_nonzero(single != (cur.labels == j))) * init.spec.cell_area
            P = phase_perimeter(prev, j, nb)
            rep.measured.append(
                Measurement(
                    "phase vs two-phase step",
                    diff,
                    0.0,
                    SLACKS["decoupling_factor"] * h * P,
                    context={"k": k, "phase": j, "pixelwise_equal": diff == 0.0},
                )
            )
    return rep


def check_hull_confinement(chain: ChainRecord) -> VerifierReport:
    rep = VerifierReport("hull_confinement", context={"lambda": chain.lam})
    if chain.initial.is_extinct():
        return rep
    hull = convex_hull_mask(chain.initial)
    for k, s in enumerate(chain.states):
        out = int(np.count_nonzero(s.bounded_mask() & ~hull))
        rep.measured.append(Measurement("cells outside hull", out, 0, 0, context={"k": k}))
    return rep


def linf_bound(lam: float, n: int = 2) -> float:
    return math.sqrt(2 ** (n + 2) * n) / math.sqrt(lam)


def check_linf(chain: ChainRecord) -> VerifierReport:
    h = chain.initial.spec.h
    bound = linf_bound(chain.lam, _dim(chain.initial))
    rep = VerifierReport("linf_jump", context={"lambda": chain.lam, "bound": bound})
    slack = SLACKS["linf_cells"] * h
    for k in range(1, len(chain.states)):
        v = sup_displacement(chain.states[k - 1], chain.states[k])
        rep.measured.append(Measurement("sup displacement", v, bound, slack, context={"k": k}))
    return rep


def check_shrinking_disk(traj: Trajectory, r0: float, label: int = 0) -> VerifierReport:
    """Area follows pi (r0^2 - 2t) and the disk vanishes near r0^2 / 2."""
    h = traj.states[0].spec.h
    t_ext = r0 * r0 / 2.0
    rep = VerifierReport("shrinking_disk", context={"r0": r0, "t_ext_exact": t_ext})
    abs_slack = SLACKS["shrinking_abs_factor"] * r0 * h
    for t, s in zip(traj.times, traj.states):
        area = s.area(label)
        if t < t_ext:
            exact = math.pi * (r0 * r0 - 2.0 * t)
            rep.measured.append(
                Measurement(
                    "area error",
                    abs(area - exact),
                    0.0,
                    SLACKS["shrinking_rel"] * exact + abs_slack,
                    context={"t": t, "area": area, "exact": exact},
                )
            )
        elif traj.extinction_time is not None and t > traj.extinction_time:
            rep.measured.append(Measurement("area after extinction", area, 0.0, 0.0, context={"t": t}))
    measured_ext = traj.extinction_time if traj.extinction_time is not None else math.inf
    rep.context["t_ext_measured"] = traj.extinction_time
    rep.measured.append(
        Measurement(
            "extinction time error",
            abs(measured_ext - t_ext),
            0.0,
            SLACKS["extinction_rel"] * t_ext,
            context={"t_ext": traj.extinction_time},
        )
    )
    return rep


def interface_cells(field: LabelField) -> int:
    """Cells with a 4-neighbour of a different label."""
    lab = field.labels
    out = np.zeros(lab.shape, dtype=bool)
    for ax in (0, 1):
        d = np.diff(lab, axis=ax) != 0
        if ax == 0:
            out[:-1, :] |= d
            out[1:, :] |= d
        else:
            out[:, :-1] |= d
            out[:, 1:] |= d
    return int(out.sum())


def small_time_ladder(initial: LabelField, lambdas: Sequence[float], nb: Neighborhood) -> list[dict]:
    """One-step minimizers of ``initial`` for each lambda, summarised per row."""
    from .flow import solve_step

    P0 = partition_perimeter(initial, nb)
    rows = []
    for lam in sorted(float(l) for l in lambdas):
        m = solve_step(initial, lam, nb).minimizer
        rows.append(
            {
                "lambda": lam,
                "symdiff": symmetric_difference_volume(m, initial),
                "perimeter_gap": abs(partition_perimeter(m, nb) - P0),
                "lambda_sigma": lam * sigma(m, initial),
            }
        )
    return rows


def assess_small_time(rows: list[dict], initial: LabelField) -> VerifierReport:
    """(a) symdiff nonincreasing and finally below the boundary-cell budget,
    (b) perimeter gap nonincreasing, (c) lambda*sigma nonincreasing over the top half."""
    rows = sorted(rows, key=lambda r: r["lambda"])
    rep = VerifierReport("small_time_consistency", context={"ladder": rows})
    for a, b in zip(rows, rows[1:]):
        ctx = {"lambdas": (a["lambda"], b["lambda"])}
        rep.measured.append(Measurement("(a) symdiff increase", b["symdiff"] - a["symdiff"], 0.0, 0.0, context=ctx))
        rep.measured.append(
            Measurement("(b) perimeter gap increase", b["perimeter_gap"] - a["perimeter_gap"], 0.0, 0.0, context=ctx)
        )
    bcells = interface_cells(initial)
    rep.measured.append(
        Measurement(
            "(a) final symdiff",
            rows[-1]["symdiff"],
            0.0,
            SLACKS["small_time_boundary_factor"] * initial.spec.cell_area * bcells,
            context={"boundary_cells": bcells},
        )
    )
    top = rows[len(rows) // 2 :]
    for a, b in zip(top, top[1:]):
        rep.measured.append(
            Measurement(
                "(c) lambda*sigma increase",
                b["lambda_sigma"] - a["lambda_sigma"],
                0.0,
                0.0,
                context={"lambdas": (a["lambda"], b["lambda"])},
            )
        )
    return rep


def check_small_time_consistency(
    initial: LabelField, lambdas: Sequence[float], nb: Neighborhood
) -> VerifierReport:
    """One-step minimizers approach the initial partition as lambda grows."""
    return assess_small_time(small_time_ladder(initial, lambdas, nb), initial)


def partition_hausdorff(a: LabelField, b: LabelField) -> float:
    """Sum over bounded phases of the Hausdorff distance between the two fields."""
    return sum(hausdorff_distance(a, b, i) for i in range(a.num_bounded))


def stability_ladder(
    center: LabelField,
    perturbations: Sequence[LabelField],
    t_probe: float,
    lam: float,
    nb: Neighborhood,
) -> list[dict]:
    """Initial and probe-time Hausdorff distances for each perturbation.

    Rows whose phases vanish (perturbation bigger than the phase, or
    extinction before ``t_probe``) are kept with a note and no distances.
    """
    steps = int(math.floor(lam * t_probe + 1e-9))
    ref = run_chain(center, lam, steps, nb).state_at(t_probe)
    rows = []
    for g in perturbations:
        try:
            d0 = partition_hausdorff(g, center)
            m = run_chain(g, lam, steps, nb).state_at(t_probe)
            rows.append({"initial": d0, "probe": partition_hausdorff(m, ref)})
        except EmptyPhase as exc:
            rows.append({"initial": None, "probe": None, "note": f"out of regime: {exc}"})
    return rows


def assess_stability(rows: list[dict], h: float, context: Optional[dict] = None) -> VerifierReport:
    rep = VerifierReport("stability", context=dict(context or {}, ladder=rows))
    valid = [r for r in rows if r["probe"] is not None]
    for a, b in zip(valid, valid[1:]):
        rep.measured.append(Measurement("probe distance increase", b["probe"] - a["probe"], 0.0, 0.0))
    if valid:
        last = valid[-1]
        rep.measured.append(
            Measurement(
                "finest probe distance",
                last["probe"],
                SLACKS["stability_factor"] * last["initial"],
                SLACKS["stability_cells"] * h,
                context={"initial": last["initial"]},
            )
        )
    return rep


def check_stability(
    center: LabelField,
    perturbations: Sequence[LabelField],
    t_probe: float,
    lam: float,
    nb: Neighborhood,
) -> VerifierReport:
    """Flows from Hausdorff-close data stay Hausdorff-close at ``t_probe``."""
    rows = stability_ladder(center, perturbations, t_probe, lam, nb)
    return assess_stability(rows, center.spec.h, {"t_probe": t_probe, "lambda": lam})


def check_holder(traj: Trajectory) -> VerifierReport:
    """Fitted exponent at least 1/(n+1) and every pair under the fitted 1/(n+1) envelope."""
    n = _dim(traj.states[0])
    C, alpha = holder_modulus(traj)
    rep = VerifierReport("holder", context={"C": C, "exponent": alpha})
    rep.measured.append(Measurement("fitted exponent", alpha, 1.0 / (n + 1), SLACKS["holder_exponent"], False))
    gaps, diffs = holder_pairs(traj)
    env = SLACKS["holder_constant_factor"] * C
    for g, d in zip(gaps, diffs):
        rep.measured.append(
            Measurement("pair difference", float(d), env * g ** (1.0 / (n + 1)), 0.0, context={"gap": float(g)})
        )
    return rep


def print_table(reports: Sequence[VerifierReport]) -> str:
    lines = [r.summary() for r in reports]
    return "\n".join(lines)
