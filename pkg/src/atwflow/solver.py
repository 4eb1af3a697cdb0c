"""One minimizing-movement step: argmin of unary label costs plus Potts perimeter.

Binary problems are solved exactly by a single s-t min cut. For more labels we
run alpha-expansion, each move itself an exact binary cut. ``solve_exhaustive``
enumerates every labeling and exists to certify the other two on tiny grids.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import maxflow
import numpy as np

from .energy import EnergyBreakdown, UnaryCosts, evaluate_FH, potts_energy
from .grid import (
    LabelField,
    Neighborhood,
    convex_hull_mask,
    pair_slices,
    symmetric_difference_volume,
)

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 10**8
_CHUNK = 1 << 15


class TooLarge(ValueError):
    pass


class StepInvariantError(RuntimeError):
    """A solve returned a state violating energy descent or hull confinement."""


@dataclass(frozen=True, eq=False)
class StepResult:
    minimizer: LabelField
    objective: float
    energy: Optional[EnergyBreakdown]
    moved_area: float
    solver: str
    sweeps: int
    converged: bool = True


def restrict_to_hull(a: LabelField, candidate: LabelField) -> LabelField:
    """Send bounded cells of ``candidate`` outside the hull mask of ``a`` to the exterior."""
    if a.is_extinct():
        return LabelField.empty(a.spec, a.num_bounded)
    outside = candidate.bounded_mask() & ~convex_hull_mask(a)
    if not outside.any():
        return candidate
    labels = np.array(candidate.labels)
    labels[outside] = candidate.exterior
    return candidate.with_labels(labels)


def _binary_move(
    L0: np.ndarray, L1: np.ndarray, costs: UnaryCosts, nb: Neighborhood
) -> np.ndarray:
    """Exact minimizer over labelings picking ``L0[x]`` or ``L1[x]`` per cell.

    Pairwise terms must be submodular, which Potts guarantees whenever one of
    the two proposals is constant where both differ (expansion) or both
    proposals are constant (binary).
    """
    var = L0 != L1
    nvar = int(np.count_nonzero(var))
    if nvar == 0:
        return L0.copy()
    ids = np.full(L0.shape, -1, dtype=np.int64)
    ids[var] = np.arange(nvar)

    u = costs.costs
    cost0 = np.take_along_axis(u, L0[None].astype(np.intp), axis=0)[0][var].copy()
    cost1 = np.take_along_axis(u, L1[None].astype(np.intp), axis=0)[0][var].copy()

    g = maxflow.Graph[float](nvar, nvar * len(nb.half()))
    g.add_nodes(nvar)

    for off, w in nb.half():
        sp, sq = pair_slices(L0.shape, off)
        vp, vq = var[sp], var[sq]
        a0, a1, b0, b1 = L0[sp], L1[sp], L0[sq], L1[sq]
        ip, iq = ids[sp], ids[sq]

        both = vp & vq
        if both.any():
            A = w * (a0[both] != b0[both])
            B = w * (a0[both] != b1[both])
            C = w * (a1[both] != b0[both])
            D = w * (a1[both] != b1[both])
            p, q = ip[both], iq[both]
            # E = A + (C-A) x_p + (D-C) x_q + (B+C-A-D)(1-x_p) x_q
            np.add.at(cost0, p, A)
            np.add.at(cost1, p, C - A)
            np.add.at(cost1, q, D - C)
            cap = B + C - A - D
            keep = cap > 0
            if keep.any():
                g.add_edges(p[keep], q[keep], cap[keep], np.zeros(int(keep.sum())))

        only_p = vp & ~vq
        if only_p.any():
            fixed = b0[only_p]
            p = ip[only_p]
            np.add.at(cost0, p, w * (a0[only_p] != fixed))
            np.add.at(cost1, p, w * (a1[only_p] != fixed))

        only_q = vq & ~vp
        if only_q.any():
            fixed = a0[only_q]
            q = iq[only_q]
            np.add.at(cost0, q, w * (b0[only_q] != fixed))
            np.add.at(cost1, q, w * (b1[only_q] != fixed))

    m = np.minimum(cost0, cost1)
    # source edge is cut when the node takes L1, sink edge when it takes L0
    g.add_grid_tedges(np.arange(nvar), cost1 - m, cost0 - m)
    g.maxflow()
    take1 = g.get_grid_segments(np.arange(nvar))
    out = L0.copy()
    flat = np.flatnonzero(var)
    out.flat[flat[take1]] = L1.flat[flat[take1]]
    return out


def _breakdown(a: LabelField, minimizer: LabelField, costs: UnaryCosts, nb) -> Optional[EnergyBreakdown]:
    if costs.reference is not a:
        return None
    return evaluate_FH(minimizer, a, costs.lam, costs.forcing, nb)


def _finish(a, labels, costs, nb, solver, sweeps, converged=True, confine=True) -> StepResult:
    cand = a.with_labels(labels)
    if confine:
        restricted = restrict_to_hull(a, cand)
        if restricted is not cand:
            before = potts_energy(cand.labels, costs, nb)
            after = potts_energy(restricted.labels, costs, nb)
            if after > before:
                log.warning("hull restriction raised the discrete energy by %.3g", after - before)
            cand = restricted
    result = StepResult(
        minimizer=cand,
        objective=potts_energy(cand.labels, costs, nb),
        energy=_breakdown(a, cand, costs, nb),
        moved_area=symmetric_difference_volume(a, cand),
        solver=solver,
        sweeps=sweeps,
        converged=converged,
    )
    _certify(a, result, costs, nb, confine)
    return result


def _certify(a: LabelField, result: StepResult, costs: UnaryCosts, nb, confine: bool) -> None:
    if result.energy is not None:
        start = evaluate_FH(a, a, costs.lam, costs.forcing, nb).total
        tol = 1e-9 * max(1.0, abs(start))
        if result.energy.total > start + tol:
            raise StepInvariantError(
                f"step energy {result.energy.total!r} exceeds previous state energy {start!r}"
            )
    if confine and not a.is_extinct():
        if np.any(result.minimizer.bounded_mask() & ~convex_hull_mask(a)):
            raise StepInvariantError("bounded phase left the convex hull of the previous state")


def _confinement(a: LabelField, confine: bool) -> np.ndarray:
    if not confine:
        return np.ones(a.spec.shape, dtype=bool)
    if a.is_extinct():
        return np.zeros(a.spec.shape, dtype=bool)
    return convex_hull_mask(a)


def solve_binary(a: LabelField, costs: UnaryCosts, nb: Neighborhood, confine: bool = True) -> StepResult:
    """Global optimum of the two-phase step by one min cut.

    With ``confine`` the bounded phase is only offered inside the hull mask
    of ``a``; minimizers lie there anyway, and it shrinks the graph.
    """
    if a.num_bounded != 1:
        raise ValueError("solve_binary needs exactly one bounded phase")
    allowed = costs.allowed()
    inside = allowed[0] & _confinement(a, confine)
    L0 = np.where(allowed[1], 1, 0).astype(np.int16)
    L1 = np.where(inside, 0, L0).astype(np.int16)
    labels = _binary_move(L0, L1, costs, nb)
    return _finish(a, labels, costs, nb, "exact_cut", 1, confine=confine)


def _feasible_start(a: LabelField, costs: UnaryCosts) -> np.ndarray:
    allowed = costs.allowed()
    labels = np.array(a.labels)
    ok = np.take_along_axis(allowed, labels[None].astype(np.intp), axis=0)[0]
    if not ok.all():
        masked = np.where(allowed, costs.costs, np.inf)
        labels[~ok] = masked.argmin(axis=0)[~ok]
    return labels


def expansion_order(num_labels: int, order_seed: Optional[int]) -> list[int]:
    order = list(range(num_labels))
    if order_seed is not None:
        order = [int(j) for j in np.random.default_rng(order_seed).permutation(num_labels)]
    return order


def solve_multilabel(
    a: LabelField,
    costs: UnaryCosts,
    nb: Neighborhood,
    max_sweeps: int = 50,
    order_seed: Optional[int] = None,
    confine: bool = True,
) -> StepResult:
    """Alpha-expansion local optimum; exact for a single bounded phase.

    Labels are visited ``0..N`` (or a seeded permutation) until a full sweep
    makes no move. Hitting ``max_sweeps`` with moves still happening is
    reported through ``converged=False``.
    """
    if a.num_bounded == 1:
        return solve_binary(a, costs, nb, confine=confine)
    allowed = costs.allowed()
    region = _confinement(a, confine)
    labels = _feasible_start(a, costs)
    current = potts_energy(labels, costs, nb)
    order = expansion_order(a.num_labels, order_seed)
    sweeps, moved = 0, True
    while moved and sweeps < max_sweeps:
        sweeps += 1
        moved = False
        for alpha in order:
            can = allowed[alpha] if alpha == a.exterior else allowed[alpha] & region
            L1 = np.where(can, alpha, labels).astype(np.int16)
            if np.array_equal(L1, labels):
                continue
            proposal = _binary_move(labels, L1, costs, nb)
            e = potts_energy(proposal, costs, nb)
            if e < current - 1e-12 * max(1.0, abs(current)):
                labels, current, moved = proposal, e, True
    converged = not moved
    if not converged:
        log.warning("alpha-expansion still moving after %d sweeps", sweeps)
    return _finish(a, labels, costs, nb, "expansion", sweeps, converged, confine=confine)


def _pair_tables(free: np.ndarray, const_labels: np.ndarray, nb: Neighborhood):
    """Potts pairs touching free cells: free-free ``(i, j, w)`` and free-fixed ``(i, label, w)``."""
    shape = free.shape
    fid = np.full(shape, -1, dtype=np.int64)
    fid[free] = np.arange(int(free.sum()))
    ffi, ffj, ffw, fci, fcl, fcw = [], [], [], [], [], []
    for off, w in nb.half():
        sp, sq = pair_slices(shape, off)
        fp, fq = free[sp], free[sq]
        ip, iq = fid[sp], fid[sq]
        lp, lq = const_labels[sp], const_labels[sq]
        both = fp & fq
        ffi.append(ip[both]), ffj.append(iq[both]), ffw.append(np.full(both.sum(), w))
        for m, i, lab in ((fp & ~fq, ip, lq), (fq & ~fp, iq, lp)):
            fci.append(i[m]), fcl.append(lab[m]), fcw.append(np.full(m.sum(), w))
    cat = np.concatenate
    return (cat(ffi), cat(ffj), cat(ffw)), (cat(fci), cat(fcl), cat(fcw))


_TABLE_CACHE: dict = {}
_CACHE_STATES = 1 << 18


def _enumeration_chunks(free, const_labels, choices, radices, nb):
    """Yield ``(first_index, onehot, pair_energy)`` per chunk of labelings.

    ``onehot @ unary_table`` gives each labeling's unary sum; the pairwise part
    depends only on the structure, so small enumerations are cached.
    """
    total = math.prod(int(r) for r in radices)
    key = (free.tobytes(), const_labels.tobytes(), free.shape, radices.tobytes(),
           tuple(c.tobytes() for c in choices), nb)
    if key in _TABLE_CACHE:
        yield from _TABLE_CACHE[key]
        return
    F = len(choices)
    maxr = int(radices.max()) if F else 1
    lab_of = np.zeros((F, maxr), dtype=np.int16)
    for c, labs in enumerate(choices):
        lab_of[c, : len(labs)] = labs
    (ffi, ffj, ffw), (fci, fcl, fcw) = _pair_tables(free, const_labels, nb)
    cols = np.arange(F) * maxr
    chunks = []
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        digits = np.empty((len(idx), F), dtype=np.int64)
        rem = idx.copy()
        for c in range(F):
            digits[:, c] = rem % radices[c]
            rem //= radices[c]
        labs = lab_of[np.arange(F), digits]
        pair = (labs[:, ffi] != labs[:, ffj]) @ ffw + (labs[:, fci] != fcl) @ fcw
        onehot = np.zeros((len(idx), F * maxr))
        onehot[np.arange(len(idx))[:, None], cols + digits] = 1.0
        chunk = (start, onehot, pair)
        if total <= _CACHE_STATES:
            chunks.append(chunk)
        yield chunk
    if total <= _CACHE_STATES:
        if len(_TABLE_CACHE) > 8:
            _TABLE_CACHE.clear()
        _TABLE_CACHE[key] = chunks


def solve_exhaustive(a: LabelField, costs: UnaryCosts, nb: Neighborhood) -> StepResult:
    """True optimum by enumerating every allowed labeling (test oracle)."""
    allowed = costs.allowed()
    n_allowed = allowed.sum(axis=0)
    if np.any(n_allowed == 0):
        raise ValueError("some cell has no allowed label")
    free = n_allowed > 1
    const_labels = allowed.argmax(axis=0).astype(np.int16)
    fi, fj = np.nonzero(free)
    choices = [np.flatnonzero(allowed[:, i, j]) for i, j in zip(fi, fj)]
    radices = np.array([len(c) for c in choices], dtype=np.int64)
    total = math.prod(int(r) for r in radices)
    if total > EXHAUSTIVE_LIMIT:
        raise TooLarge(f"{total} labelings exceed the enumeration limit {EXHAUSTIVE_LIMIT}")

    F = len(choices)
    maxr = int(radices.max()) if F else 1
    table = np.zeros((F, maxr))
    for c, labs in enumerate(choices):
        table[c, : len(labs)] = costs.costs[labs, fi[c], fj[c]]
    table = table.ravel()

    # terms between fixed cells are constant and do not affect the argmin
    best_e, best_idx = math.inf, 0
    for start, onehot, pair in _enumeration_chunks(free, const_labels, choices, radices, nb):
        e = onehot @ table + pair
        k = int(np.argmin(e))
        if e[k] < best_e:
            best_e, best_idx = float(e[k]), start + k

    labels = const_labels.copy()
    rem = best_idx
    for c in range(F):
        labels[fi[c], fj[c]] = choices[c][rem % radices[c]]
        rem //= int(radices[c])
    return _finish(a, labels, costs, nb, "exhaustive", 1, confine=False)
