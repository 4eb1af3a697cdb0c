"""Minimizing-movement chains, their time reparametrisation and flow diagnostics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .energy import EnergyBreakdown, ForcingField, compile_unaries, evaluate_FH
from .grid import LabelField, Neighborhood, _signed_distance_mask, symmetric_difference_volume
from .solver import solve_binary, solve_multilabel

log = logging.getLogger(__name__)


class InsufficientSteps(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


@dataclass(eq=False)
class ChainRecord:
    lam: float
    nb: Neighborhood
    states: list[LabelField]
    energies: list[EnergyBreakdown]
    moved_area: list[float] = field(default_factory=list)
    sup_displacement: list[float] = field(default_factory=list)
    forcing: Optional[ForcingField] = None
    extinction_step: Optional[int] = None

    @property
    def initial(self) -> LabelField:
        return self.states[0]

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def perimeters(self) -> list[float]:
        return [e.perimeter for e in self.energies]

    @property
    def extinction_time(self) -> Optional[float]:
        """Midpoint between the last nonempty state and the first extinct one."""
        if self.extinction_step is None:
            return None
        return (self.extinction_step - 0.5) / self.lam

    def state_at(self, t: float) -> LabelField:
        k = int(math.floor(self.lam * t + 1e-9))
        if k < len(self.states):
            return self.states[k]
        if self.extinction_step is not None:
            return LabelField.empty(self.initial.spec, self.initial.num_bounded)
        raise InsufficientSteps(
            f"chain at lambda={self.lam} has {self.steps} steps, t={t} needs {k}"
        )


def sup_displacement(prev: LabelField, nxt: LabelField) -> float:
    """Largest distance to the previous boundary among cells that left a phase."""
    worst = 0.0
    for i in range(prev.num_labels):
        mask = prev.labels == i
        left = mask & (nxt.labels != i)
        if not left.any():
            continue
        d = -_signed_distance_mask(mask, prev.spec.h)
        worst = max(worst, float(d[left].max()))
    return worst


def solve_step(
    prev: LabelField,
    lam: float,
    nb: Neighborhood,
    H: Optional[ForcingField] = None,
    max_sweeps: int = 50,
    order_seed: Optional[int] = None,
):
    costs = compile_unaries(prev, lam, H)
    if prev.num_bounded == 1:
        return solve_binary(prev, costs, nb)
    return solve_multilabel(prev, costs, nb, max_sweeps=max_sweeps, order_seed=order_seed)


def run_chain(
    initial: LabelField,
    lam: float,
    steps: int,
    nb: Neighborhood,
    H: Optional[ForcingField] = None,
    max_sweeps: int = 50,
    order_seed: Optional[int] = None,
) -> ChainRecord:
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    if H is not None:
        H.validate(initial)
    rec = ChainRecord(
        lam=float(lam),
        nb=nb,
        states=[initial],
        energies=[evaluate_FH(initial, initial, lam, H, nb)],
        forcing=H,
    )
    if initial.is_extinct():
        rec.extinction_step = 0
        return rec
    for k in range(1, steps + 1):
        prev = rec.states[-1]
        res = solve_step(prev, lam, nb, H, max_sweeps, order_seed)
        nxt = res.minimizer
        rec.states.append(nxt)
        rec.energies.append(res.energy)
        rec.moved_area.append(res.moved_area)
        rec.sup_displacement.append(sup_displacement(prev, nxt))
        if nxt.is_extinct():
            rec.extinction_step = k
            log.info("lambda=%g: extinct at step %d", lam, k)
            break
    return rec


def _run_chain_args(args):
    return run_chain(*args)


def run_chains(
    initial: LabelField,
    lambdas: Sequence[float],
    steps: Sequence[int],
    nb: Neighborhood,
    H: Optional[ForcingField] = None,
    max_sweeps: int = 50,
    order_seed: Optional[int] = None,
    workers: int = 1,
) -> list[ChainRecord]:
    """One chain per lambda; chains are independent so they may run in worker processes."""
    jobs = [(initial, lam, n, nb, H, max_sweeps, order_seed) for lam, n in zip(lambdas, steps)]
    if workers <= 1 or len(jobs) == 1:
        return [_run_chain_args(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chain_args, jobs))


@dataclass(eq=False)
class Trajectory:
    times: list[float]
    states: list[LabelField]
    lambdas: list[float]
    pairwise_discrepancy: np.ndarray  # [time, lambda_i, lambda_j]
    extinction_time: Optional[float] = None

    @property
    def discrepancy(self) -> np.ndarray:
        """Largest cross-lambda symmetric difference at each sample time."""
        return self.pairwise_discrepancy.max(axis=(1, 2))

    def consecutive_discrepancy(self) -> np.ndarray:
        """``[time, i]`` = |L(lambda_i) delta L(lambda_{i+1})| for the sorted lambdas."""
        n = len(self.lambdas)
        return np.stack(
            [self.pairwise_discrepancy[:, i, i + 1] for i in range(n - 1)], axis=1
        ) if n > 1 else np.zeros((len(self.times), 0))


def extract_gmm(chains: Sequence[ChainRecord], times: Sequence[float]) -> Trajectory:
    """Sample ``L(lambda, [lambda t])`` from the largest-lambda chain.

    The symmetric differences between chains of different lambda at the same
    time are kept as a convergence diagnostic.
    """
    if not chains:
        raise ValueError("need at least one chain")
    chains = sorted(chains, key=lambda c: c.lam)
    ref = chains[0].initial
    for c in chains[1:]:
        if c.initial != ref:
            raise ValueError("all chains must start from the same partition")
    table = [[c.state_at(t) for c in chains] for t in times]
    L = len(chains)
    disc = np.zeros((len(times), L, L))
    for m, row in enumerate(table):
        for i in range(L):
            for j in range(i + 1, L):
                disc[m, i, j] = disc[m, j, i] = symmetric_difference_volume(row[i], row[j])
    return Trajectory(
        times=[float(t) for t in times],
        states=[row[-1] for row in table],
        lambdas=[c.lam for c in chains],
        pairwise_discrepancy=disc,
        extinction_time=chains[-1].extinction_time,
    )


def holder_pairs(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Time gaps and symmetric differences for every sample pair with gap below 1."""
    gaps, diffs = [], []
    for a in range(len(traj.times)):
        for b in range(a + 1, len(traj.times)):
            gap = abs(traj.times[b] - traj.times[a])
            if 0 < gap < 1:
                gaps.append(gap)
                diffs.append(symmetric_difference_volume(traj.states[a], traj.states[b]))
    return np.array(gaps), np.array(diffs)


def holder_modulus(traj: Trajectory) -> tuple[float, float]:
    """Least-squares fit ``log|M(t) delta M(t')| = log C + alpha log|t - t'|``; returns ``(C, alpha)``."""
    if len(traj.times) < 6:
        raise ValueError("need at least 6 sample times")
    gaps, diffs = holder_pairs(traj)
    keep = diffs > 0
    if keep.sum() < 2 or np.unique(gaps[keep]).size < 2:
        raise DegenerateFit("not enough pairs with nonzero difference")
    slope, intercept = np.polyfit(np.log(gaps[keep]), np.log(diffs[keep]), 1)
    return float(math.exp(intercept)), float(slope)
