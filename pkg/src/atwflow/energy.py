"""Dissipation distance, the partition functional and its forced variant.

The transport term is linearised into per-cell label costs via

    sum_{x in B_j delta A_j} d(x, dA_j) = sum_{x in B_j} sd_j(x) - sum_{x in A_j} sd_j(x)

where ``sd_j`` is the signed distance to the boundary of phase ``j`` of the
previous state (negative inside).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import (
    GridError,
    LabelField,
    Neighborhood,
    ShapeMismatch,
    _signed_distance_mask,
    pair_slices,
    partition_perimeter,
)

SENTINEL_FACTOR = 1e12


class InfiniteSigma(GridError):
    """A phase without boundary in the reference state changed."""


class ForcingError(GridError):
    pass


@dataclass(frozen=True, eq=False)
class ForcingField:
    """Per-phase forcing densities ``values[j]`` on the grid of ``spec``.

    ``R`` is the radius (around the domain center) outside which every bounded
    phase must be forced at least as much as the exterior phase.
    """

    values: np.ndarray
    R: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 3:
            raise ForcingError("forcing values must have shape (num_labels, width, height)")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def num_labels(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, field: LabelField) -> "ForcingField":
        return cls(np.zeros((field.num_labels,) + field.spec.shape), R=0.0)

    @classmethod
    def constant(cls, field: LabelField, per_label: dict[int, float], R: float = 0.0) -> "ForcingField":
        v = np.zeros((field.num_labels,) + field.spec.shape)
        for j, c in per_label.items():
            v[int(j)] = c
        return cls(v, R)

    def validate(self, field: LabelField) -> None:
        """Check the discrete hypotheses: compact exterior forcing, H_j >= H_ext far out."""
        if self.values.shape != (field.num_labels,) + field.spec.shape:
            raise ForcingError("forcing shape does not match the label field")
        ext = self.values[-1]
        if np.any(ext[field.spec.frame_mask()] != 0.0):
            raise ForcingError("exterior forcing must vanish on the outer frame")
        X, Y = field.spec.centers()
        cx = 0.5 * field.spec.width * field.spec.h
        cy = 0.5 * field.spec.height * field.spec.h
        far = np.hypot(X - cx, Y - cy) > self.R
        for j in range(field.num_bounded):
            if np.any(self.values[j][far] < ext[far]):
                raise ForcingError(f"phase {j} forcing drops below the exterior forcing outside B_R")


@dataclass(frozen=True)
class EnergyBreakdown:
    perimeter: float
    transport: float
    forcing: float
    lam: float

    @property
    def total(self) -> float:
        return self.perimeter + 0.5 * self.lam * self.transport + self.forcing

    def as_dict(self) -> dict:
        return {
            "perimeter": self.perimeter,
            "transport": self.transport,
            "forcing": self.forcing,
            "lambda": self.lam,
            "total": self.total,
        }


@dataclass(frozen=True, eq=False)
class UnaryCosts:
    """Label costs ``costs[j, i, k]`` plus the dropped constant ``c0``.

    For any candidate ``B``: ``sum_x costs[B(x), x] + c0 == (lam/2) sigma(B, A) + forcing(B)``.
    Entries ``>= sentinel`` mark forbidden labels. They are stored at twice the
    sentinel so that any labeling using one totals at least ``sentinel``.
    """

    costs: np.ndarray
    c0: float
    lam: float
    sentinel: float
    forcing: Optional[ForcingField] = None
    reference: Optional[LabelField] = None

    @property
    def num_labels(self) -> int:
        return self.costs.shape[0]

    def allowed(self) -> np.ndarray:
        return self.costs < self.sentinel

    def total(self, labels: np.ndarray) -> float:
        picked = np.take_along_axis(self.costs, labels[None].astype(np.intp), axis=0)[0]
        return float(picked.sum())


def _check_pair(b: LabelField, a: LabelField) -> None:
    if a.spec != b.spec or a.num_bounded != b.num_bounded:
        raise ShapeMismatch("fields must share grid and phase count")


def sigma(b: LabelField, a: LabelField) -> float:
    """Nonsymmetric distance of ``b`` from the reference ``a`` (midpoint quadrature)."""
    _check_pair(b, a)
    total = 0.0
    h = a.spec.h
    for j in range(a.num_labels):
        ma, mb = a.labels == j, b.labels == j
        diff = ma != mb
        if not diff.any():
            continue
        if not ma.any() or ma.all():
            raise InfiniteSigma(f"phase {j} of the reference has no boundary but changes")
        d = np.abs(_signed_distance_mask(ma, h))
        total += float(d[diff].sum())
    return total * a.spec.cell_area


def forcing_energy(b: LabelField, H: Optional[ForcingField]) -> float:
    if H is None:
        return 0.0
    if H.values.shape != (b.num_labels,) + b.spec.shape:
        raise ForcingError("forcing shape does not match the label field")
    picked = np.take_along_axis(H.values, b.labels[None].astype(np.intp), axis=0)[0]
    return float(picked.sum()) * b.spec.cell_area


def evaluate_F(b: LabelField, a: LabelField, lam: float, nb: Neighborhood) -> EnergyBreakdown:
    return evaluate_FH(b, a, lam, None, nb)


def evaluate_FH(
    b: LabelField, a: LabelField, lam: float, H: Optional[ForcingField], nb: Neighborhood
) -> EnergyBreakdown:
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    return EnergyBreakdown(
        perimeter=partition_perimeter(b, nb),
        transport=sigma(b, a),
        forcing=forcing_energy(b, H),
        lam=float(lam),
    )


def compile_unaries(a: LabelField, lam: float, H: Optional[ForcingField] = None) -> UnaryCosts:
    h2 = a.spec.cell_area
    L = a.num_labels
    costs = np.zeros((L,) + a.spec.shape)
    usable = np.ones(L, dtype=bool)
    c0 = 0.0
    for j in range(L):
        mask = a.labels == j
        if not mask.any():
            usable[j] = False
            continue
        if mask.all():
            # the only phase present; every other label is forbidden anyway
            continue
        sd = _signed_distance_mask(mask, a.spec.h)
        costs[j] = 0.5 * lam * h2 * sd
        c0 -= 0.5 * lam * h2 * float(sd[mask].sum())
    if H is not None:
        if H.values.shape != costs.shape:
            raise ForcingError("forcing shape does not match the label field")
        costs += h2 * H.values
    finite_max = float(np.abs(costs).max()) if costs.size else 0.0
    sentinel = SENTINEL_FACTOR * max(finite_max, 1.0)
    costs[~usable] = 2.0 * sentinel
    # bounded phases may not occupy the outer frame
    frame = a.spec.frame_mask()
    costs[: a.num_bounded, frame] = 2.0 * sentinel
    costs.flags.writeable = False
    return UnaryCosts(
        costs=costs, c0=c0, lam=float(lam), sentinel=sentinel, forcing=H, reference=a
    )


def potts_energy(labels: np.ndarray, costs: UnaryCosts, nb: Neighborhood) -> float:
    """Discrete objective ``sum_x u_{l(x)}(x) + sum_{pairs} w [l(p) != l(q)]``.

    Forbidden labels contribute ``inf``.
    """
    allowed = np.take_along_axis(costs.allowed(), labels[None].astype(np.intp), axis=0)[0]
    if not allowed.all():
        return math.inf
    e = costs.total(labels)
    for off, w in nb.half():
        sp, sq = pair_slices(labels.shape, off)
        e += w * np.count_nonzero(labels[sp] != labels[sq])
    return float(e)

