"""Discrete bounded partitions on a uniform 2D grid.

Cells are indexed ``[i, j]`` with ``i`` along x. The center of cell ``(i, j)``
sits at ``((i + 1/2) h, (j + 1/2) h)`` and every geometric quantity returned
here is in physical units. A field with ``num_bounded = N`` uses labels
``0..N-1`` for the bounded phases and label ``N`` for the unbounded exterior
phase, which must occupy the outermost one-cell frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "GridError",
    "LabelOutOfRange",
    "EmptyBoundary",
    "EmptyPhase",
    "AllExterior",
    "FewerThanTwoPhases",
    "ShapeMismatch",
    "GridSpec",
    "LabelField",
    "Neighborhood",
    "SignedField",
    "phase_perimeter",
    "partition_perimeter",
    "signed_distance",
    "symmetric_difference_volume",
    "hausdorff_distance",
    "convex_hull_mask",
    "min_pairwise_distance",
    "boundary_cells",
    "pair_slices",
]


class GridError(ValueError):
    """Base class for invalid grid-geometry requests."""


class LabelOutOfRange(GridError):
    pass


class EmptyBoundary(GridError):
    """The phase is empty or fills the whole grid, so it has no boundary."""


class EmptyPhase(GridError):
    pass


class AllExterior(GridError):
    pass


class FewerThanTwoPhases(GridError):
    pass


class ShapeMismatch(GridError):
    pass


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    h: float
    n: int = 2

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise GridError(f"grid must be at least 4x4, got {self.width}x{self.height}")
        if not self.h > 0:
            raise GridError(f"spacing must be positive, got {self.h}")
        if self.n != 2:
            raise GridError("only n = 2 is supported")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def diameter(self) -> float:
        return self.h * math.hypot(self.width, self.height)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical x and y coordinates of every cell center, each of shape ``(width, height)``."""
        x = (np.arange(self.width) + 0.5) * self.h
        y = (np.arange(self.height) + 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def frame_mask(self, rings: int = 1) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[:rings, :] = m[-rings:, :] = True
        m[:, :rings] = m[:, -rings:] = True
        return m


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LabelField:
    spec: GridSpec
    num_bounded: int
    labels: np.ndarray

    def __post_init__(self):
        if self.num_bounded < 1:
            raise GridError("num_bounded must be positive")
        lab = np.array(self.labels, dtype=np.int16, copy=True)
        if lab.shape != self.spec.shape:
            raise ShapeMismatch(f"labels shape {lab.shape} != grid shape {self.spec.shape}")
        if lab.min() < 0 or lab.max() > self.num_bounded:
            raise LabelOutOfRange(f"labels must lie in 0..{self.num_bounded}")
        if np.any(lab[self.spec.frame_mask()] != self.num_bounded):
            raise GridError("outer frame must carry the exterior label")
        object.__setattr__(self, "labels", _readonly(lab))

    @property
    def exterior(self) -> int:
        return self.num_bounded

    @property
    def num_labels(self) -> int:
        return self.num_bounded + 1

    @classmethod
    def empty(cls, spec: GridSpec, num_bounded: int = 1) -> "LabelField":
        return cls(spec, num_bounded, np.full(spec.shape, num_bounded, dtype=np.int16))

    def mask(self, label: int) -> np.ndarray:
        self._check_label(label)
        return self.labels == label

    def area(self, label: int) -> float:
        return float(np.count_nonzero(self.mask(label))) * self.spec.cell_area

    def bounded_mask(self) -> np.ndarray:
        return self.labels < self.num_bounded

    def is_extinct(self) -> bool:
        return not self.bounded_mask().any()

    def nonempty_bounded(self) -> list[int]:
        present = np.unique(self.labels)
        return [int(j) for j in present if j < self.num_bounded]

    def with_labels(self, labels: np.ndarray) -> "LabelField":
        return LabelField(self.spec, self.num_bounded, labels)

    def _check_label(self, label: int) -> None:
        if not 0 <= label <= self.num_bounded:
            raise LabelOutOfRange(f"label {label} outside 0..{self.num_bounded}")

    def __eq__(self, other):
        if not isinstance(other, LabelField):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.num_bounded == other.num_bounded
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


_HALF_OFFSETS = {
    4: [(1, 0), (0, 1)],
    8: [(1, 0), (0, 1), (1, 1), (1, -1)],
    16: [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (2, -1), (1, -2)],
}


@dataclass(frozen=True)
class Neighborhood:
    """Edge stencil with one length weight per offset.

    ``offsets`` holds every directed offset (both ``e`` and ``-e``). A phase
    is charged ``weights[k]`` for each of its cells ``p`` whose neighbor
    ``p + offsets[k]`` lies in the grid but outside the phase.
    """

    offsets: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    arity: int

    def __post_init__(self):
        if len(self.offsets) != len(self.weights) or len(self.offsets) != self.arity:
            raise GridError("offsets and weights must match the arity")
        table = dict(zip(self.offsets, self.weights))
        for (di, dj), w in table.items():
            if not w > 0:
                raise GridError("neighborhood weights must be positive")
            if table.get((-di, -dj)) != w:
                raise GridError("neighborhood must be symmetric under negation")

    @classmethod
    def crofton(cls, arity: int = 16, h: float = 1.0) -> "Neighborhood":
        """Cauchy-Crofton weights ``w_e = h * dphi_e / (2 |e|)`` (Boykov-Kolmogorov metrication)."""
        if arity not in _HALF_OFFSETS:
            raise GridError(f"arity must be one of {sorted(_HALF_OFFSETS)}")
        half = _HALF_OFFSETS[arity]
        offsets = half + [(-a, -b) for a, b in half]
        angles = np.array([math.atan2(b, a) % (2 * math.pi) for a, b in offsets])
        order = np.argsort(angles)
        sorted_angles = angles[order]
        gaps = np.diff(np.r_[sorted_angles, sorted_angles[0] + 2 * math.pi])
        dphi = np.empty(len(offsets))
        # each direction owns half the angular gap on either side
        dphi[order] = 0.5 * (gaps + np.roll(gaps, 1))
        weights = tuple(
            float(h * dphi[k] / (2.0 * math.hypot(*offsets[k]))) for k in range(len(offsets))
        )
        return cls(tuple(offsets), weights, arity)

    @classmethod
    def lattice4(cls, h: float = 1.0) -> "Neighborhood":
        """Plain 4-neighbor edge count: every crossed cell face costs ``h``."""
        half = _HALF_OFFSETS[4]
        offsets = half + [(-a, -b) for a, b in half]
        return cls(tuple(offsets), (float(h),) * 4, 4)

    def half(self) -> list[tuple[tuple[int, int], float]]:
        """One representative per ``{e, -e}`` pair, for undirected pair sums."""
        return [(o, w) for o, w in zip(self.offsets, self.weights) if o > (0, 0)]


def pair_slices(shape: tuple[int, int], offset: tuple[int, int]):
    """Slices ``(sp, sq)`` such that ``arr[sq]`` is ``arr[sp]`` shifted by ``offset``."""
    sp, sq = [], []
    for d, size in zip(offset, shape):
        if d >= 0:
            sp.append(slice(0, size - d))
            sq.append(slice(d, size))
        else:
            sp.append(slice(-d, size))
            sq.append(slice(0, size + d))
    return tuple(sp), tuple(sq)


def _mask_perimeter(mask: np.ndarray, nb: Neighborhood) -> float:
    total = 0.0
    for off, w in zip(nb.offsets, nb.weights):
        sp, sq = pair_slices(mask.shape, off)
        total += w * np.count_nonzero(mask[sp] & ~mask[sq])
    return total


def phase_perimeter(field: LabelField, label: int, nb: Neighborhood) -> float:
    return _mask_perimeter(field.mask(label), nb)


def partition_perimeter(field: LabelField, nb: Neighborhood) -> float:
    return 0.5 * sum(phase_perimeter(field, j, nb) for j in range(field.num_labels))


@dataclass(frozen=True, eq=False)
class SignedField:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.spec.shape:
            raise ShapeMismatch("values shape does not match grid")
        object.__setattr__(self, "values", _readonly(v))


def boundary_cells(mask: np.ndarray) -> np.ndarray:
    """Cells of ``mask`` with at least one 4-neighbor (inside the grid) outside it."""
    out = np.zeros_like(mask)
    for off in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        sp, sq = pair_slices(mask.shape, off)
        out[sp] |= mask[sp] & ~mask[sq]
    return out


def _edge_midpoint_sources(mask: np.ndarray) -> np.ndarray:
    """Boolean array on the half-cell lattice marking midpoints of boundary faces.

    Lattice node ``(a, b)`` sits at ``(a h/2, b h/2)``; cell ``(i, j)`` is node
    ``(2i+1, 2j+1)``.
    """
    W, H = mask.shape
    src = np.zeros((2 * W + 1, 2 * H + 1), dtype=bool)
    vert = mask[:-1, :] != mask[1:, :]  # face between (i, j) and (i+1, j)
    ii, jj = np.nonzero(vert)
    src[2 * ii + 2, 2 * jj + 1] = True
    horiz = mask[:, :-1] != mask[:, 1:]
    ii, jj = np.nonzero(horiz)
    src[2 * ii + 1, 2 * jj + 2] = True
    return src


def signed_distance(field: LabelField, label: int) -> SignedField:
    """Exact Euclidean distance from each cell center to the phase's boundary face midpoints.

    Negative inside the phase, positive outside.
    """
    mask = field.mask(label)
    if not mask.any() or mask.all():
        raise EmptyBoundary(f"phase {label} has empty boundary")
    return SignedField(field.spec, _signed_distance_mask(mask, field.spec.h))


def _signed_distance_mask(mask: np.ndarray, h: float) -> np.ndarray:
    src = _edge_midpoint_sources(mask)
    dist = ndimage.distance_transform_edt(~src, sampling=h / 2.0)
    d = dist[1::2, 1::2]
    return np.where(mask, -d, d)


def symmetric_difference_volume(a: LabelField, b: LabelField) -> float:
    if a.spec != b.spec or a.num_bounded != b.num_bounded:
        raise ShapeMismatch("fields must share grid and phase count")
    # a differing cell leaves one phase and enters another
    return 2.0 * a.spec.cell_area * float(np.count_nonzero(a.labels != b.labels))


def _distance_to_set(mask: np.ndarray, h: float) -> np.ndarray:
    """Distance from every cell center to the nearest center in ``mask``."""
    return ndimage.distance_transform_edt(~mask, sampling=h)


def hausdorff_distance(a: LabelField, b: LabelField, label: int) -> float:
    if a.spec != b.spec:
        raise ShapeMismatch("fields must share the grid")
    ma, mb = a.mask(label), b.mask(label)
    if not ma.any() or not mb.any():
        raise EmptyPhase(f"phase {label} is empty in one of the fields")
    h = a.spec.h
    return float(max(_distance_to_set(mb, h)[ma].max(), _distance_to_set(ma, h)[mb].max()))


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull_vertices(points: np.ndarray) -> list[tuple[int, int]]:
    """Monotone-chain hull of integer points, counter-clockwise, collinear points dropped."""
    pts = sorted(set(map(tuple, points.tolist())))
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _points_in_hull(verts: list[tuple[int, int]], shape: tuple[int, int]) -> np.ndarray:
    inside = np.zeros(shape, dtype=bool)
    vs = np.array(verts, dtype=np.int64)
    lo, hi = vs.min(axis=0), vs.max(axis=0)
    gi, gj = np.meshgrid(
        np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij"
    )
    ok = np.ones(gi.shape, dtype=bool)
    if len(verts) == 1:
        pass
    elif len(verts) == 2:
        (x0, y0), (x1, y1) = verts
        ok &= (x1 - x0) * (gj - y0) - (y1 - y0) * (gi - x0) == 0
    else:
        for k in range(len(verts)):
            (x0, y0), (x1, y1) = verts[k], verts[(k + 1) % len(verts)]
            ok &= (x1 - x0) * (gj - y0) - (y1 - y0) * (gi - x0) >= 0
    inside[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1] = ok
    return inside


def convex_hull_mask(field: LabelField) -> np.ndarray:
    """Cells whose centers lie in the closed convex hull of all bounded cells, dilated by one cell."""
    pts = np.argwhere(field.bounded_mask())
    if len(pts) == 0:
        raise AllExterior("no bounded phase is present")
    inside = _points_in_hull(_hull_vertices(pts), field.spec.shape)
    return ndimage.binary_dilation(inside, structure=np.ones((3, 3), dtype=bool))


def min_pairwise_distance(field: LabelField) -> float:
    present = field.nonempty_bounded()
    if len(present) < 2:
        raise FewerThanTwoPhases("need at least two nonempty bounded phases")
    h = field.spec.h
    best = math.inf
    for a_idx, i in enumerate(present[:-1]):
        di = _distance_to_set(field.labels == i, h)
        for j in present[a_idx + 1 :]:
            best = min(best, float(di[field.labels == j].min()))
    return best
