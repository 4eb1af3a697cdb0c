import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atwflow.grid import (
    AllExterior,
    EmptyBoundary,
    EmptyPhase,
    FewerThanTwoPhases,
    GridError,
    GridSpec,
    LabelField,
    LabelOutOfRange,
    Neighborhood,
    ShapeMismatch,
    boundary_cells,
    convex_hull_mask,
    hausdorff_distance,
    min_pairwise_distance,
    pair_slices,
    partition_perimeter,
    phase_perimeter,
    signed_distance,
    symmetric_difference_volume,
)
from conftest import disk_field, random_field


def field_from(labels, num_bounded, h=1.0):
    labels = np.asarray(labels)
    return LabelField(GridSpec(*labels.shape, h), num_bounded, labels)


def blank(width, height, num_bounded, h=1.0):
    return np.full((width, height), num_bounded)


# ---- oracles ---------------------------------------------------------------


def brute_perimeter(labels, label, nb):
    """Enumerate every (cell, offset) edge crossing out of the phase."""
    W, H = labels.shape
    total = 0.0
    for i in range(W):
        for j in range(H):
            if labels[i, j] != label:
                continue
            for (di, dj), w in zip(nb.offsets, nb.weights):
                a, b = i + di, j + dj
                if 0 <= a < W and 0 <= b < H and labels[a, b] != label:
                    total += w
    return total


def brute_signed_distance(mask, h):
    W, H = mask.shape
    mids = []
    for i in range(W):
        for j in range(H):
            if i + 1 < W and mask[i, j] != mask[i + 1, j]:
                mids.append(((i + 1) * h, (j + 0.5) * h))
            if j + 1 < H and mask[i, j] != mask[i, j + 1]:
                mids.append(((i + 0.5) * h, (j + 1) * h))
    mids = np.array(mids)
    out = np.empty((W, H))
    for i in range(W):
        for j in range(H):
            c = np.array([(i + 0.5) * h, (j + 0.5) * h])
            d = np.sqrt(((mids - c) ** 2).sum(1)).min()
            out[i, j] = -d if mask[i, j] else d
    return out


def brute_hausdorff(ma, mb, h):
    pa, pb = np.argwhere(ma) * h, np.argwhere(mb) * h
    d = np.sqrt(((pa[:, None] - pb[None]) ** 2).sum(-1))
    return max(d.min(1).max(), d.min(0).max())


def brute_hull_mask(mask):
    """Cell c is in the hull iff it is a convex combination of three bounded cells (Caratheodory)."""
    pts = [tuple(p) for p in np.argwhere(mask)]
    W, H = mask.shape
    inside = np.zeros_like(mask)

    def in_tri(p, a, b, c):
        def cr(o, u, v):
            return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

        d1, d2, d3 = cr(a, b, p), cr(b, c, p), cr(c, a, p)
        neg = d1 < 0 or d2 < 0 or d3 < 0
        pos = d1 > 0 or d2 > 0 or d3 > 0
        if neg and pos:
            return False
        if d1 == d2 == d3 == 0:
            # degenerate triangle: test segment membership
            xs = [a[0], b[0], c[0]]
            ys = [a[1], b[1], c[1]]
            return min(xs) <= p[0] <= max(xs) and min(ys) <= p[1] <= max(ys)
        return True

    for i in range(W):
        for j in range(H):
            p = (i, j)
            if any(in_tri(p, a, b, c) for a, b, c in itertools.combinations_with_replacement(pts, 3)):
                inside[i, j] = True
    out = np.zeros_like(mask)
    for i, j in np.argwhere(inside):
        out[max(i - 1, 0) : i + 2, max(j - 1, 0) : j + 2] = True
    return out


# ---- types -------------------------------------------------------------------


def test_frame_must_be_exterior():
    lab = blank(5, 5, 1)
    lab[0, 2] = 0
    with pytest.raises(GridError):
        field_from(lab, 1)


def test_labels_out_of_range():
    lab = blank(5, 5, 1)
    lab[2, 2] = 3
    with pytest.raises(LabelOutOfRange):
        field_from(lab, 1)
    with pytest.raises(LabelOutOfRange):
        phase_perimeter(field_from(blank(5, 5, 1), 1), 2, Neighborhood.lattice4())


def test_label_field_is_immutable():
    f = field_from(blank(5, 5, 1), 1)
    with pytest.raises(ValueError):
        f.labels[2, 2] = 0


@pytest.mark.parametrize("arity", [4, 8, 16])
def test_neighborhood_symmetric_positive(arity):
    nb = Neighborhood.crofton(arity, 0.5)
    table = dict(zip(nb.offsets, nb.weights))
    assert len(table) == arity
    for (a, b), w in table.items():
        assert w > 0 and table[(-a, -b)] == w


def test_asymmetric_neighborhood_rejected():
    with pytest.raises(GridError):
        Neighborhood(((1, 0), (-1, 0)), (1.0, 2.0), 2)


@pytest.mark.parametrize("arity,tol", [(16, 0.01), (8, 0.09), (4, 0.09)])
def test_crofton_calibration_on_disk(arity, tol):
    f = disk_field(n=128, r=50.0, center=(64.0, 64.0), h=1.0)
    p = phase_perimeter(f, 0, Neighborhood.crofton(arity, 1.0))
    assert abs(p - 2 * math.pi * 50) <= tol * 2 * math.pi * 50


# ---- perimeter ---------------------------------------------------------------


def test_single_cell_perimeter():
    lab = blank(5, 5, 1)
    lab[2, 2] = 0
    assert phase_perimeter(field_from(lab, 1), 0, Neighborhood.lattice4(1.0)) == 4.0


def test_empty_phase_perimeter_zero():
    f = field_from(blank(5, 5, 1), 1)
    assert phase_perimeter(f, 0, Neighborhood.crofton(16)) == 0.0


def test_three_isolated_cells():
    lab = blank(9, 5, 3)
    lab[1, 2], lab[4, 2], lab[7, 2] = 0, 1, 2
    assert partition_perimeter(field_from(lab, 3), Neighborhood.lattice4(1.0)) == 12.0


def test_two_phase_partition_perimeter_equals_phase(rng):
    f = random_field(rng, 10, 9, 1)
    nb = Neighborhood.crofton(16)
    assert partition_perimeter(f, nb) == pytest.approx(phase_perimeter(f, 0, nb), rel=1e-12)


@pytest.mark.parametrize("arity", [4, 8, 16])
def test_partition_perimeter_matches_edge_enumeration(rng, arity):
    nb = Neighborhood.crofton(arity, 0.7)
    for _ in range(5):
        f = random_field(rng, 6, 6, 2, h=0.7)
        expect = 0.5 * sum(brute_perimeter(f.labels, j, nb) for j in range(3))
        assert partition_perimeter(f, nb) == pytest.approx(expect, rel=1e-12)


@given(st.integers(0, 10_000))
def test_perimeter_properties(seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng, 8, 7, 3)
    nb = Neighborhood.crofton(8)
    per = [phase_perimeter(f, j, nb) for j in range(4)]
    assert partition_perimeter(f, nb) >= 0.5 * max(per) - 1e-12
    # relabel symmetry: swapping labels j and k moves the perimeter along
    j, k = rng.choice(3, size=2, replace=False)
    lab = np.array(f.labels)
    swapped = np.where(lab == j, k, np.where(lab == k, j, lab))
    g = f.with_labels(swapped)
    assert phase_perimeter(g, k, nb) == pytest.approx(per[j], abs=1e-12)
    # complement symmetry on the whole grid
    m = f.labels == 0
    comp = 0.0
    for off, w in zip(nb.offsets, nb.weights):
        sp, sq = pair_slices(m.shape, off)
        comp += w * np.count_nonzero(~m[sp] & m[sq])
    assert comp == pytest.approx(per[0], abs=1e-12)


# ---- distances ----------------------------------------------------------------


def test_signed_distance_matches_brute_force(rng):
    for _ in range(4):
        f = random_field(rng, 9, 8, 1, h=0.5, p_exterior=0.5)
        if not (f.labels == 0).any():
            continue
        sd = signed_distance(f, 0).values
        assert np.allclose(sd, brute_signed_distance(f.labels == 0, 0.5), atol=1e-12)


def test_signed_distance_disk_center():
    f = disk_field(n=64, r=20.0, center=(32.0, 32.0), h=1.0)
    sd = signed_distance(f, 0).values
    assert abs(sd[31, 31] + 20.0) <= math.sqrt(2)
    assert abs(sd[32, 32] + 20.0) <= math.sqrt(2)


def test_signed_distance_half_plane():
    lab = blank(12, 10, 1)
    lab[1:6, 1:-1] = 0
    sd = signed_distance(field_from(lab, 1), 0).values
    assert abs(sd[6, 5] - 0.5) <= 1.0
    assert sd[6, 5] == pytest.approx(0.5)


@given(st.integers(0, 10_000))
def test_signed_distance_invariants(seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng, 9, 9, 1, h=0.25)
    m = f.labels == 0
    if not m.any():
        return
    sd = signed_distance(f, 0).values
    assert np.all((sd < 0) == m)
    assert np.all(np.abs(sd) <= f.spec.diameter)
    # boundary-adjacent cells sit within one cell diagonal
    for axis in (0, 1):
        d = np.diff(m.astype(int), axis=axis) != 0
        a = np.take(sd, np.arange(sd.shape[axis] - 1), axis=axis)[d]
        b = np.take(sd, np.arange(1, sd.shape[axis]), axis=axis)[d]
        assert np.all(np.abs(a) <= math.sqrt(2) * 0.25) and np.all(np.abs(b) <= math.sqrt(2) * 0.25)
        # sign flips exactly across boundary faces
        assert np.all(np.sign(a) != np.sign(b))


def test_signed_distance_empty_boundary():
    with pytest.raises(EmptyBoundary):
        signed_distance(field_from(blank(5, 5, 1), 1), 0)


def test_symmetric_difference_examples(rng):
    f = random_field(rng, 8, 8, 2)
    assert symmetric_difference_volume(f, f) == 0.0
    lab = np.array(f.labels)
    lab[3, 3] = (lab[3, 3] + 1) % 3
    assert symmetric_difference_volume(f, f.with_labels(lab)) == 2.0


def test_symmetric_difference_matches_per_phase_sum(rng):
    for _ in range(5):
        a = random_field(rng, 8, 8, 3, h=0.5)
        b = random_field(rng, 8, 8, 3, h=0.5)
        expect = sum(np.count_nonzero((a.labels == j) != (b.labels == j)) for j in range(4)) * 0.25
        assert symmetric_difference_volume(a, b) == pytest.approx(expect)


@given(st.integers(0, 10_000))
def test_symmetric_difference_is_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_field(rng, 7, 6, 2) for _ in range(3))
    dab = symmetric_difference_volume(a, b)
    assert dab >= 0 and dab == symmetric_difference_volume(b, a)
    assert symmetric_difference_volume(a, c) <= dab + symmetric_difference_volume(b, c) + 1e-12


def test_shape_mismatch():
    a = field_from(blank(5, 5, 1), 1)
    b = field_from(blank(6, 5, 1), 1)
    with pytest.raises(ShapeMismatch):
        symmetric_difference_volume(a, b)


def test_hausdorff_examples():
    lab_a, lab_b = blank(12, 12, 1), blank(12, 12, 1)
    lab_a[2, 2] = 0
    lab_b[5, 6] = 0
    a, b = field_from(lab_a, 1), field_from(lab_b, 1)
    assert hausdorff_distance(a, a, 0) == 0.0
    assert hausdorff_distance(a, b, 0) == 5.0
    with pytest.raises(EmptyPhase):
        hausdorff_distance(a, field_from(blank(12, 12, 1), 1), 0)


def test_hausdorff_dilated_disk():
    small = disk_field(n=64, r=12.0, center=(32.0, 32.0), h=1.0)
    for k in (1, 3):
        big = disk_field(n=64, r=12.0 + k, center=(32.0, 32.0), h=1.0)
        d = hausdorff_distance(small, big, 0)
        assert d == pytest.approx(brute_hausdorff(small.labels == 0, big.labels == 0, 1.0))
        assert abs(d - k) <= 1.0


@given(st.integers(0, 10_000), st.integers(-2, 2), st.integers(-2, 2))
def test_hausdorff_translation_invariant(seed, di, dj):
    rng = np.random.default_rng(seed)
    a, b = np.full((14, 14), 1), np.full((14, 14), 1)
    a[4:10, 4:10] = np.where(rng.random((6, 6)) < 0.6, 0, 1)
    b[4:10, 4:10] = np.where(rng.random((6, 6)) < 0.6, 0, 1)
    if not (a == 0).any() or not (b == 0).any():
        return
    d = hausdorff_distance(field_from(a, 1), field_from(b, 1), 0)
    ta, tb = np.roll(a, (di, dj), (0, 1)), np.roll(b, (di, dj), (0, 1))
    assert hausdorff_distance(field_from(ta, 1), field_from(tb, 1), 0) == pytest.approx(d)


# ---- hull and pairwise distance ---------------------------------------------------


def test_hull_single_and_pair():
    lab = blank(9, 9, 1)
    lab[4, 4] = 0
    m = convex_hull_mask(field_from(lab, 1))
    expect = np.zeros((9, 9), bool)
    expect[3:6, 3:6] = True
    assert np.array_equal(m, expect)
    lab[4, 6] = 0
    m = convex_hull_mask(field_from(lab, 1))
    expect[3:6, 3:8] = True
    assert np.array_equal(m, expect)


def test_hull_matches_brute_force(rng):
    for _ in range(6):
        lab = blank(12, 11, 1)
        cells = rng.choice(10 * 9, size=10, replace=False)
        for c in cells:
            lab[1 + c // 9, 1 + c % 9] = 0
        f = field_from(lab, 1)
        assert np.array_equal(convex_hull_mask(f), brute_hull_mask(lab == 0))


def test_hull_collinear_diagonal():
    lab = blank(10, 10, 1)
    lab[2, 2] = lab[4, 4] = lab[6, 6] = 0
    f = field_from(lab, 1)
    assert np.array_equal(convex_hull_mask(f), brute_hull_mask(lab == 0))


def test_hull_all_exterior():
    with pytest.raises(AllExterior):
        convex_hull_mask(field_from(blank(5, 5, 1), 1))


def test_min_pairwise_examples():
    lab = blank(12, 12, 2)
    lab[2, 2], lab[2, 9] = 0, 1
    assert min_pairwise_distance(field_from(lab, 2)) == 7.0
    lab[2, 3] = 1
    assert min_pairwise_distance(field_from(lab, 2)) == 1.0
    with pytest.raises(FewerThanTwoPhases):
        min_pairwise_distance(field_from(np.where(lab == 1, 2, lab), 2))


def test_min_pairwise_two_disks():
    spec = GridSpec(110, 60, 1.0)
    X, Y = spec.centers()
    lab = np.full(spec.shape, 2)
    lab[(X - 25) ** 2 + (Y - 30) ** 2 <= 400] = 0
    lab[(X - 85) ** 2 + (Y - 30) ** 2 <= 400] = 1
    f = LabelField(spec, 2, lab)
    d = min_pairwise_distance(f)
    pa = np.argwhere(boundary_cells(lab == 0)).astype(float)
    pb = np.argwhere(boundary_cells(lab == 1)).astype(float)
    brute = np.sqrt(((pa[:, None] - pb[None]) ** 2).sum(-1)).min()
    assert d == pytest.approx(brute)
    assert abs(d - 20.0) <= 2.0
