import numpy as np
import pytest

from percolab.errors import SeedViolationError
from percolab.lattice import Box
from percolab.perforate import (
    CASE_EMPTY,
    CASE_ONE4R,
    CASE_TWO,
    build,
    reconstruct_flatten_from_records,
    verify_structure,
)
from percolab.renorm import BadnessField, DensityPair, ScaleLadder, _cascade

ETA = DensityPair(0.55, 0.9)


def synthetic_badness(ladder, d0, i0, nmax):
    """BadnessField from given level-0 family bits, cascaded upward."""
    d0 = np.asarray(d0, dtype=bool)
    region = Box((0,) * d0.ndim, tuple(n * ladder.L0 for n in d0.shape))
    fld = BadnessField(ladder, ETA, region, [d0], [np.asarray(i0, dtype=bool)])
    for n in range(1, nmax + 1):
        fld.d_bad.append(_cascade(fld.d_bad[n - 1], ladder, n))
        fld.i_bad.append(_cascade(fld.i_bad[n - 1], ladder, n))
    return fld


def ladder12():
    return ScaleLadder(12, 1, 4, theta_sc=1, depth=2)


def all_good_field(ladder, K, s):
    n0 = K * ladder.L[s] // ladder.L0
    z = np.zeros((n0, n0), dtype=bool)
    return synthetic_badness(ladder, z, z, s)


def test_all_good_no_removals():
    lad = ladder12()
    fld = all_good_field(lad, K=2, s=1)
    p = build(fld, K=2, s=1, x_s=(0, 0))
    assert all(rec.case == CASE_EMPTY for rec in p.records)
    flat = p.flatten(0)
    assert flat.count == flat.mask.size  # nothing perforated
    rep = verify_structure(p)
    assert rep.all_pass


def test_case_two_boxes_fixture():
    lad = ladder12()  # l0 = 12, r0 = 1: removed boxes are 2x2 in L0 units
    d0 = np.zeros((12, 12), dtype=bool)
    i0 = np.zeros((12, 12), dtype=bool)
    d0[1, 1] = True
    i0[9, 9] = True  # |a - b|_inf = 8 > 2 r0
    fld = synthetic_badness(lad, d0, i0, 1)
    assert not fld.bad(1).any()  # no far same-family pair
    p = build(fld, K=1, s=1, x_s=(0, 0))
    (rec,) = [r for r in p.records if r.case != CASE_EMPTY]
    assert rec.case == CASE_TWO
    assert len(rec.boxes) == 2
    corners = sorted(b[0] for b in rec.boxes)
    # lex-min admissible covers: k = 0 covers index 1, k = 8 covers index 9
    assert corners == [(0, 0), (32, 32)]
    for corner, side in rec.boxes:
        assert side == 2 * lad.r[0] * lad.L[0]
    assert p.flatten(0).count == 144 - 2 * 4


def test_case_one_4r_box_fixture():
    lad = ladder12()
    d0 = np.zeros((12, 12), dtype=bool)
    i0 = np.zeros((12, 12), dtype=bool)
    d0[5, 5] = True
    i0[6, 6] = True  # covers at distance 1 <= 2 r0: case (c)
    fld = synthetic_badness(lad, d0, i0, 1)
    p = build(fld, K=1, s=1, x_s=(0, 0))
    (rec,) = [r for r in p.records if r.case != CASE_EMPTY]
    assert rec.case == CASE_ONE4R
    ((corner, side),) = rec.boxes
    assert side == 4 * lad.r[0] * lad.L[0]
    # covers a = (4,4), b = (5,5): lex-min 4-wide cover starts at unit 3
    assert corner == (12, 12)
    # decomposes into 2^d grid-aligned 2r-boxes (the only allowed removal shapes)
    quads = rec.as_2r_boxes(lad.r[0])
    assert len(quads) == 4
    assert p.flatten(0).count == 144 - 16


def test_flatten_nesting_and_volume():
    lad = ladder12()
    rng = np.random.default_rng(2)
    fld = random_good_frame_fixture(rng, lad, K=2, s=1, density=0.006)
    assert fld is not None
    p = build(fld, K=2, s=1, x_s=(0, 0))
    f0, f1 = p.flatten(0), p.flatten(1)
    assert not (f0.mask & ~f1.mask).any()  # flatten(0) within flatten(1)
    rep = verify_structure(p)
    assert rep.volume >= rep.volume_bound
    assert rep.all_pass


def test_seed_violation():
    lad = ladder12()
    d0 = np.zeros((12, 12), dtype=bool)
    d0[1, 1] = True
    d0[10, 10] = True  # far pair: the only level-1 vertex is 1-bad
    fld = synthetic_badness(lad, d0, np.zeros_like(d0), 1)
    assert fld.bad(1).any()
    with pytest.raises(SeedViolationError):
        build(fld, K=1, s=1, x_s=(0, 0))


def test_determinism_and_record_reconstruction():
    lad = ladder12()
    rng = np.random.default_rng(5)
    fld = random_good_frame_fixture(rng, lad, K=2, s=1, density=0.006)
    assert fld is not None
    p1 = build(fld, K=2, s=1, x_s=(0, 0))
    p2 = build(fld, K=2, s=1, x_s=(0, 0))
    assert all(np.array_equal(a, b) for a, b in zip(p1.levels, p2.levels))
    assert [r.boxes for r in p1.records] == [r.boxes for r in p2.records]
    assert np.array_equal(reconstruct_flatten_from_records(p1, 0), p1.flatten(0).mask)


def random_good_frame_fixture(rng, lad, K, s, density=0.003, tries=40):
    n0 = K * lad.L[s] // lad.L0
    for _ in range(tries):
        d0 = rng.random((n0, n0)) < density
        i0 = rng.random((n0, n0)) < density
        fld = synthetic_badness(lad, d0, i0, s)
        if not fld.bad(s).any():
            return fld
    return None


def test_randomized_admissible_choices_keep_structure():
    # structural guarantees must hold for any allowed (a, b, c) choice
    lad = ladder12()
    rng = np.random.default_rng(11)
    done = 0
    for _ in range(60):
        fld = random_good_frame_fixture(rng, lad, K=2, s=1)
        if fld is None:
            continue
        p = build(fld, 2, 1, (0, 0), rng=rng)
        rep = verify_structure(p)
        assert rep.all_pass
        done += 1
        if done >= 25:
            break
    assert done >= 25


def test_two_level_perforation():
    lad = ScaleLadder(9, 1, 2, theta_sc=1, depth=2)
    rng = np.random.default_rng(17)
    n0 = lad.L[2] // lad.L0  # K = 1 at s = 2
    for _ in range(60):
        d0 = rng.random((n0, n0)) < 2e-4
        i0 = rng.random((n0, n0)) < 2e-4
        fld = synthetic_badness(lad, d0, i0, 2)
        if not fld.bad(2).any():
            break
    else:
        pytest.fail("could not build an all-good level-2 frame")
    p = build(fld, 1, 2, (0, 0))
    rep = verify_structure(p)
    assert rep.all_pass
    f0, f1, f2 = p.flatten(0), p.flatten(1), p.flatten(2)
    assert not (f0.mask & ~f1.mask).any()
    assert not (f1.mask & ~f2.mask).any()
    assert f2.count == f2.mask.size


def test_corrupted_perforation_fails_connectivity():
    lad = ladder12()
    fld = all_good_field(lad, K=2, s=1)
    p = build(fld, 2, 1, (0, 0))
    p.levels[0][:, 10] = False  # hand-cut a full column: splits the lattice
    rep = verify_structure(p)
    assert not rep.connected
