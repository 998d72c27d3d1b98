"""The renormalization and audit machinery in three dimensions.

Most tests run in d = 2 for speed; these exercise the d-generic code paths
(separator labeling, pairwise unions, perforation blocks, subset audits) on
small d = 3 fixtures.
"""

import numpy as np

from percolab.isoperimetry import audit_mask, worst_ratio
from percolab.lattice import Box, SiteSet, Subgraph, diameter_filter
from percolab.perforate import build, verify_structure
from percolab.renorm import (
    BadnessField,
    DensityPair,
    ScaleLadder,
    _cascade,
    classify,
    event_D,
    event_I,
)
from percolab.samplers import ModelSpec, sample

ETA = DensityPair(0.5, 0.85)


def test_classify_matches_events_d3():
    lad = ScaleLadder(9, 1, 2, theta_sc=1, depth=1)
    region = Box((0, 0, 0), (12, 12, 12))
    for seed in (1, 2):
        g = sample(
            ModelSpec("bernoulli", 0.75), Box((-2, -2, -2), (16, 16, 16)), seed
        ).subgraph()
        fld = classify(g, lad, ETA, region, 0)
        sf = diameter_filter(g, lad.L0).bits
        for idx in np.ndindex(*fld.grid_shape(0)):
            x = fld.vertex_point(0, idx)
            assert fld.d_bad[0][idx] == event_D(x, lad.L0, g, ETA, s_filtered=sf), (seed, x)
            assert fld.i_bad[0][idx] == event_I(x, lad.L0, g, ETA, s_filtered=sf), (seed, x)


def test_perforation_structure_d3():
    lad = ScaleLadder(9, 1, 2, theta_sc=1, depth=1)
    rng = np.random.default_rng(7)
    region = Box((0, 0, 0), (lad.L[1],) * 3)
    n0 = lad.l0
    for _ in range(40):
        d0 = rng.random((n0, n0, n0)) < 0.003
        i0 = rng.random((n0, n0, n0)) < 0.003
        fld = BadnessField(lad, ETA, region, [d0], [i0])
        fld.d_bad.append(_cascade(d0, lad, 1))
        fld.i_bad.append(_cascade(i0, lad, 1))
        if fld.bad(1).any():
            continue
        p = build(fld, 1, 1, (0, 0, 0), rng=rng)
        rep = verify_structure(p)
        assert rep.connected and rep.volume_ok and rep.all_good
        if any(r.case != "empty" for r in p.records):
            break
    else:
        raise AssertionError("no fixture with an actual removal was found")


def test_audit_mask_d3():
    rng = np.random.default_rng(11)
    mask = np.ones((6, 6, 6), dtype=bool)
    mask[2:4, 2:4, 2:4] = False  # a hole
    reports = audit_mask(
        mask,
        ("halves", "balls", "random"),
        rng,
        gamma_ref=1e-9,
        holes=[((2, 2, 2), (2, 2, 2))],
        per_family=8,
    )
    assert reports
    assert worst_ratio(reports) > 0
    assert all(r.passed for r in reports)
