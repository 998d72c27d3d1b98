"""Cascading renormalization events and good/bad classification.

Two local event families drive everything downstream:

* family D (decreasing): its base event at a rescaled vertex x says the
  density/connectivity pattern around x is BROKEN: some box adjacent to x
  lacks a connected component of the diameter-filtered set with at least
  eta1 * L0^d vertices, or such a component fails to connect to the center
  box's component inside the union of the two boxes.
* family I (increasing): the box at x is OVERFULL: the diameter-filtered set
  has strictly more than eta2 * L0^d vertices in it.

A vertex of the level-n lattice G_n = L_n Z^d is F-bad when two level-(n-1)
vertices in its box, linf-separated by at least r_{n-1} L_{n-1}, are both
F-bad; the families cascade separately and badness is their union.

The level-0 classifier is array-parallel: boxes are scattered into a
zero-separated canvas so one connected-component labeling covers every box
(and one per axis/parity covers every adjacent union of two boxes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import PreconditionError
from .lattice import Box, Subgraph, diameter_filter, label_mask
from .rng import spawn_seed
from .samplers import ModelSpec, sample


@dataclass(frozen=True)
class DensityPair:
    """Density thresholds (eta1, eta2) with 0 < eta1 < 1, eta1 <= eta2 < 2 eta1."""

    eta1: float
    eta2: float

    def __post_init__(self):
        if not (0.0 < self.eta1 < 1.0):
            raise PreconditionError("eta1 must lie in (0, 1)")
        if not (self.eta1 <= self.eta2 < 2.0 * self.eta1):
            raise PreconditionError("need eta1 <= eta2 < 2 eta1")


class ScaleLadder:
    """Scales l_n = l0 4^(n^theta), r_n = r0 2^(n^theta), L_n = l_{n-1} L_{n-1}.

    Construction enforces only the structural constraints (l0 > 8 r0 and
    r0 | l0, which propagate to every n). The numeric conditions required by
    individual guarantees are exposed as named compliance predicates instead of
    refusals: at desk scale they force astronomically large l0, so experiments
    run on non-compliant ladders with the flags recorded.
    """

    def __init__(self, l0: int, r0: int, L0: int, theta_sc: int = 1, depth: int = 2):
        l0, r0, L0, theta_sc, depth = int(l0), int(r0), int(L0), int(theta_sc), int(depth)
        if min(l0, r0, L0) < 1:
            raise PreconditionError("l0, r0, L0 must be positive")
        if theta_sc < 1:
            raise PreconditionError("theta_sc must be a positive integer")
        if l0 <= 8 * r0:
            raise PreconditionError("need l0 > 8 r0")
        if l0 % r0 != 0:
            raise PreconditionError("r0 must divide l0")
        self.l0, self.r0, self.L0, self.theta_sc, self.depth = l0, r0, L0, theta_sc, depth
        self.l = [l0 * 4 ** (n**theta_sc) for n in range(depth + 1)]
        self.r = [r0 * 2 ** (n**theta_sc) for n in range(depth + 1)]
        self.L = [L0]
        for n in range(1, depth + 1):
            self.L.append(self.l[n - 1] * self.L[n - 1])

    def __repr__(self):
        return (
            f"ScaleLadder(l0={self.l0}, r0={self.r0}, L0={self.L0}, "
            f"theta_sc={self.theta_sc}, depth={self.depth})"
        )

    def __eq__(self, other):
        return isinstance(other, ScaleLadder) and (
            (self.l0, self.r0, self.L0, self.theta_sc, self.depth)
            == (other.l0, other.r0, other.L0, other.theta_sc, other.depth)
        )

    def __hash__(self):
        return hash((self.l0, self.r0, self.L0, self.theta_sc, self.depth))

    # --- series over all n (not just materialized levels) ------------------

    def _ratio(self, n: int) -> float:
        # r_n / l_n = (r0/l0) 2^{-n^theta}; exact big-int fraction, then float
        return float(Fraction(self.r0, self.l0) / 2 ** (n**self.theta_sc))

    def ratio_sum(self) -> float:
        """sum_n r_n / l_n, summed to convergence (terms at least halve)."""
        total, n = 0.0, 0
        while True:
            t = self._ratio(n)
            total += t
            if t < 1e-22 or n > 400:
                return total + t  # tail <= last term
            n += 1

    def ratio_product(self, power: int) -> float:
        """prod_n (1 - (4 r_n / l_n)^power)."""
        logp, n = 0.0, 0
        while True:
            u = (4.0 * self._ratio(n)) ** power
            if u >= 1.0:
                return 0.0
            logp += math.log1p(-u)
            if u < 1e-22 or n > 400:
                return math.exp(logp)
            n += 1

    def chem_product(self) -> float:
        """prod_n (1 + 32 r_n / l_n)."""
        logp, n = 0.0, 0
        while True:
            u = 32.0 * self._ratio(n)
            logp += math.log1p(u)
            if u < 1e-22 or n > 400:
                return math.exp(logp)
            n += 1

    # --- named validity flags ----------------------------------------------

    def compliance(self, d: int, eta: Optional[DensityPair] = None) -> dict:
        s = self.ratio_sum()
        p2 = self.ratio_product(2)
        pd = self.ratio_product(d)
        out = {
            "sum_r_over_l": s,
            "product_2": p2,
            "product_d": pd,
            "isop_pl_sum": 3456.0 * s <= 1e-6,
            "isop_pl_product": p2
            >= max(
                15.0 / 16.0,
                math.exp(-1.0 / (16.0 * (d - 1))),
                (1.0 - 2.0 ** -(d + 2)) / (1.0 - 2.0 ** -(d + 3)),
            ),
            "chemdist_l_over_r": self.l0 > 16 * self.r0,
            "chemdist_product": self.chem_product() <= 2.0,
        }
        out["isop_pl"] = out["isop_pl_sum"] and out["isop_pl_product"]
        out["chemdist"] = out["chemdist_l_over_r"] and out["chemdist_product"]
        if eta is not None:
            out["uniqueness_ratio"] = pd > (1.0 + eta.eta2) / (1.0 + 2.0 * eta.eta1)
            out["isop_cemax_ratio"] = pd >= (1.0 + eta.eta2) / (
                1.0 + (eta.eta2 + 2.0 * eta.eta1) / 2.0
            )
        return out


# ---------------------------------------------------------------------------
# level-0 events, per-vertex form
# ---------------------------------------------------------------------------


def _box_slice(g_box: Box, corner, side: int):
    rel = g_box.rel(corner)
    return tuple(slice(r, r + side) for r in rel)


def _candidates(mask: np.ndarray, threshold: float):
    """Connected components of the mask with at least `threshold` sites."""
    labels, n = label_mask(mask)
    out = []
    if n:
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        for k in range(1, n + 1):
            if sizes[k] >= threshold:
                out.append(labels == k)
    return out


def event_I(x, L0: int, g: Subgraph, eta: DensityPair, s_filtered=None) -> bool:
    """Overfull box: |S_{L0} cap (x + [0, L0)^d)| > eta2 L0^d, strictly."""
    x = tuple(int(c) for c in x)
    box = Box(x, (L0,) * g.d)
    if not g.box.contains_box(box):
        raise PreconditionError("event box clipped by the domain")
    sf = diameter_filter(g, L0).bits if s_filtered is None else s_filtered
    count = int(sf[_box_slice(g.box, x, L0)].sum())
    return count > eta.eta2 * L0**g.d


def event_D(x, L0: int, g: Subgraph, eta: DensityPair, s_filtered=None) -> bool:
    """Density/connectivity failure around x (the decreasing family's event).

    True iff some box y in {x, x +- L0 e_i} lacks a component of S_{L0} with
    at least eta1 L0^d vertices, or no choice of such components connects each
    neighbor's to the center's inside S restricted to the union of the pair.
    """
    x = tuple(int(c) for c in x)
    d = g.d
    thresh = eta.eta1 * L0**d
    neighbors = [x]
    for ax in range(d):
        for sgn in (1, -1):
            y = list(x)
            y[ax] += sgn * L0
            neighbors.append(tuple(y))
    for y in neighbors:
        if not g.box.contains_box(Box(y, (L0,) * d)):
            raise PreconditionError("event boxes clipped by the domain")
    sf = diameter_filter(g, L0).bits if s_filtered is None else s_filtered

    cands = {}
    for y in neighbors:
        cands[y] = _candidates(sf[_box_slice(g.box, y, L0)], thresh)
        if not cands[y]:
            return True

    def connected(y, cy_mask, cx_mask) -> bool:
        lo = tuple(min(a, b) for a, b in zip(x, y))
        hi = tuple(max(a, b) + L0 for a, b in zip(x, y))
        rect = tuple(slice(*ab) for ab in zip(g.box.rel(lo), g.box.rel(hi)))
        labels, _ = label_mask(g.bits[rect])
        off_x = tuple(a - b for a, b in zip(x, lo))
        off_y = tuple(a - b for a, b in zip(y, lo))
        lx = labels[tuple(slice(o, o + L0) for o in off_x)]
        ly = labels[tuple(slice(o, o + L0) for o in off_y)]
        return labels.size > 0 and int(lx[cx_mask][0]) == int(ly[cy_mask][0])

    for cx in cands[x]:
        if all(any(connected(y, cy, cx) for cy in cands[y]) for y in neighbors[1:]):
            return False  # the good pattern exists; D-bar does not occur
    return True


# ---------------------------------------------------------------------------
# array-parallel level-0 classifier
# ---------------------------------------------------------------------------


def _insert_separators(a: np.ndarray, block: int, axes) -> np.ndarray:
    """Zero plane after every `block` entries along each listed axis."""
    for ax in axes:
        n = a.shape[ax]
        nb = n // block
        if nb * block != n:
            raise PreconditionError("separator block must divide the axis length")
        shape = a.shape[:ax] + (nb, block) + a.shape[ax + 1 :]
        b = a.reshape(shape)
        z = np.zeros(shape[: ax + 1] + (1,) + shape[ax + 2 :], dtype=a.dtype)
        b = np.concatenate([b, z], axis=ax + 1)
        a = b.reshape(a.shape[:ax] + (nb * (block + 1),) + a.shape[ax + 1 :])
    return a


def _sep_coords(coords: np.ndarray, block: int) -> np.ndarray:
    """Map original coordinates to separator-inserted coordinates."""
    return coords + coords // block


class _BoxwiseLabels:
    """Components of mask restricted to each L-box, one global label call."""

    def __init__(self, mask: np.ndarray, L: int):
        self.L = L
        sep = _insert_separators(mask, L, axes=range(mask.ndim))
        self.labels, self.n = label_mask(sep)
        flat = self.labels.ravel()
        nz = np.flatnonzero(flat)
        self.sizes = np.bincount(flat[nz], minlength=self.n + 1)
        first = np.full(self.n + 1, flat.size, dtype=np.int64)
        np.minimum.at(first, flat[nz], nz)
        rep_sep = np.stack(np.unravel_index(first[1:], self.labels.shape), axis=1)
        # invert the separator map: orig = sep - sep // (L + 1)
        self.rep = rep_sep - rep_sep // (L + 1)
        self.rep_box = self.rep // L  # box index per label (labels live in one box)

    def label_at(self, coords: np.ndarray) -> np.ndarray:
        c = _sep_coords(coords, self.L)
        return self.labels[tuple(c.T)] if c.ndim == 2 else self.labels[tuple(c)]


class _PairwiseLabels:
    """Components of the raw occupancy on each union of two L-boxes adjacent
    along `axis`, for pairs starting at the given parity."""

    def __init__(self, bits: np.ndarray, L: int, axis: int, parity: int):
        self.L, self.axis, self.parity = L, axis, parity
        d = bits.ndim
        start = parity * L
        n_boxes = bits.shape[axis] // L
        n_pairs = (n_boxes - parity) // 2
        self.n_pairs = n_pairs
        sl = [slice(None)] * d
        sl[axis] = slice(start, start + n_pairs * 2 * L)
        arr = bits[tuple(sl)]
        axes = [ax for ax in range(d) if ax != axis]
        arr = _insert_separators(arr, L, axes=axes)
        if n_pairs > 0:
            arr = _insert_separators(arr, 2 * L, axes=[axis])
        self.labels, _ = label_mask(arr) if arr.size else (np.zeros_like(arr, dtype=np.int32), 0)

    def label_at(self, coords: np.ndarray) -> np.ndarray:
        """coords: original site coordinates (n, d); caller guarantees they lie
        inside some pair window of this parity."""
        c = coords.copy()
        c[:, self.axis] -= self.parity * self.L
        for ax in range(coords.shape[1]):
            block = 2 * self.L if ax == self.axis else self.L
            c[:, ax] = _sep_coords(c[:, ax], block)
        return self.labels[tuple(c.T)]


@dataclass
class BadnessField:
    """Per-level, per-family badness bits over rescaled-lattice vertices.

    Level-n arrays cover G_n vertices x with (x + [0, L_n)^d) inside the
    region; entry [i] corresponds to the vertex region.corner + i * L_n.
    """

    ladder: ScaleLadder
    eta: DensityPair
    region: Box
    d_bad: list = field(default_factory=list)  # per level
    i_bad: list = field(default_factory=list)

    def bad(self, n: int) -> np.ndarray:
        return self.d_bad[n] | self.i_bad[n]

    @property
    def nmax(self) -> int:
        return len(self.d_bad) - 1

    def grid_shape(self, n: int) -> tuple:
        return tuple(s // self.ladder.L[n] for s in self.region.sides)

    def vertex_point(self, n: int, idx) -> tuple:
        return tuple(c + int(i) * self.ladder.L[n] for c, i in zip(self.region.corner, idx))

    def vertex_index(self, n: int, point) -> tuple:
        rel = self.region.rel(point)
        L = self.ladder.L[n]
        if any(r % L != 0 or r < 0 for r in rel):
            raise PreconditionError(f"{point} is not a level-{n} vertex of the region")
        return tuple(r // L for r in rel)

    def is_bad(self, n: int, point) -> bool:
        return bool(self.bad(n)[self.vertex_index(n, point)])


def classify(
    g: Subgraph,
    ladder: ScaleLadder,
    eta: DensityPair,
    region: Box,
    nmax: int,
) -> BadnessField:
    """Classify every rescaled vertex of the region up to level nmax.

    Preconditions: region sides divisible by L_nmax, region plus one L0
    collar inside the subgraph's box.
    """
    if nmax > ladder.depth:
        raise PreconditionError("nmax exceeds ladder depth")
    L0 = ladder.L0
    d = g.d
    if any(s % ladder.L[nmax] != 0 for s in region.sides):
        raise PreconditionError("region sides must be divisible by L_nmax")
    collar = Box(
        tuple(c - L0 for c in region.corner), tuple(s + 2 * L0 for s in region.sides)
    )
    if not g.box.contains_box(collar):
        raise PreconditionError("region plus one L0-collar must fit in the domain")

    d0, i0 = _classify_level0(g, ladder, eta, region)
    field_ = BadnessField(ladder, eta, region, [d0], [i0])
    for n in range(1, nmax + 1):
        field_.d_bad.append(_cascade(field_.d_bad[n - 1], ladder, n))
        field_.i_bad.append(_cascade(field_.i_bad[n - 1], ladder, n))
    return field_


def _classify_level0(g: Subgraph, ladder: ScaleLadder, eta: DensityPair, region: Box):
    L0, d = ladder.L0, g.d
    W = tuple(s // L0 for s in region.sides)
    thresh1 = eta.eta1 * L0**d
    thresh2 = eta.eta2 * L0**d

    sf_full = diameter_filter(g, L0).bits

    # extended window: region plus one L0 ring of boxes (neighbor data for D)
    ext = Box(tuple(c - L0 for c in region.corner), tuple(s + 2 * L0 for s in region.sides))
    sf = sf_full[g.box.slice_of(ext)]
    bits = g.bits[g.box.slice_of(ext)]
    Wext = tuple(w + 2 for w in W)

    # I: overfull boxes, region grid only
    counts = sf[tuple(slice(L0, L0 + s) for s in region.sides)].astype(np.int32)
    for ax in range(d):
        counts = counts.reshape(
            counts.shape[:ax] + (W[ax], L0) + counts.shape[ax + 1 :]
        ).sum(axis=ax + 1)
    i_bad = counts > thresh2

    # D: candidate components per box and adjacent-union connectivity
    boxw = _BoxwiseLabels(sf, L0)
    cand_label_ids = np.flatnonzero(boxw.sizes >= thresh1)
    cand_label_ids = cand_label_ids[cand_label_ids > 0]
    box_flat_shape = Wext
    n_cand = np.zeros(box_flat_shape, dtype=np.int32)
    rep_site = np.zeros(Wext + (d,), dtype=np.int64)
    if len(cand_label_ids):
        boxes = boxw.rep_box[cand_label_ids - 1]
        np.add.at(n_cand, tuple(boxes.T), 1)
        # for single-candidate boxes this rep is THE candidate's site
        rep_site[tuple(boxes.T)] = boxw.rep[cand_label_ids - 1]

    pairs = {
        (ax, par): _PairwiseLabels(bits, L0, ax, par) for ax in range(d) for par in (0, 1)
    }

    def pair_conn(ax: int) -> np.ndarray:
        """conn[b] for box pairs (b, b + e_ax), b over Wext minus last slab."""
        shape = list(Wext)
        shape[ax] -= 1
        conn = np.zeros(tuple(shape), dtype=bool)
        base = np.argwhere(np.ones(tuple(shape), dtype=bool))
        if len(base) == 0:
            return conn
        nbr = base.copy()
        nbr[:, ax] += 1
        single = (n_cand[tuple(base.T)] == 1) & (n_cand[tuple(nbr.T)] == 1)
        if not single.any():
            return conn
        b_sel = base[single]
        n_sel = nbr[single]
        for par in (0, 1):
            par_mask = b_sel[:, ax] % 2 == par
            if not par_mask.any():
                continue
            pl = pairs[(ax, par)]
            u1 = pl.label_at(rep_site[tuple(b_sel[par_mask].T)])
            u2 = pl.label_at(rep_site[tuple(n_sel[par_mask].T)])
            ok = (u1 > 0) & (u1 == u2)
            idx = np.flatnonzero(single)[par_mask]
            conn[tuple(base[idx].T)] = ok
        return conn

    conn_by_axis = [pair_conn(ax) for ax in range(d)]

    # good pattern at region vertex x (ext box index x+1): the center and all
    # 2d neighbor boxes hold a candidate each, all connected to the center's
    ok_box = n_cand >= 1
    center = tuple(slice(1, 1 + w) for w in W)
    good = ok_box[center].copy()
    for ax in range(d):
        lo = tuple(
            slice(0, W[a]) if a == ax else slice(1, 1 + W[a]) for a in range(d)
        )
        hi = tuple(
            slice(2, 2 + W[a]) if a == ax else slice(1, 1 + W[a]) for a in range(d)
        )
        good &= ok_box[lo] & ok_box[hi]
        # connection center<->lower neighbor: pair (x-1, x) along ax
        conn = conn_by_axis[ax]
        c_lo = tuple(
            slice(0, W[a]) if a == ax else slice(1, 1 + W[a]) for a in range(d)
        )
        c_hi = tuple(
            slice(1, 1 + W[a]) if a == ax else slice(1, 1 + W[a]) for a in range(d)
        )
        good &= conn[c_lo] & conn[c_hi]

    d_bad = ~good

    # exact fallback where any involved box holds several candidates: the
    # vectorized path assumed a unique choice
    multi = n_cand >= 2
    if multi.any():
        affected = multi[center].copy()
        for ax in range(d):
            lo = tuple(slice(0, W[a]) if a == ax else slice(1, 1 + W[a]) for a in range(d))
            hi = tuple(slice(2, 2 + W[a]) if a == ax else slice(1, 1 + W[a]) for a in range(d))
            affected |= multi[lo] | multi[hi]
        sf_g = sf_full
        for idx in np.argwhere(affected):
            x = tuple(c + int(i) * L0 for c, i in zip(region.corner, idx))
            d_bad[tuple(idx)] = event_D(x, L0, g, eta, s_filtered=sf_g)

    return d_bad, i_bad


def _cascade(prev: np.ndarray, ladder: ScaleLadder, n: int) -> np.ndarray:
    """Level-n badness from level-(n-1): a far pair of bad vertices in the box.

    The max pairwise linf distance of a point set is the largest coordinate
    range, so the condition is range >= r_{n-1} (in L_{n-1} units).
    """
    l_prev = ladder.l[n - 1]
    r_prev = ladder.r[n - 1]
    d = prev.ndim
    W = tuple(s // l_prev for s in prev.shape)
    out = np.zeros(W, dtype=bool)
    for idx in np.argwhere(np.ones(W, dtype=bool)):
        block = prev[tuple(slice(i * l_prev, (i + 1) * l_prev) for i in idx)]
        pts = np.argwhere(block)
        if len(pts) < 2:
            continue
        rng = pts.max(axis=0) - pts.min(axis=0)
        out[tuple(idx)] = bool((rng >= r_prev).any())
    return out


# ---------------------------------------------------------------------------
# Monte-Carlo estimate of P[origin is n-bad]
# ---------------------------------------------------------------------------


def save_badness(path, fld: BadnessField) -> None:
    """npz with one array per level/family plus a json header."""
    import json

    meta = {
        "ladder": [fld.ladder.l0, fld.ladder.r0, fld.ladder.L0, fld.ladder.theta_sc, fld.ladder.depth],
        "eta": [fld.eta.eta1, fld.eta.eta2],
        "region_corner": list(fld.region.corner),
        "region_sides": list(fld.region.sides),
        "nmax": fld.nmax,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for n in range(fld.nmax + 1):
        arrays[f"d_bad_{n}"] = fld.d_bad[n]
        arrays[f"i_bad_{n}"] = fld.i_bad[n]
    np.savez_compressed(path, **arrays)


def load_badness(path) -> BadnessField:
    import json

    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        ladder = ScaleLadder(*meta["ladder"])
        eta = DensityPair(*meta["eta"])
        region = Box(tuple(meta["region_corner"]), tuple(meta["region_sides"]))
        d_bad = [data[f"d_bad_{n}"].astype(bool) for n in range(meta["nmax"] + 1)]
        i_bad = [data[f"i_bad_{n}"].astype(bool) for n in range(meta["nmax"] + 1)]
    return BadnessField(ladder, eta, region, d_bad, i_bad)


@dataclass
class BadProbEstimate:
    level: int
    frequency: float
    half_width: float  # 1.96 sigma
    trials: int
    reference_bound: float  # 2 * 2^(-2^n)

    @property
    def within_reference_bound(self) -> bool:
        return self.frequency - self.half_width <= self.reference_bound


def estimate_bad_probability(
    model: ModelSpec,
    ladder: ScaleLadder,
    eta: DensityPair,
    n: int,
    trials: int,
    d: int = 2,
    seed: int = 0,
) -> BadProbEstimate:
    """Frequency of the origin vertex of G_n being n-bad over sampled configs."""
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    L0, Ln = ladder.L0, ladder.L[n]
    region = Box((0,) * d, (Ln,) * d)
    box = Box((-L0,) * d, (Ln + 2 * L0,) * d)
    hits = 0
    for t in range(trials):
        snap = sample(model, box, spawn_seed(seed, "badprob", n, t))
        fld = classify(snap.subgraph(), ladder, eta, region, n)
        if fld.bad(n)[(0,) * d]:
            hits += 1
    p = hits / trials
    hw = 1.96 * math.sqrt(max(p * (1 - p), 1e-12) / trials)
    return BadProbEstimate(n, p, hw, trials, 2.0 * 2.0 ** -(2**n))
