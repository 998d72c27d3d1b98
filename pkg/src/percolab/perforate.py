"""Recursive multiscale perforation of boxes.

Starting from the level-s vertices of an all-good frame Q_{K,s}(x_s), each
level-i box either keeps all its level-(i-1) vertices (no bad ones), or loses
two 2 r_{i-1} L_{i-1}-boxes covering the D-blob and the I-blob (when the two
covers are linf-far), or one 4 r_{i-1} L_{i-1}-box covering both (when they
are close). Removed boxes sit on the (r_{i-1} L_{i-1})-grid and fit inside the
level-i box, clipped toward the interior at faces.

The "choose arbitrarily" freedom in the cover placement is resolved
lexicographically for reproducibility; a Generator can be passed to draw any
admissible cover instead, which the structural tests exercise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError, PreconditionError, SeedViolationError
from .lattice import GridSet, label_mask
from .renorm import BadnessField

CASE_EMPTY = "empty"
CASE_TWO = "two-boxes"
CASE_ONE4R = "one-4r-box"


@dataclass
class RemovalRecord:
    """What was removed from one level-i box and why."""

    level: int            # i: the box is (owner + [0, L_i)^d)
    owner: tuple          # z_i, absolute site coordinates
    case: str
    boxes: list = field(default_factory=list)  # (corner, side) in absolute site coords

    def as_2r_boxes(self, r_side: int) -> list:
        """Decompose into grid-aligned boxes of side 2*r_side*L_{i-1}."""
        out = []
        for corner, side in self.boxes:
            if side == 2 * r_side:
                out.append((corner, side))
            else:  # the 4r box splits into 2^d quadrants of side 2r
                half = side // 2
                d = len(corner)
                for off in np.ndindex(*(2,) * d):
                    out.append(
                        (tuple(c + o * half for c, o in zip(corner, off)), half)
                    )
        return out


@dataclass
class Perforation:
    """Nested retained-vertex sets G_{K,s,i} with their removal records."""

    badness: Optional[BadnessField]
    K: int
    s: int
    x_s: tuple
    levels: list = field(default_factory=list)   # levels[i]: bool over the G_i grid of Q
    records: list = field(default_factory=list)
    ladder_obj: Optional[object] = None          # stands in when badness is absent

    @property
    def ladder(self):
        return self.badness.ladder if self.badness is not None else self.ladder_obj

    def grid_shape(self, i: int) -> tuple:
        side = self.K * self.ladder.L[self.s] // self.ladder.L[i]
        return (side,) * len(self.x_s)

    def vertex_point(self, i: int, idx) -> tuple:
        return tuple(c + int(j) * self.ladder.L[i] for c, j in zip(self.x_s, idx))

    def flatten(self, j: int) -> GridSet:
        """Q_{K,s,j}: the union of L_j-boxes over G_{K,s,j}, as G_0 vertices."""
        if not 0 <= j <= self.s:
            raise PreconditionError("level out of range")
        factor = self.ladder.L[j] // self.ladder.L0
        mask = self.levels[j]
        for ax in range(mask.ndim):
            mask = np.repeat(mask, factor, axis=ax)
        return GridSet(self.x_s, self.ladder.L0, mask)


def _cover_offset(lo, hi, width_units: int, r: int, l: int, rng) -> tuple:
    """Grid offset k*r (in L_{i-1} units) of a width*r-unit box covering
    [lo, hi] per axis and fitting in [0, l); lexicographically smallest, or a
    uniform admissible draw when rng is given."""
    ks = []
    for a in range(len(lo)):
        k_hi = (l - width_units * r) // r
        if lo[a] is None:  # empty blob: any admissible position
            k_min, k_max = 0, k_hi
        else:
            # smallest k with k r + width r > hi, largest with k r <= lo
            k_min = max(0, (hi[a] + 1 - width_units * r + r - 1) // r)
            k_max = min(lo[a] // r, k_hi)
        if k_min > k_max:
            raise InternalConsistencyError("no admissible cover position")
        ks.append(int(k_min) if rng is None else int(rng.integers(k_min, k_max + 1)))
    return tuple(k * r for k in ks)


def _blob_extent(mask_block: np.ndarray, r: int):
    pts = np.argwhere(mask_block)
    if len(pts) == 0:
        d = mask_block.ndim
        return [None] * d, [None] * d
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    if int((hi - lo).max()) >= r:
        raise InternalConsistencyError(
            "bad blob wider than r L (contradicts the owner's goodness)"
        )
    return list(lo), list(hi)


def build(
    badness: BadnessField,
    K: int,
    s: int,
    x_s,
    rng: Optional[np.random.Generator] = None,
) -> Perforation:
    """Perforate Q_{K,s}(x_s) using the classified badness field.

    Every vertex of G_s in the frame must be s-good (SeedViolationError
    otherwise). Pass rng to randomize the admissible cover choices.
    """
    lad = badness.ladder
    if s > badness.nmax:
        raise PreconditionError("badness field does not reach level s")
    x_s = tuple(int(c) for c in x_s)
    d = len(x_s)
    base = badness.vertex_index(s, x_s)
    shape_s = (K,) * d
    for i, g in zip(base, badness.grid_shape(s)):
        if i + K > g:
            raise PreconditionError("frame exceeds the classified region")

    frame_sl = tuple(slice(b, b + K) for b in base)
    if badness.bad(s)[frame_sl].any():
        raise SeedViolationError("frame contains an s-bad vertex")

    perf = Perforation(badness, int(K), int(s), x_s)
    perf.levels = [None] * (s + 1)
    perf.levels[s] = np.ones(shape_s, dtype=bool)

    for i in range(s, 0, -1):
        l_prev = lad.l[i - 1]
        r_prev = lad.r[i - 1]
        L_prev = lad.L[i - 1]
        cur = perf.levels[i]
        nxt = np.zeros(tuple(n * l_prev for n in cur.shape), dtype=bool)
        base_prev = badness.vertex_index(i - 1, x_s)
        d_arr = badness.d_bad[i - 1]
        i_arr = badness.i_bad[i - 1]
        for idx in np.argwhere(cur):
            z = perf.vertex_point(i, idx)
            blk = tuple(
                slice(b + int(j) * l_prev, b + (int(j) + 1) * l_prev)
                for b, j in zip(base_prev, idx)
            )
            d_lo, d_hi = _blob_extent(d_arr[blk], r_prev)
            i_lo, i_hi = _blob_extent(i_arr[blk], r_prev)
            out_sl = tuple(
                slice(int(j) * l_prev, (int(j) + 1) * l_prev) for j in idx
            )
            keep = np.ones((l_prev,) * d, dtype=bool)
            if d_lo[0] is None and i_lo[0] is None:
                perf.records.append(RemovalRecord(i, z, CASE_EMPTY))
            else:
                a = _cover_offset(d_lo, d_hi, 2, r_prev, l_prev, rng)
                b = _cover_offset(i_lo, i_hi, 2, r_prev, l_prev, rng)
                if max(abs(p - q) for p, q in zip(a, b)) > 2 * r_prev:
                    boxes = []
                    for off in (a, b):
                        sl = tuple(slice(o, o + 2 * r_prev) for o in off)
                        keep[sl] = False
                        boxes.append(
                            (
                                tuple(zc + o * L_prev for zc, o in zip(z, off)),
                                2 * r_prev * L_prev,
                            )
                        )
                    perf.records.append(RemovalRecord(i, z, CASE_TWO, boxes))
                else:
                    u_lo = [min(p, q) for p, q in zip(a, b)]
                    u_hi = [max(p, q) + 2 * r_prev - 1 for p, q in zip(a, b)]
                    c = _cover_offset(u_lo, u_hi, 4, r_prev, l_prev, rng)
                    sl = tuple(slice(o, o + 4 * r_prev) for o in c)
                    keep[sl] = False
                    perf.records.append(
                        RemovalRecord(
                            i,
                            z,
                            CASE_ONE4R,
                            [
                                (
                                    tuple(zc + o * L_prev for zc, o in zip(z, c)),
                                    4 * r_prev * L_prev,
                                )
                            ],
                        )
                    )
            nxt[out_sl] = keep
        perf.levels[i - 1] = nxt

    # by construction every retained level-(i-1) vertex is (i-1)-good; assert
    for i in range(s + 1):
        sl = tuple(
            slice(b, b + n)
            for b, n in zip(badness.vertex_index(i, x_s), perf.grid_shape(i))
        )
        if (perf.levels[i] & badness.bad(i)[sl]).any():
            raise InternalConsistencyError(f"level {i} retains a bad vertex")
    return perf


@dataclass
class StructureReport:
    connected: bool
    volume_ok: bool
    volume: int
    volume_bound: float
    all_good: Optional[bool]  # None when no badness field is attached

    @property
    def all_pass(self) -> bool:
        return self.connected and self.volume_ok and self.all_good is not False


def verify_structure(p: Perforation) -> StructureReport:
    """Connectivity, volume, and goodness of the fully perforated lattice."""
    flat = p.flatten(0)
    _, ncomp = label_mask(flat.mask)
    connected = ncomp == 1
    total = flat.mask.size
    bound = p.ladder.ratio_product(flat.mask.ndim) * total
    volume = flat.count
    if p.badness is not None:
        base0 = p.badness.vertex_index(0, p.x_s)
        sl = tuple(slice(b, b + n) for b, n in zip(base0, flat.mask.shape))
        all_good = bool(not (flat.mask & p.badness.bad(0)[sl]).any())
    else:
        all_good = None
    return StructureReport(connected, volume >= bound, volume, bound, all_good)


def perforation_to_text(p: Perforation) -> str:
    """Plain-text serialization: frame parameters plus the removal records
    (which determine every level exactly)."""
    lad = p.ladder
    lines = [
        "PERCOLAB-PERFORATION 1",
        f"d {len(p.x_s)}",
        f"K {p.K}",
        f"s {p.s}",
        "x_s " + " ".join(str(c) for c in p.x_s),
        f"ladder {lad.l0} {lad.r0} {lad.L0} {lad.theta_sc} {lad.depth}",
    ]
    for rec in p.records:
        boxes = ";".join(
            " ".join(str(c) for c in corner) + f" {side}" for corner, side in rec.boxes
        )
        owner = " ".join(str(c) for c in rec.owner)
        lines.append(f"record {rec.level} | {owner} | {rec.case} | {boxes}")
    return "\n".join(lines) + "\n"


def perforation_from_text(text: str) -> Perforation:
    from .renorm import ScaleLadder

    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("PERCOLAB-PERFORATION"):
        raise PreconditionError("not a perforation file")
    head = {}
    records = []
    for ln in lines[1:]:
        if ln.startswith("record "):
            _, rest = ln.split(" ", 1)
            level_s, owner_s, case, boxes_s = [p.strip() for p in rest.split("|")]
            boxes = []
            if boxes_s:
                for chunk in boxes_s.split(";"):
                    nums = [int(v) for v in chunk.split()]
                    boxes.append((tuple(nums[:-1]), nums[-1]))
            records.append(
                RemovalRecord(int(level_s), tuple(int(v) for v in owner_s.split()), case, boxes)
            )
        else:
            key, vals = ln.split(" ", 1)
            head[key] = vals
    d = int(head["d"])
    K = int(head["K"])
    s = int(head["s"])
    x_s = tuple(int(v) for v in head["x_s"].split())
    lad = ScaleLadder(*(int(v) for v in head["ladder"].split()))
    p = Perforation(None, K, s, x_s, records=records, ladder_obj=lad)
    p.levels = _levels_from_records(lad, K, s, x_s, records, d)
    return p


def _levels_from_records(lad, K, s, x_s, records, d) -> list:
    levels = [None] * (s + 1)
    levels[s] = np.ones((K,) * d, dtype=bool)
    for i in range(s, 0, -1):
        factor = lad.l[i - 1]
        L_prev = lad.L[i - 1]
        nxt = levels[i]
        for ax in range(d):
            nxt = np.repeat(nxt, factor, axis=ax)
        nxt = nxt.copy()
        for rec in records:
            if rec.level != i:
                continue
            for corner, side in rec.boxes:
                rel = tuple((c - xc) // L_prev for c, xc in zip(corner, x_s))
                sl = tuple(slice(r, r + side // L_prev) for r in rel)
                nxt[sl] = False
        levels[i - 1] = nxt
    return levels


def reconstruct_flatten_from_records(p: Perforation, j: int) -> np.ndarray:
    """flatten(j) rebuilt purely from the removal records (consistency oracle)."""
    lad = p.ladder
    d = len(p.x_s)
    mask = np.ones(p.grid_shape(p.s), dtype=bool)
    for i in range(p.s, j, -1):
        factor = lad.l[i - 1]
        for ax in range(d):
            mask = np.repeat(mask, factor, axis=ax)
        L_prev = lad.L[i - 1]
        for rec in p.records:
            if rec.level != i:
                continue
            for corner, side in rec.boxes:
                rel = tuple((c - xc) // L_prev for c, xc in zip(corner, p.x_s))
                sl = tuple(slice(r, r + side // L_prev) for r in rel)
                mask[sl] = False
    return mask
