"""Largest clusters in boxes, their local extensions, the local-uniqueness
event, chemical distance, and volume growth diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InternalConsistencyError, PreconditionError
from .isoperimetry import gamma_extended_cluster
from .lattice import (
    Box,
    Subgraph,
    bfs_distances,
    boundary_count,
    diameter_filter,
    label_mask,
)
from .renorm import BadnessField, DensityPair, ScaleLadder


@dataclass
class ClusterDecomposition:
    """Components of the r-filtered set inside an ambient box, largest marked."""

    g_box: Box
    q_box: Box
    r_filter: int
    labels: np.ndarray          # over q_box sides; 0 = not in the filtered set
    sizes: np.ndarray           # per component
    largest_label: int          # 0 when the decomposition is empty
    tie: bool

    @property
    def empty(self) -> bool:
        return self.largest_label == 0

    def largest_mask_local(self) -> np.ndarray:
        if self.empty:
            return np.zeros(self.labels.shape, dtype=bool)
        return self.labels == self.largest_label

    def largest_mask_global(self) -> np.ndarray:
        out = np.zeros(self.g_box.sides, dtype=bool)
        out[self.g_box.slice_of(self.q_box)] = self.largest_mask_local()
        return out

    @property
    def largest_size(self) -> int:
        return int(self.sizes[self.largest_label - 1]) if self.largest_label else 0


def largest_cluster(
    g: Subgraph,
    ladder: ScaleLadder,
    K: int,
    s_level: int,
    x,
    r: Optional[int] = None,
) -> ClusterDecomposition:
    """Largest connected component of S_r inside Q_{K,s}(x); ties broken by the
    lexicographically smallest member site. r defaults to L0."""
    x = tuple(int(c) for c in x)
    r = ladder.L0 if r is None else int(r)
    side = K * ladder.L[s_level]
    q = Box(x, (side,) * g.d)
    if not g.box.contains_box(q):
        raise PreconditionError("Q_{K,s}(x) must lie inside the domain")
    sf = diameter_filter(g, r).bits[g.box.slice_of(q)]
    labels, n = label_mask(sf)
    if n == 0:
        return ClusterDecomposition(g.box, q, r, labels, np.zeros(0, dtype=int), 0, False)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    top = int(sizes.max())
    cands = np.flatnonzero(sizes == top) + 1
    tie = len(cands) > 1
    if tie:
        flat = labels.ravel()
        first = np.flatnonzero(np.isin(flat, cands))[0]
        winner = int(flat[first])
    else:
        winner = int(cands[0])
    return ClusterDecomposition(g.box, q, r, labels, sizes, winner, tie)


@dataclass
class ExtendedCluster:
    """Core cluster plus everything locally connected to it within 2 L_s."""

    core: np.ndarray       # over g.box sides
    extension: np.ndarray
    L_s: int
    q_box: Box
    enlarged_box: Box

    @property
    def full(self) -> np.ndarray:
        return self.core | self.extension

    @property
    def size(self) -> int:
        return int(self.full.sum())


def extend_cluster(cd: ClusterDecomposition, g: Subgraph, L_s: int) -> ExtendedCluster:
    """Add every occupied y' connected inside S cap B(y, 2 L_s) to a core y.

    Single pass per the definition: the added sites are not themselves
    extension seeds.
    """
    d = g.d
    q = cd.q_box
    enlarged = Box(
        tuple(c - 2 * L_s for c in q.corner),
        tuple(s + 4 * L_s for s in q.sides),
    )
    if not g.box.contains_box(enlarged):
        raise PreconditionError("domain too small for the 2 L_s enlargement")
    core = cd.largest_mask_global()
    if not core.any():
        return ExtendedCluster(core, np.zeros_like(core), L_s, q, enlarged)

    from scipy import ndimage

    reach = ndimage.binary_dilation(core, iterations=2 * L_s) if 2 * L_s > 0 else core
    candidates = g.bits & ~core & reach
    extension = np.zeros_like(core)
    if candidates.any():
        # only core sites with a candidate in linf range can contribute
        near_cand = ndimage.binary_dilation(candidates, iterations=2 * L_s)
        frontier = np.argwhere(core & near_cand)
        shape = core.shape
        for y in frontier:
            lo = np.maximum(y - 2 * L_s, 0)
            hi = np.minimum(y + 2 * L_s + 1, shape)
            window = tuple(slice(a, b) for a, b in zip(lo, hi))
            sub = g.bits[window]
            labels, n = label_mask(sub)
            lab = labels[tuple(y - lo)]
            hit = labels == lab
            extension[window] |= hit & ~core[window]
    full = core | extension
    inner = np.zeros_like(core)
    inner[g.box.slice_of(enlarged)] = True
    if (full & ~inner).any():
        raise InternalConsistencyError("extension left the enlarged box")
    return ExtendedCluster(core, extension, L_s, q, enlarged)


# ---------------------------------------------------------------------------
# the local-uniqueness event
# ---------------------------------------------------------------------------


@dataclass
class HResult:
    holds: bool
    witness: Optional[tuple] = None  # offending vertex or pair
    reason: str = ""


def event_H(
    g: Subgraph,
    badness: BadnessField,
    K: int,
    s_level: int,
    x_s,
    eta: DensityPair,
) -> HResult:
    """(a) every level-s vertex of the enlarged frame is s-good, and (b) any
    two sites of S_{L_s} in Q_{K,s}(x_s) within linf distance L_s are connected
    in S restricted to the 2 L_s ball around the first."""
    lad = badness.ladder
    L_s = lad.L[s_level]
    x_s = tuple(int(c) for c in x_s)
    d = g.d

    frame_corner = tuple(c - 2 * L_s for c in x_s)
    frame_shape = (K + 4,) * d
    try:
        base = badness.vertex_index(s_level, frame_corner)
    except PreconditionError as exc:
        raise PreconditionError(f"enlarged region not covered by badness: {exc}")
    for b, n, gshape in zip(base, frame_shape, badness.grid_shape(s_level)):
        if b + n > gshape:
            raise PreconditionError("enlarged region not covered by badness")
    sl = tuple(slice(b, b + n) for b, n in zip(base, frame_shape))
    bad = badness.bad(s_level)[sl]
    if bad.any():
        idx = tuple(np.argwhere(bad)[0])
        vertex = tuple(c + int(i) * L_s for c, i in zip(frame_corner, idx))
        return HResult(False, witness=vertex, reason="s-bad vertex in the frame")

    q = Box(x_s, (K * L_s,) * d)
    enlarged = Box(
        tuple(c - 2 * L_s for c in x_s), tuple(s + 4 * L_s for s in q.sides)
    )
    if not g.box.contains_box(enlarged):
        raise PreconditionError("domain too small for the connectivity windows")
    sf = diameter_filter(g, L_s).bits
    in_q = np.zeros_like(sf)
    in_q[g.box.slice_of(q)] = True
    members = sf & in_q
    pts = np.argwhere(members)
    shape = g.bits.shape
    for p in pts:
        lo = np.maximum(p - 2 * L_s, 0)
        hi = np.minimum(p + 2 * L_s + 1, shape)
        window = tuple(slice(a, b) for a, b in zip(lo, hi))
        labels, _ = label_mask(g.bits[window])
        lab_p = labels[tuple(p - lo)]
        plo = np.maximum(p - L_s, lo)
        phi = np.minimum(p + L_s + 1, hi)
        near = tuple(slice(a, b) for a, b in zip(plo, phi))
        near_members = members[near]
        near_labels = labels[tuple(slice(a - l, b - l) for a, b, l in zip(plo, phi, lo))]
        miss = near_members & (near_labels != lab_p)
        if miss.any():
            q_off = np.argwhere(miss)[0]
            p_abs = tuple(int(a + c) for a, c in zip(p, g.box.corner))
            o_abs = tuple(int(a + b + c) for a, b, c in zip(plo, q_off, g.box.corner))
            return HResult(
                False,
                witness=(p_abs, o_abs),
                reason="near pair not locally connected",
            )
    return HResult(True)


# ---------------------------------------------------------------------------
# chemical distance and volume growth
# ---------------------------------------------------------------------------


@dataclass
class ChemDistReport:
    max_ratio: float
    pairs: int
    failures: int              # disconnected pairs (infinite distance)
    shell_max: dict = field(default_factory=dict)  # dyadic linf shell -> max ratio

    @property
    def empirical_constant(self) -> float:
        return self.max_ratio


def chemical_distance_check(
    ec: ExtendedCluster,
    g: Subgraph,
    ladder: ScaleLadder,
    s_level: int,
    n_pairs: int = 1000,
    n_sources: int = 24,
    rng: Optional[np.random.Generator] = None,
) -> ChemDistReport:
    """Stratified max of d_S(y, y') / max(|y - y'|_inf, L_s^d) over core pairs.

    Pairs are sampled in dyadic linf shells so short pairs do not dominate.
    Caller attests the local-uniqueness event for the configuration.
    """
    rng = rng or np.random.default_rng(0)
    d = g.d
    L_s = ladder.L[s_level]
    floor = L_s**d
    core_pts = np.argwhere(ec.core)
    if len(core_pts) == 0:
        raise PreconditionError("empty core")
    n_sources = min(n_sources, len(core_pts))
    sources = core_pts[rng.choice(len(core_pts), size=n_sources, replace=False)]
    per_source = max(1, n_pairs // n_sources)

    max_ratio = 0.0
    shell_max: dict = {}
    pairs = failures = 0
    for src in sources:
        src_mask = np.zeros_like(g.bits)
        src_mask[tuple(src)] = True
        dist = bfs_distances(g.bits, src_mask)
        linf_d = np.abs(core_pts - src).max(axis=1)
        shells = np.floor(np.log2(np.maximum(linf_d, 1))).astype(int)
        chosen: list = []
        for sh in np.unique(shells):
            members = np.flatnonzero((shells == sh) & (linf_d > 0))
            if len(members) == 0:
                continue
            take = min(len(members), max(1, per_source // max(1, len(np.unique(shells)))))
            chosen.extend(rng.choice(members, size=take, replace=False))
        for i in chosen:
            target = core_pts[i]
            ds = int(dist[tuple(target)])
            pairs += 1
            if ds < 0:
                failures += 1
                continue
            denom = max(int(linf_d[i]), floor)
            ratio = ds / denom
            max_ratio = max(max_ratio, ratio)
            sh = int(np.floor(np.log2(max(int(linf_d[i]), 1))))
            shell_max[sh] = max(shell_max.get(sh, 0.0), ratio)
    return ChemDistReport(max_ratio, pairs, failures, shell_max)


@dataclass
class VolumeGrowthReport:
    min_constant: float        # min mu(B_S(y, r)) / r^d over admissible (y, r)
    table: list                # (y, r, mu, mu/r^d)
    excluded: list             # radii outside [L_s^d, K L_s]


def volume_growth_check(
    ec: ExtendedCluster,
    g: Subgraph,
    ladder: ScaleLadder,
    s_level: int,
    K: int,
    radii: Sequence[int],
    n_samples: int = 12,
    rng: Optional[np.random.Generator] = None,
) -> VolumeGrowthReport:
    """Empirical volume-growth constant over core centers and admissible radii."""
    rng = rng or np.random.default_rng(0)
    d = g.d
    L_s = ladder.L[s_level]
    lo, hi = L_s**d, K * L_s
    admissible = [r for r in radii if lo <= r <= hi]
    excluded = [r for r in radii if not lo <= r <= hi]
    core_pts = np.argwhere(ec.core)
    take = min(n_samples, len(core_pts))
    centers = core_pts[rng.choice(len(core_pts), size=take, replace=False)]
    table = []
    best = math.inf
    for y in centers:
        src = np.zeros_like(g.bits)
        src[tuple(y)] = True
        dist = bfs_distances(g.bits, src, max_depth=max(admissible, default=0))
        for r in admissible:
            ball = (dist >= 0) & (dist <= r)
            mu = float(g.degrees[ball].sum())
            c = mu / r**d
            table.append((tuple(int(v) for v in y), r, mu, c))
            best = min(best, c)
    return VolumeGrowthReport(best, table, excluded)


# ---------------------------------------------------------------------------
# isoperimetry of the extended cluster
# ---------------------------------------------------------------------------


@dataclass
class ExtIsoReport:
    family: str
    size: int
    boundary: int
    bound: float
    passed: bool


def extended_isop_audit(
    ec: ExtendedCluster,
    eta: DensityPair,
    ladder: ScaleLadder,
    s_level: int,
    K: int,
    epsilon: Optional[float] = None,
    families: Sequence[str] = ("balls", "halves", "random"),
    rng: Optional[np.random.Generator] = None,
    per_family: int = 16,
) -> list:
    """Audit subsets of the extended cluster against the epsilon-weighted
    boundary bound |dA| >= gamma |A|^{(d-1)/d + eps} ((K+4) L_s)^{-eps d}."""
    from .isoperimetry import generate_subsets

    d = ec.core.ndim
    eps = 1.0 / d if epsilon is None else float(epsilon)
    if not 0.0 < eps <= 1.0 / d:
        raise PreconditionError("epsilon must lie in (0, 1/d]")
    L_s = ladder.L[s_level]
    gamma = gamma_extended_cluster(d, eta, ladder.L0)
    scale = ((K + 4) * L_s) ** (-eps * d)
    mask = ec.full
    half = int(mask.sum()) // 2
    rng = rng or np.random.default_rng(0)
    out = []
    for family, a in generate_subsets(mask, families, rng, half, per_family=per_family):
        size = int(a.sum())
        bnd = boundary_count(a, mask)
        bound = gamma * size ** ((d - 1.0) / d + eps) * scale
        out.append(ExtIsoReport(family, size, bnd, bound, bnd >= bound))
    return out


def locally_connected_in_extension(
    ec: ExtendedCluster, g: Subgraph, rng: np.random.Generator, n_pairs: int = 64
) -> bool:
    """Spot-check: sampled pairs of extended-cluster sites within linf L_s are
    connected inside the extended cluster within the 15 L_s ball of the first."""
    full = ec.full
    pts = np.argwhere(full)
    if len(pts) < 2:
        return True
    L_s = ec.L_s
    shape = full.shape
    for _ in range(n_pairs):
        p = pts[rng.integers(len(pts))]
        near = pts[np.abs(pts - p).max(axis=1) <= L_s]
        q = near[rng.integers(len(near))]
        lo = np.maximum(p - 15 * L_s, 0)
        hi = np.minimum(p + 15 * L_s + 1, shape)
        window = tuple(slice(a, b) for a, b in zip(lo, hi))
        labels, _ = label_mask(full[window])
        if labels[tuple(p - lo)] != labels[tuple(q - lo)]:
            return False
    return True
