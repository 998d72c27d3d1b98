"""Certification of good / regular balls and very-good scans.

A ball is good when its volume grows like r^d and the weak Poincare
inequality holds; regular when, in addition, a local extension set carries a
d-dimensional isoperimetric inequality for its subsets (regular implies good).
Certification of the isoperimetric side is audit-based: adversarial subset
families plus exhaustive enumeration on tiny extensions, never a proof. The
certificate records what was checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .clusters import extend_cluster, largest_cluster
from .errors import PreconditionError
from .isoperimetry import generate_subsets, weak_poincare_constant
from .lattice import Box, Subgraph, bfs_distances, boundary_count, graph_ball
from .renorm import ScaleLadder
from .rng import spawn_seed
from .samplers import ModelSpec, sample


@dataclass
class ClusterContext:
    """Produces extension sets for balls: the locally extended largest cluster
    of a covering box, the construction behind the regularity certificates."""

    g: Subgraph
    ladder: ScaleLadder
    s_level: int = 0

    def extension_for_ball(self, y, r: int) -> Optional[np.ndarray]:
        L_s = self.ladder.L[self.s_level]
        k_prime = -((2 * r + 1) // -L_s) + 1  # min k with k L_s >= 2r+1, plus one
        y_s = tuple(int(math.floor((c - r) / L_s)) * L_s for c in y)
        q = Box(y_s, (k_prime * L_s,) * self.g.d)
        ball_box = Box(tuple(c - r for c in y), (2 * r + 1,) * self.g.d)
        if not q.contains_box(ball_box):
            k_prime += 1
            q = Box(y_s, (k_prime * L_s,) * self.g.d)
        cd = largest_cluster(self.g, self.ladder, k_prime, self.s_level, y_s)
        if cd.empty:
            return None
        ec = extend_cluster(cd, self.g, L_s)
        return ec.full


@dataclass
class BallCertificate:
    center: tuple
    radius: int
    mu_ball: float
    cv_margin: float               # mu(B) / (C_V r^d)
    extension_size: int            # 0 when unavailable
    containment_ok: bool           # B within C within B(x, C_W r)
    iso_constant_achieved: float   # min boundary / (|A|^{(d-1)/d+eps} r^{-eps d})
    iso_margin: float              # achieved * sqrt(C_P)
    cp_measured: Optional[float]   # weak Poincare constant, when computed
    cw_achieved: float             # max graph distance of C from x, over r
    verdict: str                   # regular | good-only | fail
    families: tuple = ()
    exhaustive: bool = False


EXHAUSTIVE_EXTENSION_MAX = 18


def _exhaustive_iso_min(mask: np.ndarray, expo: float) -> float:
    """min over nonempty A with |A| <= |mask|/2 of |dA| / |A|^expo, exact."""
    pts = np.argwhere(mask)
    n = len(pts)
    index = {tuple(p): i for i, p in enumerate(pts)}
    edges = []
    for p in pts:
        for ax in range(mask.ndim):
            q = p.copy()
            q[ax] += 1
            j = index.get(tuple(q))
            if j is not None:
                edges.append((index[tuple(p)], j))
    half = n // 2
    best = math.inf
    total = 1 << n
    m = np.arange(1, total, dtype=np.uint64)
    sizes = np.zeros(len(m), dtype=np.int64)
    v = m.copy()
    while v.any():
        sizes += (v & np.uint64(1)).astype(np.int64)
        v >>= np.uint64(1)
    ok = (sizes >= 1) & (sizes <= half)
    m, sizes = m[ok], sizes[ok]
    bnd = np.zeros(len(m), dtype=np.int64)
    for i, j in edges:
        bnd += (((m >> np.uint64(i)) ^ (m >> np.uint64(j))) & np.uint64(1)).astype(np.int64)
    ratios = bnd / sizes.astype(float) ** expo
    if len(ratios):
        best = float(ratios.min())
    return best


def certify_ball(
    g: Subgraph,
    x,
    r: int,
    c_v: float,
    c_p: float,
    c_w: float,
    ctx: ClusterContext,
    epsilon: Optional[float] = None,
    families: Sequence[str] = ("halves", "balls", "random"),
    rng: Optional[np.random.Generator] = None,
    per_family: int = 12,
    measure_wpc: bool = True,
) -> BallCertificate:
    """Check the volume bound and audit the extension's isoperimetry.

    The verdict is regular when the volume bound, the containment
    B(x, r) within C within B(x, C_W r), and the audited bound
    |d_C A| >= C_P^{-1/2} |A|^{(d-1)/d + eps} r^{-eps d} all hold; good-only
    when only the volume bound plus a measured weak Poincare constant <= C_P
    hold; fail otherwise.
    """
    rng = rng or np.random.default_rng(0)
    d = g.d
    eps = 1.0 / d if epsilon is None else float(epsilon)
    ball = graph_ball(g, x, r)
    if ball.truncated:
        raise PreconditionError("ball truncated by the domain")
    mu_ball = float(ball.mu)
    cv_margin = mu_ball / (c_v * r**d) if r > 0 else math.inf
    volume_ok = cv_margin >= 1.0

    ext = ctx.extension_for_ball(x, r)
    containment_ok = False
    iso_achieved = 0.0
    cw_achieved = math.inf
    ext_size = 0
    exhaustive = False
    if ext is not None and ext.any():
        ext_size = int(ext.sum())
        big = graph_ball(g, x, int(math.ceil(c_w * r)))
        containment_ok = bool(
            np.all(~ball.sites.bits | ext) and np.all(~ext | big.sites.bits)
        )
        src = np.zeros_like(g.bits)
        src[g.box.rel(tuple(x))] = True
        dist = bfs_distances(g.bits, src)
        inside = dist[ext]
        cw_achieved = float(inside.max()) / max(r, 1) if len(inside) else math.inf

        expo = (d - 1.0) / d + eps
        scale = float(r) ** (-eps * d)
        threshold = scale / math.sqrt(c_p)
        worst = math.inf
        half = ext_size // 2
        for fam, a in generate_subsets(ext, families, rng, half, per_family=per_family):
            size = int(a.sum())
            bnd = boundary_count(a, ext)
            worst = min(worst, bnd / (size**expo * scale))
        if ext_size <= EXHAUSTIVE_EXTENSION_MAX:
            worst = min(worst, _exhaustive_iso_min(ext, expo) / scale)
            exhaustive = True
        iso_achieved = worst if worst < math.inf else 0.0
        iso_ok = iso_achieved * math.sqrt(c_p) >= 1.0 or half == 0
    else:
        iso_ok = False

    if volume_ok and containment_ok and iso_ok:
        verdict = "regular"
        cp_measured = (
            weak_poincare_constant(g, x, r, c_w) if measure_wpc and r > 0 else None
        )
    elif volume_ok:
        cp_measured = weak_poincare_constant(g, x, r, c_w) if r > 0 else 0.0
        verdict = "good-only" if (cp_measured or 0.0) <= c_p else "fail"
    else:
        cp_measured = None
        verdict = "fail"

    return BallCertificate(
        center=tuple(int(c) for c in x),
        radius=int(r),
        mu_ball=mu_ball,
        cv_margin=cv_margin,
        extension_size=ext_size,
        containment_ok=containment_ok,
        iso_constant_achieved=iso_achieved,
        iso_margin=iso_achieved * math.sqrt(c_p),
        cp_measured=cp_measured,
        cw_achieved=cw_achieved,
        verdict=verdict,
        families=tuple(families),
        exhaustive=exhaustive,
    )


# ---------------------------------------------------------------------------
# very good scans
# ---------------------------------------------------------------------------


@dataclass
class VeryGoodScan:
    center: tuple
    R: int
    minimal_n: int                 # 1 + largest failing radius; schedule min if clean
    threshold: float               # R^{1/(d+2)}
    very_good: bool
    failures: list                 # (y, r, reason)
    pairs_checked: int
    wpc_checked: int


def very_good_scan(
    g: Subgraph,
    x,
    R: int,
    c_v: float,
    c_p: float,
    c_w: float,
    r_values: Optional[Sequence[int]] = None,
    max_wpc_checks: int = 200,
) -> VeryGoodScan:
    """Minimal N with every B(y, r) inside B(x, R), N <= r <= R, good.

    Volume is checked exactly for every scanned sub-ball; the Poincare side is
    measured (dense solve) for every volume-passing pair up to max_wpc_checks,
    spread deterministically over the scan. The verdict compares minimal N
    with R^{1/(d+2)}.
    """
    d = g.d
    x = tuple(int(c) for c in x)
    outer = graph_ball(g, x, R)
    dist_x = outer.distances
    radii = sorted(set(int(r) for r in (r_values or range(1, R + 1))))
    centers = np.argwhere((dist_x >= 0) & (dist_x <= R))
    corner = np.asarray(g.box.corner)

    failures = []
    pairs = 0
    wpc_budgeted = 0
    candidates = []
    for y_idx in centers:
        y = tuple(int(v) for v in (y_idx + corner))
        src = np.zeros_like(g.bits)
        src[tuple(y_idx)] = True
        dy = bfs_distances(g.bits, src, max_depth=max(radii))
        for r in radii:
            ball = (dy >= 0) & (dy <= r)
            if not (dist_x[ball] >= 0).all() or int(dist_x[ball].max()) > R:
                continue  # not a sub-ball of B(x, R)
            pairs += 1
            mu = float(g.degrees[ball].sum())
            if mu < c_v * r**d:
                failures.append((y, r, "volume"))
            else:
                candidates.append((y, r))
    stride = max(1, len(candidates) // max_wpc_checks)
    for i in range(0, len(candidates), stride):
        y, r = candidates[i]
        wpc_budgeted += 1
        if weak_poincare_constant(g, y, r, c_w) > c_p:
            failures.append((y, r, "poincare"))

    if failures:
        minimal_n = max(r for _, r, _ in failures) + 1
    else:
        minimal_n = min(radii)
    threshold = R ** (1.0 / (d + 2))
    return VeryGoodScan(
        center=x,
        R=R,
        minimal_n=minimal_n,
        threshold=threshold,
        very_good=minimal_n <= threshold or not failures,
        failures=failures,
        pairs_checked=pairs,
        wpc_checked=wpc_budgeted,
    )


@dataclass
class TailEstimate:
    radii: list
    frequencies: list
    trials: int
    fitted_log_power: float  # gamma in freq ~ exp(-c (log r)^gamma), when fittable


def estimate_rvgb_tail(
    model: ModelSpec,
    d: int,
    radii: Sequence[int],
    trials: int,
    c_v: float,
    c_p: float,
    c_w: float,
    seed: int = 0,
    r_values: Optional[Sequence[int]] = None,
) -> TailEstimate:
    """Monte-Carlo frequency that the very-good scan fails at each radius."""
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    radii = sorted(int(r) for r in radii)
    freqs = []
    for r in radii:
        side = 2 * (r + 2) + 1
        box = Box((-(r + 2),) * d, (side,) * d)
        fails = 0
        for t in range(trials):
            snap = sample(model, box, spawn_seed(seed, "rvgb", r, t))
            g = snap.subgraph()
            if not g.sites.contains((0,) * d) or g.mu((0,) * d) == 0:
                fails += 1
                continue
            scan = very_good_scan(
                g, (0,) * d, r, c_v, c_p, c_w,
                r_values=r_values or [1, max(1, r // 2), r],
            )
            if not scan.very_good:
                fails += 1
        freqs.append(fails / trials)
    fit = math.nan
    usable = [(r, f) for r, f in zip(radii, freqs) if 0 < f < 1]
    if len(usable) >= 2:
        xs = [math.log(math.log(r)) for r, _ in usable]
        ys = [math.log(-math.log(f)) for _, f in usable]
        fit = float(np.polyfit(xs, ys, 1)[0])
    return TailEstimate(list(radii), freqs, trials, fit)


# ---------------------------------------------------------------------------
# helpers for badness-aware contexts
# ---------------------------------------------------------------------------


def context_for_snapshot(
    g: Subgraph, ladder: ScaleLadder, s_level: int = 0
) -> ClusterContext:
    return ClusterContext(g, ladder, s_level)
