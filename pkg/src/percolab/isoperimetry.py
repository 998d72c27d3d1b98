"""Boundary/volume analytics: slice selection, projection bounds, brute-force
profiles, adversarial subset audits, and weak Poincare constants.

Everything here operates on bool masks with cross (l1) adjacency, so the same
machinery audits site subgraphs and rescaled perforation lattices alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import InternalConsistencyError, PreconditionError
from .lattice import (
    Box,
    SiteSet,
    Subgraph,
    bfs_distances,
    boundary_count,
    graph_ball,
    neighbor_dilate,
    zd_boundary_count,
)

# ---------------------------------------------------------------------------
# reference constants
# ---------------------------------------------------------------------------


def gamma_perforation(d: int) -> float:
    """Isoperimetric constant for large subsets of perforated lattices, d >= 2."""
    return (
        1.0
        / (2 * d * 32**d * 27**d * 1e6)
        * (1.0 - (2.0 / 3.0) ** (1.0 / d))
        * (1.0 - math.exp(-1.0 / (16.0 * (d - 1))))
    )


GAMMA_PERFORATION_2D = 1e-6  # all subset sizes, two dimensions


def c_eta(eta) -> float:
    return (2.0 * eta.eta1 - eta.eta2) / (4.0 * eta.eta1)


def gamma_extended_cluster(d: int, eta, L0: int) -> float:
    """Constant for subsets of the locally-extended largest cluster."""
    return c_eta(eta) * gamma_perforation(d) / (93.0**d * L0 ** (d - 1))


def selection_delta(d: int) -> float:
    return 9.0 ** (-(d - 2))


def selection_cd(d: int, c2: float) -> float:
    prod = 1.0
    for j in range(1, d - 1):
        prod *= 1.0 + 3.0 / 9.0**j
    return c2 ** (d - 1) / prod


# ---------------------------------------------------------------------------
# slice selection
# ---------------------------------------------------------------------------


@dataclass
class Slice2D:
    """An axis-aligned two-dimensional rectangle inside the ambient box."""

    base: tuple      # absolute min corner, d coordinates
    axes: tuple      # the two free axes
    extents: tuple   # lengths along the free axes
    count: int       # |A cap S|

    @property
    def area(self) -> int:
        return self.extents[0] * self.extents[1]


@dataclass
class SliceSelection:
    slices: list
    total_count: int
    size_a: int
    c2: float
    delta: float


def select_slices(A: SiteSet, q: Box, c2: float) -> SliceSelection:
    """Disjoint 2D slices, each holding between 1 and c2*|S| points of A and
    jointly at least 9^{-(d-2)} |A| of them.

    Follows the inductive construction: take slices along the first two axes
    directly when enough of them qualify, otherwise select at least a third of
    the hyperplane rectangles along the first axis and recurse in d-1.
    """
    if not (6.0 / 7.0 <= c2 < 1.0):
        raise PreconditionError("need 6/7 <= c2 < 1")
    if A.box != q:
        raise PreconditionError("A must live on the ambient box")
    d = q.d
    n = A.count
    if n < 1:
        raise PreconditionError("A must be nonempty")
    if n > selection_cd(d, c2) * q.site_count:
        raise PreconditionError("|A| exceeds C_d |Q|")

    coords = np.argwhere(A.bits)
    slices = _select_recurse(coords, q.sides, tuple(range(d)), {}, c2, q.corner)
    total = sum(s.count for s in slices)
    return SliceSelection(slices, total, n, c2, selection_delta(d))


def _select_recurse(coords, extents, axes_map, fixed, c2, corner):
    k = len(extents)
    n = len(coords)
    if k == 2:
        base = tuple(
            corner[ax] + fixed[ax] if ax in fixed else corner[ax]
            for ax in range(len(corner))
        )
        return [Slice2D(base, axes_map, tuple(extents), n)]

    area2 = extents[0] * extents[1]
    rest_ids = [tuple(c) for c in coords[:, 2:]]
    groups: dict = {}
    for i, rid in enumerate(rest_ids):
        groups.setdefault(rid, []).append(i)
    delta_k = selection_delta(k)

    qualifying = {
        rid: idx for rid, idx in groups.items() if 1 <= len(idx) <= c2 * area2
    }
    covered = sum(len(v) for v in qualifying.values())
    if covered >= delta_k * n:
        out = []
        for rid, idx in qualifying.items():
            base = list(corner)
            for ax in range(len(corner)):
                if ax in fixed:
                    base[ax] += fixed[ax]
            for pos, ax in enumerate(axes_map[2:]):
                base[ax] += int(rid[pos])
            out.append(
                Slice2D(tuple(base), axes_map[:2], (extents[0], extents[1]), len(idx))
            )
        return out

    # partition slices into the overfull family and the rest, then pick
    # hyperplane rectangles x fixed on the first axis satisfying the three
    # inequalities of the construction
    r0 = extents[0]
    overfull_ids = {rid for rid, idx in groups.items() if len(idx) > c2 * area2}
    in_s1 = np.fromiter(
        (rid in overfull_ids for rid in rest_ids), dtype=bool, count=n
    )
    x_of = coords[:, 0]
    total_x = np.bincount(x_of, minlength=r0)
    s2_x = np.bincount(x_of[~in_s1], minlength=r0)
    good_x = (total_x >= n / (3.0 * r0)) & (s2_x <= 3.0 * delta_k * n / r0)
    picked = np.flatnonzero(good_x)
    if len(picked) < r0 / 3.0:
        raise InternalConsistencyError(
            "selection construction found too few hyperplane rectangles"
        )

    out = []
    for x in picked:
        sel = coords[:, 0] == x
        sub = coords[sel][:, 1:]
        sub_fixed = dict(fixed)
        sub_fixed[axes_map[0]] = int(x) + fixed.get(axes_map[0], 0)
        out.extend(
            _select_recurse(sub, extents[1:], axes_map[1:], sub_fixed, c2, corner)
        )
    return out


def validate_selection(A: SiteSet, sel: SliceSelection) -> None:
    """Assert the three contract conditions; raises on violation."""
    d = A.d
    seen = np.zeros(A.bits.shape, dtype=bool)
    total = 0
    for s in sel.slices:
        rel = A.box.rel(s.base)
        sl = [slice(r, r + 1) for r in rel]
        for ax, ext in zip(s.axes, s.extents):
            sl[ax] = slice(rel[ax], rel[ax] + ext)
        window = tuple(sl)
        if seen[window].any():
            raise InternalConsistencyError("slices overlap")
        seen[window] = True
        cnt = int(A.bits[window].sum())
        if cnt != s.count:
            raise InternalConsistencyError("stored slice count mismatch")
        if not 1 <= cnt <= sel.c2 * s.area:
            raise InternalConsistencyError("per-slice count out of range")
        total += cnt
    if total < sel.delta * sel.size_a:
        raise InternalConsistencyError("slices cover too little of A")


# ---------------------------------------------------------------------------
# box-graph projection bound
# ---------------------------------------------------------------------------


@dataclass
class LWReport:
    ok: bool
    boundary_in_box: int
    boundary_zd: int
    dim_bound: float      # (1 - N C^{1/d}) |A|^{(d-1)/d}
    zd_bound: float       # boundary_zd / (1 + 2d/(1 - N C^{1/d}))
    margin_dim: float
    margin_zd: float


def lw_bound_check(A: SiteSet, N: float, C: float) -> LWReport:
    """Boundary lower bounds for subsets of a full box graph.

    Requires max side <= N min side, |A| <= C |box|, and N C^{1/d} < 1; then
    |d_G A| >= (1 - N C^{1/d}) |A|^{(d-1)/d} and
    |d_G A| >= |d_{Z^d} A| / (1 + 2d (1 - N C^{1/d})^{-1}).
    """
    box = A.box
    d = box.d
    if max(box.sides) > N * min(box.sides):
        raise PreconditionError("box sides violate the aspect bound")
    size = A.count
    if size > C * box.site_count:
        raise PreconditionError("|A| exceeds C |box|")
    slack = 1.0 - N * C ** (1.0 / d)
    if slack <= 0:
        raise PreconditionError("need N C^{1/d} < 1")
    ambient = np.ones(box.sides, dtype=bool)
    b_in = boundary_count(A.bits, ambient)
    b_zd = zd_boundary_count(A.bits)
    dim_bound = slack * size ** ((d - 1.0) / d)
    zd_bound = b_zd / (1.0 + 2.0 * d / slack)
    return LWReport(
        ok=(b_in >= dim_bound - 1e-9) and (b_in >= zd_bound - 1e-9),
        boundary_in_box=b_in,
        boundary_zd=b_zd,
        dim_bound=dim_bound,
        zd_bound=zd_bound,
        margin_dim=b_in - dim_bound,
        margin_zd=b_in - zd_bound,
    )


# ---------------------------------------------------------------------------
# brute-force profile
# ---------------------------------------------------------------------------

BRUTE_FORCE_MAX_SITES = 22


@dataclass
class BruteProfile:
    empty: bool
    min_ratio_dim: Optional[float] = None      # |dA| / |A|^{(d-1)/d}
    min_ratio_cheeger: Optional[float] = None  # |dA| / |A|
    argmin_dim: Optional[np.ndarray] = None    # site mask achieving the dim ratio
    argmin_cheeger: Optional[np.ndarray] = None


def min_boundary_bruteforce(g: Subgraph) -> BruteProfile:
    """Exact minimum of |dA|/|A|^{(d-1)/d} and |dA|/|A| over nonempty subsets
    A of the occupied sites with |A| <= |g|/2, by subset enumeration."""
    n = g.sites.count
    if n > BRUTE_FORCE_MAX_SITES:
        raise PreconditionError(f"brute force refuses more than {BRUTE_FORCE_MAX_SITES} sites")
    if n <= 1:
        return BruteProfile(empty=True)
    d = g.d
    pts = np.argwhere(g.bits)
    index = {tuple(p): i for i, p in enumerate(pts)}
    edges = []
    for p in pts:
        for ax in range(d):
            q = p.copy()
            q[ax] += 1
            j = index.get(tuple(q))
            if j is not None:
                edges.append((index[tuple(p)], j))

    half = n // 2
    best = {"dim": (np.inf, 0), "cheeger": (np.inf, 0)}
    total = 1 << n
    chunk = 1 << 20
    expo = (d - 1.0) / d
    for start in range(1, total, chunk):
        m = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        sizes = np.zeros(len(m), dtype=np.int64)
        v = m.copy()
        while v.any():
            sizes += (v & np.uint64(1)).astype(np.int64)
            v >>= np.uint64(1)
        ok = (sizes >= 1) & (sizes <= half)
        if not ok.any():
            continue
        m_ok = m[ok]
        sz = sizes[ok]
        bnd = np.zeros(len(m_ok), dtype=np.int64)
        for i, j in edges:
            bnd += (((m_ok >> np.uint64(i)) ^ (m_ok >> np.uint64(j))) & np.uint64(1)).astype(
                np.int64
            )
        for key, denom in (("dim", sz.astype(float) ** expo), ("cheeger", sz.astype(float))):
            ratio = bnd / denom
            k = int(np.argmin(ratio))
            if ratio[k] < best[key][0]:
                best[key] = (float(ratio[k]), int(m_ok[k]))

    def mask_of(bitmask: int) -> np.ndarray:
        out = np.zeros(g.bits.shape, dtype=bool)
        for i in range(n):
            if (bitmask >> i) & 1:
                out[tuple(pts[i])] = True
        return out

    return BruteProfile(
        empty=False,
        min_ratio_dim=best["dim"][0],
        min_ratio_cheeger=best["cheeger"][0],
        argmin_dim=mask_of(best["dim"][1]),
        argmin_cheeger=mask_of(best["cheeger"][1]),
    )


# ---------------------------------------------------------------------------
# adversarial subset audits
# ---------------------------------------------------------------------------


@dataclass
class IsoReport:
    family: str
    size: int
    boundary: int
    ratio: float
    gamma_ref: float
    in_reference_range: bool
    passed: bool


def _box_linf_distance_field(shape, corner, side_units) -> np.ndarray:
    """linf distance from each grid point to an axis-aligned box."""
    d = len(shape)
    dist = np.zeros(shape, dtype=np.int64)
    for ax in range(d):
        idx = np.arange(shape[ax])
        lo = corner[ax]
        hi = corner[ax] + side_units[ax] - 1
        away = np.maximum(np.maximum(lo - idx, idx - hi), 0)
        sl = [None] * d
        sl[ax] = slice(None)
        dist = np.maximum(dist, away[tuple(sl)])
    return dist


def generate_subsets(
    mask: np.ndarray,
    families: Sequence[str],
    rng: np.random.Generator,
    size_hi: int,
    holes: Optional[list] = None,
    per_family: int = 24,
    extra_subsets: Optional[list] = None,
) -> Iterable:
    """Yield (family, subset-mask) pairs, |A| <= size_hi, A within the mask.

    Families: halves (coordinate cuts), balls (graph balls), holes
    (hole-hugging collars from removal records), random (BFS blobs). Callers
    may inject named subsets (e.g. a brute-force optimizer) via extra_subsets.
    """
    d = mask.ndim
    total = int(mask.sum())
    occupied = np.argwhere(mask)

    if "halves" in families:
        for ax in range(d):
            cuts = np.unique(
                np.linspace(1, mask.shape[ax] - 1, min(per_family, mask.shape[ax] - 1)).astype(int)
            ) if mask.shape[ax] > 1 else []
            for t in cuts:
                sl = [slice(None)] * d
                sl[ax] = slice(0, t)
                a = np.zeros_like(mask)
                a[tuple(sl)] = mask[tuple(sl)]
                if 1 <= a.sum() <= size_hi:
                    yield "halves", a

    if "balls" in families and total:
        for _ in range(per_family):
            seed_pt = occupied[rng.integers(len(occupied))]
            src = np.zeros_like(mask)
            src[tuple(seed_pt)] = True
            radius = int(rng.integers(1, max(2, max(mask.shape))))
            dist = bfs_distances(mask, src, max_depth=radius)
            a = dist >= 0
            if 1 <= a.sum() <= size_hi:
                yield "balls", a

    if "holes" in families and holes:
        for corner, side_units in holes[: 4 * per_family]:
            dist = _box_linf_distance_field(mask.shape, corner, side_units)
            for k in (1, 2, 4):
                a = mask & (dist <= k) & (dist >= 1)
                if 1 <= a.sum() <= size_hi:
                    yield "holes", a

    if "random" in families and total:
        for _ in range(per_family):
            target = int(rng.integers(1, max(2, min(size_hi, total // 2 + 1))))
            a = _random_blob(mask, rng, target)
            if a is not None and 1 <= a.sum() <= size_hi:
                yield "random", a

    if extra_subsets:
        for name, a in extra_subsets:
            a = a & mask
            if 1 <= a.sum() <= size_hi:
                yield name, a


def _random_blob(mask, rng, target):
    occupied = np.argwhere(mask)
    if len(occupied) == 0:
        return None
    start = occupied[rng.integers(len(occupied))]
    a = np.zeros_like(mask)
    a[tuple(start)] = True
    size = 1
    while size < target:
        frontier = neighbor_dilate(a) & mask & ~a
        cand = np.argwhere(frontier)
        if len(cand) == 0:
            break
        take = max(1, int(len(cand) * rng.random() * 0.7))
        chosen = cand[rng.choice(len(cand), size=min(take, target - size), replace=False)]
        a[tuple(chosen.T)] = True
        size = int(a.sum())
    return a


def audit_mask(
    mask: np.ndarray,
    families: Sequence[str],
    rng: np.random.Generator,
    gamma_ref: float,
    size_lo: float = 1,
    size_hi: Optional[int] = None,
    ambient_half: Optional[int] = None,
    holes: Optional[list] = None,
    per_family: int = 24,
    extra_subsets: Optional[list] = None,
) -> list:
    """Boundary/volume reports for generated subsets of the mask graph.

    size_lo..ambient_half delimit the reference bound's range: subsets outside
    it are still reported (empirical content) but pass vacuously.
    """
    d = mask.ndim
    half = int(mask.sum()) // 2 if ambient_half is None else ambient_half
    hi = half if size_hi is None else size_hi
    reports = []
    for family, a in generate_subsets(
        mask, families, rng, hi, holes, per_family, extra_subsets
    ):
        size = int(a.sum())
        bnd = boundary_count(a, mask)
        ratio = bnd / size ** ((d - 1.0) / d)
        in_range = size_lo <= size <= half
        reports.append(
            IsoReport(
                family=family,
                size=size,
                boundary=bnd,
                ratio=ratio,
                gamma_ref=gamma_ref,
                in_reference_range=in_range,
                passed=(ratio >= gamma_ref) if in_range else True,
            )
        )
    return reports


def worst_ratio(reports: list) -> float:
    """Empirical isoperimetric constant: the smallest observed ratio."""
    vals = [r.ratio for r in reports]
    return min(vals) if vals else math.inf


def isop_audit(
    pf,
    families: Sequence[str] = ("balls", "halves", "holes", "random"),
    rng: Optional[np.random.Generator] = None,
    per_family: int = 24,
) -> list:
    """Audit subsets of the fully perforated lattice Q_{K,s,0}.

    d = 2 uses the all-sizes constant 1e-6; d >= 3 uses the perforation
    constant on sizes in [(L_s/L_0)^{d^2}, |Q cap G_0|/2].
    """
    rng = rng or np.random.default_rng(0)
    flat = pf.flatten(0)
    mask = flat.mask
    d = mask.ndim
    lad = pf.ladder
    holes = []
    for rec in pf.records:
        for corner, side in rec.boxes:
            corner_units = tuple((c - x) // lad.L0 for c, x in zip(corner, pf.x_s))
            holes.append((corner_units, (side // lad.L0,) * d))
    if d == 2:
        gamma, size_lo = GAMMA_PERFORATION_2D, 1
    else:
        gamma, size_lo = gamma_perforation(d), (lad.L[pf.s] // lad.L0) ** (d * d)
    ambient_half = mask.size // 2  # half of |Q cap G_0|, not of the perforation
    return audit_mask(
        mask,
        families,
        rng,
        gamma,
        size_lo=size_lo,
        ambient_half=ambient_half,
        holes=holes,
        per_family=per_family,
    )


# ---------------------------------------------------------------------------
# weak Poincare constant
# ---------------------------------------------------------------------------

DENSE_EIGEN_MAX_SITES = 2000


def _ball_matrices(g: Subgraph, x, r: int, c_w: float):
    """Sparse energy Laplacian of the enlarged ball and the variance form's
    (weight vector, mass) pair; M = diag(w) - w w^T / mass stays implicit."""
    from scipy import sparse as sp

    rw = int(math.ceil(c_w * r))
    big = graph_ball(g, x, rw)
    w_mask = big.sites.bits
    inner = (big.distances >= 0) & (big.distances <= r)
    pts = np.argwhere(w_mask)
    idx = -np.ones(w_mask.shape, dtype=np.int64)
    idx[w_mask] = np.arange(len(pts))
    nw = len(pts)
    rows, cols = [], []
    for ax in range(g.d):
        q = pts.copy()
        q[:, ax] += 1
        ok = q[:, ax] < w_mask.shape[ax]
        j = np.full(len(pts), -1, dtype=np.int64)
        j[ok] = idx[tuple(q[ok].T)]
        e = j >= 0
        rows.append(np.arange(nw)[e])
        cols.append(j[e])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    r2 = np.concatenate([rows, cols])
    c2 = np.concatenate([cols, rows])
    lap = sp.csr_matrix((np.full(len(r2), -1.0), (r2, c2)), shape=(nw, nw))
    deg = -np.asarray(lap.sum(axis=1)).ravel()
    lap = lap + sp.diags(deg)

    mu = g.degrees[w_mask].astype(float)
    w_b = np.where(inner[w_mask], mu, 0.0)
    return lap, w_b, nw


def weak_poincare_constant(g: Subgraph, x, r: int, c_w: float = 1.0) -> float:
    """Smallest C_P with Var_{mu,B(x,r)}(f) <= C_P r^2 E_{B(x, ceil(C_W r))}(f)
    for every f on the enlarged ball: the top generalized Rayleigh quotient of
    (variance form, energy form) over the energy's nonconstant directions,
    divided by r^2.
    """
    if r < 0:
        raise PreconditionError("radius must be nonnegative")
    ball = graph_ball(g, x, r)
    if ball.sites.count <= 1:
        return 0.0
    lap, w_b, nw = _ball_matrices(g, x, r, c_w)
    if nw <= DENSE_EIGEN_MAX_SITES:
        mass = w_b.sum()
        m = np.diag(w_b) - np.outer(w_b, w_b) / mass
        lam = _top_pencil_eig_dense(m, lap.toarray())
    else:
        lam = _top_pencil_eig_iterative(lap, w_b)
    return lam / float(r) ** 2


def _projection_basis(n: int) -> np.ndarray:
    """Orthonormal basis of the complement of the constant vector."""
    a = np.zeros((n, n))
    a[:, 0] = 1.0
    a[:, 1:] = np.eye(n)[:, : n - 1]
    q, _ = np.linalg.qr(a)
    return q[:, 1:]


def _top_pencil_eig_dense(m: np.ndarray, lap: np.ndarray) -> float:
    u = _projection_basis(len(m))
    mm = u.T @ m @ u
    ll = u.T @ lap @ u
    vals = sla.eigh(mm, ll, eigvals_only=True)
    return float(vals[-1])


def _top_pencil_eig_iterative(lap, w_b: np.ndarray, tol: float = 1e-10) -> float:
    """Power iteration on (L + P)^{-1} M with P the constants projector:
    converges to the top generalized eigenvalue of (variance form, energy)."""
    from scipy.sparse.linalg import cg

    n = lap.shape[0]
    mass = w_b.sum()
    scale = float(lap.diagonal().mean())

    def m_apply(v):
        return w_b * v - w_b * ((w_b @ v) / mass)

    def shift_apply(v):
        return lap @ v + scale * np.full(n, v.mean())

    from scipy.sparse.linalg import LinearOperator

    shift_op = LinearOperator((n, n), matvec=shift_apply)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(n)
    v -= v.mean()
    lam = 0.0
    x0 = None
    for it in range(500):
        rhs = m_apply(v)
        w, ok = cg(shift_op, rhs, x0=x0, rtol=1e-12, maxiter=20 * n)
        if ok != 0:
            raise PreconditionError(f"inner CG failed (code {ok})")
        x0 = w
        w -= w.mean()
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        w /= nrm
        new = float((w @ m_apply(w)) / (w @ (lap @ w)))
        if it > 2 and abs(new - lam) <= tol * max(new, 1e-30):
            return new
        lam, v = new, w
    raise PreconditionError(
        f"Rayleigh iteration did not converge (residual {abs(new - lam):.2e})"
    )
