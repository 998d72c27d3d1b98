"""Samplers for the four percolation models and model-level estimators.

Models: Bernoulli site percolation, random interlacements, the vacant set of
random interlacements, and Gaussian free field excursion sets. All samplers
are deterministic functions of (model, box, seed); see rng.substream.

Finite-volume truncations (interlacement trajectory kill radius, GFF torus
padding) are artifact decisions with reported error estimates: the underlying
measures have no canonical finite-volume restriction.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import PreconditionError, UnsupportedError
from .lattice import Box, SiteSet, Subgraph, diameter_filter, shift_no_wrap
from .rng import spawn_seed, substream

VARIANTS = ("bernoulli", "interlacements", "vacant", "gff_excursion")

GFF_TORUS_PADDING = 4  # torus side >= 4x box side; restricted-covariance error ~ 2%


@dataclass(frozen=True)
class ModelSpec:
    """Which measure to sample and at what level."""

    variant: str
    parameter: float
    guard_factor: float = 4.0  # interlacement trajectories killed on exiting guard_factor * box

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise PreconditionError(f"unknown model variant {self.variant!r}")
        if self.variant == "bernoulli" and not 0.0 <= self.parameter <= 1.0:
            raise PreconditionError("bernoulli parameter must be in [0, 1]")
        if self.variant in ("interlacements", "vacant") and self.parameter <= 0:
            raise PreconditionError("interlacement level u must be positive")
        if self.guard_factor < 2.0:
            raise PreconditionError("guard_factor must be >= 2")

    @property
    def needs_d3(self) -> bool:
        return self.variant != "bernoulli"


@dataclass
class Snapshot:
    """A sampled configuration with its provenance."""

    model: ModelSpec
    seed: int
    sites: SiteSet
    info: dict = field(default_factory=dict)

    @property
    def box(self) -> Box:
        return self.sites.box

    def subgraph(self) -> Subgraph:
        return Subgraph(self.sites)


# ---------------------------------------------------------------------------
# snapshot file format
#
# magic "PERC1"
# uint32  d
# int64   corner[d]          little-endian
# uint64  sides[d]
# uint32  tag length, then model tag utf-8
# float64 parameter
# uint64  seed
# bit-packed occupancy, row-major, little bit order
# ---------------------------------------------------------------------------

_MAGIC = b"PERC1"


def write_snapshot(path, snap: Snapshot) -> None:
    box = snap.box
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", box.d))
        f.write(struct.pack(f"<{box.d}q", *box.corner))
        f.write(struct.pack(f"<{box.d}Q", *box.sides))
        tag = snap.model.variant.encode("utf-8")
        f.write(struct.pack("<I", len(tag)))
        f.write(tag)
        f.write(struct.pack("<d", snap.model.parameter))
        f.write(struct.pack("<Q", int(snap.seed) & (2**64 - 1)))
        f.write(np.packbits(snap.sites.bits.ravel(), bitorder="little").tobytes())


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as f:
        if f.read(5) != _MAGIC:
            raise PreconditionError(f"{path}: not a PERC1 snapshot")
        (d,) = struct.unpack("<I", f.read(4))
        corner = struct.unpack(f"<{d}q", f.read(8 * d))
        sides = struct.unpack(f"<{d}Q", f.read(8 * d))
        (taglen,) = struct.unpack("<I", f.read(4))
        tag = f.read(taglen).decode("utf-8")
        (parameter,) = struct.unpack("<d", f.read(8))
        (seed,) = struct.unpack("<Q", f.read(8))
        box = Box(corner, sides)
        n = box.site_count
        raw = np.frombuffer(f.read((n + 7) // 8), dtype=np.uint8)
        bits = np.unpackbits(raw, count=n, bitorder="little").astype(bool)
        sites = SiteSet(box, bits.reshape(box.sides))
    return Snapshot(ModelSpec(tag, parameter), seed, sites)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample(model: ModelSpec, box: Box, seed: int) -> Snapshot:
    """Draw one configuration on the box. Deterministic in (model, box, seed)."""
    if model.needs_d3 and box.d < 3:
        raise UnsupportedError(f"{model.variant} requires d >= 3")
    if model.variant == "bernoulli":
        bits = _sample_bernoulli(model.parameter, box, seed)
        info = {}
    elif model.variant == "gff_excursion":
        bits, info = _sample_gff(model.parameter, box, seed)
    elif model.variant == "interlacements":
        bits, info = _sample_interlacements(model.parameter, model.guard_factor, box, seed)
    else:  # vacant: bitwise complement of interlacements under the same seed
        ibits, info = _sample_interlacements(model.parameter, model.guard_factor, box, seed)
        bits = ~ibits
    return Snapshot(model, seed, SiteSet(box, bits), info)


def _sample_bernoulli(p: float, box: Box, seed: int) -> np.ndarray:
    # shared uniforms across p: p < p' sampled with one seed couples S(p) into S(p')
    u = substream(seed, "bernoulli").random(box.sides)
    return u < p


def torus_laplacian_eigenvalues(side: int, d: int) -> np.ndarray:
    """Eigenvalues 4 sum_j sin^2(pi k_j / side) of the torus Laplacian."""
    k = np.arange(side)
    lam1 = 4.0 * np.sin(np.pi * k / side) ** 2
    lam = lam1
    for _ in range(d - 1):
        lam = lam[..., None] + lam1
    return lam


def torus_green_diagonal(side: int, d: int) -> float:
    """G_torus(0, 0) with the zero mode removed, by Fourier sum."""
    lam = torus_laplacian_eigenvalues(side, d)
    flat = lam.ravel()
    return float((1.0 / flat[1:]).sum() / side**d)


def sample_gff_field(side: int, d: int, seed: int) -> np.ndarray:
    """Massless free field on the d-torus by Fourier synthesis, zero mode 0.

    Covariance is exactly the torus Green function (zero mode removed):
    field = Re ifftn(A), A_k = sqrt(side^d / lambda_k) (a_k + i b_k) with
    a, b iid standard normal and A_0 = 0.
    """
    rng = substream(seed, "gff")
    lam = torus_laplacian_eigenvalues(side, d)
    amp = np.zeros_like(lam)
    nz = lam > 0
    amp[nz] = np.sqrt(side**d / lam[nz])
    a = rng.standard_normal(lam.shape)
    b = rng.standard_normal(lam.shape)
    spectrum = amp * (a + 1j * b)
    return np.fft.ifftn(spectrum).real


def _sample_gff(h: float, box: Box, seed: int) -> tuple:
    side = GFF_TORUS_PADDING * max(box.sides)
    field = sample_gff_field(side, box.d, seed)
    sub = field[tuple(slice(0, s) for s in box.sides)]
    bits = sub >= h
    info = {"torus_side": side, "green_diagonal": torus_green_diagonal(side, box.d)}
    return bits, info


# --- discrete capacity and interlacements ---------------------------------


@dataclass
class CapacityEstimate:
    value: float
    truncation_bound: float  # asymptotic-order estimate, decreasing in guard_factor
    guard_box: Box
    equilibrium: np.ndarray  # escape probability per site of K (K's box shape)


def _green_asymptotic_constant(d: int) -> float:
    # G(x) ~ a_d |x|_2^{2-d} for the SRW on Z^d, a_d = (d/2) Gamma(d/2-1) pi^{-d/2}
    return (d / 2.0) * math.gamma(d / 2.0 - 1.0) * math.pi ** (-d / 2.0)


def _green_upper_constant(d: int) -> float:
    # inflated 1.5x as a crude all-x upper estimate
    return 1.5 * _green_asymptotic_constant(d)


def capacity(K: SiteSet, guard_factor: float = 4.0) -> CapacityEstimate:
    """Discrete capacity of a finite K in Z^d, d >= 3.

    cap(K) = sum_x e_K(x), e_K(x) = P_x[no return to K], computed from the
    harmonic escape problem on a guard box with absorbing (h = 1) outer
    boundary. The truncation errs upward; the reported bound shrinks with
    guard_factor.
    """
    d = K.d
    if d < 3:
        raise UnsupportedError("capacity requires d >= 3 (recurrent walk below)")
    if K.count == 0:
        raise PreconditionError("capacity of the empty set is undefined here")
    if guard_factor < 2.0:
        raise PreconditionError("guard_factor must be >= 2")

    pts = K.points()
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = hi - lo + 1
    # the 3*rho floor keeps the absorbing faces far even for tiny K
    margin_min = int(math.ceil(3.0 * guard_factor))
    margin = np.maximum(
        np.ceil((guard_factor - 1.0) * span / 2.0).astype(int), margin_min
    )
    g_corner = lo - margin
    g_sides = span + 2 * margin
    guard = Box(tuple(g_corner), tuple(g_sides))

    in_k = np.zeros(tuple(g_sides), dtype=bool)
    in_k[tuple((pts - g_corner).T)] = True

    # two-pass solve: first with crude h = 1 beyond the guard, then with the
    # far-field value 1 - cap0 * a_d * |z - centroid|^{2-d}, which removes the
    # leading O(1/margin) truncation error
    solve, exit_rows, exit_pos = _escape_system(in_k, d, g_corner)
    centroid = pts.mean(axis=0)
    a_d = _green_asymptotic_constant(d)

    def cap_from_h(h_outside: np.ndarray) -> tuple:
        h = solve(h_outside)
        e = np.zeros_like(h)
        for ax in range(d):
            for sgn in (1, -1):
                e += shift_no_wrap(h, ax, sgn)
        e = e[in_k].reshape(-1) / (2.0 * d)
        return float(e.sum()), e

    cap0, _ = cap_from_h(np.ones(len(exit_rows)))
    dist = np.maximum(np.linalg.norm(exit_pos - centroid, axis=1), 1.0)
    far = np.clip(1.0 - cap0 * a_d * dist ** (2 - d), 0.0, 1.0)
    cap, e = cap_from_h(far)

    m_min = int(margin.min())
    q = cap * _green_upper_constant(d) * max(m_min, 1) ** (2 - d)
    # residual after far-field matching is second order in the hit probability
    bound = cap * q * q / (1.0 - q) if q < 1.0 else math.inf

    eq = np.zeros(K.box.sides, dtype=float)
    eq[K.bits] = e
    return CapacityEstimate(cap, bound, guard, eq)


def _escape_system(in_k: np.ndarray, d: int, g_corner: np.ndarray):
    """Assemble h(y) = P_y[exit guard before hitting K] once; return a solver
    taking the boundary values h(z) for the recorded exit positions z."""
    shape = in_k.shape
    unknown = ~in_k
    idx = -np.ones(shape, dtype=np.int64)
    idx[unknown] = np.arange(int(unknown.sum()))
    m = int(unknown.sum())

    rows, cols, vals = [], [], []
    inv2d = 1.0 / (2 * d)
    flat_idx = idx[unknown]
    rows.append(flat_idx)
    cols.append(flat_idx)
    vals.append(np.ones(m))
    coords = np.argwhere(unknown)
    exit_rows, exit_pos = [], []
    for ax in range(d):
        for sgn in (1, -1):
            nb = coords.copy()
            nb[:, ax] += sgn
            inside = (nb[:, ax] >= 0) & (nb[:, ax] < shape[ax])
            exit_rows.append(flat_idx[~inside])
            exit_pos.append(nb[~inside] + g_corner)
            nb_in = nb[inside]
            nb_flat = idx[tuple(nb_in.T)]
            src = flat_idx[inside]
            good = nb_flat >= 0  # neighbor is unknown (not K); K gives h = 0
            rows.append(src[good])
            cols.append(nb_flat[good])
            vals.append(np.full(int(good.sum()), -inv2d))
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m),
    )
    exit_rows = np.concatenate(exit_rows)
    exit_pos = np.concatenate(exit_pos)

    # direct factorization only for small systems; 3D fill-in gets heavy fast
    lu = None
    if m <= 20_000:
        from scipy.sparse.linalg import splu

        lu = splu(A.tocsc())

    def solve(h_outside: np.ndarray) -> np.ndarray:
        rhs = np.zeros(m)
        np.add.at(rhs, exit_rows, inv2d * h_outside)
        if lu is not None:
            sol = lu.solve(rhs)
        else:
            from scipy.sparse.linalg import cg

            sol, ok = cg(A, rhs, rtol=1e-9, maxiter=20_000)
            if ok != 0:
                raise PreconditionError(f"escape-field CG did not converge (code {ok})")
        h = np.zeros(shape)
        h[unknown] = sol
        return h

    return solve, exit_rows, exit_pos


_capacity_cache: dict = {}


def _box_capacity_cached(box: Box, rho: float) -> CapacityEstimate:
    key = (box, float(rho))
    if key not in _capacity_cache:
        if len(_capacity_cache) > 32:
            _capacity_cache.clear()
        _capacity_cache[key] = capacity(SiteSet.full(box), guard_factor=rho)
    return _capacity_cache[key]


def _sample_interlacements(u: float, rho: float, box: Box, seed: int) -> tuple:
    """Trace of the interlacement point process intersected with the box.

    N ~ Poisson(u cap(box)), starts iid from the normalized equilibrium
    measure, each trajectory a forward SRW killed on exiting the rho-enlarged
    guard box. The neglected return probability is reported in info.
    """
    d = box.d
    cap_est = _box_capacity_cached(box, rho)
    cap = cap_est.value
    guard = cap_est.guard_box

    n_rng = substream(seed, "ri-count")
    n_traj = int(n_rng.poisson(u * cap))

    bits = np.zeros(box.sides, dtype=bool)
    info = {
        "capacity": cap,
        "capacity_truncation_bound": cap_est.truncation_bound,
        "n_trajectories": n_traj,
        "guard_box": guard,
        # escape estimate: chance a killed trajectory would have returned
        "neglected_return_probability": min(
            1.0, cap * _green_upper_constant(d) * max(2, int(min(guard.sides) // 4)) ** (2 - d)
        ),
    }
    if n_traj == 0:
        return bits, info

    start_rng = substream(seed, "ri-start")
    eq = cap_est.equilibrium.reshape(-1)
    k_pts = SiteSet.full(box).points()
    probs = eq / eq.sum()
    starts = k_pts[start_rng.choice(len(k_pts), size=n_traj, p=probs)]

    step_rng = substream(seed, "ri-step")
    _mark_trajectories(bits, box, guard, starts, step_rng, d)
    return bits, info


def _mark_trajectories(bits, box: Box, guard: Box, starts, rng, d, chunk=2048):
    """Run all walkers to guard exit, chunk-vectorized, marking box visits."""
    g_lo = np.asarray(guard.corner)
    g_hi = g_lo + np.asarray(guard.sides) - 1
    b_lo = np.asarray(box.corner)
    b_hi = b_lo + np.asarray(box.sides) - 1

    pos = starts.astype(np.int64)
    _mark_points(bits, pos, b_lo, b_hi)
    active = np.ones(len(pos), dtype=bool)
    hard_cap = 64 * int(max(guard.sides)) ** 2
    steps_done = 0
    while active.any() and steps_done < hard_cap:
        p = pos[active]
        n = len(p)
        axes = rng.integers(0, d, size=(n, chunk))
        signs = rng.integers(0, 2, size=(n, chunk)) * 2 - 1
        incr = np.zeros((n, chunk, d), dtype=np.int64)
        np.put_along_axis(incr, axes[..., None], signs[..., None], axis=2)
        traj = p[:, None, :] + np.cumsum(incr, axis=1)
        inside = np.all((traj >= g_lo) & (traj <= g_hi), axis=2)
        alive = np.cumprod(inside, axis=1).astype(bool)  # still inside since chunk start
        # mark visited in-box positions while alive
        ok = alive & np.all((traj >= b_lo) & (traj <= b_hi), axis=2)
        if ok.any():
            _mark_points(bits, traj[ok], b_lo, b_hi)
        survived = alive[:, -1]
        new_pos = p.copy()
        new_pos[survived] = traj[survived, -1]
        pos[active] = new_pos
        idx = np.flatnonzero(active)
        active[idx[~survived]] = False
        steps_done += chunk
    return


def _mark_points(bits, pts, b_lo, b_hi):
    sel = np.all((pts >= b_lo) & (pts <= b_hi), axis=1)
    if sel.any():
        rel = pts[sel] - b_lo
        bits[tuple(rel.T)] = True


# ---------------------------------------------------------------------------
# eta(u): density of the "infinite" cluster, finite-box proxy
# ---------------------------------------------------------------------------


@dataclass
class EtaEstimate:
    value: float
    half_width: float  # 1.96 sigma normal approximation
    trials: int

    @property
    def low(self) -> float:
        return max(0.0, self.value - self.half_width)

    @property
    def high(self) -> float:
        return min(1.0, self.value + self.half_width)


def estimate_eta(model: ModelSpec, box: Box, trials: int, seed: int = 0) -> EtaEstimate:
    """Fraction of trials in which the box center lies in a component of
    l1-diameter >= side/2 (finite-box proxy for membership in S_infty)."""
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    r = min(box.sides) / 2.0
    center = tuple(c + s // 2 for c, s in zip(box.corner, box.sides))
    hits = 0
    for t in range(trials):
        snap = sample(model, box, spawn_seed(seed, "eta", t))
        g = snap.subgraph()
        if not g.sites.contains(center):
            continue
        comp = g.components
        lab = comp.labels[box.rel(center)]
        if comp.diameter[lab - 1] >= r:
            hits += 1
    p = hits / trials
    hw = 1.96 * math.sqrt(max(p * (1 - p), 1e-12) / trials)
    return EtaEstimate(p, hw, trials)


def s_infinity_proxy(g: Subgraph) -> SiteSet:
    """Finite-box stand-in for S_infty: components spanning a box side."""
    return diameter_filter(g, min(g.box.sides))
