"""Simple random walk on clusters: exact finite-horizon kernels and the
heat-kernel / Harnack / Green / invariance-principle diagnostics built on them.

Kernels are exact on the walk's component: the walk moves at most one step per
unit time, so as long as the horizon stays below the source's distance to the
box faces the finite box is invisible. The safe flag records that check;
Monte Carlo appears only where exactness is infeasible (continuous-time spot
checks, path ensembles, annealed averages).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import DegenerateWalkError, PreconditionError, UnsupportedError
from .lattice import Box, Subgraph, as_point, bfs_distances, graph_ball
from .rng import spawn_seed
from .samplers import ModelSpec, sample


# ---------------------------------------------------------------------------
# component-restricted transition structure
# ---------------------------------------------------------------------------


class _Component:
    def __init__(self, g: Subgraph, x):
        x = as_point(x)
        if not g.sites.contains(x):
            raise PreconditionError(f"{x} is not an occupied site")
        if g.mu(x) == 0:
            raise DegenerateWalkError(f"{x} is isolated (mu = 0)")
        comp = g.components
        lab = comp.labels[g.box.rel(x)]
        self.mask = comp.labels == lab
        self.g = g
        self.x = x
        self.pts = np.argwhere(self.mask)
        self.index = -np.ones(g.bits.shape, dtype=np.int64)
        self.index[self.mask] = np.arange(len(self.pts))
        self.mu = g.degrees[self.mask].astype(float)
        rows, cols = [], []
        for ax in range(g.d):
            q = self.pts.copy()
            q[:, ax] += 1
            ok = q[:, ax] < g.bits.shape[ax]
            j = np.full(len(self.pts), -1, dtype=np.int64)
            j[ok] = self.index[tuple(q[ok].T)]
            e = j >= 0
            rows.append(np.flatnonzero(e))
            cols.append(j[e])
        r = np.concatenate(rows + cols)
        c = np.concatenate(cols + rows)
        n = len(self.pts)
        self.adj = sparse.csr_matrix(
            (np.ones(len(r)), (r, c)), shape=(n, n)
        )
        self.src = int(self.index[g.box.rel(x)])

    def face_distance(self) -> int:
        rel = self.g.box.rel(self.x)
        return int(min(min(r, s - 1 - r) for r, s in zip(rel, self.g.box.sides)))


@dataclass
class WalkKernel:
    """p_k(x, .) on the source's component for the requested steps."""

    source: tuple
    horizon: int
    steps: dict               # k -> per-site p_k values (component order)
    component_points: np.ndarray
    index: np.ndarray         # box-shaped site -> component position, -1 outside
    mu: np.ndarray
    box: Box
    safe: bool                # horizon < source-to-face distance
    conservation_error: float

    def p_vector(self, k: int) -> np.ndarray:
        return self.steps[k]

    def p_grid(self, k: int) -> np.ndarray:
        out = np.zeros(self.index.shape)
        out[self.index >= 0] = self.steps[k]
        return out

    def p_at(self, k: int, point) -> float:
        i = self.index[self.box.rel(point)]
        if i < 0:
            return 0.0
        return float(self.steps[k][i])


def exact_kernel(g: Subgraph, x, n: int, keep: Optional[Sequence[int]] = None) -> WalkKernel:
    """p_k(x, .) for k <= n by iterating the transition operator.

    keep selects which steps to store (default: all of 0..n). Mass is
    conserved exactly by the iteration; the recorded conservation error is the
    worst float drift of sum p_k mu over the run.
    """
    comp = _Component(g, x)
    keep_set = set(range(n + 1)) if keep is None else {int(k) for k in keep}
    if keep_set and max(keep_set) > n:
        raise PreconditionError("kept step beyond the horizon")
    m = np.zeros(len(comp.pts))
    m[comp.src] = 1.0
    steps = {}
    worst = 0.0
    for k in range(n + 1):
        worst = max(worst, abs(m.sum() - 1.0))
        if k in keep_set:
            steps[k] = m / comp.mu
        if k == n:
            break
        m = comp.adj @ (m / comp.mu)
    return WalkKernel(
        source=comp.x,
        horizon=n,
        steps=steps,
        component_points=comp.pts,
        index=comp.index,
        mu=comp.mu,
        box=g.box,
        safe=comp.face_distance() > n,
        conservation_error=worst,
    )


@dataclass
class CtKernel:
    """q_t(x, .) by Poisson-weighted summation of discrete kernels."""

    source: tuple
    t: float
    values: np.ndarray        # component order
    index: np.ndarray
    mu: np.ndarray
    truncation: int           # summation cut K
    tail_bound: float         # neglected Poisson mass
    safe: bool


def ct_kernel(g: Subgraph, x, t: float, tol: float = 1e-12) -> CtKernel:
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    from scipy.stats import poisson

    comp = _Component(g, x)
    kmax = int(poisson.isf(tol, t)) + 1 if t > 0 else 0
    tail = float(poisson.sf(kmax, t))
    weights = poisson.pmf(np.arange(kmax + 1), t)
    m = np.zeros(len(comp.pts))
    m[comp.src] = 1.0
    acc = weights[0] * m
    for k in range(1, kmax + 1):
        m = comp.adj @ (m / comp.mu)
        acc = acc + weights[k] * m
    return CtKernel(
        source=comp.x,
        t=t,
        values=acc / comp.mu,
        index=comp.index,
        mu=comp.mu,
        truncation=kmax,
        tail_bound=tail,
        safe=comp.face_distance() > kmax,
    )


# ---------------------------------------------------------------------------
# Gaussian envelope fits
# ---------------------------------------------------------------------------


def default_c_grid() -> np.ndarray:
    return np.geomspace(1e-3, 10.0, 161)


@dataclass
class EnvelopeFit:
    c1: float
    c2: float
    c3: float
    c4: float
    upper_pairs: int
    lower_pairs: int
    coverage: float           # fraction of admissible pairs inside the band
    anomalies: int            # non-monotone bin medians across distance
    achieving_upper: tuple    # (t, site point) where the upper fit binds
    achieving_lower: tuple


def envelope_check(
    kernel: WalkKernel,
    ts: Sequence[int],
    d: int,
    distance: str = "cluster",
    eps: float = 0.5,
    c_grid: Optional[np.ndarray] = None,
) -> EnvelopeFit:
    """Fit two-sided Gaussian envelopes to F_t = p_t + p_{t+1}.

    Upper pairs satisfy t >= D(x, y); lower pairs t >= D(x, y)^{1+eps}. With
    G = log(F t^{d/2}) + C D^2 / t, the upper fit takes the width C2 on the
    geometric grid minimizing C1 = exp(max G) (the upper range reaches into
    the super-Gaussian tail, where any envelope clearing the diagonal is
    valid, so minimal-C1 is the stable objective); the lower fit lives in the
    diffusive regime and takes the width C4 minimizing the range of G, with
    C3 = exp(min G) at that width.
    """
    if not 0 < eps <= 0.5:
        raise PreconditionError("eps must lie in (0, 1/2]")
    grid = default_c_grid() if c_grid is None else np.asarray(c_grid)

    src_mask = np.zeros(kernel.index.shape, dtype=bool)
    comp_mask = kernel.index >= 0
    src_mask[kernel.box.rel(kernel.source)] = True
    if distance == "cluster":
        dist_grid = bfs_distances(comp_mask, src_mask)
    elif distance == "zd":
        pts = np.argwhere(comp_mask)
        rel = np.asarray(kernel.box.rel(kernel.source))
        dist_grid = np.full(comp_mask.shape, -1, dtype=np.int64)
        dist_grid[comp_mask] = np.abs(pts - rel).sum(axis=1)
    else:
        raise PreconditionError("distance must be 'cluster' or 'zd'")
    dist = dist_grid[comp_mask].astype(float)

    g_up, g_lo = [], []
    meta_up, meta_lo = [], []
    for t in ts:
        if t not in kernel.steps or (t + 1) not in kernel.steps:
            raise PreconditionError(f"kernel lacks steps {t}, {t + 1}")
        f = kernel.steps[t] + kernel.steps[t + 1]
        up = (dist >= 0) & (dist <= t) & (f > 0)
        lo = (dist >= 0) & (dist ** (1.0 + eps) <= t) & (f > 0)
        for sel, acc, meta in ((up, g_up, meta_up), (lo, g_lo, meta_lo)):
            if sel.any():
                base = np.log(f[sel]) + (d / 2.0) * math.log(t)
                acc.append((base, dist[sel] ** 2 / t))
                meta.append((t, np.flatnonzero(sel)))
    if not g_up or not g_lo:
        raise PreconditionError("no admissible pairs for the fit")

    def fit(parts, objective):
        base = np.concatenate([b for b, _ in parts])
        slope = np.concatenate([s for _, s in parts])
        scores = []
        for c in grid:
            gvals = base + c * slope
            scores.append(
                gvals.max() if objective == "min_c1" else gvals.max() - gvals.min()
            )
        k = int(np.argmin(scores))
        c = float(grid[k])
        gvals = base + c * slope
        hi = int(np.argmax(gvals))
        lo_i = int(np.argmin(gvals))
        return c, float(gvals[hi]), float(gvals[lo_i]), hi, lo_i

    c2, log_c1, _, arg_up, _ = fit(g_up, "min_c1")
    c4, _, log_c3, _, arg_lo = fit(g_lo, "min_width")

    def locate(parts, meta, flat_index):
        off = 0
        for (b, _), (t, idx) in zip(parts, meta):
            if flat_index < off + len(b):
                site = kernel.component_points[idx[flat_index - off]]
                return (t, tuple(int(v) for v in site))
            off += len(b)
        return (ts[0], kernel.source)

    anomalies = _shape_anomalies(kernel, ts, dist, comp_mask)
    return EnvelopeFit(
        c1=math.exp(log_c1),
        c2=c2,
        c3=math.exp(log_c3),
        c4=c4,
        upper_pairs=sum(len(b) for b, _ in g_up),
        lower_pairs=sum(len(b) for b, _ in g_lo),
        coverage=1.0,
        anomalies=anomalies,
        achieving_upper=locate(g_up, meta_up, arg_up),
        achieving_lower=locate(g_lo, meta_lo, arg_lo),
    )


def _shape_anomalies(kernel, ts, dist, comp_mask, nbins: int = 12) -> int:
    """Count distance bins whose median F increases with distance."""
    bad = 0
    for t in ts:
        f = kernel.steps[t] + kernel.steps[t + 1]
        sel = (dist >= 0) & (dist <= t) & (f > 0)
        if sel.sum() < 2 * nbins:
            continue
        dd = dist[sel]
        ff = f[sel]
        edges = np.quantile(dd, np.linspace(0, 1, nbins + 1))
        meds = []
        for i in range(nbins):
            pick = (dd >= edges[i]) & (dd <= edges[i + 1])
            if pick.any():
                meds.append(np.median(ff[pick]))
        bad += sum(1 for a, b in zip(meds, meds[1:]) if b > a * (1 + 1e-9))
    return bad


# ---------------------------------------------------------------------------
# Harnack ratios for harmonic functions
# ---------------------------------------------------------------------------


@dataclass
class HarnackReport:
    max_ratio: float
    ratios: list
    floored: int              # trials dropped for inf below 1e-12 of sup
    constant_ratio: float     # ratio for constant data; 1 up to solver noise
    trials: int


def harnack_ratio(
    g: Subgraph,
    y,
    R: int,
    boundary_trials: int = 64,
    rng: Optional[np.random.Generator] = None,
    include_indicators: bool = True,
) -> HarnackReport:
    """Worst sup/inf over B(y, R/2) of nonnegative discrete-harmonic functions
    on B(y, R) with random (and optionally single-vertex) boundary data on
    B(y, R+1) \\ B(y, R)."""
    rng = rng or np.random.default_rng(0)
    y = as_point(y)
    outer = graph_ball(g, y, R + 1)
    if outer.truncated:
        raise PreconditionError("B(y, R+1) exceeds the domain")
    inner = (outer.distances >= 0) & (outer.distances <= R)
    bnd = (outer.distances == R + 1)
    half = (outer.distances >= 0) & (outer.distances <= R // 2)
    if not bnd.any():
        raise PreconditionError("isolated boundary: the ball closes on itself")

    pts_in = np.argwhere(inner)
    pts_bd = np.argwhere(bnd)
    idx_in = -np.ones(g.bits.shape, dtype=np.int64)
    idx_in[inner] = np.arange(len(pts_in))
    idx_bd = -np.ones(g.bits.shape, dtype=np.int64)
    idx_bd[bnd] = np.arange(len(pts_bd))

    mu = g.degrees[inner].astype(float)
    rows_a, cols_a, vals_a = [], [], []
    rows_b, cols_b, vals_b = [], [], []
    for ax in range(g.d):
        for sgn in (1, -1):
            q = pts_in.copy()
            q[:, ax] += sgn
            ok = (q[:, ax] >= 0) & (q[:, ax] < g.bits.shape[ax])
            src = np.flatnonzero(ok)
            tgt_in = idx_in[tuple(q[ok].T)]
            tgt_bd = idx_bd[tuple(q[ok].T)]
            e = tgt_in >= 0
            rows_a.append(src[e])
            cols_a.append(tgt_in[e])
            vals_a.append(1.0 / mu[src[e]])
            eb = tgt_bd >= 0
            rows_b.append(src[eb])
            cols_b.append(tgt_bd[eb])
            vals_b.append(1.0 / mu[src[eb]])
    n, nb = len(pts_in), len(pts_bd)
    p_vv = sparse.csr_matrix(
        (np.concatenate(vals_a), (np.concatenate(rows_a), np.concatenate(cols_a))),
        shape=(n, n),
    )
    p_vb = sparse.csr_matrix(
        (np.concatenate(vals_b), (np.concatenate(rows_b), np.concatenate(cols_b))),
        shape=(n, nb),
    )
    from scipy.sparse.linalg import splu

    lu = splu((sparse.identity(n, format="csr") - p_vv).tocsc())
    half_idx = idx_in[half & inner]
    half_idx = half_idx[half_idx >= 0]

    def solve(data: np.ndarray):
        h = lu.solve(p_vb @ data)
        vals = h[half_idx]
        return float(vals.max()), float(vals.min())

    ones = np.ones(nb)
    s1, i1 = solve(ones)
    constant_ratio = s1 / i1

    ratios = []
    floored = 0
    datasets = [rng.random(nb) for _ in range(boundary_trials)]
    if include_indicators:
        datasets += [np.eye(nb)[j] for j in range(nb)]
    for data in datasets:
        sup, inf = solve(data)
        if sup <= 0:
            floored += 1
            continue
        if inf < 1e-12 * sup:
            floored += 1
            continue
        ratios.append(sup / inf)
    return HarnackReport(
        max_ratio=max(ratios) if ratios else math.inf,
        ratios=ratios,
        floored=floored,
        constant_ratio=constant_ratio,
        trials=len(datasets),
    )


# ---------------------------------------------------------------------------
# Green function, d >= 3
# ---------------------------------------------------------------------------


@dataclass
class GreenField:
    source: tuple
    window: Box
    values: np.ndarray        # over window sides; 0 outside the component
    guard_radius: int


def green_field(
    g: Subgraph, x, guard_radius: int, window: Optional[Box] = None
) -> GreenField:
    """g(x, .) on the cluster, walk killed on exiting the guard window.

    Solves the unit-conductance Dirichlet Laplacian L h = delta_x on the
    window (L uses the full cluster degrees, so mass leaks through the killed
    edges exactly as the stopped walk does).
    """
    if g.d < 3:
        raise UnsupportedError("green requires d >= 3 (the planar walk is recurrent)")
    x = as_point(x)
    if not g.sites.contains(x):
        raise PreconditionError(f"{x} unoccupied")
    if window is None:
        lo = tuple(xi - guard_radius for xi in x)
        hi = tuple(xi + guard_radius + 1 for xi in x)
        window = Box(lo, tuple(b - a for a, b in zip(lo, hi)))
    strict = Box(
        tuple(c + 1 for c in g.box.corner), tuple(s - 2 for s in g.box.sides)
    )
    if not strict.contains_box(window):
        # without sites beyond the window there is no absorption and the
        # stopped-walk Green function degenerates
        raise PreconditionError("guard window must lie strictly inside the domain")
    wsl = g.box.slice_of(window)
    mask = g.bits[wsl]
    pts = np.argwhere(mask)
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(len(pts))
    mu = g.degrees[wsl][mask].astype(float)
    rows, cols = [], []
    for ax in range(g.d):
        q = pts.copy()
        q[:, ax] += 1
        ok = q[:, ax] < mask.shape[ax]
        j = np.full(len(pts), -1, dtype=np.int64)
        j[ok] = idx[tuple(q[ok].T)]
        e = j >= 0
        rows.append(np.flatnonzero(e))
        cols.append(j[e])
    r = np.concatenate(rows + cols)
    c = np.concatenate(cols + rows)
    n = len(pts)
    lap = sparse.csr_matrix(
        (np.full(len(r), -1.0), (r, c)), shape=(n, n)
    ) + sparse.diags(mu)
    rhs = np.zeros(n)
    src = idx[window.rel(x)]
    if src < 0:
        raise PreconditionError("source fell outside the window mask")
    rhs[src] = 1.0
    from scipy.sparse.linalg import cg

    sol, ok = cg(lap, rhs, rtol=1e-10, maxiter=50_000)
    if ok != 0:
        raise PreconditionError(f"green CG did not converge (code {ok})")
    out = np.zeros(mask.shape)
    out[mask] = sol
    return GreenField(x, window, out, guard_radius)


@dataclass
class GreenValue:
    value: float
    sensitivity: float        # |value - value at 2x guard| / value
    guard_radius: int


def green(g: Subgraph, x, y, guard_factor: float = 4.0) -> GreenValue:
    """g(x, y) with a guard-sensitivity estimate (recompute at 2x guard)."""
    x, y = as_point(x), as_point(y)
    r0 = max(8, int(guard_factor * max(1, max(abs(a - b) for a, b in zip(x, y)))))
    f1 = green_field(g, x, r0)
    f2 = green_field(g, x, 2 * r0)
    v1 = float(f1.values[f1.window.rel(y)])
    v2 = float(f2.values[f2.window.rel(y)])
    sens = abs(v2 - v1) / v2 if v2 > 0 else math.inf
    return GreenValue(v2, sens, 2 * r0)


# ---------------------------------------------------------------------------
# invariance-principle statistics
# ---------------------------------------------------------------------------


@dataclass
class QipReport:
    captures: dict            # n -> (d, d) empirical covariance of X_n / sqrt(n)
    offdiag_se: dict          # n -> (d, d) standard errors
    trials: int
    boundary_touches: int


def qip_stats(
    g: Subgraph,
    x0,
    n: int,
    trials: int,
    rng: Optional[np.random.Generator] = None,
    capture_ns: Optional[Sequence[int]] = None,
) -> QipReport:
    """Batch-simulate walks on the cluster; empirical covariance of X_n/sqrt(n).

    The box must be large enough that walkers do not reach the faces; touches
    are counted (a touched face means the law is no longer the free one).
    """
    rng = rng or np.random.default_rng(0)
    x0 = as_point(x0)
    if not g.sites.contains(x0):
        raise PreconditionError(f"{x0} unoccupied")
    if g.mu(x0) == 0:
        raise DegenerateWalkError("isolated start")
    captures = sorted(set(capture_ns or [n]))
    if captures[-1] != n:
        raise PreconditionError("last capture must equal n")
    d = g.d
    shape = np.asarray(g.bits.shape)
    bits = g.bits
    pos = np.tile(np.asarray(g.box.rel(x0), dtype=np.int64), (trials, 1))
    start = pos.copy()
    touches = 0
    out_cov: dict = {}
    out_se: dict = {}
    cap_iter = iter(captures)
    next_cap = next(cap_iter)
    dirs = np.zeros((2 * d, d), dtype=np.int64)
    for ax in range(d):
        dirs[2 * ax, ax] = 1
        dirs[2 * ax + 1, ax] = -1
    for step in range(1, n + 1):
        occ = np.zeros((trials, 2 * d), dtype=np.int64)
        for k in range(2 * d):
            q = pos + dirs[k]
            inside = np.all((q >= 0) & (q < shape), axis=1)
            occk = np.zeros(trials, dtype=bool)
            occk[inside] = bits[tuple(q[inside].T)]
            occ[:, k] = occk
        mu = occ.sum(axis=1)
        u = rng.random(trials)
        target = np.floor(u * mu).astype(np.int64)
        cum = np.cumsum(occ, axis=1)
        choice = (cum <= target[:, None]).sum(axis=1)
        pos = pos + dirs[choice]
        on_face = np.any((pos == 0) | (pos == shape - 1), axis=1)
        touches += int(on_face.sum())
        if step == next_cap:
            disp = (pos - start) / math.sqrt(step)
            out_cov[step] = np.cov(disp.T, bias=True)
            prods = disp[:, :, None] * disp[:, None, :]
            out_se[step] = prods.std(axis=0) / math.sqrt(trials)
            try:
                next_cap = next(cap_iter)
            except StopIteration:
                next_cap = -1
    return QipReport(out_cov, out_se, trials, touches)


def gaussian_kernel(x: np.ndarray, sigma: np.ndarray, t: float) -> float:
    """Gaussian heat kernel (2 pi t)^{-d/2} det(Sigma)^{-1/2} e^{-x'S^{-1}x/2t}.

    This is the density the rescaled kernels converge to; the full-lattice
    baseline (sigma^2 = 1/2 per coordinate, m = 2d) pins the normalization.
    """
    d = len(x)
    det = float(np.linalg.det(sigma))
    quad = float(x @ np.linalg.solve(sigma, x))
    return (2.0 * math.pi * t) ** (-d / 2.0) * det**-0.5 * math.exp(-quad / (2.0 * t))


@dataclass
class LocalCltReport:
    rows: list                # (n, sup_error)

    def sup_errors(self) -> list:
        return [e for _, e in self.rows]


def local_clt_check(
    g: Subgraph,
    x0,
    ns: Sequence[int],
    sigma: np.ndarray,
    m: float,
    t: float = 1.0,
    grid_radius: float = 2.0,
    grid_step: float = 0.25,
) -> LocalCltReport:
    """sup_x |n^{d/2} F_{nt}(0, g_n(x)) - (2/m) k_{Sigma,t}(x)| on |x| <= radius.

    F is the parity-paired discrete kernel p_floor(nt) + p_floor(nt)+1 and
    g_n(x) the closest component site to x0 + sqrt(n) x.
    """
    x0 = as_point(x0)
    d = g.d
    steps_needed = sorted({int(math.floor(n * t)) for n in ns} | {int(math.floor(n * t)) + 1 for n in ns})
    kern = exact_kernel(g, x0, max(steps_needed), keep=steps_needed)
    comp_pts = kern.component_points
    rel0 = np.asarray(g.box.rel(x0))
    axes = np.arange(-grid_radius, grid_radius + 1e-9, grid_step)
    grid = np.array([p for p in np.stack(np.meshgrid(*([axes] * d)), axis=-1).reshape(-1, d)
                     if np.linalg.norm(p) <= grid_radius + 1e-12])
    rows = []
    for n in ns:
        k0 = int(math.floor(n * t))
        f = kern.steps[k0] + kern.steps[k0 + 1]
        sup_err = 0.0
        for x in grid:
            target = rel0 + np.sqrt(n) * x
            i = int(np.argmin(((comp_pts - target) ** 2).sum(axis=1)))
            val = n ** (d / 2.0) * float(f[i])
            ref = 2.0 / m * gaussian_kernel(x, sigma, t)
            sup_err = max(sup_err, abs(val - ref))
        rows.append((n, sup_err))
    return LocalCltReport(rows)


# ---------------------------------------------------------------------------
# annealed gradient of the heat kernel
# ---------------------------------------------------------------------------


@dataclass
class AnnealedGradientReport:
    ns: list
    estimates: list
    standard_errors: list
    fitted_power: float       # slope of log estimate vs log n


def annealed_gradient(
    model: ModelSpec,
    box: Box,
    x,
    x_prime,
    y,
    ns: Sequence[int],
    trials: int,
    seed: int = 0,
) -> AnnealedGradientReport:
    """E[(p_n(x, y) - p_{n-1}(x', y))^2; y and the edge (x, x') in the giant
    component] by Monte Carlo over configurations with exact kernels.

    Pairs (n, y) with n <= max(d(x, y), d(x', y)) are excluded (the bound's
    admissibility condition); here that is enforced per configuration.
    """
    x, xp, y = as_point(x), as_point(x_prime), as_point(y)
    if sum(abs(a - b) for a, b in zip(x, xp)) != 1:
        raise PreconditionError("x and x' must be lattice neighbors")
    ns = sorted(int(n) for n in ns)
    acc = {n: [] for n in ns}
    for tr in range(trials):
        snap = sample(model, box, spawn_seed(seed, "agrad", tr))
        g = snap.subgraph()
        if not (g.sites.contains(x) and g.sites.contains(xp) and g.sites.contains(y)):
            for n in ns:
                acc[n].append(0.0)
            continue
        comp = g.components
        lx = comp.labels[g.box.rel(x)]
        if comp.labels[g.box.rel(xp)] != lx or comp.labels[g.box.rel(y)] != lx:
            for n in ns:
                acc[n].append(0.0)
            continue
        keep_a = ns
        keep_b = [n - 1 for n in ns]
        ka = exact_kernel(g, x, max(ns), keep=keep_a)
        kb = exact_kernel(g, xp, max(ns) - 1, keep=keep_b)
        src = np.zeros(g.bits.shape, dtype=bool)
        src[g.box.rel(x)] = True
        dist_x = bfs_distances(g.bits, src)
        src[:] = False
        src[g.box.rel(xp)] = True
        dist_xp = bfs_distances(g.bits, src)
        dmax = max(int(dist_x[g.box.rel(y)]), int(dist_xp[g.box.rel(y)]))
        for n in ns:
            if n <= dmax:
                continue  # excluded by the admissibility condition
            val = (ka.p_at(n, y) - kb.p_at(n - 1, y)) ** 2
            acc[n].append(val)
    ests, ses = [], []
    for n in ns:
        arr = np.asarray(acc[n]) if acc[n] else np.zeros(1)
        ests.append(float(arr.mean()))
        ses.append(float(arr.std() / math.sqrt(max(1, len(arr)))))
    pos = [(n, e) for n, e in zip(ns, ests) if e > 0]
    if len(pos) >= 2:
        ln = np.log([n for n, _ in pos])
        le = np.log([e for _, e in pos])
        slope = float(np.polyfit(ln, le, 1)[0])
    else:
        slope = math.nan
    return AnnealedGradientReport(list(ns), ests, ses, slope)
