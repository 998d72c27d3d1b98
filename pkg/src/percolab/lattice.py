"""Geometry of Z^d boxes and induced subgraphs of occupied sites.

A configuration lives in an axis-aligned box. Occupied sites form a subgraph
with edges between occupied sites at l1-distance 1; edges never cross box
faces, and neighborhood queries are clipped to the box. The vertex measure mu
assigns each occupied site its number of occupied neighbors, the edge measure
nu is 1 on every present edge.

Rescaled lattices G_n = L_n * Z^d are handled by stride arithmetic (GridSet),
never materialized as site lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import PreconditionError, UnsupportedError

Point = tuple  # d-tuple of ints

# Components larger than this use the coordinate-bounding-box l1 diameter
# (an upper bound on the true pairwise max); smaller ones are exact.
EXACT_DIAMETER_MAX_SITES = 64


def as_point(p: Sequence[int]) -> Point:
    return tuple(int(c) for c in p)


def l1(p: Sequence[int], q: Sequence[int]) -> int:
    return int(sum(abs(int(a) - int(b)) for a, b in zip(p, q)))


def linf(p: Sequence[int], q: Sequence[int]) -> int:
    return int(max(abs(int(a) - int(b)) for a, b in zip(p, q)))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box corner + [0, sides) in Z^d."""

    corner: Point
    sides: tuple

    def __post_init__(self):
        object.__setattr__(self, "corner", as_point(self.corner))
        object.__setattr__(self, "sides", tuple(int(s) for s in self.sides))
        if len(self.corner) != len(self.sides):
            raise PreconditionError("corner and sides must have equal length")
        if len(self.sides) < 2:
            raise PreconditionError("dimension must be >= 2")
        if any(s < 1 for s in self.sides):
            raise PreconditionError("all box sides must be >= 1")

    @property
    def d(self) -> int:
        return len(self.sides)

    @property
    def site_count(self) -> int:
        n = 1
        for s in self.sides:
            n *= s
        return n

    def contains_point(self, p: Sequence[int]) -> bool:
        return all(c <= x < c + s for x, c, s in zip(p, self.corner, self.sides))

    def contains_box(self, other: "Box") -> bool:
        return all(
            self.corner[i] <= other.corner[i]
            and other.corner[i] + other.sides[i] <= self.corner[i] + self.sides[i]
            for i in range(self.d)
        )

    def rel(self, p: Sequence[int]) -> Point:
        """Box-relative coordinates of an absolute point."""
        return tuple(int(x) - c for x, c in zip(p, self.corner))

    def abs(self, idx: Sequence[int]) -> Point:
        return tuple(c + int(i) for i, c in zip(idx, self.corner))

    def slice_of(self, other: "Box") -> tuple:
        """Index slices selecting `other` inside an array shaped like self."""
        if not self.contains_box(other):
            raise PreconditionError("sub-box not contained in box")
        r = self.rel(other.corner)
        return tuple(slice(r[i], r[i] + other.sides[i]) for i in range(self.d))


def shift_no_wrap(a: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Shift a bool/float array along an axis, padding with zeros (no wrap)."""
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if step > 0:
        src[axis] = slice(0, a.shape[axis] - step)
        dst[axis] = slice(step, None)
    elif step < 0:
        src[axis] = slice(-step, None)
        dst[axis] = slice(0, a.shape[axis] + step)
    else:
        return a.copy()
    out[tuple(dst)] = a[tuple(src)]
    return out


def neighbor_dilate(mask: np.ndarray) -> np.ndarray:
    """Sites at l1-distance exactly 1 from the mask (clipped to the array)."""
    out = np.zeros_like(mask)
    for ax in range(mask.ndim):
        out |= shift_no_wrap(mask, ax, 1)
        out |= shift_no_wrap(mask, ax, -1)
    return out


@dataclass
class SiteSet:
    """Occupancy bits over a box, row-major."""

    box: Box
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=bool)
        if self.bits.shape != self.box.sides:
            raise PreconditionError(
                f"bit array shape {self.bits.shape} != box sides {self.box.sides}"
            )

    @classmethod
    def empty(cls, box: Box) -> "SiteSet":
        return cls(box, np.zeros(box.sides, dtype=bool))

    @classmethod
    def full(cls, box: Box) -> "SiteSet":
        return cls(box, np.ones(box.sides, dtype=bool))

    @classmethod
    def from_points(cls, box: Box, points: Iterable[Sequence[int]]) -> "SiteSet":
        bits = np.zeros(box.sides, dtype=bool)
        for p in points:
            if not box.contains_point(p):
                raise PreconditionError(f"point {tuple(p)} outside box")
            bits[box.rel(p)] = True
        return cls(box, bits)

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def points(self) -> np.ndarray:
        """(n, d) array of absolute coordinates of occupied sites."""
        idx = np.argwhere(self.bits)
        return idx + np.asarray(self.box.corner)

    def contains(self, p: Sequence[int]) -> bool:
        return self.box.contains_point(p) and bool(self.bits[self.box.rel(p)])

    def _check_same_box(self, other: "SiteSet"):
        if self.box != other.box:
            raise PreconditionError("set algebra requires identical boxes")

    def union(self, other: "SiteSet") -> "SiteSet":
        self._check_same_box(other)
        return SiteSet(self.box, self.bits | other.bits)

    def intersection(self, other: "SiteSet") -> "SiteSet":
        self._check_same_box(other)
        return SiteSet(self.box, self.bits & other.bits)

    def difference(self, other: "SiteSet") -> "SiteSet":
        self._check_same_box(other)
        return SiteSet(self.box, self.bits & ~other.bits)

    def complement(self) -> "SiteSet":
        return SiteSet(self.box, ~self.bits)

    def issubset(self, other: "SiteSet") -> bool:
        self._check_same_box(other)
        return bool(np.all(~self.bits | other.bits))


@dataclass
class ComponentLabeling:
    """Partition of occupied sites into l1-connected components.

    labels: 0 on empty sites, 1..n_components on occupied ones.
    diameter[k] is the l1 diameter of component k+1; exact for components of
    at most EXACT_DIAMETER_MAX_SITES sites, otherwise the coordinate
    bounding-box l1 diameter, which upper-bounds the true one
    (diameter_exact[k] records which).
    """

    labels: np.ndarray
    sizes: np.ndarray          # (n_components,)
    diameter: np.ndarray       # (n_components,) int
    diameter_exact: np.ndarray  # (n_components,) bool

    @property
    def n_components(self) -> int:
        return len(self.sizes)


_structures = {}


def _cross_structure(d: int) -> np.ndarray:
    if d not in _structures:
        _structures[d] = ndimage.generate_binary_structure(d, 1)
    return _structures[d]


def label_mask(mask: np.ndarray) -> tuple:
    """scipy label with l1 (cross) connectivity; returns (labels, n)."""
    labels, n = ndimage.label(mask, structure=_cross_structure(mask.ndim))
    return labels, int(n)


def _component_geometry(labels: np.ndarray, n: int) -> tuple:
    """Per-component size, per-axis min/max, exact small-component diameter."""
    d = labels.ndim
    coords = np.argwhere(labels > 0)
    labs = labels[labels > 0]
    sizes = np.bincount(labs, minlength=n + 1)[1:]
    mins = np.full((n + 1, d), np.iinfo(np.int64).max, dtype=np.int64)
    maxs = np.full((n + 1, d), np.iinfo(np.int64).min, dtype=np.int64)
    for ax in range(d):
        np.minimum.at(mins[:, ax], labs, coords[:, ax])
        np.maximum.at(maxs[:, ax], labs, coords[:, ax])
    bbox_diam = (maxs[1:] - mins[1:]).sum(axis=1)
    exact = sizes <= EXACT_DIAMETER_MAX_SITES
    diam = bbox_diam.copy()
    if np.any(exact):
        order = np.argsort(labs, kind="stable")
        sorted_coords = coords[order]
        sorted_labs = labs[order]
        starts = np.searchsorted(sorted_labs, np.arange(1, n + 2))
        for k in np.flatnonzero(exact):
            pts = sorted_coords[starts[k]:starts[k + 1]]
            if len(pts) > 1:
                dist = np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=2)
                diam[k] = int(dist.max())
            else:
                diam[k] = 0
    return sizes, diam, exact


class Subgraph:
    """Induced subgraph of occupied sites with implicit l1 edges."""

    def __init__(self, sites: SiteSet):
        self.sites = sites

    @classmethod
    def from_mask(cls, box: Box, mask: np.ndarray) -> "Subgraph":
        return cls(SiteSet(box, mask))

    @property
    def box(self) -> Box:
        return self.sites.box

    @property
    def d(self) -> int:
        return self.sites.d

    @property
    def bits(self) -> np.ndarray:
        return self.sites.bits

    @cached_property
    def degrees(self) -> np.ndarray:
        """mu_x: occupied-neighbor count per site (0 on empty sites)."""
        bits = self.bits
        deg = np.zeros(bits.shape, dtype=np.int16)
        for ax in range(self.d):
            deg += shift_no_wrap(bits, ax, 1).astype(np.int16)
            deg += shift_no_wrap(bits, ax, -1).astype(np.int16)
        deg[~bits] = 0
        return deg

    def mu(self, p: Sequence[int]) -> int:
        if not self.sites.contains(p):
            return 0
        return int(self.degrees[self.box.rel(p)])

    @cached_property
    def mu_total(self) -> int:
        return int(self.degrees.sum())

    @cached_property
    def edge_count(self) -> int:
        return self.mu_total // 2

    @cached_property
    def components(self) -> ComponentLabeling:
        labels, n = label_mask(self.bits)
        sizes, diam, exact = _component_geometry(labels, n)
        return ComponentLabeling(labels, sizes, diam, exact)


def connected_components(g: Subgraph) -> ComponentLabeling:
    """Label occupied sites by component; two sites share a label iff they
    are connected by occupied l1-paths inside the box."""
    return g.components


def diameter_filter(g: Subgraph, r) -> SiteSet:
    """S_r: occupied sites in components of l1-diameter >= r.

    r must be a finite nonnegative integer: the infinite-diameter set S_inf
    has no finite-box definition (use r = box side as a proxy).
    """
    if r is None or (isinstance(r, float) and not np.isfinite(r)):
        raise UnsupportedError("infinite diameter filter is undefined on a finite box")
    r = int(r)
    if r < 0:
        raise PreconditionError("r must be nonnegative")
    if r == 0:
        return SiteSet(g.box, g.bits.copy())
    comp = g.components
    keep = np.zeros(comp.n_components + 1, dtype=bool)
    keep[1:] = comp.diameter >= r
    return SiteSet(g.box, keep[comp.labels])


def boundary_edges(A: SiteSet, g: Subgraph) -> tuple:
    """Edge boundary of A in g: edges {x, y} of g with x in A, y in g \\ A.

    Returns (count, edges) with edges an (m, 2, d) int array of absolute
    coordinates (x first).
    """
    if A.box != g.box:
        raise PreconditionError("A must live on the subgraph's box")
    if not A.issubset(g.sites):
        raise PreconditionError("A must be a subset of the occupied sites")
    a = A.bits
    other = g.bits & ~a
    pieces = []
    for ax in range(A.d):
        for step in (1, -1):
            hit = a & shift_no_wrap(other, ax, -step)
            if not hit.any():
                continue
            xs = np.argwhere(hit)
            ys = xs.copy()
            ys[:, ax] += step
            pieces.append(np.stack([xs, ys], axis=1))
    if pieces:
        edges = np.concatenate(pieces, axis=0) + np.asarray(A.box.corner)
    else:
        edges = np.zeros((0, 2, A.d), dtype=np.int64)
    return len(edges), edges


def boundary_count(mask: np.ndarray, ambient: np.ndarray) -> int:
    """|edges between mask and ambient & ~mask| (mask must lie in ambient)."""
    other = ambient & ~mask
    n = 0
    for ax in range(mask.ndim):
        n += int((mask & shift_no_wrap(other, ax, -1)).sum())
        n += int((mask & shift_no_wrap(other, ax, 1)).sum())
    return n


def zd_boundary_count(mask: np.ndarray) -> int:
    """|edges between mask and Z^d \\ mask| (full-lattice complement)."""
    d = mask.ndim
    n = 2 * d * int(mask.sum())
    for ax in range(d):
        n -= 2 * int((mask & shift_no_wrap(mask, ax, 1)).sum())
    return n


def bfs_distances(
    bits: np.ndarray,
    sources: np.ndarray,
    max_depth: Optional[int] = None,
) -> np.ndarray:
    """Graph distances from a source mask within the occupied mask.

    Returns an int32 array, -1 for unreached sites. Frontier expansion is
    array-parallel, cost O(depth * box).
    """
    dist = np.full(bits.shape, -1, dtype=np.int32)
    frontier = sources & bits
    dist[frontier] = 0
    depth = 0
    while frontier.any():
        if max_depth is not None and depth >= max_depth:
            break
        nxt = neighbor_dilate(frontier) & bits & (dist < 0)
        depth += 1
        dist[nxt] = depth
        frontier = nxt
    return dist


@dataclass
class GraphBall:
    """B_g(x, r) with its mu-measure and a face-truncation flag."""

    center: Point
    radius: int
    sites: SiteSet
    mu: int
    truncated: bool
    distances: np.ndarray  # -1 outside the ball


def graph_ball(g: Subgraph, x: Sequence[int], r: int) -> GraphBall:
    """BFS ball under the graph distance of g.

    The truncated flag is set when the ball touches a box face, in which case
    the ball may differ from the one in a larger domain.
    """
    x = as_point(x)
    if r < 0:
        raise PreconditionError("radius must be nonnegative")
    if not g.sites.contains(x):
        raise PreconditionError(f"center {x} is not an occupied site")
    src = np.zeros(g.bits.shape, dtype=bool)
    src[g.box.rel(x)] = True
    dist = bfs_distances(g.bits, src, max_depth=r)
    inside = dist >= 0
    touched = False
    for ax in range(g.d):
        first = np.take(inside, 0, axis=ax)
        last = np.take(inside, -1, axis=ax)
        if first.any() or last.any():
            touched = True
            break
    ball = SiteSet(g.box, inside)
    mu = int(g.degrees[inside].sum())
    dist = np.where(inside, dist, -1)
    return GraphBall(x, r, ball, mu, touched, dist)


@dataclass(frozen=True)
class GridSet:
    """A subset of the rescaled lattice G_step = origin + step * Z^d.

    Vertices are grid points origin + step * idx for idx in [0, shape); the
    mask selects members. Edges of the G_step graph join vertices at l1
    distance `step`.
    """

    origin: Point
    step: int
    mask: np.ndarray = field(compare=False)

    @property
    def d(self) -> int:
        return len(self.origin)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def vertex_points(self) -> np.ndarray:
        idx = np.argwhere(self.mask)
        return idx * self.step + np.asarray(self.origin)

    def is_connected(self) -> bool:
        if self.count == 0:
            return False
        _, n = label_mask(self.mask)
        return n == 1

    def refine(self, factor: int) -> "GridSet":
        """The same region on the grid with step/factor (block upsample)."""
        m = self.mask
        for ax in range(m.ndim):
            m = np.repeat(m, factor, axis=ax)
        return GridSet(self.origin, self.step // factor, m)
