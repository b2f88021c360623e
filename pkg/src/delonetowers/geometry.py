"""Dimension-generic geometric kernel (d = 1 or 2).

Provides Voronoi complexes of finite point sets, packing/covering radii
and the half-open "star" tie-breaking predicate that turns a tiling into
an exact partition: a point on a shared face belongs to the cell that
still contains it after a perturbation by (eps, eps^2, ...) for every
sufficiently small eps > 0.  The predicate is evaluated symbolically
(lexicographic sign of the face normal), never by substituting a numeric
eps, so the resulting partition is exact.

All coordinates are float64.  A single global tolerance ``eps`` (scaled
to the data) separates genuine coincidences from float noise; the
generators in :mod:`delonetowers.delone` keep coordinate error several
orders of magnitude below it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .errors import (
    DegenerateInput,
    EmptyInput,
    UnassignedPuncture,
    UnsupportedDimension,
)

# Default tolerance: 1e-9 times the characteristic length (window span).
EPS_SCALE = 1e-9


def check_dim(d: int) -> None:
    if d not in (1, 2):
        raise UnsupportedDimension(f"dimension {d} not supported (only 1 and 2)")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi] in R^d."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_bounds(cls, lo, hi) -> "Box":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError(f"invalid box bounds {lo}, {hi}")
        check_dim(lo.size)
        return cls(lo, hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.span))

    def shrink(self, margin: float) -> "Box":
        """Box shrunk by ``margin`` on every face (may become empty)."""
        lo = self.lo + margin
        hi = self.hi - margin
        return Box(lo, hi)

    @property
    def empty(self) -> bool:
        return bool(np.any(self.hi <= self.lo))

    def contains(self, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside the closed box (inflated by slack)."""
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo - slack) & (pts <= self.hi + slack), axis=1)

    def contains_ball(self, center: np.ndarray, radius: float) -> bool:
        c = np.atleast_1d(center)
        return bool(np.all(c - radius >= self.lo) and np.all(c + radius <= self.hi))

    def as_tuple(self):
        return (self.lo.tolist(), self.hi.tolist())


def characteristic_eps(box: Box) -> float:
    """Default geometric tolerance for data living in ``box``."""
    return EPS_SCALE * float(np.max(box.span))


def tie_eps(points: np.ndarray) -> float:
    """Tolerance separating float noise from genuine distance differences.

    Coordinate differences carry at most a few ulp of the largest
    coordinate; genuinely distinct distances in the generated point sets
    differ by far more (a Diophantine gap for the quadratic-irrational
    generators).  128 ulp sits comfortably between the two regimes.
    """
    m = float(np.max(np.abs(points))) if points.size else 1.0
    return 128.0 * float(np.spacing(max(m, 1.0)))


def lex_sign(v: np.ndarray, eps: float) -> int:
    """Sign of v . (eps, eps^2, ..., eps^d) for all small eps > 0.

    Equals the sign of the first component of v that is nonzero within
    the tolerance; 0 if all components vanish.
    """
    for x in np.atleast_1d(v):
        if x > eps:
            return 1
        if x < -eps:
            return -1
    return 0


def lex_argmax(points: np.ndarray) -> int:
    """Index of the lexicographically largest row."""
    pts = np.atleast_2d(points)
    keys = tuple(pts[:, k] for k in reversed(range(pts.shape[1])))
    return int(np.lexsort(keys)[-1])


def dedupe_vertices(verts: np.ndarray, tol: float) -> np.ndarray:
    """Drop near-duplicate consecutive vertices of a polygon loop.

    Cocircular site quadruples (ubiquitous in product point sets) make
    qhull emit split vertices; genuine distinct vertices of our cells are
    separated by far more than the tolerance.
    """
    if verts.shape[0] <= 1 or verts.shape[1] == 1:
        return verts
    keep = [0]
    for k in range(1, len(verts)):
        if np.linalg.norm(verts[k] - verts[keep[-1]]) > tol:
            keep.append(k)
    if len(keep) > 1 and np.linalg.norm(verts[keep[-1]] - verts[keep[0]]) <= tol:
        keep.pop()
    return verts[keep]


def vertex_sets_match(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """True when every vertex of each set has a partner in the other
    within ``tol`` (robust to duplicate/split vertices)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    for p, q in ((a, b), (b, a)):
        for v in p:
            if np.min(np.linalg.norm(q - v, axis=1)) > tol:
                return False
    return True


@dataclass
class ConvexCell:
    """Bounded convex polytope with its Voronoi site.

    Constraints are in canonical outward form ``n . x <= b`` with unit
    normals.  ``neighbor_offsets[k]`` is the vector from the site to the
    site across face k (NaN rows for clipping faces), which lets callers
    reason about face adjacency without a global diagram.
    """

    site: np.ndarray
    normals: np.ndarray          # (m, d) unit outward normals
    offsets: np.ndarray          # (m,)
    vertices: np.ndarray         # (k, d); d=1: [[a],[b]]; d=2: ccw order
    neighbor_offsets: Optional[np.ndarray] = None
    clipped: bool = False

    @property
    def dim(self) -> int:
        return self.site.size

    def contains(self, p: np.ndarray, tol: float = 0.0) -> bool:
        p = np.atleast_1d(p)
        return bool(np.all(self.normals @ p - self.offsets <= tol))

    def volume(self) -> float:
        v = self.vertices
        if self.dim == 1:
            return float(v.max() - v.min())
        x, y = v[:, 0], v[:, 1]
        return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def circumradius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices - self.site, axis=1)))

    def inradius(self) -> float:
        return float(np.min(self.offsets - self.normals @ self.site))

    def translated(self, v: np.ndarray) -> "ConvexCell":
        v = np.atleast_1d(v)
        return ConvexCell(
            site=self.site + v,
            normals=self.normals,
            offsets=self.offsets + self.normals @ v,
            vertices=self.vertices + v,
            neighbor_offsets=self.neighbor_offsets,
            clipped=self.clipped,
        )

    def canonical_vertices(self) -> np.ndarray:
        """Vertices relative to the site, rolled to a deterministic start."""
        rel = self.vertices - self.site
        if self.dim == 1:
            return np.sort(rel, axis=0)
        start = np.lexsort((rel[:, 1], rel[:, 0]))[0]
        return np.roll(rel, -start, axis=0)


@dataclass(frozen=True)
class RadiiReport:
    """Packing and covering radii of a finite point set in a region."""

    packing_r: float
    covering_R: float
    valid_region: Box


def star_membership(cell: ConvexCell, p: np.ndarray, eps: float) -> bool:
    """Exact membership of ``p`` in the half-open star set of ``cell``.

    True iff p + (e, e^2, ..., e^d) lies in the cell for all sufficiently
    small e > 0: strictly inside every constraint, or on active
    constraints whose normal has negative lexicographic sign.
    """
    p = np.atleast_1d(p)
    slack = cell.normals @ p - cell.offsets
    if np.any(slack > eps):
        return False
    for k in np.flatnonzero(slack >= -eps):
        if lex_sign(cell.normals[k], eps) >= 0:
            return False
    return True


def _voronoi_cells_1d(order: np.ndarray, x: np.ndarray, region: Box,
                      eps: float) -> list:
    n = x.size
    cells: list = [None] * n
    for k in range(n):
        if k == 0 or k == n - 1:
            cells[order[k]] = _clipped_cell_1d(x, k, region)
            continue
        a = 0.5 * (x[k - 1] + x[k])
        b = 0.5 * (x[k] + x[k + 1])
        cells[order[k]] = ConvexCell(
            site=np.array([x[k]]),
            normals=np.array([[1.0], [-1.0]]),
            offsets=np.array([b, -a]),
            vertices=np.array([[a], [b]]),
            neighbor_offsets=np.array([[x[k + 1] - x[k]], [x[k - 1] - x[k]]]),
        )
    return cells


def _clipped_cell_1d(x: np.ndarray, k: int, region: Box) -> ConvexCell:
    a = 0.5 * (x[k - 1] + x[k]) if k > 0 else region.lo[0]
    b = 0.5 * (x[k] + x[k + 1]) if k < x.size - 1 else region.hi[0]
    return ConvexCell(
        site=np.array([x[k]]),
        normals=np.array([[1.0], [-1.0]]),
        offsets=np.array([b, -a]),
        vertices=np.array([[a], [b]]),
        clipped=True,
    )


def _voronoi_cells_2d(pts: np.ndarray, region: Box, eps: float) -> list:
    vor = Voronoi(pts)
    n = len(pts)
    # face data per site: (neighbor site, vertex pair) from the ridge list
    faces: list = [[] for _ in range(n)]
    for (i, j), rv in zip(vor.ridge_points, vor.ridge_vertices):
        faces[i].append((j, rv))
        faces[j].append((i, rv))
    cells: list = [None] * n
    for i in range(n):
        reg = vor.regions[vor.point_region[i]]
        clipped = (-1 in reg) or len(reg) == 0
        if not clipped:
            verts = vor.vertices[reg]
            clipped = not bool(np.all(region.contains(verts)))
        site = pts[i]
        normals, offsets, noff = [], [], []
        for j, rv in faces[i]:
            diff = pts[j] - site
            nrm = np.linalg.norm(diff)
            u = diff / nrm
            normals.append(u)
            offsets.append(float(u @ (site + 0.5 * diff)))
            noff.append(diff)
        if not normals:
            clipped = True
            normals = [np.array([1.0, 0.0])]
            offsets = [float(site[0])]
            noff = [np.array([np.nan, np.nan])]
        if clipped:
            verts = np.atleast_2d(site)
        else:
            verts = vor.vertices[reg]
            # order ccw around the site for stable comparisons and areas
            ang = np.arctan2(verts[:, 1] - site[1], verts[:, 0] - site[0])
            verts = dedupe_vertices(verts[np.argsort(ang, kind="stable")],
                                    10.0 * eps)
        cells[i] = ConvexCell(
            site=site,
            normals=np.array(normals),
            offsets=np.array(offsets),
            vertices=verts,
            neighbor_offsets=np.array(noff),
            clipped=clipped,
        )
    return cells


def voronoi_cells(points: np.ndarray, region: Box,
                  eps: Optional[float] = None) -> list:
    """Voronoi cells of ``points``, one ConvexCell per input point.

    Cells whose geometry depends on unseen data outside ``region`` are
    flagged ``clipped`` and must be excluded from radius and congruence
    statistics.  Interior cells satisfy the ball sandwich
    ``B_r(site) <= cell <= B_R(site)`` for the radii of the set.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise EmptyInput("voronoi_cells: no points")
    d = pts.shape[1]
    check_dim(d)
    if eps is None:
        eps = characteristic_eps(region)
    if pts.shape[0] == 1:
        raise EmptyInput("voronoi_cells: need at least 2 points")
    if d == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        x = pts[order, 0]
        if np.min(np.diff(x)) <= eps:
            raise DegenerateInput("coincident points within tolerance")
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        cells = _voronoi_cells_1d(inv, x, region, eps)
        return cells
    tree = cKDTree(pts)
    dd, _ = tree.query(pts, k=2)
    if np.min(dd[:, 1]) <= eps:
        raise DegenerateInput("coincident points within tolerance")
    return _voronoi_cells_2d(pts, region, eps)


def radii(points: np.ndarray, region: Box,
          eps: Optional[float] = None) -> RadiiReport:
    """Packing radius (half min pairwise gap) and empirical covering radius.

    The covering radius is the largest distance-to-nearest-point over the
    region, attained at a Voronoi vertex; only vertices whose empty ball
    lies fully inside ``region`` are trusted, and ``valid_region`` is the
    region shrunk by the resulting radius.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        raise EmptyInput("radii: need at least 2 points")
    d = pts.shape[1]
    check_dim(d)
    if eps is None:
        eps = characteristic_eps(region)
    if d == 1:
        x = np.sort(pts[:, 0], kind="stable")
        gaps = np.diff(x)
        if np.min(gaps) <= eps:
            raise DegenerateInput("coincident points within tolerance")
        r = 0.5 * float(np.min(gaps))
        # empty-ball candidates: gap midpoints plus the region ends
        mids = 0.5 * (x[:-1] + x[1:])
        rho = 0.5 * gaps
        ok = (mids - rho >= region.lo[0]) & (mids + rho <= region.hi[0])
        big_r = float(np.max(rho[ok])) if np.any(ok) else float("nan")
        end_lo = x[0] - region.lo[0]
        end_hi = region.hi[0] - x[-1]
        # an uncovered margin at the window ends caps the usable region,
        # it never certifies a covering radius
        if not np.any(ok):
            raise EmptyInput("radii: no trustworthy Voronoi vertex in region")
        del end_lo, end_hi
        return RadiiReport(r, big_r, region.shrink(big_r))
    tree = cKDTree(pts)
    dd, _ = tree.query(pts, k=2)
    r = 0.5 * float(np.min(dd[:, 1]))
    if r <= 0.5 * eps:
        raise DegenerateInput("coincident points within tolerance")
    vor = Voronoi(pts)
    verts = vor.vertices
    inside = region.contains(verts)
    if not np.any(inside):
        raise EmptyInput("radii: no Voronoi vertex inside region")
    rho, _ = tree.query(verts[inside])
    c = verts[inside]
    ok = np.all(c - rho[:, None] >= region.lo, axis=1) & np.all(
        c + rho[:, None] <= region.hi, axis=1)
    if not np.any(ok):
        raise EmptyInput("radii: no trustworthy Voronoi vertex in region")
    big_r = float(np.max(rho[ok]))
    return RadiiReport(r, big_r, region.shrink(big_r))


def assign_star_1d(sites_x: np.ndarray, px: np.ndarray, eps_tie: float) -> np.ndarray:
    """Star-partition assignment onto the Voronoi cells of sorted 1-d sites.

    A point within ``eps_tie`` of a cell boundary is treated as exactly on
    it and goes to the right cell (the +eps perturbation rule).  Returns
    the site index per point, or -1 where the point lies outside the
    convex hull of the sites.
    """
    n = sites_x.size
    idx = np.searchsorted(sites_x, px, side="left")
    out = np.full(px.shape, -1, dtype=np.int64)
    ok = (idx >= 1) & (idx <= n - 1)
    # points exactly at the first site are still covered
    at0 = (idx == 0) & (np.abs(px - sites_x[0]) <= eps_tie)
    out[at0] = 0
    i = idx[ok]
    d_left = px[ok] - sites_x[i - 1]
    d_right = sites_x[i] - px[ok]
    out[ok] = np.where(d_left < d_right - eps_tie, i - 1, i)
    return out


def assign_star_nd(sites: np.ndarray, pts: np.ndarray, eps_tie: float,
                   tree: Optional[cKDTree] = None) -> np.ndarray:
    """Star-partition assignment in d >= 2: nearest site, ties going to the
    lexicographically largest tied site (equivalent to the symbolic star
    rule on Voronoi cells)."""
    if tree is None:
        tree = cKDTree(sites)
    k = min(8, len(sites))
    dd, ii = tree.query(pts, k=k)
    dd = np.atleast_2d(dd)
    ii = np.atleast_2d(ii)
    out = ii[:, 0].astype(np.int64)
    tied = dd[:, 1] - dd[:, 0] <= eps_tie
    for row in np.flatnonzero(tied):
        cand = ii[row][dd[row] - dd[row, 0] <= eps_tie]
        out[row] = cand[lex_argmax(sites[cand])]
    return out


def star_partition_assign(cells: Sequence[ConvexCell], punctures: np.ndarray,
                          eps: float) -> np.ndarray:
    """Assign each puncture to the unique cell whose star set contains it.

    ``cells`` must form a Voronoi complex of their sites (the only kind of
    tiling produced by this package); for those, the star rule reduces to
    nearest-site with lexicographic tie-breaking, which is what the fast
    paths implement.  Membership is verified against the winner's star
    set and :class:`UnassignedPuncture` is raised on failure.
    """
    pts = np.atleast_2d(np.asarray(punctures, dtype=float))
    if len(cells) == 0 or pts.shape[0] == 0:
        raise EmptyInput("star_partition_assign: empty input")
    sites = np.array([c.site for c in cells])
    et = tie_eps(np.vstack([sites, pts]))
    if sites.shape[1] == 1:
        order = np.argsort(sites[:, 0], kind="stable")
        raw = assign_star_1d(sites[order, 0], pts[:, 0], et)
        bad = raw < 0
        assigned = np.where(raw >= 0, order[np.clip(raw, 0, None)], -1)
    else:
        assigned = assign_star_nd(sites, pts, et)
        bad = np.zeros(len(pts), dtype=bool)
    for row in range(pts.shape[0]):
        if bad[row] or not star_membership(cells[assigned[row]], pts[row], eps):
            raise UnassignedPuncture(
                f"puncture {pts[row]} outside every cell (window too small?)")
    return assigned
