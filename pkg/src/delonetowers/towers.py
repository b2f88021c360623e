"""Hierarchical box-decomposition towers on a point-set window.

Level 0 is built from the Voronoi cells of the occurrence set of the
small central patch (one tile shape per surrounding-pattern class).  Each
further level "zooms out": its punctures are the occurrences of a larger
central patch, its tiles are unions of previous-level tiles whose
punctures fall in the half-open star set of the new Voronoi cells, and
the integer transition matrix counts previous-class punctures inside each
new tile.  Tile geometry is stored hierarchically (child placements down
to level-0 convex cells), which makes the volume identity and the
exact-decomposition checks combinatorial rather than boolean-geometric.

All window-truncation bookkeeping is explicit: every level carries the
region where its data is trusted, and verification routines recount the
construction from the punctures alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .delone import (
    DeloneWindow,
    Patch,
    PatternClassId,
    classify_centers,
    match_centers,
    patch_at,
    SCHEMA_VERSION,
)
from .errors import (
    CongruenceFailure,
    EmptyLevel,
    HypothesisViolation,
    IndexOutOfRange,
    PeriodicInput,
    WindowExhausted,
    WindowTooSmall,
)
from .geometry import (
    Box,
    ConvexCell,
    assign_star_1d,
    assign_star_nd,
    dedupe_vertices,
    radii,
    tie_eps,
    vertex_sets_match,
)


# ------------------------------------------------------------------- params

def theorem_constants(L: float, K: float):
    """Geometry constants of the tower bounds for repetitivity constant L
    and scale factor K: K1 = 1/(2(L+1)) - L/(K-1), K2 = L K/(K-1)."""
    k1 = 1.0 / (2.0 * (L + 1.0)) - L / (K - 1.0)
    k2 = L * K / (K - 1.0)
    return k1, k2


def required_K(L: float) -> float:
    """Smallest scale factor for which the sufficiency bound holds."""
    return 6.0 * L * (L + 1.0) ** 2


@dataclass
class TowerParams:
    """Construction parameters: base radius s0, scale K (s_n = K^n s0),
    depth n_max, repetitivity estimate L_hat, and flags."""

    s0: float
    K: float
    n_max: int
    L_hat: float
    enforce_theorem_K: bool = False
    strict: bool = False

    def validate(self) -> None:
        if self.s0 <= 0 or self.K <= 1 or self.n_max < 1:
            raise WindowTooSmall(
                f"invalid tower params s0={self.s0} K={self.K} n_max={self.n_max}")
        if self.enforce_theorem_K and self.K < required_K(self.L_hat) - 1e-9:
            raise HypothesisViolation(
                f"K={self.K} below the sufficiency bound "
                f"{required_K(self.L_hat):.3f} for L_hat={self.L_hat:.3f}")

    def s_n(self, n: int) -> float:
        return self.s0 * self.K ** n

    def to_dict(self) -> dict:
        return {"s0": self.s0, "K": self.K, "n_max": self.n_max,
                "L_hat": self.L_hat,
                "enforce_theorem_K": self.enforce_theorem_K,
                "strict": self.strict}


# ----------------------------------------------------------- level-0 complex

class Level0Complex:
    """Voronoi complex of the level-0 punctures, with assignment and
    adjacency queries.  d = 1 uses sorted midpoints; d = 2 uses one global
    scipy Voronoi diagram."""

    def __init__(self, punctures: np.ndarray, window: Box, eps: float):
        self.punctures = punctures
        self.window = window
        self.eps = eps
        self.dim = punctures.shape[1]
        self.eps_tie = tie_eps(punctures)
        if self.dim == 1:
            x = punctures[:, 0]
            self.mids = 0.5 * (x[:-1] + x[1:])
            self._vor = None
            self._tree = None
        else:
            self._vor = Voronoi(punctures)
            self._tree = cKDTree(punctures)
            n = len(punctures)
            self.adjacency = [[] for _ in range(n)]
            for (i, j), rv in zip(self._vor.ridge_points, self._vor.ridge_vertices):
                self.adjacency[i].append((j, tuple(rv)))
                self.adjacency[j].append((i, tuple(rv)))

    def assign(self, pts: np.ndarray) -> np.ndarray:
        """Star-partition assignment of arbitrary points onto level-0
        cells; -1 outside the covered range."""
        pts = np.atleast_2d(pts)
        if self.dim == 1:
            return assign_star_1d(self.punctures[:, 0], pts[:, 0], self.eps_tie)
        return assign_star_nd(self.punctures, pts, self.eps_tie, self._tree)

    def neighbors(self, i: int):
        if self.dim == 1:
            out = []
            if i > 0:
                out.append((i - 1, None))
            if i < len(self.punctures) - 1:
                out.append((i + 1, None))
            return out
        return self.adjacency[i]

    def cell_interval(self, i: int):
        """(left, right) bounds of cell i (dim 1)."""
        x = self.punctures[:, 0]
        lo = self.mids[i - 1] if i > 0 else -np.inf
        hi = self.mids[i] if i < x.size - 1 else np.inf
        return lo, hi

    def canonical_cell(self, i: int) -> ConvexCell:
        """Cell of puncture i translated so the site is at the origin."""
        if self.dim == 1:
            lo, hi = self.cell_interval(i)
            site = self.punctures[i, 0]
            a, b = lo - site, hi - site
            nb = [self.punctures[i + 1, 0] - site if i + 1 < len(self.punctures) else np.nan,
                  self.punctures[i - 1, 0] - site if i > 0 else np.nan]
            return ConvexCell(site=np.zeros(1),
                              normals=np.array([[1.0], [-1.0]]),
                              offsets=np.array([b, -a]),
                              vertices=np.array([[a], [b]]),
                              neighbor_offsets=np.array([[nb[0]], [nb[1]]]))
        site = self.punctures[i]
        normals, offsets, noff = [], [], []
        verts_idx: set = set()
        for j, rv in self.adjacency[i]:
            diff = self.punctures[j] - site
            u = diff / np.linalg.norm(diff)
            normals.append(u)
            offsets.append(float(u @ (0.5 * diff)))
            noff.append(diff)
            verts_idx.update(v for v in rv if v >= 0)
        verts = self._vor.vertices[sorted(verts_idx)] - site
        ang = np.arctan2(verts[:, 1], verts[:, 0])
        verts = dedupe_vertices(verts[np.argsort(ang, kind="stable")],
                                10.0 * self.eps)
        return ConvexCell(site=np.zeros(2), normals=np.array(normals),
                          offsets=np.array(offsets), vertices=verts,
                          neighbor_offsets=np.array(noff))

    def face_segment(self, i: int, j: int, rv) -> np.ndarray:
        """Vertices of the face between cells i and j (absolute coords)."""
        if self.dim == 1:
            m = 0.5 * (self.punctures[i, 0] + self.punctures[j, 0])
            return np.array([[m]])
        return self._vor.vertices[list(rv)]


# -------------------------------------------------------------------- shapes

@dataclass
class TileShape:
    """One tile class: a finite union of level-0 convex cells, stored as
    child placements of the previous level (level 0 stores the cell
    itself).  The anchor (puncture) is at the origin, strictly interior."""

    level: int
    class_index: int
    dim: int
    volume: float
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    r_in: float
    R_out: float
    cell: Optional[ConvexCell] = None              # level 0 only
    children_offsets: Optional[np.ndarray] = None  # (m, d)
    children_classes: Optional[np.ndarray] = None  # (m,)
    flat_offsets: Optional[np.ndarray] = None      # (M, d) level-0 placements
    flat_classes: Optional[np.ndarray] = None      # (M,)

    @property
    def n_children(self) -> int:
        return 0 if self.children_offsets is None else len(self.children_offsets)


def _flatten(shape: TileShape, prev_shapes: Optional[list]):
    if shape.cell is not None:
        return (np.zeros((1, shape.dim)),
                np.array([shape.class_index], dtype=np.int64))
    offs, classes = [], []
    for off, cls in zip(shape.children_offsets, shape.children_classes):
        sub = prev_shapes[cls]
        offs.append(sub.flat_offsets + off)
        classes.append(sub.flat_classes)
    return np.vstack(offs), np.concatenate(classes)


def _segment_distance(p: np.ndarray, seg: np.ndarray) -> float:
    """Distance from point p to a segment (or single point) in R^2."""
    if seg.shape[0] == 1:
        return float(np.linalg.norm(p - seg[0]))
    a, b = seg
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


# -------------------------------------------------------------------- levels

@dataclass
class LevelStats:
    r_int: float
    R_ext: float
    rec_bound: float
    r_C: float
    R_C: float


@dataclass
class TowerLevel:
    n: int
    s_n: float
    k_n: float
    punctures: np.ndarray            # (m, d) sorted lexicographically
    labels: np.ndarray               # (m,) class index, -1 unclassified
    classes: list                    # PatternClassId per class
    class_reps: np.ndarray           # (t,) puncture index of trusted rep
    shapes: list                     # TileShape per class
    valid_region: Box
    stats: LevelStats
    trusted: np.ndarray              # (m,) bool

    @property
    def t(self) -> int:
        return len(self.classes)

    @property
    def n_punctures(self) -> int:
        return len(self.punctures)

    def class_counts(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        lab = self.labels if mask is None else self.labels[mask]
        lab = lab[lab >= 0]
        return np.bincount(lab, minlength=self.t)


@dataclass
class TransitionMatrix:
    """Integer crossing counts between consecutive levels.

    ``entries[i, j]`` counts previous-level class-j punctures inside the
    class-i tile; ``offsets[(i, j)]`` lists their positions relative to
    the tile anchor."""

    n: int
    entries: np.ndarray              # (t_n, t_{n-1}) int64
    offsets: dict

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def norm_inf(self) -> float:
        return float(np.max(self.entries.sum(axis=1)))

    def norm_1(self) -> float:
        return float(np.max(self.entries.sum(axis=0)))

    def min_entry(self) -> int:
        return int(self.entries.min())


# -------------------------------------------------------------- construction

def _reorder_origin_first(labels, ids, reps, origin_label):
    """Permute class indices so the origin's class has index 0."""
    if origin_label == 0:
        return labels, ids, reps
    perm = list(range(len(ids)))
    perm.remove(origin_label)
    perm = [origin_label] + perm
    inv = np.empty(len(ids), dtype=np.int64)
    for new, old in enumerate(perm):
        inv[old] = new
    new_labels = np.where(labels >= 0, inv[np.clip(labels, 0, None)], -1)
    return new_labels, [ids[p] for p in perm], reps[perm]


def _classify_level(X: DeloneWindow, punctures: np.ndarray, k: float):
    """Labels of the k-patches at punctures (only where the k-ball fits),
    with the origin's class first."""
    fit = X.region_for_radius(k)
    if fit.empty:
        raise WindowTooSmall(f"window cannot hold any {k}-patch")
    mask = fit.contains(punctures, slack=X.eps)
    if not np.any(mask):
        raise EmptyLevel(f"no puncture admits a {k}-patch")
    sub = punctures[mask]
    sub_labels, ids, sub_reps = classify_centers(X, sub, k)
    labels = np.full(len(punctures), -1, dtype=np.int64)
    labels[mask] = sub_labels
    idx_map = np.flatnonzero(mask)
    reps = idx_map[sub_reps]
    origin_idx = _index_of_origin(punctures, X.eps)
    if origin_idx < 0 or labels[origin_idx] < 0:
        raise EmptyLevel("origin puncture is unclassified; window too small")
    labels, ids, reps = _reorder_origin_first(labels, ids, reps,
                                              int(labels[origin_idx]))
    return labels, ids, reps


def _index_of_origin(punctures: np.ndarray, eps: float) -> int:
    i = np.searchsorted(punctures[:, 0], -eps, side="left")
    while i < len(punctures) and punctures[i, 0] <= eps:
        if np.all(np.abs(punctures[i]) <= eps):
            return int(i)
        i += 1
    return -1


def find_rows(sorted_pts: np.ndarray, queries: np.ndarray,
              eps: float) -> np.ndarray:
    """Index in a lex-sorted point array of each query row (within eps),
    or -1 when absent."""
    x = sorted_pts[:, 0]
    q = np.atleast_2d(queries)
    out = np.full(len(q), -1, dtype=np.int64)
    lo = np.searchsorted(x, q[:, 0] - eps, side="left")
    hi = np.searchsorted(x, q[:, 0] + eps, side="right")
    for i in range(len(q)):
        seg = sorted_pts[lo[i]:hi[i]]
        if seg.shape[0] == 0:
            continue
        if sorted_pts.shape[1] == 1:
            j = int(np.argmin(np.abs(seg[:, 0] - q[i, 0])))
            if abs(seg[j, 0] - q[i, 0]) <= eps:
                out[i] = lo[i] + j
        else:
            j = int(np.searchsorted(seg[:, 1], q[i, 1] - eps, side="left"))
            while j < seg.shape[0] and seg[j, 1] <= q[i, 1] + eps:
                if np.all(np.abs(seg[j] - q[i]) <= eps):
                    out[i] = lo[i] + j
                    break
                j += 1
    return out


def _cell_complete_mask(punctures: np.ndarray, dim: int) -> np.ndarray:
    ok = np.ones(len(punctures), dtype=bool)
    if dim == 1:
        ok[0] = ok[-1] = False
    return ok


def base_decomposition(X: DeloneWindow, s0: float,
                       k0: Optional[float] = None,
                       allow_periodic: bool = False,
                       strict: bool = False):
    """Level 0: punctures are the occurrences of the s0-patch at the
    origin, classified by their k0-patch; tile shapes are the Voronoi
    cells of the puncture set (congruent across each class).

    Returns (TowerLevel, Level0Complex).
    """
    if X.periodic and not allow_periodic:
        raise PeriodicInput("tower construction requires an aperiodic generator")
    rep_patch = patch_at(X, np.zeros(X.dim), s0)
    region = X.region_for_radius(s0)
    cand = X.points[region.contains(X.points, slack=X.eps)]
    punct = cand[match_centers(X, cand, rep_patch)]
    if len(punct) < 3:
        raise EmptyLevel(f"only {len(punct)} occurrences of the s0-patch")
    rad = radii(punct, region, X.eps)
    r_c, big_r = rad.packing_r, rad.covering_R
    if k0 is None:
        k0 = 2.0 * big_r + s0
    hyp_ok = k0 >= 2.0 * big_r + s0 - 3.0 * X.eps
    if strict and not hyp_ok:
        raise HypothesisViolation(
            f"k0={k0:.6g} < 2 R(C0)+s0 = {2 * big_r + s0:.6g}")

    labels, ids, reps = _classify_level(X, punct, k0)
    complex0 = Level0Complex(punct, X.window, X.eps)

    # congruence of cells across each class, then one canonical shape each
    usable = (labels >= 0) & _cell_complete_mask(punct, X.dim)
    shapes: list = []
    if X.dim == 1:
        x = punct[:, 0]
        left = np.full(len(punct), np.nan)
        right = np.full(len(punct), np.nan)
        left[1:] = 0.5 * (x[1:] - x[:-1])
        right[:-1] = 0.5 * (x[1:] - x[:-1])
        for k in range(len(ids)):
            members = np.flatnonzero(usable & (labels == k))
            if members.size == 0:
                raise WindowTooSmall(f"class {k} has no interior member")
            l0, r0 = left[members[0]], right[members[0]]
            if (np.max(np.abs(left[members] - l0)) > 3 * X.eps or
                    np.max(np.abs(right[members] - r0)) > 3 * X.eps):
                bad = members[np.argmax(np.abs(left[members] - l0))]
                raise CongruenceFailure(
                    f"level 0 class {k}: cell of puncture {punct[bad]} differs "
                    f"from representative {punct[members[0]]} (k0 too small?)")
            cell = complex0.canonical_cell(int(members[0]))
            shapes.append(TileShape(
                level=0, class_index=k, dim=1, volume=cell.volume(),
                bbox_lo=np.array([-l0]), bbox_hi=np.array([r0]),
                r_in=min(l0, r0), R_out=max(l0, r0), cell=cell,
                flat_offsets=np.zeros((1, 1)),
                flat_classes=np.array([k], dtype=np.int64)))
    else:
        for k in range(len(ids)):
            members = np.flatnonzero(usable & (labels == k))
            if members.size == 0:
                raise WindowTooSmall(f"class {k} has no interior member")
            ref = complex0.canonical_cell(int(members[0]))
            ref_v = ref.canonical_vertices()
            for m in members[1:]:
                other = complex0.canonical_cell(int(m))
                if not vertex_sets_match(other.canonical_vertices(), ref_v,
                                         20.0 * X.eps) or \
                        abs(other.volume() - ref.volume()) > \
                        1e-9 * max(ref.volume(), 1.0):
                    raise CongruenceFailure(
                        f"level 0 class {k}: cell of puncture {punct[m]} "
                        f"differs from representative (k0 too small?)")
            shapes.append(TileShape(
                level=0, class_index=k, dim=2, volume=ref.volume(),
                bbox_lo=ref.vertices.min(axis=0), bbox_hi=ref.vertices.max(axis=0),
                r_in=ref.inradius(), R_out=ref.circumradius(), cell=ref,
                flat_offsets=np.zeros((1, 2)),
                flat_classes=np.array([k], dtype=np.int64)))

    r_int = min(s.r_in for s in shapes)
    r_ext = max(s.R_out for s in shapes)
    stats = LevelStats(r_int=r_int, R_ext=r_ext, rec_bound=k0,
                       r_C=r_c, R_C=big_r)
    valid = X.window.shrink(k0 + r_ext)
    trusted = usable & valid.contains(punct, slack=X.eps)
    reps = _retarget_reps(labels, trusted, len(ids), punct)
    level = TowerLevel(n=0, s_n=s0, k_n=k0, punctures=punct, labels=labels,
                       classes=ids, class_reps=reps, shapes=shapes,
                       valid_region=valid, stats=stats, trusted=trusted)
    return level, complex0


def _retarget_reps(labels, trusted, t, punct):
    reps = np.full(t, -1, dtype=np.int64)
    for k in range(t):
        members = np.flatnonzero(trusted & (labels == k))
        if members.size == 0:
            raise WindowTooSmall(f"class {k} has no trusted representative")
        reps[k] = members[0]
    return reps


def _assign_prev(prev_punct: np.ndarray, new_punct: np.ndarray,
                 eps_tie: float) -> np.ndarray:
    if prev_punct.shape[1] == 1:
        return assign_star_1d(new_punct[:, 0], prev_punct[:, 0], eps_tie)
    return assign_star_nd(new_punct, prev_punct, eps_tie)


def _contents(prev: TowerLevel, new_punct: np.ndarray, assign: np.ndarray):
    """Sorted (by new puncture, then offset) content arrays."""
    sel = np.flatnonzero(assign >= 0)
    owner = assign[sel]
    off = prev.punctures[sel] - new_punct[owner]
    cls = prev.labels[sel]
    d = off.shape[1]
    keys = tuple(off[:, k] for k in reversed(range(d))) + (owner,)
    order = np.lexsort(keys)
    return owner[order], off[order], cls[order], sel[order]


def zoom_level(X: DeloneWindow, prev: TowerLevel, complex0: Level0Complex,
               s_next: float, k_next: Optional[float] = None,
               strict: bool = False):
    """One zoom step: new punctures, star assignment of the previous
    punctures, congruence-checked tile contents, transition matrix and
    derived tile shapes.

    Returns (TowerLevel, TransitionMatrix, assignment, hyp_report).
    """
    region = X.region_for_radius(s_next)
    if region.empty:
        raise EmptyLevel(f"window cannot hold any {s_next}-patch")
    cand_mask = region.contains(prev.punctures, slack=X.eps)
    cand = prev.punctures[cand_mask]
    rep_patch = patch_at(X, np.zeros(X.dim), s_next)
    new_punct = cand[match_centers(X, cand, rep_patch)]
    if len(new_punct) < 3:
        raise EmptyLevel(
            f"only {len(new_punct)} occurrences of the s={s_next:g} patch")
    rad = radii(new_punct, region, X.eps)
    r_c, big_r = rad.packing_r, rad.covering_R
    if k_next is None:
        k_next = 2.0 * big_r + s_next

    hyp = {
        "hyp1_k_vs_recC": bool(k_next >= 2.0 * big_r + s_next - 3 * X.eps),
        "hyp2_k_vs_prev": bool(
            k_next >= big_r + 2.0 * prev.stats.R_ext + prev.stats.rec_bound
            - 3 * X.eps),
        "hyp3_rC_vs_Rext": bool(r_c >= 2.0 * prev.stats.R_ext - 3 * X.eps),
    }
    if strict and not all(hyp.values()):
        raise HypothesisViolation(f"zoom hypotheses failed: {hyp}")

    labels, ids, _ = _classify_level(X, new_punct, k_next)
    eps_tie = tie_eps(np.vstack([prev.punctures, new_punct]))
    assign = _assign_prev(prev.punctures, new_punct, eps_tie)
    owner, off, cls, _ = _contents(prev, new_punct, assign)
    counts = np.bincount(owner, minlength=len(new_punct))
    starts = np.concatenate([[0], np.cumsum(counts)])

    # content of v is complete and classified when B(v, R_C) is well inside
    margin = max(k_next, prev.k_n + big_r + prev.s_n)
    content_ok = X.window.shrink(margin).contains(new_punct, slack=X.eps)
    kids_ok = np.ones(len(new_punct), dtype=bool)
    has_unlabeled = np.flatnonzero(cls < 0)
    if has_unlabeled.size:
        kids_ok[np.unique(owner[has_unlabeled])] = False
    trusted_content = (labels >= 0) & content_ok & kids_ok & \
        _cell_complete_mask(new_punct, X.dim)

    t_new, t_prev = len(ids), prev.t
    entries = np.zeros((t_new, t_prev), dtype=np.int64)
    offsets: dict = {}
    reps = np.full(t_new, -1, dtype=np.int64)
    for i in range(t_new):
        members = np.flatnonzero(trusted_content & (labels == i))
        if members.size == 0:
            raise WindowTooSmall(f"level class {i} has no trusted member")
        reps[i] = members[0]
        c0 = counts[members[0]]
        if np.any(counts[members] != c0):
            bad = members[np.flatnonzero(counts[members] != c0)[0]]
            raise CongruenceFailure(
                f"class {i}: puncture {new_punct[bad]} has {counts[bad]} "
                f"children, representative has {c0}")
        block_off = off[starts[members[0]]:starts[members[0]] + c0]
        block_cls = cls[starts[members[0]]:starts[members[0]] + c0]
        if members.size > 1:
            idx = (starts[members][:, None] + np.arange(c0)[None, :])
            all_off = off[idx]           # (n_members, c0, d)
            all_cls = cls[idx]
            if np.max(np.abs(all_off - block_off[None])) > 3 * X.eps:
                raise CongruenceFailure(
                    f"class {i}: tile contents not translation-congruent "
                    f"(k={k_next:g} too small?)")
            if np.any(all_cls != block_cls[None]):
                raise CongruenceFailure(
                    f"class {i}: child classes differ across members")
        for j in range(t_prev):
            sel = block_cls == j
            entries[i, j] = int(np.sum(sel))
            offsets[(i, j)] = block_off[sel]

    prev_shapes = prev.shapes
    shapes: list = []
    for i in range(t_new):
        child_off = np.vstack([offsets[(i, j)] for j in range(t_prev)
                               if len(offsets[(i, j)])])
        child_cls = np.concatenate(
            [np.full(len(offsets[(i, j)]), j, dtype=np.int64)
             for j in range(t_prev) if len(offsets[(i, j)])])
        order = np.lexsort(tuple(child_off[:, k] for k in
                                 reversed(range(X.dim))))
        child_off, child_cls = child_off[order], child_cls[order]
        shape = _build_shape(prev.n + 1, i, X.dim, child_off, child_cls,
                             prev_shapes, complex0, new_punct[reps[i]],
                             X.eps)
        shapes.append(shape)

    r_int = min(s.r_in for s in shapes)
    r_ext = max(s.R_out for s in shapes)
    stats = LevelStats(r_int=r_int, R_ext=r_ext, rec_bound=k_next,
                       r_C=r_c, R_C=big_r)
    hyp["rBpr_ok"] = bool(r_int >= r_c - prev.stats.R_ext - 3 * X.eps)
    hyp["RBpr_ok"] = bool(r_ext <= big_r + prev.stats.R_ext + 3 * X.eps)
    valid = X.window.shrink(k_next + r_ext)
    trusted = trusted_content & valid.contains(new_punct, slack=X.eps)
    reps = _retarget_reps(labels, trusted, t_new, new_punct)

    level = TowerLevel(n=prev.n + 1, s_n=s_next, k_n=k_next,
                       punctures=new_punct, labels=labels, classes=ids,
                       class_reps=reps, shapes=shapes, valid_region=valid,
                       stats=stats, trusted=trusted)
    matrix = TransitionMatrix(n=prev.n + 1, entries=entries, offsets=offsets)
    return level, matrix, assign, hyp


def _build_shape(level_n, class_i, dim, child_off, child_cls, prev_shapes,
                 complex0, rep_punct, eps) -> TileShape:
    volume = float(sum(prev_shapes[c].volume for c in child_cls))
    lo = np.min([prev_shapes[c].bbox_lo + o
                 for o, c in zip(child_off, child_cls)], axis=0)
    hi = np.max([prev_shapes[c].bbox_hi + o
                 for o, c in zip(child_off, child_cls)], axis=0)
    shape = TileShape(level=level_n, class_index=class_i, dim=dim,
                      volume=volume, bbox_lo=lo, bbox_hi=hi,
                      r_in=np.nan, R_out=np.nan,
                      children_offsets=child_off, children_classes=child_cls)
    shape.flat_offsets, shape.flat_classes = _flatten(shape, prev_shapes)
    if dim == 1:
        if not (lo[0] < -eps and hi[0] > eps):
            raise CongruenceFailure(
                f"level {level_n} class {class_i}: anchor not interior")
        shape.r_in = float(min(-lo[0], hi[0]))
        shape.R_out = float(max(-lo[0], hi[0]))
        return shape
    # d = 2: anchor-centered radii from the union boundary at the rep
    flat_idx = complex0.assign(shape.flat_offsets + rep_punct)
    inside = set(int(v) for v in flat_idx)
    r_in = np.inf
    r_out = 0.0
    for fi in flat_idx:
        cell = complex0.canonical_cell(int(fi))
        site = complex0.punctures[int(fi)]
        r_out = max(r_out, float(np.max(
            np.linalg.norm(cell.vertices + site - rep_punct, axis=1))))
        for j, rv in complex0.neighbors(int(fi)):
            if int(j) in inside:
                continue
            seg = complex0.face_segment(int(fi), int(j), rv)
            r_in = min(r_in, _segment_distance(rep_punct, seg))
    shape.r_in = float(r_in)
    shape.R_out = float(r_out)
    if not shape.r_in > 0:
        raise CongruenceFailure(
            f"level {level_n} class {class_i}: anchor not interior")
    return shape


# -------------------------------------------------------------------- system

@dataclass
class TowerSystem:
    source: DeloneWindow
    params: TowerParams
    levels: list                     # TowerLevel, index = n
    matrices: list                   # TransitionMatrix, matrices[n-1] = M_n
    assignments: list                # assignments[n]: level n -> level n+1
    complex0: Level0Complex
    bound_ledger: list = field(default_factory=list)
    _chains: Optional[list] = None

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.source.dim

    def level(self, n: int) -> TowerLevel:
        if not 0 <= n < self.n_levels:
            raise IndexOutOfRange(f"level {n} outside 0..{self.n_levels - 1}")
        return self.levels[n]

    def matrix(self, n: int) -> TransitionMatrix:
        if not 1 <= n < self.n_levels:
            raise IndexOutOfRange(f"matrix index {n} outside 1..{self.n_levels - 1}")
        return self.matrices[n - 1]

    def chains(self) -> list:
        """chains[m]: level-0 puncture index -> level-m puncture index."""
        if self._chains is None:
            n0 = self.levels[0].n_punctures
            cur = np.arange(n0, dtype=np.int64)
            out = [cur]
            for a in self.assignments:
                nxt = np.where(cur >= 0, a[np.clip(cur, 0, None)], -1)
                out.append(nxt)
                cur = nxt
            self._chains = out
        return self._chains

    def chain_up(self, from_level: int, to_level: int,
                 idx: np.ndarray) -> np.ndarray:
        """Map puncture indices at from_level to to_level (-1 propagates)."""
        cur = np.asarray(idx, dtype=np.int64)
        for m in range(from_level, to_level):
            a = self.assignments[m]
            cur = np.where(cur >= 0, a[np.clip(cur, 0, None)], -1)
        return cur

    def locate_level0(self, pts: np.ndarray) -> np.ndarray:
        return self.complex0.assign(pts)

    def colors(self, pts: np.ndarray, level_list) -> dict:
        """Class label of the tile containing each point, per level."""
        i0 = self.locate_level0(pts)
        out = {}
        chains = self.chains()
        for m in level_list:
            idx = np.where(i0 >= 0, chains[m][np.clip(i0, 0, None)], -1)
            lab = np.where(idx >= 0,
                           self.levels[m].labels[np.clip(idx, 0, None)], -1)
            out[m] = lab
        return out

    def top_counted(self) -> np.ndarray:
        return self.levels[-1].trusted

    def counted_masks(self) -> list:
        """Per level: mask of punctures inside the union of counted top
        tiles (exact hierarchical counting region)."""
        top = self.n_levels - 1
        masks = []
        top_ok = self.top_counted()
        for m in range(self.n_levels):
            idx = np.arange(self.levels[m].n_punctures, dtype=np.int64)
            up = self.chain_up(m, top, idx)
            ok = (up >= 0) & top_ok[np.clip(up, 0, None)]
            masks.append(ok & (self.levels[m].labels >= 0))
        return masks

    def covered_volume(self) -> float:
        top = self.levels[-1]
        cnt = top.class_counts(self.top_counted())
        return float(sum(cnt[i] * top.shapes[i].volume for i in range(top.t)))


def build_tower(X: DeloneWindow, params: TowerParams,
                allow_periodic: bool = False) -> TowerSystem:
    """Build levels 0..n_max with s_n = K^n s0 and k_n = 2 R(C_n) + s_n.

    Raises WindowExhausted (carrying the partial tower) when the window
    cannot support a level.  The per-level bound ledger records which
    geometry inequalities hold numerically.
    """
    params.validate()
    if X.periodic and not allow_periodic:
        raise PeriodicInput("tower construction requires an aperiodic generator")
    span = float(np.min(X.window.span))
    if span < 4.0 * params.s_n(params.n_max):
        raise WindowTooSmall(
            f"window span {span:g} too small for s_{params.n_max} = "
            f"{params.s_n(params.n_max):g}")

    k1, k2 = theorem_constants(params.L_hat, params.K)
    levels: list = []
    matrices: list = []
    assignments: list = []
    ledger: list = []

    level0, complex0 = base_decomposition(
        X, params.s0, allow_periodic=allow_periodic, strict=params.strict)
    levels.append(level0)
    ledger.append(_ledger_entry(level0, params, k1, k2, hyp=None,
                                nesting_ok=None, eps=X.eps))

    for n in range(1, params.n_max + 1):
        try:
            lvl, mat, assign, hyp = zoom_level(
                X, levels[-1], complex0, params.s_n(n), strict=params.strict)
        except (EmptyLevel, WindowTooSmall) as exc:
            partial = _assemble(X, params, levels, matrices, assignments,
                                complex0, ledger)
            raise WindowExhausted(
                f"window exhausted at level {n}: {exc}",
                tower=partial, deepest_level=n - 1) from exc
        # nesting: every new puncture inside the previous valid region is a
        # previous puncture of the origin's class
        pos = find_rows(levels[-1].punctures, lvl.punctures, 3 * X.eps)
        interior = levels[-1].valid_region.contains(lvl.punctures, slack=X.eps)
        interior &= pos >= 0
        prev_lab = levels[-1].labels[np.clip(pos, 0, None)]
        nesting_ok = bool(np.all(pos >= 0) and np.all(prev_lab[interior] == 0))
        levels.append(lvl)
        matrices.append(mat)
        assignments.append(assign)
        ledger.append(_ledger_entry(lvl, params, k1, k2, hyp=hyp,
                                    nesting_ok=nesting_ok, eps=X.eps))
        if params.enforce_theorem_K and params.strict:
            e = ledger[-1]
            if not (e["eqK1K2_ok"] and e["eqRrec_ok"]):
                raise HypothesisViolation(
                    f"theorem bounds failed at level {n}: {e}")
    return _assemble(X, params, levels, matrices, assignments, complex0,
                     ledger)


def _ledger_entry(level: TowerLevel, params: TowerParams, k1, k2, hyp,
                  nesting_ok, eps) -> dict:
    s = level.stats
    tol = 3 * eps
    entry = {
        "level": level.n,
        "s_n": level.s_n,
        "k_n": level.k_n,
        "t_n": level.t,
        "n_punctures": level.n_punctures,
        "r_C": s.r_C,
        "R_C": s.R_C,
        "r_int": s.r_int,
        "R_ext": s.R_ext,
        "rec_bound": s.rec_bound,
        "K1": k1,
        "K2": k2,
        "eqK1K2_ok": bool(k1 * level.s_n <= s.r_int + tol and
                          s.r_int <= s.R_ext + tol and
                          s.R_ext <= k2 * level.s_n + tol),
        "eqRrec_ok": bool(s.rec_bound <=
                          (2 * params.L_hat + 1) * level.s_n + tol),
        "nesting_ok": nesting_ok,
    }
    if hyp:
        entry.update(hyp)
    return entry


def _assemble(X, params, levels, matrices, assignments, complex0, ledger):
    return TowerSystem(source=X, params=params, levels=levels,
                       matrices=matrices, assignments=assignments,
                       complex0=complex0, bound_ledger=ledger)


# ---------------------------------------------------------------- verify

@dataclass
class ZoomReport:
    n: int
    checks: dict
    details: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def verify_zoom(tower: TowerSystem, n: int) -> ZoomReport:
    """Recount the zoom from level n-1 to n from the punctures alone and
    check the nesting properties (Z.1)-(Z.5) in their combinatorial
    realization, plus the volume identity."""
    prev = tower.level(n - 1)
    nxt = tower.level(n)
    mat = tower.matrix(n)
    X = tower.source
    eps = X.eps
    checks: dict = {}
    details: dict = {}

    eps_tie = tie_eps(np.vstack([prev.punctures, nxt.punctures]))
    assign = _assign_prev(prev.punctures, nxt.punctures, eps_tie)
    owner, off, cls, sel = _contents(prev, nxt.punctures, assign)
    counts = np.bincount(owner, minlength=nxt.n_punctures)
    starts = np.concatenate([[0], np.cumsum(counts)])

    # (Z.1) class-consistent contents across all trusted members, matching
    # the stored transition matrix entry-for-entry
    z1 = True
    recount = np.zeros_like(mat.entries)
    for i in range(nxt.t):
        members = np.flatnonzero(nxt.trusted & (nxt.labels == i))
        ref = None
        for v in members:
            sl = slice(starts[v], starts[v + 1])
            sig = (off[sl], cls[sl])
            if ref is None:
                ref = sig
                row = np.bincount(cls[sl][cls[sl] >= 0], minlength=prev.t)
                recount[i] = row
            else:
                if sig[0].shape != ref[0].shape or \
                   np.max(np.abs(sig[0] - ref[0])) > 3 * eps or \
                   np.any(sig[1] != ref[1]):
                    z1 = False
    checks["Z1_offsets_consistent"] = z1
    checks["matrix_matches_recount"] = bool(np.array_equal(recount, mat.entries))

    # (Z.4) exact decomposition: children partition each tile (volume
    # identity + no duplicated level-0 constituents)
    vol_resid = 0.0
    z4 = True
    for i in range(nxt.t):
        shape = nxt.shapes[i]
        direct = float(np.sum([tower.level(0).shapes[c].volume
                               for c in shape.flat_classes]))
        via_matrix = float(sum(mat.entries[i, j] * prev.shapes[j].volume
                               for j in range(prev.t)))
        vol_resid = max(vol_resid,
                        abs(direct - via_matrix) / max(direct, 1e-300))
        if shape.flat_offsets is not None and len(shape.flat_offsets) > 1:
            f = shape.flat_offsets
            o = np.lexsort(tuple(f[:, k] for k in reversed(range(f.shape[1]))))
            dup = np.min(np.linalg.norm(np.diff(f[o], axis=0), axis=1))
            if dup <= eps:
                z4 = False
        if int(np.sum(mat.entries[i])) != shape.n_children:
            z4 = False
    checks["Z4_exact_decomposition"] = z4
    checks["eq_vol_ok"] = bool(vol_resid < 1e-9)
    details["eq_vol_residual"] = vol_resid

    # (Z.3) the previous tile at each new puncture is interior to the new
    # tile: its level-0 boundary constituents stay inside the flatten set
    z3 = _check_interior(tower, prev, nxt, n)
    checks["Z3_interior_tile"] = z3

    # (Z.2) boundary faces of new tiles are boundary faces of constituent
    # previous placements (and in d=1 endpoints align exactly)
    checks["Z2_boundary_faces"] = _check_boundary_faces(tower, prev, nxt, eps)

    # (Z.5) new punctures are previous punctures, and every previous
    # puncture in the counted region receives exactly one assignment
    pos = find_rows(prev.punctures, nxt.punctures, 3 * eps)
    subset = bool(np.all(pos >= 0))
    core = nxt.valid_region.contains(prev.punctures, slack=eps)
    totality = bool(np.all(assign[core] >= 0))
    checks["Z5_bases_nested"] = subset and totality

    # derived-tiling coverage: tiles placed at interior punctures tile the
    # region between them without gaps or overlaps
    details["tiling_residual"] = _tiling_residual(tower, nxt, counts, starts,
                                                  off, owner)
    checks["derived_tiling_ok"] = bool(
        details["tiling_residual"] <= max(1e-9, 10 * eps))
    return ZoomReport(n=n, checks=checks, details=details)


def _check_interior(tower, prev, nxt, n) -> bool:
    # new punctures are prev punctures; tile of class i at rep v contains
    # the prev tile at v strictly inside
    eps = tower.source.eps
    for i in range(nxt.t):
        v = int(nxt.class_reps[i])
        vpos = nxt.punctures[v]
        shape = nxt.shapes[i]
        pos = find_rows(prev.punctures, vpos[None, :], 3 * eps)[0]
        if pos < 0:
            return False
        j = prev.labels[pos]
        if j < 0:
            return False
        inner = prev.shapes[j]
        if tower.dim == 1:
            if not (shape.bbox_lo[0] < inner.bbox_lo[0] - eps and
                    shape.bbox_hi[0] > inner.bbox_hi[0] + eps):
                return False
        else:
            # every level-0 neighbor of the inner placement's constituents
            # must itself be a constituent of the outer tile
            inside = set(int(a) for a in
                         tower.locate_level0(shape.flat_offsets + vpos))
            idx0 = tower.locate_level0(inner.flat_offsets + vpos)
            for fi in idx0:
                for jn, _rv in tower.complex0.neighbors(int(fi)):
                    if int(jn) not in inside:
                        return False
    return True


def _check_boundary_faces(tower, prev, nxt, eps) -> bool:
    top0 = tower.level(0)
    for i in range(nxt.t):
        shape = nxt.shapes[i]
        if tower.dim == 1:
            # endpoints must coincide with endpoints of child placements
            ends = (shape.bbox_lo[0], shape.bbox_hi[0])
            child_ends = []
            for o, c in zip(shape.children_offsets, shape.children_classes):
                child_ends.append(prev.shapes[c].bbox_lo[0] + o[0])
                child_ends.append(prev.shapes[c].bbox_hi[0] + o[0])
            for e in ends:
                if min(abs(e - ce) for ce in child_ends) > 3 * eps:
                    return False
        else:
            v = nxt.punctures[int(nxt.class_reps[i])]
            flat_idx = tower.locate_level0(shape.flat_offsets + v)
            inside = set(int(a) for a in flat_idx)
            chain = tower.chain_up(0, nxt.n - 1,
                                   np.arange(top0.n_punctures, dtype=np.int64))
            for fi in flat_idx:
                for jn, _rv in tower.complex0.neighbors(int(fi)):
                    if int(jn) in inside:
                        continue
                    # outside constituent must belong to a different
                    # previous placement than the inside one
                    if chain[int(jn)] >= 0 and chain[int(fi)] >= 0 and \
                            chain[int(jn)] == chain[int(fi)]:
                        return False
    return True


def _tiling_residual(tower, nxt, counts, starts, off, owner) -> float:
    if tower.dim != 1:
        # d = 2: counted level-0 cells are claimed exactly once; measure
        # the claim-count defect over the counted region
        masks = tower.counted_masks()
        m0 = masks[0]
        up = tower.chain_up(0, nxt.n,
                            np.arange(tower.level(0).n_punctures, dtype=np.int64))
        claimed = up[m0]
        return float(np.mean(claimed < 0)) if claimed.size else 0.0
    # d = 1: consecutive placed tiles must share endpoints exactly
    lab = nxt.labels
    ok = nxt.trusted
    idx = np.flatnonzero(ok)
    if idx.size < 2:
        return 0.0
    x = nxt.punctures[:, 0]
    lo = np.array([nxt.shapes[lab[v]].bbox_lo[0] + x[v] for v in idx])
    hi = np.array([nxt.shapes[lab[v]].bbox_hi[0] + x[v] for v in idx])
    # only compare consecutive trusted punctures
    consec = np.diff(idx) == 1
    if not np.any(consec):
        return 0.0
    gaps = np.abs(lo[1:][consec] - hi[:-1][consec])
    return float(np.max(gaps))


def verify_tower(tower: TowerSystem) -> list:
    return [verify_zoom(tower, n) for n in range(1, tower.n_levels)]


# ------------------------------------------------------------- diagnostics

@dataclass
class MatrixReport:
    per_level: list
    sup_norm_inf: Optional[float]
    norm_bound_theorem: Optional[float]
    all_positive: Optional[bool]
    note: str = ""


def matrix_diagnostics(tower: TowerSystem) -> MatrixReport:
    """Size/norm/positivity diagnostics of the transition matrices with
    the geometry bounds they are checked against."""
    if tower.n_levels < 2:
        return MatrixReport(per_level=[], sup_norm_inf=None,
                            norm_bound_theorem=None, all_positive=None,
                            note="insufficient depth: no transition matrices")
    params = tower.params
    k1, k2 = theorem_constants(params.L_hat, params.K)
    d = tower.dim
    per = []
    for n in range(1, tower.n_levels):
        m = tower.matrix(n)
        lvl, prv = tower.level(n), tower.level(n - 1)
        row_bound = (lvl.stats.R_ext / prv.stats.r_int) ** d
        # positivity sufficient condition, with M_X(rec) estimated by
        # L_hat * rec (linear repetitivity proxy)
        pos_hyp = bool(params.L_hat * prv.stats.rec_bound <= lvl.stats.r_int)
        per.append({
            "n": n,
            "t_n": lvl.t,
            "t_prev": prv.t,
            "min_entry": m.min_entry(),
            "norm_inf": m.norm_inf(),
            "norm_1": m.norm_1(),
            "row_bound": row_bound,
            "row_bound_ok": bool(m.norm_inf() <= row_bound * (1 + 1e-12)),
            "positivity": bool(m.min_entry() >= 1),
            "positivity_hypothesis": pos_hyp,
        })
    bound = (params.K * k2 / k1) ** d if k1 > 0 else None
    return MatrixReport(
        per_level=per,
        sup_norm_inf=max(p["norm_inf"] for p in per),
        norm_bound_theorem=bound,
        all_positive=all(p["positivity"] for p in per),
        note="" if k1 > 0 else
             "theorem constant K1 <= 0 for this (L_hat, K); norm bound "
             "reported only")


# ------------------------------------------------------------ serialization

def tower_to_dict(tower: TowerSystem, config_hash: str = "") -> dict:
    levels = []
    for lvl in tower.levels:
        shapes = []
        for s in lvl.shapes:
            entry = {
                "volume": s.volume,
                "bbox_lo": s.bbox_lo.tolist(),
                "bbox_hi": s.bbox_hi.tolist(),
                "r_in": s.r_in,
                "R_out": s.R_out,
            }
            if s.cell is not None:
                entry["cell_vertices"] = s.cell.vertices.tolist()
            else:
                entry["children"] = [
                    [*o.tolist(), int(c)]
                    for o, c in zip(s.children_offsets, s.children_classes)]
            shapes.append(entry)
        levels.append({
            "n": lvl.n,
            "s_n": lvl.s_n,
            "k_n": lvl.k_n,
            "punctures": lvl.punctures.tolist(),
            "labels": lvl.labels.tolist(),
            "classes": [{"token": c.token, "size": c.size, "radius": c.radius}
                        for c in lvl.classes],
            "class_reps": lvl.class_reps.tolist(),
            "valid_region": lvl.valid_region.as_tuple(),
            "stats": vars(lvl.stats),
            "shapes": shapes,
        })
    matrices = []
    for m in tower.matrices:
        matrices.append({
            "n": m.n,
            "entries": m.entries.tolist(),
            "offsets": {f"{i},{j}": off.tolist()
                        for (i, j), off in m.offsets.items()},
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "params": tower.params.to_dict(),
        "levels": levels,
        "matrices": matrices,
        "bound_ledger": tower.bound_ledger,
    }


def save_tower_json(tower: TowerSystem, path, config_hash: str = "") -> None:
    with open(path, "w") as fh:
        json.dump(tower_to_dict(tower, config_hash), fh, sort_keys=True)
        fh.write("\n")


def load_tower_json(path, X: DeloneWindow) -> TowerSystem:
    """Rebuild a TowerSystem from its JSON dump and the point window.

    Assignments, chains and trusted masks are recomputed (deterministic),
    so the loaded system behaves identically to the built one.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise WindowTooSmall(
            f"unsupported tower schema {doc.get('schema_version')!r}")
    p = doc["params"]
    params = TowerParams(s0=p["s0"], K=p["K"], n_max=p["n_max"],
                         L_hat=p["L_hat"],
                         enforce_theorem_K=p["enforce_theorem_K"],
                         strict=p["strict"])
    levels = []
    complex0 = None
    for entry in doc["levels"]:
        punct = np.asarray(entry["punctures"], dtype=float)
        if punct.ndim == 1:
            punct = punct[:, None]
        if entry["n"] == 0:
            complex0 = Level0Complex(punct, X.window, X.eps)
        shapes = []
        for k, sd in enumerate(entry["shapes"]):
            cell = None
            ch_off = ch_cls = None
            if "children" in sd:
                arr = np.asarray(sd["children"], dtype=float)
                ch_off = arr[:, :-1]
                ch_cls = arr[:, -1].astype(np.int64)
            shapes.append(TileShape(
                level=entry["n"], class_index=k, dim=punct.shape[1],
                volume=sd["volume"],
                bbox_lo=np.asarray(sd["bbox_lo"], dtype=float),
                bbox_hi=np.asarray(sd["bbox_hi"], dtype=float),
                r_in=sd["r_in"], R_out=sd["R_out"],
                cell=cell, children_offsets=ch_off, children_classes=ch_cls))
        lvl = TowerLevel(
            n=entry["n"], s_n=entry["s_n"], k_n=entry["k_n"],
            punctures=punct,
            labels=np.asarray(entry["labels"], dtype=np.int64),
            classes=[PatternClassId(c["token"], c["size"], c["radius"])
                     for c in entry["classes"]],
            class_reps=np.asarray(entry["class_reps"], dtype=np.int64),
            shapes=shapes,
            valid_region=Box.from_bounds(*entry["valid_region"]),
            stats=LevelStats(**entry["stats"]),
            trusted=np.zeros(len(punct), dtype=bool))
        levels.append(lvl)
    # rebuild level-0 cells and flattens
    lvl0 = levels[0]
    for k in range(lvl0.t):
        rep = int(lvl0.class_reps[k])
        cell = complex0.canonical_cell(rep)
        lvl0.shapes[k].cell = cell
        lvl0.shapes[k].flat_offsets = np.zeros((1, X.dim))
        lvl0.shapes[k].flat_classes = np.array([k], dtype=np.int64)
    for n in range(1, len(levels)):
        for s in levels[n].shapes:
            s.flat_offsets, s.flat_classes = _flatten(s, levels[n - 1].shapes)
    matrices = []
    for md in doc["matrices"]:
        t_new = len(levels[md["n"]].classes)
        t_prev = len(levels[md["n"] - 1].classes)
        offsets = {}
        for key, val in md["offsets"].items():
            i, j = (int(v) for v in key.split(","))
            arr = np.asarray(val, dtype=float)
            offsets[(i, j)] = arr.reshape(-1, X.dim)
        matrices.append(TransitionMatrix(
            n=md["n"],
            entries=np.asarray(md["entries"], dtype=np.int64).reshape(
                t_new, t_prev),
            offsets=offsets))
    # recompute assignments and trusted masks
    assignments = []
    for n in range(1, len(levels)):
        prev, nxt = levels[n - 1], levels[n]
        eps_tie = tie_eps(np.vstack([prev.punctures, nxt.punctures]))
        assignments.append(_assign_prev(prev.punctures, nxt.punctures, eps_tie))
    tower = TowerSystem(source=X, params=params, levels=levels,
                        matrices=matrices, assignments=assignments,
                        complex0=complex0,
                        bound_ledger=doc.get("bound_ledger", []))
    _recompute_trusted(tower)
    return tower


def _recompute_trusted(tower: TowerSystem) -> None:
    X = tower.source
    for n, lvl in enumerate(tower.levels):
        ok = (lvl.labels >= 0) & _cell_complete_mask(lvl.punctures, X.dim)
        ok &= lvl.valid_region.contains(lvl.punctures, slack=X.eps)
        if n >= 1:
            prev = tower.levels[n - 1]
            margin = max(lvl.k_n, prev.k_n + lvl.stats.R_C + prev.s_n)
            ok &= X.window.shrink(margin).contains(lvl.punctures, slack=X.eps)
            assign = tower.assignments[n - 1]
            bad_owner = np.unique(assign[(assign >= 0) & (prev.labels < 0)])
            mask_bad = np.zeros(lvl.n_punctures, dtype=bool)
            mask_bad[bad_owner] = True
            ok &= ~mask_bad
        lvl.trusted = ok
