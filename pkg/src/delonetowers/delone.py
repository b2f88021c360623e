"""Finite windows of concrete linearly repetitive point sets.

Generators (primitive 1-d substitutions, lattices, 2-d products) realize
a window of a repetitive Delone set containing the origin.  On top of the
raw points the module provides patches (points within a closed ball,
recentred), translation-equivalence classes of patches, occurrence sets
(the finite stand-in for return vectors to a cylinder) and an empirical
repetitivity profile.

Coordinates of substitution sets are computed as integer-combination
values ``counts @ lengths`` from a single origin point, never as running
sums, so equal abstract positions are bit-equal floats and patch
comparisons resolve far above float noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BoundaryViolation,
    CenterNotInSet,
    DegenerateInput,
    MixedRadii,
    NonPrimitiveSubstitution,
    UnsupportedDimension,
    WindowTooSmall,
)
from .geometry import Box, RadiiReport, characteristic_eps, check_dim, radii

PHI = (1.0 + np.sqrt(5.0)) / 2.0

SCHEMA_VERSION = "1"

# chunk size for bulk patch gathering (rows x patch-width floats)
_CHUNK = 1 << 16


# --------------------------------------------------------------- generators

@dataclass(frozen=True)
class GeneratorSpec:
    """Recipe for a concrete point-set window.

    kinds: ``fibonacci_1d``, ``substitution_1d`` (rules + tile lengths),
    ``lattice`` (d = 1 or 2), ``product_2d`` (two 1-d factor specs).
    Lattices are periodic and only admitted in tests; substitution rules
    must be primitive.  Aperiodicity of a substitution point set is not
    certified here (equal tile lengths can collapse to a lattice); the
    stock ``fibonacci`` and ``pell`` recipes are aperiodic.
    """

    kind: str
    dim: int = 1
    rules: Optional[tuple] = None       # ((letter, image), ...)
    lengths: Optional[tuple] = None     # ((letter, length), ...)
    seed_letter: str = "a"
    factors: Optional[tuple] = None     # (GeneratorSpec, GeneratorSpec)

    @classmethod
    def fibonacci(cls) -> "GeneratorSpec":
        return cls(kind="fibonacci_1d", dim=1,
                   rules=(("a", "ab"), ("b", "a")),
                   lengths=(("a", PHI), ("b", 1.0)))

    @classmethod
    def pell(cls) -> "GeneratorSpec":
        return cls(kind="substitution_1d", dim=1,
                   rules=(("a", "aab"), ("b", "a")),
                   lengths=(("a", 1.0 + np.sqrt(2.0)), ("b", 1.0)))

    @classmethod
    def substitution(cls, rules: dict, lengths: dict,
                     seed_letter: str = "a") -> "GeneratorSpec":
        return cls(kind="substitution_1d", dim=1,
                   rules=tuple(sorted(rules.items())),
                   lengths=tuple(sorted(lengths.items())),
                   seed_letter=seed_letter)

    @classmethod
    def lattice(cls, dim: int) -> "GeneratorSpec":
        check_dim(dim)
        return cls(kind="lattice", dim=dim)

    @classmethod
    def product(cls, fx: "GeneratorSpec", fy: "GeneratorSpec") -> "GeneratorSpec":
        if fx.dim != 1 or fy.dim != 1:
            raise UnsupportedDimension("product_2d needs two 1-d factors")
        return cls(kind="product_2d", dim=2, factors=(fx, fy))

    @property
    def periodic(self) -> bool:
        if self.kind == "lattice":
            return True
        if self.kind == "product_2d":
            return self.factors[0].periodic or self.factors[1].periodic
        return False

    def rule_dict(self) -> dict:
        return dict(self.rules)

    def length_dict(self) -> dict:
        return dict(self.lengths)

    def validate(self) -> None:
        if self.kind in ("fibonacci_1d", "substitution_1d"):
            rules = self.rule_dict()
            lengths = self.length_dict()
            letters = sorted(rules)
            if sorted(lengths) != letters:
                raise NonPrimitiveSubstitution("rules/lengths letter mismatch")
            if any(ln <= 0 for ln in lengths.values()):
                raise NonPrimitiveSubstitution("tile lengths must be positive")
            if self.seed_letter not in rules:
                raise NonPrimitiveSubstitution(f"unknown seed {self.seed_letter!r}")
            if not _is_primitive(rules, letters):
                raise NonPrimitiveSubstitution(f"rules {rules} are not primitive")
        elif self.kind == "lattice":
            check_dim(self.dim)
        elif self.kind == "product_2d":
            self.factors[0].validate()
            self.factors[1].validate()
        else:
            raise UnsupportedDimension(f"unknown generator kind {self.kind!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "seed_letter": self.seed_letter}
        if self.rules is not None:
            out["rules"] = {k: v for k, v in self.rules}
            out["lengths"] = {k: float(v) for k, v in self.lengths}
        if self.factors is not None:
            out["factors"] = [f.to_dict() for f in self.factors]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        if "factors" in d:
            fx, fy = (cls.from_dict(f) for f in d["factors"])
            return cls.product(fx, fy)
        if d["kind"] == "lattice":
            return cls.lattice(d["dim"])
        return cls(kind=d["kind"], dim=1,
                   rules=tuple(sorted(d["rules"].items())),
                   lengths=tuple(sorted((k, float(v)) for k, v in d["lengths"].items())),
                   seed_letter=d.get("seed_letter", "a"))


def _is_primitive(rules: dict, letters: list) -> bool:
    k = len(letters)
    idx = {l: i for i, l in enumerate(letters)}
    inc = np.zeros((k, k), dtype=np.int64)
    for l, image in rules.items():
        for ch in image:
            if ch not in idx:
                return False
            inc[idx[l], idx[ch]] += 1
    power = np.eye(k, dtype=np.int64)
    for _ in range((k - 1) ** 2 + 1):
        power = np.clip(power @ inc, 0, 1)
        if np.all(power > 0):
            return True
    return False


def substitution_word(rules: dict, seed: str, depth: int) -> str:
    """Apply the substitution ``depth`` times to ``seed``."""
    word = seed
    for _ in range(depth):
        word = "".join(rules[ch] for ch in word)
    return word


def word_left_endpoints(word: str, lengths: dict) -> np.ndarray:
    """Left endpoints of the tiles of ``word`` laid out from 0."""
    letters = sorted(lengths)
    idx = {l: i for i, l in enumerate(letters)}
    codes = np.array([idx[ch] for ch in word], dtype=np.int64)
    counts = np.zeros((len(word), len(letters)), dtype=np.int64)
    counts[np.arange(len(word)), codes] = 1
    prefix = np.vstack([np.zeros(len(letters), dtype=np.int64),
                        np.cumsum(counts, axis=0)[:-1]])
    return prefix @ np.array([lengths[l] for l in letters])


def _expand_codes(codes: np.ndarray, images: list) -> np.ndarray:
    """One substitution step on a letter-code array."""
    img_len = np.array([len(im) for im in images], dtype=np.int64)
    out_len = int(img_len[codes].sum())
    starts = np.concatenate([[0], np.cumsum(img_len[codes])[:-1]])
    out = np.empty(out_len, dtype=np.int8)
    for code, image in enumerate(images):
        pos = starts[codes == code]
        for k, ch_code in enumerate(image):
            out[pos + k] = ch_code
    return out


# ------------------------------------------------------------------- window

@dataclass
class DeloneWindow:
    """Finite cut of a Delone set: points sorted lexicographically, the
    closed window box they were cut with, realized discreteness/density
    radii and generator provenance.  The origin is always a point."""

    points: np.ndarray            # (n, d)
    window: Box
    r_disc: float
    R_dense: float
    generator: GeneratorSpec
    eps: float
    periodic: bool
    origin_index: int

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def x(self) -> np.ndarray:
        """1-d coordinate view (dim 1 only)."""
        return self.points[:, 0]

    def region_for_radius(self, S: float) -> Box:
        """Window shrunk so every S-ball around a contained center fits."""
        return self.window.shrink(S)


def _sort_lex(pts: np.ndarray) -> np.ndarray:
    keys = tuple(pts[:, k] for k in reversed(range(pts.shape[1])))
    return pts[np.lexsort(keys)]


def _gen_substitution_1d(spec: GeneratorSpec, extent: float):
    rules = spec.rule_dict()
    lengths = spec.length_dict()
    letters = sorted(rules)
    idx = {l: i for i, l in enumerate(letters)}
    images = [[idx[ch] for ch in rules[l]] for l in letters]
    lens = np.array([lengths[l] for l in letters])
    max_len = float(lens.max())
    pad = 2.0 * max_len
    target = 2.0 * (extent + pad) + 8.0 * max_len

    codes = np.array([idx[spec.seed_letter]], dtype=np.int8)
    total = lens[codes].sum()
    while total < target:
        codes = _expand_codes(codes, images)
        total = lens[codes].sum()

    # integer letter counts of each prefix give exact positions
    counts = np.zeros((codes.size, len(letters)), dtype=np.int64)
    counts[np.arange(codes.size), codes] = 1
    prefix = np.cumsum(counts, axis=0)
    prefix = np.vstack([np.zeros(len(letters), dtype=np.int64), prefix[:-1]])
    pos = prefix @ lens
    mid = 0.5 * (pos[0] + pos[-1])
    center = int(np.argmin(np.abs(pos - mid)))
    coords = (prefix - prefix[center]) @ lens

    lo, hi = -(extent + pad), extent + pad
    if coords[0] > lo or coords[-1] < hi:
        raise WindowTooSmall("substitution expansion did not cover the window")
    keep = (coords >= lo) & (coords <= hi)
    return coords[keep][:, None], Box.from_bounds([lo], [hi])


def _gen_lattice(dim: int, extent: float):
    n = int(np.floor(extent))
    axis = np.arange(-n, n + 1, dtype=float)
    lo = np.full(dim, -(n + 0.5))
    hi = np.full(dim, n + 0.5)
    if dim == 1:
        pts = axis[:, None]
    else:
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
    return _sort_lex(pts), Box.from_bounds(lo, hi)


def generate(spec: GeneratorSpec, target_extent: float) -> DeloneWindow:
    """Generate a window spanning at least ``target_extent`` on each side
    of the origin, with the origin as a point.  Deterministic: identical
    spec and extent reproduce the point list bit-for-bit."""
    if target_extent <= 0:
        raise WindowTooSmall("target_extent must be positive")
    spec.validate()

    if spec.kind in ("fibonacci_1d", "substitution_1d"):
        pts, window = _gen_substitution_1d(spec, target_extent)
    elif spec.kind == "lattice":
        pts, window = _gen_lattice(spec.dim, target_extent)
    elif spec.kind == "product_2d":
        wx = generate(spec.factors[0], target_extent)
        wy = generate(spec.factors[1], target_extent)
        xs, ys = wx.points[:, 0], wy.points[:, 0]
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = _sort_lex(np.column_stack([gx.ravel(), gy.ravel()]))
        window = Box.from_bounds(
            [wx.window.lo[0], wy.window.lo[0]],
            [wx.window.hi[0], wy.window.hi[0]])
    else:  # pragma: no cover - validate() already rejects
        raise UnsupportedDimension(spec.kind)

    pts = _sort_lex(pts)
    eps = characteristic_eps(window)
    rep = radii(pts, window, eps)
    origin = _locate_point(pts, np.zeros(pts.shape[1]), eps)
    if origin < 0:
        raise WindowTooSmall("origin is not a point of the generated set")
    return DeloneWindow(points=pts, window=window,
                        r_disc=rep.packing_r, R_dense=rep.covering_R,
                        generator=spec, eps=eps, periodic=spec.periodic,
                        origin_index=origin)


def _locate_point(pts: np.ndarray, p: np.ndarray, eps: float) -> int:
    """Index of the point equal to p within eps, or -1."""
    i = np.searchsorted(pts[:, 0], p[0] - eps, side="left")
    while i < len(pts) and pts[i, 0] <= p[0] + eps:
        if np.all(np.abs(pts[i] - p) <= eps):
            return int(i)
        i += 1
    return -1


# ------------------------------------------------------------------ patches

@dataclass
class Patch:
    """Points of the window within closed distance ``radius`` of
    ``center``, translated so the center sits at the origin."""

    center: np.ndarray
    radius: float
    rel_points: np.ndarray   # (m, d), sorted lexicographically

    @property
    def size(self) -> int:
        return self.rel_points.shape[0]


@dataclass(frozen=True)
class PatternClassId:
    """Translation-equivalence class of patches, keyed by the grid-rounded
    canonical relative point list."""

    token: str
    size: int
    radius: float

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.token[:12]}(m={self.size},S={self.radius:g})"


def _canonical_token(key_rows: np.ndarray, radius: float) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(key_rows).tobytes())
    h.update(np.float64(radius).tobytes())
    return h.hexdigest()


def patch_at(X: DeloneWindow, center: np.ndarray, S: float) -> Patch:
    """The S-patch of the window centered at a point of the set."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if S <= 0:
        raise BoundaryViolation("patch radius must be positive")
    if not X.window.contains_ball(center, S):
        raise BoundaryViolation(f"ball B({center}, {S}) exceeds the window")
    if _locate_point(X.points, center, X.eps) < 0:
        raise CenterNotInSet(f"{center} is not a point of the window")
    rel = _ball_points(X, center, S)
    return Patch(center=center, radius=S, rel_points=rel)


def _ball_points(X: DeloneWindow, center: np.ndarray, S: float) -> np.ndarray:
    pts = X.points
    if X.dim == 1:
        lo = np.searchsorted(pts[:, 0], center[0] - S - X.eps, side="left")
        hi = np.searchsorted(pts[:, 0], center[0] + S + X.eps, side="right")
        return pts[lo:hi] - center
    tree = _window_tree(X)
    idx = sorted(tree.query_ball_point(center, S + X.eps))
    return _sort_lex(pts[idx] - center)


_TREE_CACHE: dict = {}


def _window_tree(X: DeloneWindow) -> cKDTree:
    key = id(X)
    tree = _TREE_CACHE.get(key)
    if tree is None or tree.n != X.n_points:
        tree = cKDTree(X.points)
        _TREE_CACHE[key] = tree
    return tree


def classify(patches: Sequence[Patch], eps: float) -> list:
    """Group patches by translation equivalence (within tolerance).

    Returns one PatternClassId per input patch.  Ids are deterministic:
    grid-rounded canonical forms are grouped, then groups whose
    representatives agree pointwise within 3 eps are merged (two-stage
    compare, so grid-boundary flapping cannot split a class).
    """
    if not patches:
        return []
    S = patches[0].radius
    if any(abs(p.radius - S) > eps for p in patches):
        raise MixedRadii("classify requires a single patch radius")
    sizes = {p.size for p in patches}
    labels = np.full(len(patches), -1, dtype=np.int64)
    ids: dict = {}
    out: list = [None] * len(patches)
    for size in sorted(sizes):
        idx = [i for i, p in enumerate(patches) if p.size == size]
        block = np.stack([patches[i].rel_points for i in idx])
        lab, keys = _group_rows(block.reshape(len(idx), -1), eps)
        for g in np.unique(lab):
            token = _canonical_token(keys[g], S)
            cid = ids.setdefault(token, PatternClassId(token, size, S))
            for i_local in np.flatnonzero(lab == g):
                out[idx[i_local]] = cid
    del labels
    return out


def _group_rows(flat: np.ndarray, eps: float):
    """Group rows of a float matrix by equality within tolerance.

    Returns (labels, canonical_keys) where canonical_keys[g] is the
    grid-rounded integer key of group g's lexicographically smallest
    member key.
    """
    grid = max(eps, 1e-300)
    q = np.rint(flat / grid).astype(np.int64)
    uniq, inverse = np.unique(q, axis=0, return_inverse=True)
    n_groups = uniq.shape[0]
    parent = np.arange(n_groups)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    # representatives: first row of each raw group
    first = np.zeros(n_groups, dtype=np.int64)
    seen = np.zeros(n_groups, dtype=bool)
    for row, g in enumerate(inverse):
        if not seen[g]:
            seen[g] = True
            first[g] = row
    reps = flat[first]
    # merge groups whose grid keys are adjacent and reps agree within 3 eps
    for a in range(n_groups):
        for b in range(a + 1, n_groups):
            if np.max(np.abs(uniq[a] - uniq[b])) <= 2 and \
               np.max(np.abs(reps[a] - reps[b])) <= 3.0 * eps:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(g) for g in range(n_groups)])
    # canonical key per merged class: lexicographic min over member keys
    label_of_root: dict = {}
    keys: list = []
    labels = np.empty(flat.shape[0], dtype=np.int64)
    for g in range(n_groups):
        r = roots[g]
        if r not in label_of_root:
            member_keys = uniq[roots == r]
            order = np.lexsort(member_keys.T[::-1])
            label_of_root[r] = len(keys)
            keys.append(member_keys[order[0]])
    labels = np.array([label_of_root[roots[g]] for g in inverse])
    return labels, keys


# ------------------------------------------------------- bulk classification

def ball_counts(X: DeloneWindow, centers: np.ndarray, S: float) -> np.ndarray:
    pts = X.points
    centers = np.atleast_2d(centers)
    if X.dim == 1:
        lo = np.searchsorted(pts[:, 0], centers[:, 0] - S - X.eps, side="left")
        hi = np.searchsorted(pts[:, 0], centers[:, 0] + S + X.eps, side="right")
        return hi - lo
    tree = _window_tree(X)
    return tree.query_ball_point(centers, S + X.eps, return_length=True)


def _gather_1d(X: DeloneWindow, centers: np.ndarray, S: float, m: int) -> np.ndarray:
    """(n_centers, m) matrix of relative coordinates, chunked."""
    x = X.points[:, 0]
    lo = np.searchsorted(x, centers - S - X.eps, side="left")
    out = np.empty((centers.size, m), dtype=float)
    step = max(1, _CHUNK // max(m, 1))
    cols = np.arange(m)
    for s in range(0, centers.size, step):
        e = min(s + step, centers.size)
        out[s:e] = x[lo[s:e, None] + cols[None, :]] - centers[s:e, None]
    return out


def match_centers(X: DeloneWindow, centers: np.ndarray, rep: Patch) -> np.ndarray:
    """Mask of centers whose S-patch is equivalent to ``rep``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    S = rep.radius
    tol = 3.0 * X.eps
    counts = ball_counts(X, centers, S)
    mask = counts == rep.size
    if not np.any(mask):
        return mask
    sel = np.flatnonzero(mask)
    if X.dim == 1:
        block = _gather_1d(X, centers[sel, 0], S, rep.size)
        good = np.max(np.abs(block - rep.rel_points[:, 0][None, :]), axis=1) <= tol
        mask[sel] = good
        return mask
    tree = _window_tree(X)
    hits = tree.query_ball_point(centers[sel], S + X.eps)
    for i, idx in zip(sel, hits):
        rel = _sort_lex(X.points[idx] - centers[i])
        if np.max(np.abs(rel - rep.rel_points)) > tol:
            mask[i] = False
    return mask


def classify_centers(X: DeloneWindow, centers: np.ndarray, S: float):
    """Vectorized classification of the S-patches at ``centers``.

    Returns (labels, class_ids, rep_index) with labels in canonical-key
    order; rep_index[k] is the index (into centers) of the first member
    of class k.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n = centers.shape[0]
    counts = ball_counts(X, centers, S)
    labels = np.full(n, -1, dtype=np.int64)
    all_keys: list = []   # (key_row, count) per class, for canonical ordering
    members: list = []
    if X.dim == 2:
        all_hits = _window_tree(X).query_ball_point(centers, S + X.eps)
    for m in np.unique(counts):
        sel = np.flatnonzero(counts == m)
        if X.dim == 1:
            block = _gather_1d(X, centers[sel, 0], S, int(m))
        else:
            rows = [_sort_lex(X.points[all_hits[i]] - centers[i]).ravel()
                    for i in sel]
            block = np.array(rows)
        lab, keys = _group_rows(block, X.eps)
        for g, key in enumerate(keys):
            all_keys.append((int(m), key))
            members.append(sel[lab == g])
    order = sorted(range(len(all_keys)),
                   key=lambda k: (all_keys[k][0], tuple(all_keys[k][1])))
    ids = []
    rep_index = []
    for new_label, k in enumerate(order):
        m, key = all_keys[k]
        labels[members[k]] = new_label
        ids.append(PatternClassId(_canonical_token(np.asarray(key), S), m, S))
        rep_index.append(int(members[k][0]))
    return labels, ids, np.array(rep_index, dtype=np.int64)


def occurrences(X: DeloneWindow, class_rep: Patch, region: Box) -> np.ndarray:
    """All points of the window inside ``region`` whose S-patch is
    equivalent to ``class_rep``, sorted lexicographically.  This realizes
    the return-vector set of the corresponding cylinder on the window."""
    safe = X.region_for_radius(class_rep.radius)
    if np.any(region.lo < safe.lo - X.eps) or np.any(region.hi > safe.hi + X.eps):
        raise BoundaryViolation(
            "occurrence region must be shrunk so candidate balls fit")
    inside = X.window.contains(X.points)  # cheap pre-mask, then exact region
    inside &= region.contains(X.points, slack=X.eps)
    centers = X.points[inside]
    mask = match_centers(X, centers, class_rep)
    return centers[mask]


# --------------------------------------------------------------- repetitivity

@dataclass
class RepetitivityProfile:
    """Empirical repetitivity: for each sampled S the least M such that
    every M-ball in the usable region contains an occurrence of every
    S-patch class, and the resulting linearity estimate."""

    samples: list               # [(S, M_hat)]
    L_hat: float
    retbounds_ok: list          # per sample: packing/covering vs L_hat bounds
    class_counts: list          # number of classes per sample

    @property
    def monotone(self) -> bool:
        ms = [m for _, m in self.samples]
        return all(b >= a - 1e-12 for a, b in zip(ms, ms[1:]))


def repetitivity_profile(X: DeloneWindow, S_values: Sequence[float]) -> RepetitivityProfile:
    samples = []
    details = []
    class_counts = []
    for S in sorted(S_values):
        region = X.region_for_radius(S)
        if region.empty or np.min(region.span) < 4.0 * S:
            raise WindowTooSmall(f"window too small for S={S}")
        centers = X.points[region.contains(X.points, slack=X.eps)]
        labels, ids, _ = classify_centers(X, centers, S)
        per_class = []
        for k in range(len(ids)):
            occ = centers[labels == k]
            if occ.shape[0] < 2:
                raise WindowTooSmall(
                    f"class {ids[k]} has {occ.shape[0]} occurrences at S={S}")
            per_class.append(radii(occ, region, X.eps))
        m_hat = max(rep.covering_R for rep in per_class)
        samples.append((float(S), float(m_hat)))
        details.append(per_class)
        class_counts.append(len(ids))
    L_hat = max(m / s for s, m in samples)
    retbounds_ok = []
    for (S, _), per_class in zip(samples, details):
        lower = S / (2.0 * (L_hat + 1.0))
        ok = all(rep.packing_r >= lower - 3.0 * X.eps and
                 rep.covering_R <= L_hat * S + 3.0 * X.eps for rep in per_class)
        retbounds_ok.append(bool(ok))
    return RepetitivityProfile(samples=samples, L_hat=float(L_hat),
                               retbounds_ok=retbounds_ok,
                               class_counts=class_counts)


# ----------------------------------------------------------------- file I/O

def save_points_csv(X: DeloneWindow, path, config_hash: str = "") -> None:
    """Write points as CSV (header ``x[,y]``, 17 significant digits) plus a
    sidecar ``.meta`` key-value file with generator provenance."""
    header = ",".join("xy"[k] for k in range(X.dim))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in X.points:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "generator": json.dumps(X.generator.to_dict(), sort_keys=True),
        "window_lo": json.dumps(X.window.lo.tolist()),
        "window_hi": json.dumps(X.window.hi.tolist()),
        "eps": f"{X.eps:.17g}",
        "r_disc": f"{X.r_disc:.17g}",
        "R_dense": f"{X.R_dense:.17g}",
        "periodic": str(X.periodic).lower(),
    }
    with open(str(path) + ".meta", "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k} = {v}\n")


def load_points_csv(path) -> DeloneWindow:
    meta = {}
    with open(str(path) + ".meta") as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    pts = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    window = Box.from_bounds(json.loads(meta["window_lo"]),
                             json.loads(meta["window_hi"]))
    spec = GeneratorSpec.from_dict(json.loads(meta["generator"]))
    eps = float(meta["eps"])
    origin = _locate_point(pts, np.zeros(pts.shape[1]), eps)
    if origin < 0:
        raise WindowTooSmall("loaded point set does not contain the origin")
    return DeloneWindow(points=pts, window=window,
                        r_disc=float(meta["r_disc"]),
                        R_dense=float(meta["R_dense"]),
                        generator=spec, eps=eps,
                        periodic=meta.get("periodic") == "true",
                        origin_index=origin)
