"""Patch-frequency deviation experiments over growing cubes.

For a fixed patch class the deviation of a cube is the occurrence count
inside it minus volume times frequency.  The tower decomposes each cube
greedily into whole tiles of the deepest levels that fit plus a boundary
remainder, which reduces the cube deviation to per-tile deviations and
boundary terms; the mixing rate of the induced chain then bounds the
per-tile deviations.  Everything here is exact integer/area bookkeeping
on top of the tower's hierarchical tile structure: cube membership uses
half-open upper faces, tile membership uses the star-partition chain, and
the decomposition identities are asserted rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .delone import DeloneWindow, Patch, match_centers
from .errors import (
    BoundaryViolation,
    CongruenceFailure,
    NoFullTile,
    TowerTooShallow,
    WindowTooSmall,
)
from .geometry import Box
from .markov import integer_product, transverse_measures
from .towers import TowerSystem

_UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi}


# -------------------------------------------------------------- occurrences

def occurrence_set(X: DeloneWindow, class_rep: Patch) -> np.ndarray:
    """All occurrences of the patch class whose ball fits in the window,
    sorted lexicographically."""
    region = X.region_for_radius(class_rep.radius)
    if region.empty:
        raise WindowTooSmall("window smaller than the patch ball")
    cand = X.points[region.contains(X.points, slack=X.eps)]
    return cand[match_centers(X, cand, class_rep)]


def count_in_cube(occ: np.ndarray, U: Box, tie: float) -> int:
    """Occurrence centers in the half-open cube [lo, hi): lower faces
    closed, upper faces open (centers within ``tie`` of a face snap onto
    it)."""
    x = occ[:, 0]
    lo = np.searchsorted(x, U.lo[0] - tie, side="left")
    hi = np.searchsorted(x, U.hi[0] - tie, side="left")
    if occ.shape[1] == 1:
        return int(hi - lo)
    sub = occ[lo:hi]
    ok = (sub[:, 1] >= U.lo[1] - tie) & (sub[:, 1] < U.hi[1] - tie)
    return int(np.sum(ok))


def patch_count(X: DeloneWindow, class_rep: Patch, U: Box) -> int:
    """Number of occurrences of the patch class with center in the cube.

    The cube inflated by the patch radius must fit inside the window so
    every candidate's ball is visible.
    """
    S = class_rep.radius
    safe = X.region_for_radius(S)
    if np.any(U.lo < safe.lo - X.eps) or np.any(U.hi > safe.hi + X.eps):
        raise BoundaryViolation("cube plus patch ball exceeds the window")
    cand_box = Box(U.lo - X.eps, U.hi + X.eps)
    cand = X.points[cand_box.contains(X.points)]
    if cand.shape[0] == 0:
        return 0
    occ = cand[match_centers(X, cand, class_rep)]
    return count_in_cube(occ, U, X.eps)


@dataclass
class FrequencyEstimate:
    patch_class_size: int
    patch_radius: float
    freq_hat: float
    window_used: Box
    count: int
    decC_residual: Optional[float] = None


def estimate_frequency(X: DeloneWindow, class_rep: Patch,
                       tower: Optional[TowerSystem] = None,
                       occ: Optional[np.ndarray] = None,
                       measures: Optional[list] = None) -> FrequencyEstimate:
    """Occurrences per unit volume over the largest cube that fits in the
    scan region; cross-checked against the tower-measure decomposition of
    the patch cylinder when a tower is supplied."""
    if occ is None:
        occ = occurrence_set(X, class_rep)
    region = X.region_for_radius(class_rep.radius)
    side = float(np.min(region.span))
    center = 0.5 * (region.lo + region.hi)
    cube = Box(center - 0.5 * side, center + 0.5 * side)
    count = count_in_cube(occ, cube, X.eps)
    freq = count / cube.volume
    est = FrequencyEstimate(patch_class_size=class_rep.size,
                            patch_radius=class_rep.radius,
                            freq_hat=freq, window_used=cube, count=count)
    if tower is not None:
        if measures is None:
            measures = transverse_measures(tower)
        n0 = compute_n0(tower, class_rep.radius)
        np_counts, consistent = tile_occurrence_counts(tower, occ, n0)
        if consistent:
            via = float(np_counts @ measures[n0].nu_hat)
            est.decC_residual = abs(via - freq) / max(freq, 1e-300)
    return est


# ------------------------------------------------------------------ n0 / np

def compute_n0(tower: TowerSystem, S: float) -> int:
    """Smallest level whose classes pin down the S-patch at the anchor:
    the sufficient criterion k_n - R_ext(B_n) >= S (this may overestimate
    the true minimal level)."""
    for n in range(tower.n_levels):
        lvl = tower.level(n)
        if lvl.k_n - lvl.stats.R_ext >= S:
            return n
    raise TowerTooShallow(
        f"no level recognizes patches of radius {S}; deepest margin "
        f"{tower.level(tower.n_levels - 1).k_n - tower.level(tower.n_levels - 1).stats.R_ext:g}")


def tile_occurrence_counts(tower: TowerSystem, occ: np.ndarray, n: int):
    """Occurrences per tile class at level n.

    Occurrence centers are located through the star-partition chain, so
    boundary centers are counted exactly once.  Returns (counts_per_class,
    consistent) where consistent means every fully visible placement of a
    class carries the same count.
    """
    lvl = tower.level(n)
    i0 = tower.locate_level0(occ)
    idx = tower.chain_up(0, n, i0)
    per_placement = np.bincount(idx[idx >= 0], minlength=lvl.n_punctures)
    counts = np.zeros(lvl.t, dtype=np.int64)
    consistent = True
    scan = tower.source.region_for_radius(0.0)
    for i in range(lvl.t):
        members = np.flatnonzero(lvl.trusted & (lvl.labels == i))
        vis = []
        for v in members:
            lo = lvl.punctures[v] + lvl.shapes[i].bbox_lo
            hi = lvl.punctures[v] + lvl.shapes[i].bbox_hi
            if np.all(lo >= scan.lo) and np.all(hi <= scan.hi):
                vis.append(v)
        if not vis:
            consistent = False
            continue
        vals = per_placement[vis]
        counts[i] = vals[0]
        if np.any(vals != vals[0]):
            consistent = False
    return counts, consistent


@dataclass
class DeviationRecord:
    N: float
    anchor: np.ndarray
    n_p: int
    freq_hat: float
    dev: float
    n0: int
    n1: Optional[int]


# -------------------------------------------------------- cube decomposition

@dataclass
class CubeDecomposition:
    """Greedy decomposition of a cube into whole tiles of levels
    n0..n1 plus the remainder W."""

    U: Box
    n0: int
    n1: int
    selected: dict                # level -> puncture indices
    counts: dict                  # level -> #P_n
    tile_volume: dict             # level -> total volume
    W_volume: float
    area_residual: float
    straddlers: dict              # level -> count (levels n0..n1+1)
    bounds: dict

    @property
    def total_selected_volume(self) -> float:
        return float(sum(self.tile_volume.values()))


def _tiles_inside(tower, n, U, eps):
    lvl = tower.level(n)
    ok = lvl.labels >= 0
    pts = lvl.punctures
    for i in range(lvl.t):
        pass
    lo = np.full(len(pts), np.nan)
    inside = np.zeros(len(pts), dtype=bool)
    for i in range(lvl.t):
        sel = ok & (lvl.labels == i)
        s = lvl.shapes[i]
        a = pts[sel] + s.bbox_lo
        b = pts[sel] + s.bbox_hi
        inside[sel] = np.all(a >= U.lo - eps, axis=1) & \
            np.all(b <= U.hi + eps, axis=1)
    return inside


def _tiles_straddling(tower, n, U, eps):
    lvl = tower.level(n)
    pts = lvl.punctures
    touch = np.zeros(len(pts), dtype=bool)
    inside = np.zeros(len(pts), dtype=bool)
    for i in range(lvl.t):
        sel = (lvl.labels == i)
        s = lvl.shapes[i]
        a = pts[sel] + s.bbox_lo
        b = pts[sel] + s.bbox_hi
        touch[sel] = np.all(b >= U.lo - eps, axis=1) & \
            np.all(a <= U.hi + eps, axis=1)
        inside[sel] = np.all(a >= U.lo - eps, axis=1) & \
            np.all(b <= U.hi + eps, axis=1)
    return int(np.sum(touch & ~inside))


def empirical_shape_constants(tower: TowerSystem):
    """(K1_emp, K2_emp): envelope of r_int/s_n and R_ext/s_n over levels.
    Used for the boundary-count bound when the theorem constants are
    unavailable (K1 <= 0 at practical K)."""
    k1 = min(l.stats.r_int / l.s_n for l in tower.levels)
    k2 = max(l.stats.R_ext / l.s_n for l in tower.levels)
    return k1, k2


def boundary_count_constant(tower: TowerSystem) -> float:
    """Explicit constant of the straddling-tile bound
    M = 2 d K2 (K1^d leb(B_1))^(-1) K (2 K2/K1 + 1)^(d-1)."""
    d = tower.dim
    k1, k2 = empirical_shape_constants(tower)
    vol_b1 = _UNIT_BALL_VOLUME[d]
    return 2.0 * d * k2 / (k1 ** d * vol_b1) * tower.params.K * \
        (2.0 * k2 / k1 + 1.0) ** (d - 1)


def cube_decomposition(tower: TowerSystem, U: Box, n0: int) -> CubeDecomposition:
    """Top-down greedy tile selection: deepest whole tiles first, then
    whole tiles of each lower level in the unclaimed rest, down to n0."""
    X = tower.source
    eps = X.eps
    if not tower.level(n0).valid_region.contains(
            U.lo[None, :], slack=eps)[0] or \
       not tower.level(n0).valid_region.contains(U.hi[None, :], slack=eps)[0]:
        raise BoundaryViolation("cube outside the valid region of level n0")
    N = float(U.span[0])
    top = tower.n_levels - 1
    inside = {n: _tiles_inside(tower, n, U, eps)
              for n in range(n0, top + 1)}
    n1 = -1
    for n in range(top, n0 - 1, -1):
        if np.any(inside[n]):
            n1 = n
            break
    if n1 < n0:
        raise NoFullTile(
            f"cube of side {N:g} holds no whole level-{n0} tile")

    selected: dict = {}
    sel_mask: dict = {}
    for n in range(n1, n0 - 1, -1):
        cand = inside[n].copy()
        for higher in range(n + 1, n1 + 1):
            up = tower.chain_up(n, higher,
                                np.arange(tower.level(n).n_punctures))
            blocked = (up >= 0) & sel_mask[higher][np.clip(up, 0, None)]
            cand &= ~blocked
        sel_mask[n] = cand
        selected[n] = np.flatnonzero(cand)

    counts = {n: int(len(selected[n])) for n in selected}
    tile_volume = {}
    for n in selected:
        lvl = tower.level(n)
        vols = np.array([s.volume for s in lvl.shapes])
        lab = lvl.labels[selected[n]]
        tile_volume[n] = float(np.sum(vols[lab]))
    w_vol = U.volume - sum(tile_volume.values())

    # independent residual: in d=1 re-derive the selected volume from the
    # merged interval union; in d=2 from the flattened level-0 cells
    if X.dim == 1:
        ivs = []
        for n in selected:
            lvl = tower.level(n)
            for v in selected[n]:
                s = lvl.shapes[lvl.labels[v]]
                ivs.append((lvl.punctures[v, 0] + s.bbox_lo[0],
                            lvl.punctures[v, 0] + s.bbox_hi[0]))
        ivs.sort()
        union = 0.0
        overlap = 0.0
        prev_end = None
        for a, b in ivs:
            union += b - a
            if prev_end is not None and a < prev_end - eps:
                overlap += prev_end - a
            prev_end = b if prev_end is None else max(prev_end, b)
        area_residual = abs(union - sum(tile_volume.values())) + overlap
        area_residual /= max(U.volume, 1e-300)
    else:
        total0 = 0.0
        vol0 = np.array([s.volume for s in tower.level(0).shapes])
        for n in selected:
            lvl = tower.level(n)
            for v in selected[n]:
                s = lvl.shapes[lvl.labels[v]]
                total0 += float(np.sum(vol0[s.flat_classes]))
        area_residual = abs(total0 - sum(tile_volume.values())) / \
            max(U.volume, 1e-300)

    straddlers = {n: _tiles_straddling(tower, n, U, eps)
                  for n in range(n0, min(n1 + 1, top) + 1)}

    d = tower.dim
    k1_emp, _ = empirical_shape_constants(tower)
    big_m = boundary_count_constant(tower)
    alpha = max(tower.matrix(n).norm_inf() for n in range(1, tower.n_levels))
    bounds = {
        "M": big_m,
        "alpha": alpha,
        "K1_emp": k1_emp,
        "cotan1_ok": bool(k1_emp * tower.level(n1).s_n <= N + eps),
        "straddle_ok": {
            n: bool(straddlers[n] <= big_m * N ** (d - 1) *
                    tower.level(n).s_n ** (1 - d))
            for n in straddlers},
        "P_counts_ok": {
            n: bool(counts[n] <= big_m * alpha ** d * N ** (d - 1) *
                    tower.params.s_n(n + 1) ** (1 - d))
            for n in counts},
    }
    return CubeDecomposition(U=U, n0=n0, n1=n1, selected=selected,
                             counts=counts, tile_volume=tile_volume,
                             W_volume=w_vol, area_residual=area_residual,
                             straddlers=straddlers, bounds=bounds)


# ------------------------------------------------------------ exact identity

def deviation_identity_check(tower: TowerSystem, occ: np.ndarray,
                             freq_hat: float, n: int, i: int, n0: int,
                             measures: Optional[list] = None) -> dict:
    """The two tile-deviation identities at (level n, class i):

    * the integer decomposition n_p(D_{n,i}) = sum_k n_p(D_{n0,k}) P_{ik},
      asserted exactly;
    * its centered form dev_p(D_{n,i}) = sum_k n_p(D_{n0,k}) (P_{ik} -
      leb(D_{n,i}) nu(C_{n0,k})), whose defect is the frequency-estimate
      residual times the tile volume.
    """
    if measures is None:
        measures = transverse_measures(tower)
    base_counts, base_ok = tile_occurrence_counts(tower, occ, n0)
    lvl_counts, lvl_ok = tile_occurrence_counts(tower, occ, n)
    if not (base_ok and lvl_ok):
        raise CongruenceFailure(
            "occurrence counts differ across placements (level below n0?)")
    if n == n0:
        p_mat = np.eye(tower.level(n0).t, dtype=np.int64)
    else:
        p_mat = integer_product(tower, n0, n)
    decn_lhs = int(lvl_counts[i])
    decn_rhs = int(base_counts @ p_mat[i])
    leb = tower.level(n).shapes[i].volume
    dev_direct = decn_lhs - freq_hat * leb
    dev_via = float(base_counts @ (p_mat[i] - leb * measures[n0].nu_hat))
    return {
        "n": n, "i": i, "n0": n0,
        "decn_lhs": decn_lhs, "decn_rhs": decn_rhs,
        "decn_exact": decn_lhs == decn_rhs,
        "dev_direct": dev_direct, "dev_via_measures": dev_via,
        "lemma64_residual": abs(dev_direct - dev_via) / max(abs(leb), 1e-300),
    }


def lemma65_envelope(tower: TowerSystem, measures: Optional[list] = None,
                     c_T: Optional[float] = None) -> dict:
    """Decay of |P(n,m)_{ij}/leb(D_{n,i}) - nu(C_{m,j})| with the level
    gap: the envelope over pairs at each gap, checked to be nonincreasing
    (the fixed constant of the O-bound is unknown a priori)."""
    if measures is None:
        measures = transverse_measures(tower)
    env = {}
    for g in range(1, tower.n_levels - 1 + 1):
        worst = 0.0
        found = False
        for m in range(0, tower.n_levels - g):
            n = m + g
            p_mat = integer_product(tower, m, n)
            leb = np.array([s.volume for s in tower.level(n).shapes])
            nu_m = measures[m].nu_hat
            scale = float(np.sum(nu_m))
            resid = np.abs(p_mat / leb[:, None] - nu_m[None, :]) / scale
            worst = max(worst, float(np.max(resid)))
            found = True
        if found:
            env[g] = worst
    gaps = sorted(env)
    decays = all(env[b] <= env[a] * 1.05 + 1e-12
                 for a, b in zip(gaps, gaps[1:]))
    out = {"envelope": env, "monotone_decay": bool(decays)}
    if c_T is not None:
        out["ratio_to_cT"] = {g: env[g] / c_T ** g for g in gaps}
    return out


# -------------------------------------------------------------------- sweep

def anchor_sequence(region: Box, N: float, count: int) -> np.ndarray:
    """Deterministic low-discrepancy anchors such that anchor + [0, N]^d
    stays inside the region (golden-ratio Kronecker sequence)."""
    alphas = [0.6180339887498949, 0.4142135623730951][:region.dim]
    span = region.span - N
    if np.any(span < 0):
        raise BoundaryViolation(f"cube side {N} exceeds the sweep region")
    out = np.empty((count, region.dim))
    for j in range(count):
        for k, alpha in enumerate(alphas):
            frac = (0.5 + (j + 1) * alpha) % 1.0
            out[j, k] = region.lo[k] + frac * span[k]
    return out


def deviation_sweep(X: DeloneWindow, tower: TowerSystem, class_rep: Patch,
                    N_values: Sequence[float], anchors_per_N: int = 8,
                    measures: Optional[list] = None,
                    delta_T: Optional[float] = None):
    """Deviation records over a grid of cube sides and anchors, the
    log-log fit of the worst deviation, and the per-cube decomposition
    bound data.

    Returns (records, fit, cube_reports).
    """
    if len(N_values) == 0:
        raise WindowTooSmall("empty N list")
    occ = occurrence_set(X, class_rep)
    if measures is None:
        measures = transverse_measures(tower)
    freq = estimate_frequency(X, class_rep, tower=tower, occ=occ,
                              measures=measures)
    n0 = compute_n0(tower, class_rep.radius)
    d = X.dim
    top = tower.n_levels - 1

    # per-level worst tile deviations for the aggregate bound
    max_dev = {}
    tile_counts = {}
    for n in range(n0, top + 1):
        counts_n, ok = tile_occurrence_counts(tower, occ, n)
        if not ok:
            raise CongruenceFailure(f"inconsistent tile counts at level {n}")
        tile_counts[n] = counts_n
        lvl = tower.level(n)
        max_dev[n] = max(abs(counts_n[i] - freq.freq_hat * lvl.shapes[i].volume)
                         for i in range(lvl.t))

    sweep_region = tower.level(n0).valid_region
    scan = X.region_for_radius(class_rep.radius)
    sweep_region = Box(np.maximum(sweep_region.lo, scan.lo),
                       np.minimum(sweep_region.hi, scan.hi))
    big_m = boundary_count_constant(tower)
    alpha = max(tower.matrix(n).norm_inf() for n in range(1, tower.n_levels))
    maxleb0 = max(s.volume for s in tower.level(n0).shapes)
    maxnp0 = float(np.max(tile_counts[n0]))
    s_n0 = tower.level(n0).s_n
    c_const = max(big_m * alpha ** d,
                  big_m * s_n0 ** (1 - d) *
                  (maxnp0 + freq.freq_hat * maxleb0))

    records = []
    cube_reports = []
    for N in N_values:
        for anchor in anchor_sequence(sweep_region, float(N), anchors_per_N):
            U = Box(anchor, anchor + float(N))
            n_p = count_in_cube(occ, U, X.eps)
            dev = n_p - U.volume * freq.freq_hat
            rec = DeviationRecord(N=float(N), anchor=anchor, n_p=n_p,
                                  freq_hat=freq.freq_hat, dev=float(dev),
                                  n0=n0, n1=None)
            report = {"N": float(N), "anchor": anchor.tolist()}
            try:
                dec = cube_decomposition(tower, U, n0)
            except NoFullTile:
                dec = None
                report["n1"] = None
            if dec is not None:
                rec.n1 = dec.n1
                agg = _aggregate_bound(tower, dec, occ, n_p, freq.freq_hat,
                                       max_dev, c_const, n0, d)
                report.update(agg)
                report["n1"] = dec.n1
                report["area_residual"] = dec.area_residual
                report["bounds"] = dec.bounds
            records.append(rec)
            cube_reports.append(report)

    fit = _fit_sweep(records, d, delta_T, tower.params.K)
    fit["freq_hat"] = freq.freq_hat
    fit["decC_residual"] = freq.decC_residual
    fit["n0"] = n0
    fit["c_const"] = c_const
    return records, fit, cube_reports


def _aggregate_bound(tower, dec, occ, n_p, freq, max_dev, c_const, n0, d):
    """Exact decomposition identity and the aggregate deviation bound for
    one cube."""
    i0 = tower.locate_level0(occ)
    dev_parts = 0.0
    n_p_sel = 0
    for n in dec.selected:
        lvl = tower.level(n)
        idx = tower.chain_up(0, n, i0)
        per = np.bincount(idx[idx >= 0], minlength=lvl.n_punctures)
        sel = dec.selected[n]
        cnt = int(np.sum(per[sel]))
        n_p_sel += cnt
        vols = np.array([s.volume for s in lvl.shapes])
        dev_parts += cnt - freq * float(np.sum(vols[lvl.labels[sel]]))
    n_p_w = n_p - n_p_sel
    dev_w = n_p_w - freq * dec.W_volume
    dev_u = n_p - freq * dec.U.volume
    identity_residual = abs(dev_u - (dev_parts + dev_w)) / max(abs(dev_u), 1.0)
    rhs_raw = sum(dec.counts[n] * max_dev[n] for n in dec.counts) + abs(dev_w)
    big_n = float(dec.U.span[0])
    series = sum(tower.params.s_n(n + 1) ** (1 - d) * max_dev[n]
                 for n in range(n0, dec.n1 + 1))
    rhs_c = c_const * big_n ** (d - 1) * (1.0 + series)
    return {
        "identity_residual": identity_residual,
        "raw_bound_ok": bool(abs(dev_u) <= rhs_raw + 1e-9),
        "c_bound_ok": bool(abs(dev_u) <= rhs_c + 1e-9),
        "dev": dev_u,
        "raw_bound": rhs_raw,
        "c_bound": rhs_c,
        "n_p_W": n_p_w,
        "W_volume": dec.W_volume,
    }


def mann_kendall_no_upward(series: Sequence[float], alpha: float = 0.05):
    """One-sided Mann-Kendall trend test: returns (ok, tau, p_one_sided)
    where ok means no significant upward trend at the given level."""
    y = np.asarray(series, dtype=float)
    if len(y) < 3 or np.allclose(y, y[0]):
        return True, 0.0, 1.0
    res = stats.kendalltau(np.arange(len(y)), y)
    tau, p_two = float(res.statistic), float(res.pvalue)
    p_one = p_two / 2.0 if tau > 0 else 1.0 - p_two / 2.0
    return bool(not (tau > 0 and p_one < alpha)), tau, p_one


def _fit_sweep(records, d, delta_T, K):
    by_n: dict = {}
    for r in records:
        by_n.setdefault(r.N, []).append(abs(r.dev))
    ns = np.array(sorted(by_n))
    worst = np.array([max(by_n[n]) for n in ns])
    log_n = np.log(ns)
    log_dev = np.log(np.maximum(worst, 1e-12))
    slope, intercept = np.polyfit(log_n, log_dev, 1)
    fit = {
        "N": ns.tolist(),
        "max_abs_dev": worst.tolist(),
        "slope": float(slope),
        "intercept": float(intercept),
        "d": d,
        "trivial_exponent": float(d - 1),
    }
    ratio_triv = worst / ns ** (d - 1)
    ok_t, tau_t, p_t = mann_kendall_no_upward(ratio_triv)
    fit["ratio_trivial"] = ratio_triv.tolist()
    fit["trivial_trend"] = {"no_upward": ok_t, "tau": tau_t, "p_one_sided": p_t}
    if delta_T is not None:
        expo = d - delta_T
        ratio = worst / ns ** expo
        ok, tau, p = mann_kendall_no_upward(ratio)
        fit["d_minus_delta"] = float(expo)
        fit["delta_T"] = float(delta_T)
        fit["ratio_series"] = ratio.tolist()
        fit["ratio_trend"] = {"no_upward": ok, "tau": tau, "p_one_sided": p}
    return fit
