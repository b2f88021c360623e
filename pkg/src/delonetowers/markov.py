"""Non-stationary Markov chain induced by a tower system.

The chain's state at depth n is the index of the level-n tile containing
a point drawn from Lebesgue measure.  Transition probabilities are built
from empirical transverse measures (occurrence densities) and the integer
transition matrices; the chain's contraction coefficient yields the
mixing rate that drives the deviation exponent.

Two measure estimators are kept side by side.  The plain one counts
punctures per unit volume of each level's valid region; its residuals in
the mass and compatibility identities quantify window truncation.  The
covered-region one counts only punctures whose top-level ancestor tile is
fully trusted, which makes both identities exact bookkeeping; it feeds
the stochastic matrices so row sums are clean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyLevel,
    IndexOutOfRange,
    NonPositiveMatrix,
    ZeroMeasureClass,
)
from .towers import TowerSystem

MC_STREAMS = 8


# ----------------------------------------------------------------- measures

@dataclass
class TransverseMeasureEstimate:
    """Per-class occurrence densities at one level, with the residuals of
    the mass identity (sum leb * nu = 1) and, for n >= 1, the
    compatibility identity nu_{n-1} = M_n^T nu_n."""

    level: int
    nu_hat: np.ndarray            # covered-region estimator
    nu_plain: np.ndarray          # per-level valid-region estimator
    counts: np.ndarray
    counts_plain: np.ndarray
    covered_volume: float
    plain_volume: float
    meas_residual: float
    meas_residual_plain: float
    tran_residual: Optional[float]
    tran_residual_plain: Optional[float]
    boundary_band: float


def transverse_measures(tower: TowerSystem) -> list:
    """Empirical transverse measures for every level of the tower."""
    if tower.n_levels < 1 or tower.level(0).n_punctures == 0:
        raise EmptyLevel("tower has no usable level")
    masks = tower.counted_masks()
    covered_vol = tower.covered_volume()
    out = []
    prev = None
    for n in range(tower.n_levels):
        lvl = tower.level(n)
        counts = lvl.class_counts(masks[n])
        if np.any(counts == 0):
            raise ZeroMeasureClass(
                f"level {n}: classes with zero covered count: "
                f"{np.flatnonzero(counts == 0).tolist()}")
        plain_mask = (lvl.labels >= 0) & lvl.valid_region.contains(
            lvl.punctures, slack=tower.source.eps)
        counts_plain = lvl.class_counts(plain_mask)
        vol_plain = lvl.valid_region.volume
        nu = counts / covered_vol
        nu_plain = counts_plain / max(vol_plain, 1e-300)
        leb = np.array([s.volume for s in lvl.shapes])
        meas = abs(float(leb @ nu) - 1.0)
        meas_plain = abs(float(leb @ nu_plain) - 1.0)
        tran = tran_plain = None
        if n >= 1:
            m = tower.matrix(n).entries
            lhs = m.T @ nu           # sum_i nu_n(i) m_{i,j}
            tran = float(np.max(np.abs(lhs - prev.nu_hat) /
                                np.maximum(prev.nu_hat, 1e-300)))
            lhs_p = m.T @ nu_plain
            tran_plain = float(np.max(np.abs(lhs_p - prev.nu_plain) /
                                      np.maximum(prev.nu_plain, 1e-300)))
        band_box = lvl.valid_region.shrink(2.0 * lvl.stats.R_ext)
        band = 1.0 - (band_box.volume / vol_plain if not band_box.empty
                      and vol_plain > 0 else 0.0)
        est = TransverseMeasureEstimate(
            level=n, nu_hat=nu, nu_plain=nu_plain, counts=counts,
            counts_plain=counts_plain, covered_volume=covered_vol,
            plain_volume=vol_plain, meas_residual=meas,
            meas_residual_plain=meas_plain, tran_residual=tran,
            tran_residual_plain=tran_plain, boundary_band=float(band))
        out.append(est)
        prev = est
    return out


# ----------------------------------------------------------------- matrices

@dataclass
class StochasticMatrix:
    """Row-stochastic transition of the induced chain from depth n-1 to n:
    rows are level-(n-1) classes, columns level-n classes."""

    level: int
    entries: np.ndarray
    raw_row_sums: np.ndarray
    renorm_residual: float

    @property
    def shape(self):
        return self.entries.shape

    def contraction(self) -> float:
        """c(Q) = 1 - min entry."""
        return 1.0 - float(np.min(self.entries))

    def row_variation(self) -> float:
        """max over columns of (max - min) across rows."""
        return float(np.max(self.entries.max(axis=0) - self.entries.min(axis=0)))


def q_matrix(tower: TowerSystem, n: int,
             measures: Optional[list] = None) -> StochasticMatrix:
    """Q_n with entries nu_n(i) m_{i,j} / nu_{n-1}(j); rows renormalized to
    sum exactly one, with the pre-normalization residual recorded."""
    if not 1 <= n < tower.n_levels:
        raise IndexOutOfRange(f"q_matrix level {n} outside 1..{tower.n_levels - 1}")
    if measures is None:
        measures = transverse_measures(tower)
    nu_new = measures[n].nu_hat
    nu_old = measures[n - 1].nu_hat
    if np.any(nu_new <= 0) or np.any(nu_old <= 0):
        raise ZeroMeasureClass(f"zero transverse measure at level {n}")
    m = tower.matrix(n).entries
    q = (m * nu_new[:, None]).T / nu_old[:, None]
    sums = q.sum(axis=1)
    return StochasticMatrix(level=n, entries=q / sums[:, None],
                            raw_row_sums=sums,
                            renorm_residual=float(np.max(np.abs(sums - 1.0))))


def chain_product(tower: TowerSystem, m: int, n: int,
                  measures: Optional[list] = None) -> StochasticMatrix:
    """Q(n, m) = Q_{m+1} ... Q_n, cross-checked against the closed form
    nu_n(i) P(n, m)_{i,j} / nu_m(j) with P(n, m) = M_n ... M_{m+1}."""
    if not 0 <= m < n < tower.n_levels:
        raise IndexOutOfRange(f"chain_product needs 0 <= m < n < {tower.n_levels}")
    if measures is None:
        measures = transverse_measures(tower)
    prod = None
    for k in range(m + 1, n + 1):
        qk = q_matrix(tower, k, measures).entries
        prod = qk if prod is None else prod @ qk
    big_p = integer_product(tower, m, n)
    nu_n = measures[n].nu_hat
    nu_m = measures[m].nu_hat
    closed = (big_p * nu_n[:, None]).T / nu_m[:, None]
    resid = float(np.max(np.abs(prod - closed)))
    sums = prod.sum(axis=1)
    return StochasticMatrix(level=n, entries=prod / sums[:, None],
                            raw_row_sums=sums, renorm_residual=resid)


def integer_product(tower: TowerSystem, m: int, n: int) -> np.ndarray:
    """P(n, m) = M_n ... M_{m+1} (exact integer matrix)."""
    if not 0 <= m < n < tower.n_levels:
        raise IndexOutOfRange(f"integer_product needs 0 <= m < n < {tower.n_levels}")
    out = tower.matrix(m + 1).entries
    for k in range(m + 2, n + 1):
        out = tower.matrix(k).entries @ out
    return out


# -------------------------------------------------------------- MC sampling

def sample_points(tower: TowerSystem, n_samples: int, seed: int) -> np.ndarray:
    """Deterministic uniform samples in the top valid region, drawn from
    independent seeded streams merged by stream index."""
    box = tower.level(tower.n_levels - 1).valid_region
    children = np.random.SeedSequence(seed).spawn(MC_STREAMS)
    per = [n_samples // MC_STREAMS] * MC_STREAMS
    per[-1] += n_samples - sum(per)
    parts = []
    for cnt, child in zip(per, children):
        rng = np.random.default_rng(child)
        parts.append(rng.uniform(box.lo, box.hi, size=(cnt, box.dim)))
    return np.vstack(parts)


def sample_colors(tower: TowerSystem, n_samples: int, seed: int):
    """Tile colors of uniform samples at every level, restricted to the
    covered counting region (samples whose top ancestor is trusted)."""
    pts = sample_points(tower, n_samples, seed)
    i0 = tower.locate_level0(pts)
    chains = tower.chains()
    top = tower.n_levels - 1
    top_idx = np.where(i0 >= 0, chains[top][np.clip(i0, 0, None)], -1)
    ok = (i0 >= 0) & (top_idx >= 0)
    ok[ok] &= tower.top_counted()[top_idx[ok]]
    colors = {}
    for n in range(tower.n_levels):
        idx = np.where(i0 >= 0, chains[n][np.clip(i0, 0, None)], -1)
        lab = np.where(idx >= 0,
                       tower.level(n).labels[np.clip(idx, 0, None)], -1)
        colors[n] = lab
    ok &= np.all(np.stack([colors[n] >= 0 for n in range(tower.n_levels)]),
                 axis=0)
    return {n: colors[n][ok] for n in colors}, int(np.sum(ok)), len(pts)


def nested_address_check(tower: TowerSystem, colors: dict, kept: int,
                         m: int, n: int, seqs: Sequence,
                         measures: list) -> list:
    """Compare empirical Lebesgue frequencies of nested tile addresses
    (i_m, ..., i_n) against the product-form prediction
    (prod_k m_{i_{k+1}, i_k}) leb(D_{m,i_m}) nu(C_{n,i_n})."""
    out = []
    leb_m = np.array([s.volume for s in tower.level(m).shapes])
    nu_n = measures[n].nu_hat
    for seq in seqs:
        mask = np.ones(kept, dtype=bool)
        for k, i_k in zip(range(m, n + 1), seq):
            mask &= colors[k] == i_k
        emp = float(np.mean(mask))
        coef = 1.0
        for k in range(m, n):
            coef *= tower.matrix(k + 1).entries[seq[k + 1 - m], seq[k - m]]
        target = coef * float(leb_m[seq[0]]) * float(nu_n[seq[-1]])
        sigma = math.sqrt(max(target * (1 - target), 1e-300) / kept)
        out.append({"sequence": list(map(int, seq)), "empirical": emp,
                    "target": target, "sigma": sigma,
                    "ok": bool(abs(emp - target) <= 3.0 * sigma + 1e-12)})
    return out


# ------------------------------------------------------------------- mixing

@dataclass
class MixingReport:
    """Contraction data of the induced chain.

    ``c_T`` uses the uniform form 1 - inf_n(1/(|M_n|_1 |M_{n+1}|_1)), the
    one the per-level contraction bound actually satisfies; the literal
    sup form is recorded alongside and flagged when the two differ."""

    c_Q: list
    c_T: float
    c_T_sup_form: float
    c_T_forms_differ: bool
    delta_T: float
    K: float
    per_level_bound_ok: list
    empirical_gaps: dict           # (m, n) -> gap record
    mea_box_ok: bool
    mea_box_min: float
    mea_box_bound: float
    marginal_residuals: list
    mc_samples_kept: int
    mc_samples_total: int
    matrices: list = field(default_factory=list)
    notes: str = ""

    @property
    def speed_ok(self) -> bool:
        return all(rec["ok"] for rec in self.empirical_gaps.values())

    def to_dict(self) -> dict:
        return {
            "c_Q": self.c_Q,
            "c_T": self.c_T,
            "c_T_sup_form": self.c_T_sup_form,
            "c_T_forms_differ": self.c_T_forms_differ,
            "delta_T": self.delta_T,
            "K": self.K,
            "per_level_bound_ok": self.per_level_bound_ok,
            "empirical_gaps": {f"{m},{n}": rec for (m, n), rec
                               in self.empirical_gaps.items()},
            "mea_box_ok": self.mea_box_ok,
            "mea_box_min": self.mea_box_min,
            "mea_box_bound": self.mea_box_bound,
            "marginal_residuals": self.marginal_residuals,
            "mc_samples_kept": self.mc_samples_kept,
            "mc_samples_total": self.mc_samples_total,
            "matrices": self.matrices,
            "notes": self.notes,
        }


def contraction_constant(norms_1: Sequence[float]):
    """(c_T, c_T_sup_form) from the column norms of M_1..M_N.

    Pairs (n, n+1) are scanned; the uniform form uses the largest product
    so every per-level bound 1 - 1/(|M_n|_1 |M_{n+1}|_1) stays below it.
    """
    pairs = [norms_1[k] * norms_1[k + 1] for k in range(len(norms_1) - 1)]
    if not pairs:
        raise IndexOutOfRange("need at least two transition matrices")
    return 1.0 - 1.0 / max(pairs), 1.0 - 1.0 / min(pairs)


def delta_exponent(c_T: float, K: float) -> float:
    """Deviation exponent -log_K(c_T)."""
    return -math.log(c_T) / math.log(K)


def mixing_analysis(tower: TowerSystem, n_samples: int = 100_000,
                    seed: int = 0, max_gap: int = 3,
                    measures: Optional[list] = None) -> MixingReport:
    """Contraction coefficients, the mixing constant and its exponent, and
    Monte-Carlo verification of the conditional-vs-marginal gap bound."""
    if tower.n_levels < 3:
        raise IndexOutOfRange("mixing analysis needs at least 3 levels")
    for n in range(1, tower.n_levels):
        if tower.matrix(n).min_entry() < 1:
            raise NonPositiveMatrix(
                f"transition matrix M_{n} has zero entries")
    if measures is None:
        measures = transverse_measures(tower)
    norms_1 = [tower.matrix(n).norm_1() for n in range(1, tower.n_levels)]
    c_T, c_sup = contraction_constant(norms_1)
    if not 0.0 < c_T < 1.0:
        raise NonPositiveMatrix(f"contraction constant c_T={c_T} out of (0,1)")
    delta = delta_exponent(c_T, tower.params.K)

    qs = {n: q_matrix(tower, n, measures) for n in range(1, tower.n_levels)}
    c_q = [qs[n].contraction() for n in range(1, tower.n_levels)]
    bound_ok = []
    for n in range(1, tower.n_levels - 1):
        bound = 1.0 - 1.0 / (norms_1[n - 1] * norms_1[n])
        bound_ok.append(bool(c_q[n - 1] <= bound + 1e-12))

    colors, kept, total = sample_colors(tower, n_samples, seed)
    gaps = {}
    top = tower.n_levels - 1
    for m in range(0, top):
        for n in range(m + 1, min(m + max_gap, top) + 1):
            gaps[(m, n)] = _gap_record(tower, colors, kept, m, n, c_T)

    # measure lower bound leb(D_{n,i}) nu(C_{n,i}) >= 1/M
    norms_inf = [tower.matrix(n).norm_inf() for n in range(1, tower.n_levels)]
    big_m = max(norms_inf[k] * norms_inf[k + 1]
                for k in range(len(norms_inf) - 1))
    mins = []
    for n in range(tower.n_levels):
        leb = np.array([s.volume for s in tower.level(n).shapes])
        mins.append(float(np.min(leb * measures[n].nu_hat)))
    mea_min = min(mins)
    mea_ok = bool(mea_min >= (1.0 / big_m) * (1.0 - 1e-9))

    marg = []
    for n in range(tower.n_levels):
        leb = np.array([s.volume for s in tower.level(n).shapes])
        expect = leb * measures[n].nu_hat
        emp = np.bincount(colors[n], minlength=tower.level(n).t) / kept
        sigma = np.sqrt(np.maximum(expect * (1 - expect), 1e-300) / kept)
        resid = np.abs(emp - expect)
        marg.append({
            "level": n,
            "max_residual": float(np.max(resid)),
            "ok": bool(np.all(resid <= 3.0 * sigma +
                              measures[n].boundary_band + 1e-12)),
        })

    matrices_dump = [{
        "n": n,
        "rows": "level %d classes" % (n - 1),
        "cols": "level %d classes" % n,
        "row_labels": [c.token for c in tower.level(n - 1).classes],
        "col_labels": [c.token for c in tower.level(n).classes],
        "entries": qs[n].entries.tolist(),
        "raw_row_sums": qs[n].raw_row_sums.tolist(),
        "renorm_residual": qs[n].renorm_residual,
    } for n in range(1, tower.n_levels)]

    notes = ""
    if abs(c_T - c_sup) > 1e-15:
        notes = ("uniform and literal sup-form contraction constants "
                 "differ; the uniform (larger) one is used for bounds")
    return MixingReport(
        c_Q=c_q, c_T=c_T, c_T_sup_form=c_sup,
        c_T_forms_differ=bool(abs(c_T - c_sup) > 1e-15),
        delta_T=delta, K=tower.params.K, per_level_bound_ok=bound_ok,
        empirical_gaps=gaps, mea_box_ok=mea_ok, mea_box_min=mea_min,
        mea_box_bound=1.0 / big_m, marginal_residuals=marg,
        mc_samples_kept=kept, mc_samples_total=total,
        matrices=matrices_dump, notes=notes)


def _gap_record(tower, colors, kept, m, n, c_T):
    """max_{i,j} |P(color_n = i | color_m = j) - P(color_n = i)| from the
    samples, with its Monte-Carlo tolerance."""
    t_m, t_n = tower.level(m).t, tower.level(n).t
    cm, cn = colors[m], colors[n]
    marg = np.bincount(cn, minlength=t_n) / kept
    bound = c_T ** (n - m)
    worst = (0.0, 0.0)
    ok = True
    for j in range(t_m):
        sel = cm == j
        n_j = int(np.sum(sel))
        if n_j == 0:
            continue
        cond = np.bincount(cn[sel], minlength=t_n) / n_j
        for i in range(t_n):
            gap = abs(cond[i] - marg[i])
            sigma = (math.sqrt(max(cond[i] * (1 - cond[i]), 1e-300) / n_j) +
                     math.sqrt(max(marg[i] * (1 - marg[i]), 1e-300) / kept))
            if gap > bound + 3.0 * sigma + 1e-12:
                ok = False
            if gap > worst[0]:
                worst = (gap, sigma)
    return {"gap": worst[0], "sigma": worst[1], "bound": bound, "ok": ok}
