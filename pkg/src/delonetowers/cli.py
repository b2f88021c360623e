"""Batch CLI: generate point sets, build/verify towers, run the chain
analysis and the deviation sweeps.

Stages communicate through files in the output directory (points.csv,
tower.json, ...), so expensive artifacts are computed once and reloaded.
Every run is deterministic for a fixed config and seed, and every output
file carries the config hash and schema version.

Exit codes: 0 ok, 2 config error, 3 resource exhausted (window too
small), 4 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import delone, deviation, markov, plots, towers
from ._util import sha256_text, to_jsonable, write_json
from .delone import SCHEMA_VERSION, GeneratorSpec
from .errors import (
    BoundaryViolation,
    ConfigError,
    CongruenceFailure,
    DeloneTowersError,
    EmptyLevel,
    HypothesisViolation,
    NoFullTile,
    NonPositiveMatrix,
    PeriodicInput,
    TowerTooShallow,
    WindowExhausted,
    WindowTooSmall,
    ZeroMeasureClass,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_VERIFY = 4

_RESOURCE_ERRORS = (WindowExhausted, WindowTooSmall, EmptyLevel,
                    TowerTooShallow, NoFullTile, BoundaryViolation)
_VERIFY_ERRORS = (CongruenceFailure, HypothesisViolation, NonPositiveMatrix,
                  ZeroMeasureClass, PeriodicInput)

_DEFAULTS = {
    "generator": "fibonacci_1d",
    "extent": "100000",
    "s0": "2.0",
    "K": "10",
    "n_max": "3",
    "L_hat": "auto",
    "profile_S": "2,4,8",
    "enforce_theorem_K": "false",
    "strict": "false",
    "allow_periodic": "false",
    "seed": "0",
    "patch_S": "2.0",
    "N_values": "10,18,32,56,100,178,316,562,1000",
    "anchors_per_N": "8",
    "mc_samples": "100000",
    "out": "out",
    "sub_rules": "",
    "sub_lengths": "",
    "sub_seed_letter": "a",
}


class RunConfig:
    """Validated key-value run configuration."""

    def __init__(self, raw: dict, path: str = ""):
        unknown = set(raw) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(_DEFAULTS)
        merged.update(raw)
        self.raw = merged
        self.path = path
        try:
            self.extent = float(merged["extent"])
            self.s0 = float(merged["s0"])
            self.K = float(merged["K"])
            self.n_max = int(merged["n_max"])
            self.L_hat = (None if merged["L_hat"].strip() == "auto"
                          else float(merged["L_hat"]))
            self.profile_S = _float_list(merged["profile_S"])
            self.enforce_theorem_K = _parse_bool(merged["enforce_theorem_K"])
            self.strict = _parse_bool(merged["strict"])
            self.allow_periodic = _parse_bool(merged["allow_periodic"])
            self.seed = int(merged["seed"])
            self.patch_S = float(merged["patch_S"])
            self.N_values = _float_list(merged["N_values"])
            self.anchors_per_N = int(merged["anchors_per_N"])
            self.mc_samples = int(merged["mc_samples"])
            self.out = merged["out"]
        except ValueError as exc:
            raise ConfigError(f"bad config value: {exc}") from exc
        if self.extent <= 0 or self.s0 <= 0 or self.K <= 1 or self.n_max < 1:
            raise ConfigError("extent, s0 must be > 0; K > 1; n_max >= 1")
        if not self.N_values:
            raise ConfigError("N_values must be a non-empty list")
        if self.anchors_per_N < 1 or self.mc_samples < 100:
            raise ConfigError("anchors_per_N >= 1 and mc_samples >= 100")
        self.generator_spec = self._build_spec(merged)
        self.config_hash = sha256_text(
            "\n".join(f"{k}={merged[k]}" for k in sorted(merged)))

    def _build_spec(self, merged) -> GeneratorSpec:
        name = merged["generator"].strip()
        if name == "fibonacci_1d":
            return GeneratorSpec.fibonacci()
        if name == "pell_1d":
            return GeneratorSpec.pell()
        if name == "lattice_1d":
            return GeneratorSpec.lattice(1)
        if name == "lattice_2d":
            return GeneratorSpec.lattice(2)
        if name == "product_fib2d":
            return GeneratorSpec.product(GeneratorSpec.fibonacci(),
                                         GeneratorSpec.fibonacci())
        if name == "product_fib_lattice":
            return GeneratorSpec.product(GeneratorSpec.fibonacci(),
                                         GeneratorSpec.lattice(1))
        if name == "substitution_1d":
            rules = _parse_map(merged["sub_rules"], str)
            lengths = _parse_map(merged["sub_lengths"], float)
            if not rules or not lengths:
                raise ConfigError(
                    "substitution_1d needs sub_rules and sub_lengths")
            return GeneratorSpec.substitution(rules, lengths,
                                              merged["sub_seed_letter"])
        raise ConfigError(f"unknown generator {name!r}")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str):
    items = [t for t in text.replace(";", ",").split(",") if t.strip()]
    return [float(t) for t in items]


def _parse_map(text: str, cast):
    out = {}
    for item in text.split(";"):
        if not item.strip():
            continue
        if ":" not in item:
            raise ConfigError(f"bad map entry {item!r} (want key:value)")
        k, v = item.split(":", 1)
        out[k.strip()] = cast(v.strip())
    return out


def parse_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} not found")
    raw = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            k, v = line.split("=", 1)
            raw[k.strip()] = v.strip()
    return RunConfig(raw, path)


# ------------------------------------------------------------------ stages

def _paths(cfg: RunConfig) -> dict:
    out = cfg.out
    return {
        "points": os.path.join(out, "points.csv"),
        "tower": os.path.join(out, "tower.json"),
        "verify": os.path.join(out, "verify_report.json"),
        "profile": os.path.join(out, "profile.json"),
        "mixing": os.path.join(out, "mixing_report.json"),
        "sweep": os.path.join(out, "deviation_sweep.csv"),
        "fit": os.path.join(out, "deviation_fit.json"),
        "plotdata": os.path.join(out, "deviation_plotdata.csv"),
        "fig_tower": os.path.join(out, "tower_levels.png"),
        "fig_mixing": os.path.join(out, "mixing.png"),
        "fig_loglog": os.path.join(out, "deviation_loglog.png"),
        "fig_ratio": os.path.join(out, "deviation_ratio.png"),
    }


def cmd_generate(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    X = delone.generate(cfg.generator_spec, cfg.extent)
    delone.save_points_csv(X, _paths(cfg)["points"], cfg.config_hash)
    print(f"generated {X.n_points} points (dim {X.dim}), "
          f"r_disc={X.r_disc:.6g} R_dense={X.R_dense:.6g}")
    return EXIT_OK


def _load_window(cfg: RunConfig):
    path = _paths(cfg)["points"]
    if not os.path.exists(path):
        raise ConfigError(f"{path} missing; run the generate stage first")
    return delone.load_points_csv(path)


def _resolve_L_hat(cfg: RunConfig, X) -> tuple:
    if cfg.L_hat is not None:
        return cfg.L_hat, None
    prof = delone.repetitivity_profile(X, cfg.profile_S)
    return prof.L_hat, prof


def cmd_tower(cfg: RunConfig) -> int:
    paths = _paths(cfg)
    X = _load_window(cfg)
    L_hat, prof = _resolve_L_hat(cfg, X)
    if prof is not None:
        write_json(paths["profile"], {
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.config_hash,
            "samples": prof.samples,
            "L_hat": prof.L_hat,
            "retbounds_ok": prof.retbounds_ok,
            "class_counts": prof.class_counts,
        })
    params = towers.TowerParams(
        s0=cfg.s0, K=cfg.K, n_max=cfg.n_max, L_hat=L_hat,
        enforce_theorem_K=cfg.enforce_theorem_K, strict=cfg.strict)
    tower = towers.build_tower(X, params, allow_periodic=cfg.allow_periodic)
    towers.save_tower_json(tower, paths["tower"], cfg.config_hash)
    plots.plot_tower_levels(tower, paths["fig_tower"])
    code = _write_verify_report(cfg, tower)
    print(f"tower: {tower.n_levels} levels, classes "
          f"{[l.t for l in tower.levels]}, punctures "
          f"{[l.n_punctures for l in tower.levels]}")
    return code


def _write_verify_report(cfg: RunConfig, tower) -> int:
    paths = _paths(cfg)
    reports = towers.verify_tower(tower)
    diag = towers.matrix_diagnostics(tower)
    ok = all(r.passed for r in reports)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash,
        "all_passed": ok,
        "zoom_reports": [{"n": r.n, "checks": r.checks, "details": r.details}
                         for r in reports],
        "matrix_diagnostics": {
            "per_level": diag.per_level,
            "sup_norm_inf": diag.sup_norm_inf,
            "norm_bound_theorem": diag.norm_bound_theorem,
            "all_positive": diag.all_positive,
            "note": diag.note,
        },
        "bound_ledger": tower.bound_ledger,
    }
    write_json(paths["verify"], payload)
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        print(f"verify level {r.n}: {status} {r.checks}")
    if not ok:
        return EXIT_VERIFY
    if cfg.strict:
        hyp_ok = all(all(e.get(k, True) for k in
                         ("hyp1_k_vs_recC", "hyp2_k_vs_prev",
                          "hyp3_rC_vs_Rext"))
                     for e in tower.bound_ledger)
        if not hyp_ok:
            return EXIT_VERIFY
    return EXIT_OK


def _load_tower(cfg: RunConfig):
    paths = _paths(cfg)
    if not os.path.exists(paths["tower"]):
        raise ConfigError(f"{paths['tower']} missing; run the tower stage first")
    X = _load_window(cfg)
    return X, towers.load_tower_json(paths["tower"], X)


def cmd_verify(cfg: RunConfig) -> int:
    _, tower = _load_tower(cfg)
    return _write_verify_report(cfg, tower)


def cmd_markov(cfg: RunConfig) -> int:
    paths = _paths(cfg)
    _, tower = _load_tower(cfg)
    if tower.n_levels < 3 or any(l.t < 2 for l in tower.levels):
        note = ("degenerate tower (single class or < 3 levels): "
                "contraction constant undefined")
        write_json(paths["mixing"], {
            "schema_version": SCHEMA_VERSION,
            "config_hash": cfg.config_hash,
            "degenerate": True,
            "notes": note,
        })
        print("warning:", note)
        return EXIT_OK
    report = markov.mixing_analysis(tower, n_samples=cfg.mc_samples,
                                    seed=cfg.seed)
    payload = {"schema_version": SCHEMA_VERSION,
               "config_hash": cfg.config_hash,
               "degenerate": False}
    payload.update(report.to_dict())
    write_json(paths["mixing"], payload)
    plots.plot_mixing(to_jsonable(payload), paths["fig_mixing"])
    print(f"c_T={report.c_T:.9f} delta_T={report.delta_T:.6g} "
          f"speed_ok={report.speed_ok}")
    return EXIT_OK if report.speed_ok else EXIT_VERIFY


def cmd_deviation(cfg: RunConfig) -> int:
    paths = _paths(cfg)
    X, tower = _load_tower(cfg)
    measures = markov.transverse_measures(tower)
    delta_T = None
    if tower.n_levels >= 3 and all(l.t >= 2 for l in tower.levels):
        norms = [tower.matrix(n).norm_1() for n in range(1, tower.n_levels)]
        c_T, _ = markov.contraction_constant(norms)
        delta_T = markov.delta_exponent(c_T, tower.params.K)
    class_rep = delone.patch_at(X, np.zeros(X.dim), cfg.patch_S)
    records, fit, cubes = deviation.deviation_sweep(
        X, tower, class_rep, cfg.N_values, cfg.anchors_per_N,
        measures=measures, delta_T=delta_T)
    _write_sweep_csv(paths["sweep"], records, cfg, X.dim)
    _write_plotdata_csv(paths["plotdata"], records, cfg)
    fit_payload = {"schema_version": SCHEMA_VERSION,
                   "config_hash": cfg.config_hash,
                   "cube_reports": cubes}
    fit_payload.update(fit)
    write_json(paths["fit"], fit_payload)
    plots.plot_deviation_loglog(fit, paths["fig_loglog"])
    plots.plot_deviation_ratio(fit, paths["fig_ratio"])
    trend = fit.get("ratio_trend", fit["trivial_trend"])
    print(f"sweep: {len(records)} cubes, slope={fit['slope']:.4f}, "
          f"no_upward_trend={trend['no_upward']}")
    return EXIT_OK


def _write_sweep_csv(path, records, cfg: RunConfig, dim: int) -> None:
    anchor_cols = "anchor_x" if dim == 1 else "anchor_x,anchor_y"
    with open(path, "w") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        fh.write(f"# config_hash={cfg.config_hash}\n")
        fh.write(f"N,{anchor_cols},n_p,freq_hat,dev,n0,n1\n")
        for r in records:
            anchor = ",".join(f"{a:.17g}" for a in r.anchor)
            n1 = "" if r.n1 is None else str(r.n1)
            fh.write(f"{r.N:.17g},{anchor},{r.n_p},{r.freq_hat:.17g},"
                     f"{r.dev:.17g},{r.n0},{n1}\n")


def _write_plotdata_csv(path, records, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        fh.write(f"# config_hash={cfg.config_hash}\n")
        fh.write("log_N,log_abs_dev\n")
        for r in records:
            fh.write(f"{np.log(r.N):.17g},"
                     f"{np.log(max(abs(r.dev), 1e-12)):.17g}\n")


# -------------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="delonetowers",
        description="hierarchical towers, chain mixing and deviation "
                    "experiments on repetitive point sets")
    parser.add_argument("command",
                        choices=["generate", "tower", "verify", "markov",
                                 "deviation"])
    parser.add_argument("--config", required=True, help="key=value file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--strict", action="store_true",
                        help="fail on any zoom hypothesis violation")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.out:
            cfg.out = args.out
        if args.strict:
            cfg.strict = True
        if args.seed is not None:
            cfg.seed = args.seed
        os.makedirs(cfg.out, exist_ok=True)
        handler = {
            "generate": cmd_generate,
            "tower": cmd_tower,
            "verify": cmd_verify,
            "markov": cmd_markov,
            "deviation": cmd_deviation,
        }[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WindowExhausted as exc:
        print(f"resource error: {exc} "
              f"(deepest completed level: {exc.deepest_level})",
              file=sys.stderr)
        return EXIT_RESOURCE
    except _RESOURCE_ERRORS as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except _VERIFY_ERRORS as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except DeloneTowersError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
