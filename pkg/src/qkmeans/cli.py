"""Command-line experiment harness.

    qkmeans gen --n 1000 --k 4 --seed 7 --out d.csv
    qkmeans run noiseless d.csv --delta 0.1 --eps 0.1 --trials 100 --out report.jsonl
    qkmeans verify all
    qkmeans bounds dixie --alpha 1 --k 5 --m 2

Exit codes: 0 success, 1 algorithmic or statistical failure, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bounds, datagen
from .noisy import SCALES, run_noisy, run_noisy_outlier
from .oracle import OracleSession
from .outliers import run_outlier
from .report import SCHEMA_VERSION, _jsonable
from .seeding import PROBE_ORDERS, SeedConfig, run_noiseless

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ALGORITHMS = ("noiseless", "outlier", "noisy", "noisy-outlier")
SUITES = ("centroid", "kl", "hypergeom", "dixie", "erlang")
BOUND_NAMES = ("dixie", "qkmwol", "erlang", "noisy-m", "noisy-outlier", "noisy-outlier-alt", "kl",
               "min-cluster")
MEAN_FIELDS = ("draws", "queries_total", "queries_phase1", "queries_phase2", "potential_ratio",
               "misclassification_ratio", "outlier_precision", "outlier_recall", "wall_time_ms")
CSV_FIELDS = ("trial_id", "kind", "algorithm", "rng_seed", "scale_mode") + MEAN_FIELDS + (
    "potential_achieved", "potential_reference", "error")


class UsageError(Exception):
    pass


def _dumps(row) -> str:
    return json.dumps(_jsonable(row), sort_keys=True, ensure_ascii=False)


class _Sink:
    def __init__(self, path):
        self.path = path
        self.fh = open(path, "w", encoding="utf-8", newline="\n") if path and path != "-" else sys.stdout

    def write(self, row):
        self.fh.write(_dumps(row) + "\n")

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()
        else:
            self.fh.flush()


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    spec = datagen.MixtureSpec(n=args.n, K=args.k, d=args.d, alpha=args.alpha, p_o=args.po, sigma=args.sigma,
                               center_spread=args.spread, seed=args.seed, min_center_sep=args.min_sep)
    try:
        ds = datagen.generate(spec)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if not args.out or args.out == "-":
        raise UsageError("gen needs --out PATH")
    datagen.write_dataset(ds, args.out)
    sep = datagen.compute_gamma(ds, 0.1)
    summary = {
        "path": args.out,
        "n": ds.n,
        "K": ds.truth.K,
        "alpha_realized": ds.truth.alpha,
        "s_min": int(min(ds.truth.cluster_sizes)),
        "cluster_sizes": list(ds.truth.cluster_sizes),
        "n_outliers": ds.truth.n_outliers,
        "Gamma_0.1": sep.gamma,
        "separation_violations": len(sep.violations),
    }
    print(_dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# run

_DATASET = None


def _init_worker(dataset):
    global _DATASET
    _DATASET = dataset


def _trial(job):
    algorithm, opts, trial_id, seed = job
    ds = _DATASET
    rng = np.random.default_rng(seed)
    try:
        if algorithm in ("noiseless", "outlier"):
            session = OracleSession.noiseless(ds.truth.labels, seed=seed)
            cfg = SeedConfig(opts["K"], opts["delta"], opts["eps"], opts["max_draws"], opts["probe_order"])
            if algorithm == "noiseless":
                _, _, rep = run_noiseless(session, ds, cfg, rng, trial_id)
            else:
                _, _, rep = run_outlier(session, ds, cfg, opts["gamma"], rng, trial_id)
        else:
            session = OracleSession.noisy(ds.truth.labels, opts["p_e"], seed=seed)
            if algorithm == "noisy":
                _, _, rep = run_noisy(session, ds, opts["K"], opts["delta"], opts["eps"], opts["alpha"],
                                      opts["scale"], rng, trial_id)
            else:
                _, _, rep = run_noisy_outlier(session, ds, opts["K"], opts["delta"], opts["eps"], opts["alpha"],
                                              opts["p_o"], opts["scale"], rng, trial_id)
        row = rep.to_dict()
        if algorithm in ("noiseless", "outlier"):
            row["scale_mode"] = None
        return row
    except Exception as e:  # reported per trial, never fatal for the batch
        return {"kind": "error", "algorithm": algorithm, "trial_id": trial_id, "rng_seed": seed,
                "error": type(e).__name__, "message": str(e), "schema_version": SCHEMA_VERSION}


def _mean(rows, key):
    vals = [r[key] for r in rows if isinstance(r.get(key), (int, float)) and not isinstance(r.get(key), bool)]
    return sum(vals) / len(vals) if vals else None


def aggregate(rows, algorithm: str, opts: dict) -> dict:
    ok = [r for r in rows if r.get("kind") == "trial"]
    out = {
        "kind": "aggregate",
        "algorithm": algorithm,
        "schema_version": SCHEMA_VERSION,
        "trials": len(rows),
        "errors": len(rows) - len(ok),
        "config": {k: v for k, v in opts.items() if k != "max_draws"},
        "means": {k: _mean(ok, k) for k in MEAN_FIELDS},
    }
    eps = opts["eps"]
    out["success_fraction"] = (sum(1 for r in ok if r["potential_ratio"] is not None
                                   and r["potential_ratio"] <= 1 + eps) / len(ok)) if ok else None
    out["exact_fraction"] = (sum(1 for r in ok if r["misclassification_ratio"] == 0) / len(ok)) if ok else None

    verdicts = {}
    mean_q = out["means"]["queries_total"]
    if ok and mean_q is not None:
        if algorithm == "noiseless":
            verdicts["mean_queries_le_query_bound"] = mean_q <= ok[0]["bound_values"]["query_bound"]
        elif algorithm == "outlier":
            bv = ok[0]["bound_values"]
            verdicts["mean_queries_le_thm_total"] = mean_q <= bv["thm_qkmwol_total"]
            verdicts["mean_phase1_le_thm_phase1"] = out["means"]["queries_phase1"] <= bv["thm_qkmwol_phase1"]
            verdicts["mean_phase2_le_thm_phase2"] = out["means"]["queries_phase2"] <= bv["thm_qkmwol_phase2"]
            verdicts["outlier_scores_perfect"] = all(r["outlier_precision"] == 1.0 and r["outlier_recall"] == 1.0
                                                     for r in ok)
        elif algorithm == "noisy-outlier":
            out["clean_fraction"] = sum(1 for r in ok if r["extra"]["outliers_in_clusters"] == 0) / len(ok)
    out["bound_verdicts"] = verdicts
    return out


def _load_dataset(path):
    try:
        return datagen.read_dataset(path)
    except FileNotFoundError as e:
        raise UsageError(f"no such dataset file: {path}") from e
    except (ValueError, KeyError) as e:
        raise UsageError(f"cannot read dataset {path}: {e}") from e


def _run_options(args, ds) -> dict:
    if args.trials < 1:
        raise UsageError("--trials must be ≥ 1")
    K = args.k if args.k is not None else ds.truth.K
    if K < 1:
        raise UsageError("K must be ≥ 1")
    for name in ("delta", "eps"):
        if not 0 < getattr(args, name) < 1:
            raise UsageError(f"{name} must lie in (0, 1)")
    if not 0 <= args.pe < 0.5:
        raise UsageError("p_e must lie in [0, 1/2)")
    alpha = args.alpha if args.alpha is not None else ds.truth.alpha
    if alpha < 1:
        raise UsageError("alpha must be ≥ 1")
    gamma = args.gamma
    if gamma not in ("auto", "truth"):
        try:
            gamma = float(gamma)
        except ValueError as e:
            raise UsageError("--gamma must be auto, truth or a number") from e
    return {
        "K": K, "delta": args.delta, "eps": args.eps, "alpha": alpha,
        "p_o": args.po if args.po is not None else ds.truth.p_o,
        "p_e": args.pe, "gamma": gamma, "probe_order": args.probe_order,
        "max_draws": args.max_draws, "scale": args.scale, "seed": args.seed,
    }


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in CSV_FIELDS})


def cmd_run(args) -> int:
    ds = _load_dataset(args.dataset)
    opts = _run_options(args, ds)
    jobs = [(args.algorithm, opts, i, args.seed + i) for i in range(args.trials)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs, initializer=_init_worker, initargs=(ds,)) as pool:
            rows = list(pool.map(_trial, jobs))
    else:
        _init_worker(ds)
        rows = [_trial(j) for j in jobs]

    agg = aggregate(rows, args.algorithm, opts)
    sink = _Sink(args.out)
    for r in rows:
        sink.write(r)
    sink.write(agg)
    sink.close()
    if args.csv:
        _write_csv(args.csv, rows)
    if agg["errors"] == agg["trials"]:
        first = rows[0]
        print(f"error: all {agg['trials']} trials failed; first: {first['error']}: {first['message']}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def verify_centroid(args, rng):
    ms = [args.m] if args.m is not None else [5, 10, 50]
    deltas = [args.delta] if args.delta is not None else [0.05, 0.1, 0.2]
    trials = args.trials or 10_000
    out = []
    for name, pts in bounds.centroid_point_sets(args.seed).items():
        for m in ms:
            for d in deltas:
                w, wo = bounds.compare_centroid_sampling(pts, m, d, trials, rng)
                rows = []
                for res, rate in ((w, w.rate_loose), (wo, wo.rate_tight)):
                    sigma = math.sqrt(rate * (1 - rate) / trials)
                    rows.append(rate >= 1 - d - 3 * sigma)
                passed = all(rows) and wo.rate_loose >= w.rate_loose
                out.append({"suite": "centroid", "point_set": name, "m": m, "delta": d, "trials": trials,
                            "rate_with": w.rate_loose, "rate_without_tight": wo.rate_tight,
                            "rate_without_loose": wo.rate_loose, "factor_loose": w.factor_loose,
                            "factor_tight": wo.factor_tight, "pass": passed})
    return out


def kl_grid_check(step: float = 0.01) -> dict:
    grid = np.round(np.arange(step, 1.0, step), 10)
    violations, ties_off_diag, cells = [], [], 0
    for i, x in enumerate(grid):
        for y in grid[i:]:
            cells += 1
            kl, q = bounds.kl_bernoulli(float(x), float(y)), bounds.kl_quadratic_bound(float(x), float(y))
            if kl < q:
                violations.append((float(x), float(y)))
            elif kl == q and x != y:
                ties_off_diag.append((float(x), float(y)))
    spot = bounds.kl_bernoulli(0.1, 0.5)
    return {"suite": "kl", "cells": cells, "violations": violations[:10], "n_violations": len(violations),
            "off_diagonal_equalities": len(ties_off_diag), "spot_kl_0.1_0.5": spot,
            "spot_bound_0.1_0.5": bounds.kl_quadratic_bound(0.1, 0.5),
            "pass": not violations and not ties_off_diag and abs(spot - 0.3681) <= 1e-4}


def verify_kl(args, rng):
    return [kl_grid_check()]


def verify_hypergeom(args, rng):
    trials = args.trials or 10_000
    out = []
    for n, probs, m in bounds.HYPERGEOM_GRID:
        r = bounds.hypergeom_tail_check(n, probs, m, trials, rng)
        out.append({"suite": "hypergeom", "n": n, "probs": list(probs), "m": m, "trials": trials,
                    "joint_rate": r.joint_rate, "min_rate": r.min_rate, "union_bound": r.union_bound,
                    "pass": r.joint_rate >= r.union_bound - 0.01})
    return out


def verify_dixie(args, rng):
    ks = [args.k] if args.k is not None else [2, 5, 10]
    ms = [args.m] if args.m is not None else [2, 5, 50]
    alphas = [args.alpha] if args.alpha is not None else [1.0, 2.0]
    runs = args.trials or 10_000
    out = []
    for a in alphas:
        for K in ks:
            for m in ms:
                t = bounds.simulate_dixie(bounds.type_probs(K, a), m, runs, rng)
                b = bounds.dixie_bound(a, K, m)
                out.append({"suite": "dixie", "alpha": a, "K": K, "m": m, "runs": runs,
                            "mean": float(t.mean()), "bound": b, "pass": float(t.mean()) <= b})
    return out


def verify_erlang(args, rng):
    ks = [args.k] if args.k is not None else [2, 4, 8]
    ms = [args.m] if args.m is not None else [2, 5]
    alphas = [args.alpha] if args.alpha is not None else [1.0, 2.0]
    draws = args.trials or 100_000
    out = []
    for a in alphas:
        for K in ks:
            for m in ms:
                for p_o in (0.0, 0.2):
                    probs = (1 - p_o) * bounds.type_probs(K, a)
                    x = bounds.simulate_erlang_max(probs, m, draws, rng)
                    ex, ex2 = bounds.erlang_max_moments(a, K, p_o, m)
                    m1, m2 = float(x.mean()), float(np.mean(x ** 2))
                    out.append({"suite": "erlang", "alpha": a, "K": K, "m": m, "p_o": p_o, "draws": draws,
                                "mean": m1, "second_moment": m2, "EX_bound": ex, "EX2_bound": ex2,
                                "pass": m1 <= ex and m2 <= ex2})
    return out


VERIFIERS = {"centroid": verify_centroid, "kl": verify_kl, "hypergeom": verify_hypergeom,
             "dixie": verify_dixie, "erlang": verify_erlang}


def cmd_verify(args) -> int:
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be ≥ 1")
    if args.delta is not None and not 0 < args.delta < 1:
        raise UsageError("delta must lie in (0, 1)")
    if args.m is not None and args.m < 1:
        raise UsageError("m must be ≥ 1")
    if args.k is not None and args.k < 1:
        raise UsageError("K must be ≥ 1")
    if args.alpha is not None and args.alpha < 1:
        raise UsageError("alpha must be ≥ 1")
    suites = SUITES if args.suite == "all" else (args.suite,)
    rng = np.random.default_rng(args.seed)
    rows = []
    for s in suites:
        try:
            rows.extend(VERIFIERS[s](args, rng))
        except ValueError as e:
            raise UsageError(str(e)) from e
    failed = [r for r in rows if not r["pass"]]
    sink = _Sink(args.out)
    for r in rows:
        sink.write({"kind": "check", **r})
    sink.write({"kind": "verify_summary", "suites": list(suites), "checks": len(rows), "failed": len(failed),
                "pass": not failed})
    sink.close()
    for r in failed:
        print("FAIL " + _dumps({k: v for k, v in r.items() if k != "violations"}), file=sys.stderr)
    return EXIT_OK if not failed else EXIT_FAIL


# ---------------------------------------------------------------------------
# bounds


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError("missing " + ", ".join("--" + n.replace("_", "-") for n in missing))
    return [getattr(args, n) for n in names]


def cmd_bounds(args) -> int:
    name = args.name
    try:
        if name == "dixie":
            alpha, K, m = _need(args, "alpha", "k", "m")
            value = {"dixie_bound": bounds.dixie_bound(alpha, K, m)}
        elif name == "qkmwol":
            alpha, K, d, e, p_o = _need(args, "alpha", "k", "delta", "eps", "po")
            b = bounds.thm_qkmwol(alpha, K, d, e, p_o)
            value = {"phase1": b.phase1, "phase2": b.phase2, "total": b.total}
        elif name == "erlang":
            alpha, K, p_o, m = _need(args, "alpha", "k", "po", "m")
            ex, ex2 = bounds.erlang_max_moments(alpha, K, p_o, m)
            value = {"EX_bound": ex, "EX2_bound": ex2}
        elif name == "noisy-m":
            alpha, K, d, e, p_e = _need(args, "alpha", "k", "delta", "eps", "pe")
            mt, M = bounds.noisy_M(alpha, K, d, e, p_e, coef=SCALES[args.scale].m_coef)
            value = {"M_tilde": mt, "M": M}
        elif name == "noisy-outlier":
            alpha, K, d, e, p_e, p_o = _need(args, "alpha", "k", "delta", "eps", "pe", "po")
            c = SCALES[args.scale]
            r = bounds.noisy_outlier_params(alpha, K, d, e, p_e, p_o, coef_m=c.m_coef, coef_n=c.n_coef)
            value = {"M_tilde": r.M_tilde, "M": r.M, "N": r.N}
        elif name == "noisy-outlier-alt":
            alpha, K, d, e, p_e, p_o = _need(args, "alpha", "k", "delta", "eps", "pe", "po")
            value = bounds.noisy_outlier_params_alt(alpha, K, d, e, p_e, p_o)
        elif name == "kl":
            x, y = _need(args, "x", "y")
            value = {"kl": bounds.kl_bernoulli(x, y), "quadratic_bound": bounds.kl_quadratic_bound(x, y)}
        else:
            n, K, e = _need(args, "n", "k", "eps")
            value = {"min_cluster_threshold": bounds.min_cluster_threshold(n, K, e)}
    except ValueError as e:
        raise UsageError(str(e)) from e
    inputs = {k: getattr(args, k) for k in ("alpha", "k", "m", "delta", "eps", "po", "pe", "n", "x", "y")
              if getattr(args, k) is not None}
    if name in ("noisy-m", "noisy-outlier"):
        inputs["scale"] = args.scale
    sink = _Sink(args.out)
    sink.write({"kind": "bound", "name": name, "inputs": inputs, "value": value, "log": "natural"})
    sink.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


GLOBAL_DEFAULTS = {"seed": 0, "jobs": 1, "scale": "desk", "out": None}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags accepted both before and after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--seed", type=int, help="base seed; trial i uses seed+i", **kw)
    p.add_argument("--jobs", type=int, help="worker processes for trials", **kw)
    p.add_argument("--scale", choices=tuple(SCALES), help="constant preset for noisy recovery", **kw)
    p.add_argument("--out", help="output path (default stdout)", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qkmeans", description="Query-based K-means experiments with same-cluster oracles.",
                     parents=[_global_flags(True)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _global_flags(True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--po", type=float, default=0.0)
    g.add_argument("--sigma", type=float, default=0.05)
    g.add_argument("--spread", type=float, default=10.0)
    g.add_argument("--min-sep", type=float, default=10.0, help="minimum center distance in units of sigma")

    r = sub.add_parser("run", parents=[common], help="run an algorithm for several trials")
    r.add_argument("algorithm", choices=ALGORITHMS)
    r.add_argument("dataset")
    r.add_argument("--k", type=int, help="cluster count (default: from the dataset)")
    r.add_argument("--delta", type=float, default=0.1)
    r.add_argument("--eps", type=float, default=0.1)
    r.add_argument("--alpha", type=float, help="imbalance used in sample sizes (default: realized)")
    r.add_argument("--po", type=float, help="outlier fraction used in sample sizes (default: realized)")
    r.add_argument("--pe", type=float, default=0.1, help="noisy oracle flip probability")
    r.add_argument("--gamma", default="auto", help="auto, truth or a rejection radius")
    r.add_argument("--probe-order", choices=PROBE_ORDERS, default="creation")
    r.add_argument("--max-draws", type=int)
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--csv", help="also write per-trial rows as CSV")

    v = sub.add_parser("verify", parents=[common], help="Monte-Carlo and exhaustive lemma checks")
    v.add_argument("suite", choices=SUITES + ("all",))
    v.add_argument("--m", type=int)
    v.add_argument("--k", type=int)
    v.add_argument("--alpha", type=float)
    v.add_argument("--delta", type=float)
    v.add_argument("--trials", type=int, help="trials, runs or draws per check")

    b = sub.add_parser("bounds", parents=[common], help="evaluate a closed-form bound")
    b.add_argument("name", choices=BOUND_NAMES)
    for flag, typ in (("--alpha", float), ("--k", int), ("--m", float), ("--delta", float), ("--eps", float),
                      ("--po", float), ("--pe", float), ("--n", float), ("--x", float), ("--y", float)):
        b.add_argument(flag, type=typ)
    return parser


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "verify": cmd_verify, "bounds": cmd_bounds}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.jobs < 1:
        print("error: --jobs must be ≥ 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
