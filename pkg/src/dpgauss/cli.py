"""Command line front end: seeded experiments, CSV ingestion, calibration, benchmarks.

Every run writes one JSON report (``"schema": 1``). Exit status is 0 on
success, 2 when the private estimator returned Fail and 1 on error.
"""

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import date
from pathlib import Path

import numpy as np

from dpgauss import __version__, kernels
from dpgauss.config import DEFAULT_PATH, load_constants, parse_key_values, update_constant
from dpgauss.errors import ConfigError, DPGaussError, InsufficientData, InvalidInput, ParseError
from dpgauss.gaussian import (GaussianModel, psd_factor, range_basis, sample_gaussian,
                              tv_upper_bound)

COMMANDS = ("learn-gaussian", "learn-gaussian-robust", "precondition", "refine", "subspace",
            "mean", "audit", "calibrate", "bench")
SCHEMA = 1
WORKERS_ENV = "DPGAUSS_WORKERS"
SYNTHETIC_CAP = 50_000_000


# ------------------------------------------------------------------ io

def ingest_csv(path):
    """Read comma-separated decimal rows; lines starting with ``#`` are skipped."""
    rows, width = [], None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            cells = next(csv.reader([text]))
            try:
                row = [float(c) for c in cells]
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric cell", line=lineno) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"line {lineno}: expected {width} columns, got {len(row)}",
                                 line=lineno)
            rows.append(row)
    if not rows:
        raise ParseError("no data rows")
    return np.asarray(rows, dtype=float)


def emit_csv(X, path):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w") as fh:
        for row in X:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_report(report):
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


# ------------------------------------------------------------------ config

def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = float(value)
    return out


def validate(cfg):
    if cfg.seed is None:
        raise InvalidInput("--seed is required")
    if not 0 < cfg.delta < 1:
        raise InvalidInput("delta must lie in (0, 1)")
    if not 0 < cfg.alpha <= 1:
        raise InvalidInput("alpha must lie in (0, 1]")
    if not 0 < cfg.beta < 1:
        raise InvalidInput("beta must lie in (0, 1)")
    if not cfg.epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    if cfg.epsilon > 1 and not cfg.allow_large_epsilon:
        raise InvalidInput("epsilon > 1 needs --allow-large-epsilon")


def synthetic_model(cfg):
    if cfg.eigenvalues:
        cov = np.diag(_floats(cfg.eigenvalues))
    elif cfg.cov:
        vals = _floats(cfg.cov)
        d = math.isqrt(len(vals))
        if d * d != len(vals):
            raise InvalidInput("--cov needs d*d entries")
        cov = np.asarray(vals).reshape(d, d)
    else:
        cov = np.eye(cfg.dim)
    d = cov.shape[0]
    mean = np.asarray(_floats(cfg.mean)) if cfg.mean else np.zeros(d)
    return GaussianModel(mean, cov)


def corrupt(X, fraction, adversary, rng):
    """Apply a named adversary to a ``fraction`` of the rows."""
    from dpgauss.audit import shift_corruption

    if fraction <= 0 or adversary == "none":
        return X
    if adversary == "shift":
        return shift_corruption(X, fraction, rng)
    if adversary == "scatter":
        X = X.copy()
        idx = rng.choice(len(X), int(round(fraction * len(X))), replace=False)
        X[idx] *= 10.0 ** rng.uniform(-6, 6, size=(len(idx), 1))
        return X
    raise InvalidInput(f"unknown adversary {adversary!r}")


# ------------------------------------------------------------------ commands

def _budget(cfg):
    from dpgauss.estimators import PrivacyBudget

    return PrivacyBudget(cfg.epsilon, cfg.delta)


def _required_m(cfg, d, consts):
    from dpgauss import estimators as est

    b = _budget(cfg)
    cmd = cfg.command
    if cmd == "subspace":
        return est.plan_subspace(d, b).m
    if cmd == "precondition":
        return est.plan_precondition(d, b, cfg.beta, consts).m
    if cmd == "refine":
        return (est.plan_precondition(d, b, cfg.beta, consts).m
                + est.plan_refine(d, b, cfg.alpha, cfg.beta, consts).m)
    if cmd == "mean":
        return est.plan_mean(d, b, cfg.alpha, cfg.beta).m
    if cmd == "learn-gaussian":
        return est.plan_learn_gaussian(d, b, cfg.alpha, cfg.beta, consts, _stage_budgets(cfg))[2]
    if cmd == "learn-gaussian-robust":
        return est.plan_learn_gaussian_robust(d, b, cfg.alpha, cfg.beta, consts,
                                              _stage_budgets(cfg, robust=True))[2]
    raise InvalidInput(f"no sample plan for {cmd}")


def _stage_budgets(cfg, robust=False):
    from dpgauss import estimators as est

    if not cfg.per_stage:
        return None
    names = est.ROBUST_STAGES if robust else est.LEARN_STAGES
    return {n: _budget(cfg) for n in names}


def _load_data(cfg, consts):
    truth = None
    if cfg.input:
        X = ingest_csv(cfg.input)
    else:
        truth = synthetic_model(cfg)
        m = cfg.m if cfg.m else _required_m(cfg, truth.dim, consts)
        if m > SYNTHETIC_CAP:
            raise InsufficientData(
                f"the stage plan requires m = {m} records, above the synthetic cap of "
                f"{SYNTHETIC_CAP}; pass --m or --input")
        X = sample_gaussian(truth, int(m), np.random.default_rng([cfg.seed, 1]))
    X = corrupt(X, cfg.corruption_fraction, cfg.adversary, np.random.default_rng([cfg.seed, 2]))
    return X, truth


def _spent(diag_or_budget):
    return {"epsilon": diag_or_budget.epsilon, "delta": diag_or_budget.delta}


def _single_stage(cfg, consts):
    from dpgauss import estimators as est
    from dpgauss.semimetrics import spectral_cov_dist

    X, truth = _load_data(cfg, consts)
    b = _budget(cfg)
    metrics = {"m": len(X), "d": X.shape[1]}
    cmd = cfg.command
    if cmd == "subspace":
        out = est.private_subspace(X, b, cfg.seed)
        if truth is not None and not out.failed:
            U = range_basis(truth.covariance)
            err = float(np.linalg.norm(out.point - U @ U.T))
            metrics.update(frobenius_error=err, exact_recovery=err <= 1e-8)
        spent = [b.spent]
    elif cmd == "precondition":
        out = est.private_precondition_covariance(X, b, cfg.beta, cfg.seed, consts)
        if truth is not None and not out.failed:
            metrics["spectral_distance"] = spectral_cov_dist(out.point, truth.covariance)
        spent = [b.spent]
    elif cmd == "refine":
        d = X.shape[1]
        m_pre = est.plan_precondition(d, b, cfg.beta, consts).m
        rng_pre, rng_ref = np.random.default_rng(cfg.seed).spawn(2)
        out = est.private_precondition_covariance(X[:m_pre], b, cfg.beta, rng_pre, consts)
        spent = [b.spent]
        if not out.failed:
            out = est.private_refine_covariance(X[m_pre:], out.point, b, cfg.alpha, cfg.beta,
                                                rng_ref, consts)
            spent.append(b.spent)
        if truth is not None and not out.failed:
            metrics["spectral_distance"] = spectral_cov_dist(out.point, truth.covariance)
            inv = psd_factor(out.point)[1]
            if inv is not None:
                metrics["frobenius_error"] = float(
                    np.linalg.norm(inv @ truth.covariance @ inv - np.eye(d)))
    else:
        out = est.private_mean_wellconditioned(X, b, cfg.alpha, cfg.beta, cfg.seed)
        if truth is not None and not out.failed:
            metrics["l2_error"] = float(np.linalg.norm(out.point - truth.mean))
        spent = [b.spent]
    total = est.compose(spent)
    result = {"point": out.point, "diagnostics": _summary(out.diagnostics)}
    return (not out.failed), result, total, metrics


def _summary(diag):
    keep = ("k", "s", "Q", "Qhat", "threshold", "failed_at_threshold", "weight_sum",
            "eta", "gamma", "radius", "conditioning_band_ok", "stage", "space",
            "spent_epsilon", "spent_delta")
    return {k: diag[k] for k in keep if k in diag}


def _pipeline(cfg, consts):
    from dpgauss import estimators as est

    X, truth = _load_data(cfg, consts)
    robust = cfg.command == "learn-gaussian-robust"
    fn = est.learn_gaussian_robust if robust else est.learn_gaussian
    rep = fn(X, _budget(cfg), cfg.alpha, cfg.beta, cfg.seed, consts,
             _stage_budgets(cfg, robust))
    metrics = {"m": len(X), "d": X.shape[1]}
    if truth is not None and not rep.failed:
        metrics["tv_upper_bound"] = tv_upper_bound(rep.model, truth)
    result = {
        "failed_stage": rep.failed_stage,
        "model": None if rep.failed else {"mean": rep.model.mean, "covariance": rep.model.covariance},
        "stages": {k: _summary(v) if isinstance(v, dict) else v
                   for k, v in rep.stage_diagnostics.items()},
        "slices": rep.slices,
    }
    return (not rep.failed), result, rep.budget_spent, metrics


def _audit(cfg, consts):
    from dpgauss import audit
    from dpgauss.mechanisms import (calibrate_concentration_eta, covariance_mask_gamma,
                                    gaussian_mask_eta)

    d = cfg.dim
    eta = calibrate_concentration_eta(d, cfg.beta, consts.c1)
    gamma = covariance_mask_gamma(eta, cfg.epsilon, cfg.delta, d)
    g = 1 + gamma
    s2 = np.diag([g if i % 2 == 0 else 1 / g for i in range(d)])
    l1, l2 = audit.covariance_mask_laws(np.eye(d), s2, eta)
    rng_cov, rng_gauss = np.random.default_rng(cfg.seed).spawn(2)
    cov_rep = audit.privacy_loss_tail(l1, l2, cfg.epsilon, cfg.trials, rng_cov, delta=cfg.delta,
                                      mechanism="covariance-mask")
    # unit sensitivity for the Gaussian mask
    g_eta = gaussian_mask_eta(1.0, cfg.epsilon, cfg.delta)
    n1 = GaussianModel(np.zeros(1), [[g_eta**2]])
    n2 = GaussianModel(np.ones(1), [[g_eta**2]])
    gauss_rep = audit.privacy_loss_tail(n1, n2, cfg.epsilon, cfg.trials, rng_gauss,
                                        delta=cfg.delta, mechanism="gaussian-mask")
    reports = [cov_rep, gauss_rep]
    result = {r.mechanism: {"tail_estimate": r.tail_estimate, "tail_ci": r.tail_ci,
                            "passed": r.passed, "trials": r.trials} for r in reports}
    result["covariance-mask"]["gamma"] = gamma
    result["gaussian-mask"]["analytic_tail"] = audit.analytic_gaussian_tail(1.0, g_eta, cfg.epsilon)
    return all(r.passed for r in reports), result, None, {"dim": d}


def calibrate_all(trials, seed, constants_path=None, write=True):
    """Run every calibration target and optionally persist the results.

    The robust-mean radius and the robust TV constant depend on the filter
    triggers, so those are calibrated first.
    """
    from dpgauss import audit

    small = max(trials // 50, 20)
    values, counts = {}, {}

    def run(name, check, lo, hi, n):
        values[name] = audit.calibrate_constant(check, lo, hi)
        counts[name] = n

    run("c1", audit.mask_concentration_check([2, 4, 8], 0.1, trials, seed), 1.0, 1e5, trials)
    run("c1_robust", audit.mask_concentration_check([2, 4, 8], 0.1, trials, seed,
                                                    target=0.05 / math.sqrt(8), robust_alpha=0.05),
        1e-2, 1e4, trials)
    run("c2", audit.empirical_covariance_check([2, 4, 8], 0.1, trials, seed), 10.0, 1e7, trials)
    run("filter_mean_c", audit.clean_filter_check("mean", [2, 4, 8], [1000, 10000], 0.05, small,
                                                  seed), 0.05, 100.0, small)
    run("filter_cov_c", audit.clean_filter_check("cov", [2, 3, 4], [1000, 10000], 0.05, small,
                                                 seed), 0.05, 100.0, small)
    run("c3", audit.robust_mean_check([2, 4, 8], 10000, 0.05, small, seed,
                                      filter_c=values["filter_mean_c"]), 0.1, 100.0, small)
    run("robust_tv_c", audit.robust_tv_check(3, 20000, 0.05, small, seed,
                                             mean_c=values["filter_mean_c"],
                                             cov_c=values["filter_cov_c"]), 0.1, 1000.0, small)
    if write:
        path = Path(constants_path or DEFAULT_PATH)
        for name, value in values.items():
            update_constant(path, name, round(value, 6),
                            f"calibrated: trials={counts[name]}, seed={seed}, {date.today()}")
    return values


def _calibrate(cfg, consts):
    values = calibrate_all(cfg.trials, cfg.seed, cfg.constants, write=not cfg.dry_run)
    return True, {"constants": values}, None, {}


# ------------------------------------------------------------------ bench

def _bench_cell(args):
    cell, index, seeds, master_seed, consts, estimator, adversary = args
    from dpgauss import estimators as est
    from dpgauss.semimetrics import spectral_cov_dist

    d, m, eps, delta, alpha = cell
    b = est.PrivacyBudget(eps, delta)
    errors, fails = [], 0
    for rep in range(seeds):
        seed = [master_seed, index, rep]
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((d, d))
        truth = GaussianModel(rng.standard_normal(d), A @ A.T + 0.1 * np.eye(d))
        if estimator == "precondition":
            truth = GaussianModel(np.zeros(d), truth.covariance)
        elif estimator == "mean":
            truth = GaussianModel(truth.mean, np.eye(d))
        X = sample_gaussian(truth, int(m), rng)
        X = corrupt(X, 1.0 if adversary == "scatter" else 0.0, adversary, rng)
        if estimator == "precondition":
            out = est.private_precondition_covariance(X, b, 0.2, rng, consts)
            err = None if out.failed else spectral_cov_dist(out.point, truth.covariance)
        elif estimator == "mean":
            out = est.private_mean_wellconditioned(X, b, alpha, 0.2, rng)
            err = None if out.failed else float(np.linalg.norm(out.point - truth.mean))
        else:
            out = est.private_subspace(X, b, rng)
            U = range_basis(truth.covariance)
            err = None if out.failed else float(np.linalg.norm(out.point - U @ U.T))
        if err is None:
            fails += 1
        else:
            errors.append(err)
    median = float(np.median(errors)) if errors else float("nan")
    return {"d": d, "m": int(m), "epsilon": eps, "delta": delta, "alpha": alpha,
            "estimator": estimator, "adversary": adversary, "seeds": seeds,
            "median_error": median, "fail_rate": fails / seeds}


BENCH_FIELDS = ("d", "m", "epsilon", "delta", "alpha", "estimator", "adversary", "seeds",
                "median_error", "fail_rate")


def bench(grid, seeds, master_seed, out_path, consts=None, estimator="precondition",
          adversary="none", workers=None):
    """Evaluate each ``(d, m, epsilon, delta, alpha)`` cell and write one CSV row per cell."""
    consts = consts or load_constants()
    workers = workers or int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(tuple(cell), i, seeds, master_seed, consts, estimator, adversary)
            for i, cell in enumerate(grid)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_cell, jobs))
    else:
        rows = [_bench_cell(j) for j in jobs]
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def _bench(cfg, consts):
    grid = [(int(d), int(m), e, dl, a)
            for d in _floats(cfg.dims) for m in _floats(cfg.ms)
            for e in _floats(cfg.epsilons or cfg.epsilon) for dl in _floats(cfg.deltas or cfg.delta)
            for a in _floats(cfg.alphas or cfg.alpha)]
    out_csv = cfg.csv or "bench.csv"
    rows = bench(grid, cfg.seeds, cfg.seed, out_csv, consts, cfg.estimator, cfg.adversary)
    return True, {"csv": out_csv, "rows": rows}, None, {"cells": len(rows)}


# ------------------------------------------------------------------ driver

def build_parser():
    p = argparse.ArgumentParser(prog="dpgauss", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--seed", type=int)
    p.add_argument("--allow-large-epsilon", action="store_true")
    p.add_argument("--per-stage", action="store_true",
                   help="treat epsilon/delta as the internal parameters of every stage")
    p.add_argument("--input", help="CSV file of samples")
    p.add_argument("--mean", help="synthetic mean, comma separated")
    p.add_argument("--cov", help="synthetic covariance, d*d comma separated entries")
    p.add_argument("--eigenvalues", help="synthetic diagonal covariance")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--m", type=int, help="synthetic sample count (default: the stage plan)")
    p.add_argument("--corruption-fraction", type=float, default=0.0)
    p.add_argument("--adversary", default="none", choices=("none", "shift", "scatter"))
    p.add_argument("--output", help="report path (default: stdout)")
    p.add_argument("--constants", help="constants file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a constant")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--dry-run", action="store_true", help="calibrate without writing")
    p.add_argument("--dims", default="3")
    p.add_argument("--ms", default="10000")
    p.add_argument("--epsilons")
    p.add_argument("--deltas")
    p.add_argument("--alphas")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--estimator", default="precondition", choices=("precondition", "mean", "subspace"))
    p.add_argument("--csv", help="bench output CSV")
    return p


def parse_config(argv):
    parser = build_parser()
    pre_parser = argparse.ArgumentParser(add_help=False)
    pre_parser.add_argument("--config")
    pre, _ = pre_parser.parse_known_args(argv)
    if pre.config:
        raw = parse_key_values(Path(pre.config).read_text())
        known = {a.dest for a in parser._actions}
        defaults = {}
        for key, value in raw.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("command", "config"):
                raise ConfigError(f"unknown config key {key!r}")
            action = next(a for a in parser._actions if a.dest == dest)
            if action.type is not None:
                value = action.type(value)
            elif isinstance(action.const, bool):
                value = value.lower() in ("1", "true", "yes")
            defaults[dest] = value
        parser.set_defaults(**defaults)
    return parser.parse_args(argv)


RUNNERS = {
    "learn-gaussian": _pipeline, "learn-gaussian-robust": _pipeline,
    "precondition": _single_stage, "refine": _single_stage, "subspace": _single_stage,
    "mean": _single_stage, "audit": _audit, "calibrate": _calibrate, "bench": _bench,
}


def run_experiment(cfg):
    """Run one configured command; returns ``(report dict, exit status)``."""
    start = time.perf_counter()
    report = {"schema": SCHEMA, "command": cfg.command, "version": __version__,
              "seed": cfg.seed, "parameters": {k: v for k, v in sorted(vars(cfg).items())},
              "kernel_backend": kernels.backend_name()}
    try:
        validate(cfg)
        consts = load_constants(cfg.constants, _overrides(cfg.set))
        report["constants"] = consts.as_dict()
        ok, result, spent, metrics = RUNNERS[cfg.command](cfg, consts)
        report.update(outcome="ok" if ok else "fail", result=result, metrics=metrics,
                      budget_spent=None if spent is None else _spent(spent))
        status = 0 if ok else 2
    except DPGaussError as exc:
        report.update(outcome="error", error={"code": exc.code, "message": str(exc)})
        status = 1
    except (OSError, ValueError) as exc:
        report.update(outcome="error", error={"code": type(exc).__name__, "message": str(exc)})
        status = 1
    report["wall_time"] = time.perf_counter() - start
    return report, status


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except DPGaussError as exc:
        print(json.dumps({"schema": SCHEMA, "outcome": "error",
                          "error": {"code": exc.code, "message": str(exc)}}), file=sys.stderr)
        return 1
    report, status = run_experiment(cfg)
    text = dump_report(report)
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)
    if status == 1:
        print(f"error: {report['error']['code']}: {report['error']['message']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
