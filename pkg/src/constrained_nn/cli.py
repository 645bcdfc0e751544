"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 verification FAIL, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import (BoundConfig, ConfigError, LinearizationConfig, RegretConfig, TrainConfig,
                     default_train_dict, load_json)
from .data_io import DataError, generate_biased_synthetic, write_csv
from .evaluation import REPORT_COLUMNS, evaluate_expected, evaluate_net, evaluate_sampled
from .experiments import (kappa_sweep, load_data, nonincreasing_with_tolerance, summarize_sweep,
                          train_from_config)
from .fitting import FitError
from .linearization import (ScalingExperiment, estimate_linearization_errors, estimate_output_bound,
                            fit_scaling_exponent)
from .model import PRNG_ALGORITHM, load_checkpoint, save_checkpoint
from .online import QuadraticFamily, biased_bound, regret_slope_experiment
from .problem import constraint_values, problem_from_config
from .simplex import LPInfeasible
from .stochastic import (ShrinkInfeasible, build_shrink_instance, load_bundle, mixture_rates, save_bundle,
                         shrink)
from .svgplot import plot_csv

log = logging.getLogger("constrained_nn")

EXIT_OK, EXIT_CONFIG, EXIT_FAIL, EXIT_RUNTIME = 0, 2, 3, 4


class VerificationFailed(RuntimeError):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(config_path, seed) -> tuple[TrainConfig, dict]:
    raw = load_json(config_path) if config_path else default_train_dict()
    base = Path(config_path).resolve().parent if config_path else None
    cfg = TrainConfig.from_dict(raw, base_dir=base, seed=seed)
    return cfg, cfg.to_dict()


def _metadata(config: dict, ds, extra: dict | None = None) -> dict:
    return {"version": __version__, "prng": PRNG_ALGORITHM, "config": config,
            "dataset_fingerprint": ds.fingerprint(), "dataset_n": ds.n, "dataset_d": ds.d,
            "norm_scale": ds.norm_scale, "feature_scaling": "global max row norm",
            **(extra or {})}


# train

def cmd_train(config_path=None, out="runs/train", seed=None, plots=False) -> dict:
    cfg, resolved = _train_config(config_path, seed)
    train_ds, _ = load_data(cfg.data)
    out = _out_dir(out)
    _write_json(out / "config.json", resolved)
    t0 = time.perf_counter()
    constrained, baseline = train_from_config(cfg, train_ds)
    runtime = time.perf_counter() - t0

    res = constrained.result
    res.trace.to_csv(out / "trace.csv")
    provenance = {"config_sha256": _sha(resolved), "kind": "T-Stoch", "snapshot_iterations": res.snapshot_iterations}
    clf = constrained.tstoch
    clf.provenance = provenance
    save_bundle(clf, out / "tstoch.npz")
    save_checkpoint(constrained.last, out / "last.json")
    save_checkpoint(constrained.best, out / "best.json")
    summary = {"snapshots": len(res.snapshots), "best_iteration": res.snapshot_iterations[constrained.best_index],
               "steps": res.trace.meta["steps"], "runtime_seconds": runtime}
    if baseline is not None:
        baseline.result.trace.to_csv(out / "baseline_trace.csv")
        bclf = baseline.tstoch
        bclf.provenance = {**provenance, "kind": "Unconstrained"}
        save_bundle(bclf, out / "unconstrained.npz")
        save_checkpoint(baseline.last, out / "unconstrained_last.json")
    _write_json(out / "metadata.json", _metadata(resolved, train_ds, {
        "seeds": {"model": cfg.model.seed, "optimizer": cfg.optimizer.seed,
                  "data": (cfg.data.synthetic or {}).get("seed"), "split": cfg.data.split_seed},
        "problem": constrained.problem.describe(), "summary": summary}))
    if plots:
        plot_csv(out / "trace.csv", "t", ["objective", "objective_estimate"], out / "trace_objective.svg",
                 title="objective", xlabel="iteration", ylabel="rate")
        K = constrained.problem.K
        if K:
            plot_csv(out / "trace.csv", "t", [f"rate_{k + 1}" for k in range(K)], out / "trace_rates.svg",
                     title="metric rates", xlabel="iteration", ylabel="rate")
            plot_csv(out / "trace.csv", "t", [f"lambda_{i + 1}" for i in range(K + constrained.problem.J)],
                     out / "trace_multipliers.svg", title="multipliers", xlabel="iteration", ylabel="lambda")
    log.info("train: %d snapshots in %.1fs -> %s", len(res.snapshots), runtime, out)
    return summary


def _sha(obj) -> str:
    import hashlib
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=_json_default).encode()).hexdigest()


# evaluate

def _run_config(run_dir: Path, config_path=None) -> TrainConfig:
    if config_path:
        raw = load_json(config_path)
        base = Path(config_path).resolve().parent
    else:
        raw = load_json(run_dir / "config.json")
        base = run_dir.resolve()
    raw.pop("kind", None)
    return TrainConfig.from_dict(raw, base_dir=base)


def cmd_evaluate(run_dir, config_path=None, out=None, draws=10_000, seed=None, plots=False) -> list[dict]:
    run_dir = Path(run_dir)
    if not (run_dir / "tstoch.npz").exists():
        raise ConfigError(str(run_dir), "no tstoch.npz bundle in run directory")
    cfg = _run_config(run_dir, config_path)
    train_ds, test_ds = load_data(cfg.data)
    clf = load_bundle(run_dir / "tstoch.npz")
    if clf.skeleton.d != train_ds.d:
        raise ConfigError("data", f"bundle input dimension {clf.skeleton.d} != dataset dimension {train_ds.d}")
    rng = np.random.Generator(np.random.PCG64(cfg.optimizer.seed if seed is None else seed))
    classifiers = [("T-Stoch", clf)]
    if (run_dir / "jstoch.npz").exists():
        classifiers.append(("J-Stoch", load_bundle(run_dir / "jstoch.npz")))
    nets = [("Last", run_dir / "last.json"), ("Best", run_dir / "best.json"),
            ("Unconstrained", run_dir / "unconstrained_last.json")]
    rows = []
    for split_name, ds in (("train", train_ds), ("test", test_ds)):
        if ds is None:
            continue
        for name, c in classifiers:
            rows.append({"split": split_name, "classifier": name, "mode": "expected", **evaluate_expected(c, ds)})
            sampled = evaluate_sampled(c, ds, draws, rng)
            sampled.pop("draws")
            rows.append({"split": split_name, "classifier": name, "mode": "sampled", **sampled})
        if (run_dir / "unconstrained.npz").exists():
            u = load_bundle(run_dir / "unconstrained.npz")
            rows.append({"split": split_name, "classifier": "Unconstrained T-Stoch", "mode": "expected",
                         **evaluate_expected(u, ds)})
        for name, path in nets:
            if path.exists():
                rows.append({"split": split_name, "classifier": name, "mode": "deterministic",
                             **evaluate_net(load_checkpoint(path), ds)})
    out = _out_dir(out or run_dir)
    _write_rows(out / "report.csv", rows)
    _write_json(out / "report.json", {"columns": list(REPORT_COLUMNS), "rows": rows,
                                      "draws": draws, "dataset_fingerprint": train_ds.fingerprint()})
    return rows


# shrink

def cmd_shrink(run_dir, epsilon=None, config_path=None, out=None) -> dict:
    run_dir = Path(run_dir)
    if not (run_dir / "tstoch.npz").exists():
        raise ConfigError(str(run_dir), "no tstoch.npz bundle in run directory")
    cfg = _run_config(run_dir, config_path)
    train_ds, _ = load_data(cfg.data)
    clf = load_bundle(run_dir / "tstoch.npz")
    if clf.skeleton.d != train_ds.d:
        raise ConfigError("data", f"bundle input dimension {clf.skeleton.d} != dataset dimension {train_ds.d}")
    problem = problem_from_config(train_ds, cfg.problem)
    inst = build_shrink_instance(clf.snapshots, problem, clf.skeleton, epsilon)
    p = shrink(inst)
    jstoch = clf.compressed(p)
    jstoch.provenance = {**clf.provenance, "kind": "J-Stoch", "epsilon": inst.epsilon}
    out = _out_dir(out or run_dir)
    save_bundle(jstoch, out / "jstoch.npz")
    before_r0, before_r = mixture_rates(problem, clf)
    after_r0, after_r = mixture_rates(problem, jstoch)
    uniform = np.full(inst.T, 1.0 / inst.T)
    report = {
        "epsilon": inst.epsilon, "T": inst.T, "J": inst.J, "nnz": int(np.count_nonzero(p)),
        "support": np.flatnonzero(p).tolist(), "weights": p[p > 0].tolist(),
        "objective_before": float(inst.c0 @ uniform), "objective_after": float(inst.c0 @ p),
        "lp_constraints_before": (inst.cj @ uniform).tolist(), "lp_constraints_after": (inst.cj @ p).tolist(),
        "g_before": constraint_values(problem, before_r).tolist(),
        "g_after": constraint_values(problem, after_r).tolist(),
        "exact_objective_before": before_r0, "exact_objective_after": after_r0,
    }
    _write_json(out / "shrink_report.json", report)
    return report


# verification suites

def _verdict(out: Path, checks: dict, extra: dict) -> dict:
    verdict = {"pass": all(c["pass"] for c in checks.values()), "checks": checks, **extra}
    _write_json(out / "verdict.json", verdict)
    for name, c in checks.items():
        log.info("%-28s %s", name, "PASS" if c["pass"] else "FAIL")
    return verdict


def cmd_verify_linearization(config_path=None, out="runs/verify-linearization", seed=None, plots=False) -> dict:
    raw = load_json(config_path) if config_path else {}
    cfg = LinearizationConfig.from_dict(raw, seed)
    out = _out_dir(out)
    lo, hi = cfg.slope_band
    exp = ScalingExperiment(m_grid=cfg.m_grid, D_grid=(cfg.D,), d=cfg.d, replicates=cfg.replicates,
                            x_per_init=cfg.x_per_init, seed=cfg.seed)
    cells = estimate_linearization_errors(exp)
    zero = estimate_linearization_errors(ScalingExperiment(
        m_grid=cfg.m_grid, D_grid=(cfg.D,), d=cfg.d, replicates=cfg.x_per_init * 5,
        x_per_init=cfg.x_per_init, rho_fraction=0.0, seed=cfg.seed))
    dsweep = estimate_linearization_errors(ScalingExperiment(
        m_grid=(cfg.D_sweep_m,), D_grid=cfg.D_sweep, d=cfg.d, replicates=cfg.replicates,
        x_per_init=cfg.x_per_init, seed=cfg.seed + 1))
    outputs = estimate_output_bound(cfg.output_m_grid, cfg.d, cfg.replicates, cfg.seed,
                                    cfg.x_per_init, cfg.output_threshold)
    _write_rows(out / "linearization_cells.csv", [c.row() for c in cells])
    _write_rows(out / "linearization_D_sweep.csv", [c.row() for c in dsweep])
    _write_rows(out / "output_bound.csv", [c.row() for c in outputs])
    sq = fit_scaling_exponent(cells, "m", "sq_err", seed=cfg.seed)
    gr = fit_scaling_exponent(cells, "m", "grad_err", seed=cfg.seed)
    means = [c.mean_abs for c in outputs]
    fits = {"sq_err_slope": sq[0], "sq_err_stderr": sq[1], "grad_err_slope": gr[0], "grad_err_stderr": gr[1]}
    _write_json(out / "linearization_fit.json", fits)
    sweep = [c.sq_err for c in dsweep]
    checks = {
        "sq_err_slope_in_band": {"pass": lo <= sq[0] <= hi, "value": sq[0], "stderr": sq[1], "band": [lo, hi]},
        "grad_err_slope_in_band": {"pass": lo <= gr[0] <= hi, "value": gr[0], "stderr": gr[1], "band": [lo, hi]},
        "zero_at_init": {"pass": all(c.sq_err == 0 and c.grad_err == 0 for c in zero)},
        "sq_err_nondecreasing_in_D": {"pass": bool(np.all(np.diff(sweep) >= 0)), "values": sweep},
        "per_sample_bound_holds": {"pass": all(c.bound_violations == 0 for c in cells + dsweep)},
        "grad_gap_at_most_2": {"pass": all(c.max_grad_err <= 2 for c in cells + dsweep)},
        "output_mean_ratio_le_2": {"pass": max(means) / min(means) <= 2 if min(means) > 0 else False,
                                   "values": means},
        "output_tail_markov": {"pass": all(c.markov_ok for c in outputs)},
    }
    if plots:
        plot_csv(out / "linearization_cells.csv", "m", ["sq_err", "grad_err"], out / "linearization.svg",
                 title="linearization error vs width", xlabel="m", ylabel="error", logx=True, logy=True)
    return _verdict(out, checks, {"fits": fits, "config": asdict(cfg)})


def cmd_verify_regret(config_path=None, out="runs/verify-regret", seed=None, plots=False) -> dict:
    raw = load_json(config_path) if config_path else {}
    cfg = RegretConfig.from_dict(raw, seed)
    out = _out_dir(out)
    seeds = range(cfg.seed, cfg.seed + cfg.seeds)
    fam = dict(dim=cfg.dim, radius=cfg.radius, center_norm=cfg.center_norm, noise_radius=cfg.noise_radius)
    clean = regret_slope_experiment(QuadraticFamily(**fam), cfg.T_grid, seeds)
    biased_family = QuadraticFamily(**fam, bias_norm=cfg.bias)
    biased = regret_slope_experiment(biased_family, cfg.T_grid, seeds)
    rows = []
    for r_clean, r_bias, T in zip(clean.rows(), biased.rows(), cfg.T_grid):
        rows.append({**r_clean, "biased_mean_regret": r_bias["mean_regret"],
                     "biased_std_regret": r_bias["std_regret"],
                     "biased_bound": biased_bound(biased_family.M, biased_family.W, T, cfg.delta,
                                                  np.full(T, cfg.bias))})
    _write_rows(out / "regret_grid.csv", rows)
    lo, hi = cfg.slope_band
    fit = {"slope": clean.slope, "intercept": clean.intercept, "stderr": clean.fit.stderr,
           "biased_slope": biased.slope}
    _write_json(out / "regret_fit.json", fit)
    T_grid = list(cfg.T_grid)
    plateau = None
    if cfg.plateau_from in T_grid:
        plateau = biased.mean_regret[-1] > cfg.plateau_ratio * biased.mean_regret[T_grid.index(cfg.plateau_from)]
    checks = {
        "regret_below_bound": {"pass": bool(np.all(clean.mean_regret <= clean.bound))},
        "slope_in_band": {"pass": lo <= clean.slope <= hi, "value": clean.slope, "band": [lo, hi]},
        "biased_plateau": {"pass": bool(plateau), "grid_has_reference": plateau is not None},
    }
    if plots:
        plot_csv(out / "regret_grid.csv", "T", ["mean_regret", "bound", "biased_mean_regret"], out / "regret.svg",
                 title="average regret", xlabel="T", ylabel="regret", logx=True, logy=True)
    return _verdict(out, checks, {"fit": fit, "config": asdict(cfg)})


def cmd_verify_bound(config_path=None, out="runs/verify-bound", seed=None, plots=False) -> dict:
    raw = load_json(config_path) if config_path else {}
    base = Path(config_path).resolve().parent if config_path else None
    cfg = BoundConfig.from_dict(raw, base, seed)
    out = _out_dir(out)
    rows = kappa_sweep(cfg.train, cfg.kappas, cfg.seeds)
    summary = summarize_sweep(rows)
    _write_rows(out / "kappa_sweep.csv", rows)
    _write_rows(out / "kappa_summary.csv", summary)
    ok, inversions = nonincreasing_with_tolerance([s["mean_max_g"] for s in summary], [s["se"] for s in summary])
    checks = {"feasibility_nonincreasing_in_kappa": {"pass": ok, "inversions": inversions,
                                                     "values": [s["mean_max_g"] for s in summary]}}
    if plots:
        plot_csv(out / "kappa_summary.csv", "kappa", ["mean_max_g"], out / "kappa_sweep.svg",
                 title="constraint violation of averaged rates", xlabel="kappa", ylabel="max_j g_j", logx=True)
    return _verdict(out, checks, {"summary": summary})


def cmd_gen_data(out="runs/data", seed=None, n=2000, d=8, bias_gap=0.8) -> dict:
    out = _out_dir(out)
    ds = generate_biased_synthetic(n, d, bias_gap, 0 if seed is None else seed)
    schema = write_csv(ds, out / "synthetic.csv")
    _write_json(out / "schema.json", schema)
    config = default_train_dict()
    config["data"] = {"csv": "synthetic.csv", "schema": schema}
    config["model"]["seed"] = config["optimizer"]["seed"] = 0 if seed is None else seed
    _write_json(out / "train_config.json", config)
    return {"rows": ds.n, "fingerprint": ds.fingerprint(), "path": str(out / "synthetic.csv")}


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override model/optimizer seeds")
    common.add_argument("--plots", action="store_true", help="write SVG plots from the emitted CSVs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="constrained-nn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a constrained classifier and its baseline")
    p = sub.add_parser("evaluate", parents=[common], help="accuracy and per-group recall of a run")
    p.add_argument("run_dir")
    p.add_argument("--draws", type=int, default=10_000)
    p = sub.add_parser("shrink", parents=[common], help="compress the T-Stoch bundle with the LP")
    p.add_argument("run_dir")
    p.add_argument("--epsilon", type=float)
    sub.add_parser("verify-linearization", parents=[common], help="width scaling of the linearization error")
    sub.add_parser("verify-regret", parents=[common], help="online mirror descent regret scaling")
    sub.add_parser("verify-bound", parents=[common], help="feasibility trend over kappa")
    p = sub.add_parser("gen-data", parents=[common], help="write biased synthetic data as CSV")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--bias-gap", type=float, default=0.8)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = args.out
    try:
        if args.command == "train":
            result = cmd_train(args.config, out or "runs/train", args.seed, args.plots)
        elif args.command == "evaluate":
            rows = cmd_evaluate(args.run_dir, args.config, out, args.draws, args.seed, args.plots)
            result = {"rows": len(rows)}
        elif args.command == "shrink":
            result = cmd_shrink(args.run_dir, args.epsilon, args.config, out)
        elif args.command == "gen-data":
            result = cmd_gen_data(out or "runs/data", args.seed, args.n, args.d, args.bias_gap)
        else:
            fn = {"verify-linearization": cmd_verify_linearization, "verify-regret": cmd_verify_regret,
                  "verify-bound": cmd_verify_bound}[args.command]
            result = fn(args.config, out or f"runs/{args.command}", args.seed, args.plots)
            print(json.dumps({"pass": result["pass"],
                              "checks": {k: v["pass"] for k, v in result["checks"].items()}}))
            return EXIT_OK if result["pass"] else EXIT_FAIL
        print(json.dumps(result, default=_json_default))
        return EXIT_OK
    except (ConfigError, DataError, FitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShrinkInfeasible, LPInfeasible) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FloatingPointError, RuntimeError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
