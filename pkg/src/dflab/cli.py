"""Command-line entry point.

Verbs:

  gen          write a synthetic dataset CSV
  train        train one run per seed and report test regret
  suite        train a (problem x method) grid and write the summary table
  diagnose     Hessian spectra of the two losses and their mix at a checkpoint
  convergence  run the two-objective descent lab and write its trace

Every verb accepts ``--config FILE`` holding flat ``key = value`` lines
that mirror the flags (``#`` comments allowed); explicit flags override
file values. Lists (seeds, problem, method) are comma-separated.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from .convergence import (
    ScheduleConfig,
    biquadratic_1d,
    rate_check,
    rotated_quadratics,
    run_schedule,
    shared_quadratic,
    write_trace,
)
from .datagen import gen_budget, gen_knapsack, gen_portfolio, write_csv
from .errors import ConfigurationError, DflabError
from .training import (
    BUDGET_VARIANTS,
    ExperimentConfig,
    diagnose,
    run_suite,
    train_one,
)

LAB_PROBLEMS = {
    "shared": shared_quadratic,
    "biquadratic": biquadratic_1d,
    "rotated": rotated_quadratics,
}

_FLOAT_KEYS = ("beta", "kappa", "inflection", "gamma", "lr", "train_frac", "capacity",
               "eta0", "alpha_step")
_INT_KEYS = ("epochs", "n_instances", "hidden_dim", "epoch", "steps", "probes",
             "horizon", "seed", "fake_targets")
_LIST_KEYS = ("seeds", "problem", "method", "start")


def read_config(path: str) -> dict:
    """Flat key-value config: one ``key = value`` per line."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {s!r}"
                )
            key, value = s.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    try:
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _INT_KEYS:
            return int(value)
        if key == "seeds":
            return tuple(int(tok) for tok in value.split(",") if tok.strip())
        if key == "start":
            return [float(tok) for tok in value.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key!r}: {exc}") from exc
    if key in ("problem", "method"):
        return [tok.strip() for tok in value.split(",") if tok.strip()]
    return value


def _merged(args: argparse.Namespace) -> dict:
    """Config-file values overridden by explicitly passed flags."""
    merged: dict = {}
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            merged[key] = _coerce(key, value)
    for key, value in vars(args).items():
        if key in ("config", "verb") or value is None:
            continue
        merged[key] = _coerce(key, value)
    return merged


def _experiment_config(merged: dict) -> ExperimentConfig:
    problems = merged.get("problem", ["knapsack"])
    methods = merged.get("method", ["ours"])
    cfg_kwargs = {
        "problem": problems[0] if isinstance(problems, list) else problems,
        "method": methods[0] if isinstance(methods, list) else methods,
    }
    rename = {"inflection": "inflection_c", "out": "out_dir"}
    allowed = {f.name for f in fields(ExperimentConfig)}
    for key, value in merged.items():
        key = rename.get(key, key)
        if key in allowed and key not in ("problem", "method"):
            cfg_kwargs[key] = value
    cfg = ExperimentConfig(**cfg_kwargs)
    cfg.check()
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file; flags override it")
    parser.add_argument("--problem", help="knapsack | budget | portfolio (comma list for suite)")
    parser.add_argument("--variant", help="knapsack: unweighted|weighted; budget: plain|fake500")
    parser.add_argument("--method", help="pfl|dfl|convex|pcgrad|mgda|dcgd|ours (comma list for suite)")
    parser.add_argument("--beta", type=float, help="convex-combination weight on the decision gradient")
    parser.add_argument("--kappa", type=float, help="decay steepness of the merge schedule")
    parser.add_argument("--inflection", type=float, help="epoch at which the merge schedule decays fastest")
    parser.add_argument("--epochs", type=int, help="training epochs (default 100)")
    parser.add_argument("--seeds", help="comma-separated seed list (default 0-9)")
    parser.add_argument("--gamma", type=float, help="relaxation strength for the trainable solvers")
    parser.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    parser.add_argument("--data", help="load this CSV instead of generating data")
    parser.add_argument("--out", help="output directory (or file for gen)")
    parser.add_argument("--n-instances", dest="n_instances", type=int, help="synthetic dataset size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dflab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    verbs = parser.add_subparsers(dest="verb", required=True)

    p_gen = verbs.add_parser("gen", help="write a synthetic dataset CSV")
    _add_common(p_gen)
    p_gen.add_argument("--seed", type=int, help="dataset seed (default: first of --seeds)")
    p_gen.add_argument("--capacity", type=float, help="knapsack capacity")

    p_train = verbs.add_parser("train", help="train one run per seed")
    _add_common(p_train)
    p_train.add_argument("--capacity", type=float, help="knapsack capacity")

    p_suite = verbs.add_parser("suite", help="train a problem x method grid")
    _add_common(p_suite)

    p_diag = verbs.add_parser("diagnose", help="loss-Hessian spectra at a checkpoint")
    _add_common(p_diag)
    p_diag.add_argument("--epoch", type=int, help="checkpoint epoch (default 2)")
    p_diag.add_argument("--steps", type=int, help="Lanczos steps (default 80)")
    p_diag.add_argument("--probes", type=int, help="Lanczos probe vectors (default 8)")

    p_conv = verbs.add_parser("convergence", help="two-objective descent lab")
    _add_common(p_conv)
    p_conv.add_argument("--lab", choices=sorted(LAB_PROBLEMS), help="lab problem (default biquadratic)")
    p_conv.add_argument("--eta0", type=float, help="initial step size (default 0.5)")
    p_conv.add_argument("--alpha-step", dest="alpha_step", type=float,
                        help="step-decay exponent in (0.5, 1) (default 0.75)")
    p_conv.add_argument("--horizon", type=int, help="maximum steps (default 100000)")
    p_conv.add_argument("--start", help="comma-separated start point (default 3)")
    return parser


def _seeds(merged: dict) -> tuple:
    return tuple(merged.get("seeds", ExperimentConfig().seeds))


def cmd_gen(merged: dict) -> int:
    problem = merged.get("problem", ["knapsack"])[0]
    seed = merged.get("seed", _seeds(merged)[0])
    n = merged.get("n_instances")
    kwargs = {} if n is None else {"n_instances": n}
    if problem == "knapsack":
        ds = gen_knapsack(seed, variant=merged.get("variant") or "unweighted",
                          capacity=merged.get("capacity"),
                          gamma=merged.get("gamma", 0.1), **kwargs)
    elif problem == "budget":
        fakes = BUDGET_VARIANTS.get(merged.get("variant") or "plain", 0)
        ds = gen_budget(seed, fake_targets=merged.get("fake_targets", fakes),
                        gamma=merged.get("gamma", 0.1), **kwargs)
    elif problem == "portfolio":
        ds = gen_portfolio(seed, **kwargs)
    else:
        raise ConfigurationError(f"unknown problem {problem!r}")
    out = merged.get("out") or f"{problem}.csv"
    if os.path.isdir(out):
        out = os.path.join(out, f"{problem}.csv")
    write_csv(ds, out)
    print(f"wrote {ds.n_instances} {problem} instances (seed {seed}) to {out}")
    return 0


def cmd_train(merged: dict) -> int:
    cfg = _experiment_config(merged)
    failures = 0
    for seed in _seeds(merged):
        run = train_one(cfg, seed)
        if run.failed:
            failures += 1
            print(f"seed {seed}: FAILED ({run.failure})")
        else:
            print(
                f"seed {seed}: normalized test regret {run.normalized_regret:.6f} "
                f"({len(run.regret_rows)} instances, {run.excluded_instances} excluded, "
                f"{run.degenerate_total} degenerate updates)"
            )
        if cfg.out_dir:
            os.makedirs(cfg.out_dir, exist_ok=True)
            from .metrics import write_epoch_log

            path = os.path.join(cfg.out_dir, f"log_{cfg.problem}_{cfg.method}_s{seed}.csv")
            write_epoch_log(run.epoch_rows, path)
    return 1 if failures else 0


def cmd_suite(merged: dict) -> int:
    cfg = _experiment_config(merged)
    problems = merged.get("problem", [cfg.problem])
    methods = merged.get("method", [cfg.method])
    cells = [(p, merged.get("variant"), m) for p in problems for m in methods]
    result = run_suite(cfg, cells=cells, out_dir=merged.get("out"))
    width = max(len(str(r["problem"])) for r in result.summary_rows) + 2
    for row in result.summary_rows:
        print(
            f"{row['problem']:<{width}} {row['method']:<8} "
            f"regret {row['mean_normalized_regret']:.6f} "
            f"+- {row['sem']:.6f}  ({row['runs']} runs)"
        )
    if result.manifest["failures"]:
        print(f"{len(result.manifest['failures'])} failed runs; see manifest")
    return 0


def cmd_diagnose(merged: dict) -> int:
    cfg = _experiment_config(merged)
    seed = _seeds(merged)[0]
    result = diagnose(
        cfg,
        seed,
        epoch=merged.get("epoch", 2),
        steps=merged.get("steps", 80),
        probes=merged.get("probes", 8),
        out_dir=merged.get("out"),
    )
    eps = 1e-3
    for name in ("pred", "dec", "mix"):
        est = result.spectra[name]
        print(
            f"L_{name}: mass within [-{eps:g}, {eps:g}] = {est.weight_within(-eps, eps):.4f}, "
            f"{est.probes} probes x {est.steps} steps"
        )
    return 0


def cmd_convergence(merged: dict) -> int:
    lab = merged.get("lab", "biquadratic")
    problem = LAB_PROBLEMS[lab]()
    cfg = ScheduleConfig(
        eta0=merged.get("eta0", 0.5),
        alpha_step=merged.get("alpha_step", 0.75),
        horizon=merged.get("horizon", 100_000),
    )
    dim = 1 if lab == "biquadratic" else 2
    start = np.asarray(merged.get("start", [3.0] * dim), dtype=float)
    trace = run_schedule(problem, cfg, start, kappa=merged.get("kappa", 0.0))
    last = trace[-1]
    print(
        f"{problem.name}: {len(trace)} steps, final certificate {last.certificate:.3e}, "
        f"running-min m*psi {last.runmin:.3e}, x = {np.array2string(last.x, precision=6)}"
    )
    if len(trace) >= 1000 or last.runmin == 0.0:
        check = rate_check(trace, cfg.alpha_step)
        if check.early_exact:
            print("rate: running-min reached exactly 0 (early exact stationarity)")
        else:
            print(f"rate: fitted slope {check.slope:.4f} vs bound {check.bound:.4f}")
    else:
        print("rate: trace too short for a decay fit (need >= 1000 steps)")
    out = merged.get("out")
    if out:
        path = out
        if os.path.isdir(out) or not out.endswith(".csv"):
            os.makedirs(out, exist_ok=True)
            path = os.path.join(out, f"trace_{lab}.csv")
        write_trace(trace, path)
        print(f"trace written to {path}")
    return 0


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        # Inside the handler: config-file parsing fails the same way flags do.
        merged = _merged(args)
        if args.verb == "gen":
            return cmd_gen(merged)
        if args.verb == "train":
            return cmd_train(merged)
        if args.verb == "suite":
            return cmd_suite(merged)
        if args.verb == "diagnose":
            return cmd_diagnose(merged)
        return cmd_convergence(merged)
    except DflabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
