"""Experiment orchestration: single runs, suite grids, and spectrum diagnosis.

A run is fully determined by (config, seed): the seed generates the
dataset, the split, and the model initialization, so re-running a
config reproduces every output byte. Training is full batch: each epoch
computes the mean prediction-loss gradient (MSE over every predicted
entry) and the mean decision-loss gradient (through the relaxed
solvers), hands both to the selected combination strategy, and applies
one Adam step. Evaluation reports normalized regret on the held-out
split through the exact solvers.

Failed runs (solver failures, divergence) become failed records with a
cause instead of exceptions, so seed sweeps and suite grids continue
past them.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .combiners import STRATEGIES, CombinerConfig, GradPair, select_update
from .datagen import (
    KNAPSACK_CAPACITIES,
    Dataset,
    gen_budget,
    gen_knapsack,
    gen_portfolio,
    load_csv,
    make_rng,
    problem_for,
    split,
)
from .errors import (
    ConfigurationError,
    DegenerateInstanceError,
    DflabError,
    SolverError,
)
from .layers import decision_pullback, mse_pullback
from .layers.budget import BudgetProblem
from .metrics import (
    grad_geometry,
    regret,
    summarize_runs,
    write_epoch_log,
    write_summary,
)
from .mlp import MlpParams, adam_step, flatten_params, init_adam, init_mlp, unflatten_params
from .spectrum import default_grid, density_from_ritz, lanczos_spectrum, write_spectrum

BUDGET_VARIANTS = {"plain": 0, "fake500": 500}
DEFAULT_SEEDS = tuple(range(10))
# Offset separating the model-init stream from the data stream of the same seed.
INIT_SEED_OFFSET = 10_000_019


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run, minus the seed."""

    problem: str = "knapsack"
    variant: str | None = None
    method: str = "ours"
    beta: float = 0.5
    kappa: float = 0.0
    inflection_c: float = 50.0
    epochs: int = 100
    seeds: tuple = DEFAULT_SEEDS
    lr: float = 0.001
    gamma: float = 0.1
    out_dir: str | None = None
    data: str | None = None
    n_instances: int | None = None
    train_frac: float = 0.7
    capacity: float | None = None
    hidden_dim: int | None = None
    checkpoint_epochs: tuple = ()

    def check(self) -> None:
        if self.problem not in ("knapsack", "budget", "portfolio"):
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.method not in STRATEGIES:
            raise ConfigurationError(
                f"unknown method {self.method!r}; expected one of {STRATEGIES}"
            )
        if self.problem == "knapsack" and self.variant not in (None, "unweighted", "weighted"):
            raise ConfigurationError(f"unknown knapsack variant {self.variant!r}")
        if self.problem == "budget" and self.variant not in (None, *BUDGET_VARIANTS):
            raise ConfigurationError(f"unknown budget variant {self.variant!r}")
        # 0 epochs is allowed deliberately: it reports the initial model's regret.
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.lr <= 0 or self.gamma <= 0:
            raise ConfigurationError("lr and gamma must be positive")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigurationError("train_frac must lie strictly between 0 and 1")

    def snapshot(self, seed: int | None = None) -> dict:
        snap = {
            "problem": self.problem,
            "variant": self.variant,
            "method": self.method,
            "beta": self.beta,
            "kappa": self.kappa,
            "inflection_c": self.inflection_c,
            "epochs": self.epochs,
            "lr": self.lr,
            "gamma": self.gamma,
            "data": self.data,
            "n_instances": self.n_instances,
            "train_frac": self.train_frac,
            "capacity": self.capacity,
            "hidden_dim": self.hidden_dim,
        }
        if seed is not None:
            snap["seed"] = seed
        return snap


@dataclass
class RunRecord:
    problem: str
    method: str
    seed: int
    config: dict
    epoch_rows: list = field(default_factory=list)
    regret_rows: list = field(default_factory=list)
    normalized_regret: float | None = None
    excluded_instances: int = 0
    degenerate_total: int = 0
    wall_clock: float = 0.0
    failed: bool = False
    failure: str = ""
    checkpoints: dict = field(default_factory=dict)
    final_params: MlpParams | None = None


def _fake_targets(cfg: ExperimentConfig) -> int:
    if cfg.problem != "budget":
        return 0
    return BUDGET_VARIANTS.get(cfg.variant or "plain", 0)


def build_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    """Synthetic dataset for the run, or the configured CSV."""
    if cfg.data is not None:
        constants: dict = {"gamma": cfg.gamma} if cfg.problem != "portfolio" else {}
        if cfg.problem == "knapsack":
            constants["variant"] = cfg.variant or "unweighted"
            if cfg.capacity is not None:
                constants["capacity"] = cfg.capacity
        if cfg.problem == "budget":
            constants["fake_targets"] = _fake_targets(cfg) or None
        return load_csv(cfg.data, cfg.problem, **constants)
    kwargs: dict = {}
    if cfg.n_instances is not None:
        kwargs["n_instances"] = cfg.n_instances
    if cfg.problem == "knapsack":
        return gen_knapsack(
            seed,
            variant=cfg.variant or "unweighted",
            capacity=cfg.capacity,
            gamma=cfg.gamma,
            **kwargs,
        )
    if cfg.problem == "budget":
        return gen_budget(seed, fake_targets=_fake_targets(cfg), gamma=cfg.gamma, **kwargs)
    return gen_portfolio(seed, **kwargs)


def model_dims(cfg: ExperimentConfig, ds: Dataset) -> tuple[int, int, int]:
    """(in, hidden, out) for the problem's predictor; hidden is overridable."""
    if cfg.problem == "portfolio":
        hidden = cfg.hidden_dim or 500
    else:
        hidden = cfg.hidden_dim or 10
    first = ds.instances[0]
    in_dim = first.x.shape[1]
    if cfg.problem == "budget":
        out_dim = np.asarray(first.y).shape[1]
    else:
        out_dim = 1
    return in_dim, hidden, out_dim


def batch_gradients(problem, params: MlpParams, instances: list):
    """Mean prediction and decision losses and gradients over instances."""
    n = len(instances)
    loss_pred = 0.0
    loss_dec = 0.0
    g_pred = np.zeros(params.n_params)
    g_dec = np.zeros(params.n_params)
    # Overflow in a diverging run surfaces as a typed NumericError from the
    # pullbacks, so the runtime warnings preceding it are pure noise.
    with np.errstate(over="ignore", invalid="ignore"):
        for inst in instances:
            lp, gp = mse_pullback(params, inst.x, inst.y)
            pull = decision_pullback(problem, params, inst.x, inst.y)
            loss_pred += lp
            loss_dec += pull.loss
            g_pred += gp
            g_dec += pull.grad_theta
    return loss_pred / n, loss_dec / n, g_pred / n, g_dec / n


def evaluate_regret(problem, params: MlpParams, instances: list):
    """Mean normalized regret over instances; degenerate ones are excluded."""
    rows = []
    excluded = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for inst in instances:
            try:
                rows.append(regret(problem, params, inst))
            except DegenerateInstanceError as exc:
                excluded += 1
                warnings.warn(
                    f"excluding degenerate instance from regret: {exc}", stacklevel=2
                )
    if not rows:
        raise SolverError("every evaluation instance was degenerate")
    mean = float(np.mean([r.normalized for r in rows]))
    return mean, rows, excluded


def train_one(cfg: ExperimentConfig, seed: int) -> RunRecord:
    """One full training run; failures become failed records, not exceptions."""
    cfg.check()
    record = RunRecord(
        problem=cfg.problem, method=cfg.method, seed=seed, config=cfg.snapshot(seed)
    )
    t0 = time.perf_counter()
    try:
        ds = build_dataset(cfg, seed)
        train_ds, test_ds = split(ds, cfg.train_frac, seed)
        problem = problem_for(ds)
        in_dim, hidden, out_dim = model_dims(cfg, ds)
        params = init_mlp(in_dim, hidden, out_dim, make_rng(INIT_SEED_OFFSET + seed))
        adam = init_adam(params)
        combiner = CombinerConfig(
            strategy=cfg.method,
            beta=cfg.beta,
            kappa=cfg.kappa,
            inflection_c=cfg.inflection_c,
        )
        if 0 in cfg.checkpoint_epochs:
            record.checkpoints[0] = flatten_params(params)
        for epoch in range(cfg.epochs):
            loss_pred, loss_dec, g_pred, g_dec = batch_gradients(
                problem, params, train_ds.instances
            )
            geometry = grad_geometry(g_pred, g_dec, epoch)
            combiner.t = epoch
            result = select_update(GradPair(g_pred=g_pred, g_dec=g_dec), combiner)
            degenerate = int(result.degenerate)
            record.degenerate_total += degenerate
            record.epoch_rows.append(
                {
                    "epoch": epoch,
                    "loss_pred": loss_pred,
                    "loss_dec": loss_dec,
                    "cos_phi": geometry.cos_phi,
                    "norm_ratio": geometry.norm_ratio,
                    "alpha": result.alpha_used,
                    "degenerate_count": degenerate,
                }
            )
            params, adam = adam_step(params, result.g, adam, cfg.lr)
            if (epoch + 1) in cfg.checkpoint_epochs:
                record.checkpoints[epoch + 1] = flatten_params(params)
        mean, rows, excluded = evaluate_regret(problem, params, test_ds.instances)
        record.normalized_regret = mean
        record.regret_rows = rows
        record.excluded_instances = excluded
        record.final_params = params
    except DflabError as exc:
        # Bad configs are caller bugs and must propagate; runtime failures
        # (solver, numeric, divergence) become failed records so sweeps go on.
        if isinstance(exc, ConfigurationError):
            raise
        record.failed = True
        record.failure = f"{type(exc).__name__}: {exc}"
    record.wall_clock = time.perf_counter() - t0
    return record


@dataclass
class SuiteResult:
    summary_rows: list
    records: list
    manifest: dict


@dataclass
class _PooledRun:
    problem: str
    method: str
    normalized_regret: float | None


def _cell_label(cfg: ExperimentConfig) -> str:
    return f"{cfg.problem}:{cfg.variant}" if cfg.variant else cfg.problem


def run_suite(
    base: ExperimentConfig,
    cells: list | None = None,
    out_dir: str | None = None,
) -> SuiteResult:
    """Train every (problem-variant, method) cell over all seeds and summarize.

    `cells` is a list of (problem, variant, method) triples; by default
    the single cell described by `base`. Knapsack cells train once per
    default capacity and pool the three regrets per seed before the
    mean/SEM. Failed runs are recorded and excluded; a cell with fewer
    than two surviving seeds is marked with NaNs in the summary.
    """
    base.check()
    if cells is None:
        cells = [(base.problem, base.variant, base.method)]
    out_dir = out_dir if out_dir is not None else base.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    records: list = []
    pooled: list = []
    files: list = []
    failures: list = []
    for problem, variant, method in cells:
        cfg = replace(base, problem=problem, variant=variant, method=method)
        cfg.check()
        label = _cell_label(cfg)
        for seed in cfg.seeds:
            if problem == "knapsack" and cfg.capacity is None:
                capacities = KNAPSACK_CAPACITIES[cfg.variant or "unweighted"]
                runs = [
                    train_one(replace(cfg, capacity=c), seed) for c in capacities
                ]
            else:
                runs = [train_one(cfg, seed)]
            records.extend(runs)
            if out_dir:
                for run in runs:
                    name = _log_name(label, method, seed, run.config.get("capacity"))
                    write_epoch_log(run.epoch_rows, os.path.join(out_dir, name))
                    files.append(name)
            bad = [r for r in runs if r.failed]
            if bad:
                failures.extend(
                    {"cell": label, "method": method, "seed": seed, "cause": r.failure}
                    for r in bad
                )
                pooled.append(_PooledRun(label, method, None))
            else:
                vals = [r.normalized_regret for r in runs]
                pooled.append(_PooledRun(label, method, float(np.mean(vals))))
    summary_rows = []
    by_cell: dict = {}
    for run in pooled:
        by_cell.setdefault((run.problem, run.method), []).append(run)
    for (label, method), cell_runs in sorted(by_cell.items()):
        alive = [r for r in cell_runs if r.normalized_regret is not None]
        if len(alive) >= 2:
            summary_rows.extend(summarize_runs(alive))
        else:
            summary_rows.append(
                {
                    "problem": label,
                    "method": method,
                    "mean_normalized_regret": float("nan"),
                    "sem": float("nan"),
                    "runs": len(alive),
                }
            )
    manifest = {
        "config": base.snapshot(),
        "cells": [list(c) for c in cells],
        "seeds": list(base.seeds),
        "files": files,
        "failures": failures,
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_summary(summary_rows, os.path.join(out_dir, "summary.csv"))
        files.append("summary.csv")
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return SuiteResult(summary_rows=summary_rows, records=records, manifest=manifest)


def _log_name(label: str, method: str, seed: int, capacity) -> str:
    cell = label.replace(":", "_")
    cap = "" if capacity is None else f"_c{capacity:g}"
    return f"log_{cell}{cap}_{method}_s{seed}.csv"


@dataclass
class DiagnoseResult:
    epoch: int
    spectra: dict
    geometry_rows: list
    run: RunRecord


def diagnose(
    cfg: ExperimentConfig,
    seed: int,
    epoch: int = 2,
    steps: int = 80,
    probes: int = 8,
    out_dir: str | None = None,
) -> DiagnoseResult:
    """Hessian spectra of L_pred, L_dec, and their 0.5/0.5 mix at a checkpoint.

    The run is retrained with a checkpoint at `epoch`; the three spectra
    share one eigenvalue grid so their densities are comparable.
    """
    cfg.check()
    if epoch > cfg.epochs:
        raise ConfigurationError(
            f"diagnose epoch {epoch} is beyond the training horizon {cfg.epochs}"
        )
    run = train_one(replace(cfg, checkpoint_epochs=(epoch,)), seed)
    if run.failed:
        raise SolverError(f"diagnosed run failed: {run.failure}")
    if epoch not in run.checkpoints:
        raise ConfigurationError(
            f"no checkpoint at epoch {epoch} for seed {seed}: {sorted(run.checkpoints)}"
        )
    theta0 = run.checkpoints[epoch]
    ds = build_dataset(cfg, seed)
    train_ds, _ = split(ds, cfg.train_frac, seed)
    problem = problem_for(ds)
    in_dim, hidden, out_dim = model_dims(cfg, ds)

    def grad_pred(theta: np.ndarray) -> np.ndarray:
        params = unflatten_params(theta, in_dim, hidden, out_dim)
        _, _, g_pred, _ = batch_gradients(problem, params, train_ds.instances)
        return g_pred

    def grad_dec(theta: np.ndarray) -> np.ndarray:
        params = unflatten_params(theta, in_dim, hidden, out_dim)
        _, _, _, g_dec = batch_gradients(problem, params, train_ds.instances)
        return g_dec

    def grad_mix(theta: np.ndarray) -> np.ndarray:
        params = unflatten_params(theta, in_dim, hidden, out_dim)
        _, _, g_pred, g_dec = batch_gradients(problem, params, train_ds.instances)
        return 0.5 * g_pred + 0.5 * g_dec

    grads = {"pred": grad_pred, "dec": grad_dec, "mix": grad_mix}
    raw = {
        name: lanczos_spectrum(fn, theta0, steps=steps, probes=probes, seed=seed)
        for name, fn in grads.items()
    }
    grid = default_grid(
        [vals for est in raw.values() for vals in est.ritz_values]
    )
    spectra = {}
    for name, est in raw.items():
        density, bandwidth = density_from_ritz(est.ritz_values, est.ritz_weights, grid)
        est.grid = grid
        est.density = density
        est.bandwidth = bandwidth
        spectra[name] = est
    geometry_rows = [
        {"epoch": row["epoch"], "cos_phi": row["cos_phi"], "norm_ratio": row["norm_ratio"]}
        for row in run.epoch_rows
    ]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for name, est in spectra.items():
            write_spectrum(est, os.path.join(out_dir, f"spectrum_{name}_s{seed}_e{epoch}.csv"))
        geom_path = os.path.join(out_dir, f"geometry_s{seed}_e{epoch}.csv")
        with open(geom_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("epoch,cos_phi,norm_ratio\n")
            for row in geometry_rows:
                fh.write(
                    f"{row['epoch']},{float(row['cos_phi'])!r},{float(row['norm_ratio'])!r}\n"
                )
    return DiagnoseResult(epoch=epoch, spectra=spectra, geometry_rows=geometry_rows, run=run)
