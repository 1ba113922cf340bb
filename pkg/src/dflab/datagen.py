"""Synthetic dataset generators, CSV round-tripping, and splitting.

All generators draw from the counter-based Philox generator, so a seed
identifies a dataset bit-exactly across platforms and processes.

Three problem families are produced at desk scale:

  knapsack   48 items per instance, 8 standard-normal features each;
             true values v = softplus(P.[x, x^2] + noise) for a fixed
             per-dataset projection P, so values are always positive.
  budget     5 websites x 10 users; true click-through rates uniform on
             [0, 0.2]; features x_w = A.y_w for a per-dataset standard
             normal A; optional fake prediction targets uniform on [0,1]
             are appended to the target block and never feed the
             decision.
  portfolio  49 assets driven by a 3-factor linear model with AR(1)
             factors, features are each asset's 12 lagged returns, and
             the risk matrix is the ridge-regularized sample covariance
             of the full generated history.

CSV schemas (UTF-8, comma-separated, header required; floats written
with repr so round trips are bit-exact):

  knapsack   instance_id,item_id,f1..f8,weight,value
  budget     instance_id,website_id,x1..xU,y1..yT
  portfolio  date,r1..r49
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .layers import BudgetProblem, KnapsackProblem, PortfolioProblem

PROBLEMS = ("knapsack", "budget", "portfolio")

KNAPSACK_N_ITEMS = 48
KNAPSACK_N_FEATURES = 8
KNAPSACK_CAPACITIES = {"unweighted": (25.0, 35.0, 45.0), "weighted": (30.0, 90.0, 150.0)}
KNAPSACK_WEIGHT_CHOICES = (3.0, 5.0, 7.0)
KNAPSACK_NOISE_STD = 0.1

BUDGET_N_WEBSITES = 5
BUDGET_N_USERS = 10
BUDGET_B = 2
BUDGET_CTR_MAX = 0.2

PORTFOLIO_N_ASSETS = 49
PORTFOLIO_WINDOW = 12
PORTFOLIO_N_FACTORS = 3
PORTFOLIO_AR_COEF = 0.9
# Returns are in monthly percent units, like the industry-portfolio
# benchmarks this imitates, drawn from a volatile universe (per-asset
# std in the low teens). The unit matters, not just taste: with
# percent-scale covariance the inverse in the allocation rule damps
# prediction errors instead of amplifying them, so allocations and the
# decision loss stay tame at risk aversion 1.
PORTFOLIO_LOADING_STD = 8.0
PORTFOLIO_NOISE_STD = 2.0
# Diagonal shrinkage for the sample covariance, as a fraction of the
# mean per-asset variance. Scale-free, unlike an absolute ridge, and
# deliberately heavy: the short return histories here (barely more rows
# than assets) make the raw sample covariance near-singular, and the
# low-noise factor structure concentrates it further.
PORTFOLIO_RIDGE_FRAC = 0.5
# Lagged-return features are divided by this typical magnitude so the
# tanh body of the predictor sees O(1) inputs; targets stay in percent.
PORTFOLIO_FEATURE_SCALE = 15.0


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide PRNG: Philox, counter-based, seed-portable."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class ProblemInstance:
    x: np.ndarray
    y: np.ndarray
    constants: dict = field(default_factory=dict)


@dataclass
class Dataset:
    problem: str
    instances: list
    seed: int
    split: str = "full"
    meta: dict = field(default_factory=dict)

    def check(self) -> None:
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.split not in ("full", "train", "test"):
            raise ConfigurationError(f"unknown split tag {self.split!r}")
        shapes = {(inst.x.shape, np.asarray(inst.y).shape) for inst in self.instances}
        if len(shapes) > 1:
            raise ConfigurationError(f"instances disagree on dimensions: {sorted(shapes)}")

    @property
    def n_instances(self) -> int:
        return len(self.instances)


def problem_for(ds: Dataset) -> KnapsackProblem | BudgetProblem | PortfolioProblem:
    """Build the decision problem that matches a dataset's constants."""
    if ds.problem == "knapsack":
        first = ds.instances[0]
        return KnapsackProblem(
            weights=first.constants["weights"],
            capacity=float(ds.meta["capacity"]),
            variant=ds.meta["variant"],
            gamma=float(ds.meta.get("gamma", 0.1)),
        )
    if ds.problem == "budget":
        return BudgetProblem(
            n_websites=int(ds.meta["n_websites"]),
            n_users=int(ds.meta["n_users"]),
            budget=int(ds.meta["budget"]),
            fake_targets=int(ds.meta["fake_targets"]),
            gamma=float(ds.meta.get("gamma", 0.1)),
        )
    if ds.problem == "portfolio":
        return PortfolioProblem(
            cov=np.asarray(ds.meta["cov"], dtype=float),
            risk_aversion=float(ds.meta.get("risk_aversion", 1.0)),
        )
    raise ConfigurationError(f"unknown problem {ds.problem!r}")


def gen_knapsack(
    seed: int,
    n_instances: int = 40,
    variant: str = "unweighted",
    capacity: float | None = None,
    gamma: float = 0.1,
) -> Dataset:
    """Feature-driven item values; per-instance weights; one capacity per dataset."""
    if variant not in KNAPSACK_CAPACITIES:
        raise ConfigurationError(f"unknown knapsack variant {variant!r}")
    if n_instances < 1:
        raise ConfigurationError("n_instances must be >= 1")
    if capacity is None:
        capacity = KNAPSACK_CAPACITIES[variant][1]
    rng = make_rng(seed)
    # One projection per dataset so the value function is learnable across instances.
    proj = rng.normal(0.0, 0.25, size=(2 * KNAPSACK_N_FEATURES,))
    instances = []
    for _ in range(n_instances):
        x = rng.normal(size=(KNAPSACK_N_ITEMS, KNAPSACK_N_FEATURES))
        z = np.concatenate([x, x * x], axis=1) @ proj
        z = z + rng.normal(0.0, KNAPSACK_NOISE_STD, size=KNAPSACK_N_ITEMS)
        v = np.logaddexp(0.0, z)  # softplus, numerically stable
        if variant == "unweighted":
            w = np.ones(KNAPSACK_N_ITEMS)
        else:
            w = rng.choice(np.asarray(KNAPSACK_WEIGHT_CHOICES), size=KNAPSACK_N_ITEMS)
        instances.append(ProblemInstance(x=x, y=v, constants={"weights": w}))
    ds = Dataset(
        problem="knapsack",
        instances=instances,
        seed=seed,
        meta={"variant": variant, "capacity": float(capacity), "gamma": gamma},
    )
    ds.check()
    return ds


def gen_budget(
    seed: int,
    n_instances: int = 30,
    fake_targets: int = 0,
    gamma: float = 0.1,
) -> Dataset:
    """CTR matrices with linearly mixed features and optional fake targets."""
    if n_instances < 1:
        raise ConfigurationError("n_instances must be >= 1")
    if fake_targets < 0:
        raise ConfigurationError("fake_targets must be >= 0")
    rng = make_rng(seed)
    mix = rng.normal(size=(BUDGET_N_USERS, BUDGET_N_USERS))  # one A per dataset
    instances = []
    for _ in range(n_instances):
        ctr = rng.uniform(0.0, BUDGET_CTR_MAX, size=(BUDGET_N_WEBSITES, BUDGET_N_USERS))
        x = ctr @ mix.T  # row w is A . y_w
        y = ctr
        if fake_targets:
            fakes = rng.uniform(0.0, 1.0, size=(BUDGET_N_WEBSITES, fake_targets))
            y = np.concatenate([ctr, fakes], axis=1)
        instances.append(ProblemInstance(x=x, y=y, constants={"budget": BUDGET_B}))
    ds = Dataset(
        problem="budget",
        instances=instances,
        seed=seed,
        meta={
            "n_websites": BUDGET_N_WEBSITES,
            "n_users": BUDGET_N_USERS,
            "budget": BUDGET_B,
            "fake_targets": fake_targets,
            "gamma": gamma,
            "mix": mix,
        },
    )
    ds.check()
    return ds


def gen_portfolio(
    seed: int,
    n_instances: int = 48,
    n_assets: int = PORTFOLIO_N_ASSETS,
    horizon: int | None = None,
    risk_aversion: float = 1.0,
) -> Dataset:
    """Factor-model returns with AR(1) factors; lagged-return features."""
    if n_instances < 1:
        raise ConfigurationError("n_instances must be >= 1")
    if n_assets < 2:
        raise ConfigurationError("n_assets must be >= 2")
    min_horizon = max(n_instances + PORTFOLIO_WINDOW, n_assets + 1)
    if horizon is None:
        horizon = min_horizon
    if horizon < min_horizon:
        raise ConfigurationError(
            f"horizon must be >= {min_horizon} for {n_instances} instances and "
            f"a well-defined covariance over {n_assets} assets"
        )
    rng = make_rng(seed)
    loadings = rng.normal(0.0, PORTFOLIO_LOADING_STD, size=(n_assets, PORTFOLIO_N_FACTORS))
    rho = PORTFOLIO_AR_COEF
    innov_std = np.sqrt(1.0 - rho * rho)  # keeps factors unit-variance stationary
    f = rng.normal(size=PORTFOLIO_N_FACTORS)
    returns = np.empty((horizon, n_assets))
    for t in range(horizon):
        f = rho * f + innov_std * rng.normal(size=PORTFOLIO_N_FACTORS)
        returns[t] = loadings @ f + rng.normal(0.0, PORTFOLIO_NOISE_STD, size=n_assets)
    cov = _shrunk_cov(returns)
    instances = _portfolio_instances(returns, n_instances)
    ds = Dataset(
        problem="portfolio",
        instances=instances,
        seed=seed,
        meta={
            "cov": cov,
            "risk_aversion": risk_aversion,
            "loadings": loadings,
            "ar_coef": rho,
            "noise_std": PORTFOLIO_NOISE_STD,
            "returns": returns,
        },
    )
    ds.check()
    return ds


def _shrunk_cov(returns: np.ndarray) -> np.ndarray:
    """Sample covariance with scale-free diagonal shrinkage."""
    sample = np.cov(returns, rowvar=False, bias=False)
    floor = PORTFOLIO_RIDGE_FRAC * float(np.mean(np.diag(sample)))
    return sample + floor * np.eye(returns.shape[1])


def _portfolio_instances(returns: np.ndarray, n_instances: int) -> list:
    """Instance t: features are each asset's previous `window` returns, target is r_t."""
    horizon, _ = returns.shape
    window = PORTFOLIO_WINDOW
    if n_instances > horizon - window:
        raise ConfigurationError(
            f"return history of length {horizon} supports at most "
            f"{horizon - window} instances with a lag window of {window}"
        )
    instances = []
    for t in range(window, window + n_instances):
        # Column j is the (j+1)-lagged return, scaled to O(1) for the model.
        x = returns[t - window : t][::-1].T / PORTFOLIO_FEATURE_SCALE
        instances.append(ProblemInstance(x=x, y=returns[t].copy(), constants={}))
    return instances


def split(ds: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split into disjoint, exhaustive train/test datasets."""
    if not 0.0 < train_frac < 1.0:
        raise ConfigurationError("train_frac must lie strictly between 0 and 1")
    n = ds.n_instances
    if n < 2:
        raise ConfigurationError("need at least 2 instances to split")
    n_train = int(round(train_frac * n))
    n_train = min(max(n_train, 1), n - 1)
    order = make_rng(seed).permutation(n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    train = Dataset(
        problem=ds.problem,
        instances=[ds.instances[i] for i in train_idx],
        seed=ds.seed,
        split="train",
        meta=ds.meta,
    )
    test = Dataset(
        problem=ds.problem,
        instances=[ds.instances[i] for i in test_idx],
        seed=ds.seed,
        split="test",
        meta=ds.meta,
    )
    return train, test


def _fmt(value: float) -> str:
    return repr(float(value))


def write_csv(ds: Dataset, path: str) -> None:
    """Write the dataset in its documented schema; floats keep full precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if ds.problem == "knapsack":
            header = (
                ["instance_id", "item_id"]
                + [f"f{j + 1}" for j in range(KNAPSACK_N_FEATURES)]
                + ["weight", "value"]
            )
            writer.writerow(header)
            for i, inst in enumerate(ds.instances):
                w = inst.constants["weights"]
                for j in range(inst.x.shape[0]):
                    writer.writerow(
                        [i, j] + [_fmt(v) for v in inst.x[j]] + [_fmt(w[j]), _fmt(inst.y[j])]
                    )
        elif ds.problem == "budget":
            n_feat = ds.instances[0].x.shape[1]
            n_targ = np.asarray(ds.instances[0].y).shape[1]
            header = (
                ["instance_id", "website_id"]
                + [f"x{j + 1}" for j in range(n_feat)]
                + [f"y{j + 1}" for j in range(n_targ)]
            )
            writer.writerow(header)
            for i, inst in enumerate(ds.instances):
                for w in range(inst.x.shape[0]):
                    writer.writerow(
                        [i, w] + [_fmt(v) for v in inst.x[w]] + [_fmt(v) for v in inst.y[w]]
                    )
        elif ds.problem == "portfolio":
            returns = ds.meta["returns"]
            writer.writerow(["date"] + [f"r{j + 1}" for j in range(returns.shape[1])])
            for t in range(returns.shape[0]):
                writer.writerow([t] + [_fmt(v) for v in returns[t]])
        else:
            raise ConfigurationError(f"unknown problem {ds.problem!r}")


def _parse_float(token: str, row: int, column: str) -> float:
    try:
        return float(token)
    except ValueError as exc:
        raise DataFormatError(
            f"cannot parse {token!r} as a number", row=row, column=column
        ) from exc


def _read_rows(path: str, expected_header: list) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("file is empty (missing header)", row=0) from None
        if header != expected_header:
            missing = [c for c in expected_header if c not in header]
            if missing:
                raise DataFormatError(f"missing column {missing[0]!r}", column=missing[0])
            raise DataFormatError(
                f"header mismatch: expected {expected_header}, got {header}"
            )
        rows = list(reader)
    if not rows:
        raise DataFormatError("file contains a header but no data rows", row=1)
    return rows


def load_csv(path: str, problem: str, **constants) -> Dataset:
    """Load a dataset written by write_csv (or matching the documented schema).

    Problem constants not stored in the CSV are passed as keyword
    arguments: knapsack takes capacity/variant/gamma, budget takes
    budget/fake_targets/gamma, portfolio takes n_instances/risk_aversion.
    """
    if problem == "knapsack":
        return _load_knapsack(path, **constants)
    if problem == "budget":
        return _load_budget(path, **constants)
    if problem == "portfolio":
        return _load_portfolio(path, **constants)
    raise ConfigurationError(f"unknown problem {problem!r}")


def _group_by_instance(rows: list) -> dict:
    groups: dict = {}
    for r, row in enumerate(rows, start=1):
        groups.setdefault(row[0], []).append((r, row))
    return groups


def _load_knapsack(
    path: str,
    variant: str = "unweighted",
    capacity: float | None = None,
    gamma: float = 0.1,
) -> Dataset:
    header = (
        ["instance_id", "item_id"]
        + [f"f{j + 1}" for j in range(KNAPSACK_N_FEATURES)]
        + ["weight", "value"]
    )
    rows = _read_rows(path, header)
    if capacity is None:
        capacity = KNAPSACK_CAPACITIES[variant][1]
    instances = []
    for _, group in sorted(_group_by_instance(rows).items(), key=lambda kv: int(kv[0])):
        feats, weights, values = [], [], []
        for r, row in sorted(group, key=lambda rr: int(rr[1][1])):
            if len(row) != len(header):
                raise DataFormatError(
                    f"expected {len(header)} fields, found {len(row)}", row=r
                )
            feats.append(
                [_parse_float(row[2 + j], r, f"f{j + 1}") for j in range(KNAPSACK_N_FEATURES)]
            )
            weights.append(_parse_float(row[10], r, "weight"))
            values.append(_parse_float(row[11], r, "value"))
        instances.append(
            ProblemInstance(
                x=np.asarray(feats), y=np.asarray(values), constants={"weights": np.asarray(weights)}
            )
        )
    ds = Dataset(
        problem="knapsack",
        instances=instances,
        seed=-1,
        meta={"variant": variant, "capacity": float(capacity), "gamma": gamma},
    )
    ds.check()
    return ds


def _load_budget(
    path: str,
    budget: int = BUDGET_B,
    fake_targets: int | None = None,
    gamma: float = 0.1,
) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        try:
            header = next(csv.reader(fh))
        except StopIteration:
            raise DataFormatError("file is empty (missing header)", row=0) from None
    n_feat = sum(1 for c in header if c.startswith("x"))
    n_targ = sum(1 for c in header if c.startswith("y"))
    if n_feat == 0 or n_targ == 0 or header[:2] != ["instance_id", "website_id"]:
        raise DataFormatError(f"unrecognized budget header {header}")
    expected = (
        ["instance_id", "website_id"]
        + [f"x{j + 1}" for j in range(n_feat)]
        + [f"y{j + 1}" for j in range(n_targ)]
    )
    rows = _read_rows(path, expected)
    if fake_targets is None:
        fake_targets = max(n_targ - BUDGET_N_USERS, 0)
    n_users = n_targ - fake_targets
    instances = []
    for _, group in sorted(_group_by_instance(rows).items(), key=lambda kv: int(kv[0])):
        xs, ys = [], []
        for r, row in sorted(group, key=lambda rr: int(rr[1][1])):
            if len(row) != len(expected):
                raise DataFormatError(
                    f"expected {len(expected)} fields, found {len(row)}", row=r
                )
            xs.append([_parse_float(row[2 + j], r, f"x{j + 1}") for j in range(n_feat)])
            ys.append(
                [_parse_float(row[2 + n_feat + j], r, f"y{j + 1}") for j in range(n_targ)]
            )
        instances.append(
            ProblemInstance(x=np.asarray(xs), y=np.asarray(ys), constants={"budget": budget})
        )
    n_websites = instances[0].x.shape[0]
    ds = Dataset(
        problem="budget",
        instances=instances,
        seed=-1,
        meta={
            "n_websites": n_websites,
            "n_users": n_users,
            "budget": budget,
            "fake_targets": fake_targets,
            "gamma": gamma,
        },
    )
    ds.check()
    return ds


def _load_portfolio(
    path: str,
    n_instances: int | None = None,
    risk_aversion: float = 1.0,
) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        try:
            header = next(csv.reader(fh))
        except StopIteration:
            raise DataFormatError("file is empty (missing header)", row=0) from None
    n_assets = len(header) - 1
    expected = ["date"] + [f"r{j + 1}" for j in range(n_assets)]
    rows = _read_rows(path, expected)
    returns = np.asarray(
        [
            [_parse_float(row[1 + j], r, f"r{j + 1}") for j in range(n_assets)]
            for r, row in enumerate(rows, start=1)
        ]
    )
    if n_instances is None:
        n_instances = returns.shape[0] - PORTFOLIO_WINDOW
    if n_instances < 1:
        raise DataFormatError(
            f"need more than {PORTFOLIO_WINDOW} return rows to build instances",
            row=len(rows),
        )
    cov = _shrunk_cov(returns)
    instances = _portfolio_instances(returns, n_instances)
    ds = Dataset(
        problem="portfolio",
        instances=instances,
        seed=-1,
        meta={"cov": cov, "risk_aversion": risk_aversion, "returns": returns},
    )
    ds.check()
    return ds
