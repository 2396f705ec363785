"""Experimental conditions, runs over seeds and their aggregation.

A condition is a clustering algorithm, an initialization method and their
parameters.  A run is one condition evaluated with one seed: a K-sweep on the
training set, then every criterion on the selected model.  The run seed is
the initialization seed, so at equal seeds EM and CEM start from identical
models.  Reduced-scale conditions train on a random subset of the training
cases drawn from the run seed, shared by every condition at that seed.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .core import Dataset, DirichletPrior
from .evaluate import classification_accuracy, confusion, evaluate_sweep, holdout_logl
from .init import InitConfig, derive_seed
from .selection import SweepConfig, sweep_k
from .synthgen import GenConfig, ObservedGenerator, SyntheticData, generate
from .trainers import FitConfig

log = logging.getLogger(__name__)

# sub-seed key for training subsets; sweeps use small run indices as keys
SUBSET_KEY = 1_000_003


@dataclass(frozen=True)
class Condition:
    name: str
    algorithm: str = "em"
    init: str = "marginal"
    k_min: int = 1
    k_max: int = 16
    rel_tol: float = 1e-6
    max_iters: int = 150
    hac_subsample: int = 2000
    marginal_ess: float = 2.0
    alpha: float = 2.0
    train_n: int | None = None

    def sweep_config(self, seed: int) -> SweepConfig:
        prior = DirichletPrior(self.alpha, self.alpha)
        return SweepConfig(
            k_min=self.k_min,
            k_max=self.k_max,
            fit=FitConfig(max_iters=self.max_iters, rel_tol=self.rel_tol, prior=prior),
            init=InitConfig(
                method=self.init, seed=seed, marginal_ess=self.marginal_ess, hac_subsample=self.hac_subsample
            ),
            algorithm=self.algorithm,
        )


@dataclass
class RunRecord:
    condition: str
    seed: int
    marginal_l_bits: float
    k_star: int
    effective_k: int
    holdout_l_bits: float
    class_acc: float
    init_s: float
    fit_s: float
    score_s: float
    sweep_fit_s: float
    iterations: int

    def __post_init__(self):
        for name in ("init_s", "fit_s", "score_s", "sweep_fit_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"negative timing {name}")

    @property
    def fit_s_per_class(self) -> float:
        return self.fit_s / self.k_star

    @property
    def total_s_per_class(self) -> float:
        """Per-class time including initialization."""
        return (self.init_s + self.fit_s) / self.k_star

    def as_row(self) -> dict:
        row = asdict(self)
        row["fit_s_per_class"] = self.fit_s_per_class
        row["total_s_per_class"] = self.total_s_per_class
        return row


METRICS = (
    "marginal_l_bits",
    "k_star",
    "effective_k",
    "holdout_l_bits",
    "class_acc",
    "fit_s_per_class",
    "total_s_per_class",
    "init_s",
    "fit_s",
    "sweep_fit_s",
)


def training_subset(train: Dataset, n: int, seed: int) -> Dataset:
    """Sorted uniform sample of n training cases for the given run seed."""
    if n >= train.N:
        return train
    rng = np.random.default_rng(derive_seed(seed, SUBSET_KEY))
    return train.take(np.sort(rng.choice(train.N, size=n, replace=False)))


def run_condition(train: Dataset, test: Dataset, cond: Condition, seed: int) -> RunRecord:
    if cond.train_n is not None:
        train = training_subset(train, cond.train_n, seed)
    t0 = time.perf_counter()
    sweep = sweep_k(train, cond.sweep_config(seed))
    report = evaluate_sweep(sweep, train, test)
    best = sweep.best
    log.info(
        "%s seed=%d K*=%d holdout=%.4f acc=%s (%.1fs)",
        cond.name, seed, sweep.k_star, report.holdout_l_bits, report.class_acc, time.perf_counter() - t0,
    )
    return RunRecord(
        condition=cond.name,
        seed=seed,
        marginal_l_bits=report.marginal_l_bits,
        k_star=report.k_star,
        effective_k=report.effective_k,
        holdout_l_bits=report.holdout_l_bits,
        class_acc=float("nan") if report.class_acc is None else report.class_acc,
        init_s=best.init_seconds,
        fit_s=best.fit.seconds,
        score_s=best.score_seconds,
        sweep_fit_s=float(sum(r.fit.seconds for r in sweep.records)),
        iterations=best.fit.iterations,
    )


@dataclass
class BenchResult:
    records: list[RunRecord]
    failures: list[tuple[str, int, str]] = field(default_factory=list)
    truth: dict | None = None


def run_bench(train: Dataset, test: Dataset, conditions, seeds, truth=None) -> BenchResult:
    """Every (condition, seed) pair in sorted order; a failed run is recorded, not raised."""
    out = BenchResult([])
    for cond in conditions:
        for seed in sorted(seeds):
            try:
                out.records.append(run_condition(train, test, cond, seed))
            except Exception as exc:  # noqa: BLE001 - one bad run must not sink the bench
                log.warning("%s seed=%d failed: %s", cond.name, seed, exc)
                out.failures.append((cond.name, seed, f"{type(exc).__name__}: {exc}"))
    if truth is not None:
        out.truth = score_truth(truth, test)
    return out


def score_truth(model, test: Dataset) -> dict:
    """Holdout likelihood and self-classification accuracy of the generating model."""
    row = {"holdout_l_bits": holdout_logl(model, test)}
    if test.labels is not None:
        row["class_acc"] = classification_accuracy(confusion(model, test, n_true=model.K))
    return row


def mean_std(values) -> tuple[float, float | None]:
    """Mean and sample standard deviation (None with fewer than two values)."""
    v = np.asarray([x for x in values if not (isinstance(x, float) and math.isnan(x))], dtype=np.float64)
    if v.size == 0:
        return float("nan"), None
    return float(v.mean()), (float(v.std(ddof=1)) if v.size > 1 else None)


def summarize(records: list[RunRecord]) -> list[dict]:
    """One row per condition (first-appearance order): run count and mean/std per metric."""
    names = list(dict.fromkeys(r.condition for r in records))
    rows = []
    for name in names:
        rs = [r for r in records if r.condition == name]
        row = {"condition": name, "runs": len(rs)}
        for m in METRICS:
            row[m] = mean_std([r.as_row()[m] for r in rs])
        rows.append(row)
    return rows


def loglog_slope(sizes, seconds) -> float:
    """Least-squares slope of log(seconds) against log(size)."""
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(seconds, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


SUBSAMPLE_SIZES = (125, 250, 500, 1000, 2000, 4000)
SCALING_SIZES = (500, 1000, 2000, 4000)


def preset(name: str) -> list[Condition]:
    """Named condition sets for the benchmark studies."""
    if name == "init-comparison":
        return [
            Condition(f"{alg}-{init}", algorithm=alg, init=init)
            for init in ("random", "marginal", "hac")
            for alg in ("em", "cem")
        ]
    if name == "em-vs-hac-8k":
        return [
            Condition("em-marginal-8k", init="marginal", k_max=10, train_n=8000),
            Condition("hac-8k", algorithm="hac", k_max=10, train_n=8000),
        ]
    if name == "runtime-equalized":
        return [
            Condition("em-marginal-fast", init="marginal", rel_tol=4e-4),
            Condition("cem-marginal", algorithm="cem", init="marginal"),
        ]
    if name == "runtime-equalized-loose":
        return [
            Condition("em-marginal-fast", init="marginal", rel_tol=1e-3),
            Condition("cem-marginal", algorithm="cem", init="marginal"),
        ]
    if name in ("subsample-size", "hac-scaling"):
        sizes = SUBSAMPLE_SIZES if name == "subsample-size" else SCALING_SIZES
        return [Condition(f"em-hac-{n}", init="hac", hac_subsample=n, k_min=10, k_max=10) for n in sizes]
    raise ValueError(f"unknown preset {name!r}")


PRESETS = ("init-comparison", "em-vs-hac-8k", "runtime-equalized", "runtime-equalized-loose", "subsample-size", "hac-scaling")


def synthetic_benchmark(gen_config: GenConfig = GenConfig(), truth_samples: int = 64):
    """Generated data plus the generator as a scorable model over the retained variables."""
    data: SyntheticData = generate(gen_config)
    truth = ObservedGenerator(data.generator, data.retained, n_samples=truth_samples, seed=gen_config.seed)
    return data, truth


def record_fields() -> list[str]:
    return [f.name for f in fields(RunRecord)] + ["fit_s_per_class", "total_s_per_class"]


def scaled(conditions, **changes) -> list[Condition]:
    return [replace(c, **changes) for c in conditions]
