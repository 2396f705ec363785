"""Batch EM and classification-EM (CEM) fitting loops."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ML_PRIOR,
    Dataset,
    DirichletPrior,
    MixtureModel,
    SuffStats,
    log_joint,
    log_prior_density,
    map_estimate,
    normalize_log_rows,
)

log = logging.getLogger(__name__)

ABS_TOL = 1e-12
MONOTONE_SLACK = 1e-9


class MonotonicityError(RuntimeError):
    """The fitting objective went down; this signals a bug, not bad data."""


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 150
    rel_tol: float = 1e-6
    prior: DirichletPrior = field(default_factory=DirichletPrior)
    objective: str = "map"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.objective not in ("map", "ml"):
            raise ValueError("objective must be 'map' or 'ml'")

    @property
    def effective_prior(self) -> DirichletPrior:
        return self.prior if self.objective == "map" else ML_PRIOR


@dataclass
class FitResult:
    model: MixtureModel
    final_objective: float
    iterations: int
    objective_trace: list[float]
    seconds: float
    converged: bool


def e_step(model: MixtureModel, data: Dataset) -> tuple[np.ndarray, float]:
    """Posterior responsibilities (N, K) and the total log-likelihood."""
    resp, lognorm, degenerate = normalize_log_rows(log_joint(model, data))
    if degenerate.any():
        log.warning("%d cases have zero probability under every class", degenerate.sum())
    return resp, float(lognorm.sum())


def accumulate_stats(resp: np.ndarray, data: Dataset) -> SuffStats:
    """Fractional counts: mass[k] = sum_j resp[j,k], counts[k][i][v] = sum over x_i = v."""
    resp = np.asarray(resp, dtype=np.float64)
    if resp.shape[0] != data.N:
        raise ValueError("responsibilities and dataset differ in case count")
    mass = resp.sum(axis=0)
    nonref = resp.T @ data.design
    counts = []
    col = 0
    for r in data.schema.cardinalities:
        c = np.empty((resp.shape[1], r))
        c[:, 1:] = nonref[:, col : col + r - 1]
        # reference value count by subtraction; cancellation can leave -1e-16
        c[:, 0] = np.maximum(mass - c[:, 1:].sum(axis=1), 0.0)
        counts.append(c)
        col += r - 1
    return SuffStats(data.schema, mass, counts)


def hard_assign(model: MixtureModel, data: Dataset) -> np.ndarray:
    """Most probable class per case; ties go to the lowest class index."""
    return np.argmax(log_joint(model, data), axis=1)


def _one_hot(assign: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((assign.shape[0], K))
    out[np.arange(assign.shape[0]), assign] = 1.0
    return out


def _settled(f: float, prev: float, rel_tol: float) -> bool:
    if f == prev:
        return True
    change = abs(f - prev)
    return change < rel_tol * abs(prev) or change < ABS_TOL


def _check_monotone(f: float, prev: float, where: str) -> None:
    if f < prev - MONOTONE_SLACK * abs(prev):
        raise MonotonicityError(f"{where}: objective decreased from {prev!r} to {f!r}")


def em_fit(data: Dataset, init_model: MixtureModel, config: FitConfig = FitConfig()) -> FitResult:
    """Run EM from ``init_model`` until the objective settles or max_iters is hit.

    The objective is the log parameter posterior for MAP fitting and the
    log-likelihood for ML fitting; it is evaluated once per model, including
    the initial one, so the trace has ``iterations + 1`` entries.
    """
    prior = config.effective_prior
    t0 = time.perf_counter()
    model = init_model
    resp, ll = e_step(model, data)
    f = ll + log_prior_density(model, prior)
    trace = [f]
    converged = False
    it = 0
    while it < config.max_iters:
        it += 1
        model = map_estimate(accumulate_stats(resp, data), prior)
        resp, ll = e_step(model, data)
        prev, f = f, ll + log_prior_density(model, prior)
        trace.append(f)
        if math.isfinite(prev):
            _check_monotone(f, prev, f"EM iteration {it}")
            if _settled(f, prev, config.rel_tol):
                converged = True
                break
    return FitResult(model, f, it, trace, time.perf_counter() - t0, converged)


def complete_objective(model: MixtureModel, data: Dataset, assign: np.ndarray, prior: DirichletPrior) -> float:
    """Classification log-likelihood of a hard partition plus the log prior."""
    lj = log_joint(model, data)
    return float(lj[np.arange(data.N), assign].sum()) + log_prior_density(model, prior)


def cem_fit(data: Dataset, init_model: MixtureModel, config: FitConfig = FitConfig()) -> FitResult:
    """Classification EM: hard-assign every case, refit, repeat.

    Stops when an assignment vector repeats the previous one exactly, when the
    classification objective settles under ``rel_tol``, or at max_iters.  Empty
    clusters stay in the model with prior-only parameters.
    """
    prior = config.effective_prior
    t0 = time.perf_counter()
    K = init_model.K
    assign = hard_assign(init_model, data)
    trace: list[float] = []
    converged = False
    model = init_model
    it = 0
    while it < config.max_iters:
        it += 1
        stats = accumulate_stats(_one_hot(assign, K), data)
        model = map_estimate(stats, prior)
        lj = log_joint(model, data)
        f = float(lj[np.arange(data.N), assign].sum()) + log_prior_density(model, prior)
        new_assign = np.argmax(lj, axis=1)
        if trace and math.isfinite(trace[-1]):
            _check_monotone(f, trace[-1], f"CEM iteration {it}")
        trace.append(f)
        if np.array_equal(new_assign, assign):
            converged = True
            break
        if len(trace) > 1 and math.isfinite(trace[-2]) and _settled(f, trace[-2], config.rel_tol):
            converged = True
            break
        assign = new_assign
    return FitResult(model, trace[-1], it, trace, time.perf_counter() - t0, converged)
