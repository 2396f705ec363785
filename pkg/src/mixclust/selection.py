"""Cheeseman-Stutz marginal likelihood and the sweep over the number of clusters."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy

from .core import (
    LN2,
    ML_PRIOR,
    Dataset,
    DirichletPrior,
    MixtureModel,
    SuffStats,
    map_estimate,
)
from .hac import partition_from_merges, run_hac
from .init import InitConfig, derive_seed, hac_init_models, initialize
from .trainers import FitConfig, FitResult, accumulate_stats, cem_fit, e_step, em_fit

log = logging.getLogger(__name__)

ALGORITHMS = ("em", "cem", "hac")


def _dirichlet_multinomial(counts: np.ndarray, alpha: float) -> float:
    """Sum over rows of log[G(sum a)/G(sum a + M)] + sum_v log[G(a + n_v)/G(a)]."""
    counts = np.atleast_2d(counts)
    r = counts.shape[1]
    M = counts.sum(axis=1)
    head = gammaln(r * alpha) - gammaln(r * alpha + M)
    body = (gammaln(alpha + counts) - gammaln(alpha)).sum(axis=1)
    return float((head + body).sum())


def complete_data_log_ml(stats: SuffStats, prior: DirichletPrior = ML_PRIOR) -> float:
    """Exact log marginal likelihood of the completed data (fractional counts allowed)."""
    if np.any(stats.mass < 0) or any(np.any(c < 0) for c in stats.counts):
        raise ValueError("sufficient statistics contain negative counts")
    total = _dirichlet_multinomial(stats.mass[None, :], prior.alpha_class)
    for c in stats.counts:
        total += _dirichlet_multinomial(c, prior.alpha_theta)
    return total


def complete_data_log_likelihood(model: MixtureModel, stats: SuffStats) -> float:
    """sum_k mass_k ln lam_k + sum_{k,i,v} counts ln theta, with 0 ln 0 = 0."""
    total = float(xlogy(stats.mass, model.lam).sum())
    for c, t in zip(stats.counts, model.theta):
        total += float(xlogy(c, t).sum())
    return total


def cheeseman_stutz_nats(data: Dataset, model: MixtureModel, prior: DirichletPrior = ML_PRIOR) -> float:
    resp, ll = e_step(model, data)
    stats = accumulate_stats(resp, data)
    return complete_data_log_ml(stats, prior) + ll - complete_data_log_likelihood(model, stats)


def cheeseman_stutz(data: Dataset, model: MixtureModel, prior: DirichletPrior = ML_PRIOR) -> float:
    """Cheeseman-Stutz approximation of log P(D | K) in bits per case."""
    return cheeseman_stutz_nats(data, model, prior) / (data.N * LN2)


@dataclass(frozen=True)
class SweepConfig:
    k_min: int = 1
    k_max: int = 1
    fit: FitConfig = field(default_factory=FitConfig)
    init: InitConfig = field(default_factory=InitConfig)
    runs_per_k: int = 1
    algorithm: str = "em"
    score_prior: DirichletPrior = ML_PRIOR

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")
        if self.runs_per_k < 1:
            raise ValueError("runs_per_k must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class KRecord:
    K: int
    model: MixtureModel
    cs_bits: float
    fit: FitResult
    init_seconds: float
    score_seconds: float
    run: int = 0


@dataclass
class SweepResult:
    records: list[KRecord]
    k_star: int

    @property
    def best(self) -> KRecord:
        return next(r for r in self.records if r.K == self.k_star)

    def scores(self) -> dict[int, float]:
        return {r.K: r.cs_bits for r in self.records}


def _hac_fits(data: Dataset, ks: list[int], prior: DirichletPrior) -> dict[int, FitResult]:
    result = run_hac(data, ks[0])
    out = {}
    for k in ks:
        assign, _ = partition_from_merges(data.N, result.merges, k)
        model = map_estimate(SuffStats.from_assignments(data, assign, k), prior)
        out[k] = FitResult(model, float("nan"), data.N - k, [], result.seconds, True)
    return out


def sweep_k(data: Dataset, config: SweepConfig) -> SweepResult:
    """Fit one model per K, score each with Cheeseman-Stutz, pick the argmax.

    Random and Marginal starts use the sub-seed derive_seed(seed, run, K); HAC
    starts share one subsample per run, drawn with derive_seed(seed, run), and
    one agglomeration serves every K.  Ties in the score go to the smaller K.
    """
    ks = list(range(config.k_min, config.k_max + 1))
    best: dict[int, KRecord] = {}
    prior = config.fit.effective_prior
    for run in range(config.runs_per_k):
        if config.algorithm == "hac":
            fits = _hac_fits(data, ks, prior)
            starts = {k: (None, 0.0) for k in ks}
        elif config.init.method == "hac":
            n_sub = min(config.init.hac_subsample, data.N)
            models, secs = hac_init_models(
                data, ks, derive_seed(config.init.seed, run), n_sub, config.init.hac_prior
            )
            starts = {k: (models[k], secs) for k in ks}
        else:
            starts = {}
            for k in ks:
                t0 = time.perf_counter()
                m = initialize(data, k, config.init, seed=derive_seed(config.init.seed, run, k))
                starts[k] = (m, time.perf_counter() - t0)
        for k in ks:
            init_model, init_secs = starts[k]
            if config.algorithm == "hac":
                fit = fits[k]
            elif config.algorithm == "em":
                fit = em_fit(data, init_model, config.fit)
            else:
                fit = cem_fit(data, init_model, config.fit)
            t0 = time.perf_counter()
            cs = cheeseman_stutz(data, fit.model, config.score_prior)
            rec = KRecord(k, fit.model, cs, fit, init_secs, time.perf_counter() - t0, run)
            log.info("K=%d run=%d CS=%.4f bits/case iters=%d", k, run, cs, fit.iterations)
            if k not in best or cs > best[k].cs_bits:
                best[k] = rec
    records = [best[k] for k in ks]
    k_star = max(records, key=lambda r: (r.cs_bits, -r.K)).K
    return SweepResult(records, k_star)
