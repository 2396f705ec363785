"""Starting points for EM and CEM: Random, Marginal and HAC initialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import Dataset, DirichletPrior, MixtureModel, SuffStats, VariableSchema, map_estimate
from .hac import partition_from_merges, run_hac

METHODS = ("random", "marginal", "hac")


def derive_seed(seed: int, *keys: int) -> int:
    """Split a base seed into an independent 64-bit sub-seed for the given keys."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class InitConfig:
    method: str = "marginal"
    seed: int = 0
    marginal_ess: float = 2.0
    hac_subsample: int = 2000
    hac_prior: DirichletPrior = field(default_factory=DirichletPrior)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown init method {self.method!r}")
        if not self.marginal_ess > 0:
            raise ValueError("marginal_ess must be positive")
        if self.hac_subsample < 1:
            raise ValueError("hac_subsample must be >= 1")


def _sample_dirichlet_tables(
    rng: np.random.Generator, schema: VariableSchema, alphas: list[np.ndarray]
) -> list[np.ndarray]:
    """Draw theta[k][i] ~ Dirichlet(alphas[i][k]) by normalised Gamma variates.

    All variates come from one call in class-major, variable-minor order.
    """
    K = alphas[0].shape[0]
    flat = np.concatenate([a for k in range(K) for a in (al[k] for al in alphas)])
    g = rng.standard_gamma(flat)
    tables = [np.empty((K, r)) for r in schema.cardinalities]
    pos = 0
    for k in range(K):
        for i, r in enumerate(schema.cardinalities):
            row = g[pos : pos + r]
            s = row.sum()
            while s == 0:
                # every variate underflowed; only possible for tiny alphas
                row = rng.standard_gamma(alphas[i][k])
                s = row.sum()
            tables[i][k] = row / s
            pos += r
    return tables


def init_random(schema: VariableSchema, K: int, seed: int) -> MixtureModel:
    """Tables from a uniform Dirichlet (every hyperparameter 1), uniform class prior."""
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(seed)
    alphas = [np.ones((K, r)) for r in schema.cardinalities]
    return MixtureModel(schema, np.full(K, 1.0 / K), _sample_dirichlet_tables(rng, schema, alphas))


def one_class_map(data: Dataset, alpha: float = 2.0) -> list[np.ndarray]:
    """Per-variable MAP value distribution of the data with a single class."""
    stats = SuffStats.from_assignments(data, np.zeros(data.N, dtype=np.int64), 1)
    model = map_estimate(stats, DirichletPrior(alpha_class=1.0, alpha_theta=alpha))
    return [t[0] for t in model.theta]


def init_marginal(data: Dataset, K: int, seed: int, ess: float = 2.0) -> MixtureModel:
    """Noisy-marginal start: theta[k][i] ~ Dirichlet(ess * one-class MAP marginal).

    The Dirichlet is centred on the marginal by its mean.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not ess > 0:
        raise ValueError("ess must be positive")
    rng = np.random.default_rng(seed)
    center = one_class_map(data)
    alphas = [np.tile(ess * c, (K, 1)) for c in center]
    return MixtureModel(data.schema, np.full(K, 1.0 / K), _sample_dirichlet_tables(rng, data.schema, alphas))


def hac_subsample(data: Dataset, n_sub: int, seed: int) -> np.ndarray:
    """Sorted row indices of a uniform sample without replacement."""
    if not 1 <= n_sub <= data.N:
        raise ValueError(f"subsample size must be in [1, {data.N}], got {n_sub}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(data.N, size=n_sub, replace=False))


def hac_init_models(
    data: Dataset,
    ks: Iterable[int],
    seed: int,
    n_sub: int,
    prior: DirichletPrior = DirichletPrior(),
) -> tuple[dict[int, MixtureModel], float]:
    """HAC starting models for several K from one agglomeration of one subsample.

    Returns the models and the agglomeration time in seconds.
    """
    ks = sorted(set(int(k) for k in ks))
    if ks[0] < 1:
        raise ValueError("K must be >= 1")
    if n_sub < ks[-1]:
        raise ValueError(f"subsample of {n_sub} cases cannot form {ks[-1]} clusters")
    sub = data.take(hac_subsample(data, n_sub, seed))
    result = run_hac(sub, ks[0])
    models = {}
    for k in ks:
        assign, _ = partition_from_merges(sub.N, result.merges, k)
        models[k] = map_estimate(SuffStats.from_assignments(sub, assign, k), prior)
    return models, result.seconds


def init_from_hac(
    data: Dataset, K: int, seed: int, n_sub: int, prior: DirichletPrior = DirichletPrior()
) -> MixtureModel:
    """MAP model from the K clusters found by HAC on a random subsample."""
    models, _ = hac_init_models(data, [K], seed, n_sub, prior)
    return models[K]


def initialize(data: Dataset, K: int, config: InitConfig, seed: int | None = None) -> MixtureModel:
    seed = config.seed if seed is None else seed
    if config.method == "random":
        return init_random(data.schema, K, seed)
    if config.method == "marginal":
        return init_marginal(data, K, seed, config.marginal_ess)
    return init_from_hac(data, K, seed, min(config.hac_subsample, data.N), config.hac_prior)
