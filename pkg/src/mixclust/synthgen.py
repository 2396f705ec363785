"""Synthetic clickstream-like data: a 10-class naive-Bayes model over binary
"story hit" variables, made more complex than naive Bayes by parent arcs
between observed variables, followed by discarding the rarest variables.

Hit log-odds for variable i under class k and parent configuration c is

    logit(p_i) + eps[k, i] + delta[i][k, c]

with Zipf marginals p_i, eps ~ N(class_noise_mean[k], class_noise_var) and
delta ~ N(0, arc_noise).  Noise magnitudes are variances unless
``noise_scale == "stddev"``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .core import Dataset, VariableSchema
from .init import derive_seed

CLASS_PRIOR = (0.25, 0.18, 0.18, 0.09, 0.09, 0.09, 0.045, 0.035, 0.025, 0.015)
CLASS_NOISE_MEANS = (-0.5, -0.5, -0.5, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0)

# sub-seed stream ids
_GEN, _TRAIN, _TEST = 0, 1, 2


@dataclass(frozen=True)
class GenConfig:
    n_total: int = 300
    n_keep: int = 150
    train_n: int = 32000
    test_n: int = 8000
    zipf_exponent: float = 1.0
    p_max: float = 0.5
    p_min: float = 0.005
    class_prior: tuple[float, ...] = CLASS_PRIOR
    class_noise_means: tuple[float, ...] = CLASS_NOISE_MEANS
    class_noise: float = 1.0
    arc_noise: float = 0.25
    noise_scale: str = "variance"
    parent_count_probs: tuple[float, ...] = (0.35, 0.30, 0.35)
    seed: int = 0

    def __post_init__(self):
        if self.n_keep > self.n_total:
            raise ValueError("n_keep cannot exceed n_total")
        if not 0 < self.p_min <= self.p_max < 1:
            raise ValueError("need 0 < p_min <= p_max < 1")
        if len(self.class_noise_means) != len(self.class_prior):
            raise ValueError("one noise mean per class required")
        if abs(sum(self.class_prior) - 1.0) > 1e-12:
            raise ValueError("class prior must sum to 1")
        if self.noise_scale not in ("variance", "stddev"):
            raise ValueError("noise_scale must be 'variance' or 'stddev'")
        if len(self.parent_count_probs) > 3:
            raise ValueError("at most three parents per variable")

    def std(self, magnitude: float) -> float:
        return math.sqrt(magnitude) if self.noise_scale == "variance" else magnitude

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class GeneratorModel:
    """Class prior, per-(class, variable) base log-odds, parent sets and arc offsets.

    ``offsets[i]`` has shape (K, 2**len(parents[i])); parent configuration c has
    bit b set when parent ``parents[i][b]`` is a hit.
    """

    lam: np.ndarray
    marginals: np.ndarray
    base_logodds: np.ndarray
    parents: list[np.ndarray]
    offsets: list[np.ndarray]
    seed: int

    @property
    def K(self) -> int:
        return self.lam.shape[0]

    @property
    def n(self) -> int:
        return self.base_logodds.shape[1]

    def packed(self):
        """Flat arrays for the compiled kernels."""
        n = self.n
        par = np.full((n, 3), -1, dtype=np.int64)
        npar = np.zeros(n, dtype=np.int64)
        start = np.zeros(n, dtype=np.int64)
        flat = []
        pos = 0
        for i, (p, o) in enumerate(zip(self.parents, self.offsets)):
            npar[i] = len(p)
            par[i, : len(p)] = p
            start[i] = pos
            flat.append(o.ravel())
            pos += o.size
        return par, npar, start, np.concatenate(flat)


def zipf_marginals(config: GenConfig) -> np.ndarray:
    """p_i = p_max / i**s for i = 1..n_total, floored at p_min."""
    ranks = np.arange(1, config.n_total + 1, dtype=np.float64)
    return np.maximum(config.p_max / ranks**config.zipf_exponent, config.p_min)


def build_generator(config: GenConfig) -> GeneratorModel:
    rng = np.random.default_rng(derive_seed(config.seed, _GEN))
    K = len(config.class_prior)
    n = config.n_total
    p = zipf_marginals(config)
    logit = np.log(p) - np.log1p(-p)
    means = np.asarray(config.class_noise_means)[:, None]
    eps = rng.normal(0.0, 1.0, size=(K, n)) * config.std(config.class_noise) + means
    base = logit[None, :] + eps
    counts = rng.choice(
        np.arange(1, len(config.parent_count_probs) + 1), size=n, p=config.parent_count_probs
    )
    parents = []
    for i in range(n):
        c = min(int(counts[i]), i)
        parents.append(np.sort(rng.choice(i, size=c, replace=False)) if c else np.zeros(0, np.int64))
    arc_std = config.std(config.arc_noise)
    offsets = [rng.normal(0.0, arc_std, size=(K, 2 ** len(pa))) for pa in parents]
    return GeneratorModel(
        np.asarray(config.class_prior, dtype=np.float64), p, base, parents, offsets, config.seed
    )


def _configs(x: np.ndarray, parents: np.ndarray) -> np.ndarray:
    cfg = np.zeros(x.shape[0], dtype=np.int64)
    for b, pa in enumerate(parents):
        cfg |= x[:, pa].astype(np.int64) << b
    return cfg


def sample_cases(gen: GeneratorModel, count: int, seed: int) -> Dataset:
    """Draw cases over all generator variables, with their true class labels.

    Classes are drawn first, then one uniform per case for each variable in
    index order.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(gen.K, size=count, p=gen.lam)
    x = np.zeros((count, gen.n), dtype=np.int64)
    for i in range(gen.n):
        z = gen.base_logodds[labels, i] + gen.offsets[i][labels, _configs(x, gen.parents[i])]
        u = rng.random(count)
        x[:, i] = u < 1.0 / (1.0 + np.exp(-z))
    return Dataset(VariableSchema.binary(gen.n, prefix="story"), x, labels)


def retained_variables(data: Dataset, n_keep: int) -> np.ndarray:
    """Indices of the n_keep most-hit variables (ties to lower index), ascending."""
    if n_keep > data.schema.n:
        raise ValueError("n_keep exceeds the number of variables")
    hits = (data.cases > 0).sum(axis=0)
    order = np.lexsort((np.arange(data.schema.n), -hits))
    return np.sort(order[:n_keep])


def discard_rare(data: Dataset, n_keep: int) -> Dataset:
    return data.select_variables(retained_variables(data, n_keep))


@dataclass
class SyntheticData:
    config: GenConfig
    generator: GeneratorModel
    retained: np.ndarray
    train: Dataset
    test: Dataset


def generate(config: GenConfig = GenConfig()) -> SyntheticData:
    """Build the generator, sample train and test sets, keep the top variables by train hits."""
    gen = build_generator(config)
    train_full = sample_cases(gen, config.train_n, derive_seed(config.seed, _TRAIN))
    test_full = sample_cases(gen, config.test_n, derive_seed(config.seed, _TEST))
    keep = retained_variables(train_full, config.n_keep)
    return SyntheticData(config, gen, keep, train_full.select_variables(keep), test_full.select_variables(keep))


@njit(cache=True)
def _log_sigmoid(z):
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


@njit(cache=True)
def _lw_log_joint(obs, det_vars, mc_vars, hidden, lam, base, par, npar, start, flat, n_samples, seed):
    np.random.seed(seed)
    N = obs.shape[0]
    K = lam.shape[0]
    out = np.empty((N, K))
    state = np.zeros(obs.shape[1], dtype=np.int64)
    logw = np.empty(n_samples)
    for j in range(N):
        for k in range(K):
            det = math.log(lam[k])
            for t in range(det_vars.shape[0]):
                i = det_vars[t]
                cfg = 0
                for b in range(npar[i]):
                    cfg |= obs[j, par[i, b]] << b
                z = base[k, i] + flat[start[i] + k * (1 << npar[i]) + cfg]
                det += _log_sigmoid(z) if obs[j, i] == 1 else _log_sigmoid(-z)
            if mc_vars.shape[0] == 0:
                out[j, k] = det
                continue
            for i in range(obs.shape[1]):
                state[i] = obs[j, i]
            for s in range(n_samples):
                w = 0.0
                for t in range(mc_vars.shape[0]):
                    i = mc_vars[t]
                    cfg = 0
                    for b in range(npar[i]):
                        cfg |= state[par[i, b]] << b
                    z = base[k, i] + flat[start[i] + k * (1 << npar[i]) + cfg]
                    if hidden[i]:
                        state[i] = 1 if np.random.random() < 1.0 / (1.0 + math.exp(-z)) else 0
                    elif state[i] == 1:
                        w += _log_sigmoid(z)
                    else:
                        w += _log_sigmoid(-z)
                logw[s] = w
            top = logw.max()
            acc = 0.0
            for s in range(n_samples):
                acc += math.exp(logw[s] - top)
            out[j, k] = det + top + math.log(acc / n_samples)
    return out


class ObservedGenerator:
    """The generator seen through its retained variables.

    ``log_joint`` gives log(lam_k P(x_obs | k)).  Hidden variables that are
    ancestors of observed ones are integrated out by likelihood weighting with
    ``n_samples`` draws per (case, class); other hidden variables drop out
    exactly.  With no hidden ancestors the result is exact.
    """

    def __init__(self, gen: GeneratorModel, retained, n_samples: int = 64, seed: int = 0):
        self.gen = gen
        self.retained = np.asarray(retained, dtype=np.int64)
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        observed = np.zeros(gen.n, dtype=bool)
        observed[self.retained] = True
        relevant = observed.copy()
        for i in range(gen.n - 1, -1, -1):
            if relevant[i]:
                relevant[gen.parents[i]] = True
        hidden = relevant & ~observed
        det, mc = [], []
        for i in np.flatnonzero(relevant):
            if observed[i] and not hidden[gen.parents[i]].any():
                det.append(i)
            else:
                mc.append(i)
        self.hidden = hidden
        self.det_vars = np.asarray(det, dtype=np.int64)
        self.mc_vars = np.asarray(mc, dtype=np.int64)
        self._packed = gen.packed()

    @property
    def K(self) -> int:
        return self.gen.K

    @property
    def n_hidden_ancestors(self) -> int:
        return int(self.hidden.sum())

    def log_joint(self, data: Dataset) -> np.ndarray:
        if data.schema.n != self.retained.shape[0]:
            raise ValueError("dataset does not match the retained variables")
        obs = np.zeros((data.N, self.gen.n), dtype=np.int64)
        obs[:, self.retained] = data.cases
        par, npar, start, flat = self._packed
        return _lw_log_joint(
            obs, self.det_vars, self.mc_vars, self.hidden, self.gen.lam, self.gen.base_logodds,
            par, npar, start, flat, self.n_samples, self.seed,
        )
