"""Datasets, multinomial mixture models and their likelihoods.

A model is a naive-Bayes mixture: a class prior ``lam`` of length K and, for
every variable i, a ``(K, r_i)`` table of conditional value probabilities.
Everything is computed in natural log; bits-per-case is a reporting view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

LN2 = math.log(2.0)


class SchemaError(ValueError):
    """Data does not conform to a variable schema."""


@dataclass(frozen=True)
class VariableSchema:
    names: tuple[str, ...]
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "cardinalities", tuple(int(r) for r in self.cardinalities))
        if len(self.names) != len(self.cardinalities):
            raise SchemaError("names and cardinalities differ in length")
        if len(self.names) == 0:
            raise SchemaError("schema needs at least one variable")
        if min(self.cardinalities) < 2:
            raise SchemaError("every variable needs cardinality >= 2")

    @classmethod
    def binary(cls, n: int, prefix: str = "x") -> "VariableSchema":
        return cls(tuple(f"{prefix}{i}" for i in range(n)), (2,) * n)

    @property
    def n(self) -> int:
        return len(self.cardinalities)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start column of each variable in a flattened one-hot layout (length n+1)."""
        return np.concatenate([[0], np.cumsum(self.cardinalities)]).astype(np.int64)

    @property
    def total_values(self) -> int:
        return int(self.offsets[-1])

    def subset(self, columns: Sequence[int]) -> "VariableSchema":
        cols = list(columns)
        return VariableSchema(
            tuple(self.names[c] for c in cols), tuple(self.cardinalities[c] for c in cols)
        )


@dataclass(eq=False)
class Dataset:
    """N cases over the schema's variables, with optional true class labels."""

    schema: VariableSchema
    cases: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        cases = np.ascontiguousarray(self.cases, dtype=np.int64)
        if cases.ndim != 2 or cases.shape[1] != self.schema.n:
            raise SchemaError(
                f"cases must have shape (N, {self.schema.n}), got {cases.shape}"
            )
        card = np.asarray(self.schema.cardinalities)
        if cases.size and (cases.min() < 0 or np.any(cases >= card)):
            bad = np.argwhere((cases < 0) | (cases >= card))[0]
            raise SchemaError(
                f"value {cases[bad[0], bad[1]]} out of range for variable "
                f"{self.schema.names[bad[1]]!r} (case {bad[0]})"
            )
        cases.setflags(write=False)
        self.cases = cases
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (cases.shape[0],):
                raise SchemaError("labels must have one entry per case")
            labels.setflags(write=False)
            self.labels = labels

    @property
    def N(self) -> int:
        return self.cases.shape[0]

    @cached_property
    def design(self) -> np.ndarray:
        """Indicator matrix with one column per non-zero value of each variable.

        Value 0 of every variable is the reference level, so a binary dataset's
        design matrix is the data itself.
        """
        card = self.schema.cardinalities
        if all(r == 2 for r in card):
            out = self.cases.astype(np.float64)
        else:
            widths = [r - 1 for r in card]
            out = np.zeros((self.N, sum(widths)), dtype=np.float64)
            col = 0
            rows = np.arange(self.N)
            for i, w in enumerate(widths):
                x = self.cases[:, i]
                hit = x > 0
                out[rows[hit], col + x[hit] - 1] = 1.0
                col += w
        out.setflags(write=False)
        return out

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.schema, self.cases[rows], labels)

    def select_variables(self, columns: Sequence[int]) -> "Dataset":
        cols = list(columns)
        return Dataset(self.schema.subset(cols), self.cases[:, cols], self.labels)


@dataclass(frozen=True)
class DirichletPrior:
    """Symmetric Dirichlet hyperparameters; alpha = 1 everywhere gives ML estimation."""

    alpha_class: float = 2.0
    alpha_theta: float = 2.0

    def __post_init__(self):
        if self.alpha_class < 1 or self.alpha_theta < 1:
            raise ValueError("Dirichlet hyperparameters must be >= 1")

    @property
    def is_ml(self) -> bool:
        return self.alpha_class == 1 and self.alpha_theta == 1


ML_PRIOR = DirichletPrior(1.0, 1.0)


@dataclass(eq=False)
class MixtureModel:
    """Class prior ``lam`` (K,) and per-variable tables ``theta[i]`` of shape (K, r_i).

    ``theta[i][k]`` is P(X_i | class = k).
    """

    schema: VariableSchema
    lam: np.ndarray
    theta: list[np.ndarray]

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.theta = [np.asarray(t, dtype=np.float64) for t in self.theta]
        K = self.lam.shape[0]
        if self.lam.ndim != 1 or K < 1:
            raise ValueError("lam must be a non-empty vector")
        if len(self.theta) != self.schema.n:
            raise SchemaError("one theta table per variable required")
        for r, t in zip(self.schema.cardinalities, self.theta):
            if t.shape != (K, r):
                raise SchemaError(f"theta table shape {t.shape} != {(K, r)}")

    @property
    def K(self) -> int:
        return self.lam.shape[0]

    def table(self, k: int, i: int) -> np.ndarray:
        return self.theta[i][k]

    def validate(self, tol: float = 1e-9) -> None:
        if np.any(self.lam < 0) or abs(self.lam.sum() - 1.0) > tol:
            raise ValueError("class prior is not a probability vector")
        for i, t in enumerate(self.theta):
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > tol):
                raise ValueError(f"theta table for variable {i} is not row-stochastic")

    def log_joint(self, data: Dataset) -> np.ndarray:
        return log_joint(self, data)

    def copy(self) -> "MixtureModel":
        return MixtureModel(self.schema, self.lam.copy(), [t.copy() for t in self.theta])

    def equals(self, other: "MixtureModel") -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.lam, other.lam)
            and all(np.array_equal(a, b) for a, b in zip(self.theta, other.theta))
        )


@dataclass(eq=False)
class SuffStats:
    """Fractional per-cluster case mass and per-variable value counts."""

    schema: VariableSchema
    mass: np.ndarray
    counts: list[np.ndarray] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.mass.shape[0]

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def empty(self) -> np.ndarray:
        return self.mass <= 0

    @classmethod
    def from_assignments(cls, data: Dataset, assign: np.ndarray, K: int) -> "SuffStats":
        """Integer tallies for a hard partition of the cases."""
        assign = np.asarray(assign, dtype=np.int64)
        mass = np.bincount(assign, minlength=K).astype(np.float64)
        counts = []
        for i, r in enumerate(data.schema.cardinalities):
            flat = np.bincount(assign * r + data.cases[:, i], minlength=K * r)
            counts.append(flat.reshape(K, r).astype(np.float64))
        return cls(data.schema, mass, counts)

    def check(self, rtol: float = 1e-6) -> None:
        for i, c in enumerate(self.counts):
            if not np.allclose(c.sum(axis=1), self.mass, rtol=rtol, atol=1e-9):
                raise ValueError(f"counts for variable {i} do not sum to cluster mass")


def _safe_log(p: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """log(p) with zeros mapped to 0, plus the zero mask (None when there are none)."""
    zero = p == 0
    if not zero.any():
        return np.log(p), None
    with np.errstate(divide="ignore"):
        out = np.where(zero, 0.0, np.log(np.where(zero, 1.0, p)))
    return out, zero


def _check_schema(model: MixtureModel, data: Dataset) -> None:
    if model.schema.cardinalities != data.schema.cardinalities:
        raise SchemaError("model and dataset schemas differ")


def log_joint(model: MixtureModel, data: Dataset) -> np.ndarray:
    """(N, K) matrix of log(lam_k * prod_i theta[k][i][x_i]) for every case."""
    _check_schema(model, data)
    K = model.K
    base = np.zeros(K)
    weights = []
    zero_base = np.zeros(K)
    zero_weights = []
    any_zero = False
    for t in model.theta:
        lt, zero = _safe_log(t)
        base += lt[:, 0]
        weights.append(lt[:, 1:] - lt[:, :1])
        if zero is None:
            zero = np.zeros(t.shape, dtype=bool)
        else:
            any_zero = True
        z = zero.astype(np.float64)
        zero_base += z[:, 0]
        zero_weights.append(z[:, 1:] - z[:, :1])
    with np.errstate(divide="ignore"):
        log_lam = np.log(model.lam)
    X = data.design
    out = X @ np.concatenate(weights, axis=1).T
    out += base + log_lam
    if any_zero:
        hits = X @ np.concatenate(zero_weights, axis=1).T + zero_base
        out[hits > 0.5] = -np.inf
    return out


def log_joint_case(model: MixtureModel, case) -> np.ndarray:
    """Per-class log joint for one case, as an explicit sum of logs."""
    case = np.asarray(case, dtype=np.int64)
    if case.shape != (model.schema.n,):
        raise SchemaError(f"case must have {model.schema.n} values")
    out = np.empty(model.K)
    for k in range(model.K):
        with np.errstate(divide="ignore"):
            total = math.log(model.lam[k]) if model.lam[k] > 0 else -math.inf
            for i, v in enumerate(case):
                if not 0 <= v < model.schema.cardinalities[i]:
                    raise SchemaError(
                        f"value {v} out of range for variable {model.schema.names[i]!r}"
                    )
                p = model.theta[i][k, v]
                total += math.log(p) if p > 0 else -math.inf
        out[k] = total
    return out


def normalize_log_rows(lj: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Softmax each row of a log-joint matrix with max subtraction.

    Returns (posterior, per-row log normalizer, degenerate-row mask).  Rows whose
    entries are all -inf get a uniform posterior and a -inf normalizer.
    """
    lj = np.atleast_2d(lj)
    top = lj.max(axis=1)
    degenerate = ~np.isfinite(top)
    shift = np.where(degenerate, 0.0, top)
    with np.errstate(invalid="ignore"):
        w = np.exp(lj - shift[:, None])
    total = w.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        post = w / total[:, None]
        lognorm = shift + np.log(total)
    if degenerate.any():
        post[degenerate] = 1.0 / lj.shape[1]
        lognorm[degenerate] = -np.inf
    return post, lognorm, degenerate


def case_posterior(model: MixtureModel, case) -> tuple[np.ndarray, bool]:
    """Posterior class distribution of one case and whether it was degenerate."""
    post, _, degenerate = normalize_log_rows(log_joint_case(model, case)[None, :])
    return post[0], bool(degenerate[0])


def map_estimate(stats: SuffStats, prior: DirichletPrior = DirichletPrior()) -> MixtureModel:
    """MAP parameters under a symmetric Dirichlet prior (ML when alpha = 1).

    Clusters with zero mass under ML get uniform tables.
    """
    K = stats.K
    a_c = prior.alpha_class - 1.0
    a_t = prior.alpha_theta - 1.0
    total = stats.mass.sum() + K * a_c
    if total > 0:
        lam = (stats.mass + a_c) / total
    else:
        lam = np.full(K, 1.0 / K)
    theta = []
    for r, c in zip(stats.schema.cardinalities, stats.counts):
        denom = c.sum(axis=1, keepdims=True) + r * a_t
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (c + a_t) / denom
        dead = (denom[:, 0] <= 0)
        if dead.any():
            t[dead] = 1.0 / r
        theta.append(t)
    return MixtureModel(stats.schema, lam, theta)


def log_likelihood(model: MixtureModel, data: Dataset) -> float:
    """Total natural-log likelihood of the dataset under the mixture."""
    if data.N == 0:
        raise ValueError("log-likelihood of an empty dataset")
    _, lognorm, _ = normalize_log_rows(log_joint(model, data))
    return float(lognorm.sum())


def bits_per_case(total_nats: float, n_cases: int) -> float:
    return total_nats / (n_cases * LN2)


def log_prior_density(model: MixtureModel, prior: DirichletPrior) -> float:
    """Unnormalized symmetric-Dirichlet log density: sum of (alpha - 1) log p.

    The log normalizing constants are dropped, so alpha = 1 contributes exactly 0.
    A zero probability under alpha > 1 gives -inf.
    """
    total = 0.0
    for alpha, tables in ((prior.alpha_class, [model.lam]), (prior.alpha_theta, model.theta)):
        if alpha == 1:
            continue
        for t in tables:
            if np.any(t == 0):
                return -math.inf
            total += (alpha - 1.0) * float(np.log(t).sum())
    return total


def log_param_posterior(model: MixtureModel, data: Dataset, prior: DirichletPrior) -> float:
    """log-likelihood plus the unnormalized log prior density (the EM monitor)."""
    return log_likelihood(model, data) + log_prior_density(model, prior)
