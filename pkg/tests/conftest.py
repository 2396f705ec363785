import numpy as np
import pytest

from mixclust.core import Dataset, MixtureModel, VariableSchema


def random_schema(rng, n_max=5, r_max=4):
    n = int(rng.integers(1, n_max + 1))
    card = [int(r) for r in rng.integers(2, r_max + 1, size=n)]
    return VariableSchema([f"v{i}" for i in range(n)], card)


def random_model(rng, schema, K):
    lam = rng.dirichlet(np.ones(K))
    theta = [rng.dirichlet(np.ones(r), size=K) for r in schema.cardinalities]
    return MixtureModel(schema, lam, theta)


def random_dataset(rng, schema, N):
    cases = np.stack([rng.integers(0, r, size=N) for r in schema.cardinalities], axis=1)
    return Dataset(schema, cases)


def sample_from(model, N, rng):
    """Cases and labels drawn from a mixture model."""
    labels = rng.choice(model.K, size=N, p=model.lam)
    cols = []
    for t in model.theta:
        u = rng.random(N)
        cols.append((u[:, None] > np.cumsum(t[labels], axis=1)).sum(axis=1))
    cases = np.minimum(np.stack(cols, axis=1), np.asarray(model.schema.cardinalities) - 1)
    return Dataset(model.schema, cases, labels)


def planted(N=200, n=6, seed=0, flip=0.0):
    """Two clusters of binary cases: all zeros and all ones (optionally noisy)."""
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], [N // 2, N - N // 2])
    cases = np.repeat(labels[:, None], n, axis=1)
    if flip:
        cases = cases ^ (rng.random(cases.shape) < flip)
    perm = rng.permutation(N)
    return Dataset(VariableSchema.binary(n), cases[perm], labels[perm])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
