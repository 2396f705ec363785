import numpy as np
import pytest

from conftest import planted
from mixclust.core import Dataset, VariableSchema
from mixclust.experiments import (
    PRESETS,
    Condition,
    RunRecord,
    loglog_slope,
    preset,
    run_bench,
    summarize,
    training_subset,
)


def test_training_subset():
    d = Dataset(VariableSchema.binary(7), (np.arange(100)[:, None] >> np.arange(7)) & 1)
    a, b = training_subset(d, 30, 5), training_subset(d, 30, 5)
    np.testing.assert_array_equal(a.cases, b.cases)
    assert a.N == 30 and len({tuple(r) for r in a.cases.tolist()}) == 30
    assert not np.array_equal(training_subset(d, 30, 6).cases, a.cases)
    assert training_subset(d, 200, 0) is d


def test_presets():
    for name in PRESETS:
        conds = preset(name)
        assert len({c.name for c in conds}) == len(conds)
    assert len(preset("init-comparison")) == 6
    assert all(c.k_min == c.k_max == 10 for c in preset("subsample-size"))
    with pytest.raises(ValueError):
        preset("table9")


def test_slope_of_power_law():
    n = np.array([500, 1000, 2000, 4000])
    assert loglog_slope(n, 3e-7 * n**2.0) == pytest.approx(2.0)


def test_bench_records_failures():
    d = planted(N=60, n=4, seed=1)
    conds = [Condition("ok", k_min=1, k_max=3), Condition("bad", init="hac", hac_subsample=2, k_min=3, k_max=3)]
    res = run_bench(d, d, conds, [1, 0])
    assert [(r.condition, r.seed) for r in res.records] == [("ok", 0), ("ok", 1)]
    assert [(name, seed) for name, seed, _ in res.failures] == [("bad", 0), ("bad", 1)]
    rows = summarize(res.records)
    assert rows[0]["k_star"] == (2.0, 0.0)


def test_negative_timing_rejected():
    with pytest.raises(ValueError):
        RunRecord("c", 0, -1.0, 1, 1, -1.0, 1.0, -0.1, 0.0, 0.0, 0.0, 1)
