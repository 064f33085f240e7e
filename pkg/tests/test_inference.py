import numpy as np
import pytest

from otmatch import inference as I
from otmatch.exceptions import InputError, NumericalError
from otmatch.measures import Dataset


def _mean(d):
    return float(d.outcome.mean())


def test_constant_data():
    d = Dataset(np.zeros((10, 1)), np.r_[np.zeros(5, int), np.ones(5, int)], np.ones(10))
    s = I.bootstrap(d, lambda x: float(x.outcome[x.treatment == 1].mean()
                                       - x.outcome[x.treatment == 0].mean()), 50, 3)
    assert s.sd == 0.0 and np.all(s.replicates == 0.0)


def test_clt_sanity():
    rng = np.random.default_rng(0)
    n = 400
    d = Dataset(np.zeros((n, 1)), np.zeros(n, int), rng.normal(size=n))
    s = I.bootstrap(d, _mean, 1000, 11)
    assert abs(s.sd * np.sqrt(n) - 1) < 0.2


def test_bitwise_reproducible():
    rng = np.random.default_rng(1)
    d = Dataset(rng.normal(size=(30, 1)), np.r_[np.zeros(20, int), np.ones(10, int)],
                rng.normal(size=30))
    a = I.bootstrap(d, _mean, 40, 99)
    b = I.bootstrap(d, _mean, 40, 99)
    assert a.replicates.tobytes() == b.replicates.tobytes()
    c = I.bootstrap(d, _mean, 40, 100)
    assert a.replicates.tobytes() != c.replicates.tobytes()


def test_order_independent_children():
    t = np.r_[np.zeros(7, int), np.ones(5, int)]
    later = I.resample_indices(t, 5, 17)
    for b in range(17):
        I.resample_indices(t, 5, b)
    np.testing.assert_array_equal(I.resample_indices(t, 5, 17), later)
    assert not np.array_equal(I.resample_indices(t, 5, 16), later)


def test_stratified_keeps_arm_sizes():
    t = np.r_[np.zeros(7, int), np.ones(5, int), np.full(3, 2)]
    for b in range(10):
        idx = I.resample_indices(t, 2, b)
        np.testing.assert_array_equal(np.bincount(t[idx]), [7, 5, 3])


def test_pooled_mode():
    t = np.r_[np.zeros(50, int), np.ones(50, int)]
    idx = I.resample_indices(t, 2, 0, "pooled")
    assert idx.shape == (100,) and np.all(np.diff(idx) >= 0)


def test_failure_budget():
    d = Dataset(np.zeros((10, 1)), np.r_[np.zeros(5, int), np.ones(5, int)], np.arange(10.0))
    calls = {"n": 0}

    def flaky(x):
        calls["n"] += 1
        if calls["n"] > 1 and calls["n"] % 2 == 0:
            raise NumericalError("boom")
        return float(x.outcome.mean())

    with pytest.raises(NumericalError):
        I.bootstrap(d, flaky, 20, 1)

    def rare(x):
        calls["n"] += 1
        return np.nan if calls["n"] % 10 == 0 else 1.0

    calls["n"] = 0
    s = I.bootstrap(d, rare, 20, 1)
    assert s.n_failed == 2 and s.replicates.size == 18


def test_interval_and_errors():
    rng = np.random.default_rng(2)
    d = Dataset(np.zeros((60, 1)), np.zeros(60, int), rng.normal(size=60))
    s = I.bootstrap(d, _mean, 200, 4, alpha=0.1)
    lo, hi = s.interval
    assert lo < d.outcome.mean() < hi
    assert np.mean((s.replicates >= lo) & (s.replicates <= hi)) == pytest.approx(0.9, abs=0.02)
    with pytest.raises(InputError):
        I.bootstrap(d, _mean, 1, 4)
    with pytest.raises(InputError):
        I.bootstrap(d, _mean, 10, 4, alpha=1.5)
    with pytest.raises(InputError):
        I.child_generator(-1, 0)
