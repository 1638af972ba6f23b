import math

import numpy as np
import pytest
import scipy.stats

from loopsoup import stats


def test_poisson_gof_accepts_poisson_and_rejects_shift():
    rng = np.random.default_rng(0)
    c = rng.poisson(2.0, size=20_000)
    r = stats.poisson_gof(c, 2.0)
    assert r.pvalue > 0.001 and r.df >= 4
    assert stats.poisson_gof(c, 2.2).pvalue < 1e-6


def test_poisson_gof_merges_tail():
    c = np.random.default_rng(1).poisson(0.2, size=100)
    r = stats.poisson_gof(c, 0.2)
    assert r.df == 1
    with pytest.raises(ValueError):
        stats.poisson_gof(np.zeros(100, int), 0.001)
    with pytest.raises(ValueError):
        stats.poisson_gof(np.zeros(10, int), 1.0)


def test_ks_wrappers():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=3000), rng.normal(size=3000)
    assert stats.two_sample_ks(a, b).pvalue > 0.001
    assert stats.two_sample_ks(a, b + 0.3).pvalue < 1e-6
    assert stats.one_sample_ks(a, scipy.stats.norm.cdf).pvalue > 0.001
    with pytest.raises(ValueError):
        stats.two_sample_ks(a[:5], b)


def test_stderr_and_contrast():
    x = np.arange(100.0)
    assert math.isclose(stats.stderr(x), x.std(ddof=1) / 10)
    m, se = stats.mean_se(x)
    assert m == 49.5
    ok, z = stats.contrast(0.0, 1.0, 5.0, 0.0)
    assert ok and z == 5.0
    assert not stats.contrast(0.0, 1.0, 2.0, 1.0)[0]
    assert stats.within(1.05, 1.0, 0.1) and not stats.within(1.2, 1.0, 0.1)
