import math

import numpy as np
import pytest
import scipy.stats

from loopsoup.gff import sample_gff
from loopsoup.lattice import green_function, precision_matrix
from loopsoup.loops import UnrootedLoop
from loopsoup.occupation import (
    laplace_exact,
    laplace_mc,
    occupation_field,
    occupation_time,
    read_field_csv,
    write_field_csv,
)
from loopsoup.soup import sample_critical_soup, sample_soups


def test_occupation_time_two_step(two_site, rng):
    loop = UnrootedLoop([(0, 0), (1, 0)])
    T = np.array([occupation_time(loop, two_site, 0.0, rng) for _ in range(100_000)])
    assert abs(T[:, 0].mean() - 0.25) < 4 * T[:, 0].std() / math.sqrt(len(T))


def test_occupation_time_untouched_and_double_visit(square3, rng):
    loop = UnrootedLoop([(0, 0), (1, 0), (0, 0), (0, 1)])
    T = np.array([occupation_time(loop, square3, 0.0, rng) for _ in range(20_000)])
    assert np.all(T[:, square3.index((2, 2))] == 0)
    p = scipy.stats.kstest(T[:, square3.index((0, 0))], scipy.stats.gamma(2, scale=0.25).cdf).pvalue
    assert p > 0.001


def test_single_site_field_is_half_gamma(one_site):
    soup = sample_soups(one_site, 0.5, 2, seed=1, replicas=100_000)
    L = occupation_field(soup, seed=1)[:, 0]
    assert scipy.stats.kstest(2 * L, scipy.stats.gamma(0.5, scale=0.5).cdf).pvalue > 0.01


def test_mean_field_two_site(two_site):
    soup = sample_soups(two_site, 0.5, 40, seed=2, replicas=100_000)
    L = occupation_field(soup, seed=2)
    se = L.std(axis=0, ddof=1) / math.sqrt(len(L))
    assert np.all(np.abs(L.mean(axis=0) - 2 / 15) < 4 * se)


def test_empty_soup_gives_base_only(square3):
    soup = sample_soups(square3, 1e-12, 8, seed=0, replicas=10)
    L = occupation_field(soup, seed=0)
    from loopsoup.occupation import draw_occupation

    assert np.array_equal(L, draw_occupation(soup, 0).base)


def test_keep_mask_reuses_holding_times(square3):
    soup = sample_soups(square3, 0.5, 20, seed=3, replicas=500)
    full = occupation_field(soup, seed=3)
    none = occupation_field(soup, seed=3, keep=np.zeros(len(soup), bool))
    assert np.all(full >= none)


def test_realization_field(square3):
    real = sample_critical_soup(square3, 0.5, 12, seed=0)
    L = occupation_field(real, rng=np.random.default_rng(0))
    assert L.shape == (square3.n,) and np.all(L > 0)


def test_laplace_mc_rules(one_site):
    assert laplace_mc(np.ones((1000, 1)), 0.0) == (1.0, 0.0)
    with pytest.raises(ValueError):
        laplace_mc(np.ones((10, 1)), 1.0)


def test_laplace_single_and_two_site(one_site, two_site):
    assert math.isclose(laplace_exact(precision_matrix(one_site), 1.0), math.sqrt(4 / 5))
    assert math.isclose(laplace_exact(precision_matrix(two_site), 1.0), math.sqrt(15 / 24))
    assert laplace_exact(precision_matrix(two_site), 0.0) == 1.0
    for dom, exact in ((one_site, math.sqrt(4 / 5)), (two_site, math.sqrt(15 / 24))):
        soup = sample_soups(dom, 0.5, 40, seed=4, replicas=100_000)
        est, se = laplace_mc(occupation_field(soup, seed=4), 1.0)
        assert abs(est - exact) < 3 * se + 0.5 * 1e-10


def test_laplace_exact_matches_gaussian(square3):
    A = precision_matrix(square3)
    phi = sample_gff(green_function(A), 5, size=200_000)
    vals = np.exp(-0.5 * (phi**2).sum(axis=1))
    assert abs(vals.mean() - laplace_exact(A, 1.0)) < 3 * vals.std() / math.sqrt(len(vals))


def test_laplace_exact_rejects_indefinite(two_site):
    with pytest.raises(ValueError):
        laplace_exact(precision_matrix(two_site), -10.0)


def test_field_csv_roundtrip(square3, tmp_path):
    soup = sample_soups(square3, 0.5, 12, seed=0, replicas=3)
    L = occupation_field(soup, seed=0)
    path = tmp_path / "L.csv"
    write_field_csv(str(path), square3, L)
    assert np.array_equal(read_field_csv(str(path), square3), L)
