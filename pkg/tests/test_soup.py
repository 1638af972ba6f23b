import math

import numpy as np
import pytest

from loopsoup.lattice import killing_from_mass, rectangle, transition_kernel
from loopsoup.loops import UnrootedLoop, enumerate_loops, kernel_powers, total_mass, truncation_tail
from loopsoup.soup import (
    dump_soup,
    intensity_table,
    layered_soup,
    loop_diameter,
    load_soup,
    plane_return_probability,
    rescale_soup,
    sample_bridge,
    sample_critical_soup,
    sample_massive_soup,
    sample_plane_walk_soup,
    sample_soups,
    thin_to_massive,
    thinned_intensity_table,
)


def test_two_step_counts_poisson_mean(two_site):
    soup = sample_soups(two_site, 1.0, 2, seed=3, replicas=100_000)
    c = soup.counts()
    assert abs(c.mean() - 1 / 16) < 4 * c.std(ddof=1) / math.sqrt(len(c))
    assert np.all(soup.length == 2)


def test_total_count_matches_mass(square3):
    lam, maxlen = 0.7, 16
    soup = sample_soups(square3, lam, maxlen, seed=5, replicas=20_000)
    P = transition_kernel(square3)
    expect = lam * (total_mass(P) - truncation_tail(P, maxlen))
    c = soup.counts()
    assert abs(c.mean() - expect) < 4 * c.std(ddof=1) / math.sqrt(len(c))


def test_soup_loops_valid(square3):
    soup = sample_soups(square3, 1.0, 12, seed=1, replicas=200)
    assert soup.length.max() <= 12
    for i in range(min(len(soup), 300)):
        sites = square3.sites[soup.loop_sites(i)]
        UnrootedLoop(sites)  # nearest-neighbour closed walk or raises


def test_small_intensity_gives_empty_soups(square3):
    soup = sample_soups(square3, 1e-9, 8, seed=0, replicas=1000)
    assert len(soup) == 0


def test_bridge_class_frequencies(square3):
    # 4-step loops rooted at the centre, compared with their rooted weights
    P = transition_kernel(square3)
    powers = kernel_powers(P, 4)
    rng = np.random.default_rng(7)
    x = square3.index((1, 1))
    n = 40_000
    seen = {}
    for _ in range(n):
        loop = sample_bridge(x, 4, P, square3, rng, powers)
        seen[loop.steps] = seen.get(loop.steps, 0) + 1
    q4 = powers[4][x, x]
    for steps, cnt in seen.items():
        p = np.prod([P[square3.index(a), square3.index(b)] for a, b in zip(steps, steps[1:])]) / q4
        assert abs(cnt / n - p) < 4 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_bridge_two_site_unique(two_site):
    P = transition_kernel(two_site)
    loop = sample_bridge(0, 2, P, two_site, np.random.default_rng(0))
    assert loop.steps == ((0, 0), (1, 0), (0, 0))


def test_bridge_zero_return_probability(one_site):
    with pytest.raises(ValueError):
        sample_bridge(0, 2, transition_kernel(one_site), one_site, np.random.default_rng(0))


def test_intensity_tables_agree(square3):
    for m in (0.2, 0.7):
        a = thinned_intensity_table(transition_kernel(square3), m, 0.5, 16)
        b = intensity_table(transition_kernel(square3, killing_from_mass(square3, m)), 0.5, 16)
        assert np.abs(a - b).max() < 1e-12


def test_thinning(two_site):
    soup = sample_soups(two_site, 1.0, 8, seed=11, replicas=100_000)
    assert len(thin_to_massive(soup, 0.0)) == len(soup)
    assert len(thin_to_massive(soup, 20.0)) == 0
    th = thin_to_massive(soup, math.sqrt(0.5))
    n0, n1 = np.sum(soup.length == 2), np.sum(th.length == 2)
    p = math.exp(-1)
    assert abs(n1 / n0 - p) < 4 * math.sqrt(p * (1 - p) / n0)
    with pytest.raises(ValueError):
        thin_to_massive(th, 0.1)


def test_thinning_realization(square3):
    real = sample_critical_soup(square3, 2.0, 12, seed=2)
    assert len(thin_to_massive(real, 0.0)) == len(real)
    m = sample_massive_soup(square3, 2.0, 12, seed=2, m=0.5)
    assert np.allclose(m.killing, killing_from_mass(square3, 0.5))


def test_layered_soup_monotone(square3):
    lo, hi = layered_soup(square3, [0.5, 1.0], 10, seed=4, replicas=5000)
    assert np.all(hi.counts() >= lo.counts())
    for r in range(20):
        a = sorted(l.canonical for l in lo.realization(r).loops)
        b = [l.canonical for l in hi.realization(r).loops]
        for l in a:
            assert l in b
    diff = hi.counts() - lo.counts()
    P = transition_kernel(square3)
    expect = 0.5 * (total_mass(P) - truncation_tail(P, 10))
    assert abs(diff.mean() - expect) < 4 * diff.std(ddof=1) / math.sqrt(len(diff))
    with pytest.raises(ValueError):
        layered_soup(square3, [1.0, 0.5], 10, seed=0)


def test_worker_count_does_not_change_output(square3):
    a = sample_soups(square3, 0.5, 12, seed=9, replicas=5000, workers=1)
    b = sample_soups(square3, 0.5, 12, seed=9, replicas=5000, workers=2)
    assert np.array_equal(a.sites, b.sites) and np.array_equal(a.marks, b.marks)
    assert dump_soup(a) == dump_soup(b)


def test_soup_validation(square3):
    with pytest.raises(ValueError):
        sample_soups(square3, -1.0, 8, seed=0)
    with pytest.raises(ValueError):
        sample_soups(square3, 1.0, 7, seed=0)
    with pytest.raises(ValueError):
        sample_soups(square3, 1.0, 8, seed=0, replicas=0)


def test_dump_roundtrip(square3, tmp_path):
    soup = sample_soups(square3, 1.0, 10, seed=1, replicas=50)
    path = tmp_path / "soup.json"
    dump_soup(soup, str(path))
    back = load_soup(str(path))
    assert back.n_replicas == soup.n_replicas
    for r in range(50):
        a = sorted(l.canonical for l in soup.realization(r).loops)
        b = sorted(l.canonical for l in back.realization(r).loops)
        assert a == b


def test_rescale():
    d = rectangle(0, 0, 3, 3)
    real = sample_critical_soup(d, 3.0, 8, seed=0)
    loops = rescale_soup(real, 2)
    for l, orig in zip(loops, real.loops):
        assert l.duration == len(orig) / 8
        assert math.isclose(l.diameter, loop_diameter(np.array(orig.canonical)) / 2, abs_tol=1e-12)
    eight = [l for l in loops if len(l.points) == 9]
    for l in eight:
        assert l.duration == 1.0
        assert np.allclose(np.abs(np.diff(l.points, axis=0)).sum(axis=1), 0.5)


def test_plane_return_probability():
    assert np.isclose(plane_return_probability(1), 1 / 4)
    assert np.isclose(plane_return_probability(2), (6 / 16) ** 2)


def test_plane_walk_soup_inside_box():
    s = sample_plane_walk_soup((0, 0, 1, 1), 8, 1.0, 0.1, 1.0, seed=0, replicas=200)
    assert np.all((s.points > 0) & (s.points < 1))
    assert np.all(s.duration >= 0.1) and np.all(s.duration <= 1.0)
