import math

import numpy as np
import pytest

from loopsoup.brownian import (
    BrownianLoop,
    BrownianSoupConfig,
    PlaneDomain,
    conformal_transport,
    dump_brownian_soup,
    killing_functional,
    load_brownian_soup,
    mass_transport,
    propose_loops,
    sample_brownian_soup,
    standard_bridge,
    thin_to_massive_brownian,
)

UNIT = {"rectangle": {"x0": 0, "y0": 0, "x1": 1, "y1": 1}}


def test_bridge_endpoints_and_variance():
    rng = np.random.default_rng(0)
    B = standard_bridge(64, rng, size=20_000)
    assert np.all(B[:, 0] == 0) and np.all(B[:, -1] == 0)
    # Var B_{1/2} = 1/4 per coordinate
    v = B[:, 32, 0].var()
    assert abs(v - 0.25) < 4 * 0.25 * math.sqrt(2 / len(B))


def test_proposal_count_and_duration_law():
    cfg = BrownianSoupConfig(domain=UNIT, lam=1.0, t0=0.1)
    assert math.isclose(cfg.expected_count(), 10 / (2 * math.pi))
    rng = np.random.default_rng(1)
    counts, durs = [], []
    for _ in range(4000):
        roots, d, marks = propose_loops(cfg, rng)
        counts.append(len(d))
        durs.append(d)
    counts = np.array(counts)
    durs = np.concatenate(durs)
    assert abs(counts.mean() - cfg.expected_count()) < 4 * math.sqrt(cfg.expected_count() / len(counts))
    p = (durs > 0.2).mean()
    assert abs(p - 0.5) < 4 * 0.5 / math.sqrt(len(durs))
    assert durs.min() >= 0.1


def test_finite_duration_cutoff():
    cfg = BrownianSoupConfig(domain=UNIT, lam=2.0, t0=0.1, t_max=0.4)
    _, d, _ = propose_loops(cfg, np.random.default_rng(2))
    assert np.all((d >= 0.1) & (d <= 0.4))
    with pytest.raises(ValueError):
        BrownianSoupConfig(domain=UNIT, lam=1.0, t0=0.5, t_max=0.4)


def test_config_validation():
    for kw in ({"lam": 0.0, "t0": 0.1}, {"lam": 1.0, "t0": 0.0}, {"lam": 1.0, "t0": 0.1, "h": -1}):
        with pytest.raises(ValueError):
            BrownianSoupConfig(domain=UNIT, **kw)


def test_resolution_rule():
    cfg = BrownianSoupConfig(domain=UNIT, lam=1.0, t0=0.01, h=0.01, M_max=1000)
    assert list(cfg.resolution([0.001, 0.05, 1.0])) == [64, 500, 1000]


def test_restriction_keeps_inside_only():
    dom = {"disc": {"cx": 0, "cy": 0, "r": 1}}
    cfg = BrownianSoupConfig(domain=dom, lam=1.0, t0=0.02, h=0.05, seed=3)
    soup = sample_brownian_soup(cfg)
    assert 0 < len(soup) < soup.proposed
    pd = PlaneDomain.from_spec(dom)
    assert all(pd.contains(l.path).all() for l in soup.loops)


def test_replicas_reproducible():
    cfg = BrownianSoupConfig(domain=UNIT, lam=1.0, t0=0.05, seed=7)
    a, b = sample_brownian_soup(cfg, 2), sample_brownian_soup(cfg, 2)
    assert np.array_equal(a.durations, b.durations)
    assert not np.array_equal(a.durations, sample_brownian_soup(cfg, 3).durations)


def test_killing_functional_constant_mass():
    loop = BrownianLoop(root=np.zeros(2), duration=0.3, path=standard_bridge(100, np.random.default_rng(0)) * 0.5)
    assert math.isclose(killing_functional(loop, 2.0), 4 * 0.3)
    assert killing_functional(loop, None) == 0.0


def test_thinning_monotone_and_survival():
    cfg = BrownianSoupConfig(domain=UNIT, lam=5.0, t0=0.01, seed=4)
    soup = sample_brownian_soup(cfg)
    light = thin_to_massive_brownian(soup, 1.0)
    heavy = thin_to_massive_brownian(soup, 3.0)
    ids = lambda s: {id(l) for l in s.loops}
    assert ids(heavy) <= ids(light) <= ids(soup)
    assert thin_to_massive_brownian(soup, 0.0).loops == soup.loops
    surv = np.exp(-soup.durations)
    assert abs(len(light) - surv.sum()) < 5 * math.sqrt(surv.sum())


def test_scaling_map_quadruples_duration():
    loop = BrownianLoop(root=np.zeros(2), duration=0.2, path=standard_bridge(64, np.random.default_rng(1)) * math.sqrt(0.2))
    img = conformal_transport(loop, lambda z: 2 * z, lambda z: 2 + 0 * z)
    assert math.isclose(img.duration, 0.8)
    assert np.allclose(img.path, 2 * loop.path)


def test_square_map_time_change():
    rng = np.random.default_rng(5)
    path = np.array([1.0, 0.0]) + 1e-3 * standard_bridge(200, rng)
    loop = BrownianLoop(root=path[0], duration=1e-6, path=path)
    img = conformal_transport(loop, lambda z: z**2 / 2, lambda z: z)
    assert abs(img.duration / loop.duration - 1) < 1e-2
    with pytest.raises(ValueError):
        conformal_transport(BrownianLoop(np.zeros(2), 1.0, np.zeros((3, 2))), lambda z: z**2, lambda z: 2 * z)


def test_mass_transport():
    mt = mass_transport(1.0, lambda w: w / 2, lambda z: 2 + 0 * z)
    assert np.allclose(mt(np.array([0.3, 1.0]), np.array([0.1, 0.4])), 0.5)
    m = lambda x, y: 1 + x
    mt = mass_transport(m, lambda w: w / 2, lambda z: 2 + 0 * z)
    assert math.isclose(float(mt(2.0, 0.0)), 1.0)


def test_dump_roundtrip(tmp_path):
    cfg = BrownianSoupConfig(domain=UNIT, lam=1.0, t0=0.05, seed=2)
    soup = sample_brownian_soup(cfg)
    path = tmp_path / "b.json"
    dump_brownian_soup(soup, str(path))
    back = load_brownian_soup(str(path))
    assert len(back) == len(soup) and back.proposed == soup.proposed
    for a, b in zip(soup.loops, back.loops):
        assert np.array_equal(a.path, b.path) and a.mark == b.mark
