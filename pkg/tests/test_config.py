import numpy as np
import pytest

from loopsoup.config import ConfigError, RunConfig, dump_config, load_config, parse_mass


def test_parse_mass():
    assert parse_mass(None) is None
    assert parse_mass(2) == 2.0
    m = parse_mass("sqrt(x**2 + y**2) + 1")
    assert np.allclose(m(np.array([3.0]), np.array([4.0])), 6.0)
    assert m(0.0, 0.0).shape == ()


@pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "z + 1", "open(x)", "x +", -1, [1]])
def test_parse_mass_rejects(bad):
    with pytest.raises(ConfigError):
        parse_mass(bad)


def test_roundtrip(tmp_path):
    cfg = RunConfig(experiment="laplace-identity", domain={"rectangle": {"x0": 0, "y0": 0, "x1": 2, "y1": 2}},
                    lam=0.5, mass="1 + x", cutoffs={"maxlen": 20}, replicas=100, seed=3)
    p = tmp_path / "c.yaml"
    dump_config(cfg, str(p))
    assert load_config(str(p)) == cfg
    assert load_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("kw", [
    {"replicas": 0}, {"seed": -1}, {"workers": 0}, {"lam": 0.0}, {"cutoffs": {"maxlen": 3}},
    {"cutoffs": {"t0": 0}}, {"cutoffs": {"N": [16, 8]}}, {"domain": {"torus": {}}}, {"version": 2},
])
def test_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(experiment="x", **kw)


def test_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"experiment": "x", "lambda": 1.0})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"experiment": "x", "bogus": 1})
    with pytest.raises(ConfigError):
        load_config("- a\n- b\n")


def test_overrides():
    cfg = RunConfig(experiment="x", replicas=10)
    new = cfg.with_overrides(replicas=20, seed=None)
    assert new.replicas == 20 and new.seed == 0 and cfg.replicas == 10
