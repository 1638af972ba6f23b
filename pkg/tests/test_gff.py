import math

import numpy as np
import pytest

from loopsoup.gff import (
    edge_couplings,
    ising_exact,
    isomorphism_field,
    loop_hit_probability_exact,
    perturbation_coupling,
    sample_gff,
    sample_signs,
)
from loopsoup.lattice import green_function, killing_from_mass, precision_matrix, rectangle


def test_gff_moments(one_site, two_site):
    phi = sample_gff(green_function(precision_matrix(one_site)), 0, size=100_000)[:, 0]
    assert abs(phi.var() - 0.25) < 4 * 0.25 * math.sqrt(2 / len(phi))
    assert abs(phi.mean()) < 4 * 0.5 / math.sqrt(len(phi))
    phi2 = sample_gff(green_function(precision_matrix(two_site)), 1, size=100_000)
    prod = phi2[:, 0] * phi2[:, 1]
    assert abs(prod.mean() - 1 / 15) < 4 * prod.std() / math.sqrt(len(prod))


def test_gff_rejects_non_pd():
    with pytest.raises(np.linalg.LinAlgError):
        sample_gff(np.array([[1.0, 2.0], [2.0, 1.0]]), 0)


def test_single_site_signs(one_site):
    S = sample_signs(np.ones((100_000, 1)), one_site, 0, method="cluster")
    assert abs((S == 1).mean() - 0.5) < 4 * 0.5 / math.sqrt(len(S))


@pytest.mark.parametrize("method", ["cluster", "heat-bath", "exact"])
def test_two_site_alignment(two_site, method):
    S = sample_signs(np.ones((100_000, 2)), two_site, 3, method=method)
    p = math.exp(2) / (math.exp(2) + math.exp(-2))
    freq = (S[:, 0] == S[:, 1]).mean()
    assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / len(S))


def test_exact_two_site_probability(two_site):
    configs, probs = ising_exact(np.ones(2), two_site)
    same = (configs[:, 0] == configs[:, 1])
    assert math.isclose(probs[same].sum(), math.exp(2) / (math.exp(2) + math.exp(-2)))


def test_strong_coupling_aligns(two_site):
    S = sample_signs(np.tile([1e4, 1.0], (2000, 1)), two_site, 0, sweeps=60)
    assert np.all(S[:, 0] == S[:, 1])


def test_signs_reject_bad_fields(two_site):
    with pytest.raises(ValueError):
        sample_signs(np.array([[1.0, 0.0]]), two_site, 0)
    with pytest.raises(ValueError):
        sample_signs(np.ones((1, 3)), two_site, 0)
    with pytest.raises(ValueError):
        ising_exact(np.ones(25), rectangle(0, 0, 4, 4))


def test_isomorphism_field():
    L = np.array([[0.5, 2.0]])
    S = np.array([[1, -1]])
    psi = isomorphism_field(L, S)
    assert np.allclose(psi**2, 2 * L)
    with pytest.raises(ValueError):
        isomorphism_field(L, np.array([1]))


def test_couplings_shape(square3):
    K = edge_couplings(np.ones((3, 9)), square3.edges())
    assert K.shape == (3, 12) and np.allclose(K, 2.0)


def test_perturbation_identity_subdomain(square3):
    res = perturbation_coupling(square3, np.ones(9, bool), 4, 0.3, seed=0, replicas=2000)
    assert not res.flag.any()
    assert np.array_equal(res.psi[:, 4], res.psi_sub[:, res.x0_sub])


def test_perturbation_agreement_when_untouched(square3):
    mask = np.ones(9, bool)
    mask[0] = False
    res = perturbation_coupling(square3, mask, 4, 0.3, seed=1, replicas=5000)
    same = ~res.flag
    assert np.array_equal(res.psi[same, 4], res.psi_sub[same, res.x0_sub])
    assert np.all(res.psi[res.flag, 4] != res.psi_sub[res.flag, res.x0_sub])


def test_perturbation_x0_outside(square3):
    mask = np.ones(9, bool)
    mask[4] = False
    with pytest.raises(ValueError):
        perturbation_coupling(square3, mask, 4, 0.3, seed=0)


def test_hit_probability_exact_vs_coupling(square3):
    mask = np.ones(9, bool)
    mask[0] = False
    exact = loop_hit_probability_exact(square3, mask, 4, 0.0)
    res = perturbation_coupling(square3, mask, 4, 0.0, seed=2, replicas=100_000, maxlen=60)
    se = math.sqrt(exact * (1 - exact) / 100_000)
    assert abs(res.flag.mean() - exact) < 4 * se


def test_hit_probability_decays_with_mass():
    d = rectangle(0, 0, 6, 0)
    mask = np.ones(d.n, bool)
    mask[-1] = False
    p = [loop_hit_probability_exact(d, mask, 0, m) for m in (0.0, 0.5, 1.5)]
    assert p[0] > p[1] > p[2] and p[2] < 1e-8


def test_sign_chain_reports_convergence(square3):
    L = np.ones((500, 9))
    S, info = sample_signs(L, square3, 0, return_info=True)
    assert info.converged and info.sweeps >= 20
