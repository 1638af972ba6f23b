import numpy as np
import pytest

from loopsoup.lattice import (
    DomainError,
    build_domain,
    green_function,
    killing_from_mass,
    mass_from_killing,
    precision_matrix,
    rectangle,
    transition_kernel,
)


def test_rectangle_is_inclusive():
    d = rectangle(0, 0, 2, 1)
    assert d.n == 6
    assert d.contains((2, 1)) and not d.contains((3, 1))


def test_disc_and_sites():
    d = build_domain({"disc": {"cx": 0, "cy": 0, "r": 1}})
    assert d.n == 5
    s = build_domain({"sites": [[0, 0], [5, 5]]})
    assert s.n == 2 and len(s.edges()) == 0


def test_empty_domain_errors():
    with pytest.raises(DomainError, match="empty"):
        build_domain({"sites": []})
    with pytest.raises(DomainError):
        build_domain({"rectangle": {"x0": 1, "y0": 0, "x1": 0, "y1": 0}})
    with pytest.raises(DomainError):
        build_domain({"hexagon": {}})


def test_killing_and_inverse():
    d = rectangle(0, 0, 2, 2)
    k = killing_from_mass(d, 0.5)
    assert np.allclose(k, 4 * (np.exp(0.25) - 1))
    assert np.allclose(mass_from_killing(k), 0.5)
    k2 = killing_from_mass(d, lambda x, y: 0.1 * x)
    assert k2[d.index((0, 0))] == 0 and k2[d.index((2, 0))] > 0
    with pytest.raises(ValueError):
        killing_from_mass(d, -1.0)


def test_transition_kernel_rows(square3):
    P = transition_kernel(square3)
    assert np.allclose(P, P.T)
    # interior site keeps all four steps, a corner loses two
    assert np.isclose(P[square3.index((1, 1))].sum(), 1.0)
    assert np.isclose(P[square3.index((0, 0))].sum(), 0.5)


def test_green_function_two_site(two_site):
    A = precision_matrix(two_site)
    assert np.allclose(A, [[4, -1], [-1, 4]])
    assert np.allclose(green_function(A), np.array([[4, 1], [1, 4]]) / 15)


def test_green_function_single_site(one_site):
    assert np.allclose(green_function(precision_matrix(one_site)), 0.25)


def test_green_function_large_sparse_path():
    d = rectangle(0, 0, 69, 69)  # 4900 sites, above the dense limit
    A = precision_matrix(d, 0.1)
    G = green_function(A)
    e = np.zeros(d.n)
    e[d.index((35, 35))] = 1
    assert np.allclose(A @ G[:, d.index((35, 35))], e, atol=1e-8)


def test_green_function_rejects_singular():
    with pytest.raises(np.linalg.LinAlgError):
        green_function(np.array([[1.0, 1.0], [1.0, 1.0]]))
