"""Discrete Gaussian free field, Ising-type sign fields and the loop-soup isomorphism.

Given an occupation field ``L`` of a soup at intensity 1/2, signs drawn
from ``P(S = s) ~ exp(sum_{x ~ y ordered} sqrt(L_x L_y) s_x s_y)`` make
``psi = sqrt(2 L) S`` a Gaussian free field.  Each unordered edge appears
twice in the ordered sum, so its ferromagnetic coupling is
``2 sqrt(L_x L_y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .lattice import LatticeDomain, killing_from_mass, transition_kernel
from .loops import total_mass
from .occupation import draw_occupation, occupation_field
from .rng import stream
from .soup import sample_soups

__all__ = [
    "sample_gff",
    "edge_couplings",
    "ising_exact",
    "sample_signs_exact",
    "sample_signs",
    "isomorphism_field",
    "PerturbationResult",
    "perturbation_coupling",
    "loop_hit_indicator",
    "loop_hit_probability_exact",
]

EXACT_LIMIT = 16


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_gff(G: np.ndarray, seed=None, size: int | None = None) -> np.ndarray:
    """Mean-zero Gaussian vectors with covariance ``G`` (Cholesky factor times normals).

    Returns shape ``(n,)`` when ``size`` is None, else ``(size, n)``.
    """
    G = np.asarray(G, dtype=float)
    try:
        C = scipy.linalg.cholesky(G, lower=True)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("covariance is not positive definite") from None
    rng = _rng(seed)
    z = rng.standard_normal((1 if size is None else size, G.shape[0]))
    phi = z @ C.T
    return phi[0] if size is None else phi


def edge_couplings(L: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per-edge coupling ``2 sqrt(L_x L_y)``, shape ``(replicas, edges)``."""
    L = np.atleast_2d(L)
    return 2.0 * np.sqrt(L[:, edges[:, 0]] * L[:, edges[:, 1]])


def _check_L(L: np.ndarray, domain: LatticeDomain) -> np.ndarray:
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[1] != domain.n:
        raise ValueError(f"field has {L.shape[1]} sites, domain has {domain.n}")
    if np.any(~(L > 0)):
        raise ValueError("occupation field must be strictly positive")
    return L


def ising_exact(L: np.ndarray, domain: LatticeDomain) -> tuple[np.ndarray, np.ndarray]:
    """All ``2^n`` sign configurations and their probabilities for one field ``L``."""
    if domain.n > EXACT_LIMIT:
        raise ValueError(f"exact enumeration limited to {EXACT_LIMIT} sites")
    L = _check_L(L, domain)[0]
    edges = domain.edges()
    configs = 1 - 2 * ((np.arange(2**domain.n)[:, None] >> np.arange(domain.n)) & 1)
    K = edge_couplings(L, edges)[0]
    energy = (configs[:, edges[:, 0]] * configs[:, edges[:, 1]]) @ K if len(edges) else np.zeros(len(configs))
    w = np.exp(energy - energy.max())
    return configs, w / w.sum()


def sample_signs_exact(L: np.ndarray, domain: LatticeDomain, seed=None, chunk: int = 4096) -> np.ndarray:
    """Exact draws by enumerating all configurations (at most 16 sites), one per row of ``L``."""
    if domain.n > EXACT_LIMIT:
        raise ValueError(f"exact enumeration limited to {EXACT_LIMIT} sites")
    L = _check_L(L, domain)
    rng = _rng(seed)
    edges = domain.edges()
    configs = 1 - 2 * ((np.arange(2**domain.n)[:, None] >> np.arange(domain.n)) & 1)
    prod = (configs[:, edges[:, 0]] * configs[:, edges[:, 1]]).astype(float)
    out = np.empty(L.shape, dtype=np.int64)
    chunk = max(1, min(chunk, (1 << 22) // len(configs)))
    for r0 in range(0, len(L), chunk):
        K = edge_couplings(L[r0:r0 + chunk], edges)
        energy = prod @ K.T if len(edges) else np.zeros((len(configs), len(K)))
        energy -= energy.max(axis=0)
        cdf = np.cumsum(np.exp(energy), axis=0)
        u = rng.random(len(K)) * cdf[-1]
        pick = (cdf < u[None, :]).sum(axis=0).clip(0, len(configs) - 1)
        out[r0:r0 + chunk] = configs[pick]
    return out


def _cluster_sweep(S: np.ndarray, p_bond: np.ndarray, edges: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    R, n = S.shape
    open_ = (S[:, edges[:, 0]] == S[:, edges[:, 1]]) & (rng.random(p_bond.shape) < p_bond)
    lab = np.broadcast_to(np.arange(n), (R, n)).copy()
    ei, ej = edges[:, 0], edges[:, 1]
    while True:
        li, lj = lab[:, ei], lab[:, ej]
        m = np.where(open_, np.minimum(li, lj), n)
        new = lab.copy()
        for e in range(len(edges)):
            col = m[:, e]
            np.minimum(new[:, ei[e]], col, out=new[:, ei[e]])
            np.minimum(new[:, ej[e]], col, out=new[:, ej[e]])
        # pointer jumping: a site adopts the label of its label
        new = np.take_along_axis(new, new, axis=1)
        if np.array_equal(new, lab):
            break
        lab = new
    flips = rng.integers(0, 2, size=(R, n)) * 2 - 1
    return np.take_along_axis(flips, lab, axis=1)


def _heat_bath_sweep(S: np.ndarray, K: np.ndarray, domain: LatticeDomain, rng: np.random.Generator) -> np.ndarray:
    edges = domain.edges()
    R, n = S.shape
    # coupling matrix per replica, sparse through the edge list
    for x in range(n):
        h = np.zeros(R)
        for e in np.flatnonzero((edges[:, 0] == x) | (edges[:, 1] == x)):
            y = edges[e, 1] if edges[e, 0] == x else edges[e, 0]
            h += K[:, e] * S[:, y]
        p_up = 1.0 / (1.0 + np.exp(-2.0 * h))
        S[:, x] = np.where(rng.random(R) < p_up, 1, -1)
    return S


def _energy(S: np.ndarray, K: np.ndarray, edges: np.ndarray) -> np.ndarray:
    if len(edges) == 0:
        return np.zeros(len(S))
    return (S[:, edges[:, 0]] * S[:, edges[:, 1]] * K).sum(axis=1)


@dataclass
class SignChainInfo:
    sweeps: int
    converged: bool


def sample_signs(L: np.ndarray, domain: LatticeDomain, seed=None, sweeps: int | None = None,
                 method: str = "cluster", burn_in: int = 20, check_every: int = 10,
                 max_sweeps: int = 500, return_info: bool = False):
    """Draw Ising-type signs with couplings ``2 sqrt(L_x L_y)``, one chain per row of ``L``.

    ``method`` is ``"cluster"`` (Swendsen-Wang, valid because all couplings
    are ferromagnetic), ``"heat-bath"`` (single-site) or ``"exact"``
    (enumeration, at most 16 sites).  With ``sweeps=None`` the chains run
    at least ``burn_in`` sweeps, then in blocks of ``check_every`` until the
    replica-averaged energy of two consecutive blocks agrees within three
    standard errors (or ``max_sweeps`` is hit).
    """
    L = _check_L(L, domain)
    rng = _rng(seed)
    if method == "exact":
        S = sample_signs_exact(L, domain, rng)
        info = SignChainInfo(sweeps=0, converged=True)
        return (S, info) if return_info else S
    if method not in ("cluster", "heat-bath"):
        raise ValueError(f"unknown sign sampler {method!r}")
    if sweeps is not None and sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    edges = domain.edges()
    K = edge_couplings(L, edges)
    p_bond = -np.expm1(-2.0 * K)
    S = rng.integers(0, 2, size=L.shape) * 2 - 1

    def sweep(S):
        if len(edges) == 0:
            return rng.integers(0, 2, size=L.shape) * 2 - 1
        if method == "cluster":
            return _cluster_sweep(S, p_bond, edges, rng)
        return _heat_bath_sweep(S, K, domain, rng)

    if sweeps is not None:
        for _ in range(sweeps):
            S = sweep(S)
        info = SignChainInfo(sweeps=sweeps, converged=True)
        return (S, info) if return_info else S

    done = 0
    for _ in range(burn_in):
        S = sweep(S)
    done += burn_in
    converged = len(L) < 2

    def block_energy(S):
        nonlocal done
        acc = []
        for _ in range(check_every):
            S = sweep(S)
            acc.append(_energy(S, K, edges))
        done += check_every
        e = np.mean(acc, axis=0)
        return S, e.mean(), e.std(ddof=1) / np.sqrt(len(e)) if len(e) > 1 else 0.0

    if not converged:
        S, prev, prev_se = block_energy(S)
        while done < max_sweeps:
            S, cur, cur_se = block_energy(S)
            if abs(cur - prev) <= 3.0 * np.hypot(cur_se, prev_se):
                converged = True
                break
            prev, prev_se = cur, cur_se
    info = SignChainInfo(sweeps=done, converged=converged)
    return (S, info) if return_info else S


def isomorphism_field(L: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``psi = sqrt(2 L) S``."""
    L = np.asarray(L, dtype=float)
    S = np.asarray(S)
    if L.shape != S.shape:
        raise ValueError(f"field shapes differ: {L.shape} vs {S.shape}")
    return np.sqrt(2.0 * L) * S


@dataclass(frozen=True, eq=False)
class PerturbationResult:
    psi: np.ndarray
    psi_sub: np.ndarray
    flag: np.ndarray
    domain: LatticeDomain
    subdomain: LatticeDomain
    x0: int
    x0_sub: int


def _sign_method(domain: LatticeDomain, method: str | None) -> str:
    if method is not None:
        return method
    return "exact" if domain.n <= 10 else "cluster"


def loop_hit_indicator(soup, x0: int, outside: np.ndarray) -> np.ndarray:
    """Per replica: does some loop visit both ``x0`` and a site in ``outside``?"""
    through = soup.touches(np.arange(soup.domain.n) == x0)
    meets = soup.touches(outside)
    hit = np.zeros(soup.n_replicas, dtype=bool)
    hit[soup.replica[through & meets]] = True
    return hit


def perturbation_coupling(domain: LatticeDomain, sub_mask: np.ndarray, x0, m, seed: int,
                          replicas: int = 1, maxlen: int = 40, sign_method: str | None = None) -> PerturbationResult:
    """Coupled free fields on ``D`` and ``D' = D[sub_mask]``.

    One soup at intensity 1/2 on ``D``; dropping loops that meet ``D \\ D'``
    leaves a soup on ``D'``.  Both occupation fields share holding times.
    When no loop through ``x0`` meets ``D \\ D'`` the ``D'`` signs are
    globally flipped if needed so that ``S'_{x0} = S_{x0}``, and the value
    at ``x0`` is copied, so ``psi'_{x0} == psi_{x0}`` exactly.
    """
    sub_mask = np.asarray(sub_mask, dtype=bool)
    x0 = domain.index(x0) if not np.isscalar(x0) else int(x0)
    if not sub_mask[x0]:
        raise ValueError("x0 must lie in the subdomain")
    sub = domain.subdomain(sub_mask)
    x0_sub = sub.index(domain.sites[x0])
    k = killing_from_mass(domain, m)
    soup = sample_soups(domain, 0.5, maxlen, seed, replicas, k=k, stream_name="perturbation-soup")
    outside = ~sub_mask
    meets = soup.touches(outside)
    flag = loop_hit_indicator(soup, x0, outside)

    draws = draw_occupation(soup, seed)
    L = occupation_field(soup, draws=draws)
    L_sub = occupation_field(soup, draws=draws, keep=~meets)[:, sub_mask]

    S = sample_signs(L, domain, stream(seed, "perturbation-signs"), method=_sign_method(domain, sign_method))
    S_sub = sample_signs(L_sub, sub, stream(seed, "perturbation-signs-sub"), method=_sign_method(sub, sign_method))
    same = ~flag
    flip = same & (S_sub[:, x0_sub] != S[:, x0])
    S_sub[flip] *= -1
    psi = isomorphism_field(L, S)
    psi_sub = isomorphism_field(L_sub, S_sub)
    psi_sub[same, x0_sub] = psi[same, x0]
    return PerturbationResult(psi=psi, psi_sub=psi_sub, flag=flag, domain=domain, subdomain=sub,
                              x0=x0, x0_sub=x0_sub)


def loop_hit_probability_exact(domain: LatticeDomain, sub_mask: np.ndarray, x0: int, m, lam: float = 0.5) -> float:
    """``1 - exp(-lam * mu)`` with ``mu`` the loop mass through ``x0`` meeting ``D \\ D'``.

    ``mu`` follows by inclusion-exclusion from total masses of the kernel
    restricted to ``D``, ``D - {x0}``, ``D'`` and ``D' - {x0}``.
    """
    P = transition_kernel(domain, killing_from_mass(domain, m))
    sub_mask = np.asarray(sub_mask, dtype=bool)
    not_x0 = np.arange(domain.n) != x0

    def mass(mask):
        idx = np.flatnonzero(mask)
        return total_mass(P[np.ix_(idx, idx)]) if len(idx) else 0.0

    mu = mass(np.ones(domain.n, bool)) - mass(not_x0) - mass(sub_mask) + mass(sub_mask & not_x0)
    return float(-np.expm1(-lam * mu))
