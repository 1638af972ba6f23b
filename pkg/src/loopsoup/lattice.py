"""Finite subsets of Z^2, killing rates and the killed random walk.

A domain is a finite set of integer sites with the 4-neighbour adjacency
inherited from Z^2.  Sites are indexed row-major by ``(y, x)`` so that
indices (and therefore seeded samples) are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

__all__ = [
    "DomainError",
    "LatticeDomain",
    "build_domain",
    "rectangle",
    "killing_from_mass",
    "mass_from_killing",
    "transition_kernel",
    "precision_matrix",
    "green_function",
]

_STEPS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)
DENSE_LIMIT = 4000


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LatticeDomain:
    """Finite subset of Z^2.

    Attributes
    ----------
    sites : ndarray of shape (n, 2)
        Integer coordinates, sorted by ``(y, x)``.
    neighbors : ndarray of shape (n, 4)
        Index of the in-domain neighbour in each lattice direction, -1 if
        that neighbour lies outside the domain.
    boundary : ndarray of bool, shape (n,)
        Sites with at least one neighbour outside the domain.
    """

    sites: np.ndarray
    neighbors: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    spec: Any = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.sites)

    def __len__(self) -> int:
        return len(self.sites)

    def index(self, site: Sequence[int]) -> int:
        key = (int(site[0]), int(site[1]))
        try:
            return self._lookup[key]
        except KeyError:
            raise DomainError(f"site {key} is not in the domain") from None

    def contains(self, site: Sequence[int]) -> bool:
        return (int(site[0]), int(site[1])) in self._lookup

    @property
    def _lookup(self) -> dict[tuple[int, int], int]:
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = {(int(x), int(y)): i for i, (x, y) in enumerate(self.sites)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache

    def edges(self) -> np.ndarray:
        """Unordered nearest-neighbour pairs ``(i, j)`` with ``i < j``."""
        i = np.repeat(np.arange(self.n), 4)
        j = self.neighbors.ravel()
        keep = (j >= 0) & (i < j)
        return np.stack([i[keep], j[keep]], axis=1)

    def subdomain(self, mask: np.ndarray) -> "LatticeDomain":
        mask = np.asarray(mask, dtype=bool)
        return _from_sites(self.sites[mask], spec={"sites": self.sites[mask].tolist()})

    def to_spec(self) -> dict:
        if self.spec is not None:
            return self.spec
        return {"sites": self.sites.tolist()}


def _from_sites(sites: np.ndarray, spec: Any = None) -> LatticeDomain:
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
    if len(sites) == 0:
        raise DomainError("empty domain")
    sites = np.unique(sites, axis=0)
    order = np.lexsort((sites[:, 0], sites[:, 1]))
    sites = sites[order]
    lookup = {(int(x), int(y)): i for i, (x, y) in enumerate(sites)}
    nbr = np.full((len(sites), 4), -1, dtype=np.int64)
    for i, (x, y) in enumerate(sites):
        for d, (dx, dy) in enumerate(_STEPS):
            nbr[i, d] = lookup.get((int(x + dx), int(y + dy)), -1)
    boundary = (nbr < 0).any(axis=1)
    sites.setflags(write=False)
    nbr.setflags(write=False)
    boundary.setflags(write=False)
    dom = LatticeDomain(sites=sites, neighbors=nbr, boundary=boundary, spec=spec)
    object.__setattr__(dom, "_lookup_cache", lookup)
    return dom


def rectangle(x0: int, y0: int, x1: int, y1: int) -> LatticeDomain:
    """Sites of ``[x0, x1] x [y0, y1]`` (inclusive)."""
    return build_domain({"rectangle": {"x0": x0, "y0": y0, "x1": x1, "y1": y1}})


def build_domain(spec: Mapping[str, Any] | LatticeDomain) -> LatticeDomain:
    """Build a domain from a rectangle, disc or explicit site list.

    ``spec`` is one of ``{"rectangle": {"x0", "y0", "x1", "y1"}}``,
    ``{"disc": {"cx", "cy", "r"}}`` or ``{"sites": [[x, y], ...]}``.
    """
    if isinstance(spec, LatticeDomain):
        return spec
    if not isinstance(spec, Mapping) or len(spec) != 1:
        raise DomainError(f"domain spec must have exactly one of rectangle/disc/sites, got {spec!r}")
    (kind, args), = spec.items()
    if kind == "rectangle":
        x0, y0, x1, y1 = (int(args[k]) for k in ("x0", "y0", "x1", "y1"))
        if x1 < x0 or y1 < y0:
            raise DomainError("empty domain")
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        sites = np.stack([xs.ravel(), ys.ravel()], axis=1)
    elif kind == "disc":
        cx, cy, r = float(args["cx"]), float(args["cy"]), float(args["r"])
        if r < 0:
            raise DomainError("empty domain")
        xs, ys = np.meshgrid(
            np.arange(np.floor(cx - r), np.ceil(cx + r) + 1),
            np.arange(np.floor(cy - r), np.ceil(cy + r) + 1),
        )
        inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
        sites = np.stack([xs[inside], ys[inside]], axis=1).astype(np.int64)
    elif kind == "sites":
        sites = np.asarray(args, dtype=np.int64).reshape(-1, 2)
    else:
        raise DomainError(f"unknown domain kind {kind!r}")
    if len(sites) == 0:
        raise DomainError("empty domain")
    return _from_sites(sites, spec={kind: args})


def _site_values(domain: LatticeDomain, values, name: str) -> np.ndarray:
    if callable(values):
        out = np.asarray(values(domain.sites[:, 0], domain.sites[:, 1]), dtype=float)
        out = np.broadcast_to(out, (domain.n,)).copy()
    else:
        out = np.asarray(values, dtype=float)
        if out.ndim == 0:
            out = np.full(domain.n, float(out))
    if out.shape != (domain.n,):
        raise ValueError(f"{name} must have one value per site ({domain.n}), got shape {out.shape}")
    return out


def killing_from_mass(
    domain: LatticeDomain, m: float | np.ndarray | Callable[[np.ndarray, np.ndarray], np.ndarray]
) -> np.ndarray:
    """Killing rates ``k_x = 4 (exp(m(x)^2) - 1)``.

    ``m`` may be a scalar, a per-site array or a function of the site
    coordinates ``m(x, y)``.
    """
    mass = _site_values(domain, m, "mass")
    if np.any(~np.isfinite(mass)):
        raise ValueError("mass must be finite")
    if np.any(mass < 0):
        raise ValueError("mass must be nonnegative")
    return 4.0 * np.expm1(mass**2)


def mass_from_killing(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`killing_from_mass`."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ValueError("killing rates must be nonnegative")
    return np.sqrt(np.log1p(k / 4.0))


def _check_killing(domain: LatticeDomain, k) -> np.ndarray:
    k = _site_values(domain, 0.0 if k is None else k, "killing rates")
    if np.any(k < 0) or np.any(np.isnan(k)):
        raise ValueError("killing rates must be nonnegative")
    return k


def transition_kernel(domain: LatticeDomain, k=None) -> np.ndarray:
    """Sub-stochastic kernel ``P[x, y] = 1/(k_x + 4)`` for in-domain neighbours."""
    k = _check_killing(domain, k)
    P = np.zeros((domain.n, domain.n))
    rows = np.repeat(np.arange(domain.n), 4)
    cols = domain.neighbors.ravel()
    keep = cols >= 0
    P[rows[keep], cols[keep]] = 1.0 / (k[rows[keep]] + 4.0)
    return P


def precision_matrix(domain: LatticeDomain, k=None) -> np.ndarray:
    """Dirichlet precision operator: ``k_x + 4`` on the diagonal, -1 on edges."""
    k = _check_killing(domain, k)
    A = np.zeros((domain.n, domain.n))
    rows = np.repeat(np.arange(domain.n), 4)
    cols = domain.neighbors.ravel()
    keep = cols >= 0
    A[rows[keep], cols[keep]] = -1.0
    A[np.diag_indices(domain.n)] = k + 4.0
    return A


def green_function(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Inverse of a positive-definite precision matrix.

    Dense Cholesky up to ``DENSE_LIMIT`` sites, a sparse LU factorization
    solved in column blocks above that.  Raises ``numpy.linalg.LinAlgError`` (with the
    condition estimate in the message) when ``A`` is singular or the
    residual ``max |A G - I|`` exceeds ``rtol``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T, rtol=0, atol=1e-14):
        raise np.linalg.LinAlgError("precision matrix must be square and symmetric")
    if n <= DENSE_LIMIT:
        try:
            c = scipy.linalg.cho_factor(A, lower=True)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                f"precision matrix is not positive definite (condition estimate {np.linalg.cond(A):.3e})"
            ) from None
        G = scipy.linalg.cho_solve(c, np.eye(n))
        G = 0.5 * (G + G.T)
    else:
        lu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(A))
        G = np.empty((n, n))
        for j0 in range(0, n, 512):
            j1 = min(j0 + 512, n)
            rhs = np.zeros((n, j1 - j0))
            rhs[np.arange(j0, j1), np.arange(j1 - j0)] = 1.0
            G[:, j0:j1] = lu.solve(rhs)
        G = 0.5 * (G + G.T)
    resid = np.abs(A @ G - np.eye(n)).max()
    if not np.isfinite(resid) or resid > rtol:
        cond = np.linalg.cond(A) if n <= DENSE_LIMIT else float("nan")
        raise np.linalg.LinAlgError(
            f"Green function residual {resid:.3e} exceeds {rtol:.1e} (condition estimate {cond:.3e})"
        )
    return G
