"""Random walk loop measures on finite domains.

The rooted measure gives a closed nearest-neighbour walk of length ``2n``
rooted at ``x`` the weight ``(2n)^-1 * prod p(x_i, x_{i+1})``.  Unrooted
loops are rotation classes; reversal is *not* quotiented out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .lattice import LatticeDomain

__all__ = [
    "RootedLoop",
    "UnrootedLoop",
    "rooted_weight",
    "unrooted_weight",
    "kernel_powers",
    "return_probabilities",
    "symmetrized_spectrum",
    "total_mass",
    "truncation_tail",
    "choose_maxlen",
    "enumerate_loops",
    "loops_to_json",
    "loops_from_json",
]

LOOPS_FORMAT = "loopsoup.loops"
LOOPS_VERSION = 1

MAX_ENUM_LENGTH = 12
MAX_ENUM_SITES = 16

Site = tuple[int, int]


def _as_sites(seq: Iterable[Sequence[int]]) -> tuple[Site, ...]:
    return tuple((int(s[0]), int(s[1])) for s in seq)


def _check_steps(sites: Sequence[Site]) -> None:
    for a, b in zip(sites, sites[1:] + sites[:1]):
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            raise ValueError(f"loop has a non nearest-neighbour step {a} -> {b}")


@dataclass(frozen=True)
class RootedLoop:
    """Closed walk ``x_0, ..., x_{2n}`` with ``x_0 == x_{2n}``."""

    steps: tuple[Site, ...]

    def __post_init__(self):
        steps = _as_sites(self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) < 3 or steps[0] != steps[-1]:
            raise ValueError("rooted loop must be closed and have length >= 2")
        if (len(steps) - 1) % 2:
            raise ValueError("closed walks on Z^2 have even length")
        _check_steps(list(steps[:-1]))

    @property
    def root(self) -> Site:
        return self.steps[0]

    def __len__(self) -> int:
        return len(self.steps) - 1

    def unrooted(self) -> "UnrootedLoop":
        return UnrootedLoop(self.steps[:-1])


class UnrootedLoop:
    """Rotation class of a closed walk.

    Parameters
    ----------
    sites : sequence of (x, y)
        Any representative ``x_0, ..., x_{L-1}`` (the closing return to
        ``x_0`` is implicit).
    """

    __slots__ = ("canonical", "__dict__")

    def __init__(self, sites: Sequence[Sequence[int]]):
        seq = list(_as_sites(sites))
        if len(seq) >= 2 and seq[0] == seq[-1] and len(seq) % 2 == 1:
            seq = seq[:-1]
        if len(seq) < 2 or len(seq) % 2:
            raise ValueError("unrooted loop must have even length >= 2")
        _check_steps(seq)
        self.canonical: tuple[Site, ...] = min(
            tuple(seq[i:] + seq[:i]) for i in range(len(seq))
        )

    def __len__(self) -> int:
        return len(self.canonical)

    def __eq__(self, other) -> bool:
        return isinstance(other, UnrootedLoop) and self.canonical == other.canonical

    def __hash__(self) -> int:
        return hash(self.canonical)

    def __repr__(self) -> str:
        return f"UnrootedLoop({list(self.canonical)})"

    @cached_property
    def rho(self) -> int:
        """Number of distinct rotations (the smallest shift fixing the sequence)."""
        seq = self.canonical
        L = len(seq)
        for p in range(1, L + 1):
            if L % p == 0 and seq[p:] + seq[:p] == seq:
                return p
        return L  # pragma: no cover

    @cached_property
    def multiplicity(self) -> dict[Site, int]:
        counts: dict[Site, int] = {}
        for s in self.canonical:
            counts[s] = counts.get(s, 0) + 1
        return counts

    def rotations(self) -> list[RootedLoop]:
        seq = list(self.canonical)
        return [RootedLoop(tuple(seq[i:] + seq[:i] + [seq[i]])) for i in range(self.rho)]


def _site_index(domain: LatticeDomain, sites: Iterable[Site]) -> np.ndarray | None:
    idx = []
    for s in sites:
        if not domain.contains(s):
            return None
        idx.append(domain.index(s))
    return np.asarray(idx, dtype=np.int64)


def _killing(domain: LatticeDomain, k) -> np.ndarray:
    if k is None:
        return np.zeros(domain.n)
    k = np.asarray(k, dtype=float)
    return np.full(domain.n, float(k)) if k.ndim == 0 else k


def rooted_weight(loop: RootedLoop, domain: LatticeDomain, k=None) -> float:
    """Rooted measure of ``loop``; zero if it leaves the domain."""
    if not isinstance(loop, RootedLoop):
        loop = RootedLoop(loop)
    idx = _site_index(domain, loop.steps[:-1])
    if idx is None:
        return 0.0
    k = _killing(domain, k)
    return float(np.prod(1.0 / (k[idx] + 4.0)) / len(loop))


def unrooted_weight(loop: UnrootedLoop, domain: LatticeDomain, k=None) -> float:
    """Unrooted measure ``(rho/L) prod_x (k_x + 4)^-n(x)``."""
    if not isinstance(loop, UnrootedLoop):
        loop = UnrootedLoop(loop)
    idx = _site_index(domain, loop.canonical)
    if idx is None:
        return 0.0
    k = _killing(domain, k)
    return float(loop.rho / len(loop) * np.prod(1.0 / (k[idx] + 4.0)))


def _check_maxlen(maxlen: int) -> int:
    if int(maxlen) != maxlen or maxlen < 2 or maxlen % 2:
        raise ValueError(f"maxlen must be an even integer >= 2, got {maxlen}")
    return int(maxlen)


def kernel_powers(P: np.ndarray, maxlen: int) -> np.ndarray:
    """Stack ``[I, P, P^2, ..., P^maxlen]``."""
    P = np.asarray(P, dtype=float)
    out = np.empty((maxlen + 1,) + P.shape)
    out[0] = np.eye(P.shape[0])
    for j in range(1, maxlen + 1):
        out[j] = out[j - 1] @ P
    return out


def return_probabilities(P: np.ndarray, maxlen: int) -> np.ndarray:
    """Table ``q[j, x] = (P^j)_{xx}`` for ``j = 0..maxlen``.

    Odd rows vanish on Z^2.  The rooted measure of loops rooted at ``x``
    with length ``2n`` is ``q[2n, x] / (2n)``.
    """
    maxlen = _check_maxlen(maxlen)
    powers = kernel_powers(P, maxlen)
    return np.einsum("jii->ji", powers).copy()


def symmetrized_spectrum(P: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``P``, computed from the symmetric matrix ``sqrt(P_xy P_yx)``.

    Valid for kernels of the form ``diag(1/(k+4)) @ adjacency``.
    """
    P = np.asarray(P, dtype=float)
    S = np.sqrt(P * P.T)
    return np.linalg.eigvalsh(S)


def total_mass(P: np.ndarray) -> float:
    """Total unrooted loop mass ``-log det(I - P)``."""
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        return 0.0
    rho = np.abs(symmetrized_spectrum(P)).max()
    if rho >= 1.0:
        raise ValueError(f"spectral radius {rho} >= 1; loop measure has infinite mass")
    sign, logdet = np.linalg.slogdet(np.eye(P.shape[0]) - P)
    if sign <= 0:
        raise ValueError("det(I - P) is not positive")
    return float(-logdet)


def truncation_tail(P: np.ndarray, maxlen: int) -> float:
    """Unrooted mass carried by loops longer than ``maxlen``.

    Exact up to the accuracy of the eigenvalues: the sum over ``j > maxlen/2``
    of ``sum_i rho_i^(2j) / (2j)``.
    """
    maxlen = _check_maxlen(maxlen)
    ev2 = symmetrized_spectrum(P) ** 2
    ev2 = ev2[ev2 > 0]
    if ev2.size == 0:
        return 0.0
    if ev2.max() >= 1.0:
        raise ValueError("spectral radius >= 1")
    M = maxlen // 2
    total = 0.0
    j = M + 1
    chunk = 256
    while True:
        js = np.arange(j, j + chunk)
        powers = ev2[None, :] ** js[:, None]
        total += float((powers / (2.0 * js[:, None])).sum())
        if powers[-1].max() < 1e-20:
            break
        j += chunk
    return total


def choose_maxlen(P: np.ndarray, tol: float, start: int = 8, cap: int = 4000) -> int:
    """Smallest even truncation length whose tail mass is at most ``tol``."""
    maxlen = start
    while truncation_tail(P, maxlen) > tol:
        maxlen *= 2
        if maxlen > cap:
            raise ValueError(f"no truncation <= {cap} meets tail tolerance {tol}")
    lo, hi = maxlen // 2, maxlen
    while hi - lo > 2:
        mid = (lo + hi) // 4 * 2
        if truncation_tail(P, mid) > tol:
            lo = mid
        else:
            hi = mid
    return max(hi, 2)


def enumerate_loops(domain: LatticeDomain, k=None, maxlen: int = 8) -> list[tuple[UnrootedLoop, float]]:
    """Every unrooted loop of length <= ``maxlen`` in ``domain`` with its weight.

    Exhaustive search, so restricted to ``maxlen <= 12`` and at most 16
    sites.  Each loop is generated once, from its canonical rotation
    (which starts at the loop's lexicographically smallest site).
    """
    maxlen = _check_maxlen(maxlen)
    if maxlen > MAX_ENUM_LENGTH or domain.n > MAX_ENUM_SITES:
        raise ValueError(
            f"enumeration budget exceeded: maxlen={maxlen} (<= {MAX_ENUM_LENGTH}), "
            f"sites={domain.n} (<= {MAX_ENUM_SITES})"
        )
    k = _killing(domain, k)
    coords = [tuple(int(v) for v in s) for s in domain.sites]
    rank = np.empty(domain.n, dtype=np.int64)
    rank[sorted(range(domain.n), key=lambda i: coords[i])] = np.arange(domain.n)
    nbrs = [[int(j) for j in row if j >= 0] for row in domain.neighbors]
    weights_1 = 1.0 / (k + 4.0)

    found: dict[tuple[Site, ...], UnrootedLoop] = {}
    for root in sorted(range(domain.n), key=lambda i: rank[i]):
        r_rank = rank[root]
        rx, ry = coords[root]
        walk = [root]

        def extend(depth: int) -> None:
            cur = walk[-1]
            for nxt in nbrs[cur]:
                if rank[nxt] < r_rank:
                    continue
                length = depth + 1
                remaining = maxlen - length
                if nxt == root:
                    seq = tuple(coords[i] for i in walk)
                    loop = UnrootedLoop(seq)
                    if loop.canonical == seq:
                        found.setdefault(seq, loop)
                    if remaining < 2:
                        continue
                nx, ny = coords[nxt]
                if abs(nx - rx) + abs(ny - ry) > remaining:
                    continue
                walk.append(nxt)
                extend(length)
                walk.pop()

        extend(0)

    out = []
    for seq in sorted(found, key=lambda s: (len(s), s)):
        loop = found[seq]
        idx = np.asarray([domain.index(s) for s in seq])
        w = loop.rho / len(loop) * float(np.prod(weights_1[idx]))
        out.append((loop, w))
    return out


def loops_to_json(loops: Sequence[tuple[UnrootedLoop, float]]) -> str:
    """Serialize ``(loop, weight)`` pairs; versioned schema."""
    payload = {
        "format": LOOPS_FORMAT,
        "version": LOOPS_VERSION,
        "loops": [{"sites": [list(s) for s in loop.canonical], "weight": w} for loop, w in loops],
    }
    return json.dumps(payload, indent=1)


def loops_from_json(text: str) -> list[tuple[UnrootedLoop, float]]:
    payload = json.loads(text)
    if payload.get("format") != LOOPS_FORMAT or payload.get("version") != LOOPS_VERSION:
        raise ValueError("not a loopsoup loop list (format/version mismatch)")
    return [(UnrootedLoop(item["sites"]), float(item["weight"])) for item in payload["loops"]]
