"""Occupation times and occupation fields of walk loop soups.

Every visit of a loop to ``x`` holds the walker for an ``Exp(1)/(k_x+4)``
time.  The field adds, at every site, an independent
``Gamma(1/2, scale=1/(k_x+4))`` base term, which is what makes the
Laplace transform at intensity 1/2 equal ``sqrt(det A / det(A + diag v))``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .lattice import LatticeDomain
from .loops import UnrootedLoop
from .rng import stream
from .soup import BLOCK_SIZE, LoopSoupRealization, SoupBatch

__all__ = [
    "OccupationDraws",
    "occupation_time",
    "draw_occupation",
    "occupation_field",
    "laplace_mc",
    "laplace_exact",
    "write_field_csv",
    "read_field_csv",
]

MIN_LAPLACE_REPLICAS = 1000


def _rates(domain: LatticeDomain, k) -> np.ndarray:
    k = np.zeros(domain.n) if k is None else np.asarray(k, dtype=float)
    return np.full(domain.n, float(k)) if k.ndim == 0 else k


def occupation_time(loop: UnrootedLoop, domain: LatticeDomain, k=None,
                    rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Occupation time of one loop at every domain site (zero off the loop)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    k = _rates(domain, k)
    out = np.zeros(domain.n)
    idx = np.array([domain.index(s) for s in loop.canonical])
    np.add.at(out, idx, rng.exponential(size=len(idx)) / (k[idx] + 4.0))
    return out


@dataclass(frozen=True, eq=False)
class OccupationDraws:
    """Holding times of one soup batch.

    ``base[r, x]`` is the Gamma(1/2) base term of replica ``r``; ``step[i]``
    the holding time of the ``i``-th stored visit, already scaled by
    ``1/(k+4)``.
    """

    base: np.ndarray
    step: np.ndarray


def draw_occupation(soup: SoupBatch, seed: int, block_size: int = BLOCK_SIZE) -> OccupationDraws:
    """Draw holding times from the ``occupation`` streams, block by block."""
    n = soup.domain.n
    scale = 1.0 / (soup.killing + 4.0)
    base = np.empty((soup.n_replicas, n))
    step = np.empty(len(soup.sites))
    loop_starts = np.searchsorted(soup.replica, np.arange(0, soup.n_replicas + block_size, block_size))
    for b, r0 in enumerate(range(0, soup.n_replicas, block_size)):
        r1 = min(r0 + block_size, soup.n_replicas)
        rng = stream(seed, "occupation", b)
        base[r0:r1] = rng.gamma(0.5, 1.0, size=(r1 - r0, n)) * scale
        s0 = soup.offsets[loop_starts[b]]
        s1 = soup.offsets[min(loop_starts[b + 1], len(soup))]
        step[s0:s1] = rng.exponential(size=s1 - s0) * scale[soup.sites[s0:s1]]
    return OccupationDraws(base=base, step=step)


def occupation_field(soup: SoupBatch | LoopSoupRealization, seed: int | None = None,
                     draws: OccupationDraws | None = None, keep: np.ndarray | None = None,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Occupation field ``L``, shape ``(replicas, sites)``.

    With ``keep`` (a per-loop mask) only the retained loops contribute,
    reusing the same holding times, so fields of nested soups are coupled.
    A single :class:`LoopSoupRealization` gives a 1-d field and draws from
    ``rng``.
    """
    if isinstance(soup, LoopSoupRealization):
        if rng is None:
            rng = np.random.default_rng(seed)
        k = soup.killing
        L = rng.gamma(0.5, 1.0, size=soup.domain.n) / (k + 4.0)
        for loop in soup.loops:
            L += occupation_time(loop, soup.domain, k, rng)
        return L
    if draws is None:
        if seed is None:
            raise ValueError("seed or draws required")
        draws = draw_occupation(soup, seed)
    n = soup.domain.n
    weights = draws.step
    if keep is not None:
        weights = np.where(np.repeat(np.asarray(keep, dtype=bool), soup.length), weights, 0.0)
    flat = soup.replica[soup.loop_of_step] * n + soup.sites
    L = draws.base + np.bincount(flat, weights=weights, minlength=soup.n_replicas * n).reshape(-1, n)
    return L


def laplace_mc(fields: np.ndarray, v) -> tuple[float, float]:
    """Monte Carlo ``E exp(-sum_x v_x L_x)`` with its standard error."""
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    if len(fields) < MIN_LAPLACE_REPLICAS:
        raise ValueError(f"need at least {MIN_LAPLACE_REPLICAS} replicas, got {len(fields)}")
    v = np.broadcast_to(np.asarray(v, dtype=float), (fields.shape[1],))
    if np.all(v == 0):
        return 1.0, 0.0
    vals = np.exp(-(fields @ v))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


def _logdet_pd(M: np.ndarray) -> float:
    try:
        c, low = scipy.linalg.cho_factor(M, lower=True)
    except np.linalg.LinAlgError:
        raise ValueError("matrix is not positive definite") from None
    return float(2.0 * np.log(np.diag(c)).sum())


def laplace_exact(A: np.ndarray, v) -> float:
    """``sqrt(det A / det(A + diag v))``, the occupation-field Laplace transform at intensity 1/2."""
    A = np.asarray(A, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), (A.shape[0],))
    return float(np.exp(0.5 * (_logdet_pd(A) - _logdet_pd(A + np.diag(v)))))


def write_field_csv(path: str, domain: LatticeDomain, L: np.ndarray) -> None:
    """Rows ``replica, x, y, L``; a 1-d field is written as replica 0."""
    L = np.atleast_2d(L)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "x", "y", "L"])
        for r, row in enumerate(L):
            for (x, y), val in zip(domain.sites, row):
                w.writerow([r, int(x), int(y), repr(float(val))])


def read_field_csv(path: str, domain: LatticeDomain) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n_rep = max(int(r["replica"]) for r in rows) + 1
    L = np.zeros((n_rep, domain.n))
    for r in rows:
        L[int(r["replica"]), domain.index((int(r["x"]), int(r["y"])))] = float(r["L"])
    return L
