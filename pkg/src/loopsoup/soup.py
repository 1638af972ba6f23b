"""Poisson sampling of random walk loop soups.

A soup with intensity ``lam`` and killing rates ``k`` places, for every
root ``x`` and even length ``2n <= maxlen``, a Poisson number of loops with
mean ``lam * (P^2n)_xx / 2n``; each loop is a walk bridge from ``x`` back to
``x``.  Forgetting the root of a Poisson process of rooted loops gives the
unrooted soup, so canonical classes never need to be enumerated.

Replicas are sampled in fixed-size blocks, one random stream per block, so
the output for a given seed does not depend on how blocks are scheduled.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .lattice import LatticeDomain, build_domain, killing_from_mass, transition_kernel
from .loops import UnrootedLoop, kernel_powers, return_probabilities, truncation_tail
from .rng import stream

__all__ = [
    "SoupConfig",
    "SoupBatch",
    "LoopSoupRealization",
    "RescaledLoop",
    "intensity_table",
    "thinned_intensity_table",
    "sample_bridge",
    "sample_soups",
    "sample_critical_soup",
    "sample_massive_soup",
    "thin_to_massive",
    "layered_soup",
    "rescale_soup",
    "plane_return_probability",
    "PlaneWalkSoup",
    "sample_plane_walk_soup",
    "dump_soup",
    "load_soup",
]

BLOCK_SIZE = 2048
SOUP_FORMAT = "loopsoup.soup"
SOUP_VERSION = 1


@dataclass(frozen=True)
class SoupConfig:
    lam: float
    maxlen: int
    seed: int = 0
    replicas: int = 1
    mass: float | Sequence[float] | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.maxlen < 2 or self.maxlen % 2:
            raise ValueError("maxlen must be an even integer >= 2")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")


def intensity_table(P: np.ndarray, lam: float, maxlen: int) -> np.ndarray:
    """Poisson means ``I[j, x] = lam * (P^j)_xx / j`` (row 0 and odd rows are 0)."""
    q = return_probabilities(P, maxlen)
    j = np.arange(maxlen + 1, dtype=float)
    j[0] = np.inf
    table = lam * q / j[:, None]
    table[1::2] = 0.0
    return table


def thinned_intensity_table(P0: np.ndarray, m, lam: float, maxlen: int) -> np.ndarray:
    """Intensities left after exponential-mark thinning of a soup with kernel ``P0``.

    A loop survives with probability ``exp(-sum_i m(x_i)^2)``, so the
    surviving rooted mass is a return probability of ``diag(exp(-m^2)) P0``.
    """
    m = np.broadcast_to(np.asarray(m, dtype=float), (P0.shape[0],))
    return intensity_table(np.exp(-(m**2))[:, None] * P0, lam, maxlen)


@dataclass(frozen=True, eq=False)
class SoupBatch:
    """Loops of many replicas stored flat.

    Loop ``i`` belongs to replica ``replica[i]`` and visits the site indices
    ``sites[offsets[i]:offsets[i+1]]`` (the return to the root is implicit).
    """

    domain: LatticeDomain
    killing: np.ndarray
    lam: float
    maxlen: int
    n_replicas: int
    seed: int
    replica: np.ndarray
    length: np.ndarray
    offsets: np.ndarray
    sites: np.ndarray
    marks: np.ndarray
    layer: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.layer is None:
            object.__setattr__(self, "layer", np.zeros(len(self.replica), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.replica)

    @property
    def loop_of_step(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), self.length)

    def counts(self) -> np.ndarray:
        return np.bincount(self.replica, minlength=self.n_replicas)

    def loop_sites(self, i: int) -> np.ndarray:
        return self.sites[self.offsets[i] : self.offsets[i + 1]]

    def loop_sum(self, site_values: np.ndarray) -> np.ndarray:
        """Per-loop sum of ``site_values`` over the visited indices ``0..|loop|-1``."""
        if len(self) == 0:
            return np.zeros(0)
        return np.add.reduceat(np.asarray(site_values, dtype=float)[self.sites], self.offsets[:-1])

    def touches(self, site_mask: np.ndarray) -> np.ndarray:
        """Per-loop flag: does the loop visit any site in ``site_mask``?"""
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        return np.add.reduceat(np.asarray(site_mask, dtype=np.int64)[self.sites], self.offsets[:-1]) > 0

    def subset(self, keep: np.ndarray, **changes) -> "SoupBatch":
        keep = np.asarray(keep, dtype=bool)
        lengths = self.length[keep]
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        step_keep = np.repeat(keep, self.length)
        return replace(
            self,
            replica=self.replica[keep],
            length=lengths,
            offsets=offsets,
            sites=self.sites[step_keep],
            marks=self.marks[keep],
            layer=self.layer[keep],
            **changes,
        )

    def realization(self, r: int = 0) -> "LoopSoupRealization":
        idx = np.flatnonzero(self.replica == r)
        coords = self.domain.sites
        loops = tuple(UnrootedLoop(coords[self.loop_sites(i)]) for i in idx)
        return LoopSoupRealization(
            loops=loops,
            marks=self.marks[idx].copy(),
            lam=self.lam,
            killing=self.killing,
            maxlen=self.maxlen,
            seed=self.seed,
            domain=self.domain,
        )

    def tail_bound(self) -> float:
        """Expected number of loops per replica lost to the length cutoff."""
        return self.lam * truncation_tail(transition_kernel(self.domain, self.killing), self.maxlen)


@dataclass(frozen=True, eq=False)
class LoopSoupRealization:
    loops: tuple[UnrootedLoop, ...]
    marks: np.ndarray
    lam: float
    killing: np.ndarray
    maxlen: int
    seed: int
    domain: LatticeDomain

    def __len__(self) -> int:
        return len(self.loops)


def _concat(batches: list[SoupBatch], **fields) -> SoupBatch:
    base = batches[0]
    replica_shift = np.cumsum([0] + [b.n_replicas for b in batches[:-1]])
    lengths = np.concatenate([b.length for b in batches])
    return replace(
        base,
        replica=np.concatenate([b.replica + s for b, s in zip(batches, replica_shift)]).astype(np.int64),
        length=lengths.astype(np.int64),
        offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64),
        sites=np.concatenate([b.sites for b in batches]).astype(np.int64),
        marks=np.concatenate([b.marks for b in batches]),
        layer=np.concatenate([b.layer for b in batches]).astype(np.int64),
        n_replicas=int(sum(b.n_replicas for b in batches)),
        **fields,
    )


def _bridges(x: int, L: int, P: np.ndarray, powers: np.ndarray, nbr: np.ndarray,
             rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` walk bridges of length ``L`` from ``x`` to ``x``.

    From ``z`` with ``r`` steps to go, the walk moves to ``w`` with
    probability ``P[z, w] (P^{r-1})[w, x] / (P^r)[z, x]``.  Returns the
    visited sites ``x_0..x_{L-1}``, shape ``(count, L)``.
    """
    path = np.empty((count, L), dtype=np.int64)
    pos = np.full(count, x, dtype=np.int64)
    path[:, 0] = x
    rows = np.arange(count)
    for step in range(1, L):
        remaining = L - step + 1
        cand = nbr[pos]
        valid = cand >= 0
        cs = np.where(valid, cand, 0)
        w = np.where(valid, P[pos[:, None], cs] * powers[remaining - 1][cs, x], 0.0)
        total = w.sum(axis=1)
        if np.any(total <= 0):
            raise RuntimeError("bridge reached a state with zero return probability")
        cdf = np.cumsum(w, axis=1) / total[:, None]
        u = rng.random(count)
        choice = (cdf < u[:, None]).sum(axis=1)
        # guard against u landing above a rounded cdf[-1]: take the last valid move
        last_valid = 3 - np.argmax(valid[:, ::-1] & (w[:, ::-1] > 0), axis=1)
        choice = np.minimum(choice, last_valid)
        pos = cs[rows, choice]
        path[:, step] = pos
    return path


def sample_bridge(x: int, length: int, P: np.ndarray, domain: LatticeDomain,
                  rng: np.random.Generator | int | None = None, powers: np.ndarray | None = None):
    """One loop from the rooted measure conditioned on its root and length.

    Returns a :class:`~loopsoup.loops.RootedLoop` in lattice coordinates.
    """
    from .loops import RootedLoop

    if length < 2 or length % 2:
        raise ValueError("length must be even and >= 2")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if powers is None or len(powers) <= length:
        powers = kernel_powers(P, length)
    if powers[length][x, x] <= 0:
        raise ValueError(f"no loop of length {length} is rooted at site {x}")
    path = _bridges(x, length, P, powers, domain.neighbors, rng, 1)[0]
    coords = domain.sites[np.append(path, x)]
    return RootedLoop(tuple(map(tuple, coords)))


def _sample_block(domain: LatticeDomain, k: np.ndarray, lam: float, maxlen: int,
                  n_rep: int, rng: np.random.Generator, P=None, powers=None) -> dict:
    if P is None:
        P = transition_kernel(domain, k)
    if powers is None:
        powers = kernel_powers(P, maxlen)
    table = intensity_table(P, lam, maxlen)
    counts = rng.poisson(table[None, :, :], size=(n_rep,) + table.shape)
    reps, lens, paths = [], [], []
    for j in range(2, maxlen + 1, 2):
        for x in range(domain.n):
            c = counts[:, j, x]
            total = int(c.sum())
            if total == 0:
                continue
            reps.append(np.repeat(np.arange(n_rep), c))
            lens.append(np.full(total, j, dtype=np.int64))
            paths.append(_bridges(x, j, P, powers, domain.neighbors, rng, total).ravel())
    if reps:
        replica = np.concatenate(reps)
        length = np.concatenate(lens)
        offsets = np.concatenate([[0], np.cumsum(length)])
        flat = np.concatenate(paths)
        order = np.argsort(replica, kind="stable")
        step_order = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in order])
        replica, length, flat = replica[order], length[order], flat[step_order]
    else:
        replica = np.zeros(0, dtype=np.int64)
        length = np.zeros(0, dtype=np.int64)
        flat = np.zeros(0, dtype=np.int64)
    marks = rng.exponential(size=len(replica))
    return dict(replica=replica, length=length, sites=flat, marks=marks, n_replicas=n_rep)


def _block_job(args):
    domain_spec, k, lam, maxlen, n_rep, seed, path = args
    domain = build_domain(domain_spec)
    return _sample_block(domain, k, lam, maxlen, n_rep, stream(seed, *path))


def sample_soups(domain: LatticeDomain, lam: float, maxlen: int, seed: int, replicas: int = 1,
                 k=None, workers: int = 1, block_size: int = BLOCK_SIZE,
                 stream_name: str = "soup") -> SoupBatch:
    """Sample ``replicas`` independent soups with killing rates ``k``.

    Output depends only on the arguments other than ``workers``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if maxlen < 2 or maxlen % 2:
        raise ValueError("maxlen must be an even integer >= 2")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    k = np.zeros(domain.n) if k is None else np.broadcast_to(np.asarray(k, dtype=float), (domain.n,)).copy()
    if np.any(k < 0):
        raise ValueError("killing rates must be nonnegative")
    n_blocks = -(-replicas // block_size)
    sizes = [min(block_size, replicas - b * block_size) for b in range(n_blocks)]
    if workers > 1 and n_blocks > 1:
        jobs = [(domain.to_spec(), k, lam, maxlen, s, seed, (stream_name, b)) for b, s in enumerate(sizes)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            blocks = list(ex.map(_block_job, jobs))
    else:
        P = transition_kernel(domain, k)
        powers = kernel_powers(P, maxlen)
        blocks = [
            _sample_block(domain, k, lam, maxlen, s, stream(seed, stream_name, b), P, powers)
            for b, s in enumerate(sizes)
        ]
    parts = []
    for blk in blocks:
        length = blk["length"]
        parts.append(SoupBatch(
            domain=domain, killing=k, lam=float(lam), maxlen=int(maxlen), n_replicas=blk["n_replicas"],
            seed=int(seed), replica=blk["replica"], length=length,
            offsets=np.concatenate([[0], np.cumsum(length)]).astype(np.int64),
            sites=blk["sites"], marks=blk["marks"],
        ))
    return _concat(parts)


def sample_critical_soup(domain: LatticeDomain, lam: float, maxlen: int, seed: int) -> LoopSoupRealization:
    """One critical soup (no killing inside the domain)."""
    return sample_soups(domain, lam, maxlen, seed, replicas=1).realization(0)


def sample_massive_soup(domain: LatticeDomain, lam: float, maxlen: int, seed: int, m) -> LoopSoupRealization:
    """One soup sampled directly with killing rates ``4 (exp(m^2) - 1)``."""
    k = killing_from_mass(domain, m)
    return sample_soups(domain, lam, maxlen, seed, replicas=1, k=k).realization(0)


def _mass_values(domain: LatticeDomain, m) -> np.ndarray:
    if callable(m):
        vals = np.asarray(m(domain.sites[:, 0], domain.sites[:, 1]), dtype=float)
        vals = np.broadcast_to(vals, (domain.n,))
    else:
        vals = np.asarray(m, dtype=float)
        vals = np.full(domain.n, float(vals)) if vals.ndim == 0 else vals
    if vals.shape != (domain.n,) or np.any(~np.isfinite(vals)):
        raise ValueError("mass must be defined and finite on every domain site")
    if np.any(vals < 0):
        raise ValueError("mass must be nonnegative")
    return vals


def thin_to_massive(soup: SoupBatch | LoopSoupRealization, m):
    """Remove loop ``g`` iff ``sum_i m(g(i))^2 > T_g``.

    The result is a soup with killing rates ``4 (exp(m^2) - 1)``.  The
    exponent is a sum over all visits, so the decision does not depend on
    which rotation represents the loop.
    """
    mvals = _mass_values(soup.domain, m)
    if np.any(soup.killing != 0):
        raise ValueError("thinning applies to critical soups")
    k = killing_from_mass(soup.domain, mvals)
    if isinstance(soup, LoopSoupRealization):
        keep = []
        for loop, T in zip(soup.loops, soup.marks):
            R = sum(mvals[soup.domain.index(s)] ** 2 for s in loop.canonical)
            keep.append(R <= T)
        keep = np.asarray(keep, dtype=bool)
        return replace(
            soup,
            loops=tuple(l for l, kp in zip(soup.loops, keep) if kp),
            marks=soup.marks[keep],
            killing=k,
        )
    exponent = soup.loop_sum(mvals**2)
    return soup.subset(exponent <= soup.marks, killing=k)


def layered_soup(domain: LatticeDomain, lams: Sequence[float], maxlen: int, seed: int,
                 replicas: int = 1, k=None, workers: int = 1) -> list[SoupBatch]:
    """Soups at increasing intensities built by Poisson superposition.

    Layer ``i`` holds intensity ``lams[i] - lams[i-1]`` and is sampled from
    its own stream; the soup at ``lams[i]`` is the union of layers ``0..i``,
    so it contains every loop of the soup at ``lams[i-1]``.
    """
    lams = [float(l) for l in lams]
    if not lams or lams[0] <= 0 or any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("intensities must be positive and strictly ascending")
    out, layers = [], []
    prev = 0.0
    for i, lam in enumerate(lams):
        layer = sample_soups(domain, lam - prev, maxlen, seed, replicas, k=k, workers=workers,
                             stream_name=f"layer-{i}")
        layers.append(replace(layer, layer=np.full(len(layer), i, dtype=np.int64)))
        merged = _merge_layers(layers)
        out.append(replace(merged, lam=lam))
        prev = lam
    return out


def _merge_layers(layers: list[SoupBatch]) -> SoupBatch:
    base = layers[0]
    replica = np.concatenate([b.replica for b in layers])
    length = np.concatenate([b.length for b in layers])
    layer = np.concatenate([b.layer for b in layers])
    marks = np.concatenate([b.marks for b in layers])
    step_chunks = [b.sites[b.offsets[i]:b.offsets[i + 1]] for b in layers for i in range(len(b))]
    order = np.lexsort((layer, replica))
    lengths = length[order]
    sites = np.concatenate([step_chunks[i] for i in order]) if len(order) else np.zeros(0, dtype=np.int64)
    return replace(
        base, replica=replica[order], length=lengths,
        offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64),
        sites=sites.astype(np.int64), marks=marks[order], layer=layer[order],
    )


@dataclass(frozen=True)
class RescaledLoop:
    """Loop on the lattice ``Z^2 / N`` in rescaled time.

    ``points`` holds ``|g| + 1`` positions (closed); consecutive points are
    ``duration / |g|`` apart in time.
    """

    points: np.ndarray
    duration: float

    @property
    def diameter(self) -> float:
        return loop_diameter(self.points)


def loop_diameter(points: np.ndarray) -> float:
    """Largest distance between two points of a planar path."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 2:
        return 0.0
    if len(pts) > 3:
        try:
            from scipy.spatial import ConvexHull

            pts = pts[ConvexHull(pts).vertices]
        except Exception:
            pass
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def rescale_soup(soup: SoupBatch | LoopSoupRealization, N: int, replica: int = 0) -> list[RescaledLoop]:
    """Map each loop to ``t -> N^-1 g(2 N^2 t)``: space by ``1/N``, duration ``|g| / (2 N^2)``."""
    if int(N) != N or N < 2:
        raise ValueError("N must be an integer >= 2")
    if isinstance(soup, SoupBatch):
        soup = soup.realization(replica)
    out = []
    for loop in soup.loops:
        pts = np.asarray(loop.canonical + loop.canonical[:1], dtype=float) / N
        out.append(RescaledLoop(points=pts, duration=len(loop) / (2.0 * N * N)))
    return out


def plane_return_probability(n: np.ndarray) -> np.ndarray:
    """Return probability of simple random walk on Z^2 after ``2n`` steps: ``(C(2n,n)/4^n)^2``."""
    n = np.asarray(n, dtype=float)
    log_c = gammaln(2 * n + 1) - 2 * gammaln(n + 1) - 2 * n * np.log(2.0)
    return np.exp(2 * log_c)


@dataclass(frozen=True, eq=False)
class PlaneWalkSoup:
    """Rescaled critical walk soup restricted to an open box, loops stored flat.

    ``points`` stacks the visited positions (in units of ``1/N``) of all
    loops without the closing point; loop ``i`` occupies
    ``points[offsets[i]:offsets[i+1]]``.
    """

    N: int
    lam: float
    box: tuple[float, float, float, float]
    t_min: float
    t_max: float
    n_replicas: int
    replica: np.ndarray
    length: np.ndarray
    offsets: np.ndarray
    points: np.ndarray
    marks: np.ndarray
    proposed: np.ndarray

    def __len__(self) -> int:
        return len(self.replica)

    @property
    def duration(self) -> np.ndarray:
        return self.length / (2.0 * self.N**2)

    def loop_points(self, i: int, closed: bool = True) -> np.ndarray:
        pts = self.points[self.offsets[i] : self.offsets[i + 1]]
        return np.vstack([pts, pts[:1]]) if closed else pts

    def diameters(self) -> np.ndarray:
        return np.array([loop_diameter(self.loop_points(i, closed=False)) for i in range(len(self))])

    def loop_sum(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0)
        vals = np.broadcast_to(np.asarray(f(self.points[:, 0], self.points[:, 1]), dtype=float),
                               (len(self.points),))
        return np.add.reduceat(vals, self.offsets[:-1])

    def counts(self) -> np.ndarray:
        return np.bincount(self.replica, minlength=self.n_replicas)

    def subset(self, keep: np.ndarray) -> "PlaneWalkSoup":
        keep = np.asarray(keep, dtype=bool)
        lengths = self.length[keep]
        return replace(
            self, replica=self.replica[keep], length=lengths,
            offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64),
            points=self.points[np.repeat(keep, self.length)], marks=self.marks[keep],
        )


def sample_plane_walk_soup(box: Sequence[float], N: int, lam: float, t_min: float, t_max: float,
                           seed: int, replicas: int = 1, stream_name: str = "plane-walk") -> PlaneWalkSoup:
    """Critical walk soup on ``Z^2 / N`` inside the open box, durations in ``[t_min, t_max]``.

    Loops are rooted at every lattice point of the box with lengths
    ``2n`` and Poisson means ``lam * q_2n / 2n``, where ``q_2n`` is the
    plane return probability.  A bridge of ``Z^2`` is a pair of independent
    ``+-1`` bridges in the rotated coordinates ``x + y`` and ``x - y``.
    Loops leaving the box are discarded (restriction).
    """
    x0, y0, x1, y1 = (float(v) for v in box)
    if int(N) != N or N < 2:
        raise ValueError("N must be an integer >= 2")
    n_lo = max(1, int(np.ceil(t_min * N * N - 1e-9)))
    n_hi = int(np.floor(t_max * N * N + 1e-9))
    if n_hi < n_lo:
        raise ValueError("no lattice durations in [t_min, t_max]")
    ix = np.arange(int(np.floor(x0 * N)) + 1, int(np.ceil(x1 * N)))
    iy = np.arange(int(np.floor(y0 * N)) + 1, int(np.ceil(y1 * N)))
    ix = ix[(ix > x0 * N) & (ix < x1 * N)]
    iy = iy[(iy > y0 * N) & (iy < y1 * N)]
    gx, gy = np.meshgrid(ix, iy)
    roots = np.stack([gx.ravel(), gy.ravel()], axis=1)
    ns = np.arange(n_lo, n_hi + 1)
    w = lam * plane_return_probability(ns) / (2.0 * ns)
    mean_total = len(roots) * w.sum()
    rng = stream(seed, stream_name)
    counts = rng.poisson(mean_total, size=replicas)
    total = int(counts.sum())
    replica = np.repeat(np.arange(replicas), counts)
    root_idx = rng.integers(0, len(roots), size=total)
    n_choice = ns[np.searchsorted(np.cumsum(w) / w.sum(), rng.random(total), side="right").clip(0, len(ns) - 1)]
    marks = rng.exponential(size=total)
    keep = np.zeros(total, dtype=bool)
    chunks = []
    lo = np.array([x0 * N, y0 * N])
    hi = np.array([x1 * N, y1 * N])
    for i in range(total):
        n = int(n_choice[i])
        base = np.repeat(np.array([1, -1], dtype=np.int8), n)
        du = rng.permutation(base)
        dv = rng.permutation(base)
        steps = np.stack([(du + dv) // 2, (du - dv) // 2], axis=1).astype(np.int64)
        path = roots[root_idx[i]] + np.concatenate([[[0, 0]], np.cumsum(steps[:-1], axis=0)])
        if np.all(path > lo) and np.all(path < hi):
            keep[i] = True
            chunks.append(path / N)
    lengths = 2 * n_choice[keep]
    return PlaneWalkSoup(
        N=int(N), lam=float(lam), box=(x0, y0, x1, y1), t_min=float(t_min), t_max=float(t_max),
        n_replicas=int(replicas), replica=replica[keep], length=lengths.astype(np.int64),
        offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64),
        points=np.concatenate(chunks) if chunks else np.zeros((0, 2)),
        marks=marks[keep], proposed=counts,
    )


def dump_soup(soup: SoupBatch, path: str | None = None, header: dict | None = None) -> str:
    """JSON dump: header, then one entry per loop (canonical coordinates, mark, replica)."""
    head = {
        "format": SOUP_FORMAT,
        "version": SOUP_VERSION,
        "domain": soup.domain.to_spec(),
        "lambda": soup.lam,
        "killing": soup.killing.tolist(),
        "maxlen": soup.maxlen,
        "seed": soup.seed,
        "replicas": soup.n_replicas,
    }
    if header:
        head.update(header)
    coords = soup.domain.sites
    loops = []
    for i in range(len(soup)):
        canon = UnrootedLoop(coords[soup.loop_sites(i)]).canonical
        loops.append({
            "replica": int(soup.replica[i]),
            "sites": [list(s) for s in canon],
            "mark": float(soup.marks[i]),
        })
    text = json.dumps({"header": head, "loops": loops}, indent=None, separators=(",", ":"))
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_soup(source: str) -> SoupBatch:
    """Inverse of :func:`dump_soup`; ``source`` is a path or the JSON text."""
    text = source
    if not source.lstrip().startswith("{"):
        with open(source) as fh:
            text = fh.read()
    payload = json.loads(text)
    head = payload["header"]
    if head.get("format") != SOUP_FORMAT or head.get("version") != SOUP_VERSION:
        raise ValueError("not a loopsoup soup dump (format/version mismatch)")
    domain = build_domain(head["domain"])
    loops = payload["loops"]
    idx = [np.array([domain.index(s) for s in item["sites"]], dtype=np.int64) for item in loops]
    length = np.array([len(a) for a in idx], dtype=np.int64)
    return SoupBatch(
        domain=domain, killing=np.asarray(head["killing"], dtype=float), lam=float(head["lambda"]),
        maxlen=int(head["maxlen"]), n_replicas=int(head["replicas"]), seed=int(head["seed"]),
        replica=np.array([item["replica"] for item in loops], dtype=np.int64), length=length,
        offsets=np.concatenate([[0], np.cumsum(length)]).astype(np.int64),
        sites=np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64),
        marks=np.array([item["mark"] for item in loops], dtype=float),
    )
