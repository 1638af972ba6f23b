"""Massive Brownian loop soups with a duration cutoff.

The rooted loop measure has density ``1 / (2 pi t^2)`` in duration per unit
area, so it is infinite near ``t = 0``; soups here keep durations in
``[t0, t_max]``.  A loop of duration ``t`` rooted at ``z`` is
``z + sqrt(t) B(s / t)`` for a standard planar Brownian bridge ``B``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

import numpy as np

from .rng import stream

__all__ = [
    "PlaneDomain",
    "BrownianLoop",
    "BrownianSoupConfig",
    "BrownianSoup",
    "standard_bridge",
    "propose_loops",
    "sample_brownian_soup",
    "killing_functional",
    "thin_to_massive_brownian",
    "conformal_transport",
    "mass_transport",
    "dump_brownian_soup",
    "load_brownian_soup",
]

MIN_RESOLUTION = 16
STEP_FLAG = 6.0


@dataclass(frozen=True)
class PlaneDomain:
    """Open rectangle ``{"rectangle": {x0, y0, x1, y1}}`` or disc ``{"disc": {cx, cy, r}}``."""

    kind: str
    params: tuple[float, ...]

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any] | "PlaneDomain") -> "PlaneDomain":
        if isinstance(spec, PlaneDomain):
            return spec
        (kind, args), = spec.items()
        if kind == "rectangle":
            p = tuple(float(args[k]) for k in ("x0", "y0", "x1", "y1"))
        elif kind == "disc":
            p = tuple(float(args[k]) for k in ("cx", "cy", "r"))
        else:
            raise ValueError(f"unknown plane domain {kind!r}")
        return cls(kind, p)

    def to_spec(self) -> dict:
        keys = ("x0", "y0", "x1", "y1") if self.kind == "rectangle" else ("cx", "cy", "r")
        return {self.kind: dict(zip(keys, self.params))}

    @property
    def box(self) -> tuple[float, float, float, float]:
        if self.kind == "rectangle":
            return self.params
        cx, cy, r = self.params
        return (cx - r, cy - r, cx + r, cy + r)

    @property
    def box_area(self) -> float:
        x0, y0, x1, y1 = self.box
        return max(x1 - x0, 0.0) * max(y1 - y0, 0.0)

    @property
    def area(self) -> float:
        if self.kind == "rectangle":
            return self.box_area
        return float(np.pi * self.params[2] ** 2)

    @property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.box
        return float(np.hypot(x1 - x0, y1 - y0)) if self.kind == "rectangle" else 2.0 * self.params[2]

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.params
            return (pts[..., 0] > x0) & (pts[..., 0] < x1) & (pts[..., 1] > y0) & (pts[..., 1] < y1)
        cx, cy, r = self.params
        return (pts[..., 0] - cx) ** 2 + (pts[..., 1] - cy) ** 2 < r * r

    def scaled(self, a: float) -> "PlaneDomain":
        return PlaneDomain(self.kind, tuple(a * v for v in self.params[:4]) if self.kind == "rectangle"
                           else (a * self.params[0], a * self.params[1], a * self.params[2]))


@dataclass(frozen=True, eq=False)
class BrownianLoop:
    """Sampled rooted loop.

    ``path[j]`` is the position at time ``times[j]``; ``times`` runs from 0
    to ``duration`` (uniform unless the loop was conformally transported).
    """

    root: np.ndarray
    duration: float
    path: np.ndarray
    times: np.ndarray | None = None
    mark: float = float("nan")

    def __post_init__(self):
        if self.times is None:
            object.__setattr__(self, "times", np.linspace(0.0, self.duration, len(self.path)))

    @property
    def resolution(self) -> int:
        return len(self.path) - 1

    @property
    def diameter(self) -> float:
        from .soup import loop_diameter

        return loop_diameter(self.path)

    def rough_steps(self) -> bool:
        """True if some step exceeds ``6 sqrt(dt)`` per coordinate, which a bridge rarely does."""
        d = np.abs(np.diff(self.path, axis=0))
        dt = np.diff(self.times)
        return bool(np.any(d > STEP_FLAG * np.sqrt(dt)[:, None] * np.sqrt(self.duration / max(self.times[-1], 1e-300))))


@dataclass(frozen=True)
class BrownianSoupConfig:
    domain: Mapping[str, Any]
    lam: float
    t0: float
    t_max: float = float("inf")
    mass: float | None = None
    h: float = 0.05
    M_max: int = 8192
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.t0 > 0:
            raise ValueError("duration cutoff t0 must be positive")
        if not self.t_max > self.t0:
            raise ValueError("t_max must exceed t0")
        if not self.h > 0:
            raise ValueError("spatial step h must be positive")
        if self.M_max < 64:
            raise ValueError("M_max must be >= 64")

    @property
    def plane_domain(self) -> PlaneDomain:
        return PlaneDomain.from_spec(self.domain)

    def resolution(self, t: np.ndarray) -> np.ndarray:
        """Path resolution ``max(64, ceil(t / h^2))``, capped at ``M_max``."""
        return np.minimum(np.maximum(64, np.ceil(np.asarray(t) / self.h**2)), self.M_max).astype(np.int64)

    def expected_count(self) -> float:
        """Mean number of proposed (pre-restriction) loops."""
        inv = 1.0 / self.t0 - (0.0 if np.isinf(self.t_max) else 1.0 / self.t_max)
        return self.lam * self.plane_domain.box_area * inv / (2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class BrownianSoup:
    loops: tuple[BrownianLoop, ...]
    config: BrownianSoupConfig
    proposed: int
    proposed_durations: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.loops)

    @property
    def durations(self) -> np.ndarray:
        return np.array([l.duration for l in self.loops])

    @property
    def marks(self) -> np.ndarray:
        return np.array([l.mark for l in self.loops])


def standard_bridge(M: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Planar Brownian bridge on ``[0, 1]`` at ``M + 1`` equally spaced times.

    ``B_j = W_j - (j / M) W_M`` with ``W`` a random walk of ``N(0, 1/M)``
    increments.  Shape ``(M + 1, 2)`` or ``(size, M + 1, 2)``.
    """
    if M < 1:
        raise ValueError("resolution must be >= 1")
    n = 1 if size is None else size
    inc = rng.standard_normal((n, M, 2)) / np.sqrt(M)
    W = np.concatenate([np.zeros((n, 1, 2)), np.cumsum(inc, axis=1)], axis=1)
    s = np.linspace(0.0, 1.0, M + 1)[None, :, None]
    B = W - s * W[:, -1:, :]
    B[:, -1, :] = 0.0
    return B[0] if size is None else B


def propose_loops(config: BrownianSoupConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roots, durations and Exp(1) marks of the pre-restriction loops."""
    count = int(rng.poisson(config.expected_count()))
    x0, y0, x1, y1 = config.plane_domain.box
    roots = np.column_stack([rng.uniform(x0, x1, count), rng.uniform(y0, y1, count)])
    u = rng.random(count)
    inv_max = 0.0 if np.isinf(config.t_max) else 1.0 / config.t_max
    durations = 1.0 / (inv_max + u * (1.0 / config.t0 - inv_max))
    marks = rng.exponential(size=count)
    return roots, durations, marks


def sample_brownian_soup(config: BrownianSoupConfig, replica: int = 0,
                         rng: np.random.Generator | None = None) -> BrownianSoup:
    """Critical soup restricted to the domain, with an Exp(1) mark per loop.

    Proposes ``Poisson(lam * box_area * (1/t0 - 1/t_max) / 2 pi)`` loops with
    uniform roots in the bounding box and durations of density ``~ t^-2`` on
    ``[t0, t_max]``; loops whose sampled path leaves the domain are dropped.
    Use :func:`thin_to_massive_brownian` with ``config.mass`` for a massive
    soup.
    """
    dom = config.plane_domain
    if dom.box_area <= 0:
        raise ValueError("domain has zero area")
    if rng is None:
        rng = stream(config.seed, "brownian", replica)
    roots, durations, marks = propose_loops(config, rng)
    count = len(durations)
    M = config.resolution(durations)
    loops: list[BrownianLoop | None] = [None] * count
    for m in np.unique(M):
        idx = np.flatnonzero(M == m)
        for c0 in range(0, len(idx), max(1, 200_000 // int(m))):
            chunk = idx[c0:c0 + max(1, 200_000 // int(m))]
            B = standard_bridge(int(m), rng, size=len(chunk))
            paths = roots[chunk, None, :] + np.sqrt(durations[chunk])[:, None, None] * B
            inside = dom.contains(paths).all(axis=1)
            for j, i in enumerate(chunk):
                if inside[j]:
                    loops[i] = BrownianLoop(root=roots[i], duration=float(durations[i]), path=paths[j],
                                            mark=float(marks[i]))
    kept = tuple(l for l in loops if l is not None)
    return BrownianSoup(loops=kept, config=config, proposed=count, proposed_durations=durations)


def _mass_squared(m, pts: np.ndarray) -> np.ndarray:
    if m is None:
        return np.zeros(len(pts))
    if callable(m):
        vals = np.asarray(m(pts[:, 0], pts[:, 1]), dtype=float)
        vals = np.broadcast_to(vals, (len(pts),))
    else:
        vals = np.full(len(pts), float(m))
    if np.any(~np.isfinite(vals)):
        raise ValueError("mass function undefined on the loop")
    return vals**2


def killing_functional(loop: BrownianLoop, m) -> float:
    """``R_m = integral of m^2 along the loop``, trapezoid rule on the sampled times."""
    m2 = _mass_squared(m, loop.path)
    dt = np.diff(loop.times)
    return float(np.sum(0.5 * (m2[1:] + m2[:-1]) * dt))


def thin_to_massive_brownian(soup: BrownianSoup, m) -> BrownianSoup:
    """Remove loop ``g`` iff ``R_m(g) > T_g`` (its stored Exp(1) mark)."""
    marks = soup.marks
    if len(marks) and np.any(np.isnan(marks)):
        raise ValueError("soup has no marks")
    if callable(m) or (m is not None and float(m) != 0.0):
        keep = tuple(l for l in soup.loops if killing_functional(l, m) <= l.mark)
    else:
        keep = soup.loops
    return replace(soup, loops=keep)


def conformal_transport(loop: BrownianLoop, f: Callable, fprime: Callable) -> BrownianLoop:
    """Image of ``loop`` under ``f`` with time ``s(t) = int |f'(g(u))|^2 du``.

    ``f`` and ``fprime`` act on complex arrays.  The transported loop keeps
    the (now non-uniform) time stamps ``s(t_j)``.
    """
    z = loop.path[:, 0] + 1j * loop.path[:, 1]
    dz = np.abs(np.asarray(fprime(z)))
    if np.any(dz == 0) or np.any(~np.isfinite(dz)):
        raise ValueError("|f'| vanishes or is undefined on the loop")
    w = np.asarray(f(z))
    speed = dz**2
    s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(loop.times))])
    path = np.column_stack([w.real, w.imag])
    return BrownianLoop(root=path[0].copy(), duration=float(s[-1]), path=path, times=s, mark=loop.mark)


def mass_transport(m: Callable | float, f_inv: Callable, fprime: Callable) -> Callable:
    """Transported mass ``w -> |f'(f^-1(w))|^-1 m(f^-1(w))`` as a function of ``(x, y)``."""

    def m_tilde(x, y):
        w = np.asarray(x, dtype=float) + 1j * np.asarray(y, dtype=float)
        z = np.asarray(f_inv(w))
        if np.any(~np.isfinite(z)):
            raise ValueError("point outside the range of the map")
        mz = m(z.real, z.imag) if callable(m) else np.full(z.shape, float(m))
        return np.asarray(mz, dtype=float) / np.abs(np.asarray(fprime(z)))

    return m_tilde


def dump_brownian_soup(soup: BrownianSoup, path: str | None = None) -> str:
    cfg = soup.config
    head = {
        "format": "loopsoup.brownian",
        "version": 1,
        "domain": cfg.plane_domain.to_spec(),
        "lambda": cfg.lam,
        "t0": cfg.t0,
        "t_max": None if np.isinf(cfg.t_max) else cfg.t_max,
        "mass": cfg.mass,
        "h": cfg.h,
        "seed": cfg.seed,
        "proposed": soup.proposed,
    }
    loops = [{
        "root": l.root.tolist(), "duration": l.duration, "mark": l.mark,
        "times": l.times.tolist(), "path": l.path.tolist(),
    } for l in soup.loops]
    text = json.dumps({"header": head, "loops": loops}, separators=(",", ":"))
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_brownian_soup(source: str) -> BrownianSoup:
    text = source
    if not source.lstrip().startswith("{"):
        with open(source) as fh:
            text = fh.read()
    payload = json.loads(text)
    h = payload["header"]
    if h.get("format") != "loopsoup.brownian":
        raise ValueError("not a Brownian soup dump")
    cfg = BrownianSoupConfig(domain=h["domain"], lam=h["lambda"], t0=h["t0"],
                             t_max=float("inf") if h["t_max"] is None else h["t_max"],
                             mass=h["mass"], h=h["h"], seed=h["seed"])
    loops = tuple(BrownianLoop(root=np.asarray(l["root"]), duration=l["duration"], path=np.asarray(l["path"]),
                               times=np.asarray(l["times"]), mark=l["mark"]) for l in payload["loops"])
    return BrownianSoup(loops=loops, config=cfg, proposed=h["proposed"])
