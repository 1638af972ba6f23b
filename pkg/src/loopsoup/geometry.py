"""Clusters, filled clusters, carpets and vacant-set crossings on an ε-raster.

Paths are rasterized by densifying every segment to steps of at most ε/2
and marking the cells visited.  Two loops intersect iff they share a cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator

from .soup import loop_diameter

__all__ = [
    "Grid",
    "ClusterSet",
    "rasterize",
    "rasterize_loops",
    "build_clusters",
    "fill_cluster",
    "carpet",
    "filled_cluster_at",
    "crossing_event",
    "survival_curve",
    "cluster_diameter_tail",
    "DiameterTailFit",
    "box_counts",
    "carpet_dimension",
    "BoxCountingDimension",
    "hausdorff_prediction",
    "write_clusters_csv",
    "write_table_csv",
]


@dataclass(frozen=True)
class Grid:
    """Square cells of side ``eps`` covering ``[x0, x0 + nx eps) x [y0, y0 + ny eps)``."""

    x0: float
    y0: float
    eps: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one cell")

    @classmethod
    def covering(cls, box: Sequence[float], eps: float) -> "Grid":
        x0, y0, x1, y1 = map(float, box)
        return cls(x0, y0, eps, max(1, int(np.ceil((x1 - x0) / eps - 1e-9))),
                   max(1, int(np.ceil((y1 - y0) / eps - 1e-9))))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def cell_of(self, pts: np.ndarray) -> np.ndarray:
        """Linear cell index of each point, ``-1`` outside the grid."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        i = np.floor((pts[:, 0] - self.x0) / self.eps).astype(np.int64)
        j = np.floor((pts[:, 1] - self.y0) / self.eps).astype(np.int64)
        ok = (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny)
        return np.where(ok, j * self.nx + i, -1)

    def border(self) -> np.ndarray:
        b = np.zeros(self.shape, dtype=bool)
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
        return b


def _densify(points: np.ndarray, eps: float, closed: bool = True) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if closed and len(pts) > 1 and not np.array_equal(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[:1]])
    if len(pts) < 2:
        return pts
    seg = np.diff(pts, axis=0)
    n = np.maximum(1, np.ceil(np.hypot(seg[:, 0], seg[:, 1]) / (0.5 * eps))).astype(np.int64)
    start = np.repeat(np.arange(len(seg)), n)
    frac = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    out = pts[start] + (frac / n[start])[:, None] * seg[start]
    return np.vstack([out, pts[-1:]])


def rasterize(points: np.ndarray, grid: Grid) -> np.ndarray:
    """Sorted cell indices visited by a closed path (cells off the grid are dropped)."""
    cells = grid.cell_of(_densify(points, grid.eps))
    return np.unique(cells[cells >= 0])


def rasterize_loops(paths: Sequence[np.ndarray], grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Unique ``(loop, cell)`` incidence pairs for a list of closed paths."""
    if len(paths) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    closed = [np.vstack([p, p[:1]]) for p in map(np.asarray, paths)]
    pts = np.vstack(closed)
    lens = np.array([len(p) for p in closed])
    owner = np.repeat(np.arange(len(closed)), lens)
    seg = np.diff(pts, axis=0)
    same = owner[1:] == owner[:-1]
    n = np.where(same, np.maximum(1, np.ceil(np.hypot(seg[:, 0], seg[:, 1]) / (0.5 * grid.eps))), 0).astype(np.int64)
    start = np.repeat(np.arange(len(seg)), n)
    frac = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    dense = pts[start] + (frac / np.maximum(n[start], 1))[:, None] * seg[start]
    lid = owner[start]
    cells = grid.cell_of(dense)
    ok = cells >= 0
    key = np.unique(lid[ok] * grid.size + cells[ok])
    return key // grid.size, key % grid.size


@dataclass(frozen=True, eq=False)
class ClusterSet:
    """Partition of loops into clusters of mutually intersecting loops.

    ``labels[i]`` is the cluster of loop ``i``; ``cells[c]`` the sorted
    raster cells of cluster ``c``.  ``touches_frame[c]`` marks clusters that
    reach the grid border, whose filling is not defined.
    """

    grid: Grid
    labels: np.ndarray
    cells: list[np.ndarray]
    bbox: np.ndarray
    touches_frame: np.ndarray
    paths: list = field(default_factory=list, repr=False)
    _filled: dict = field(default_factory=dict, repr=False)
    _diam: dict = field(default_factory=dict, repr=False)

    @property
    def n_clusters(self) -> int:
        return len(self.cells)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    def cluster_diameter(self, c: int) -> float:
        """Diameter of the union of the cluster's paths."""
        if c not in self._diam:
            self._diam[c] = loop_diameter(np.vstack([self.paths[i] for i in self.members(c)]))
        return self._diam[c]

    @property
    def diameter(self) -> np.ndarray:
        return np.array([self.cluster_diameter(c) for c in range(self.n_clusters)])

    def filled(self, c: int) -> np.ndarray:
        if c not in self._filled:
            self._filled[c] = fill_cluster(self.cells[c], self.grid)
        return self._filled[c]


def _paths(soup) -> list[np.ndarray]:
    if hasattr(soup, "loops"):
        return [l.path if hasattr(l, "path") else np.asarray(l.points) for l in soup.loops]
    if hasattr(soup, "loop_points"):
        return [soup.loop_points(i) for i in range(len(soup.length))]
    return [np.asarray(p, dtype=float) for p in soup]


def build_clusters(soup, eps: float | None = None, grid: Grid | None = None,
                   box: Sequence[float] | None = None) -> ClusterSet:
    """Clusters of a soup (Brownian soup, list of loops, or list of paths).

    Either a ``grid`` or ``eps`` plus ``box`` (defaults to the paths' extent).
    """
    paths = _paths(soup)
    if grid is None:
        if eps is None:
            raise ValueError("eps or grid required")
        if box is None:
            if not paths:
                box = (0.0, 0.0, eps, eps)
            else:
                allp = np.vstack(paths)
                lo, hi = allp.min(axis=0) - eps, allp.max(axis=0) + eps
                box = (lo[0], lo[1], hi[0], hi[1])
        grid = Grid.covering(box, eps)
    n = len(paths)
    lid, cell = rasterize_loops(paths, grid)
    ucell, cinv = np.unique(cell, return_inverse=True)
    m = len(ucell)
    adj = sp.coo_matrix((np.ones(len(lid)), (lid, n + cinv)), shape=(n + m, n + m))
    _, comp = connected_components(adj, directed=False)
    # relabel clusters in order of first loop
    _, first, loop_lab = np.unique(comp[:n], return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    labels = order[loop_lab].astype(np.int64) if n else np.zeros(0, np.int64)
    nc = int(labels.max()) + 1 if n else 0
    cl_of_cell = labels[lid]
    srt = np.lexsort((cell, cl_of_cell))
    bounds = np.searchsorted(cl_of_cell[srt], np.arange(nc + 1))
    cells = [np.unique(cell[srt[bounds[c]:bounds[c + 1]]]) for c in range(nc)]
    bbox = np.full((nc, 4), np.nan)
    if n:
        lo = np.array([p.min(axis=0) for p in paths])
        hi = np.array([p.max(axis=0) for p in paths])
        for k, f in enumerate((np.minimum, np.minimum, np.maximum, np.maximum)):
            col = np.full(nc, np.inf if k < 2 else -np.inf)
            f.at(col, labels, (lo if k < 2 else hi)[:, k % 2])
            bbox[:, k] = col
    gx0, gy0 = grid.x0, grid.y0
    gx1, gy1 = gx0 + grid.nx * grid.eps, gy0 + grid.ny * grid.eps
    e = grid.eps
    touches = (bbox[:, 0] < gx0 + e) | (bbox[:, 1] < gy0 + e) | (bbox[:, 2] >= gx1 - e) | (bbox[:, 3] >= gy1 - e)
    return ClusterSet(grid=grid, labels=labels, cells=cells, bbox=bbox, touches_frame=touches, paths=paths)


def fill_cluster(cells: np.ndarray, grid: Grid) -> np.ndarray:
    """Cells of the filled cluster: the cluster plus every cell not reachable from outside.

    The outside is flooded with 4-connectivity, so a diagonal gap in a
    rasterized curve does not leak.
    """
    cells = np.asarray(cells, dtype=np.int64)
    if len(cells) == 0:
        return cells
    i, j = cells % grid.nx, cells // grid.nx
    i0, j0 = i.min(), j.min()
    sub = np.zeros((j.max() - j0 + 3, i.max() - i0 + 3), dtype=bool)
    sub[j - j0 + 1, i - i0 + 1] = True
    full = ndi.binary_fill_holes(sub)
    jj, ii = np.nonzero(full)
    return np.sort((jj - 1 + j0) * grid.nx + (ii - 1 + i0))


def carpet(clusters: ClusterSet) -> np.ndarray:
    """Boolean raster, True on cells met by no filled cluster.

    Clusters touching the frame contribute their own cells only.
    """
    g = clusters.grid
    cover = np.zeros(g.size, dtype=bool)
    for c in range(clusters.n_clusters):
        cover[clusters.cells[c] if clusters.touches_frame[c] else clusters.filled(c)] = True
    return ~cover.reshape(g.shape)


def filled_cluster_at(clusters: ClusterSet, z: Sequence[float]) -> tuple[int, float]:
    """Outermost filled cluster containing the cell of ``z``: ``(id, diameter)``, or ``(-1, 0.0)``.

    Frame-touching clusters are skipped, so their loops do not count.
    """
    g = clusters.grid
    cz = int(g.cell_of(np.asarray(z, dtype=float))[0])
    if cz < 0:
        raise ValueError("point outside the grid")
    best, best_d = -1, 0.0
    zx, zy = z
    for c in range(clusters.n_clusters):
        if clusters.touches_frame[c]:
            continue
        x0, y0, x1, y1 = clusters.bbox[c]
        if not (x0 - g.eps <= zx <= x1 + g.eps and y0 - g.eps <= zy <= y1 + g.eps):
            continue
        f = clusters.filled(c)
        k = np.searchsorted(f, cz)
        if k < len(f) and f[k] == cz:
            d = clusters.cluster_diameter(c)
            if d > best_d:
                best, best_d = c, d
    return best, best_d


def crossing_event(soup, rect: Sequence[float], eps: float) -> bool:
    """True iff the vacant set crosses ``rect = (x0, y0, x1, y1)`` between its short sides.

    Loops are rasterized on an ε-grid over the rectangle; the vacant cells
    are 4-connected components of unvisited cells.
    """
    x0, y0, x1, y1 = map(float, rect)
    grid = Grid.covering(rect, eps)
    occ = np.zeros(grid.size, dtype=bool)
    near = [p for p in _paths(soup)
            if not (p[:, 0].max() < x0 or p[:, 0].min() > x1 or p[:, 1].max() < y0 or p[:, 1].min() > y1)]
    occ[rasterize_loops(near, grid)[1]] = True
    vacant = ~occ.reshape(grid.shape)
    if x1 - x0 < y1 - y0:
        vacant = vacant.T
    lab, _ = ndi.label(vacant)
    left = np.unique(lab[:, 0])
    right = np.unique(lab[:, -1])
    common = np.intersect1d(left[left > 0], right[right > 0])
    return bool(len(common))


def survival_curve(diameters: np.ndarray, L_grid: np.ndarray) -> np.ndarray:
    """``P(diam >= L)`` for every ``L`` in ``L_grid``."""
    d = np.sort(np.asarray(diameters, dtype=float))
    return 1.0 - np.searchsorted(d, np.asarray(L_grid, dtype=float), side="left") / len(d)


def _fit_slope(L: np.ndarray, S: np.ndarray, hi: float, lo: float) -> float:
    sel = (S <= hi) & (S >= lo) & (S > 0)
    if sel.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(L[sel], np.log(S[sel]), 1)
    return float(slope)


def cluster_diameter_tail(diameters: np.ndarray, L_grid: np.ndarray, hi: float = 0.30, lo: float = 0.05,
                          n_boot: int = 200, seed: int = 0) -> dict:
    """Survival curve of filled-cluster diameters and the fitted decay length.

    The log-survival is fitted by least squares where the survival lies in
    ``[lo, hi]``; ``xi = -1 / slope``.  ``xi_se`` is a bootstrap standard
    error over replicas.  All-zero diameters leave ``xi`` undefined (nan).
    """
    d = np.asarray(diameters, dtype=float)
    if len(d) < 30:
        raise ValueError("need at least 30 replicas")
    L = np.asarray(L_grid, dtype=float)
    S = survival_curve(d, L)
    slope = _fit_slope(L, S, hi, lo) if np.any(d > 0) else float("nan")
    xi = -1.0 / slope if np.isfinite(slope) and slope < 0 else float("nan")
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot if np.isfinite(xi) else 0):
        s = _fit_slope(L, survival_curve(rng.choice(d, len(d)), L), hi, lo)
        if np.isfinite(s) and s < 0:
            boots.append(-1.0 / s)
    xi_se = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    logS = np.log(np.where(S > 0, S, np.nan))
    fin = np.isfinite(logS)
    monotone = bool(np.all(np.diff(logS[fin]) <= 0))
    return {"L": L, "survival": S, "slope": slope, "xi": xi, "xi_se": xi_se, "monotone": monotone,
            "n_replicas": len(d)}


class DiameterTailFit(BaseEstimator):
    """Estimator wrapper of :func:`cluster_diameter_tail`.

    Parameters
    ----------
    L_grid : array-like
        Diameters at which the survival is evaluated.
    hi, lo : float
        Survival window used in the fit.
    n_boot : int
        Bootstrap resamples for ``xi_se_``.
    random_state : int
    """

    def __init__(self, L_grid=None, hi=0.30, lo=0.05, n_boot=200, random_state=0):
        self.L_grid = L_grid
        self.hi = hi
        self.lo = lo
        self.n_boot = n_boot
        self.random_state = random_state

    def fit(self, X, y=None):
        d = np.asarray(X, dtype=float).ravel()
        L = np.linspace(0, d.max() if d.max() > 0 else 1.0, 50) if self.L_grid is None else self.L_grid
        r = cluster_diameter_tail(d, L, self.hi, self.lo, self.n_boot, self.random_state)
        self.survival_ = r["survival"]
        self.slope_ = r["slope"]
        self.xi_ = r["xi"]
        self.xi_se_ = r["xi_se"]
        self.monotone_ = r["monotone"]
        return self


def box_counts(raster: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Number of ``b x b`` boxes holding at least one True cell, for each ``b``."""
    raster = np.asarray(raster, dtype=bool)
    out = []
    for b in sizes:
        ny, nx = raster.shape[0] // b, raster.shape[1] // b
        if ny == 0 or nx == 0:
            raise ValueError(f"box size {b} exceeds raster")
        r = raster[:ny * b, :nx * b].reshape(ny, b, nx, b)
        out.append(int(r.any(axis=(1, 3)).sum()))
    return np.array(out)


def carpet_dimension(rasters: Sequence[np.ndarray], eps_min: float, sizes: Sequence[int] = (1, 2, 4, 8, 16)) -> dict:
    """Box-count slope of ``log N(eps)`` against ``log(1/eps)``, averaged over replicas.

    Each replica gives a least-squares slope; the estimate is their mean
    with the standard error across replicas.  Rasters with an empty box
    count at some scale (no carpet) are excluded and counted.
    """
    sizes = np.asarray(sizes)
    if len(rasters) < 20:
        raise ValueError("need at least 20 replicas")
    if len(sizes) < 4:
        raise ValueError("need at least 4 resolutions")
    eps = eps_min * sizes
    slopes, tables, excluded = [], [], 0
    for r in rasters:
        n = box_counts(r, sizes)
        if np.any(n == 0):
            excluded += 1
            continue
        tables.append(n)
        slopes.append(np.polyfit(np.log(1.0 / eps), np.log(n), 1)[0])
    if len(slopes) < 2:
        raise ValueError("fewer than 2 usable rasters")
    slopes = np.array(slopes)
    return {"dimension": float(slopes.mean()), "stderr": float(slopes.std(ddof=1) / np.sqrt(len(slopes))),
            "slopes": slopes, "eps": eps, "counts": np.array(tables), "excluded": excluded}


class BoxCountingDimension(BaseEstimator):
    """Estimator wrapper of :func:`carpet_dimension`; ``X`` is a stack of boolean rasters."""

    def __init__(self, eps_min=1.0, sizes=(1, 2, 4, 8, 16)):
        self.eps_min = eps_min
        self.sizes = sizes

    def fit(self, X, y=None):
        r = carpet_dimension(list(X), self.eps_min, self.sizes)
        self.dimension_ = r["dimension"]
        self.stderr_ = r["stderr"]
        self.slopes_ = r["slopes"]
        self.counts_ = r["counts"]
        self.n_excluded_ = r["excluded"]
        return self


def hausdorff_prediction(lam: float) -> float:
    """Predicted carpet dimension ``(187 - 7 l + sqrt(25 + l^2 - 26 l)) / 96`` for ``l`` in [0, 1]."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("intensity must lie in [0, 1]")
    return (187.0 - 7.0 * lam + np.sqrt(25.0 + lam * lam - 26.0 * lam)) / 96.0


def write_clusters_csv(path: str, clusters: ClusterSet) -> None:
    """Rows ``id, size, diameter, filled_area, touches_frame`` (areas in plane units)."""
    sizes = clusters.sizes()
    a = clusters.grid.eps**2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "size", "diameter", "filled_area", "touches_frame"])
        for c in range(clusters.n_clusters):
            area = "" if clusters.touches_frame[c] else repr(len(clusters.filled(c)) * a)
            w.writerow([c, int(sizes[c]), repr(float(clusters.diameter[c])), area, int(clusters.touches_frame[c])])


def write_table_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
