import math

import numpy as np
import pytest

from loopsoup.geometry import (
    BoxCountingDimension,
    DiameterTailFit,
    Grid,
    box_counts,
    build_clusters,
    carpet,
    carpet_dimension,
    cluster_diameter_tail,
    crossing_event,
    filled_cluster_at,
    hausdorff_prediction,
    rasterize,
    survival_curve,
    write_clusters_csv,
)


def circle(cx, cy, r, n=200):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)])


BOX = (-5.0, -5.0, 5.0, 5.0)


def test_grid_cells():
    g = Grid.covering((0, 0, 1, 1), 0.25)
    assert g.shape == (4, 4)
    assert list(g.cell_of(np.array([[0.1, 0.1], [0.9, 0.3], [1.5, 0.0]]))) == [0, 7, -1]
    with pytest.raises(ValueError):
        Grid(0, 0, 0.0, 1, 1)


def test_rasterize_has_no_gaps():
    g = Grid.covering((0, 0, 1, 1), 0.01)
    cells = rasterize(np.array([[0.05, 0.05], [0.95, 0.05]]), g)
    assert len(cells) == 91


def test_disjoint_loops_form_two_clusters():
    cs = build_clusters([circle(-2, 0, 1), circle(2, 0, 1)], eps=0.05, box=BOX)
    assert cs.n_clusters == 2 and list(cs.labels) == [0, 1]


def test_overlapping_loops_merge():
    cs = build_clusters([circle(-0.5, 0, 1), circle(0.5, 0, 1), circle(3.5, 0, 0.5)], eps=0.05, box=BOX)
    assert cs.n_clusters == 2 and list(cs.labels) == [0, 0, 1]
    assert math.isclose(cs.diameter[0], 3.0, abs_tol=1e-3)


def test_empty_soup():
    cs = build_clusters([], eps=0.1, box=BOX)
    assert cs.n_clusters == 0
    assert carpet(cs).all()
    assert filled_cluster_at(cs, (0.0, 0.0)) == (-1, 0.0)


def test_annulus_fill_and_carpet():
    # outer ring plus inner ring: the filled cluster covers the whole disc
    cs = build_clusters([circle(0, 0, 2), circle(0, 0, 1.9), circle(0, 1.95, 0.1)], eps=0.05, box=BOX)
    assert cs.n_clusters == 1
    c = carpet(cs)
    g = cs.grid
    assert not c.ravel()[g.cell_of(np.array([[0.0, 0.0]]))[0]]
    assert c.ravel()[g.cell_of(np.array([[4.0, 4.0]]))[0]]
    cid, d = filled_cluster_at(cs, (0.0, 0.0))
    assert cid == 0 and math.isclose(d, 4.05, abs_tol=1e-3)


def test_nested_clusters_report_outer():
    cs = build_clusters([circle(0, 0, 3), circle(0, 0, 0.5)], eps=0.05, box=BOX)
    assert cs.n_clusters == 2
    assert filled_cluster_at(cs, (0.0, 0.0))[0] == 0


def test_frame_touching_cluster_not_filled():
    cs = build_clusters([circle(0, 0, 4.99)], eps=0.05, box=BOX)
    assert cs.touches_frame[0]
    assert filled_cluster_at(cs, (0.0, 0.0)) == (-1, 0.0)
    assert carpet(cs).ravel()[cs.grid.cell_of(np.array([[0.0, 0.0]]))[0]]


def test_crossing_empty_and_blocked():
    rect = (0, 0, 3, 1)
    assert crossing_event([], rect, 0.05)
    wall = np.array([[1.5, -0.5], [1.5, 1.5], [1.6, 1.5], [1.6, -0.5]])
    assert not crossing_event([wall], rect, 0.05)
    bump = np.array([[1.5, -0.5], [1.5, 0.5], [1.6, 0.5], [1.6, -0.5]])
    assert crossing_event([bump], rect, 0.05)
    # tall rectangles cross between their short (top and bottom) sides
    assert not crossing_event([wall[:, ::-1]], (0, 0, 1, 3), 0.05)


def test_survival_curve():
    s = survival_curve(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 1.5, 3.0, 4.0]))
    assert list(s) == [1.0, 0.5, 0.25, 0.0]


def test_diameter_tail_exponential():
    rng = np.random.default_rng(0)
    d = rng.exponential(0.5, size=20_000)
    L = np.linspace(0, 3, 301)
    r = cluster_diameter_tail(d, L)
    assert abs(r["xi"] - 0.5) < 4 * r["xi_se"] + 0.01
    fit = DiameterTailFit(L_grid=L).fit(d)
    assert math.isclose(fit.xi_, r["xi"])
    with pytest.raises(ValueError):
        cluster_diameter_tail(d[:10], L)


def test_box_counts_full_and_empty():
    full = np.ones((32, 32), bool)
    assert list(box_counts(full, [1, 2, 4])) == [1024, 256, 64]
    assert list(box_counts(~full, [1, 2])) == [0, 0]


def test_carpet_dimension_of_full_raster_is_two():
    rasters = [np.ones((64, 64), bool)] * 20
    r = carpet_dimension(rasters, 1 / 64, sizes=(1, 2, 4, 8))
    assert math.isclose(r["dimension"], 2.0) and r["excluded"] == 0
    est = BoxCountingDimension(eps_min=1 / 64, sizes=(1, 2, 4, 8)).fit(np.array(rasters))
    assert math.isclose(est.dimension_, 2.0)


def test_carpet_dimension_line_and_exclusion():
    line = np.zeros((64, 64), bool)
    line[10, :] = True
    rasters = [line] * 20 + [np.zeros((64, 64), bool)] * 3
    r = carpet_dimension(rasters, 1 / 64, sizes=(1, 2, 4, 8))
    assert math.isclose(r["dimension"], 1.0) and r["excluded"] == 3
    with pytest.raises(ValueError):
        carpet_dimension([line] * 5, 1 / 64)


def test_hausdorff_prediction():
    assert math.isclose(hausdorff_prediction(1.0), 15 / 8)
    assert math.isclose(hausdorff_prediction(0.0), 2.0)
    lam = np.linspace(0, 1, 21)
    vals = [hausdorff_prediction(l) for l in lam]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        hausdorff_prediction(1.2)


def test_clusters_csv(tmp_path):
    cs = build_clusters([circle(-2, 0, 1), circle(2, 0, 1)], eps=0.05, box=BOX)
    p = tmp_path / "c.csv"
    write_clusters_csv(str(p), cs)
    rows = p.read_text().splitlines()
    assert rows[0] == "id,size,diameter,filled_area,touches_frame" and len(rows) == 3
    area = float(rows[1].split(",")[3])
    assert abs(area - math.pi) < 0.3
