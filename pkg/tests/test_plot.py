import numpy as np
import pytest

from cdmp.library import build_demo, build_scene
from cdmp.plot import PlotError, plane_axes, render_svg, zero_contour
from cdmp.sdf import Sphere, make_scene


def test_contour_of_circle_lies_on_circle():
    xs = ys = np.linspace(-1, 1, 81)
    gx, gy = np.meshgrid(xs, ys)
    values = np.hypot(gx, gy) - 0.5
    segs = zero_contour(values, xs, ys)
    assert len(segs) > 40
    pts = np.array([p for s in segs for p in s])
    # linear interpolation across a cell; error bounded by the cell size squared
    assert np.max(np.abs(np.hypot(pts[:, 0], pts[:, 1]) - 0.5)) < (xs[1] - xs[0]) ** 2


def test_no_crossing_no_segments():
    xs = ys = np.linspace(0, 1, 5)
    assert zero_contour(np.ones((5, 5)), xs, ys) == []


def test_saddle_cases_give_two_segments():
    xs = ys = np.array([0.0, 1.0])
    assert len(zero_contour(np.array([[-1.0, 1.0], [1.0, -1.0]]), xs, ys)) == 2


def test_svg_deterministic_and_complete():
    scene = build_scene("wall-jump")
    path = build_demo("wall-jump").positions
    a = render_svg(scene, {"nominal": path, "other": path + 0.1}, title="wall")
    b = render_svg(scene, {"nominal": path, "other": path + 0.1}, title="wall")
    assert a == b
    assert a.count("<polyline") == 2
    assert "<path" in a and ">nominal<" in a and "<title>wall</title>" in a


def test_3d_scene_plane():
    scene = build_scene("cone-contain")
    path = build_demo("cone-contain").positions
    svg = render_svg(scene, {"demo": path}, plane="xz")
    assert "<path" in svg


def test_plot_errors():
    scene2 = make_scene([Sphere([0.0, 0.0], 0.1)])
    with pytest.raises(PlotError):
        render_svg(scene2, {})
    with pytest.raises(PlotError):
        plane_axes("xz", 2)
    with pytest.raises(PlotError):
        plane_axes("uv", 3)
    with pytest.raises(PlotError):
        plane_axes("xy", 1)
