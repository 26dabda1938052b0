from __future__ import annotations

import numpy as np
import pytest

from conftest import circle, line
from nlgrass.embedding import Embedding
from nlgrass.errors import InvalidBump, OutsideTube, RadiusExceedsReach, SectionOutOfRange
from nlgrass.mesh import build_grid
from nlgrass.tubular import (
    BumpFunction,
    TubularChart,
    boundary_shift_map,
    build_tubular_chart,
    closest_point_project,
    estimate_reach,
    transport_normal_frames,
)


def test_bump_properties():
    rho = BumpFunction().validate()
    t = np.linspace(-2, 1, 3001)
    assert np.all(rho(t[t <= -1]) == 0) and np.all(rho(t[t >= 0]) == 1)
    assert np.all(np.diff(rho(t)) >= 0)
    assert rho.derivative(t).max() <= 2
    BumpFunction(kind="smoothstep5").validate()
    with pytest.raises(InvalidBump):
        BumpFunction(onset=0.5)
    with pytest.raises(InvalidBump):
        BumpFunction(onset=-0.2, kind="smoothstep5").validate()


def test_circle_frames_are_radial():
    c = build_grid("circle", 64)
    chart = build_tubular_chart(circle(c), 0.3)
    n = chart.normal_frames[:, :, 0]
    radial = circle(c).values
    dots = np.sum(n * radial, axis=1)
    assert np.allclose(np.abs(dots), 1, atol=1e-10)
    assert np.all(np.sign(dots) == np.sign(dots[0]))


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_reach_of_circle(r):
    c = build_grid("circle", 128)
    f = circle(c, r)
    assert abs(estimate_reach(f) - r) < 0.02 * r
    with pytest.raises(RadiusExceedsReach):
        build_tubular_chart(f, 1.5 * r)


def test_project_on_circle():
    c = build_grid("circle", 64)
    chart = build_tubular_chart(circle(c), 0.3)
    params, coords = closest_point_project([[1.2, 0.0]], chart)
    assert abs(np.mod(params[0, 0] + 0.1, 2 * np.pi) - 0.1) < 1e-10
    assert abs(abs(coords[0, 0]) - 0.2) < 1e-10
    # (2, 0) is at distance 1 = reach: only allowed with the tube check off
    with pytest.raises(OutsideTube):
        closest_point_project([[2.0, 0.0]], chart)
    params, coords = closest_point_project([[2.0, 0.0]], chart, check_tube=False)
    assert abs(abs(coords[0, 0]) - 1.0) < 1e-10
    _, on = closest_point_project(circle(c).values, chart)
    assert np.abs(on).max() < 1e-12


def test_project_parabola():
    g = build_grid("interval", 64)
    s = 2 * g.nodes[:, 0] - 1
    f = Embedding(g, np.column_stack([s, s * s]))
    chart = build_tubular_chart(f, 0.3, 0.1, check_reach=False)
    params, coords = closest_point_project([[0.0, 0.2]], chart)
    assert abs(params[0, 0] - 0.5) < 1e-8
    assert abs(abs(coords[0, 0]) - 0.2) < 1e-8


def test_zero_shift_and_transport_are_identity(interval_chart):
    shift = boundary_shift_map([0.0, 0.0], interval_chart)
    nodes = interval_chart.grid.nodes
    assert np.array_equal(shift(nodes), nodes)
    h = transport_normal_frames(shift, interval_chart)
    eye = np.broadcast_to(np.eye(1), h.rotation.shape)
    assert np.allclose(h.rotation, eye)


def test_shift_is_monotone_and_moves_boundary(interval_chart):
    shift = boundary_shift_map([0.1, -0.2], interval_chart)
    s = np.linspace(0, 1, 2001)[:, None]
    out = shift(s)[:, 0]
    assert np.all(np.diff(out) > 0)
    assert shift.inverse_at(out[:, None])[:, 0] == pytest.approx(s[:, 0], abs=1e-10)
    with pytest.raises(SectionOutOfRange):
        boundary_shift_map([0.3, 0.0], interval_chart)


def test_flat_disk_transport_identity():
    d = build_grid("disk", 8)
    f = Embedding(d, np.column_stack([d.nodes, np.zeros(d.size)]))
    chart = build_tubular_chart(f, 0.2, 0.2)
    shift = boundary_shift_map(0.05 * np.cos(d.boundary_angles), chart)
    mats = transport_normal_frames(shift, chart).as_matrices()
    nrm = chart.normal_frames[:, :, 0]
    assert np.allclose(np.einsum("nml,nl->nm", mats, nrm), nrm, atol=1e-12)


def test_chart_json_roundtrip(tmp_path, interval_chart):
    path = tmp_path / "chart.json"
    interval_chart.save(path)
    back = TubularChart.load(path)
    assert np.allclose(back.normal_frames, interval_chart.normal_frames)
    assert back.eps == interval_chart.eps and back.stretch == interval_chart.stretch


def test_collars_must_not_overlap():
    g = build_grid("interval", 32)
    with pytest.raises(RadiusExceedsReach):
        build_tubular_chart(line(g), 0.3, 0.6)
