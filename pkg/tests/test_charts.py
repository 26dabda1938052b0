from __future__ import annotations

import numpy as np
import pytest

from conftest import circle, line
from nlgrass.bundle import same_point
from nlgrass.charts import (
    GrassPoint,
    chart_change,
    chart_forward,
    chart_inverse,
    decompose,
    normal_embedding,
    normal_embedding_from_sections,
    reparam_to_normal,
)
from nlgrass.embedding import DiffeoS, Embedding, compose_reparam
from nlgrass.errors import NotInChartDomain, SectionOutOfRange
from nlgrass.mesh import build_grid
from nlgrass.tubular import SectionPair, build_tubular_chart


def _sections(grid, dagger, sigma_fn=lambda s: 0 * s):
    return SectionPair(dagger, sigma_fn(grid.nodes[:, 0]))


def test_closed_form_affine(affine_chart):
    g = affine_chart.grid
    f = normal_embedding_from_sections(_sections(g, [0.1, -0.2]), affine_chart)
    s = g.nodes[:, 0]
    assert np.abs(f.values - np.column_stack([0.7 * s + 0.1, 0 * s])).max() < 1e-12
    assert np.allclose(f(np.array([[0.5]])), [[0.45, 0.0]], atol=1e-12)
    bent = normal_embedding_from_sections(_sections(g, [0.1, -0.2], lambda s: 0.05 * np.sin(np.pi * s)), affine_chart)
    assert np.allclose(bent(np.array([[0.5]])), [[0.45, 0.05]], atol=1e-12)


def test_collar_stretch_has_same_image(interval_chart):
    g = interval_chart.grid
    f = normal_embedding_from_sections(_sections(g, [0.1, -0.2]), interval_chart)
    ok, dist = same_point(f, line(g, 0.1, 0.8))
    assert ok, dist


@pytest.mark.parametrize("fixture", ["interval_chart", "affine_chart"])
def test_zero_sections_give_base(fixture, request):
    chart = request.getfixturevalue(fixture)
    f = normal_embedding_from_sections(SectionPair.zero(chart), chart)
    assert np.abs(f.values - chart.f0.values).max() < 1e-12
    sec = chart_forward(GrassPoint.of(chart.f0), chart)
    assert np.abs(sec.sigma_dagger).max() < 1e-12 and np.abs(sec.sigma).max() < 1e-12


def test_chart_forward_segment(interval_chart):
    g = interval_chart.grid
    sec = chart_forward(GrassPoint.of(line(g, 0.1, 0.8)), interval_chart)
    assert np.abs(sec.sigma_dagger - [0.1, -0.2]).max() < 1e-9
    assert np.abs(sec.sigma).max() < 1e-9
    back = chart_inverse(sec, interval_chart).representative
    assert same_point(back, line(g, 0.1, 0.8), 1e-9)[0]


def test_chart_forward_graph(interval_chart):
    g = interval_chart.grid
    s = g.nodes[:, 0]
    n = Embedding(g, np.column_stack([s, 0.05 * np.sin(np.pi * s)]))
    sec = chart_forward(GrassPoint.of(n), interval_chart)
    assert np.abs(sec.sigma_dagger).max() < 1e-6
    sign = np.sign(interval_chart.normal_frames[0, 1, 0])
    assert np.abs(sign * sec.sigma[:, 0] - 0.05 * np.sin(np.pi * s)).max() < 1e-6


def test_normal_embedding_invariance(interval_chart):
    g = interval_chart.grid
    f0 = interval_chart.f0
    phi = DiffeoS.from_function(g, lambda s: s + 0.2 * s * (1 - s))
    assert np.abs(normal_embedding(compose_reparam(f0, phi), interval_chart).values - f0.values).max() < 1e-8
    assert reparam_to_normal(f0, interval_chart).distance(DiffeoS.identity(g)) < 1e-12


def test_psi_of_reparametrized_target(interval_chart):
    g = interval_chart.grid
    s = g.nodes[:, 0]
    f = Embedding(g, np.column_stack([0.05 + 0.9 * s, 0.03 * np.sin(np.pi * s)]))
    phi = DiffeoS.from_function(g, lambda s: s + 0.15 * np.sin(np.pi * s) ** 2 / np.pi)
    d1, d2 = decompose(f, interval_chart), decompose(compose_reparam(f, phi), interval_chart)
    assert d2.psi.distance(d1.psi.compose(phi)) < 1e-6
    assert np.abs(d2.f_perp.values - d1.f_perp.values).max() < 1e-6


def test_out_of_range_sections(interval_chart):
    with pytest.raises(SectionOutOfRange):
        chart_inverse(_sections(interval_chart.grid, [0.3, 0.0]), interval_chart)
    far = line(interval_chart.grid).with_values(line(interval_chart.grid).values + [0, 0.5])
    with pytest.raises(NotInChartDomain):
        chart_forward(GrassPoint.of(far), interval_chart)


def test_chart_change_same_chart(interval_chart):
    sec = _sections(interval_chart.grid, [0.05, -0.03], lambda s: 0.02 * np.sin(np.pi * s))
    out = chart_change(sec, interval_chart, interval_chart)
    assert sec.distance(out) < 1e-9


def test_chart_change_rotated_bases():
    g = build_grid("interval", 128)
    ci = build_tubular_chart(line(g), 0.3, 0.3)
    cj = build_tubular_chart(line(g, angle=np.deg2rad(10)), 0.3, 0.3)
    n = line(g, 0.0, 1.0, angle=np.deg2rad(5))
    si = chart_forward(GrassPoint.of(n), ci)
    sj = chart_change(si, ci, cj)
    back = chart_change(sj, cj, ci)
    assert si.distance(back) < 1e-7
    img_i = chart_inverse(si, ci).representative
    img_j = chart_inverse(sj, cj).representative
    assert same_point(img_i, img_j, 1e-7)[0]


def test_circle_chart_roundtrip():
    c = build_grid("circle", 128)
    chart = build_tubular_chart(circle(c), 0.3)
    t = c.nodes[:, 0]
    n = Embedding(c, (1 + 0.1 * np.cos(3 * t))[:, None] * np.column_stack([np.cos(t + 0.2), np.sin(t + 0.2)]))
    sec = chart_forward(GrassPoint.of(n), chart)
    assert sec.sigma_dagger.size == 0
    assert same_point(chart_inverse(sec, chart).representative, n, 1e-8)[0]


def test_disk_chart_roundtrip():
    d = build_grid("disk", 16)
    f0 = Embedding(d, np.column_stack([d.nodes, np.zeros(d.size)]))
    chart = build_tubular_chart(f0, 0.2, 0.2)
    p = d.nodes
    n = Embedding(d, np.column_stack([1.03 * p[:, 0], 0.98 * p[:, 1], 0.02 * (1 - (p**2).sum(1))]))
    sec = chart_forward(GrassPoint.of(n), chart)
    theta = d.boundary_angles
    # the boundary ellipse meets the ray at angle theta at this radius
    expect = 1 / np.hypot(np.cos(theta) / 1.03, np.sin(theta) / 0.98) - 1
    assert np.abs(np.abs(sec.sigma_dagger) - np.abs(expect)).max() < 1e-6
    back = chart_inverse(sec, chart).representative
    assert np.abs(back.values - decompose(n, chart).f_perp.values).max() < 1e-12
    # images agree up to the O(h^2) error of the local-fit interpolant
    assert same_point(back, n, 1e-3)[0]
