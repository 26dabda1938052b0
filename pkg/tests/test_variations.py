from __future__ import annotations

import numpy as np
import pytest

from conftest import circle, line
from nlgrass.embedding import Embedding, TangentField
from nlgrass.errors import Unsupported
from nlgrass.mesh import DensityForm, build_grid, integrate
from nlgrass.tubular import build_tubular_chart
from nlgrass.variations import (
    coboundary,
    dvol_embedding,
    edge_masses,
    exterior_derivative,
    join_tangent,
    mean_curvature,
    membership,
    primitive,
    split_tangent,
    tangent_project_gr,
    tangent_project_vol,
    volume,
)


def _disk(rings=16):
    d = build_grid("disk", rings)
    return Embedding(d, d.nodes.copy())


def _sphere_patch(rings, r, opening=0.8):
    d = build_grid("disk", rings)
    p = d.nodes
    rad = np.linalg.norm(p, axis=1)
    polar = opening * rad
    az = np.arctan2(p[:, 1], p[:, 0])
    pts = r * np.column_stack([np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az), np.cos(polar)])
    return Embedding(d, pts)


def test_interval_projection_components(interval64):
    f = line(interval64)
    s = interval64.nodes[:, 0]
    a, b = 0.3 + s**2, np.sin(3 * s)
    w = tangent_project_gr(f, np.column_stack([a, b]))
    assert np.abs(w.w_perp[:, 0]).max() < 1e-14
    assert np.abs(np.abs(w.w_perp[:, 1]) - np.abs(b)).max() < 1e-14
    assert np.allclose(w.w_dagger, [-a[0], a[-1]], atol=1e-14)


def test_vertical_field_maps_to_zero(interval64):
    f = line(interval64)
    s = interval64.nodes[:, :1]
    v = TangentField.from_param_field(f, 0.2 * s * (1 - s))
    assert tangent_project_gr(f, v).norm() < 1e-14


def test_disk_position_field():
    w = tangent_project_gr(_disk(), _disk().values)
    assert np.abs(w.w_dagger - 1).max() < 1e-12
    assert w.w_perp.shape[1] == 2 and np.abs(w.w_perp).max() == 0


def test_vol_projection_interval(interval64):
    f = line(interval64)
    mu = DensityForm.uniform(interval64)
    s = interval64.nodes[:, 0]
    a = 0.3 + 0.5 * np.sin(2 * s)
    tv = tangent_project_vol(f, mu, np.column_stack([a, 0 * s]))
    assert np.abs(tv.d_alpha.values - np.cos(2 * s)).max() < 1e-5
    assert np.allclose(tv.w_dagger, [-a[0], a[-1]], atol=1e-14)
    assert tv.compatibility_residual < 1e-14
    zero = tangent_project_vol(f, mu, np.zeros_like(f.values))
    assert zero.norm() == 0


@pytest.mark.parametrize("kind", ["interval", "circle", "disk"])
def test_vol_vertical_field(kind):
    from nlgrass.scenario import FIELDS

    grid = build_grid(kind, 16 if kind == "disk" else 64)
    f = {"interval": line, "circle": circle}.get(kind, lambda g: Embedding(g, g.nodes.copy()))(grid)
    mu = DensityForm.uniform(grid)
    v = FIELDS["vertical_vol"](f, mu, grid.nodes)
    assert tangent_project_vol(f, mu, v).norm() < 1e-7
    bent = FIELDS["smooth"](f, mu, grid.nodes)
    assert tangent_project_vol(f, mu, bent).norm() > 1e-3


def test_interval_cochains_are_exact(interval64):
    rho = DensityForm.from_function(interval64, lambda s: 1 + 0.4 * np.cos(5 * s[:, 0]))
    alpha = primitive(rho)
    assert np.abs(coboundary(alpha) - edge_masses(rho)).max() < 1e-15
    assert abs(alpha[-1] - integrate(interval64, rho)) < 1e-12
    with pytest.raises(Unsupported):
        edge_masses(DensityForm.uniform(build_grid("circle", 16)))


def test_disk_exterior_derivative():
    d = build_grid("disk", 16)
    p = d.nodes
    # alpha = x dy - y dx has d alpha = 2 dx dy
    da = exterior_derivative(d, np.column_stack([-p[:, 1], p[:, 0]]))
    assert np.abs(da.values - 2).max() < 1e-10


def test_split_and_join_recover_exact_part():
    g = build_grid("interval", 128)
    f = line(g)
    chart = build_tubular_chart(f, 0.3, 0.45)
    mu = DensityForm.uniform(g)
    s = g.nodes[:, 0]
    tv = tangent_project_vol(f, mu, np.column_stack([0.2 + 0.3 * s**2, 0.1 * np.sin(np.pi * s)]))
    w_dagger, exact, w_perp = split_tangent(tv, chart)
    assert abs(integrate(g, exact)) < 1e-4
    joined = join_tangent(w_dagger, exact, w_perp, tv.nu_boundary, chart)
    assert np.abs(joined.values - tv.d_alpha.values).max() < 1e-10


def test_volumes():
    assert abs(volume(_disk()) - np.pi) < 1e-12
    c = build_grid("circle", 64)
    assert abs(volume(circle(c, 2)) - 4 * np.pi) < 1e-10


def test_dvol_analytic_values():
    f = _disk()
    assert abs(dvol_embedding(f, f.values) - 2 * np.pi) < 1e-10
    c = build_grid("circle", 128)
    g = circle(c)
    assert abs(dvol_embedding(g, g.values) - 2 * np.pi) < 1e-8
    s = c.nodes[:, :1]
    assert abs(dvol_embedding(g, TangentField.from_param_field(g, 0.3 + 0.1 * np.cos(s)))) < 1e-8


def test_dvol_weak_on_sphere_patch():
    f = _sphere_patch(24, 1.5)
    x = f.values
    v = 0.2 * np.column_stack([np.sin(x[:, 0]), x[:, 1] * x[:, 2], np.cos(x[:, 0])])
    h = 1e-5
    fd = (volume(f.with_values(x + h * v)) - volume(f.with_values(x - h * v))) / (2 * h)
    assert abs(dvol_embedding(f, v, curvature="weak") - fd) < 1e-4 * abs(fd)


def test_mean_curvature_examples():
    g = build_grid("interval", 64)
    assert np.abs(mean_curvature(line(g)).magnitude).max() < 1e-10
    c = build_grid("circle", 128)
    for r in (0.5, 2.0):
        f = circle(c, r)
        hc = mean_curvature(f)
        assert np.abs(hc.magnitude * r - 1).max() < 0.02
        # inward: H points against the position vector
        assert np.all(np.sum(hc.H * f.values, axis=1) < 0)
    patch = mean_curvature(_sphere_patch(48, 1.5))
    assert np.abs(patch.magnitude * 1.5 / 2 - 1).max() < 0.05
    with pytest.raises(Unsupported):
        d = build_grid("disk", 8)
        mean_curvature(Embedding(d, np.column_stack([d.nodes, 0 * d.nodes])))


def test_membership_examples():
    f = _disk()
    p = f.values
    rot = membership(f, None, np.column_stack([-p[:, 1], p[:, 0]]), "EmbVol")
    assert rot.member and rot.residual < 1e-10
    assert not membership(f, None, p, "EmbVol").member
    c = build_grid("circle", 128)
    g = circle(c)
    assert not membership(g, None, g.values, "Emb0").member
    t = c.nodes[:, 0]
    balanced = np.cos(t)[:, None] * g.values
    assert membership(g, None, balanced, "Emb0", tol=1e-6).member
