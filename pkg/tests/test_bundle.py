from __future__ import annotations

import numpy as np
import pytest

from conftest import circle, line
from nlgrass.bundle import (
    assoc_iso,
    assoc_iso_inv,
    fiber_compare,
    project_gr,
    project_vol,
    same_point,
    same_vol_point,
    tokens_equal,
    transition,
    transition_vol,
    trivialize,
    trivialize_inv,
    trivialize_vol,
    trivialize_vol_inv,
)
from nlgrass.embedding import DiffeoS, Embedding, compose_reparam
from nlgrass.errors import MassMismatch
from nlgrass.mesh import DensityForm, build_grid
from nlgrass.moser import decompose_diffeo
from nlgrass.tubular import build_tubular_chart


@pytest.fixture
def grid():
    return build_grid("interval", 128)


@pytest.fixture
def chart(grid):
    return build_tubular_chart(line(grid), 0.3, 0.45)


def _bump(grid, a=0.15):
    return DiffeoS.from_function(grid, lambda s: s + a * np.sin(np.pi * s) ** 2 / np.pi)


def _curved(grid):
    s = grid.nodes[:, 0]
    return Embedding(grid, np.column_stack([0.04 + 0.93 * s, 0.04 * np.sin(2 * np.pi * s)]))


def test_project_gr_invariance(grid):
    f = _curved(grid)
    ok, _ = same_point(project_gr(f), project_gr(compose_reparam(f, _bump(grid))))
    assert ok
    assert not same_point(f, line(grid))[0]


def test_project_vol_examples(grid):
    f = Embedding(grid, np.column_stack([2 * grid.nodes[:, 0], 0 * grid.nodes[:, 0]]))
    vp = project_vol(f, DensityForm.uniform(grid))
    assert np.allclose(vp.nu.values, 0.5) and abs(vp.total() - 1) < 1e-12


def test_project_vol_sees_non_volume_preserving_phi():
    c = build_grid("circle", 128)
    f = circle(c)
    mu = DensityForm.uniform(c)
    rot = DiffeoS.from_function(c, lambda t: t + 0.7)
    assert same_vol_point(project_vol(f, mu), project_vol(compose_reparam(f, rot), mu), 1e-8)[0]
    phi = DiffeoS.from_function(c, lambda t: t + 0.3 * np.sin(t))
    a, b = project_vol(f, mu), project_vol(compose_reparam(f, phi), mu)
    assert same_point(a, b)[0]
    assert not same_vol_point(a, b)[0]


def test_trivialize_examples(grid, chart):
    f0 = chart.f0
    n, psi = trivialize(f0, chart)
    assert psi.distance(DiffeoS.identity(grid)) < 1e-12
    phi = _bump(grid)
    n, psi = trivialize(compose_reparam(f0, phi), chart)
    assert psi.distance(phi) < 1e-8
    assert same_point(n, f0, 1e-10)[0]


def test_trivialize_roundtrips(grid, chart):
    f = compose_reparam(_curved(grid), _bump(grid, 0.1))
    n, psi = trivialize(f, chart)
    assert np.abs(trivialize_inv(n, psi, chart).values - f.values).max() < 1e-6
    again = trivialize(trivialize_inv(n, psi, chart), chart)[1]
    assert again.distance(psi) < 1e-6
    mu = DensityForm.from_function(grid, lambda s: 0.8 + 0.4 * s[:, 0])
    vp, phi = trivialize_vol(f, mu, chart)
    assert np.abs(trivialize_vol_inv(vp, phi, chart, mu).values - f.values).max() < 1e-6


def test_trivialize_vol_of_volume_preserving_reparam():
    c = build_grid("circle", 128)
    chart = build_tubular_chart(circle(c), 0.3)
    mu = DensityForm.uniform(c)
    rot = DiffeoS.from_function(c, lambda t: t + 0.4)
    vp, phi = trivialize_vol(compose_reparam(chart.f0, rot), mu, chart)
    assert phi.distance(rot) < 1e-8
    vp0, phi0 = trivialize_vol(chart.f0, mu, chart)
    assert phi0.distance(DiffeoS.identity(c)) < 1e-10


def test_validate_mass(grid):
    f = line(grid)
    vp = project_vol(f, DensityForm.uniform(grid))
    with pytest.raises(MassMismatch):
        vp.validate(DensityForm.uniform(grid, 2.0))


def test_transitions(grid):
    ci = build_tubular_chart(line(grid), 0.3, 0.3)
    cj = build_tubular_chart(line(grid, angle=np.deg2rad(4)), 0.3, 0.3)
    n = line(grid, 0, 1, angle=np.deg2rad(2))
    ident = DiffeoS.identity(grid)
    assert transition(n, ci, ci).distance(ident) < 1e-15
    assert transition(n, ci, cj).compose(transition(n, cj, ci)).distance(ident) < 1e-7
    mu = DensityForm.uniform(grid)
    vp = project_vol(n, mu)
    round_trip = transition_vol(vp, ci, cj, mu).compose(transition_vol(vp, cj, ci, mu))
    assert round_trip.distance(ident) < 1e-6


def test_assoc_iso(grid):
    mu = DensityForm.from_function(grid, lambda s: 0.7 + 0.6 * s[:, 0])
    f = _curved(grid)
    vp = project_vol(f, mu)
    token = assoc_iso(vp, mu)
    assert token.f is f and np.abs(token.rho.values - mu.values).max() < 1e-12
    g = compose_reparam(f, _bump(grid))
    other = assoc_iso(vp, representative=g)
    assert tokens_equal(token, other, 1e-8)[0]
    assert same_vol_point(assoc_iso_inv(other), vp, 1e-8)[0]


def test_fiber_compare(grid):
    f = _curved(grid)
    phi = _bump(grid)
    found = fiber_compare(f, compose_reparam(f, phi))
    assert found is not None and found.distance(phi) < 1e-7
    assert fiber_compare(f, line(grid)) is None


def test_fiber_compare_diffvol():
    c = build_grid("circle", 128)
    f = circle(c)
    mu = DensityForm.from_function(c, lambda t: 1 + 0.3 * np.cos(t[:, 0]))
    phi = DiffeoS.from_function(c, lambda t: t + 0.25 * np.sin(t))
    phi_vol = decompose_diffeo(phi, mu).phi_vol
    found = fiber_compare(f, compose_reparam(f, phi_vol), group="DiffVol", mu=mu)
    assert found is not None and found.distance(phi_vol) < 1e-7
    assert fiber_compare(f, compose_reparam(f, phi), group="DiffVol", mu=mu) is None
