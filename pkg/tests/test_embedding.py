from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlgrass.embedding import (
    DiffeoS,
    Embedding,
    check_embedding,
    compose_reparam,
    induced_volume,
    pullback_volume,
    pushforward_density,
)
from nlgrass.errors import NotADiffeo
from nlgrass.mesh import DensityForm, build_grid, integrate


def _line(g):
    return Embedding.from_function(g, lambda s: np.column_stack([s[:, 0], 0 * s[:, 0]]))


def test_compose_reparam_closed_form():
    g = build_grid("interval", 65)
    phi = DiffeoS.from_function(g, lambda s: s * (3 - s) / 2)
    h = compose_reparam(_line(g), phi)
    assert np.allclose(h(np.array([[0.5]])), [[0.625, 0.0]], atol=1e-12)


@pytest.mark.parametrize("kind,res", [("interval", 33), ("circle", 32), ("disk", 8)])
def test_compose_identity(kind, res):
    g = build_grid(kind, res)
    f = Embedding(g, np.column_stack([g.nodes, np.sin(g.nodes[:, :1])]))
    assert np.abs(compose_reparam(f, DiffeoS.identity(g)).values - f.values).max() < 1e-12


def test_check_embedding_cases():
    c = build_grid("circle", 64)
    t = c.nodes[:, 0]
    assert check_embedding(Embedding(c, np.column_stack([np.cos(t), np.sin(t)]))).ok
    # the parameter here is the angle 2 pi s
    fig8 = check_embedding(Embedding(c, np.column_stack([np.sin(t), 0.5 * np.sin(2 * t)])))
    assert fig8.status == "injectivity_failure"
    assert (0, 32) in fig8.pairs
    g = build_grid("interval", 33)
    cube = check_embedding(Embedding.from_function(g, lambda s: np.column_stack([s[:, 0] ** 3, 0 * s[:, 0]])))
    assert cube.status == "immersion_failure" and 0 in cube.nodes


def test_induced_volume_examples():
    g = build_grid("interval", 33)
    f = Embedding.from_function(g, lambda s: np.column_stack([2 * s[:, 0], 0 * s[:, 0]]))
    vol = induced_volume(f)
    assert np.allclose(vol.values, 2) and abs(integrate(g, vol) - 2) < 1e-12
    c = build_grid("circle", 64)
    t = c.nodes[:, 0]
    vol = induced_volume(Embedding(c, 2 * np.column_stack([np.cos(t), np.sin(t)])))
    assert np.allclose(vol.values, 2) and abs(integrate(c, vol) - 4 * np.pi) < 1e-10


def test_paraboloid_area():
    d = build_grid("disk", 64)
    f = Embedding.from_function(d, lambda p: np.column_stack([p, (p**2).sum(1)]))
    exact = np.pi / 6 * (5 * np.sqrt(5) - 1)
    assert abs(integrate(d, induced_volume(f)) - exact) < 1e-3


def test_pullback_volume_codim0():
    d = build_grid("disk", 12)
    f = Embedding(d, 2 * d.nodes)
    vol = pullback_volume(f)
    assert np.allclose(vol.values, 4) and abs(integrate(d, vol) - 4 * np.pi) < 1e-10
    assert abs(integrate(d, pullback_volume(Embedding(d, d.nodes.copy()))) - np.pi) < 1e-12
    for th in (0.3, 1.7):
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        assert abs(integrate(d, pullback_volume(Embedding(d, d.nodes @ rot.T))) - np.pi) < 1e-10


def test_pushforward_density_mass():
    g = build_grid("interval", 33)
    f = Embedding.from_function(g, lambda s: np.column_stack([2 * s[:, 0], 0 * s[:, 0]]))
    nu = pushforward_density(f, DensityForm.uniform(g))
    assert np.allclose(nu.values, 0.5) and abs(nu.total() - 1) < 1e-12
    ident = pushforward_density(_line(g), DensityForm.uniform(g, 3.0))
    assert np.allclose(ident.values, 3.0)


def test_diffeo_validation_rejects_fold():
    g = build_grid("interval", 33)
    with pytest.raises(NotADiffeo):
        DiffeoS.from_function(g, lambda s: 4 * s * (1 - s)).validate()


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_diffeo_inverse_and_compose(a, b):
    g = build_grid("interval", 65)
    phi = DiffeoS.from_function(g, lambda s: s + a * s * (1 - s))
    psi = DiffeoS.from_function(g, lambda s: s + b * np.sin(np.pi * s) / np.pi)
    assert phi.inverse().compose(phi).distance(DiffeoS.identity(g)) < 1e-9
    left = phi.compose(psi).values
    assert np.abs(left - phi(psi.values)).max() < 1e-12
