from __future__ import annotations

import numpy as np
import pytest

from nlgrass.embedding import DiffeoS, push_density
from nlgrass.errors import MassMismatch, NotAVolumeForm
from nlgrass.mesh import DensityForm, build_grid, integrate
from nlgrass.moser import MoserWarning, decompose_diffeo, moser_map, reflection


def _normalized(grid, fn, mass):
    rho = DensityForm.from_function(grid, fn)
    return rho.scaled(mass / integrate(grid, rho))


def test_identity_when_nu_equals_mu():
    g = build_grid("interval", 64)
    mu = DensityForm.uniform(g)
    assert moser_map(mu, mu).diffeo.distance(DiffeoS.identity(g)) < 1e-12


def test_closed_form_linear_density():
    g = build_grid("interval", 128)
    b = moser_map(DensityForm.uniform(g), DensityForm.from_function(g, lambda s: 0.5 + s[:, 0]))
    t = np.linspace(0, 1, 41)[:, None]
    assert np.abs(b(t)[:, 0] - (-0.5 + np.sqrt(0.25 + 2 * t[:, 0]))).max() < 1e-8
    assert abs(b([[0.375]])[0, 0] - 0.5) < 1e-10
    assert b.residual < 1e-8


def test_vanishing_target_warns():
    g = build_grid("interval", 128)
    nu = DensityForm.from_function(g, lambda s: 2 * s[:, 0])
    with pytest.warns(MoserWarning):
        b = moser_map(DensityForm.uniform(g), nu)
    t = np.linspace(0, 1, 11)[:, None]
    assert np.abs(b(t)[:, 0] - np.sqrt(t[:, 0])).max() < 1e-6


def test_mass_mismatch_and_sign_change():
    g = build_grid("interval", 32)
    mu = DensityForm.uniform(g)
    with pytest.raises(MassMismatch):
        moser_map(mu, DensityForm.uniform(g, 2.0))
    with pytest.raises(NotAVolumeForm):
        moser_map(mu, DensityForm.from_function(g, lambda s: 3 * (s[:, 0] - 0.25)))


def test_negative_branch_reverses_orientation():
    g = build_grid("interval", 64)
    mu = DensityForm.uniform(g)
    nu = _normalized(g, lambda s: 1 + 0.3 * np.sin(2 * np.pi * s[:, 0]), -1.0)
    b = moser_map(mu, nu)
    assert b.orientation_sign == -1
    assert b.residual < 1e-8
    perm, fn = reflection(g)
    assert np.allclose(fn(g.nodes), 1 - g.nodes)
    assert np.allclose(g.nodes[perm], 1 - g.nodes)


def test_circle_transport():
    c = build_grid("circle", 128)
    mu = DensityForm.uniform(c)
    nu = _normalized(c, lambda t: 1 + 0.4 * np.cos(t[:, 0] - 0.3), 2 * np.pi)
    assert moser_map(mu, nu).residual < 1e-8


def test_disk_identity_and_residual():
    d = build_grid("disk", 24)
    mu = DensityForm.uniform(d)
    assert moser_map(mu, mu).diffeo.distance(DiffeoS.identity(d)) < 1e-10
    nu = _normalized(d, lambda p: 1 + 0.5 * p[:, 0], np.pi)
    assert moser_map(mu, nu).residual < 1e-3


def test_decompose_identity_and_interval_uniqueness():
    g = build_grid("interval", 128)
    mu = DensityForm.uniform(g)
    split = decompose_diffeo(DiffeoS.identity(g), mu)
    assert split.phi_vol.distance(DiffeoS.identity(g)) < 1e-10
    phi = DiffeoS.from_function(g, lambda s: s + 0.2 * s * (1 - s))
    split = decompose_diffeo(phi, mu)
    assert split.phi_vol.distance(DiffeoS.identity(g)) < 1e-7
    # rho = phi_* ds = (phi^{-1})'
    s = g.nodes[:, 0]
    inv_prime = 1 / np.sqrt(1.44 - 0.8 * s)
    assert np.abs(split.rho.density.values - inv_prime).max() < 1e-6


def test_decompose_volume_preserving_rotation():
    d = build_grid("disk", 16)
    th = 0.4
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    phi = DiffeoS(d, d.nodes @ rot.T)
    split = decompose_diffeo(phi, DensityForm.uniform(d))
    assert split.phi_vol.distance(phi) < 1e-10


def test_splitting_recomposes_on_circle():
    c = build_grid("circle", 128)
    mu = DensityForm.uniform(c)
    phi = DiffeoS.from_function(c, lambda t: t + 0.3 * np.sin(t))
    split = decompose_diffeo(phi, mu)
    back = split.moser(split.phi_vol.values)
    assert np.abs(c.param_distance(back, phi.values)).max() < 1e-7
    assert np.abs(push_density(split.phi_vol, mu).values - mu.values).max() < 1e-6
