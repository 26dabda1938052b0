"""Bundle projections, local trivializations, transitions and fibre comparison.

pi(f) = f(S) and pi_vol(f) = (f(S), f_* mu).  Over a chart domain the bundles
are trivialized by f -> (f(S), psi_f) and f -> (pi_vol(f), (psi_f)_vol).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .charts import GrassPoint, decompose, normal_embedding, reparam_to_normal
from .embedding import (
    DiffeoS,
    Embedding,
    SubmanifoldDensity,
    compose_reparam,
    distance_to_image,
    hausdorff_distance,
    push_density,
    pushforward_density,
)
from .errors import GeometryError, MassMismatch, NotAnEmbedding
from .mesh import DensityForm, ParamManifold, integrate
from .moser import decompose_diffeo, moser_map
from .tubular import TubularChart, build_tubular_chart, estimate_reach

__all__ = [
    "VolGrassPoint",
    "AssocToken",
    "project_gr",
    "project_vol",
    "same_point",
    "same_vol_point",
    "auto_chart",
    "trivialize",
    "trivialize_inv",
    "trivialize_vol",
    "trivialize_vol_inv",
    "transition",
    "transition_vol",
    "assoc_iso",
    "assoc_iso_inv",
    "tokens_equal",
    "fiber_compare",
]

MASS_RTOL = 1e-8
DEFAULT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class VolGrassPoint:
    """(N, nu): a submanifold with a density of fixed total mass."""

    point: GrassPoint
    nu: SubmanifoldDensity

    @property
    def representative(self) -> Embedding:
        return self.nu.carrier

    def total(self) -> float:
        return self.nu.total()

    def validate(self, mu: DensityForm) -> "VolGrassPoint":
        target = integrate(mu.grid, mu)
        if abs(self.total() - target) > MASS_RTOL * abs(target):
            raise MassMismatch(f"nu has mass {self.total():.12g}, mu has {target:.12g}")
        v = self.nu.values
        if not (np.all(v > 0) or np.all(v < 0)):
            raise MassMismatch("nu changes sign")
        return self

    def to_json(self) -> dict:
        return {"representative": self.representative.to_json(), "nu": self.nu.values.tolist()}


def project_gr(f: Embedding) -> GrassPoint:
    """pi(f) = f(S)."""
    return GrassPoint.of(f)


def project_vol(f: Embedding, mu: DensityForm) -> VolGrassPoint:
    """pi_vol(f) = (f(S), f_* mu)."""
    point = GrassPoint.of(f)
    mu.require_volume_form()
    return VolGrassPoint(point, pushforward_density(f, mu))


# ---------------------------------------------------------------------------
# unparametrized equality


def _rep(n) -> Embedding:
    if isinstance(n, VolGrassPoint):
        return n.representative
    return getattr(n, "representative", n)


def _boundary_distance(f1: Embedding, f2: Embedding) -> float:
    """Symmetric distance between boundary images (endpoint sets or boundary curves)."""
    grid = f1.grid
    if not grid.has_boundary:
        return 0.0
    if grid.manifold is ParamManifold.INTERVAL:
        a, b = f1.boundary_values(), f2.boundary_values()
        d = np.linalg.norm(a[:, None] - b[None], axis=2)
        return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
    return max(_curve_gap(f1, f2), _curve_gap(f2, f1))


def _curve_gap(f1: Embedding, f2: Embedding, factor: int = 16) -> float:
    """max over f1's boundary nodes of the distance to f2's boundary curve."""
    g2 = f2.grid
    curve = g2.boundary_interpolant(f2.boundary_values())
    nb = len(g2.boundary_nodes)
    theta = 2 * np.pi * np.arange(factor * nb) / (factor * nb)
    pts = f1.boundary_values()
    _, idx = cKDTree(curve(theta[:, None])).query(pts)
    t = theta[idx]
    for _ in range(8):
        c = curve(t[:, None])
        d1 = curve.jacobian(t[:, None])[:, :, 0]
        d2 = curve.hessian(t[:, None])[:, :, 0, 0]
        r = c - pts
        t = t - np.sum(r * d1, 1) / (np.sum(d1 * d1, 1) + np.sum(r * d2, 1))
    return float(np.linalg.norm(curve(t[:, None]) - pts, axis=1).max())


def same_point(a, b, tol: float = DEFAULT_TOL) -> tuple[bool, float]:
    """Equality of images: Hausdorff distance plus boundary matching."""
    f1, f2 = _rep(a), _rep(b)
    dist = max(hausdorff_distance(f1, f2), _boundary_distance(f1, f2))
    return bool(dist < tol), float(dist)


def same_vol_point(a: VolGrassPoint, b: VolGrassPoint, tol: float = DEFAULT_TOL) -> tuple[bool, float]:
    """Equal images and equal densities on them (compared at b's nodes)."""
    ok, dist = same_point(a, b, tol)
    if not ok:
        return False, dist
    fa, fb = a.representative, b.representative
    _, params = distance_to_image(fb.values, fa)
    nu_a = fa.grid.interpolant(a.nu.values[:, None])(params)[:, 0]
    gap = float(np.abs(nu_a - b.nu.values).max())
    return bool(gap < tol), max(dist, gap)


# ---------------------------------------------------------------------------
# charts centred at a given embedding


def auto_chart(f: Embedding, fraction: float = 0.4) -> TubularChart:
    """Tubular chart centred at f with radii a fixed fraction of the admissible ones."""
    reach = estimate_reach(f)
    centre = f.values.mean(axis=0)
    size = float(np.linalg.norm(f.values - centre, axis=1).max())
    delta = min(fraction * reach, 0.25 * size)
    eps = None
    grid = f.grid
    if grid.has_boundary:
        jac = f.node_jacobian[grid.boundary_nodes]
        if grid.manifold is ParamManifold.INTERVAL:
            g = np.linalg.norm(jac[:, :, 0], axis=1)
            collar = 0.45 / (1 / g[0] + 1 / g[1])
        else:
            radial = np.einsum("bmk,bk->bm", jac, grid.nodes[grid.boundary_nodes])
            collar = 0.45 * np.linalg.norm(radial, axis=1).min()
        eps = min(fraction * reach, collar)
    return build_tubular_chart(f, delta, eps)


# ---------------------------------------------------------------------------
# local trivializations


def trivialize(f: Embedding, chart: TubularChart) -> tuple[GrassPoint, DiffeoS]:
    """Psi(f) = (f(S), psi_f)."""
    dec = decompose(f, chart)
    return GrassPoint(f, dec.sections, chart), dec.psi


def trivialize_inv(n, psi: DiffeoS, chart: TubularChart) -> Embedding:
    """Psi^{-1}(N, psi) = f_perp o psi."""
    return compose_reparam(normal_embedding(_rep(n), chart), psi)


def trivialize_vol(f: Embedding, mu: DensityForm, chart: TubularChart) -> tuple[VolGrassPoint, DiffeoS]:
    """Psi(f) = (pi_vol(f), (psi_f)_vol) with (psi_f)_vol = B((psi_f)_* mu)^{-1} o psi_f."""
    psi = decompose(f, chart).psi
    split = decompose_diffeo(psi, mu)
    return project_vol(f, mu), split.phi_vol


def _normal_pullback(vp: VolGrassPoint, chart: TubularChart, mu: DensityForm):
    """f_perp and (f_perp)^* nu, rescaled onto the mass of mu (quadrature drift only)."""
    dec = decompose(vp.representative, chart)
    f_perp = dec.f_perp
    pulled = vp.nu.through(f_perp, dec.psi_inv_nodes)
    target = integrate(mu.grid, mu)
    mass = integrate(pulled.grid, pulled)
    limit = 1e-2 if mu.grid.manifold is ParamManifold.DISK else 1e-4
    if abs(mass - target) > limit * abs(target):
        raise MassMismatch(f"(f_perp)^* nu has mass {mass:.12g}, mu has {target:.12g}")
    return f_perp, pulled.scaled(target / mass)


def trivialize_vol_inv(vp: VolGrassPoint, phi: DiffeoS, chart: TubularChart, mu: DensityForm) -> Embedding:
    """Psi^{-1}((N, nu), phi) = f_perp o B((f_perp)^* nu) o phi."""
    f_perp, pulled = _normal_pullback(vp, chart, mu)
    b = moser_map(mu, pulled)
    return f_perp.with_values(f_perp(b(phi.values)))


def transition(n, chart_i: TubularChart, chart_j: TubularChart) -> DiffeoS:
    """psi_ij(N) = (f^{perp_i})^{-1} o f^{perp_j}."""
    f = _rep(n)
    if chart_i is chart_j:
        return DiffeoS.identity(f.grid)
    return reparam_to_normal(normal_embedding(f, chart_j), chart_i)


def transition_vol(vp: VolGrassPoint, chart_i: TubularChart, chart_j: TubularChart, mu: DensityForm) -> DiffeoS:
    """phi_ij(N, nu) = B_i^{-1} o psi_ij(N) o B_j, B_c = B((f^{perp_c})^* nu)."""
    grid = mu.grid
    if chart_i is chart_j:
        return DiffeoS.identity(grid)
    psi_ij = transition(vp, chart_i, chart_j)
    b_i = moser_map(mu, _normal_pullback(vp, chart_i, mu)[1])
    b_j = moser_map(mu, _normal_pullback(vp, chart_j, mu)[1])
    values = b_i.inverse(psi_ij(b_j(grid.nodes)))
    return DiffeoS(grid, grid.clamp(values))


# ---------------------------------------------------------------------------
# associated bundle Emb x_Diff Vol


@dataclass(frozen=True, eq=False)
class AssocToken:
    """Representative [f, rho] of a class in Emb(S, M) x_Diff(S) Vol(S)."""

    f: Embedding
    rho: DensityForm

    def to_json(self) -> dict:
        return {"f": self.f.to_json(), "rho": self.rho.values.tolist()}


def assoc_iso(vp: VolGrassPoint, mu: DensityForm | None = None, representative: Embedding | None = None) -> AssocToken:
    """(N, nu) -> [f, f^* nu], using the stored carrier or another representative of N."""
    if mu is not None:
        vp.validate(mu)
    if representative is None:
        return AssocToken(vp.representative, vp.nu.pulled_back())
    chi = fiber_compare(vp.representative, representative)
    if chi is None:
        raise NotAnEmbedding("the representative does not parametrize N")
    return AssocToken(representative, vp.nu.through(representative, chi))


def assoc_iso_inv(token: AssocToken) -> VolGrassPoint:
    """[f, rho] -> (f(S), f_* rho)."""
    return VolGrassPoint(GrassPoint.of(token.f), pushforward_density(token.f, token.rho))


def tokens_equal(a: AssocToken, b: AssocToken, tol: float = DEFAULT_TOL) -> tuple[bool, float]:
    return same_vol_point(assoc_iso_inv(a), assoc_iso_inv(b), tol)


# ---------------------------------------------------------------------------
# fibres


def fiber_compare(
    f1: Embedding,
    f2: Embedding,
    group: str = "Diff",
    mu: DensityForm | None = None,
    tol: float = DEFAULT_TOL,
    chart: TubularChart | None = None,
) -> DiffeoS | None:
    """phi with f2 = f1 o phi, or None when the images (or, for DiffVol, the densities) differ."""
    if group not in ("Diff", "DiffVol"):
        raise ValueError(f"unknown structure group {group!r}")
    if group == "DiffVol" and mu is None:
        raise ValueError("DiffVol comparison needs mu")
    if not f1.grid.same_as(f2.grid):
        return None
    try:
        chart = auto_chart(f1) if chart is None else chart
        dec = decompose(f2, chart)
    except GeometryError:
        return None
    sec = dec.sections
    gap = max(np.abs(sec.sigma_dagger).max(initial=0.0), np.abs(sec.sigma).max(initial=0.0))
    if gap > tol:
        return None
    phi = dec.psi
    if np.abs(f1(phi.values) - f2.values).max() > tol:
        return None
    if group == "DiffVol":
        if np.abs(push_density(phi, mu).values - mu.values).max() > tol:
            return None
    return phi
