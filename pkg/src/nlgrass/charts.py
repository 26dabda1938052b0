"""Charts on the space of submanifolds diffeomorphic to S.

A point N is represented by any embedding; a chart centred at N0 = f0(S)
identifies N with a pair of sections (sigma_dagger, sigma) through the unique
normal embedding f_perp whose image is N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._solve import newton_solve
from .embedding import DiffeoS, Embedding, check_embedding
from .errors import NotADiffeo, NotAnEmbedding, NotInChartDomain, OutsideTube, SectionOutOfRange
from .mesh import ParamManifold
from .tubular import (
    BoundaryShift,
    FrameTransport,
    SectionPair,
    TubularChart,
    boundary_shift_map,
    closest_point_project,
    transport_normal_frames,
)

__all__ = [
    "GrassPoint",
    "NormalDecomposition",
    "decompose",
    "reparam_to_normal",
    "normal_embedding",
    "normal_embedding_from_sections",
    "chart_forward",
    "chart_inverse",
    "chart_change",
]

TWO_PI = 2 * np.pi


@dataclass(frozen=True, eq=False)
class GrassPoint:
    """A submanifold, via a representative embedding and optionally its chart sections."""

    representative: Embedding
    canonical: SectionPair | None = None
    chart: TubularChart | None = None

    @classmethod
    def of(cls, f: Embedding, check: bool = True) -> "GrassPoint":
        if check:
            diag = check_embedding(f)
            if not diag.ok:
                raise NotAnEmbedding(f"representative is not an embedding: {diag.status}")
        return cls(f)


@dataclass(frozen=True, eq=False)
class NormalDecomposition:
    """Everything produced while writing f = f_perp o psi_f relative to a chart."""

    sections: SectionPair
    psi: DiffeoS  # psi_f
    psi_inv_nodes: np.ndarray  # psi_f^{-1} at the nodes, the parameters u_i
    f_perp: Embedding
    shift: BoundaryShift
    transport: FrameTransport


def _as_embedding(n) -> Embedding:
    return n.representative if isinstance(n, GrassPoint) else n


def normal_embedding_from_sections(sections: SectionPair, chart: TubularChart) -> Embedding:
    """f_perp = exp o H o sigma over the shifted base parameters."""
    sections.validate(chart)
    shift = boundary_shift_map(sections.sigma_dagger, chart)
    transport = transport_normal_frames(shift, chart)
    return _assemble(chart, shift, transport, sections.sigma)


def _assemble(chart, shift, transport, sigma) -> Embedding:
    f0 = chart.f0
    base = f0.values.copy()
    moved = shift.moved
    if moved.any():
        base[moved] = f0(shift.node_targets[moved])
    values = base + transport.apply(sigma) if chart.codim else base
    return Embedding(f0.grid, values, f0.basis)


# ---------------------------------------------------------------------------
# boundary section recovery


def _interval_boundary_section(f: Embedding, chart: TubularChart):
    ends, _ = closest_point_project(f.values[[0, -1]], chart, extended=True)
    p = ends[:, 0]
    g0, g1 = chart.boundary_speeds
    # each end of N goes with the nearer end of N0
    if abs(p[0]) + abs(p[1] - 1) <= abs(p[1]) + abs(p[0] - 1):
        left, right = p[0], p[1]
    else:
        left, right = p[1], p[0]
    return np.array([left * g0, (right - 1) * g1])


def _disk_boundary_section(f: Embedding, chart: TubularChart):
    """For every boundary angle, the radius at which the projection of dN crosses it."""
    grid = f.grid
    bidx = grid.boundary_nodes
    angles = grid.boundary_angles
    trace = grid.boundary_interpolant(f.values[bidx])

    def proj(phi):
        p, _ = closest_point_project(trace(phi[:, None]), chart, extended=True)
        return p

    p = proj(angles)
    alpha = np.unwrap(np.arctan2(p[:, 1], p[:, 0]))
    sign = 1.0 if alpha[-1] >= alpha[0] else -1.0
    # periodic inverse interpolation for the seeds
    a_ext = np.concatenate([alpha - sign * TWO_PI, alpha, alpha + sign * TWO_PI])
    phi_ext = np.concatenate([angles - TWO_PI, angles, angles + TWO_PI])
    order = np.argsort(a_ext)
    base = alpha[0]
    targets = base + np.mod(angles - base, TWO_PI)
    phi = np.interp(targets, a_ext[order], phi_ext[order])
    h = 1e-6
    for _ in range(30):
        pp = proj(phi)
        diff = (np.arctan2(pp[:, 1], pp[:, 0]) - angles + np.pi) % TWO_PI - np.pi
        if np.abs(diff).max() < 1e-13:
            break
        ap = proj(phi + h)
        am = proj(phi - h)
        da = ((np.arctan2(ap[:, 1], ap[:, 0]) - np.arctan2(am[:, 1], am[:, 0]) + np.pi) % TWO_PI - np.pi) / (2 * h)
        phi = phi - diff / da
    p = proj(phi)
    r = np.linalg.norm(p, axis=1)
    return (r - 1.0) * chart.boundary_speeds


def _boundary_section(f: Embedding, chart: TubularChart) -> np.ndarray:
    kind = chart.grid.manifold
    if kind is ParamManifold.INTERVAL:
        return _interval_boundary_section(f, chart)
    if kind is ParamManifold.DISK:
        return _disk_boundary_section(f, chart)
    return np.zeros(0)


# ---------------------------------------------------------------------------
# decomposition


def _inverse_seeds(f: Embedding, proj_params: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Guess u with proj(f(u)) = target by inverting the projected node parameters."""
    grid = f.grid
    nodes = grid.nodes
    if grid.manifold is ParamManifold.INTERVAL:
        order = np.argsort(proj_params[:, 0])
        return np.interp(targets[:, 0], proj_params[order, 0], nodes[order, 0])[:, None]
    if grid.manifold is ParamManifold.CIRCLE:
        lifted = np.unwrap(proj_params[:, 0])
        theta = nodes[:, 0]
        sign = 1.0 if lifted[-1] >= lifted[0] else -1.0
        x = np.concatenate([lifted - sign * TWO_PI, lifted, lifted + sign * TWO_PI])
        y = np.concatenate([theta - TWO_PI, theta, theta + TWO_PI])
        order = np.argsort(x)
        t = lifted.min() + np.mod(targets[:, 0] - lifted.min(), TWO_PI)
        return np.mod(np.interp(t, x[order], y[order]), TWO_PI)[:, None]
    _, idx = cKDTree(proj_params).query(targets)
    return nodes[idx].copy()


def _solve_preimages(f: Embedding, chart: TubularChart, targets: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """u_i with f(u_i) - f0(s'_i) orthogonal to T_{s'_i} N0^ext."""
    f0 = chart.f0
    base = f0(targets)
    tang = f0.jacobian(targets)  # (n, m, k)

    def residual(u, rows):
        r = np.einsum("qmk,qm->qk", tang[rows], f(u) - base[rows])
        jac = np.einsum("qmk,qml->qkl", tang[rows], f.jacobian(u))
        return r, jac

    grid = f.grid
    clamp = grid.clamp if grid.manifold is not ParamManifold.DISK else None
    u = newton_solve(residual, seeds, clamp=clamp)
    r, _ = residual(u, np.arange(len(u)))
    scale = np.linalg.norm(tang, axis=(1, 2)) * (1 + np.linalg.norm(base, axis=1))
    rows = np.arange(len(u))
    if grid.manifold is ParamManifold.DISK:
        rows = grid.interior_nodes
        rad = np.linalg.norm(u[rows], axis=1)
        if rad.max() > 1 + 0.5 * grid.spacing:
            raise NotInChartDomain("normal preimage leaves the parameter disk")
        u = grid.clamp(u)
        u[grid.boundary_nodes] = _boundary_preimages(f, chart, targets, seeds)
    if np.any(np.linalg.norm(r[rows], axis=1) > 1e-9 * scale[rows]):
        raise NotInChartDomain("could not locate the normal preimage of some base nodes")
    return u


def _boundary_preimages(f: Embedding, chart: TubularChart, targets, seeds) -> np.ndarray:
    """Points of dN over the shifted boundary nodes, found along the boundary trace."""
    grid = f.grid
    b = grid.boundary_nodes
    trace = grid.boundary_interpolant(f.values[b])
    tgt = targets[b]
    ang = np.arctan2(tgt[:, 1], tgt[:, 0])
    along = np.einsum("bmk,bk->bm", chart.f0.jacobian(tgt), np.column_stack([-np.sin(ang), np.cos(ang)]))
    base = chart.f0(tgt)
    phi0 = np.arctan2(seeds[b, 1], seeds[b, 0])[:, None]

    def residual(phi, rows):
        p = phi
        r = np.sum((trace(p) - base[rows]) * along[rows], axis=1)[:, None]
        jac = np.sum(trace.jacobian(p)[:, :, 0] * along[rows], axis=1)[:, None, None]
        return r, jac

    phi = newton_solve(residual, phi0)[:, 0]
    r, _ = residual(phi[:, None], np.arange(len(b)))
    if np.abs(r).max() > 1e-9 * (1 + np.abs(base).max()) * np.linalg.norm(along, axis=1).max():
        raise NotInChartDomain("could not locate the boundary preimage of some base nodes")
    return np.column_stack([np.cos(phi), np.sin(phi)])


def decompose(n, chart: TubularChart) -> NormalDecomposition:
    """Write the representative f as f_perp o psi_f relative to ``chart``."""
    f = _as_embedding(n)
    if not f.grid.same_as(chart.grid):
        raise NotInChartDomain("representative and chart use different grids")
    grid = f.grid
    proj, _ = closest_point_project(f.values, chart, extended=grid.has_boundary)
    sigma_dagger = _boundary_section(f, chart)
    if len(sigma_dagger) and np.abs(sigma_dagger).max() >= chart.eps / 2:
        raise NotInChartDomain("boundary of N leaves the collar")
    shift = boundary_shift_map(sigma_dagger, chart)
    transport = transport_normal_frames(shift, chart)

    psi_vals = shift.inverse_at(proj)
    if grid.has_boundary:
        psi_vals = _snap_boundary(grid, psi_vals)
    try:
        psi = DiffeoS(grid, grid.clamp(psi_vals))
    except NotADiffeo as exc:
        raise NotInChartDomain(str(exc)) from exc
    dets = psi.node_jacobian_det
    if not (np.all(dets > 0) or np.all(dets < 0)):
        raise NotInChartDomain("projection of N onto the base folds")

    targets = shift.node_targets
    seeds = _inverse_seeds(f, proj, targets)
    u = _solve_preimages(f, chart, targets, seeds)
    if grid.has_boundary:
        u = _snap_boundary(grid, u)
    y = f(u)
    sigma = transport.pullback(y - _base_points(chart, shift)) if chart.codim else np.zeros((grid.size, 0))
    sections = SectionPair(sigma_dagger, sigma)
    try:
        sections.validate(chart)
    except SectionOutOfRange as exc:
        raise NotInChartDomain(str(exc)) from exc
    f_perp = Embedding(grid, y, f.basis)
    return NormalDecomposition(sections, psi, u, f_perp, shift, transport)


def _base_points(chart, shift):
    base = chart.f0.values.copy()
    moved = shift.moved
    if moved.any():
        base[moved] = chart.f0(shift.node_targets[moved])
    return base


def _snap_boundary(grid, params):
    """Put boundary nodes of a map S -> S exactly on the boundary."""
    params = np.array(params, float)
    b = grid.boundary_nodes
    if grid.manifold is ParamManifold.INTERVAL:
        params[b, 0] = np.round(params[b, 0])
    else:
        params[b] /= np.linalg.norm(params[b], axis=1)[:, None]
    return params


def reparam_to_normal(f, chart: TubularChart) -> DiffeoS:
    """psi_f: node s goes to the base parameter of f(s), undoing the collar shift."""
    return decompose(f, chart).psi


def normal_embedding(f, chart: TubularChart) -> Embedding:
    """f_perp = f o psi_f^{-1}, the normal embedding with the same image as f."""
    return decompose(f, chart).f_perp


def chart_forward(n, chart: TubularChart) -> SectionPair:
    """Sections (sigma_dagger, sigma) describing N in ``chart``."""
    try:
        return decompose(n, chart).sections
    except OutsideTube as exc:
        raise NotInChartDomain(str(exc)) from exc


def chart_inverse(sections: SectionPair, chart: TubularChart) -> GrassPoint:
    return GrassPoint(normal_embedding_from_sections(sections, chart), sections, chart)


def chart_change(sections: SectionPair, chart_i: TubularChart, chart_j: TubularChart) -> SectionPair:
    """Sections in ``chart_j`` of the submanifold with ``sections`` in ``chart_i``."""
    if chart_i is chart_j:
        return SectionPair(sections.sigma_dagger.copy(), sections.sigma.copy())
    return chart_forward(chart_inverse(sections, chart_i), chart_j)
