"""First-order geometry of the bundle projections.

Tangent projections onto T Gr and T Gr_vol, first variation of volume, mean
curvature vectors and the tangent-space membership tests.  Discrete
(k-1)-forms on S are nodal: scalars on 1-D grids, cartesian 1-form
coefficients (a_x, a_y) on the disk.  Forms on N are stored pulled back to S.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import Embedding, TangentField, check_embedding, volume_element
from .errors import DimensionMismatch, FitFailure, NotAnEmbedding, Unsupported
from .mesh import DensityForm, ParamManifold, SampleGrid
from .tubular import TubularChart, _dagger_frames

__all__ = [
    "TangentGrVector",
    "TangentVolGrVector",
    "MeanCurvature",
    "Membership",
    "tangent_project_gr",
    "tangent_project_vol",
    "exterior_derivative",
    "edge_masses",
    "primitive",
    "coboundary",
    "collar_extension",
    "split_tangent",
    "join_tangent",
    "volume",
    "dvol_embedding",
    "mean_curvature",
    "membership",
]


# ---------------------------------------------------------------------------
# helpers


def _vectors(f: Embedding, v) -> np.ndarray:
    if isinstance(v, TangentField):
        vec = v.vectors
    else:
        vec = np.asarray(v, float).reshape(f.grid.size, -1)
    if vec.shape != f.values.shape:
        raise DimensionMismatch(f"vector field of shape {vec.shape} along a map of shape {f.values.shape}")
    return vec


def _require_embedding(f: Embedding):
    diag = check_embedding(f)
    if not diag.ok:
        raise NotAnEmbedding(f"not an embedding: {diag.status}")


def _param_field(f: Embedding, vec: np.ndarray) -> np.ndarray:
    """u = J^+ v, the parameter field whose push-forward is the tangential part of v."""
    jac = f.node_jacobian
    gram = np.einsum("nmk,nml->nkl", jac, jac)
    return np.linalg.solve(gram, np.einsum("nmk,nm->nk", jac, vec)[..., None])[..., 0]


def _tangential(f: Embedding, u: np.ndarray) -> np.ndarray:
    return np.einsum("nmk,nk->nm", f.node_jacobian, u)


def _nodal_gradient(grid: SampleGrid, values: np.ndarray) -> np.ndarray:
    """Derivatives of nodal scalars (n, c) through the grid interpolant: (n, c, k)."""
    return grid.interpolant(np.asarray(values, float).reshape(grid.size, -1)).node_jacobian()


def _divergence(grid: SampleGrid, weight: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(1/w) d_j (w u^j) at the nodes."""
    grad = _nodal_gradient(grid, weight[:, None] * u)
    return np.trace(grad, axis1=1, axis2=2) / weight


def _boundary_tangents(grid: SampleGrid) -> np.ndarray:
    """d/dtheta at disk boundary nodes (unit circle)."""
    b = grid.nodes[grid.boundary_nodes]
    return np.column_stack([-b[:, 1], b[:, 0]])


def _boundary_param_normals(grid: SampleGrid) -> np.ndarray:
    """Outward unit normals of S at its boundary nodes, in parameter space."""
    if grid.manifold is ParamManifold.INTERVAL:
        return np.array([[-1.0], [1.0]])
    return grid.nodes[grid.boundary_nodes].copy()


# ---------------------------------------------------------------------------
# discrete forms


def exterior_derivative(grid: SampleGrid, alpha) -> DensityForm:
    """d of a nodal (k-1)-form: scalars (1-D grids) or (a_x, a_y) on the disk."""
    alpha = np.asarray(alpha, float)
    if grid.k == 1:
        return DensityForm(grid, _nodal_gradient(grid, alpha.reshape(-1, 1))[:, 0, 0])
    grad = _nodal_gradient(grid, alpha.reshape(-1, 2))
    return DensityForm(grid, grad[:, 1, 0] - grad[:, 0, 1])


def _trace(grid: SampleGrid, alpha) -> np.ndarray:
    """Pullback of a nodal (k-1)-form to the boundary nodes (along d/dtheta on the disk)."""
    alpha = np.asarray(alpha, float)
    if not grid.has_boundary:
        return np.zeros(0)
    if grid.k == 1:
        return alpha.reshape(-1)[grid.boundary_nodes]
    a = alpha.reshape(-1, 2)[grid.boundary_nodes]
    return np.sum(a * _boundary_tangents(grid), axis=1)


def edge_masses(rho: DensityForm) -> np.ndarray:
    """Integral of the interval density over each grid edge (a 1-cochain)."""
    grid = rho.grid
    if grid.manifold is not ParamManifold.INTERVAL:
        raise Unsupported("edge cochains are only built on the interval")
    anti = grid.interpolant(rho.values[:, None]).antiderivative(grid.nodes)[:, 0]
    return np.diff(anti)


def primitive(rho: DensityForm) -> np.ndarray:
    """Nodal 0-form alpha with alpha(0) = 0 and d alpha = rho edge by edge."""
    return np.concatenate([[0.0], np.cumsum(edge_masses(rho))])


def coboundary(alpha) -> np.ndarray:
    """Discrete d of a nodal 0-form on the interval: one value per edge."""
    return np.diff(np.asarray(alpha, float).reshape(-1))


# ---------------------------------------------------------------------------
# tangent projections


@dataclass(frozen=True, eq=False)
class TangentGrVector:
    """(w_dagger, w_perp): boundary conormal speeds and normal part."""

    w_dagger: np.ndarray  # (nb,)
    w_perp: np.ndarray  # (n, m)

    def norm(self) -> float:
        parts = [np.abs(self.w_dagger).max(initial=0.0), np.abs(self.w_perp).max(initial=0.0)]
        return float(max(parts))

    def distance(self, other: "TangentGrVector") -> float:
        d = max(
            np.abs(self.w_dagger - other.w_dagger).max(initial=0.0),
            np.abs(self.w_perp - other.w_perp).max(initial=0.0),
        )
        return float(d)

    def to_json(self) -> dict:
        return {"w_dagger": self.w_dagger.tolist(), "w_perp": self.w_perp.tolist()}


@dataclass(frozen=True, eq=False)
class TangentVolGrVector:
    """(w_dagger, alpha, d_alpha, w_perp) with alpha = i_{v_T} nu pulled back to S."""

    w_dagger: np.ndarray
    alpha: np.ndarray  # (n,) or (n, 2)
    d_alpha: DensityForm
    w_perp: np.ndarray
    nu_boundary: np.ndarray  # nu_d evaluated on the boundary tangent, per boundary node

    @property
    def alpha_trace(self) -> np.ndarray:
        return _trace(self.d_alpha.grid, self.alpha)

    @property
    def compatibility_residual(self) -> float:
        """max |w_dagger nu_d - i^* alpha| over the boundary nodes."""
        if not len(self.w_dagger):
            return 0.0
        return float(np.abs(self.w_dagger * self.nu_boundary - self.alpha_trace).max())

    def norm(self) -> float:
        parts = [
            np.abs(self.w_dagger).max(initial=0.0),
            np.abs(self.d_alpha.values).max(initial=0.0),
            np.abs(self.w_perp).max(initial=0.0),
        ]
        return float(max(parts))

    def distance(self, other: "TangentVolGrVector") -> float:
        """Compared on (w_dagger, d_alpha, w_perp); alpha itself is not canonical."""
        return float(
            max(
                np.abs(self.w_dagger - other.w_dagger).max(initial=0.0),
                np.abs(self.d_alpha.values - other.d_alpha.values).max(initial=0.0),
                np.abs(self.w_perp - other.w_perp).max(initial=0.0),
            )
        )

    def to_json(self) -> dict:
        return {
            "w_dagger": self.w_dagger.tolist(),
            "alpha": self.alpha.tolist(),
            "d_alpha": self.d_alpha.values.tolist(),
            "w_perp": self.w_perp.tolist(),
            "compatibility_residual": self.compatibility_residual,
        }


def tangent_project_gr(f: Embedding, v, check: bool = True) -> TangentGrVector:
    """T_f pi(v): conormal component on the boundary and normal component."""
    if check:
        _require_embedding(f)
    vec = _vectors(f, v)
    w_perp = vec - _tangential(f, _param_field(f, vec))
    if f.codim == 0:
        w_perp = np.zeros_like(vec)
    daggers = _dagger_frames(f)
    w_dagger = np.sum(vec[f.grid.boundary_nodes] * daggers, axis=1) if len(daggers) else np.zeros(0)
    return TangentGrVector(w_dagger, w_perp)


def _nu_boundary(f: Embedding, mu: DensityForm) -> np.ndarray:
    """i_n nu on the boundary tangent, from nu = f_* mu and the dagger frame n."""
    grid = f.grid
    if not grid.has_boundary:
        return np.zeros(0)
    b = grid.boundary_nodes
    n_param = _param_field(f, _full_dagger(f))[b]
    m = mu.values[b]
    if grid.k == 1:
        return m * n_param[:, 0]
    tau = _boundary_tangents(grid)
    return m * (n_param[:, 0] * tau[:, 1] - n_param[:, 1] * tau[:, 0])


def _full_dagger(f: Embedding) -> np.ndarray:
    vec = np.zeros_like(f.values)
    vec[f.grid.boundary_nodes] = _dagger_frames(f)
    return vec


def _contract(grid: SampleGrid, m: np.ndarray, u: np.ndarray) -> np.ndarray:
    """i_u (m dx^1..dx^k) as a nodal (k-1)-form."""
    if grid.k == 1:
        return m * u[:, 0]
    return np.column_stack([-m * u[:, 1], m * u[:, 0]])


def tangent_project_vol(f: Embedding, mu: DensityForm, v, check: bool = True) -> TangentVolGrVector:
    """T_f pi_vol(v) = (w_dagger, Lie derivative of nu along v_T, w_perp)."""
    if check:
        _require_embedding(f)
    mu.require_volume_form()
    vec = _vectors(f, v)
    gr = tangent_project_gr(f, vec, check=False)
    grid = f.grid
    u = _param_field(f, vec)
    alpha = _contract(grid, mu.values, u)
    d_alpha = exterior_derivative(grid, alpha)
    return TangentVolGrVector(gr.w_dagger, alpha, d_alpha, gr.w_perp, _nu_boundary(f, mu))


# ---------------------------------------------------------------------------
# collar extension and the split description of T Gr_vol


def _collar_profile(chart: TubularChart) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per boundary component: bump value at each node and the boundary index it belongs to."""
    grid = chart.grid
    rho = chart.bump
    g = chart.boundary_speeds
    eps = chart.eps
    s = grid.nodes
    if grid.manifold is ParamManifold.INTERVAL:
        return [rho(-s[:, 0] * g[0] / eps), rho((s[:, 0] - 1.0) * g[1] / eps)]
    r = np.linalg.norm(s, axis=1)
    theta = np.mod(np.arctan2(s[:, 1], s[:, 0]), 2 * np.pi)
    speed = grid.boundary_interpolant(g)(theta[:, None])[:, 0]
    return [rho((r - 1.0) * speed / eps), theta]


def collar_extension(chart: TubularChart, values) -> np.ndarray:
    """beta(w): collar-supported nodal (k-1)-form whose boundary trace is ``values``."""
    grid = chart.grid
    values = np.asarray(values, float).reshape(-1)
    if not grid.has_boundary:
        return np.zeros(grid.size)
    prof = _collar_profile(chart)
    if grid.manifold is ParamManifold.INTERVAL:
        return prof[0] * values[0] + prof[1] * values[1]
    bump, theta = prof
    c = grid.boundary_interpolant(values)(theta[:, None])[:, 0]
    s = grid.nodes
    r2 = np.maximum(np.sum(s * s, axis=1), 1e-300)
    # c dtheta with dtheta = (-y dx + x dy) / r^2
    coef = np.where(bump > 0, bump * c / r2, 0.0)
    return np.column_stack([-coef * s[:, 1], coef * s[:, 0]])


def split_tangent(tv: TangentVolGrVector, chart: TubularChart):
    """(w_dagger, d(alpha - beta(w nu_d)), w_perp); the middle entry has zero integral."""
    beta = collar_extension(chart, tv.w_dagger * tv.nu_boundary)
    exact = exterior_derivative(chart.grid, np.asarray(tv.alpha) - beta.reshape(np.shape(tv.alpha)))
    return tv.w_dagger, exact, tv.w_perp


def join_tangent(w_dagger, exact: DensityForm, w_perp, nu_boundary, chart: TubularChart) -> DensityForm:
    """Inverse of split_tangent on the middle slot: d_alpha = exact + d beta(w nu_d)."""
    beta = collar_extension(chart, np.asarray(w_dagger) * np.asarray(nu_boundary))
    d_beta = exterior_derivative(chart.grid, beta)
    return DensityForm(exact.grid, exact.values + d_beta.values)


# ---------------------------------------------------------------------------
# volume and its first variation


def _boundary_derivative(f: Embedding) -> np.ndarray:
    """d f / dtheta at disk boundary nodes."""
    grid = f.grid
    return grid.boundary_interpolant(f.boundary_values()).node_jacobian()[:, :, 0]


def _orientation(f: Embedding) -> float:
    jac = f.node_jacobian
    det = np.linalg.det(jac) if f.k == 2 else jac[:, 0, 0]
    return 1.0 if np.median(det) > 0 else -1.0


def volume(f: Embedding) -> float:
    """Enclosed Lebesgue volume (codim 0) or induced Riemannian volume (positive codim)."""
    grid = f.grid
    if f.codim == 0:
        if grid.manifold is ParamManifold.INTERVAL:
            return float(abs(f.values[-1, 0] - f.values[0, 0]))
        if grid.manifold is ParamManifold.DISK:
            x = f.boundary_values()
            dx = _boundary_derivative(f)
            area = 0.5 * grid.boundary_quad_weights @ (x[:, 0] * dx[:, 1] - x[:, 1] * dx[:, 0])
            return float(abs(area))
        raise Unsupported("codimension-0 circles have no enclosed volume")
    return float(grid.quad_weights @ volume_element(f))


def _interp_mean_curvature(f: Embedding) -> np.ndarray:
    """trace of the second fundamental form from the interpolant's second derivatives."""
    jac = f.node_jacobian
    hess = f.node_hessian
    gram = np.einsum("nmk,nml->nkl", jac, jac)
    ginv = np.linalg.inv(gram)
    trace = np.einsum("nkl,nmkl->nm", ginv, hess)
    u = np.linalg.solve(gram, np.einsum("nmk,nm->nk", jac, trace)[..., None])[..., 0]
    return trace - np.einsum("nmk,nk->nm", jac, u)


def _boundary_flux(f: Embedding, vec: np.ndarray) -> float:
    """integral over the boundary of g(v, n) against the induced boundary measure."""
    grid = f.grid
    if not grid.has_boundary:
        return 0.0
    b = grid.boundary_nodes
    normal = _dagger_frames(f)
    flux = np.sum(vec[b] * normal, axis=1)
    if grid.manifold is ParamManifold.INTERVAL:
        return float(flux.sum())
    speed = np.linalg.norm(_boundary_derivative(f), axis=1)
    return float(grid.boundary_quad_weights @ (flux * speed))


def dvol_embedding(f: Embedding, v, case: str | None = None, curvature: str = "interp") -> float:
    """First variation of vol along v; ``case`` is 'codim0' or 'positive_codim'.

    In positive codimension the value is the boundary flux minus the pairing
    with the mean curvature, taken from the interpolant (``curvature="interp"``)
    or from quadric fits (``"quadric"``).  ``curvature="weak"`` integrates
    div_N(v) instead, which is the exact derivative of the discrete volume.
    """
    vec = _vectors(f, v)
    expected = "codim0" if f.codim == 0 else "positive_codim"
    case = expected if case is None else case
    if case not in ("codim0", "positive_codim"):
        raise ValueError(f"unknown case {case!r}")
    if case != expected:
        raise DimensionMismatch(f"case {case!r} needs {'k = m' if case == 'codim0' else 'k < m'}")
    grid = f.grid
    if case == "codim0":
        sign = _orientation(f)
        if grid.manifold is ParamManifold.INTERVAL:
            return float(sign * (vec[-1, 0] - vec[0, 0]))
        if grid.manifold is ParamManifold.CIRCLE:
            raise Unsupported("codimension-0 circles have no enclosed volume")
        vb = vec[grid.boundary_nodes]
        dx = _boundary_derivative(f)
        return float(sign * grid.boundary_quad_weights @ (vb[:, 0] * dx[:, 1] - vb[:, 1] * dx[:, 0]))
    if curvature == "weak":
        jac = f.node_jacobian
        gram = np.einsum("nmk,nml->nkl", jac, jac)
        dv = _nodal_gradient(grid, vec)
        div = np.einsum("nkl,nmk,nml->n", np.linalg.inv(gram), jac, dv)
        return float(grid.quad_weights @ (div * volume_element(f)))
    if curvature == "quadric":
        h = mean_curvature(f).H
    else:
        h = _interp_mean_curvature(f)
    bulk = grid.quad_weights @ (np.sum(h * vec, axis=1) * volume_element(f))
    return float(_boundary_flux(f, vec) - bulk)


# ---------------------------------------------------------------------------
# mean curvature by local quadric fits


@dataclass(frozen=True, eq=False)
class MeanCurvature:
    base: Embedding
    H: np.ndarray  # (n, m)

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.H, axis=1)

    def to_json(self) -> dict:
        return {"H": self.H.tolist(), "magnitude": self.magnitude.tolist()}


def _curve_stencils(grid: SampleGrid, width: int = 2) -> np.ndarray:
    n = grid.size
    offsets = np.arange(-width, width + 1)
    if grid.manifold is ParamManifold.CIRCLE:
        return (np.arange(n)[:, None] + offsets) % n
    start = np.clip(np.arange(n) - width, 0, n - 2 * width - 1)
    return start[:, None] + np.arange(2 * width + 1)


def _disk_stencils(grid: SampleGrid, rings: int = 2) -> np.ndarray:
    # node count of `rings` hexagonal rings around a point
    count = min(1 + 3 * rings * (rings + 1), grid.size)
    return grid._tree.query(grid.nodes, k=count)[1]


def mean_curvature(n, min_points: int | None = None) -> MeanCurvature:
    """Mean curvature vectors from quadric fits over 2-neighbour (curve) or 2-ring (disk) stencils."""
    f = getattr(n, "representative", n)
    if f.codim == 0:
        raise DimensionMismatch("mean curvature needs positive codimension")
    grid = f.grid
    x = f.values
    jac = f.node_jacobian
    H = np.zeros_like(x)
    if grid.k == 1:
        stencils = _curve_stencils(grid)
        for i, st in enumerate(stencils):
            t = jac[i, :, 0] / np.linalg.norm(jac[i, :, 0])
            d = x[st] - x[i]
            a = d @ t
            design = np.column_stack([np.ones_like(a), a, a * a, a**3])
            if np.linalg.matrix_rank(design) < 4:
                raise FitFailure(f"degenerate curve stencil at node {i}")
            normal_part = d - np.outer(a, t)
            coef, *_ = np.linalg.lstsq(design, normal_part, rcond=None)
            slope = coef[1] @ coef[1]
            H[i] = 2 * coef[2] / (1 + slope) ** 1.5
            H[i] -= (H[i] @ t) * t
        return MeanCurvature(f, H)
    if f.ambient_dim != 3:
        raise Unsupported("quadric fits for surfaces are implemented in R^3")
    min_points = 8 if min_points is None else min_points
    for i, st in enumerate(_disk_stencils(grid)):
        st = np.asarray(st)
        if len(st) < min_points:
            raise FitFailure(f"only {len(st)} stencil points at node {i}")
        q, _ = np.linalg.qr(jac[i])
        nrm = np.cross(q[:, 0], q[:, 1])
        d = x[st] - x[i]
        a1, a2, b = d @ q[:, 0], d @ q[:, 1], d @ nrm
        scale = np.abs(np.concatenate([a1, a2])).max()
        z1, z2 = a1 / scale, a2 / scale
        design = np.column_stack([np.ones_like(z1), z1, z2, z1 * z1, z1 * z2, z2 * z2])
        if np.linalg.matrix_rank(design) < 6:
            raise FitFailure(f"degenerate quadric stencil at node {i}")
        c, *_ = np.linalg.lstsq(design, b, rcond=None)
        p, r = c[1] / scale, c[2] / scale
        hxx, hxy, hyy = 2 * c[3] / scale**2, c[4] / scale**2, 2 * c[5] / scale**2
        w2 = 1 + p * p + r * r
        trace = ((1 + r * r) * hxx - 2 * p * r * hxy + (1 + p * p) * hyy) / w2**1.5
        H[i] = trace * nrm
    return MeanCurvature(f, H)


# ---------------------------------------------------------------------------
# membership predicates


@dataclass(frozen=True)
class Membership:
    which: str
    member: bool
    residual: float
    tolerance: float

    def __bool__(self) -> bool:
        return self.member

    def to_json(self) -> dict:
        return {"which": self.which, "member": self.member, "residual": self.residual, "tolerance": self.tolerance}


def _vertical_gr_residual(f: Embedding, vec: np.ndarray, u: np.ndarray) -> float:
    normal = np.abs(vec - _tangential(f, u)).max(initial=0.0)
    if not f.grid.has_boundary:
        return float(normal)
    b = f.grid.boundary_nodes
    crossing = np.abs(np.sum(u[b] * _boundary_param_normals(f.grid), axis=1))
    speed = np.linalg.norm(f.node_jacobian[b], axis=(1, 2))
    return float(max(normal, (crossing * speed).max()))


def membership(f: Embedding, mu: DensityForm | None, v, which: str, tol: float = 1e-6) -> Membership:
    """Is v in T_f Emb0, T_f Emb_vol, or vertical for pi / pi_vol?  Residual per identity."""
    vec = _vectors(f, v)
    grid = f.grid
    if which == "Emb0":
        residual = abs(dvol_embedding(f, vec))
    elif which == "EmbVol":
        if f.codim == 0:
            # div(v o f^-1) = tr(Dv Df^-1)
            dv = _nodal_gradient(grid, vec)
            div = np.trace(dv @ np.linalg.inv(f.node_jacobian), axis1=1, axis2=2)
            residual = float(np.abs(div).max())
        else:
            u = _param_field(f, vec)
            div = _divergence(grid, volume_element(f), u)
            h = _interp_mean_curvature(f)
            residual = float(np.abs(div - np.sum(h * vec, axis=1)).max())
    elif which in ("VerticalGr", "VerticalVol"):
        u = _param_field(f, vec)
        residual = _vertical_gr_residual(f, vec, u)
        if which == "VerticalVol":
            if mu is None:
                raise ValueError("VerticalVol needs the reference density mu")
            residual = max(residual, float(np.abs(_divergence(grid, mu.values, u)).max()))
    else:
        raise ValueError(f"unknown membership test {which!r}")
    return Membership(which, bool(residual < tol), float(residual), float(tol))
