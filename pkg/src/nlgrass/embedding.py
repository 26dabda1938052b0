"""Embeddings f: S -> R^m, reparametrisations of S and induced densities."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from ._solve import newton_project, newton_solve
from .errors import DimensionMismatch, GridMismatch, NotADiffeo, NotAnImmersion, Unsupported
from .mesh import DensityForm, ParamManifold, SampleGrid

__all__ = [
    "Embedding",
    "DiffeoS",
    "TangentField",
    "EmbeddingDiagnosis",
    "SubmanifoldDensity",
    "compose_reparam",
    "check_embedding",
    "induced_volume",
    "pullback_volume",
    "pushforward_density",
    "pull_density",
    "push_density",
    "distance_to_image",
    "hausdorff_distance",
]

TWO_PI = 2 * np.pi


class _LinearInterpolant:
    """Piecewise-linear interpolation for the 'linear' basis (1-D grids only)."""

    def __init__(self, grid: SampleGrid, values: np.ndarray):
        s = grid.nodes[:, 0]
        if grid.manifold is ParamManifold.CIRCLE:
            s = np.append(s, TWO_PI)
            values = np.vstack([values, values[:1]])
        self._s, self._v = s, values
        self._slopes = np.diff(values, axis=0) / np.diff(s)[:, None]
        self._periodic = grid.manifold is ParamManifold.CIRCLE

    def _locate(self, params):
        t = np.asarray(params, float)[:, 0]
        if self._periodic:
            t = np.mod(t, TWO_PI)
        i = np.clip(np.searchsorted(self._s, t, side="right") - 1, 0, len(self._s) - 2)
        return t, i

    def __call__(self, params):
        t, i = self._locate(params)
        return self._v[i] + (t - self._s[i])[:, None] * self._slopes[i]

    def jacobian(self, params):
        _, i = self._locate(params)
        return self._slopes[i][:, :, None]

    def hessian(self, params):
        q = len(params)
        return np.zeros((q, self._v.shape[1], 1, 1))

    def node_jacobian(self):
        return self.jacobian(self._s[: len(self._slopes)][:, None])


def _make_interpolant(grid: SampleGrid, values: np.ndarray, basis: str):
    if basis == "smooth":
        return grid.interpolant(values)
    if basis == "linear":
        if grid.k != 1:
            raise Unsupported("the piecewise-linear basis is only available on 1-D grids")
        return _LinearInterpolant(grid, values)
    raise ValueError(f"unknown basis {basis!r}")


@dataclass(frozen=True, eq=False)
class Embedding:
    """Discrete map S -> R^m given by node values and an interpolation basis."""

    grid: SampleGrid
    values: np.ndarray
    basis: str = "smooth"

    def __post_init__(self):
        values = np.asarray(self.values, float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.size:
            raise GridMismatch(f"{values.shape[0]} node values for a {self.grid.size}-node grid")
        if values.shape[1] < self.grid.k:
            raise DimensionMismatch("ambient dimension below intrinsic dimension")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: SampleGrid, fn, basis: str = "smooth") -> "Embedding":
        """Sample ``fn`` (parameter array (n, k) -> points (n, m)) at the nodes."""
        return cls(grid, np.asarray(fn(grid.nodes), float), basis)

    @property
    def ambient_dim(self) -> int:
        return self.values.shape[1]

    @property
    def k(self) -> int:
        return self.grid.k

    @property
    def codim(self) -> int:
        return self.ambient_dim - self.k

    @cached_property
    def interp(self):
        return _make_interpolant(self.grid, self.values, self.basis)

    def __call__(self, params) -> np.ndarray:
        return self.interp(np.asarray(params, float).reshape(-1, self.k))

    def jacobian(self, params) -> np.ndarray:
        return self.interp.jacobian(np.asarray(params, float).reshape(-1, self.k))

    def hessian(self, params) -> np.ndarray:
        return self.interp.hessian(np.asarray(params, float).reshape(-1, self.k))

    @cached_property
    def node_jacobian(self) -> np.ndarray:
        """Jacobian at every node, shape (n, m, k)."""
        return self.interp.node_jacobian()

    @cached_property
    def node_hessian(self) -> np.ndarray:
        interp = self.interp
        if hasattr(interp, "node_hessian"):
            return interp.node_hessian()
        return self.hessian(self.grid.nodes)

    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary_nodes]

    def with_values(self, values) -> "Embedding":
        return Embedding(self.grid, values, self.basis)

    def displaced(self, field: "TangentField | np.ndarray", t: float) -> "Embedding":
        vectors = field.vectors if isinstance(field, TangentField) else np.asarray(field, float)
        return self.with_values(self.values + t * vectors)

    def to_json(self) -> dict:
        return {"grid": self.grid.to_json(), "basis": self.basis, "values": self.values.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Embedding":
        return cls(SampleGrid.from_json(data["grid"]), np.asarray(data["values"]), data.get("basis", "smooth"))


@dataclass(frozen=True, eq=False)
class TangentField:
    """Vector field along an embedding: one ambient vector per node."""

    base: Embedding
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, float).reshape(self.base.grid.size, -1)
        if vectors.shape[1] != self.base.ambient_dim:
            raise DimensionMismatch("tangent vectors must live in the ambient space of the base")
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def from_function(cls, base: Embedding, fn) -> "TangentField":
        """``fn(params, points)`` -> vectors."""
        return cls(base, np.asarray(fn(base.grid.nodes, base.values), float))

    @classmethod
    def from_param_field(cls, base: Embedding, u) -> "TangentField":
        """Push a parameter-space vector field u (n, k) forward: Tf o u."""
        u = np.asarray(u, float).reshape(base.grid.size, base.k)
        return cls(base, np.einsum("nmk,nk->nm", base.node_jacobian, u))


# ---------------------------------------------------------------------------
# diffeomorphisms of S


class _CircleDiffeoInterp:
    """Interpolates a circle map through its periodic displacement from +-theta."""

    def __init__(self, grid: SampleGrid, values: np.ndarray):
        theta = grid.nodes[:, 0]
        lifted = np.unwrap(values[:, 0])
        step = lifted[-1] - lifted[0]
        self.sign = 1 if step >= 0 else -1
        disp = lifted - self.sign * theta
        self._disp = grid.interpolant(disp[:, None])

    def __call__(self, params):
        t = np.asarray(params, float)
        return self.sign * t + self._disp(t)

    def jacobian(self, params):
        return self.sign + self._disp.jacobian(params)

    def node_jacobian(self):
        return self.sign + self._disp.node_jacobian()


@dataclass(frozen=True, eq=False)
class DiffeoS:
    """Discrete diffeomorphism of S: node values are parameter points."""

    grid: SampleGrid
    values: np.ndarray
    orientation_sign: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, float).reshape(self.grid.size, self.grid.k)
        if self.grid.manifold is ParamManifold.CIRCLE:
            values = np.mod(values, TWO_PI)
        object.__setattr__(self, "values", values)
        if self.orientation_sign == 0:
            dets = self.node_jacobian_det
            object.__setattr__(self, "orientation_sign", 1 if np.median(dets) >= 0 else -1)

    @classmethod
    def identity(cls, grid: SampleGrid) -> "DiffeoS":
        return cls(grid, grid.nodes.copy(), 1)

    @classmethod
    def from_function(cls, grid: SampleGrid, fn) -> "DiffeoS":
        return cls(grid, np.asarray(fn(grid.nodes), float).reshape(grid.size, grid.k))

    @cached_property
    def interp(self):
        if self.grid.manifold is ParamManifold.CIRCLE:
            return _CircleDiffeoInterp(self.grid, self.values)
        return self.grid.interpolant(self.values)

    def __call__(self, params) -> np.ndarray:
        out = self.interp(np.asarray(params, float).reshape(-1, self.grid.k))
        if self.grid.manifold is ParamManifold.CIRCLE:
            out = np.mod(out, TWO_PI)
        return out

    def jacobian(self, params) -> np.ndarray:
        return self.interp.jacobian(np.asarray(params, float).reshape(-1, self.grid.k))

    @cached_property
    def node_jacobian_det(self) -> np.ndarray:
        jac = self.interp.node_jacobian()
        return np.linalg.det(jac) if jac.shape[-1] == 2 else jac[:, 0, 0]

    def validate(self, tol: float = 1e-8) -> "DiffeoS":
        """Raise NotADiffeo unless the discrete invariants hold."""
        dets = self.node_jacobian_det
        if not (np.all(dets > 0) or np.all(dets < 0)):
            raise NotADiffeo("Jacobian determinant changes sign")
        kind = self.grid.manifold
        v = self.values
        if kind is ParamManifold.INTERVAL:
            d = np.diff(v[:, 0])
            if not (np.all(d > 0) or np.all(d < 0)):
                raise NotADiffeo("interval map is not monotone on the nodes")
            ends = sorted([v[0, 0], v[-1, 0]])
            if abs(ends[0]) > tol or abs(ends[1] - 1.0) > tol:
                raise NotADiffeo("interval map does not send the boundary to the boundary")
            if v.min() < -tol or v.max() > 1 + tol:
                raise NotADiffeo("interval map leaves [0, 1]")
        elif kind is ParamManifold.CIRCLE:
            lifted = np.unwrap(v[:, 0])
            d = np.diff(np.append(lifted, lifted[0] + self.orientation_sign * TWO_PI))
            if not (np.all(d > 0) or np.all(d < 0)):
                raise NotADiffeo("circle map is not monotone on the nodes")
            if abs(abs(d.sum()) - TWO_PI) > 1e-6:
                raise NotADiffeo("circle map does not have degree +-1")
        else:
            b = v[self.grid.boundary_nodes]
            if np.abs(np.linalg.norm(b, axis=1) - 1.0).max() > tol:
                raise NotADiffeo("disk map does not send the boundary circle to itself")
            if np.linalg.norm(v, axis=1).max() > 1 + tol:
                raise NotADiffeo("disk map leaves the disk")
            ang = np.unwrap(np.arctan2(b[:, 1], b[:, 0]))
            winding = (ang[-1] - ang[0] + _wrap(ang[0] - ang[-1])) / TWO_PI
            if abs(abs(winding) - 1) > 1e-6:
                raise NotADiffeo("boundary degree is not +-1")
        return self

    def inverse_at(self, targets) -> np.ndarray:
        """Solve phi(t) = target for each target point."""
        grid = self.grid
        targets = np.asarray(targets, float).reshape(-1, grid.k)
        if grid.manifold is ParamManifold.INTERVAL:
            v = self.values[:, 0]
            order = np.argsort(v)
            seed = np.interp(targets[:, 0], v[order], grid.nodes[order, 0])[:, None]
        elif grid.manifold is ParamManifold.CIRCLE:
            lifted = np.unwrap(self.values[:, 0])
            theta = grid.nodes[:, 0]
            if self.orientation_sign < 0:
                lifted, theta = lifted[::-1], theta[::-1]
            base = lifted[0]
            x = np.concatenate([lifted - TWO_PI, lifted, lifted + TWO_PI])
            y = np.concatenate([theta - self.orientation_sign * TWO_PI, theta, theta + self.orientation_sign * TWO_PI])
            tgt = base + np.mod(targets[:, 0] - base, TWO_PI)
            seed = np.interp(tgt, x, y)[:, None]
            targets = tgt[:, None]
        else:
            _, idx = cKDTree(self.values).query(targets)
            seed = grid.nodes[idx]

        interp = self.interp

        def residual(t, rows):
            return interp(t) - targets[rows], interp.jacobian(t)

        out = newton_solve(residual, seed)
        return grid.clamp(out) if grid.manifold is not ParamManifold.DISK else out

    def inverse(self) -> "DiffeoS":
        return DiffeoS(self.grid, self.inverse_at(self.grid.nodes), self.orientation_sign)

    def compose(self, other: "DiffeoS") -> "DiffeoS":
        """self o other."""
        _same_grid(self.grid, other.grid)
        return DiffeoS(self.grid, self(other.values), self.orientation_sign * other.orientation_sign)

    def distance(self, other: "DiffeoS") -> float:
        """Nodewise sup distance (angles compared modulo 2 pi on the circle)."""
        return float(np.max(self.grid.param_distance(self.values, other.values)))

    def to_json(self) -> dict:
        return {"grid": self.grid.to_json(), "values": self.values.tolist(), "orientation_sign": self.orientation_sign}


def _wrap(a):
    return (a + np.pi) % TWO_PI - np.pi


def _same_grid(a: SampleGrid, b: SampleGrid):
    if not a.same_as(b):
        raise GridMismatch(f"grids differ: {a.to_json()} vs {b.to_json()}")


# ---------------------------------------------------------------------------
# operations


def compose_reparam(f: Embedding, phi: DiffeoS, validate: bool = True) -> Embedding:
    """f o phi, evaluated nodewise through f's interpolation basis."""
    _same_grid(f.grid, phi.grid)
    if validate:
        phi.validate()
    return f.with_values(f(phi.values))


@dataclass(frozen=True)
class EmbeddingDiagnosis:
    status: str  # "ok" | "immersion_failure" | "injectivity_failure"
    nodes: tuple = ()
    pairs: tuple = ()
    min_singular_value: float = float("nan")
    min_separation: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _singular_min(jac: np.ndarray) -> np.ndarray:
    return np.linalg.svd(jac, compute_uv=False)[:, -1]


def _neighbour_pairs(grid: SampleGrid) -> np.ndarray:
    if grid.manifold is ParamManifold.CIRCLE:
        theta = grid.nodes[:, 0]
        pts = np.column_stack([np.cos(theta), np.sin(theta)])
        r = 2 * np.sin(grid.neighbour_radius() / 2)
    else:
        pts, r = grid.nodes, grid.neighbour_radius()
    return cKDTree(pts).query_pairs(r, output_type="ndarray")


def check_embedding(f: Embedding, tol_rank: float | None = None, tol_sep: float | None = None) -> EmbeddingDiagnosis:
    """Discrete immersion and injectivity test."""
    grid = f.grid
    tol_rank = 1e-6 * grid.spacing if tol_rank is None else tol_rank
    smin = _singular_min(f.node_jacobian)
    bad = np.flatnonzero(smin <= tol_rank)
    nbr = _neighbour_pairs(grid)
    nbr_dist = np.linalg.norm(f.values[nbr[:, 0]] - f.values[nbr[:, 1]], axis=1)
    if tol_sep is None:
        tol_sep = 0.5 * float(nbr_dist.min())
    if len(bad):
        return EmbeddingDiagnosis("immersion_failure", tuple(int(i) for i in bad), (), float(smin.min()))
    close = cKDTree(f.values).query_pairs(max(tol_sep, 0.0), output_type="ndarray")
    if len(close):
        far = grid.param_distance(grid.nodes[close[:, 0]], grid.nodes[close[:, 1]]) > grid.neighbour_radius()
        close = close[far]
    if len(close):
        pairs = tuple(sorted((int(min(i, j)), int(max(i, j))) for i, j in close))
        return EmbeddingDiagnosis("injectivity_failure", (), pairs, float(smin.min()))
    return EmbeddingDiagnosis("ok", (), (), float(smin.min()), float(nbr_dist.min()))


def _require_immersion(f: Embedding):
    smin = _singular_min(f.node_jacobian)
    if np.any(smin <= 1e-6 * f.grid.spacing):
        raise NotAnImmersion(f"rank-deficient Jacobian at nodes {np.flatnonzero(smin <= 1e-6 * f.grid.spacing).tolist()}")


def volume_element(f: Embedding) -> np.ndarray:
    """sqrt(det(J^T J)) at the nodes."""
    jac = f.node_jacobian
    gram = np.einsum("nmk,nml->nkl", jac, jac)
    return np.sqrt(np.linalg.det(gram)) if f.k == 2 else np.sqrt(gram[:, 0, 0])


def induced_volume(f: Embedding) -> DensityForm:
    """Riemannian volume of f(S) pulled back to S (Euclidean ambient metric)."""
    _require_immersion(f)
    return DensityForm(f.grid, volume_element(f))


def _ambient_density(mu_m, points):
    if mu_m is None:
        return np.ones(len(points))
    if callable(mu_m):
        return np.asarray(mu_m(points), float).reshape(-1)
    return np.full(len(points), float(mu_m))


def pullback_volume(f: Embedding, mu_m=None) -> DensityForm:
    """f^* mu_M = det(J) mu_M(f) for equal dimensions (mu_M defaults to Lebesgue)."""
    if f.k != f.ambient_dim:
        raise DimensionMismatch(f"pullback of a top form needs k = m, got k={f.k}, m={f.ambient_dim}")
    jac = f.node_jacobian
    det = np.linalg.det(jac) if f.k == 2 else jac[:, 0, 0]
    return DensityForm(f.grid, det * _ambient_density(mu_m, f.values))


@dataclass(frozen=True, eq=False)
class SubmanifoldDensity:
    """Density on N = carrier(S), relative to the Riemannian measure of N.

    Values are stored at the carrier's nodes.
    """

    carrier: Embedding
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, float).reshape(-1))

    def total(self) -> float:
        return float(self.carrier.grid.quad_weights @ (self.values * volume_element(self.carrier)))

    def pulled_back(self) -> DensityForm:
        """carrier^* nu as a density on S."""
        return DensityForm(self.carrier.grid, self.values * volume_element(self.carrier))

    def through(self, g: Embedding, chi) -> DensityForm:
        """g^* nu for g = carrier o chi (chi a DiffeoS or its node values)."""
        params = chi.values if isinstance(chi, DiffeoS) else np.asarray(chi, float)
        interp = self.carrier.grid.interpolant(self.values[:, None])
        return DensityForm(g.grid, interp(params)[:, 0] * volume_element(g))


def pushforward_density(f: Embedding, rho: DensityForm) -> SubmanifoldDensity:
    """f_* rho, stored against f's nodes; mass is conserved exactly by the quadrature."""
    _same_grid(f.grid, rho.grid)
    _require_immersion(f)
    return SubmanifoldDensity(f, rho.values / volume_element(f))


def pull_density(phi: DiffeoS, rho: DensityForm) -> DensityForm:
    """phi^* rho = (rho o phi) det(D phi)."""
    _same_grid(phi.grid, rho.grid)
    interp = rho.grid.interpolant(rho.values[:, None])
    return DensityForm(rho.grid, interp(phi.values)[:, 0] * phi.node_jacobian_det)


def push_density(phi: DiffeoS, rho: DensityForm) -> DensityForm:
    """phi_* rho = (phi^{-1})^* rho, evaluated at the nodes."""
    _same_grid(phi.grid, rho.grid)
    pre = phi.inverse_at(rho.grid.nodes)
    jac = phi.jacobian(pre)
    det = np.linalg.det(jac) if jac.shape[-1] == 2 else jac[:, 0, 0]
    interp = rho.grid.interpolant(rho.values[:, None])
    return DensityForm(rho.grid, interp(pre)[:, 0] / det)


# ---------------------------------------------------------------------------
# distances between images


def distance_to_image(points, f: Embedding, dense_factor: int = 4):
    """Distance from each point to f(S) and the closest parameter."""
    points = np.asarray(points, float).reshape(-1, f.ambient_dim)
    samples = f.grid.dense_params(dense_factor)
    _, idx = cKDTree(f(samples)).query(points)
    params = newton_project(f, f.jacobian, f.hessian, points, samples[idx], clamp=f.grid.clamp)
    return np.linalg.norm(f(params) - points, axis=1), params


def _surface_samples(f: Embedding, factor: int):
    grid = f.grid
    if grid.manifold is ParamManifold.DISK:
        extra = grid.nodes[grid.boundary_nodes]
        t = np.linspace(0, 1, factor + 1)[1:-1]
        mids = [0.5 * (grid.nodes[i] + grid.nodes[j]) for i, j in _neighbour_pairs(grid)[:: max(1, len(grid.nodes) // 2000)]]
        return np.concatenate([grid.nodes, extra * 1.0] + ([np.array(mids)] if mids else []))
    return grid.dense_params(factor)


def hausdorff_distance(f1: Embedding, f2: Embedding, factor: int = 4) -> float:
    """Symmetric Hausdorff distance between the images (point-to-image distances)."""
    d12, _ = distance_to_image(f1(_surface_samples(f1, factor)), f2)
    d21, _ = distance_to_image(f2(_surface_samples(f2, factor)), f1)
    return float(max(d12.max(), d21.max()))
