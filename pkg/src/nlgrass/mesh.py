"""Parameter manifolds, sample grids, densities and quadrature.

Three parameter manifolds are supported: the unit interval, the circle
(parametrised by the angle in [0, 2pi)) and the closed unit disk (cartesian
reference coordinates).  Every grid also provides a smooth interpolation
scheme, used everywhere off-node evaluation or differentiation is needed:

* interval: quintic not-a-knot B-spline (cubic below six nodes),
* circle: trigonometric interpolation,
* disk: per-node cubic least-squares fits over a 20-node stencil.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.spatial import cKDTree

from .errors import GridMismatch, InvalidResolution, NoBoundary, NotAVolumeForm

__all__ = [
    "ParamManifold",
    "SampleGrid",
    "DensityForm",
    "build_grid",
    "integrate",
    "boundary_restrict",
]


class ParamManifold(enum.Enum):
    INTERVAL = "Interval01"
    CIRCLE = "Circle"
    DISK = "ClosedDisk"

    @property
    def intrinsic_dim(self) -> int:
        return 2 if self is ParamManifold.DISK else 1

    @property
    def has_boundary(self) -> bool:
        return self is not ParamManifold.CIRCLE

    @property
    def reference_volume(self) -> float:
        return {"Interval01": 1.0, "Circle": 2 * np.pi, "ClosedDisk": np.pi}[self.value]

    @classmethod
    def parse(cls, kind) -> "ParamManifold":
        if isinstance(kind, cls):
            return kind
        aliases = {
            "interval": cls.INTERVAL,
            "interval01": cls.INTERVAL,
            "circle": cls.CIRCLE,
            "disk": cls.DISK,
            "closeddisk": cls.DISK,
        }
        try:
            return aliases[str(kind).lower()]
        except KeyError:
            raise ValueError(f"unknown parameter manifold {kind!r}") from None


# ---------------------------------------------------------------------------
# interpolants


class SplineInterpolant:
    """Not-a-knot B-spline through equispaced interval nodes (extrapolates)."""

    def __init__(self, nodes: np.ndarray, values: np.ndarray):
        n = len(nodes)
        self.degree = 5 if n >= 6 else 3
        self._spl = make_interp_spline(nodes, values, k=self.degree, axis=0)
        self._d1 = self._spl.derivative(1)
        self._d2 = self._spl.derivative(2)
        self._nodes = nodes

    def __call__(self, params):
        return self._spl(np.asarray(params, float)[:, 0])

    def jacobian(self, params):
        return self._d1(np.asarray(params, float)[:, 0])[:, :, None]

    def hessian(self, params):
        return self._d2(np.asarray(params, float)[:, 0])[:, :, None, None]

    def node_jacobian(self):
        return self.jacobian(self._nodes[:, None])

    def antiderivative(self, params):
        """Integral from 0 to each parameter of the interpolant."""
        anti = self._spl.antiderivative()
        return anti(np.asarray(params, float)[:, 0]) - anti(0.0)


class FourierInterpolant:
    """Trigonometric interpolant through nodes 2*pi*j/n."""

    def __init__(self, values: np.ndarray):
        n = values.shape[0]
        self.n = n
        coeffs = np.fft.rfft(values, axis=0) / n
        weights = np.full(coeffs.shape[0], 2.0)
        weights[0] = 1.0
        if n % 2 == 0:
            weights[-1] = 1.0
        self._c = coeffs * weights[:, None]
        self._k = np.arange(coeffs.shape[0])

    def _series(self, theta, factor):
        theta = np.asarray(theta, float)[:, 0]
        phase = np.exp(1j * np.outer(theta, self._k))
        return np.real(phase @ (self._c * factor[:, None]))

    def __call__(self, params):
        return self._series(params, np.ones(len(self._k)))

    def jacobian(self, params):
        return self._series(params, 1j * self._k)[:, :, None]

    def hessian(self, params):
        return self._series(params, -(self._k.astype(float) ** 2))[:, :, None, None]

    def node_jacobian(self):
        theta = 2 * np.pi * np.arange(self.n) / self.n
        return self.jacobian(theta[:, None])

    def antiderivative(self, params):
        """Integral from 0 to each angle (mean term grows linearly)."""
        theta = np.asarray(params, float)[:, 0]
        k = self._k[1:]
        phase = np.exp(1j * np.outer(theta, k)) - 1.0
        periodic = np.real(phase @ (self._c[1:] / (1j * k[:, None])))
        return np.real(self._c[0])[None, :] * theta[:, None] + periodic


_MONO_POWERS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]


def _monomials(z, dx=0, dy=0):
    """Columns of the scaled cubic monomial basis (or its derivatives) at z."""
    out = np.zeros((z.shape[0], len(_MONO_POWERS)))
    for c, (a, b) in enumerate(_MONO_POWERS):
        if a < dx or b < dy:
            continue
        coef = 1.0
        for j in range(dx):
            coef *= a - j
        for j in range(dy):
            coef *= b - j
        out[:, c] = coef * z[:, 0] ** (a - dx) * z[:, 1] ** (b - dy)
    return out


class LocalFitInterpolant:
    """Cubic least-squares fit around every disk node.

    Evaluation at an arbitrary point uses the fit of the nearest node, which
    also provides the (extrapolated) extension slightly beyond the boundary.
    """

    def __init__(self, grid: "SampleGrid", values: np.ndarray):
        self.grid = grid
        pinv, nbrs = grid._lsq_stencils
        # (n, 10, m): polynomial coefficients in scaled local coordinates; the
        # constant term is pinned to the node value so the fit interpolates
        diffs = values[nbrs[:, 1:]] - values[:, None, :]
        higher = np.einsum("nck,nkm->ncm", pinv, diffs)
        self._coef = np.concatenate([values[:, None, :], higher], axis=1)
        self._h = grid.spacing

    def _eval(self, params, dx, dy):
        params = np.asarray(params, float)
        _, idx = self.grid._tree.query(params)
        z = (params - self.grid.nodes[idx]) / self._h
        basis = _monomials(z, dx, dy)
        return np.einsum("qc,qcm->qm", basis, self._coef[idx]) / self._h ** (dx + dy)

    def __call__(self, params):
        return self._eval(params, 0, 0)

    def jacobian(self, params):
        return np.stack([self._eval(params, 1, 0), self._eval(params, 0, 1)], axis=-1)

    def hessian(self, params):
        xx = self._eval(params, 2, 0)
        xy = self._eval(params, 1, 1)
        yy = self._eval(params, 0, 2)
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -1)

    def node_jacobian(self):
        return np.transpose(self._coef[:, 1:3, :], (0, 2, 1)) / self._h

    def node_hessian(self):
        c = self._coef / self._h**2
        xx, xy, yy = 2 * c[:, 3], c[:, 4], 2 * c[:, 5]
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -1)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class SampleGrid:
    manifold: ParamManifold
    nodes: np.ndarray  # (n, k) parameter points
    boundary_nodes: np.ndarray  # indices into nodes
    quad_weights: np.ndarray
    boundary_quad_weights: np.ndarray
    resolution: int

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def k(self) -> int:
        return self.manifold.intrinsic_dim

    @property
    def has_boundary(self) -> bool:
        return self.manifold.has_boundary

    @cached_property
    def spacing(self) -> float:
        if self.manifold is ParamManifold.INTERVAL:
            return 1.0 / (self.resolution - 1)
        if self.manifold is ParamManifold.CIRCLE:
            return 2 * np.pi / self.resolution
        return 1.0 / self.resolution

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.size, bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def boundary_angles(self) -> np.ndarray:
        """Angles of disk boundary nodes (uniform, starting at 0)."""
        if self.manifold is not ParamManifold.DISK:
            raise NoBoundary("boundary angles only exist for the disk")
        b = self.nodes[self.boundary_nodes]
        return np.mod(np.arctan2(b[:, 1], b[:, 0]), 2 * np.pi)

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.nodes)

    @cached_property
    def _lsq_stencils(self):
        stencil = min(20, self.size)
        _, nbrs = self._tree.query(self.nodes, k=stencil)
        # nbrs[:, 0] is the node itself
        z = (self.nodes[nbrs[:, 1:]] - self.nodes[:, None, :]) / self.spacing
        design = np.stack([_monomials(zi)[:, 1:] for zi in z])
        return np.linalg.pinv(design), nbrs

    def interpolant(self, values):
        """Smooth interpolant of nodal values, shape (n, m)."""
        values = np.asarray(values, float)
        if values.ndim != 2 or values.shape[0] != self.size:
            raise GridMismatch(f"expected ({self.size}, m) nodal values, got {values.shape}")
        if self.manifold is ParamManifold.INTERVAL:
            return SplineInterpolant(self.nodes[:, 0], values)
        if self.manifold is ParamManifold.CIRCLE:
            return FourierInterpolant(values)
        return LocalFitInterpolant(self, values)

    def boundary_interpolant(self, values):
        """Trigonometric interpolant of values on the disk boundary ring."""
        if self.manifold is not ParamManifold.DISK:
            raise NoBoundary("only the disk has a one-dimensional boundary")
        return FourierInterpolant(np.asarray(values, float).reshape(len(self.boundary_nodes), -1))

    def param_distance(self, a, b) -> np.ndarray:
        d = np.asarray(a, float) - np.asarray(b, float)
        if self.manifold is ParamManifold.CIRCLE:
            d = (d + np.pi) % (2 * np.pi) - np.pi
        return np.linalg.norm(d, axis=-1)

    def neighbour_radius(self) -> float:
        """Parameter distance below which two nodes count as grid neighbours."""
        return (1.5 if self.k == 1 else 1.75) * self.spacing

    def clamp(self, params) -> np.ndarray:
        """Closest point of S to each parameter point."""
        params = np.array(params, float)
        if self.manifold is ParamManifold.INTERVAL:
            return np.clip(params, 0.0, 1.0)
        if self.manifold is ParamManifold.CIRCLE:
            return np.mod(params, 2 * np.pi)
        r = np.linalg.norm(params, axis=1)
        scale = np.where(r > 1.0, 1.0 / np.maximum(r, 1e-300), 1.0)
        return params * scale[:, None]

    def outside_amount(self, params) -> np.ndarray:
        """How far each parameter point lies outside S (0 inside)."""
        params = np.asarray(params, float)
        if self.manifold is ParamManifold.INTERVAL:
            return np.maximum(np.maximum(-params[:, 0], params[:, 0] - 1.0), 0.0)
        if self.manifold is ParamManifold.CIRCLE:
            return np.zeros(len(params))
        return np.maximum(np.linalg.norm(params, axis=1) - 1.0, 0.0)

    def dense_params(self, factor: int = 4, margin: float = 0.0) -> np.ndarray:
        """Dense parameter samples of S, optionally extended by ``margin``."""
        if self.manifold is ParamManifold.INTERVAL:
            count = factor * (self.resolution - 1) + 1
            extra = int(np.ceil(margin * (count - 1)))
            lo, hi = -extra / (count - 1), 1 + extra / (count - 1)
            return np.linspace(lo, hi, count + 2 * extra)[:, None]
        if self.manifold is ParamManifold.CIRCLE:
            count = factor * self.resolution
            return (2 * np.pi * np.arange(count) / count)[:, None]
        pts = [self.nodes]
        if margin > 0:
            b = self.nodes[self.boundary_nodes]
            steps = max(2, int(np.ceil(margin / self.spacing)) + 1)
            for r in np.linspace(1.0, 1.0 + margin, steps)[1:]:
                pts.append(b * r)
        return np.concatenate(pts)

    def to_json(self) -> dict:
        return {"manifold": self.manifold.value, "resolution": int(self.resolution)}

    @classmethod
    def from_json(cls, data: dict) -> "SampleGrid":
        return build_grid(data["manifold"], int(data["resolution"]))

    def same_as(self, other: "SampleGrid") -> bool:
        return self is other or (
            self.manifold is other.manifold and self.resolution == other.resolution
        )


def _interval_grid(n: int) -> SampleGrid:
    s = np.linspace(0.0, 1.0, n)
    # weights integrate the interpolating spline exactly; positive for every n >= 4
    spl = make_interp_spline(s, np.eye(n), k=5 if n >= 6 else 3, axis=0)
    w = spl.integrate(0.0, 1.0)
    w *= 1.0 / w.sum()
    return SampleGrid(
        ParamManifold.INTERVAL, s[:, None], np.array([0, n - 1]), w, np.ones(2), n
    )


def _circle_grid(n: int) -> SampleGrid:
    theta = 2 * np.pi * np.arange(n) / n
    w = np.full(n, 2 * np.pi / n)
    empty = np.zeros(0, int)
    return SampleGrid(ParamManifold.CIRCLE, theta[:, None], empty, w, np.zeros(0), n)


def _disk_grid(rings: int) -> SampleGrid:
    h = 1.0 / rings
    pts = [np.zeros((1, 2))]
    weights = [np.array([np.pi * (h / 2) ** 2])]
    for j in range(1, rings + 1):
        count = 6 * j
        theta = 2 * np.pi * np.arange(count) / count
        r = j * h
        pts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        outer = min(r + h / 2, 1.0)
        area = np.pi * (outer**2 - (r - h / 2) ** 2)
        weights.append(np.full(count, area / count))
    nodes = np.concatenate(pts)
    nb = 6 * rings
    boundary = np.arange(nodes.shape[0] - nb, nodes.shape[0])
    nodes[boundary] /= np.linalg.norm(nodes[boundary], axis=1)[:, None]
    return SampleGrid(
        ParamManifold.DISK,
        nodes,
        boundary,
        np.concatenate(weights),
        np.full(nb, 2 * np.pi / nb),
        rings,
    )


def build_grid(kind, resolution: int) -> SampleGrid:
    """Grid on S.  ``resolution`` counts nodes (interval, circle) or rings (disk)."""
    kind = ParamManifold.parse(kind)
    if int(resolution) != resolution or resolution < 4:
        raise InvalidResolution(f"resolution must be an integer >= 4, got {resolution}")
    resolution = int(resolution)
    if kind is ParamManifold.INTERVAL:
        return _interval_grid(resolution)
    if kind is ParamManifold.CIRCLE:
        return _circle_grid(resolution)
    return _disk_grid(resolution)


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True, eq=False)
class DensityForm:
    """Top-degree (or boundary-degree) density w.r.t. the reference coordinates."""

    grid: SampleGrid
    values: np.ndarray
    degree: str = "top"

    def __post_init__(self):
        values = np.asarray(self.values, float).reshape(-1)
        object.__setattr__(self, "values", values)
        expected = self.grid.size if self.degree == "top" else len(self.grid.boundary_nodes)
        if self.degree not in ("top", "boundary"):
            raise ValueError(f"degree must be 'top' or 'boundary', not {self.degree!r}")
        if values.shape[0] != expected:
            raise GridMismatch(f"density has {values.shape[0]} values, grid needs {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")

    @classmethod
    def from_function(cls, grid: SampleGrid, fn) -> "DensityForm":
        return cls(grid, np.asarray(fn(grid.nodes), float).reshape(-1))

    @classmethod
    def uniform(cls, grid: SampleGrid, value: float = 1.0) -> "DensityForm":
        return cls(grid, np.full(grid.size, float(value)))

    @property
    def is_volume_form(self) -> bool:
        v = self.values
        return bool(np.all(v > 0) or np.all(v < 0))

    @property
    def sign(self) -> int:
        return 1 if self.values.sum() >= 0 else -1

    def require_volume_form(self, allow_zeros: bool = False) -> "DensityForm":
        """Raise NotAVolumeForm on a sign change (zeros allowed on request)."""
        v = self.values
        if allow_zeros:
            ok = np.all(v >= 0) or np.all(v <= 0)
            ok = ok and np.any(v != 0)
        else:
            ok = self.is_volume_form
        if not ok:
            raise NotAVolumeForm("density changes sign or vanishes")
        return self

    def scaled(self, factor: float) -> "DensityForm":
        return DensityForm(self.grid, self.values * factor, self.degree)

    def __neg__(self) -> "DensityForm":
        return self.scaled(-1.0)

    def to_json(self) -> dict:
        return {"grid": self.grid.to_json(), "degree": self.degree, "values": self.values.tolist()}


def integrate(grid: SampleGrid, density: DensityForm) -> float:
    """Quadrature of a density over S (degree 'top') or over its boundary."""
    if not grid.same_as(density.grid):
        raise GridMismatch("density lives on a different grid")
    if density.degree == "top":
        return float(grid.quad_weights @ density.values)
    if not grid.has_boundary:
        raise NoBoundary("boundary integral on a manifold without boundary")
    return float(grid.boundary_quad_weights @ density.values)


def boundary_restrict(grid: SampleGrid, field) -> np.ndarray:
    """Pull back a nodal field by the boundary inclusion."""
    if not grid.has_boundary:
        raise NoBoundary(f"{grid.manifold.value} has empty boundary")
    field = np.asarray(field)
    if field.shape[0] != grid.size:
        raise GridMismatch(f"field has {field.shape[0]} entries, grid has {grid.size} nodes")
    return field[grid.boundary_nodes]
