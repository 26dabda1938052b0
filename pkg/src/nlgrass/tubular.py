"""Tubular neighbourhood data around a base submanifold N0 = f0(S).

Normal frames, boundary conormals, closest-point projection, the boundary
collar shift and the transport of normal frames along that shift.  The
ambient exponential map is the Euclidean straight line and N0 is extended
past its boundary by extrapolating the interpolation basis of f0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from ._solve import newton_project, newton_solve
from .embedding import Embedding, check_embedding
from .errors import (
    AmbiguousProjection,
    DegenerateNormalSpace,
    GridMismatch,
    InvalidBump,
    NotAnEmbedding,
    OutsideTube,
    RadiusExceedsReach,
    SectionOutOfRange,
    Unsupported,
)
from .mesh import ParamManifold

__all__ = [
    "BumpFunction",
    "TubularChart",
    "SectionPair",
    "BoundaryShift",
    "FrameTransport",
    "build_tubular_chart",
    "estimate_reach",
    "closest_point_project",
    "boundary_shift_map",
    "transport_normal_frames",
]


# ---------------------------------------------------------------------------
# bump profile


@dataclass(frozen=True)
class BumpFunction:
    """Monotone ramp from 0 at ``onset`` to 1 at 0, constant outside.

    ``kind="smooth"`` (default) is the C-infinity transition
    S(x) = 1 / (1 + exp(c/x - c/(1-x))) with maximal slope 2c / |onset|;
    ``kind="smoothstep5"`` is the quintic 6x^5 - 15x^4 + 10x^3 (C^2 only).
    """

    onset: float = -1.0
    kind: str = "smooth"
    sharpness: float = 0.95

    def __post_init__(self):
        if not -1.0 <= self.onset < 0.0:
            raise InvalidBump(f"onset must lie in [-1, 0), got {self.onset}")
        if self.kind not in ("smooth", "smoothstep5"):
            raise InvalidBump(f"unknown bump kind {self.kind!r}")
        if self.sharpness <= 0:
            raise InvalidBump("sharpness must be positive")

    def _x(self, t):
        return np.clip((np.asarray(t, float) - self.onset) / -self.onset, 0.0, 1.0)

    def __call__(self, t):
        x = self._x(t)
        if self.kind == "smoothstep5":
            return x**3 * (10 - 15 * x + 6 * x**2)
        c = self.sharpness
        with np.errstate(divide="ignore", over="ignore"):
            return expit(c / (1 - x) - c / x)

    def derivative(self, t):
        x = self._x(t)
        if self.kind == "smoothstep5":
            return 30 * x**2 * (1 - x) ** 2 / -self.onset
        c = self.sharpness
        inner = (x > 0) & (x < 1)
        xi = np.where(inner, x, 0.5)
        val = expit(c / (1 - xi) - c / xi)
        d = val * (1 - val) * c * (1 / xi**2 + 1 / (1 - xi) ** 2)
        return np.where(inner, d, 0.0) / -self.onset

    def validate(self, step: float = 1e-3) -> "BumpFunction":
        t = np.arange(-1.5, 0.5 + step / 2, step)
        d = self.derivative(t)
        if abs(float(self(0.0)) - 1.0) > 1e-14:
            raise InvalidBump("rho(0) != 1")
        if np.any(self(t[t <= -1.0]) != 0.0):
            raise InvalidBump("rho does not vanish on (-inf, -1]")
        if d.min() < 0.0 or d.max() > 2.0:
            raise InvalidBump(f"rho' leaves [0, 2]: range [{d.min()}, {d.max()}]")
        return self

    def to_json(self) -> dict:
        return {"kind": self.kind, "onset": self.onset, "sharpness": self.sharpness}

    @classmethod
    def from_json(cls, data: dict) -> "BumpFunction":
        return cls(float(data.get("onset", -1.0)), data.get("kind", "smooth"), float(data.get("sharpness", 0.95)))


# ---------------------------------------------------------------------------
# frames


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _rmf_frames(points, tangents, closed: bool):
    """Rotation-minimising normal frames along a space curve (double reflection)."""
    n = len(points)
    t0 = tangents[0]
    axis = np.eye(3)[np.argmin(np.abs(t0))]
    r = _normalize(axis - (axis @ t0) * t0)
    rs = [r]
    count = n if closed else n - 1
    for i in range(count):
        j = (i + 1) % n
        v1 = points[j] - points[i]
        c1 = v1 @ v1
        r_l = r - (2 / c1) * (v1 @ r) * v1
        t_l = tangents[i] - (2 / c1) * (v1 @ tangents[i]) * v1
        v2 = tangents[j] - t_l
        c2 = v2 @ v2
        r = r_l - (2 / c2) * (v2 @ r_l) * v2 if c2 > 0 else r_l
        r = _normalize(r - (r @ tangents[j]) * tangents[j])
        rs.append(r)
    if closed:
        # distribute the holonomy angle so the frame closes up
        end = rs[-1]
        b0 = np.cross(tangents[0], rs[0])
        angle = np.arctan2(end @ b0, end @ rs[0])
        rs = rs[:-1]
        out = []
        for i, r in enumerate(rs):
            b = np.cross(tangents[i], r)
            a = -angle * i / n
            out.append(np.cos(a) * r + np.sin(a) * b)
        rs = out
    e1 = np.array(rs)
    e2 = np.cross(tangents, e1)
    return np.stack([e1, e2], axis=-1)


def _gram_schmidt_against(frames, tangents):
    """Orthonormalise frame columns against the columns of ``tangents``."""
    q_t, _ = np.linalg.qr(tangents)
    out = frames - np.einsum("qmk,qlk,qlc->qmc", q_t, q_t, frames)
    q, r = np.linalg.qr(out)
    # keep the orientation of the interpolated frame
    signs = np.sign(np.einsum("qii->qi", r))
    signs[signs == 0] = 1.0
    return q * signs[:, None, :]


# ---------------------------------------------------------------------------
# chart


@dataclass(frozen=True, eq=False)
class TubularChart:
    f0: Embedding
    normal_frames: np.ndarray  # (n, m, m-k)
    dagger_frames: np.ndarray  # (nb, m)
    delta: float
    eps: float
    bump: BumpFunction
    stretch: str = "collar"
    reach: float = float("inf")

    @property
    def grid(self):
        return self.f0.grid

    @property
    def codim(self) -> int:
        return self.f0.codim

    @cached_property
    def boundary_speeds(self) -> np.ndarray:
        """|d f0 / dr| (disk) or |f0'| (interval) at boundary nodes."""
        grid = self.grid
        if not grid.has_boundary:
            return np.zeros(0)
        jac = self.f0.node_jacobian[grid.boundary_nodes]
        if grid.manifold is ParamManifold.INTERVAL:
            return np.linalg.norm(jac[:, :, 0], axis=1)
        radial = grid.nodes[grid.boundary_nodes]
        return np.linalg.norm(np.einsum("bmk,bk->bm", jac, radial), axis=1)

    @cached_property
    def collar_param_width(self) -> float:
        """Largest parameter distance from the boundary covered by the collar."""
        if not self.grid.has_boundary:
            return 0.0
        return float(self.eps / self.boundary_speeds.min())

    @cached_property
    def _frame_interp(self):
        n, m, c = self.normal_frames.shape
        return self.grid.interpolant(self.normal_frames.reshape(n, m * c))

    def frames_at(self, params) -> np.ndarray:
        """Orthonormal normal frames at arbitrary (possibly extended) parameters."""
        params = np.asarray(params, float).reshape(-1, self.grid.k)
        q = len(params)
        m, c = self.f0.ambient_dim, self.codim
        if c == 0:
            return np.zeros((q, m, 0))
        jac = self.f0.jacobian(params)
        if self.grid.k == 1 and m == 2:
            t = _normalize(jac[:, :, 0])
            sign = -1.0 if self.grid.manifold is ParamManifold.CIRCLE else 1.0
            return (sign * np.column_stack([-t[:, 1], t[:, 0]]))[:, :, None]
        if self.grid.k == 2 and m == 3:
            return _normalize(np.cross(jac[:, :, 0], jac[:, :, 1]))[:, :, None]
        raw = self._frame_interp(params).reshape(q, m, c)
        return _gram_schmidt_against(raw, jac)

    def tangent_residual(self, params, points) -> np.ndarray:
        """|J^T (x - f0(s))| / |J|: how far x - f0(s) is from being normal."""
        jac = self.f0.jacobian(params)
        r = points - self.f0(params)
        num = np.linalg.norm(np.einsum("qmk,qm->qk", jac, r), axis=1)
        return num / np.linalg.norm(jac, axis=(1, 2))

    # extended parameter domain --------------------------------------------

    def clamp_extended(self, params) -> np.ndarray:
        grid = self.grid
        params = np.array(params, float)
        w = 1.05 * self.collar_param_width
        if grid.manifold is ParamManifold.INTERVAL:
            return np.clip(params, -w, 1.0 + w)
        if grid.manifold is ParamManifold.DISK:
            r = np.linalg.norm(params, axis=1)
            scale = np.where(r > 1.0 + w, (1.0 + w) / np.maximum(r, 1e-300), 1.0)
            return params * scale[:, None]
        return grid.clamp(params)

    def to_json(self) -> dict:
        return {
            "f0": self.f0.to_json(),
            "normal_frames": self.normal_frames.tolist(),
            "dagger_frames": self.dagger_frames.tolist(),
            "delta": self.delta,
            "eps": self.eps,
            "bump": self.bump.to_json(),
            "stretch": self.stretch,
            "reach": None if not np.isfinite(self.reach) else self.reach,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TubularChart":
        f0 = Embedding.from_json(data["f0"])
        m, c = f0.ambient_dim, f0.codim
        reach = data.get("reach")
        return cls(
            f0,
            np.asarray(data["normal_frames"], float).reshape(f0.grid.size, m, c),
            np.asarray(data["dagger_frames"], float).reshape(-1, m),
            float(data["delta"]),
            float(data["eps"]),
            BumpFunction.from_json(data["bump"]),
            data.get("stretch", "collar"),
            float("inf") if reach is None else float(reach),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "TubularChart":
        return cls.from_json(json.loads(Path(path).read_text()))


def _node_frames(f0: Embedding) -> np.ndarray:
    grid, m, k = f0.grid, f0.ambient_dim, f0.k
    c = m - k
    jac = f0.node_jacobian
    n = grid.size
    if c == 0:
        return np.zeros((n, m, 0))
    if k == 1 and m == 2:
        t = _normalize(jac[:, :, 0])
        sign = -1.0 if grid.manifold is ParamManifold.CIRCLE else 1.0
        return (sign * np.column_stack([-t[:, 1], t[:, 0]]))[:, :, None]
    if k == 2 and m == 3:
        return _normalize(np.cross(jac[:, :, 0], jac[:, :, 1]))[:, :, None]
    if k == 1 and m == 3:
        t = _normalize(jac[:, :, 0])
        return _rmf_frames(f0.values, t, grid.manifold is ParamManifold.CIRCLE)
    raise Unsupported(f"normal frames for dim {k} in R^{m} are not implemented")


def _dagger_frames(f0: Embedding) -> np.ndarray:
    grid = f0.grid
    if not grid.has_boundary:
        return np.zeros((0, f0.ambient_dim))
    jac = f0.node_jacobian[grid.boundary_nodes]
    if grid.manifold is ParamManifold.INTERVAL:
        t = _normalize(jac[:, :, 0])
        return t * np.array([-1.0, 1.0])[:, None]
    b = grid.nodes[grid.boundary_nodes]
    radial = np.einsum("bmk,bk->bm", jac, b)
    along = np.einsum("bmk,bk->bm", jac, np.column_stack([-b[:, 1], b[:, 0]]))
    along = _normalize(along)
    return _normalize(radial - np.sum(radial * along, axis=1)[:, None] * along)


def estimate_reach(f0: Embedding, frames: np.ndarray | None = None, max_points: int = 1500) -> float:
    """Point-cloud reach surrogate: pairwise tangent-ball radii and a curvature bound."""
    if f0.codim == 0:
        return float("inf")
    frames = _node_frames(f0) if frames is None else frames
    n = f0.grid.size
    sel = np.arange(n) if n <= max_points else np.linspace(0, n - 1, max_points).astype(int)
    x = f0.values[sel]
    best = np.inf
    for lo in range(0, len(sel), 256):
        rows = np.arange(lo, min(lo + 256, len(sel)))
        d = x[None, :, :] - x[rows, None, :]
        normal = np.linalg.norm(np.einsum("rmc,rjm->rjc", frames[sel[rows]], d), axis=2)
        dist2 = np.sum(d * d, axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = dist2 / (2 * normal)
        ratio[normal <= 1e-13 * np.sqrt(dist2) + 1e-300] = np.inf
        best = min(best, float(ratio.min()))
    kappa = _max_curvature(f0, frames)
    return float(min(best, 1.0 / kappa if kappa > 0 else np.inf))


def _max_curvature(f0: Embedding, frames) -> float:
    jac = f0.node_jacobian
    hess = f0.node_hessian  # (n, m, k, k)
    second = np.einsum("nmc,nmkl->nckl", frames, hess)
    gram = np.einsum("nmk,nml->nkl", jac, jac)
    if f0.k == 1:
        return float(np.max(np.abs(second[:, :, 0, 0]).max(axis=1) / gram[:, 0, 0]))
    ginv = np.linalg.inv(gram)
    shape = np.einsum("nkl,nclj->nckj", ginv, second)
    eig = np.linalg.eigvals(shape.reshape(-1, 2, 2))
    return float(np.abs(eig).max())


def build_tubular_chart(
    f0: Embedding,
    delta: float,
    eps: float | None = None,
    bump: BumpFunction | None = None,
    stretch: str = "collar",
    check_reach: bool = True,
) -> TubularChart:
    """Frames, reach check and collar data for the base embedding ``f0``."""
    diag = check_embedding(f0)
    if not diag.ok:
        raise NotAnEmbedding(f"base is not an embedding: {diag.status}")
    grid = f0.grid
    if stretch not in ("collar", "affine"):
        raise ValueError(f"unknown stretch mode {stretch!r}")
    if stretch == "affine" and grid.manifold is not ParamManifold.INTERVAL:
        raise Unsupported("affine boundary stretch is only defined on the interval")
    bump = (bump or BumpFunction()).validate()
    if delta <= 0:
        raise RadiusExceedsReach("tube radius must be positive")
    if grid.has_boundary:
        if eps is None or eps <= 0:
            raise RadiusExceedsReach("collar radius must be positive for a base with boundary")
    else:
        eps = 0.0 if eps is None else eps
    frames = _node_frames(f0)
    reach = estimate_reach(f0, frames)
    if check_reach:
        limit = 0.5 * reach
        if delta >= limit:
            raise RadiusExceedsReach(f"delta={delta} exceeds the admissible radius {limit:.6g}")
        if grid.has_boundary and eps >= limit:
            raise RadiusExceedsReach(f"eps={eps} exceeds the admissible radius {limit:.6g}")
    chart = TubularChart(f0, frames, _dagger_frames(f0), float(delta), float(eps), bump, stretch, reach)
    if grid.manifold is ParamManifold.INTERVAL:
        g = chart.boundary_speeds
        if eps / g[0] + eps / g[1] > 1.0:
            raise RadiusExceedsReach("the two boundary collars overlap")
    elif grid.manifold is ParamManifold.DISK and chart.collar_param_width >= 1.0:
        raise RadiusExceedsReach("the boundary collar reaches the centre of the disk")
    return chart


# ---------------------------------------------------------------------------
# projection


def closest_point_project(points, chart: TubularChart, extended: bool = False, check_tube: bool = True):
    """Base parameters and normal coordinates of points near N0 (or N0^ext).

    Returns ``(params, coords)`` with shapes (q, k) and (q, m - k).
    """
    f0 = chart.f0
    grid = f0.grid
    points = np.asarray(points, float).reshape(-1, f0.ambient_dim)
    if extended and grid.has_boundary:
        clamp = chart.clamp_extended
        samples = clamp(grid.dense_params(4, margin=chart.collar_param_width))
    else:
        clamp = grid.clamp
        samples = grid.dense_params(4)
    sample_pts = f0(samples)
    tree = cKDTree(sample_pts)
    kq = min(12, len(samples))
    dists, idx = tree.query(points, k=kq)
    seeds = samples[idx[:, 0]]
    params = newton_project(f0, f0.jacobian, f0.hessian, points, seeds, clamp=clamp)
    resid = points - f0(params)
    dist = np.linalg.norm(resid, axis=1)
    scale = 1.0 + np.linalg.norm(points, axis=1)
    tang = chart.tangent_residual(params, points)
    bad_t = tang > 1e-8 * scale
    if bad_t.any():
        i = int(np.flatnonzero(bad_t)[0])
        raise OutsideTube(f"point {points[i].tolist()} projects past the edge of the base")
    if check_tube:
        far = dist >= chart.delta
        if far.any():
            i = int(np.flatnonzero(far)[0])
            raise OutsideTube(f"point {points[i].tolist()} is {dist[i]:.3g} from the base (delta={chart.delta})")
    _check_ambiguity(chart, points, params, dist, samples, idx, clamp)
    frames = chart.frames_at(params)
    coords = np.einsum("qmc,qm->qc", frames, resid)
    if grid.manifold is ParamManifold.CIRCLE:
        params = np.mod(params, 2 * np.pi)
    return params, coords


def _check_ambiguity(chart, points, params, dist, samples, idx, clamp):
    """Second seed far from the first in parameter space; equal distance means ambiguous."""
    grid = chart.grid
    sep = 8 * grid.spacing
    cand_seed = samples[idx]  # (q, kq, k)
    pd = grid.param_distance(cand_seed, params[:, None, :])
    far = pd > sep
    has = far.any(axis=1)
    if not has.any():
        return
    rows = np.flatnonzero(has)
    first = np.argmax(far[rows], axis=1)
    seeds = cand_seed[rows, first]
    f0 = chart.f0
    alt = newton_project(f0, f0.jacobian, f0.hessian, points[rows], seeds, clamp=clamp)
    alt_dist = np.linalg.norm(points[rows] - f0(alt), axis=1)
    distinct = grid.param_distance(alt, params[rows]) > sep
    tie = np.abs(alt_dist - dist[rows]) <= 1e-9 * (1 + dist[rows])
    amb = distinct & tie & (chart.tangent_residual(alt, points[rows]) <= 1e-8)
    if amb.any():
        i = rows[int(np.flatnonzero(amb)[0])]
        raise AmbiguousProjection(f"point {points[i].tolist()} has two closest points on the base")


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True, eq=False)
class SectionPair:
    """Boundary section (one real per boundary node) and normal section (coords per node)."""

    sigma_dagger: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma_dagger", np.asarray(self.sigma_dagger, float).reshape(-1))
        sigma = np.asarray(self.sigma, float)
        if sigma.ndim == 1:
            sigma = sigma[:, None]
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def zero(cls, chart: TubularChart) -> "SectionPair":
        return cls(np.zeros(len(chart.grid.boundary_nodes)), np.zeros((chart.grid.size, chart.codim)))

    def validate(self, chart: TubularChart) -> "SectionPair":
        grid = chart.grid
        if self.sigma.shape != (grid.size, chart.codim):
            raise GridMismatch(f"sigma has shape {self.sigma.shape}, expected {(grid.size, chart.codim)}")
        if len(self.sigma_dagger) != len(grid.boundary_nodes):
            raise GridMismatch("sigma_dagger must have one value per boundary node")
        if len(self.sigma_dagger) and np.abs(self.sigma_dagger).max() >= chart.eps / 2:
            raise SectionOutOfRange(f"|sigma_dagger| must stay below eps/2 = {chart.eps / 2}")
        if chart.codim and np.linalg.norm(self.sigma, axis=1).max() >= chart.delta:
            raise SectionOutOfRange(f"|sigma| must stay below delta = {chart.delta}")
        return self

    def distance(self, other: "SectionPair") -> float:
        a = np.abs(self.sigma_dagger - other.sigma_dagger).max() if len(self.sigma_dagger) else 0.0
        b = np.abs(self.sigma - other.sigma).max() if self.sigma.size else 0.0
        return float(max(a, b))

    def to_json(self) -> dict:
        return {"sigma_dagger": self.sigma_dagger.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "SectionPair":
        return cls(np.asarray(data["sigma_dagger"], float), np.asarray(data["sigma"], float))


# ---------------------------------------------------------------------------
# boundary shift


@dataclass(frozen=True, eq=False)
class BoundaryShift:
    """The collar map phi_{sigma_dagger} acting on (extended) parameters."""

    chart: TubularChart
    sigma_dagger: np.ndarray
    min_lambda_slope: float

    @cached_property
    def _boundary_interp(self):
        grid = self.chart.grid
        if grid.manifold is ParamManifold.DISK:
            stacked = np.column_stack([self.sigma_dagger, self.chart.boundary_speeds])
            return grid.boundary_interpolant(stacked)
        return None

    def __call__(self, params) -> np.ndarray:
        chart = self.chart
        grid = chart.grid
        params = np.asarray(params, float).reshape(-1, grid.k)
        if grid.manifold is ParamManifold.CIRCLE or not np.any(self.sigma_dagger):
            return params.copy()
        eps, rho = chart.eps, chart.bump
        if grid.manifold is ParamManifold.INTERVAL:
            s = params[:, 0]
            g0, g1 = chart.boundary_speeds
            a0, a1 = self.sigma_dagger
            if chart.stretch == "affine":
                return (s + (1 - s) * a0 / g0 + s * a1 / g1)[:, None]
            left = a0 * rho(-s * g0 / eps) / g0 if a0 else 0.0
            right = a1 * rho((s - 1) * g1 / eps) / g1 if a1 else 0.0
            return (s + left + right)[:, None]
        r = np.linalg.norm(params, axis=1)
        theta = np.arctan2(params[:, 1], params[:, 0])
        vals = self._boundary_interp(np.mod(theta, 2 * np.pi)[:, None])
        a, g = vals[:, 0], vals[:, 1]
        r_new = r + a * rho((r - 1) * g / eps) / g
        scale = np.where(r > 0, r_new / np.maximum(r, 1e-300), 1.0)
        return params * scale[:, None]

    @cached_property
    def node_targets(self) -> np.ndarray:
        return self(self.chart.grid.nodes)

    @cached_property
    def moved(self) -> np.ndarray:
        """Mask of nodes whose image differs from the node."""
        return np.any(self.node_targets != self.chart.grid.nodes, axis=1)

    def jacobian(self, params, h: float = 1e-6) -> np.ndarray:
        params = np.asarray(params, float).reshape(-1, self.chart.grid.k)
        cols = []
        for j in range(params.shape[1]):
            e = np.zeros(params.shape[1])
            e[j] = h
            cols.append((self(params + e) - self(params - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def inverse_at(self, targets) -> np.ndarray:
        targets = np.asarray(targets, float).reshape(-1, self.chart.grid.k)
        if self.chart.grid.manifold is ParamManifold.CIRCLE or not np.any(self.sigma_dagger):
            return targets.copy()

        def residual(p, rows):
            return self(p) - targets[rows], self.jacobian(p)

        return newton_solve(residual, targets)


def boundary_shift_map(sigma_dagger, chart: TubularChart) -> BoundaryShift:
    """Collar shift t -> t + a rho(t / eps) with a the boundary section value."""
    grid = chart.grid
    sigma_dagger = np.asarray(sigma_dagger, float).reshape(-1)
    if len(sigma_dagger) != len(grid.boundary_nodes):
        raise GridMismatch("sigma_dagger must have one value per boundary node")
    if len(sigma_dagger) and np.abs(sigma_dagger).max() >= chart.eps / 2:
        raise SectionOutOfRange(f"|sigma_dagger| must stay below eps/2 = {chart.eps / 2}")
    slope = 1.0
    if len(sigma_dagger):
        t = np.linspace(-1.5, 0.5, 2001)
        d = chart.bump.derivative(t)
        # lambda_a'(t) = 1 + (a / eps) rho'(t / eps), with t in units of eps
        slopes = 1.0 + np.outer(sigma_dagger / chart.eps, d)
        slope = float(slopes.min())
        if slope <= 0:
            raise SectionOutOfRange("collar map is not monotone for this boundary section")
    return BoundaryShift(chart, sigma_dagger, slope)


# ---------------------------------------------------------------------------
# frame transport


@dataclass(frozen=True, eq=False)
class FrameTransport:
    """Orthogonal maps between normal spaces at y and phi(y), per node."""

    source: np.ndarray  # (n, m, c) frames E at the nodes
    target: np.ndarray  # (n, m, c) frames F at the shifted nodes
    rotation: np.ndarray  # (n, c, c) polar factor U

    def apply(self, coords) -> np.ndarray:
        """Ambient vectors F U sigma."""
        return np.einsum("nmc,ncd,nd->nm", self.target, self.rotation, coords)

    def pullback(self, vectors) -> np.ndarray:
        """Coordinates sigma with F U sigma equal to the normal part of ``vectors``."""
        return np.einsum("ncd,nmc,nm->nd", self.rotation, self.target, vectors)

    def as_matrices(self) -> np.ndarray:
        """Ambient matrices F U E^T, shape (n, m, m)."""
        return np.einsum("nmc,ncd,nld->nml", self.target, self.rotation, self.source)


def _polar(mats):
    u, s, vt = np.linalg.svd(mats)
    return u @ vt, s


def transport_normal_frames(shift: BoundaryShift, chart: TubularChart, tol: float = 1e-3) -> FrameTransport:
    """Closest orthogonal identification of normal spaces along the collar shift."""
    e = chart.normal_frames
    n, m, c = e.shape
    f = e.copy()
    rot = np.broadcast_to(np.eye(c), (n, c, c)).copy()
    moved = shift.moved
    if c and moved.any():
        f[moved] = chart.frames_at(shift.node_targets[moved])
        gram = np.einsum("nmc,nmd->ncd", f[moved], e[moved])
        u, s = _polar(gram)
        if s.min() < tol:
            raise DegenerateNormalSpace("normal spaces at y and phi(y) are nearly orthogonal; reduce eps")
        rot[moved] = u
    return FrameTransport(e, f, rot)
