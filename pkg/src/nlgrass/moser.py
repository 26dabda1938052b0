"""Moser transport B(nu) with B(nu)_* mu = nu, and the splitting of Diff(S).

1-D grids use cumulative-mass inversion.  On the disk the densities are
fitted by bivariate Legendre polynomials, the Neumann problem
Laplace(u) = nu - mu is solved exactly in that polynomial space, and nodes
are flowed along v_t = -grad(u) / rho_t with classical RK4.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as L

from ._solve import newton_solve
from .embedding import DiffeoS, push_density
from .errors import MassMismatch, MoserWarning, NotAVolumeForm, SolverDivergence
from .mesh import DensityForm, ParamManifold, SampleGrid, integrate

__all__ = [
    "VolSpaceElement",
    "MoserMap",
    "moser_map",
    "moser_map_1d",
    "moser_map_disk",
    "decompose_diffeo",
    "transport_residual",
    "reflection",
]

TWO_PI = 2 * np.pi
MASS_RTOL = 1e-8
SMALL_DENSITY = 1e-6


@dataclass(frozen=True, eq=False)
class VolSpaceElement:
    """A volume form with total mass +-(mass of the reference form)."""

    density: DensityForm
    mass_sign: int

    @classmethod
    def of(cls, density: DensityForm, mu: DensityForm) -> "VolSpaceElement":
        sign = _check_masses(mu, density)
        return cls(density, sign)


# ---------------------------------------------------------------------------
# reflections used for the negative-mass component


def reflection(grid: SampleGrid):
    """Orientation-reversing involution R of S: node permutation and parameter map."""
    kind = grid.manifold
    n = grid.size
    if kind is ParamManifold.INTERVAL:
        return np.arange(n)[::-1].copy(), lambda p: 1.0 - np.asarray(p, float)
    if kind is ParamManifold.CIRCLE:
        return (-np.arange(n)) % n, lambda p: np.mod(-np.asarray(p, float), TWO_PI)
    flip = np.array([1.0, -1.0])
    _, perm = grid._tree.query(grid.nodes * flip)
    return perm, lambda p: np.asarray(p, float) * flip


def _reflect_density(rho: DensityForm) -> DensityForm:
    """R^* rho; R is an involution so this is also R_* rho."""
    perm, _ = reflection(rho.grid)
    return DensityForm(rho.grid, -rho.values[perm])


# ---------------------------------------------------------------------------
# result type


@dataclass(frozen=True, eq=False)
class MoserMap:
    """B(nu) for a reference mu: forward and inverse evaluation plus node values."""

    mu: DensityForm
    nu: DensityForm
    forward: object  # callable params -> params
    backward: object  # callable params -> params
    orientation_sign: int = 1
    info: dict = field(default_factory=dict)
    jacobian_det: object = None  # callable params -> det DB, on the map itself

    @cached_property
    def diffeo(self) -> DiffeoS:
        grid = self.mu.grid
        return DiffeoS(grid, self.forward(grid.nodes), self.orientation_sign)

    def __call__(self, params) -> np.ndarray:
        return self.forward(np.asarray(params, float).reshape(-1, self.mu.grid.k))

    def inverse(self, params) -> np.ndarray:
        return self.backward(np.asarray(params, float).reshape(-1, self.mu.grid.k))

    def pushforward(self) -> DensityForm:
        """B_* mu at the nodes: mu(B^{-1} x) / det DB(B^{-1} x)."""
        grid = self.mu.grid
        pre = self.inverse(grid.nodes)
        mu_pre = grid.interpolant(self.mu.values[:, None])(pre)[:, 0]
        return DensityForm(grid, mu_pre / self.jacobian_det(pre))

    @cached_property
    def residual(self) -> float:
        """Transport residual: sup norm in 1-D, weighted L1 on the disk."""
        diff = self.pushforward().values - self.nu.values
        if self.mu.grid.manifold is ParamManifold.DISK:
            return float(self.mu.grid.quad_weights @ np.abs(diff))
        return float(np.abs(diff).max())


def transport_residual(b: DiffeoS, mu: DensityForm, nu: DensityForm, norm: str = "sup") -> float:
    """Distance between B_* mu and nu at the nodes."""
    diff = push_density(b, mu).values - nu.values
    if norm == "sup":
        return float(np.abs(diff).max())
    return float(mu.grid.quad_weights @ np.abs(diff))


def _check_masses(mu: DensityForm, nu: DensityForm) -> int:
    if not mu.grid.same_as(nu.grid):
        from .errors import GridMismatch

        raise GridMismatch("mu and nu live on different grids")
    mu.require_volume_form()
    nu.require_volume_form(allow_zeros=True)
    m_mu = integrate(mu.grid, mu)
    m_nu = integrate(nu.grid, nu)
    if abs(abs(m_nu) - abs(m_mu)) > MASS_RTOL * abs(m_mu):
        raise MassMismatch(f"|mass(nu)| = {abs(m_nu):.12g} differs from mass(mu) = {abs(m_mu):.12g}")
    return 1 if np.sign(m_nu) == np.sign(m_mu) else -1


def moser_map(mu: DensityForm, nu: DensityForm, **kwargs) -> MoserMap:
    """Dispatch on the parameter manifold."""
    if mu.grid.manifold is ParamManifold.DISK:
        return moser_map_disk(mu, nu, **kwargs)
    return moser_map_1d(mu, nu)


def _negative_branch(mu, nu, builder, **kwargs) -> MoserMap:
    """B(nu) = R o B+(R^* nu) for nu in the negative component."""
    _, rmap = reflection(mu.grid)
    positive = builder(mu, _reflect_density(nu), **kwargs)

    def fwd(p):
        return rmap(positive(p))

    def bwd(p):
        return positive.inverse(rmap(p))

    def det(p):
        return -positive.jacobian_det(p)

    return MoserMap(mu, nu, fwd, bwd, -positive.orientation_sign, dict(positive.info, reflected=True), det)


# ---------------------------------------------------------------------------
# one-dimensional transport


class _Cdf:
    """Cumulative mass of a nodal density through its smooth interpolant."""

    def __init__(self, rho: DensityForm):
        self.grid = rho.grid
        self.interp = rho.grid.interpolant(rho.values[:, None])
        self.total = float(self(np.array([[self._length]]))[0, 0])

    @property
    def _length(self) -> float:
        return 1.0 if self.grid.manifold is ParamManifold.INTERVAL else TWO_PI

    def __call__(self, params):
        return self.interp.antiderivative(params)

    def inverse(self, values) -> np.ndarray:
        """Parameters x in [0, length] with F(x) = value (F increasing)."""
        values = np.asarray(values, float).reshape(-1, 1)
        length = self._length
        xs = np.linspace(0.0, length, 8 * self.grid.size + 1)
        fs = self(xs[:, None])[:, 0]
        seed = np.interp(values[:, 0], fs, xs)[:, None]

        def residual(x, rows):
            return self(x) - values[rows], self.interp(x)[:, :, None]

        # no clamp: the spline antiderivative extrapolates smoothly past the ends
        return newton_solve(residual, seed)


def moser_map_1d(mu: DensityForm, nu: DensityForm) -> MoserMap:
    """B = F_nu^{-1} o F_mu on the interval or the circle (fixing angle 0)."""
    if mu.grid.manifold is ParamManifold.DISK:
        raise ValueError("moser_map_1d needs a one-dimensional grid")
    sign = _check_masses(mu, nu)
    if sign < 0:
        return _negative_branch(mu, nu, moser_map_1d)
    if nu.values.min() < SMALL_DENSITY:
        warnings.warn(
            f"target density reaches {nu.values.min():.3g}; the transport map has a steep derivative there",
            MoserWarning,
            stacklevel=2,
        )
    f_mu, f_nu = _Cdf(mu), _Cdf(nu)
    circle = mu.grid.manifold is ParamManifold.CIRCLE

    def wrap(p):
        return np.mod(p, TWO_PI) if circle else p

    def raw(p):
        return f_nu.inverse(f_mu(p))

    def fwd(p):
        return wrap(raw(wrap(p)))

    def bwd(p):
        return wrap(f_mu.inverse(f_nu(wrap(p))))

    def det(p, h=1e-4):
        # fourth-order Richardson difference of the unwrapped map
        p = np.asarray(p, float).reshape(-1, 1)
        d1 = raw(p + h) - raw(p - h)
        d2 = raw(p + 2 * h) - raw(p - 2 * h)
        return ((8 * d1 - d2) / (12 * h))[:, 0]

    return MoserMap(mu, nu, fwd, bwd, 1, {"method": "cdf"}, det)


# ---------------------------------------------------------------------------
# disk transport


def _leg_derivative_matrix(deg: int) -> np.ndarray:
    out = np.zeros((deg + 1, deg + 1))
    for j in range(1, deg + 1):
        e = np.zeros(j + 1)
        e[j] = 1.0
        d = L.legder(e)
        out[: len(d), j] = d
    return out


class _Poly2D:
    """Bivariate Legendre basis P_i(x) P_j(y) with i + j <= deg."""

    def __init__(self, deg: int):
        self.deg = deg
        self.pairs = np.array([(i, t - i) for t in range(deg + 1) for i in range(t + 1)])
        self._dm = _leg_derivative_matrix(deg)

    @property
    def size(self) -> int:
        return len(self.pairs)

    def _one_d(self, x, der):
        v = L.legvander(x, self.deg)
        for _ in range(der):
            v = v @ self._dm
        return v

    def basis(self, pts, dx: int = 0, dy: int = 0) -> np.ndarray:
        vx = self._one_d(pts[:, 0], dx)
        vy = self._one_d(pts[:, 1], dy)
        return vx[:, self.pairs[:, 0]] * vy[:, self.pairs[:, 1]]

    def laplacian(self, pts) -> np.ndarray:
        return self.basis(pts, 2, 0) + self.basis(pts, 0, 2)


def _disk_quadrature(deg: int):
    """Polar Gauss rule on the unit disk, exact for polynomials of degree <= deg."""
    nr = deg // 2 + 2
    x, w = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * (x + 1)
    wr = 0.5 * w * r
    nt = deg + 2
    t = TWO_PI * np.arange(nt) / nt
    pts = np.stack([np.outer(r, np.cos(t)).ravel(), np.outer(r, np.sin(t)).ravel()], axis=1)
    wts = np.outer(wr, np.full(nt, TWO_PI / nt)).ravel()
    return pts, wts


def _fit_density(grid: SampleGrid, values: np.ndarray, max_degree: int):
    """Weighted least-squares Legendre fit; degree grows until the fit is exact enough."""
    w = np.sqrt(grid.quad_weights)
    scale = 1.0 + np.abs(values).max()
    best = None
    for deg in range(2, max_degree + 1, 2):
        poly = _Poly2D(deg)
        if poly.size > grid.size // 3:
            break
        coef, *_ = np.linalg.lstsq(poly.basis(grid.nodes) * w[:, None], values * w, rcond=None)
        err = np.abs(poly.basis(grid.nodes) @ coef - values).max()
        best = (poly, coef, err)
        if err < 1e-11 * scale:
            break
    return best


def _with_mass(poly: _Poly2D, coef: np.ndarray, mass: float) -> np.ndarray:
    pts, wts = _disk_quadrature(poly.deg)
    current = wts @ (poly.basis(pts) @ coef)
    coef = coef.copy()
    coef[0] += (mass - current) / np.pi  # P_0 P_0 = 1
    return coef


class _DiskFlow:
    def __init__(self, mu: DensityForm, nu: DensityForm, max_degree: int, steps: int):
        grid = mu.grid
        mass = integrate(grid, mu)
        pm, cm, em = _fit_density(grid, mu.values, max_degree)
        pn, cn, en = _fit_density(grid, nu.values, max_degree)
        deg = max(pm.deg, pn.deg)
        self.poly = _Poly2D(deg)
        self.mu_c = _with_mass(self.poly, _pad(cm, pm, self.poly), mass)
        self.nu_c = _with_mass(self.poly, _pad(cn, pn, self.poly), mass)
        self.fit_error = max(em, en)
        self.upoly = _Poly2D(deg + 2)
        self.u_c = self._solve_neumann()
        self.steps = steps
        self._mu_sq = _square(self.mu_c, self.poly)
        self._nu_sq = _square(self.nu_c, self.poly)
        u_sq = _square(self.u_c, self.upoly)
        self._ux = L.legder(u_sq, axis=0)
        self._uy = L.legder(u_sq, axis=1)

    def _solve_neumann(self) -> np.ndarray:
        up, poly = self.upoly, self.poly
        rhs_c = self.nu_c - self.mu_c
        if not np.any(rhs_c):
            return np.zeros(up.size)
        pts, _ = _disk_quadrature(2 * up.deg)
        pts = pts[np.linalg.norm(pts, axis=1) < 1.0]
        a_int = up.laplacian(pts)
        b_int = poly.basis(pts) @ rhs_c
        nb = 4 * up.deg + 8
        t = TWO_PI * np.arange(nb) / nb
        bpts = np.column_stack([np.cos(t), np.sin(t)])
        a_bnd = bpts[:, :1] * up.basis(bpts, 1, 0) + bpts[:, 1:] * up.basis(bpts, 0, 1)
        gauge = up.basis(np.zeros((1, 2)))
        a = np.vstack([a_int, a_bnd, gauge])
        b = np.concatenate([b_int, np.zeros(nb), [0.0]])
        coef, *_ = np.linalg.lstsq(a, b, rcond=None)
        resid = np.abs(a @ coef - b).max()
        if resid > 1e-7 * (1 + np.abs(b).max()):
            raise SolverDivergence(f"Neumann solve residual {resid:.3g}")
        return coef

    def _vander(self, pts):
        deg = self.upoly.deg
        return L.legvander(pts[:, 0], deg), L.legvander(pts[:, 1], deg)

    @staticmethod
    def _eval(vx, vy, coef):
        a, b = coef.shape
        return np.einsum("qi,qi->q", vx[:, :a] @ coef, vy[:, :b])

    def density(self, pts, t: float, vander=None) -> np.ndarray:
        vx, vy = vander or self._vander(pts)
        return self._eval(vx, vy, (1 - t) * self._mu_sq + t * self._nu_sq)

    def velocity(self, pts, t: float) -> np.ndarray:
        vx, vy = self._vander(pts)
        rho = self.density(pts, t, (vx, vy))
        if rho.min() <= 0:
            raise SolverDivergence("interpolated density is not positive along the flow")
        gx = self._eval(vx, vy, self._ux)
        gy = self._eval(vx, vy, self._uy)
        return -np.column_stack([gx, gy]) / rho[:, None]

    def check_ratio(self, pts):
        basis = self.poly.basis(pts)
        m, n = basis @ self.mu_c, basis @ self.nu_c
        if m.min() <= 0 or n.min() <= 0:
            raise SolverDivergence("fitted densities are not positive")
        ratio = n / m
        if ratio.min() < 1e-3 or ratio.max() > 1e3:
            raise SolverDivergence("density ratio leaves [1e-3, 1e3]")

    def integrate(self, pts, forward: bool = True) -> np.ndarray:
        x = np.array(pts, float)
        if not np.any(self.u_c):
            return x
        dt = 1.0 / self.steps
        ts = np.arange(self.steps) * dt
        if not forward:
            ts = 1.0 - ts
            dt = -dt
        for t in ts:
            k1 = self.velocity(x, t)
            k2 = self.velocity(x + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = self.velocity(x + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = self.velocity(x + dt * k3, t + dt)
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return x


def _square(coef, poly: _Poly2D) -> np.ndarray:
    out = np.zeros((poly.deg + 1, poly.deg + 1))
    out[poly.pairs[:, 0], poly.pairs[:, 1]] = coef
    return out


def _pad(coef, src: _Poly2D, dst: _Poly2D) -> np.ndarray:
    out = np.zeros(dst.size)
    index = {tuple(p): i for i, p in enumerate(dst.pairs)}
    for c, p in zip(coef, src.pairs):
        out[index[tuple(p)]] = c
    return out


def _project_disk(params, on_boundary: np.ndarray | None = None):
    p = np.array(params, float)
    r = np.linalg.norm(p, axis=1)
    scale = np.where(r > 1.0, 1.0 / np.maximum(r, 1e-300), 1.0)
    if on_boundary is not None:
        scale = np.where(on_boundary, 1.0 / np.maximum(r, 1e-300), scale)
    return p * scale[:, None]


def moser_map_disk(mu: DensityForm, nu: DensityForm, max_degree: int = 20, steps: int = 64) -> MoserMap:
    """Flow map of the Moser vector field on the closed unit disk."""
    if mu.grid.manifold is not ParamManifold.DISK:
        raise ValueError("moser_map_disk needs a disk grid")
    sign = _check_masses(mu, nu)
    if sign < 0:
        return _negative_branch(mu, nu, moser_map_disk, max_degree=max_degree, steps=steps)
    if not nu.is_volume_form:
        raise NotAVolumeForm("the disk flow needs a strictly positive target density")
    flow = _DiskFlow(mu, nu, max_degree, steps)
    flow.check_ratio(mu.grid.nodes)

    def _moved(p, forward):
        r = np.linalg.norm(p, axis=1)
        on_b = np.abs(r - 1.0) < 1e-12
        return _project_disk(flow.integrate(p, forward), on_b)

    def det(p, h=1e-5):
        cols = []
        for e in (np.array([h, 0.0]), np.array([0.0, h])):
            cols.append((flow.integrate(p + e) - flow.integrate(p - e)) / (2 * h))
        jac = np.stack(cols, axis=-1)
        return np.linalg.det(jac)

    info = {"method": "legendre-neumann-rk4", "degree": flow.poly.deg, "steps": steps, "fit_error": float(flow.fit_error)}
    return MoserMap(mu, nu, lambda p: _moved(p, True), lambda p: _moved(p, False), 1, info, det)


# ---------------------------------------------------------------------------
# splitting Diff(S) = Diff_vol(S) x Vol(S)


@dataclass(frozen=True, eq=False)
class Splitting:
    phi_vol: DiffeoS
    rho: VolSpaceElement
    moser: MoserMap

    def __iter__(self):
        return iter((self.phi_vol, self.rho))


def decompose_diffeo(phi: DiffeoS, mu: DensityForm, **kwargs) -> Splitting:
    """phi = B(rho) o phi_vol with rho = phi_* mu and phi_vol preserving mu."""
    mu.require_volume_form()
    rho = push_density(phi, mu)
    # phi_* mu has the mass of mu exactly; the discrete push-forward drifts by
    # interpolation error, which is removed before the mass check of B
    target = integrate(mu.grid, mu) * phi.orientation_sign
    mass = integrate(rho.grid, rho)
    drift_limit = 1e-2 if mu.grid.manifold is ParamManifold.DISK else 1e-4
    if abs(mass - target) > drift_limit * abs(target):
        raise MassMismatch(f"push-forward mass {mass:.12g} is far from {target:.12g}")
    rho = rho.scaled(target / mass)
    b = moser_map(mu, rho, **kwargs)
    phi_vol = DiffeoS(phi.grid, b.inverse(phi.values), phi.orientation_sign * b.orientation_sign)
    return Splitting(phi_vol, VolSpaceElement(rho, b.orientation_sign), b)
