"""Operation runners and the invariant suite behind the command line.

Every runner returns a :class:`Record` with JSON-ready ``outputs`` and a list
of residual entries ``{name, value, tolerance, pass}``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bundle import (
    fiber_compare,
    project_vol,
    same_vol_point,
    transition,
    trivialize,
    trivialize_inv,
    trivialize_vol,
    trivialize_vol_inv,
)
from .charts import chart_change, chart_forward, chart_inverse, decompose
from .embedding import DiffeoS, Embedding, compose_reparam, hausdorff_distance, push_density
from .errors import ScenarioError
from .mesh import DensityForm, ParamManifold, integrate
from .moser import decompose_diffeo, moser_map
from .scenario import Scenario
from .tubular import _node_frames
from .variations import (
    _interp_mean_curvature,
    coboundary,
    dvol_embedding,
    edge_masses,
    mean_curvature,
    membership,
    primitive,
    tangent_project_gr,
    tangent_project_vol,
    volume,
)

MEMBERSHIP_TESTS = ("Emb0", "EmbVol", "VerticalGr", "VerticalVol")


@dataclass
class Record:
    operation: str
    inputs: dict
    outputs: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)

    def check(self, name: str, value: float, tolerance: float, mode: str = "below") -> bool:
        value = float(value)
        ok = value < tolerance if mode == "below" else value > tolerance
        self.residuals.append(
            {"name": name, "value": value, "tolerance": float(tolerance), "pass": bool(ok), "mode": mode}
        )
        return ok

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.residuals)

    def to_json(self) -> dict:
        digest = hashlib.sha256(json.dumps(self.inputs, sort_keys=True, default=str).encode()).hexdigest()
        return {
            "operation": self.operation,
            "inputs_digest": digest,
            "outputs": _jsonable(self.outputs),
            "residuals": _jsonable(self.residuals),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# helpers


def _sup(a) -> float:
    return float(np.abs(np.asarray(a, float)).max(initial=0.0))


def _expect(rec: Record, op: dict, tol: float):
    """Compare outputs against ``op["expect"]`` entries."""
    for key, want in op.get("expect", {}).items():
        if key not in rec.outputs:
            raise ScenarioError(f"expected output {key!r} is not produced by {rec.operation!r}")
        got = rec.outputs[key]
        if isinstance(want, bool) or isinstance(got, bool):
            rec.check(f"expect:{key}", 0.0 if bool(got) == bool(want) else 1.0, 0.5)
            continue
        got_arr, want_arr = np.asarray(got, float), np.asarray(want, float)
        if want_arr.size == 1 and got_arr.size > 1:
            want_arr = np.full_like(got_arr, float(want_arr.reshape(-1)[0]))
        if got_arr.shape != want_arr.shape:
            raise ScenarioError(f"expected {key!r} has shape {want_arr.shape}, output has {got_arr.shape}")
        rel = op.get("expect_relative", False)
        err = _sup(got_arr - want_arr) / (_sup(want_arr) if rel else 1.0)
        rec.check(f"expect:{key}", err, op.get("expect_tolerance", tol))


def _dvol_fd(f: Embedding, v: np.ndarray, h: float = 1e-4) -> float:
    return (volume(f.displaced(v, h)) - volume(f.displaced(v, -h))) / (2 * h)


# ---------------------------------------------------------------------------
# operation runners


def op_chart(sc: Scenario, op: dict) -> Record:
    rec = Record("chart", {"scenario": sc.raw, "op": op})
    chart = _op_chart(sc, op)
    sec = chart_forward(sc.embedding(op.get("target", "target")), chart)
    rec.outputs = {
        "sigma_dagger": sec.sigma_dagger,
        "sigma": sec.sigma.reshape(sec.sigma.shape[0], -1),
        "sigma_sup": _sup(sec.sigma),
        "chart": {"delta": chart.delta, "eps": chart.eps, "stretch": chart.stretch},
    }
    _expect(rec, op, sc.tol("chart", op.get("tolerance")))
    return rec


def _op_chart(sc: Scenario, op: dict, key: str = "chart", default: str = "main"):
    ref = op.get(key, default)
    if isinstance(ref, str) and ref not in sc.charts:
        ref = {"base": op.get("base", "base")}
    return sc.chart(ref)


def op_chart_roundtrip(sc: Scenario, op: dict) -> Record:
    rec = Record("chart-roundtrip", {"scenario": sc.raw, "op": op})
    chart = _op_chart(sc, op)
    target = sc.embedding(op.get("target", "target"))
    sec = chart_forward(target, chart)
    rebuilt = chart_inverse(sec, chart).representative
    again = chart_forward(rebuilt, chart)
    tol = sc.tol("chart", op.get("tolerance"))
    rec.outputs = {"sigma_dagger": sec.sigma_dagger, "sigma_sup": _sup(sec.sigma), "image": rebuilt.values}
    rec.check("image_hausdorff", hausdorff_distance(target, rebuilt), sc.tol("default"))
    rec.check("sections_roundtrip", sec.distance(again), tol)
    _expect(rec, op, tol)
    return rec


def op_chart_change(sc: Scenario, op: dict) -> Record:
    rec = Record("chart-change", {"scenario": sc.raw, "op": op})
    chart_i = _op_chart(sc, op, "chart")
    ref_j = op.get("chart_j")
    if ref_j is None:
        ref_j = {"base": op.get("base", "base"), "rotate": float(op.get("rotate", 0.05)), "eps": chart_i.eps,
                 "delta": chart_i.delta, "check_reach": False}
    chart_j = sc.chart(ref_j)
    target = sc.embedding(op.get("target", "target"))
    sec_i = chart_forward(target, chart_i)
    sec_j = chart_change(sec_i, chart_i, chart_j)
    back = chart_change(sec_j, chart_j, chart_i)
    rec.outputs = {"sigma_dagger_i": sec_i.sigma_dagger, "sigma_dagger_j": sec_j.sigma_dagger,
                   "sigma_j": sec_j.sigma.reshape(sec_j.sigma.shape[0], -1)}
    rec.check("change_roundtrip", sec_i.distance(back), sc.tol("cocycle", op.get("tolerance")))
    _expect(rec, op, sc.tol("chart"))
    return rec


def op_moser(sc: Scenario, op: dict) -> Record:
    rec = Record("moser", {"scenario": sc.raw, "op": op})
    mu = sc.density(op.get("mu", "mu"))
    nu = sc.density(op.get("nu", "nu"))
    b = moser_map(mu, nu)
    grid = mu.grid
    at = np.asarray(op.get("at", grid.nodes[: min(5, grid.size)]), float).reshape(-1, grid.k)
    rec.outputs = {"at": at, "values": b(at).reshape(len(at), -1) if grid.k == 2 else b(at)[:, 0],
                   "orientation_sign": b.orientation_sign, "info": {k: v for k, v in b.info.items() if np.isscalar(v)}}
    if grid.k == 1:
        rec.outputs["values"] = list(np.asarray(rec.outputs["values"]).reshape(-1))
    disk = grid.manifold is ParamManifold.DISK
    rec.check("transport_residual", b.residual, sc.tol("moser_disk" if disk else "moser", op.get("tolerance")))
    _expect(rec, op, sc.tol("chart"))
    return rec


def op_decompose(sc: Scenario, op: dict) -> Record:
    rec = Record("decompose", {"scenario": sc.raw, "op": op})
    mu = sc.density(op.get("mu", "mu"))
    phi = sc.diffeo(op.get("phi", "phi"))
    split = decompose_diffeo(phi, mu)
    recomposed = split.moser(split.phi_vol.values)
    diff = phi.grid.param_distance(recomposed, phi.values)
    rec.outputs = {"phi_vol": split.phi_vol.values, "rho": split.rho.density.values, "mass_sign": split.rho.mass_sign}
    disk = phi.grid.manifold is ParamManifold.DISK
    rec.check("recomposition", _sup(diff), sc.tol("moser_disk" if disk else "splitting", op.get("tolerance")))
    pres = push_density(split.phi_vol, mu).values - mu.values
    rec.check("volume_preservation", _sup(pres), sc.tol("moser_disk" if disk else "volume_preservation"))
    _expect(rec, op, sc.tol("default"))
    return rec


def op_project(sc: Scenario, op: dict) -> Record:
    rec = Record("project", {"scenario": sc.raw, "op": op})
    f = sc.embedding(op.get("target", "target"))
    mu = sc.density(op.get("mu", "mu"))
    vp = project_vol(f, mu)
    rec.outputs = {"total": vp.total(), "nu": vp.nu.values, "points": f.values}
    rec.check("mass", abs(vp.total() - integrate(mu.grid, mu)), 1e-8 * abs(integrate(mu.grid, mu)))
    _expect(rec, op, sc.tol("default"))
    return rec


def op_trivialize(sc: Scenario, op: dict) -> Record:
    rec = Record("trivialize", {"scenario": sc.raw, "op": op})
    chart = _op_chart(sc, op)
    f = sc.embedding(op.get("target", "target"))
    mu = sc.density(op.get("mu", "mu"))
    tol = sc.tol("trivialize", op.get("tolerance"))
    n, psi = trivialize(f, chart)
    back = trivialize_inv(n, psi, chart)
    rec.outputs = {"psi": psi.values}
    rec.check("diff_inverse_forward", _sup(back.values - f.values), tol)
    _, psi2 = trivialize(back, chart)
    rec.check("diff_forward_inverse", psi.distance(psi2), tol)
    vp, phi_vol = trivialize_vol(f, mu, chart)
    back_v = trivialize_vol_inv(vp, phi_vol, chart, mu)
    rec.outputs["phi_vol"] = phi_vol.values
    rec.check("vol_inverse_forward", _sup(back_v.values - f.values), tol)
    vp2, phi2 = trivialize_vol(back_v, mu, chart)
    rec.check("vol_forward_inverse", max(phi_vol.distance(phi2), same_vol_point(vp, vp2, tol)[1]), tol)
    rec.check("vol_preservation", _sup(push_density(phi_vol, mu).values - mu.values), tol)
    _expect(rec, op, tol)
    return rec


def op_tangent(sc: Scenario, op: dict) -> Record:
    rec = Record("tangent", {"scenario": sc.raw, "op": op})
    f = sc.embedding(op.get("target", op.get("base", "base")))
    mu = sc.density(op.get("mu", "mu"))
    v = sc.field(op.get("field", "smooth"), f, mu)
    gr = tangent_project_gr(f, v)
    tv = tangent_project_vol(f, mu, v)
    rec.outputs = {
        "w_dagger": gr.w_dagger,
        "w_perp": gr.w_perp,
        "w_perp_sup": _sup(gr.w_perp),
        "d_alpha": tv.d_alpha.values,
        "gr_norm": gr.norm(),
        "vol_norm": tv.norm(),
    }
    rec.check("compatibility", tv.compatibility_residual, sc.tol("compatibility", op.get("tolerance")))
    _expect(rec, op, sc.tol("kernel"))
    return rec


def op_dvol(sc: Scenario, op: dict) -> Record:
    rec = Record("dvol", {"scenario": sc.raw, "op": op})
    f = sc.embedding(op.get("target", op.get("base", "base")))
    v = sc.field(op.get("field", "position"), f)
    method = op.get("curvature", "interp")
    value = dvol_embedding(f, v, curvature=method)
    fd = _dvol_fd(f, v)
    rec.outputs = {"value": value, "finite_difference": fd, "volume": volume(f),
                   "case": "codim0" if f.codim == 0 else "positive_codim"}
    rel = abs(value - fd) / max(abs(fd), 1e-12) if abs(fd) > 1e-10 else abs(value - fd)
    rec.check("finite_difference", rel, sc.tol("dvol", op.get("tolerance")))
    _expect(rec, op, op.get("expect_tolerance", 1e-6))
    return rec


def op_curvature(sc: Scenario, op: dict) -> Record:
    rec = Record("curvature", {"scenario": sc.raw, "op": op})
    f = sc.embedding(op.get("target", op.get("base", "base")))
    mc = mean_curvature(f)
    mag = mc.magnitude
    rec.outputs = {"H": mc.H, "magnitude_min": float(mag.min()), "magnitude_max": float(mag.max()),
                   "magnitude_mean": float(mag.mean())}
    if "radius" in op:
        expected = (1.0 if f.k == 1 else 2.0) / float(op["radius"])
        kind = "curvature" if f.k == 1 else "curvature_surface"
        rec.check("relative_error", _sup(mag / expected - 1.0), sc.tol(kind, op.get("tolerance")))
    _expect(rec, op, sc.tol("default"))
    return rec


def op_membership(sc: Scenario, op: dict) -> Record:
    rec = Record("membership", {"scenario": sc.raw, "op": op})
    f = sc.embedding(op.get("target", op.get("base", "base")))
    mu = sc.density(op.get("mu", "mu"))
    v = sc.field(op.get("field", "rotation"), f, mu)
    which = op.get("which", list(MEMBERSHIP_TESTS))
    which = [which] if isinstance(which, str) else list(which)
    tol = sc.tol("default", op.get("tolerance"))
    results = {}
    for name in which:
        try:
            results[name] = membership(f, mu, v, name, tol).to_json()
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
    rec.outputs = {name: r["member"] for name, r in results.items()}
    rec.outputs["details"] = results
    _expect(rec, op, tol)
    return rec


RUNNERS = {
    "chart": op_chart,
    "chart-roundtrip": op_chart_roundtrip,
    "chart-change": op_chart_change,
    "moser": op_moser,
    "decompose": op_decompose,
    "project": op_project,
    "trivialize": op_trivialize,
    "tangent": op_tangent,
    "dvol": op_dvol,
    "curvature": op_curvature,
    "membership": op_membership,
}

def run_operation(sc: Scenario, op: dict) -> Record:
    name = op["op"]
    if name not in RUNNERS:
        raise ScenarioError(f"unknown operation {name!r}")
    return RUNNERS[name](sc, op)


# ---------------------------------------------------------------------------
# invariant suite


def _random_density(grid, rng) -> DensityForm:
    x = grid.nodes
    c = rng.uniform(-1, 1, size=4)
    if grid.manifold is ParamManifold.CIRCLE:
        t = x[:, 0]
        vals = 1 + 0.3 * (c[0] * np.cos(t) + c[1] * np.sin(2 * t)) + 0.1 * c[2] * np.cos(3 * t)
    elif grid.manifold is ParamManifold.INTERVAL:
        s = x[:, 0]
        vals = 1 + 0.4 * c[0] * s + 0.3 * c[1] * np.sin(2 * np.pi * s) + 0.2 * c[2] * s**2
    else:
        vals = 1 + 0.3 * c[0] * x[:, 0] + 0.3 * c[1] * x[:, 1] + 0.2 * c[2] * x[:, 0] * x[:, 1]
    rho = DensityForm(grid, vals)
    return rho.scaled(grid.manifold.reference_volume / integrate(grid, rho))


def _random_diffeo(grid, rng) -> DiffeoS:
    p = grid.nodes
    a = rng.uniform(-0.3, 0.3)
    if grid.manifold is ParamManifold.INTERVAL:
        b = rng.uniform(-0.1, 0.1)
        return DiffeoS(grid, p + a * np.sin(np.pi * p) / np.pi + b * np.sin(2 * np.pi * p) / (2 * np.pi))
    if grid.manifold is ParamManifold.CIRCLE:
        return DiffeoS(grid, np.mod(p + a * np.sin(p) + rng.uniform(0, 2 * np.pi), 2 * np.pi))
    r2 = np.sum(p * p, axis=1)
    ang = a * (1 - r2)
    c, s = np.cos(ang), np.sin(ang)
    q = np.column_stack([c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1]])
    return DiffeoS(grid, q * (1 + 0.2 * a * (1 - r2))[:, None])


def _random_target(base: Embedding, rng, amp: float = 0.02, stretch: float = 0.03) -> Embedding:
    """A nearby embedding: base with a shifted boundary and a small smooth displacement."""
    grid = base.grid
    p = grid.nodes
    c = rng.uniform(-1, 1, size=4)
    if grid.manifold is ParamManifold.INTERVAL:
        a, b = stretch * c[0], 1 + stretch * c[1]
        q = a + (b - a) * p
        bump = np.sin(np.pi * p[:, 0]) * c[2] + 0.5 * c[3] * np.cos(3 * p[:, 0])
    elif grid.manifold is ParamManifold.CIRCLE:
        q = p
        bump = c[2] * np.cos(p[:, 0]) + c[3] * np.sin(2 * p[:, 0])
    else:
        q = p * (1 + stretch * c[0])
        bump = c[2] * p[:, 0] + c[3] * p[:, 0] * p[:, 1]
    values = base(q)
    if base.codim == 0:
        shift = amp * np.column_stack([np.sin(2 * values[:, 1]) * c[2], np.cos(values[:, 0]) * c[3]])
        return base.with_values(values + shift[:, : base.ambient_dim])
    frames = _node_frames(base.with_values(values))
    return base.with_values(values + amp * bump[:, None] * frames[:, :, 0])


def _suite_chart(sc: Scenario, base: Embedding):
    if "main" in sc.charts:
        return sc.chart("main")
    return sc.chart({"base": "base"})


def verify(sc: Scenario, cases: int = 3) -> Record:
    """Run the invariant suite on the scenario's base embedding and densities."""
    rec = Record("verify", {"scenario": sc.raw, "cases": cases})
    rng = np.random.default_rng(sc.seed)
    grid = sc.grid
    disk = grid.manifold is ParamManifold.DISK
    base = sc.embedding("base")
    mu = sc.density("mu") if "mu" in sc.densities else DensityForm.uniform(grid)
    chart = _suite_chart(sc, base)

    # charts, equivariance and trivializations
    worst_rt, worst_eq, worst_tr, worst_tv = 0.0, 0.0, 0.0, 0.0
    for _ in range(cases):
        f = _random_target(base, rng)
        phi = _random_diffeo(grid, rng)
        dec = decompose(f, chart)
        rebuilt = chart_inverse(dec.sections, chart).representative
        worst_rt = max(worst_rt, _sup(rebuilt.values - dec.f_perp.values))
        dec2 = decompose(compose_reparam(f, phi), chart)
        worst_eq = max(worst_eq, dec2.psi.distance(dec.psi.compose(phi)), _sup(dec2.f_perp.values - dec.f_perp.values))
        n, psi = trivialize(f, chart)
        worst_tr = max(worst_tr, _sup(trivialize_inv(n, psi, chart).values - f.values))
        vp, pv = trivialize_vol(f, mu, chart)
        worst_tv = max(worst_tv, _sup(trivialize_vol_inv(vp, pv, chart, mu).values - f.values))
    rec.check("chart_roundtrip", worst_rt, sc.tol("chart_disk" if disk else "chart"))
    rec.check("equivariance", worst_eq, sc.tol("equivariance_disk" if disk else "equivariance"))
    rec.check("trivialize_roundtrip", worst_tr, sc.tol("trivialize_disk" if disk else "trivialize"))
    rec.check("trivialize_vol_roundtrip", worst_tv, sc.tol("moser_disk" if disk else "trivialize"))

    # fibre comparison and cocycle
    phi = _random_diffeo(grid, rng)
    found = fiber_compare(base, compose_reparam(base, phi))
    rec.check("fiber_compare", np.inf if found is None else found.distance(phi),
              sc.tol("equivariance_disk" if disk else "cocycle"))
    if not disk:
        f = _random_target(base, rng, amp=0.01, stretch=0.01)
        spec = sc.charts.get("main", {"base": "base"})
        spec = dict(spec) if isinstance(spec, dict) else {"base": spec}
        charts = [chart] + [sc.chart({**spec, "rotate": a, "check_reach": False}) for a in (0.02, -0.015)]
        p01, p12, p02 = (transition(f, charts[i], charts[j]) for i, j in ((0, 1), (1, 2), (0, 2)))
        rec.check("cocycle", p02.distance(p01.compose(p12)), sc.tol("cocycle"))

    # Moser transport and splitting
    worst_m, worst_s, worst_v = 0.0, 0.0, 0.0
    for _ in range(1 if disk else cases):
        nu = _random_density(grid, rng)
        worst_m = max(worst_m, moser_map(mu, nu).residual)
        phi = _random_diffeo(grid, rng)
        split = decompose_diffeo(phi, mu)
        worst_s = max(worst_s, _sup(grid.param_distance(split.moser(split.phi_vol.values), phi.values)))
        worst_v = max(worst_v, _sup(push_density(split.phi_vol, mu).values - mu.values))
    rec.check("moser_residual", worst_m, sc.tol("moser_disk" if disk else "moser"))
    rec.check("splitting_recomposition", worst_s, sc.tol("moser_disk" if disk else "splitting"))
    rec.check("splitting_volume", worst_v, sc.tol("moser_disk" if disk else "volume_preservation"))

    # first variation
    v = sc.field("smooth", base, mu)
    fd = _dvol_fd(base, v)
    method = "weak" if (disk and base.codim) else "interp"
    rec.check("dvol_finite_difference", abs(dvol_embedding(base, v, curvature=method) - fd) / max(abs(fd), 1e-12),
              sc.tol("dvol"))

    # tangent projections: kernel, non-kernel, compatibility
    vert = sc.field("vertical", base, mu)
    vert_vol = sc.field("vertical_vol", base, mu)
    rec.check("kernel_gr", tangent_project_gr(base, vert).norm(), sc.tol("kernel"))
    rec.check("kernel_vol", tangent_project_vol(base, mu, vert_vol).norm(), sc.tol("kernel"))
    rec.check("non_vertical_gr", tangent_project_gr(base, v).norm(), 1e-3, mode="above")
    compat = 0.0
    for _ in range(cases):
        w = v * rng.uniform(-1, 1) + sc.field("constant", base, mu) * rng.uniform(-1, 1)
        compat = max(compat, tangent_project_vol(base, mu, w).compatibility_residual)
    rec.check("compatibility", compat, sc.tol("compatibility"))
    if grid.manifold is ParamManifold.INTERVAL:
        rho = _random_density(grid, rng)
        rho = DensityForm(grid, rho.values - integrate(grid, rho))
        alpha = primitive(rho)
        rec.check("exactness", max(abs(alpha[-1]), _sup(coboundary(alpha) - edge_masses(rho))), sc.tol("exactness"))

    # curvature: quadric fit against the interpolant's second derivatives
    if base.codim:
        h_fit = mean_curvature(base).H
        h_int = _interp_mean_curvature(base)
        scale = max(_sup(h_int), 1e-12)
        kind = "curvature" if base.k == 1 else "curvature_surface"
        err = _sup(h_fit - h_int) / scale if _sup(h_int) > 1e-9 else _sup(h_fit)
        rec.check("curvature_consistency", err, sc.tol(kind))

    # scenario operations with expectations
    for i, op in enumerate(sc.operations):
        sub = run_operation(sc, op)
        for r in sub.residuals:
            rec.residuals.append({**r, "name": f"op{i}:{op['op']}:{r['name']}"})
    rec.outputs = {"checks": len(rec.residuals), "failed": [r["name"] for r in rec.residuals if not r["pass"]]}
    return rec
