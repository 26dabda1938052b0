"""Scenario files: named embeddings, densities, fields, reparametrizations and charts.

A scenario is a JSON document::

    {
      "schema": "nlgrass-scenario/1",
      "manifold": "interval",
      "resolution": 64,
      "seed": 0,
      "tolerances": {"default": 1e-6, "chart": 1e-8},
      "embeddings": {"base": "line", "target": "segment_0.1_0.8"},
      "densities": {"mu": "uniform", "nu": "linear_halfplus"},
      "charts": {"main": {"base": "base", "delta": 0.2, "eps": 0.45}},
      "operations": [{"op": "chart", "chart": "main", "target": "target",
                      "expect": {"sigma_dagger": [0.1, -0.2]}}]
    }

Objects are given either as preset strings ``name_p1_p2`` (numeric
parameters joined by underscores) or as dicts with explicit ``values``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import DiffeoS, Embedding, TangentField
from .errors import GeometryError, ScenarioError
from .mesh import DensityForm, ParamManifold, SampleGrid, build_grid, integrate
from .tubular import TubularChart, _node_frames, build_tubular_chart, estimate_reach

SCHEMA = "nlgrass-scenario/1"

OPERATIONS = (
    "chart",
    "chart-roundtrip",
    "chart-change",
    "moser",
    "decompose",
    "project",
    "trivialize",
    "tangent",
    "dvol",
    "curvature",
    "membership",
)

DEFAULT_TOLERANCES = {
    "default": 1e-6,
    "chart": 1e-8,
    "chart_disk": 1e-6,
    "equivariance": 1e-8,
    "equivariance_disk": 1e-4,
    "trivialize": 1e-6,
    "trivialize_disk": 1e-4,
    "cocycle": 1e-7,
    "moser": 1e-8,
    "moser_disk": 1e-3,
    "splitting": 1e-7,
    "volume_preservation": 1e-6,
    "dvol": 1e-4,
    "kernel": 1e-7,
    "compatibility": 1e-12,
    "exactness": 1e-10,
    "curvature": 0.02,
    "curvature_surface": 0.05,
}


# ---------------------------------------------------------------------------
# preset registries


def _rot2(x, a):
    c, s = np.cos(a), np.sin(a)
    return np.column_stack([c * x[:, 0] - s * x[:, 1], s * x[:, 0] + c * x[:, 1]])


def _interval_embeddings():
    def line(p):
        return np.column_stack([p[:, 0], 0 * p[:, 0]])

    def segment(p, a=0.0, b=1.0):
        return np.column_stack([a + (b - a) * p[:, 0], 0 * p[:, 0]])

    def parabola(p, c=0.5):
        return np.column_stack([p[:, 0], c * p[:, 0] ** 2])

    def wave(p, amp=0.05, k=3.0):
        return np.column_stack([p[:, 0], amp * np.sin(k * p[:, 0])])

    def arc(p, radius=1.0, angle=1.0):
        t = angle * (p[:, 0] - 0.5)
        return np.column_stack([radius * np.sin(t), radius * (1 - np.cos(t))])

    def helix(p, r=0.5, pitch=0.2, turns=0.5):
        t = 2 * np.pi * turns * p[:, 0]
        return np.column_stack([r * np.cos(t), r * np.sin(t), pitch * t])

    return {"line": line, "interval": line, "segment": segment, "parabola": parabola,
            "wave": wave, "arc": arc, "helix": helix}


def _circle_embeddings():
    def circle(p, r=1.0):
        return r * np.column_stack([np.cos(p[:, 0]), np.sin(p[:, 0])])

    def ellipse(p, a=1.0, b=0.7):
        return np.column_stack([a * np.cos(p[:, 0]), b * np.sin(p[:, 0])])

    def wobble(p, amp=0.05, k=3.0):
        r = 1 + amp * np.cos(k * p[:, 0])
        return np.column_stack([r * np.cos(p[:, 0]), r * np.sin(p[:, 0])])

    def knot(p, r=1.0, h=0.3):
        t = p[:, 0]
        return np.column_stack([r * np.cos(t), r * np.sin(t), h * np.sin(2 * t)])

    return {"circle": circle, "ellipse": ellipse, "wobble": wobble, "knot": knot}


def _disk_embeddings():
    def disk(p, r=1.0):
        return r * p

    def ellipse_disk(p, a=1.0, b=0.8):
        return p * np.array([a, b])

    def paraboloid(p, c=0.3):
        return np.column_stack([p, c * np.sum(p * p, axis=1)])

    def saddle(p, c=0.3):
        return np.column_stack([p, c * (p[:, 0] ** 2 - p[:, 1] ** 2)])

    def sphere_patch(p, r=1.5, opening=0.8):
        rr = np.linalg.norm(p, axis=1)
        th = opening * rr
        ph = np.arctan2(p[:, 1], p[:, 0])
        return r * np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    def flat(p):
        return np.column_stack([p, 0 * p[:, 0]])

    return {"disk": disk, "ellipse_disk": ellipse_disk, "paraboloid": paraboloid,
            "saddle": saddle, "sphere_patch": sphere_patch, "flat": flat}


EMBEDDINGS = {
    ParamManifold.INTERVAL: _interval_embeddings(),
    ParamManifold.CIRCLE: _circle_embeddings(),
    ParamManifold.DISK: _disk_embeddings(),
}


def _density_presets():
    def uniform(grid, p):
        return np.ones(len(p))

    def linear_halfplus(grid, p):
        return 0.5 + p[:, 0]

    def linear(grid, p, a=0.5):
        if grid.manifold is ParamManifold.CIRCLE:
            return 1 + a * np.cos(p[:, 0])
        return 1 + a * p[:, 0]

    def gauss(grid, p, width=0.3, height=2.0):
        if grid.manifold is ParamManifold.CIRCLE:
            d2 = (1 - np.cos(p[:, 0])) * 2
        elif grid.manifold is ParamManifold.INTERVAL:
            d2 = (p[:, 0] - 0.5) ** 2
        else:
            d2 = np.sum((p - 0.2) ** 2, axis=1)
        return 1 + height * np.exp(-d2 / (2 * width**2))

    def wave(grid, p, a=0.4, k=2.0):
        if grid.manifold is ParamManifold.DISK:
            return 1 + a * np.sin(k * p[:, 0]) * np.cos(k * p[:, 1])
        scale = 1.0 if grid.manifold is ParamManifold.CIRCLE else 2 * np.pi
        return 1 + a * np.sin(k * scale * p[:, 0])

    return {"uniform": uniform, "linear_halfplus": linear_halfplus, "linear": linear,
            "gauss": gauss, "wave": wave}


DENSITIES = _density_presets()


def _diffeo_presets():
    def identity(grid, p):
        return p.copy()

    def bump(grid, p, a=0.3):
        if grid.manifold is ParamManifold.INTERVAL:
            return p + a * np.sin(np.pi * p) / np.pi
        if grid.manifold is ParamManifold.CIRCLE:
            return np.mod(p + a * np.sin(p), 2 * np.pi)
        r2 = np.sum(p * p, axis=1)
        return p * (1 + 0.5 * a * (1 - r2))[:, None]

    def rotation(grid, p, a=0.3):
        if grid.manifold is ParamManifold.CIRCLE:
            return np.mod(p + a, 2 * np.pi)
        if grid.manifold is ParamManifold.DISK:
            return _rot2(p, a)
        raise ScenarioError("the interval has no rotations")

    def twist(grid, p, a=0.5):
        if grid.manifold is not ParamManifold.DISK:
            return bump(grid, p, a)
        # rotation by an angle that decays to zero on the boundary circle
        ang = a * (1 - np.sum(p * p, axis=1))
        c, s = np.cos(ang), np.sin(ang)
        return np.column_stack([c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1]])

    return {"identity": identity, "bump": bump, "rotation": rotation, "twist": twist}


DIFFEOS = _diffeo_presets()


def _field_presets():
    def zero(f, mu, p):
        return np.zeros_like(f.values)

    def position(f, mu, p):
        return f.values.copy()

    def rotation(f, mu, p):
        v = np.zeros_like(f.values)
        v[:, 0], v[:, 1] = -f.values[:, 1], f.values[:, 0]
        return v

    def normal(f, mu, p, a=1.0):
        frames = _node_frames(f)
        if frames.shape[2] == 0:
            raise ScenarioError("normal fields need positive codimension")
        return a * frames[:, :, 0]

    def normal_wave(f, mu, p, a=1.0, k=1.0):
        return normal(f, mu, p) * (a * np.cos(k * p[:, :1]))

    def constant(f, mu, p, a=1.0, b=0.0, c=0.0):
        return np.tile(np.array([a, b, c][: f.ambient_dim]), (len(p), 1))

    def smooth(f, mu, p, a=0.3):
        x = f.values
        cols = [np.sin(2 * x[:, 0] + 0.3), np.cos(x[:, -1] + 1.1 * x[:, 0]), x[:, 0] * x[:, -1]]
        return a * np.column_stack(cols[: f.ambient_dim])

    def vertical(f, mu, p, a=0.2):
        grid = f.grid
        if grid.manifold is ParamManifold.INTERVAL:
            u = a * p * (1 - p)
        elif grid.manifold is ParamManifold.CIRCLE:
            u = a * (1 + 0.5 * np.cos(p))
        else:
            u = a * np.column_stack([-p[:, 1], p[:, 0]]) * (1 + p[:, :1])
        return TangentField.from_param_field(f, u).vectors

    def vertical_vol(f, mu, p, a=0.2):
        grid = f.grid
        m = mu.values[:, None]
        if grid.manifold is ParamManifold.INTERVAL:
            u = np.zeros_like(p)
        elif grid.manifold is ParamManifold.CIRCLE:
            u = a / m
        else:
            r2 = np.sum(p * p, axis=1)[:, None]
            grad = -4 * p * (1 - r2)
            u = a * np.column_stack([-grad[:, 1], grad[:, 0]]) / m
        return TangentField.from_param_field(f, u).vectors

    return {"zero": zero, "position": position, "dilation": position, "rotation": rotation,
            "normal": normal, "normal_wave": normal_wave, "constant": constant, "smooth": smooth,
            "vertical": vertical, "vertical_vol": vertical_vol}


FIELDS = _field_presets()


def parse_preset(spec: str, registry: dict):
    """Split ``name_p1_p2`` into a registry entry and float parameters."""
    tokens = str(spec).split("_")
    for j in range(len(tokens), 0, -1):
        name = "_".join(tokens[:j])
        if name in registry:
            try:
                params = [float(t) for t in tokens[j:]]
            except ValueError:
                continue
            return name, registry[name], params
    raise ScenarioError(f"unknown preset {spec!r}; known: {sorted(registry)}")


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    manifold: ParamManifold
    resolution: int
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    densities: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    diffeos: dict = field(default_factory=dict)
    charts: dict = field(default_factory=dict)
    operations: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    @property
    def grid(self) -> SampleGrid:
        if not hasattr(self, "_grid"):
            self._grid = build_grid(self.manifold, self.resolution)
        return self._grid

    def tol(self, name: str, override=None) -> float:
        if override is not None:
            return float(override)
        merged = {**DEFAULT_TOLERANCES, **self.tolerances}
        return float(merged.get(name, merged["default"]))

    # object builders --------------------------------------------------

    def embedding(self, ref) -> Embedding:
        spec = self.embeddings.get(ref, ref) if isinstance(ref, str) else ref
        grid = self.grid
        if isinstance(spec, dict):
            if "values" in spec:
                return Embedding(grid, np.asarray(spec["values"], float))
            name = spec.get("preset")
            params = list(spec.get("params", []))
            rotate = float(spec.get("rotate", 0.0))
            emb = self.embedding(name)
            if params:
                _, fn, _ = parse_preset(name, EMBEDDINGS[self.manifold])
                emb = Embedding(grid, fn(grid.nodes, *params))
            if rotate:
                vals = emb.values.copy()
                vals[:, :2] = _rot2(vals[:, :2], rotate)
                emb = emb.with_values(vals)
            return emb
        _, fn, params = parse_preset(spec, EMBEDDINGS[self.manifold])
        try:
            return Embedding(grid, fn(grid.nodes, *params))
        except TypeError as exc:
            raise ScenarioError(f"bad parameters for embedding {spec!r}: {exc}") from exc

    def density(self, ref) -> DensityForm:
        spec = self.densities.get(ref, ref) if isinstance(ref, str) else ref
        grid = self.grid
        if isinstance(spec, dict) and "values" in spec:
            return DensityForm(grid, np.asarray(spec["values"], float))
        normalize = True
        if isinstance(spec, dict):
            normalize = bool(spec.get("normalize", True))
            spec = spec["preset"]
        _, fn, params = parse_preset(spec, DENSITIES)
        try:
            rho = DensityForm(grid, fn(grid, grid.nodes, *params))
        except TypeError as exc:
            raise ScenarioError(f"bad parameters for density {spec!r}: {exc}") from exc
        if normalize:
            rho = rho.scaled(grid.manifold.reference_volume / integrate(grid, rho))
        return rho

    def diffeo(self, ref) -> DiffeoS:
        spec = self.diffeos.get(ref, ref) if isinstance(ref, str) else ref
        grid = self.grid
        if isinstance(spec, dict) and "values" in spec:
            return DiffeoS(grid, np.asarray(spec["values"], float))
        _, fn, params = parse_preset(spec, DIFFEOS)
        try:
            return DiffeoS(grid, fn(grid, grid.nodes, *params))
        except TypeError as exc:
            raise ScenarioError(f"bad parameters for reparametrization {spec!r}: {exc}") from exc

    def field(self, ref, f: Embedding, mu: DensityForm | None = None) -> np.ndarray:
        spec = self.fields.get(ref, ref) if isinstance(ref, str) else ref
        if isinstance(spec, dict) and "values" in spec:
            return np.asarray(spec["values"], float).reshape(f.values.shape)
        _, fn, params = parse_preset(spec, FIELDS)
        mu = DensityForm.uniform(f.grid) if mu is None else mu
        try:
            return np.asarray(fn(f, mu, f.grid.nodes, *params), float)
        except TypeError as exc:
            raise ScenarioError(f"bad parameters for vector field {spec!r}: {exc}") from exc

    def chart(self, ref) -> TubularChart:
        spec = self.charts.get(ref, ref) if isinstance(ref, str) else ref
        if isinstance(spec, str):
            spec = {"base": spec}
        base = self.embedding(spec.get("base", "base"))
        rotate = float(spec.get("rotate", 0.0))
        if rotate:
            vals = base.values.copy()
            vals[:, :2] = _rot2(vals[:, :2], rotate)
            base = base.with_values(vals)
        delta, eps = spec.get("delta"), spec.get("eps")
        if delta is None or (eps is None and base.grid.has_boundary):
            auto_delta, auto_eps = default_radii(base)
            delta = auto_delta if delta is None else delta
            eps = auto_eps if eps is None else eps
        return build_tubular_chart(
            base,
            float(delta),
            None if eps is None else float(eps),
            stretch=spec.get("stretch", "collar"),
            check_reach=bool(spec.get("check_reach", True)),
        )

    def digest_inputs(self) -> dict:
        return self.raw


def default_radii(base: Embedding) -> tuple[float, float | None]:
    """Tube radius and collar width at 90% of what the reach and the collars allow."""
    reach = estimate_reach(base)
    size = float(np.linalg.norm(base.values - base.values.mean(axis=0), axis=1).max())
    delta = min(0.45 * reach, 0.2 * max(size, 1e-3))
    grid = base.grid
    if not grid.has_boundary:
        return delta, None
    jac = base.node_jacobian[grid.boundary_nodes]
    if grid.manifold is ParamManifold.INTERVAL:
        g = np.linalg.norm(jac[:, :, 0], axis=1)
        collar = 0.9 / (1 / g[0] + 1 / g[1])
    else:
        radial = np.einsum("bmk,bk->bm", jac, grid.nodes[grid.boundary_nodes])
        collar = 0.9 * np.linalg.norm(radial, axis=1).min()
    return delta, min(0.45 * reach, collar)


def _require(cond, msg):
    if not cond:
        raise ScenarioError(msg)


def parse_scenario(data: dict) -> Scenario:
    _require(isinstance(data, dict), "scenario root must be an object")
    _require(data.get("schema") == SCHEMA, f"scenario schema must be {SCHEMA!r}, got {data.get('schema')!r}")
    try:
        manifold = ParamManifold.parse(data.get("manifold", "interval"))
        resolution = int(data.get("resolution", 64))
        seed = int(data.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc
    _require(resolution >= 4, "resolution must be at least 4")
    sections = {}
    for key in ("tolerances", "embeddings", "densities", "fields", "diffeos", "charts"):
        value = data.get(key, {})
        _require(isinstance(value, dict), f"{key!r} must be an object")
        sections[key] = dict(value)
    ops = data.get("operations", [])
    _require(isinstance(ops, list), "'operations' must be a list")
    for op in ops:
        _require(isinstance(op, dict) and "op" in op, "every operation needs an 'op' field")
        _require(op["op"] in OPERATIONS, f"unknown operation {op['op']!r}")
    scenario = Scenario(manifold, resolution, seed, operations=list(ops), raw=data, **sections)
    _check_names(scenario)
    return scenario


def _check_names(sc: Scenario):
    """Resolve every named object once so parse errors surface before any work."""
    for name in sc.embeddings:
        sc.embedding(name)
    for name in sc.densities:
        sc.density(name)
    for name, spec in sc.charts.items():
        base = spec.get("base", "base") if isinstance(spec, dict) else spec
        _require(base in sc.embeddings or _is_preset(base, EMBEDDINGS[sc.manifold]),
                 f"chart {name!r} refers to unknown embedding {base!r}")
    for name, spec in sc.fields.items():
        if not (isinstance(spec, dict) and "values" in spec):
            parse_preset(spec, FIELDS)
    for name in sc.diffeos:
        try:
            sc.diffeo(name)
        except GeometryError as exc:
            raise ScenarioError(f"reparametrization {name!r}: {exc}") from exc


def _is_preset(spec, registry) -> bool:
    try:
        parse_preset(spec, registry)
        return True
    except ScenarioError:
        return False


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(data)


def default_scenario(manifold: str = "interval", resolution: int | None = None) -> Scenario:
    kind = ParamManifold.parse(manifold)
    base = {ParamManifold.INTERVAL: "line", ParamManifold.CIRCLE: "circle", ParamManifold.DISK: "disk"}[kind]
    res = resolution or {ParamManifold.INTERVAL: 64, ParamManifold.CIRCLE: 64, ParamManifold.DISK: 16}[kind]
    return parse_scenario(
        {
            "schema": SCHEMA,
            "manifold": kind.value,
            "resolution": res,
            "embeddings": {"base": base},
            "densities": {"mu": "uniform"},
        }
    )
