"""Command-line entry point.

Exit codes: 0 success, 1 failed residual or geometric error, 2 bad scenario or
arguments.  Every invocation prints (or writes) one JSON document with the
keys ``operation``, ``inputs_digest``, ``outputs`` and ``residuals``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import GeometryError, ScenarioError
from .mesh import ParamManifold
from .scenario import EMBEDDINGS, SCHEMA, Scenario, load_scenario, parse_scenario
from .suite import MEMBERSHIP_TESTS, Record, run_operation, verify

COMMANDS = (
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
    "verify",
    "gen",
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors through ScenarioError (exit code 2)."""

    def error(self, message):
        raise ScenarioError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, help="scenario JSON (schema nlgrass-scenario/1)")
    common.add_argument("--tolerance", type=float, help="override the operation tolerance")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--output", type=Path, help="write the JSON record here instead of stdout")
    common.add_argument("--svg", nargs="?", const="", default=None, metavar="PATH",
                        help="also write polylines of the involved images as SVG")
    common.add_argument("--csv", type=Path, metavar="PATH", help="export node arrays as CSV")
    common.add_argument("--manifold", choices=["interval", "circle", "disk"])
    common.add_argument("--resolution", type=int)
    common.add_argument("--base", help="base embedding (name or preset)")
    common.add_argument("--target", help="target embedding (name or preset)")
    common.add_argument("--mu", help="reference density")
    common.add_argument("--nu", help="target density")
    common.add_argument("--at", type=float, nargs="+", help="evaluation points (flattened)")
    common.add_argument("--field", help="vector field preset")
    common.add_argument("--phi", help="reparametrization preset")
    common.add_argument("--which", nargs="+", choices=MEMBERSHIP_TESTS)
    common.add_argument("--radius", type=float, help="expected radius for curvature checks")
    common.add_argument("--delta", type=float, help="tube radius")
    common.add_argument("--eps", type=float, help="collar radius")
    common.add_argument("--stretch", choices=["collar", "affine"])
    common.add_argument("--rotate", type=float, help="rotation angle of the second chart (chart-change)")

    parser = _Parser(prog="nlgrass", description="Charts, bundles and Moser transport for spaces of submanifolds.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


# ---------------------------------------------------------------------------
# scenario assembly


def _infer_manifold(args) -> str:
    if args.manifold:
        return args.manifold
    for name in (args.base, args.target):
        if name in ("interval", "circle", "disk"):
            return name
        for kind, registry in EMBEDDINGS.items():
            if name and name.split("_")[0] in registry:
                return {ParamManifold.INTERVAL: "interval", ParamManifold.CIRCLE: "circle",
                        ParamManifold.DISK: "disk"}[kind]
    return "interval"


def _scenario(args) -> Scenario:
    if args.scenario is not None:
        sc = load_scenario(args.scenario)
        data = dict(sc.raw)
    else:
        manifold = _infer_manifold(args)
        base = {"interval": "line", "circle": "circle", "disk": "disk"}[manifold]
        data = {
            "schema": SCHEMA,
            "manifold": manifold,
            "resolution": args.resolution or {"interval": 64, "circle": 64, "disk": 16}[manifold],
            "embeddings": {"base": base},
            "densities": {"mu": "uniform"},
        }
    data["embeddings"] = dict(data.get("embeddings", {}))
    data["densities"] = dict(data.get("densities", {}))
    if args.resolution and args.scenario is not None:
        data["resolution"] = args.resolution
    if args.seed is not None:
        data["seed"] = args.seed
    if args.base:
        data["embeddings"]["base"] = "line" if args.base == "interval" else args.base
    if args.target:
        data["embeddings"]["target"] = args.target
    if args.mu:
        data["densities"]["mu"] = args.mu
    if args.nu:
        data["densities"]["nu"] = args.nu
    return parse_scenario(data)


def _operation(args, sc: Scenario) -> dict:
    """The op request: first matching scenario entry, overridden by flags."""
    op = next((dict(o) for o in sc.operations if o["op"] == args.command), {"op": args.command})
    if args.tolerance is not None:
        op["tolerance"] = args.tolerance
    flags = {"at": args.at, "field": args.field, "phi": args.phi, "which": args.which,
             "radius": args.radius, "rotate": args.rotate}
    op.update({k: v for k, v in flags.items() if v is not None})
    if args.target:
        op["target"] = "target"
    if args.base and args.command in ("tangent", "dvol", "curvature", "membership") and not args.target:
        op["target"] = "base"
    if any(x is not None for x in (args.delta, args.eps, args.stretch)) or args.base:
        spec = {"base": "base"}
        for key in ("delta", "eps", "stretch"):
            if getattr(args, key) is not None:
                spec[key] = getattr(args, key)
        op["chart"] = spec
    if "phi" not in op and args.command == "decompose":
        op["phi"] = "bump"
    if "nu" not in sc.densities and args.command == "moser":
        raise ScenarioError("moser needs a target density (--nu or densities.nu)")
    return op


# ---------------------------------------------------------------------------
# artifacts


def _polylines(sc: Scenario, rec: Record) -> list[np.ndarray]:
    lines = []
    for name in ("base", "target"):
        if name in sc.embeddings:
            f = sc.embedding(name)
            grid = f.grid
            if grid.manifold is ParamManifold.DISK:
                pts = f.boundary_values()
                pts = np.vstack([pts, pts[:1]])
            elif grid.manifold is ParamManifold.CIRCLE:
                pts = np.vstack([f.values, f.values[:1]])
            else:
                pts = f.values
            lines.append(pts[:, :2])
    return lines


def _write_svg(path: Path, lines: list[np.ndarray], size: int = 480):
    if not lines:
        path.write_text('<svg xmlns="http://www.w3.org/2000/svg"/>\n')
        return
    allpts = np.vstack(lines)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    scale = (size - 40) / max(float((hi - lo).max()), 1e-12)
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    body = []
    for i, pts in enumerate(lines):
        xy = (pts - lo) * scale + 20
        coords = " ".join(f"{x:.3f},{size - y:.3f}" for x, y in xy)
        body.append(f'<polyline fill="none" stroke="{colours[i % 4]}" stroke-width="1.5" points="{coords}"/>')
    path.write_text(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n' + "\n".join(body) + "\n</svg>\n"
    )


def _write_csv(path: Path, outputs: dict):
    """Export the first node-shaped array of the outputs, one row per node."""
    rows, name = None, None
    for key, value in outputs.items():
        arr = np.asarray(value) if isinstance(value, (list, np.ndarray)) else None
        if arr is not None and arr.dtype.kind == "f" and arr.ndim in (1, 2) and arr.shape[0] > 1:
            rows, name = arr.reshape(arr.shape[0], -1), key
            break
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if rows is None:
            writer.writerow(["empty"])
            return
        writer.writerow(["node"] + [f"{name}_{j}" for j in range(rows.shape[1])])
        for i, row in enumerate(rows):
            writer.writerow([i] + [repr(float(x)) for x in row])


def _emit(doc: dict, output: Path | None):
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if output is None:
        sys.stdout.write(text)
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text)


# ---------------------------------------------------------------------------
# gen


def sample_scenarios() -> dict[str, dict]:
    """Scenarios exercising the documented examples."""
    two_pi = 2 * np.pi
    return {
        "interval_basic.json": {
            "schema": SCHEMA,
            "manifold": "interval",
            "resolution": 192,
            "seed": 1,
            "embeddings": {"base": "line", "target": "segment_0.1_0.8", "long": "segment_0_2"},
            "densities": {"mu": "uniform", "nu": "linear_halfplus"},
            "charts": {"main": {"base": "base", "delta": 0.1, "eps": 0.45}},
            "operations": [
                {"op": "chart", "chart": "main", "target": "target",
                 "expect": {"sigma_dagger": [0.1, -0.2], "sigma_sup": 0.0}},
                {"op": "moser", "mu": "mu", "nu": "nu", "at": [0.375], "expect": {"values": [0.5]}},
                {"op": "project", "target": "long", "mu": "mu", "expect": {"total": 1.0, "nu": 0.5}},
                {"op": "tangent", "target": "base", "field": "constant_0.3_0.2",
                 "expect": {"w_dagger": [-0.3, 0.3]}},
                {"op": "tangent", "target": "base", "field": "vertical", "expect": {"gr_norm": 0.0}},
                {"op": "dvol", "target": "base", "field": "vertical", "expect": {"value": 0.0}},
            ],
        },
        "interval_affine.json": {
            "schema": SCHEMA,
            "manifold": "interval",
            "resolution": 64,
            "embeddings": {"base": "line", "target": "wave_0.05_3"},
            "densities": {"mu": "linear_0.5"},
            "charts": {"main": {"base": "base", "delta": 0.1, "eps": 0.45, "stretch": "affine"}},
            "operations": [
                {"op": "chart-roundtrip", "chart": "main", "target": "target"},
                {"op": "trivialize", "chart": "main", "target": "target", "mu": "mu"},
            ],
        },
        "interval_curved.json": {
            "schema": SCHEMA,
            "manifold": "interval",
            "resolution": 192,
            "seed": 3,
            "embeddings": {"base": "wave_0.1_2", "target": "wave_0.12_2"},
            "densities": {"mu": "gauss"},
            "charts": {"main": {"base": "base", "delta": 0.05, "eps": 0.3}},
            "operations": [
                {"op": "chart-change", "chart": "main", "target": "target", "rotate": 0.03},
                {"op": "decompose", "phi": "bump_0.4", "mu": "mu"},
            ],
        },
        "circle_basic.json": {
            "schema": SCHEMA,
            "manifold": "circle",
            "resolution": 128,
            "seed": 2,
            "embeddings": {"base": "circle", "target": "wobble_0.03_3", "big": "circle_2"},
            "densities": {"mu": "uniform", "nu": "wave"},
            "operations": [
                {"op": "dvol", "target": "base", "field": "normal", "expect": {"value": two_pi}},
                {"op": "curvature", "target": "big", "radius": 2.0},
                {"op": "membership", "target": "base", "field": "normal", "which": ["Emb0"],
                 "expect": {"Emb0": False}},
                {"op": "membership", "target": "base", "field": "normal_wave", "which": ["Emb0"],
                 "expect": {"Emb0": True}},
                {"op": "moser", "mu": "mu", "nu": "nu"},
                {"op": "chart-roundtrip", "target": "target"},
            ],
        },
        "disk_basic.json": {
            "schema": SCHEMA,
            "manifold": "disk",
            "resolution": 16,
            "seed": 4,
            "embeddings": {"base": "disk", "target": "ellipse_disk_1.02_0.99"},
            "densities": {"mu": "uniform", "nu": "linear_0.5"},
            "operations": [
                {"op": "dvol", "target": "base", "field": "position", "expect": {"value": two_pi}},
                {"op": "tangent", "target": "base", "field": "position", "expect": {"w_dagger": 1.0}},
                {"op": "membership", "target": "base", "field": "rotation", "which": ["EmbVol"],
                 "expect": {"EmbVol": True}, "tolerance": 1e-10},
                {"op": "membership", "target": "base", "field": "position", "which": ["EmbVol"],
                 "expect": {"EmbVol": False}},
                {"op": "moser", "mu": "mu", "nu": "nu"},
            ],
        },
        "sphere_patch.json": {
            "schema": SCHEMA,
            "manifold": "disk",
            "resolution": 48,
            "suite": False,
            "embeddings": {"base": "sphere_patch_1.5_0.8"},
            "densities": {"mu": "uniform"},
            "operations": [
                {"op": "curvature", "target": "base", "radius": 1.5},
                {"op": "dvol", "target": "base", "field": "smooth", "curvature": "weak"},
            ],
        },
    }


def _gen(args) -> Record:
    out = args.output or Path("gen")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, data in sample_scenarios().items():
        path = out / name
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
        written.append(str(path))
    return Record("gen", {"files": written}, {"files": written})


# ---------------------------------------------------------------------------
# main


def run_command(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ScenarioError as exc:
        print(f"nlgrass: {exc}", file=sys.stderr)
        return 2
    if args.command == "gen":
        rec = _gen(args)
        sys.stdout.write(json.dumps(rec.to_json(), sort_keys=True, indent=2) + "\n")
        return 0
    try:
        sc = _scenario(args)
        if args.command == "verify":
            rec = verify(sc) if sc.raw.get("suite", True) else _operations_only(sc)
        else:
            rec = run_operation(sc, _operation(args, sc))
    except ScenarioError as exc:
        print(f"nlgrass: scenario error: {exc}", file=sys.stderr)
        return 2
    except GeometryError as exc:
        doc = Record(args.command, {"argv": list(argv)}, {"error": type(exc).__name__, "message": str(exc)})
        _emit(doc.to_json(), args.output)
        print(f"nlgrass: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    doc = rec.to_json()
    _emit(doc, args.output)
    if args.svg is not None:
        svg = Path(args.svg) if args.svg else (args.output or Path("nlgrass")).with_suffix(".svg")
        _write_svg(svg, _polylines(sc, rec))
    if args.csv is not None:
        _write_csv(args.csv, rec.outputs)
    return 0 if rec.passed else 1


def _operations_only(sc: Scenario) -> Record:
    rec = Record("verify", {"scenario": sc.raw})
    for i, op in enumerate(sc.operations):
        sub = run_operation(sc, op)
        for r in sub.residuals:
            rec.residuals.append({**r, "name": f"op{i}:{op['op']}:{r['name']}"})
    rec.outputs = {"checks": len(rec.residuals), "failed": [r["name"] for r in rec.residuals if not r["pass"]]}
    return rec


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
