from __future__ import annotations

import json
import subprocess
import sys

import pytest

from nlgrass.cli import main, sample_scenarios


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_chart_segment(capsys):
    code, doc = _run(capsys, "chart", "--base", "interval", "--target", "segment_0.1_0.8")
    assert code == 0
    assert doc["operation"] == "chart"
    assert doc["outputs"]["sigma_dagger"] == pytest.approx([0.1, -0.2], abs=1e-9)
    assert max(abs(x) for row in doc["outputs"]["sigma"] for x in row) < 1e-9
    assert set(doc) == {"operation", "inputs_digest", "outputs", "residuals"}


def test_moser_closed_form(capsys):
    code, doc = _run(capsys, "moser", "--mu", "uniform", "--nu", "linear_halfplus", "--at", "0.375")
    assert code == 0
    assert doc["outputs"]["values"][0] == pytest.approx(0.5, abs=1e-9)


def test_usage_errors_exit_2(capsys, tmp_path):
    assert main(["nonsense"]) == 2
    assert main(["chart", "--target", "no_such_shape"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "other/9", "manifold": "interval"}))
    assert main(["verify", "--scenario", str(bad)]) == 2
    assert main(["moser", "--mu", "uniform"]) == 2
    capsys.readouterr()


def test_geometry_error_exit_1(capsys):
    code, doc = _run(capsys, "chart", "--base", "interval", "--target", "segment_0.4_0.6")
    assert code == 1
    assert doc["outputs"]["error"] == "NotInChartDomain"


def test_failed_expectation_exit_1(capsys):
    code, doc = _run(capsys, "moser", "--mu", "uniform", "--nu", "linear_halfplus", "--at", "0.375",
                     "--tolerance", "1e-30")
    assert code == 1
    assert any(not r["pass"] for r in doc["residuals"])


def test_gen_and_verify(tmp_path, capsys):
    gen = tmp_path / "gen"
    assert main(["gen", "--output", str(gen)]) == 0
    capsys.readouterr()
    assert sorted(p.name for p in gen.iterdir()) == sorted(sample_scenarios())
    for path in sorted(gen.iterdir()):
        out = tmp_path / f"out_{path.name}"
        code = main(["verify", "--scenario", str(path), "--output", str(out)])
        doc = json.loads(out.read_text())
        failed = [r for r in doc["residuals"] if not r["pass"]]
        assert code == 0, (path.name, failed)
        assert doc["residuals"], path.name
        assert all({"name", "value", "tolerance", "pass"} <= set(r) for r in doc["residuals"])


def test_determinism(tmp_path):
    gen = tmp_path / "gen"
    main(["gen", "--output", str(gen)])
    scenario = gen / "interval_affine.json"
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["verify", "--scenario", str(scenario), "--output", str(a)]) == 0
    assert main(["verify", "--scenario", str(scenario), "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_svg_and_csv(tmp_path, capsys):
    svg, table = tmp_path / "img.svg", tmp_path / "nodes.csv"
    code = main(["chart", "--base", "interval", "--target", "segment_0.1_0.8",
                 "--svg", str(svg), "--csv", str(table)])
    capsys.readouterr()
    assert code == 0
    assert svg.read_text().startswith("<svg") and svg.read_text().count("<polyline") == 2
    rows = table.read_text().splitlines()
    assert rows[0].startswith("node,") and len(rows) > 2


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "nlgrass.cli", "chart", "--base", "interval",
                           "--target", "segment_0.1_0.8"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["operation"] == "chart"
