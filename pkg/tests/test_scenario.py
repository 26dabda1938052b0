from __future__ import annotations

import json

import numpy as np
import pytest

from nlgrass.errors import ScenarioError
from nlgrass.mesh import integrate
from nlgrass.scenario import SCHEMA, load_scenario, parse_preset, parse_scenario, EMBEDDINGS
from nlgrass.mesh import ParamManifold


def _data(**extra):
    base = {"schema": SCHEMA, "manifold": "interval", "resolution": 32,
            "embeddings": {"base": "line"}, "densities": {"mu": "uniform"}}
    base.update(extra)
    return base


def test_parse_preset():
    name, fn, params = parse_preset("segment_0.1_0.8", EMBEDDINGS[ParamManifold.INTERVAL])
    assert name == "segment" and params == [0.1, 0.8]
    with pytest.raises(ScenarioError):
        parse_preset("nothing_1", EMBEDDINGS[ParamManifold.INTERVAL])


def test_scenario_objects(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(_data(densities={"mu": "linear_0.5"}, tolerances={"chart": 1e-5})))
    sc = load_scenario(path)
    assert sc.grid.size == 32
    assert abs(integrate(sc.grid, sc.density("mu")) - 1.0) < 1e-12
    assert sc.tol("chart") == 1e-5 and sc.tol("moser") == 1e-8 and sc.tol("moser", 0.1) == 0.1
    assert np.allclose(sc.embedding("base").values[:, 1], 0)


@pytest.mark.parametrize("bad", [
    {"schema": "x"},
    {"manifold": "torus"},
    {"embeddings": {"base": "blob"}},
    {"operations": [{"op": "fly"}]},
])
def test_invalid_scenarios(bad):
    with pytest.raises(ScenarioError):
        parse_scenario(_data(**bad))


def test_every_operation_has_a_runner():
    from nlgrass.scenario import OPERATIONS
    from nlgrass.suite import RUNNERS

    assert set(RUNNERS) == set(OPERATIONS)
