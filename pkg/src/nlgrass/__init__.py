"""Numerical charts, bundle projections and Moser transport on spaces of submanifolds."""

from __future__ import annotations

from .bundle import (
    AssocToken,
    VolGrassPoint,
    assoc_iso,
    assoc_iso_inv,
    fiber_compare,
    project_gr,
    project_vol,
    same_point,
    same_vol_point,
    transition,
    transition_vol,
    trivialize,
    trivialize_inv,
    trivialize_vol,
    trivialize_vol_inv,
)
from .charts import GrassPoint, chart_change, chart_forward, chart_inverse, decompose, normal_embedding, reparam_to_normal
from .embedding import DiffeoS, Embedding, TangentField, check_embedding, compose_reparam, hausdorff_distance
from .mesh import DensityForm, ParamManifold, SampleGrid, build_grid, integrate
from .moser import MoserMap, decompose_diffeo, moser_map
from .tubular import BumpFunction, SectionPair, TubularChart, build_tubular_chart, closest_point_project
from .variations import (
    dvol_embedding,
    mean_curvature,
    membership,
    tangent_project_gr,
    tangent_project_vol,
    volume,
)

__version__ = "0.1.0"
