"""Plane-strain FEM ground truth and CNN surrogates for cantilever von Mises fields."""

from stresslab.errors import StressLabError
from stresslab.geometry import GeometryMask, GridSpec, LoadSpec, ProblemSpec, load_catalog
from stresslab.material import Material
from stresslab.fem import solve_problem

__all__ = [
    "GeometryMask",
    "GridSpec",
    "LoadSpec",
    "Material",
    "ProblemSpec",
    "StressLabError",
    "load_catalog",
    "solve_problem",
]
__version__ = "0.1.0"
