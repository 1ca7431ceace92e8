"""Estimation of location and intensity of boundary pollutant sources in
a 2D channel, from concentration measurements at the outflow.

Subpackages cover the finite element forward model, snapshot-based model
reduction, sensitivity computations, the projected damped Gauss-Newton
optimizer, adaptive control parametrization, time localization, the four
identification drivers, a 1D analytic ill-posedness study and a
reproducible experiment harness.
"""

__version__ = "0.1.0"

from .algorithms import (AlgorithmConfig, RunReport, run_adaptive,
                         run_adaptive_time, run_finest, run_finest_time)
from .controls import ActiveSet, ControlVector, Subdivision
from .forward import TimeGrid, TransportModel
from .mesh import PhysicalCoefficients, StructuredMesh, assemble, build_mesh
from .optimize import GnConfig, run_comparisons, run_pdgn
from .pod import PodConfig, ReducedTransportModel

__all__ = [
    "__version__",
    "ActiveSet", "AlgorithmConfig", "ControlVector", "GnConfig",
    "PhysicalCoefficients", "PodConfig", "ReducedTransportModel",
    "RunReport", "StructuredMesh", "Subdivision", "TimeGrid",
    "TransportModel", "assemble", "build_mesh", "run_adaptive",
    "run_adaptive_time", "run_comparisons", "run_finest",
    "run_finest_time", "run_pdgn",
]
