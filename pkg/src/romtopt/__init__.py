"""Reduced-model-accelerated 2D density topology optimization.

Compliance minimization on structured Q1 meshes with a Helmholtz-type
density filter, solved either by a full-order MMA loop or by an error-aware
trust-region method whose model is a Galerkin reduced-order model rebuilt
on the fly from the optimization trajectory.
"""

from .fem import (
    ElementMatrices,
    IndefiniteMatrixError,
    SpdFactorization,
    StructuredMesh,
    assemble,
    build_mesh,
    elasticity_element_matrix,
    factorize,
    helmholtz_element_matrices,
)
from .filtering import HelmholtzFilter
from .hdm import (
    ComplianceObjective,
    HdmSolution,
    HdmSolver,
    MaterialModel,
    Objective,
    StaleSolutionError,
)
from .mma import MmaConfig, MmaOptimizer, hdm_mma_driver
from .problems import (
    AssembledProblem,
    ProblemSpec,
    assemble_problem,
    builtin_names,
    builtin_problem,
)
from .report import ReferenceCache, RunReport, cost, export_density, report_table
from .rom import ReducedBasis, RomModel, RomSolution, SnapshotWindow, gram_schmidt, pod
from .runner import METHODS, RunConfig, build_reference, run
from .stats import RunStats
from .trustregion import (
    TrConfig,
    TrIterationRecord,
    TrustRegionDriver,
    criticality_chi,
    initial_radius,
    project_feasible,
    termination_measure,
)

__version__ = "0.1.0"
