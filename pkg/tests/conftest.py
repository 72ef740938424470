import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from romtopt.fem import build_mesh, elasticity_element_matrix
from romtopt.filtering import HelmholtzFilter
from romtopt.hdm import ComplianceObjective, HdmSolver, MaterialModel
from romtopt.rom import RomModel


def make_cantilever(nx, ny, h=1.0, radius=None, e0=1.0, nu=0.3, load=1.0):
    """Small clamped-left cantilever with a downward tip load, for tests.

    The load is a single nodal force at the middle of the right edge, kept
    O(1) so objective values and gradients are well scaled for
    finite-difference checks.
    """
    mesh = build_mesh(nx, ny, h)
    if radius is None:
        radius = 1.5 * h
    k_e = elasticity_element_matrix(e0, nu, h)
    filt = HelmholtzFilter(mesh, radius)
    f = np.zeros(mesh.n_dofs)
    tip = mesh.node_id(nx, ny // 2)
    f[2 * tip + 1] = -load
    left = mesh.boundary_nodes("left")
    fixed = np.concatenate([2 * left, 2 * left + 1])
    solver = HdmSolver(mesh, k_e, filt, f, fixed, material=MaterialModel())
    return solver


@pytest.fixture
def cantilever_6x2():
    return make_cantilever(6, 2)


@pytest.fixture
def cantilever_4x2():
    return make_cantilever(4, 2)


@pytest.fixture
def cantilever_12x4():
    return make_cantilever(12, 4)


@pytest.fixture
def compliance(cantilever_6x2):
    return ComplianceObjective(cantilever_6x2.f)


def rom_for(solver):
    return RomModel(solver)
