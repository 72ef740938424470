import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from romtopt.fem import build_mesh
from romtopt.filtering import HelmholtzFilter

from oracles import DenseFilter


def test_constant_preservation():
    mesh = build_mesh(8, 5, 0.25)
    filt = HelmholtzFilter(mesh, radius=0.6)
    res = filt.apply(np.full(mesh.n_elems, 0.5))
    assert np.abs(res.rho - 0.5).max() < 1e-12
    assert np.abs(res.phi - 0.5).max() < 1e-12


def test_volume_preservation_random_fields():
    mesh = build_mesh(10, 6, 0.2)
    filt = HelmholtzFilter(mesh, radius=0.5)
    rng = np.random.default_rng(0)
    vol = mesh.elem_volume
    for _ in range(20):
        psi = rng.random(mesh.n_elems)
        rho = filt.apply(psi).rho
        assert abs(rho.sum() * vol - psi.sum() * vol) <= 1e-10 * psi.sum() * vol


def test_linearity():
    mesh = build_mesh(7, 4, 0.3)
    filt = HelmholtzFilter(mesh, radius=0.4)
    rng = np.random.default_rng(1)
    p1, p2 = rng.random(mesh.n_elems), rng.random(mesh.n_elems)
    a, b = 0.7, -1.3
    lhs = filt.apply(a * p1 + b * p2).rho
    rhs = a * filt.apply(p1).rho + b * filt.apply(p2).rho
    assert np.abs(lhs - rhs).max() < 1e-12


@pytest.mark.parametrize("nx,ny,radius", [(4, 3, 0.3), (12, 12, 0.25), (6, 9, 0.0)])
def test_matches_dense_oracle(nx, ny, radius):
    mesh = build_mesh(nx, ny, 0.25)
    filt = HelmholtzFilter(mesh, radius)
    dense = DenseFilter(mesh, radius)
    rng = np.random.default_rng(nx + ny)
    psi = rng.random(mesh.n_elems)
    assert np.abs(filt.apply(psi).rho - dense.rho(psi)).max() < 1e-11


def test_adjoint_is_exact_transpose():
    # <M u, v> == <u, M^T v> against the dense psi->rho matrix
    mesh = build_mesh(12, 12, 0.1)
    filt = HelmholtzFilter(mesh, radius=0.25)
    dense = DenseFilter(mesh, 0.25)
    rng = np.random.default_rng(2)
    for _ in range(5):
        u = rng.standard_normal(mesh.n_elems)
        v = rng.standard_normal(mesh.n_elems)
        lhs = (dense.matrix @ u) @ v
        rhs = u @ filt.apply_adjoint(v)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)
        assert np.abs(filt.apply_adjoint(v) - dense.matrix.T @ v).max() < 1e-11


def test_adjoint_consistency_with_finite_differences():
    mesh = build_mesh(6, 4, 0.25)
    filt = HelmholtzFilter(mesh, radius=0.4)
    rng = np.random.default_rng(3)
    psi = rng.random(mesh.n_elems)
    v = rng.standard_normal(mesh.n_elems)
    # directional derivative of <rho(psi), v> along du equals <du, adjoint(v)>
    du = rng.standard_normal(mesh.n_elems)
    eps = 1e-6
    lhs = (filt.apply(psi + eps * du).rho - filt.apply(psi - eps * du).rho) @ v / (2 * eps)
    rhs = du @ filt.apply_adjoint(v)
    assert abs(lhs - rhs) <= 1e-6 * max(abs(rhs), 1.0)


def test_global_load_vector_sums_to_domain_volume():
    mesh = build_mesh(7, 5, 0.3)
    filt = HelmholtzFilter(mesh, radius=0.5)
    b = filt.load_vector(np.ones(mesh.n_elems))
    assert b.sum() == pytest.approx(mesh.domain_volume, rel=1e-13)


def test_adjoint_of_ones_is_ones():
    # volume preservation in transpose form; holds for every radius
    for radius in (0.0, 0.3, 2.0):
        mesh = build_mesh(9, 5, 0.2)
        filt = HelmholtzFilter(mesh, radius)
        w = filt.apply_adjoint(np.ones(mesh.n_elems))
        assert np.abs(w - 1.0).max() < 1e-10


def test_indicator_spreads_with_monotone_decay():
    mesh = build_mesh(8, 8, 1.0)
    filt = HelmholtzFilter(mesh, radius=2.0)
    psi = np.zeros(mesh.n_elems)
    center = 4 * 8 + 4
    psi[center] = 1.0
    rho = filt.apply(psi).rho
    dense = DenseFilter(mesh, 2.0)
    assert np.abs(rho - dense.rho(psi)).max() < 1e-11
    grid = rho.reshape(8, 8)
    ci, cj = 4, 4
    # walking away from the peak along the axes, the response decays
    row = grid[cj, ci:]
    col = grid[cj:, ci]
    assert np.all(np.diff(row) < 0)
    assert np.all(np.diff(col) < 0)
    assert grid[cj, ci] == rho.max()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_volume_preservation_property(seed):
    mesh = build_mesh(5, 4, 0.5)
    filt = HelmholtzFilter(mesh, radius=0.8)
    psi = np.random.default_rng(seed).random(mesh.n_elems)
    rho = filt.apply(psi).rho
    assert abs(rho.sum() - psi.sum()) <= 1e-10 * max(psi.sum(), 1.0)


def test_shape_validation():
    mesh = build_mesh(3, 3, 1.0)
    filt = HelmholtzFilter(mesh, radius=1.0)
    with pytest.raises(ValueError):
        filt.apply(np.ones(5))
    with pytest.raises(ValueError):
        filt.apply_adjoint(np.ones(2))
    with pytest.raises(ValueError):
        HelmholtzFilter(mesh, radius=-0.1)
