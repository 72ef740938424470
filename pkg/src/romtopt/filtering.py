"""PDE density filter mapping raw element densities to smoothed ones.

The raw design ``psi`` drives a screened-Poisson (Helmholtz-type) system
``H phi = b(psi)`` with pure Neumann boundary, followed by element-wise nodal
averaging to recover an element density ``rho``.  The system matrix is
independent of the design, so it is factorized once at construction.

Two exact properties follow from the discrete structure and are relied on by
the optimizer:

* constants are preserved: ``filter(c * 1) == c * 1``;
* volume is preserved: ``sum(rho) * h^2 == sum(psi) * h^2`` for any ``psi``.

The filter is linear in ``psi``; :meth:`HelmholtzFilter.apply_adjoint` applies
the exact transpose of the psi -> rho map, which the gradient assembly
composes with the element-level stiffness sensitivities.  Filter objects are
immutable and their apply methods are pure.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fem import SpdFactorization, StructuredMesh, assemble, helmholtz_element_matrices

__all__ = ["HelmholtzFilter", "FilterResult", "LENGTH_SCALE_FACTOR"]

# The PDE length parameter r relates to the characteristic filter radius R
# by R = 2*sqrt(3)*r, so r = R / (2*sqrt(3)); the smoothing kernel then
# matches a classical density filter of radius R.
LENGTH_SCALE_FACTOR = 1.0 / (2.0 * np.sqrt(3.0))

NODES_PER_ELEM = 4


class FilterResult:
    """Nodal solution and element-averaged density of one filter application."""

    __slots__ = ("phi", "rho")

    def __init__(self, phi: np.ndarray, rho: np.ndarray):
        self.phi = phi
        self.rho = rho


class HelmholtzFilter:
    """Design-density filter with radius ``R`` on a structured mesh.

    ``R = 0`` degenerates to the mass-matrix projection, which acts as the
    identity on element averages.
    """

    def __init__(self, mesh: StructuredMesh, radius: float):
        if radius < 0.0:
            raise ValueError(f"filter radius must be nonnegative, got {radius}")
        self.mesh = mesh
        self.radius = float(radius)
        self.r = LENGTH_SCALE_FACTOR * self.radius
        h_e, b_e = helmholtz_element_matrices(self.r, mesh.h)
        self.b_e = b_e
        # Node/element incidence: column e has ones at the four nodes of e.
        rows = mesh.elem_nodes.ravel()
        cols = np.repeat(np.arange(mesh.n_elems), NODES_PER_ELEM)
        ones = np.ones(rows.size)
        self._incidence = sp.csr_matrix(
            (ones, (rows, cols)), shape=(mesh.n_nodes, mesh.n_elems)
        )
        h = assemble(mesh, h_e, scales=None, field_kind="scalar")
        # Pure Neumann problem: the mass term keeps H SPD, nothing eliminated.
        self._fact = SpdFactorization(h, fixed_dofs=None)

    def load_vector(self, psi: np.ndarray) -> np.ndarray:
        """Right-hand side b(psi); linear in psi."""
        # b_e = (h^2/4) * ones(4), so b(psi) = (h^2/4) * incidence @ psi.
        return self._incidence @ (psi * (self.mesh.elem_volume / NODES_PER_ELEM))

    def apply(self, psi: np.ndarray) -> FilterResult:
        """Filter a raw density field.

        Parameters
        ----------
        psi : (N_e,) raw element densities; finite values required, bounds
            are the caller's responsibility.

        Returns
        -------
        FilterResult with the nodal field ``phi`` and element density ``rho``.
        """
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (self.mesh.n_elems,):
            raise ValueError(
                f"psi must have length {self.mesh.n_elems}, got shape {psi.shape}"
            )
        phi = self._fact.solve(self.load_vector(psi))
        rho = (self._incidence.T @ phi) / NODES_PER_ELEM
        return FilterResult(phi=phi, rho=rho)

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        """Apply the transpose of the (linear) psi -> rho map to ``v``.

        Solves one adjoint system ``H mu = q(v)`` with the nodal averaging
        load ``q(v)`` and contracts with the element loads.  The operator is
        exactly the transpose of :meth:`apply`'s density output, so
        ``apply_adjoint(1) == 1`` (the volume-preservation identity).
        """
        v = np.asarray(v, dtype=float)
        if v.shape != (self.mesh.n_elems,):
            raise ValueError(
                f"v must have length {self.mesh.n_elems}, got shape {v.shape}"
            )
        q = self._incidence @ (v / NODES_PER_ELEM)
        mu = self._fact.solve(q)
        return (self._incidence.T @ mu) * (self.mesh.elem_volume / NODES_PER_ELEM)
