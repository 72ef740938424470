"""Structured Q1 mesh, element matrices, sparse assembly, and SPD direct solves.

All elements are congruent squares of side ``h``, so a single element
stiffness matrix serves the whole mesh and element matrices only need to be
computed once.  Node numbering is row-major with x fastest; element ``e``
sits at column ``i = e % nx`` and row ``j = e // nx``.

Meshes and factorizations are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "StructuredMesh",
    "ElementMatrices",
    "IndefiniteMatrixError",
    "build_mesh",
    "elasticity_element_matrix",
    "helmholtz_element_matrices",
    "element_mass_matrix",
    "assemble",
    "SpdFactorization",
    "factorize",
]


class IndefiniteMatrixError(RuntimeError):
    """The matrix handed to the SPD solver has a non-positive pivot.

    For the elasticity system this usually signals a density below the
    admissible floor or missing Dirichlet boundary conditions.
    """


# Integer coefficient tables for the Q1 plane-stress stiffness matrix on a
# square element, K_e = E0/(1-nu^2) * (_K_A + nu*_K_B)/24.  Node order is
# counterclockwise from the bottom-left corner, dofs interleaved
# (u0, v0, u1, v1, u2, v2, u3, v3).  The edge length h cancels in 2D.
_K_A = np.array(
    [
        [12, 3, -6, -3, -6, -3, 0, 3],
        [3, 12, 3, 0, -3, -6, -3, -6],
        [-6, 3, 12, -3, 0, -3, -6, 3],
        [-3, 0, -3, 12, 3, -6, 3, -6],
        [-6, -3, 0, 3, 12, 3, -6, -3],
        [-3, -6, -3, -6, 3, 12, 3, 0],
        [0, -3, -6, 3, -6, 3, 12, -3],
        [3, -6, 3, -6, -3, 0, -3, 12],
    ],
    dtype=float,
)
_K_B = np.array(
    [
        [-4, 3, -2, 9, 2, -3, 4, -9],
        [3, -4, -9, 4, -3, 2, 9, -2],
        [-2, -9, -4, -3, 4, 9, 2, 3],
        [9, 4, -3, -4, -9, -2, 3, 2],
        [2, -3, 4, -9, -4, 3, -2, 9],
        [-3, 2, 9, -2, 3, -4, -9, 4],
        [4, 9, 2, 3, -2, -9, -4, -3],
        [-9, -2, 3, 2, 9, 4, -3, -4],
    ],
    dtype=float,
)

# Q1 Laplacian element matrix (h-independent in 2D): _S_E / 6.
_S_E = np.array(
    [
        [4, -1, -2, -1],
        [-1, 4, -1, -2],
        [-2, -1, 4, -1],
        [-1, -2, -1, 4],
    ],
    dtype=float,
)

# Consistent mass element matrix: h^2 * _M_E / 36.
_M_E = np.array(
    [
        [4, 2, 1, 2],
        [2, 4, 2, 1],
        [1, 2, 4, 2],
        [2, 1, 2, 4],
    ],
    dtype=float,
)


def elasticity_element_matrix(e0: float, nu: float, h: float = 1.0) -> np.ndarray:
    """Exact Q1 plane-stress stiffness matrix for unit density.

    Independent of ``h`` (the element edge length cancels for square
    elements in 2D); ``h`` is accepted for interface symmetry only.

    Parameters
    ----------
    e0 : Young's modulus at full density, > 0.
    nu : Poisson ratio, 0 <= nu < 0.5.

    Returns
    -------
    (8, 8) symmetric matrix annihilating the three rigid-body modes.
    """
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must satisfy 0 <= nu < 0.5, got {nu}")
    if e0 <= 0.0:
        raise ValueError(f"Young's modulus must be positive, got {e0}")
    if h <= 0.0:
        raise ValueError(f"element size must be positive, got {h}")
    return e0 / (1.0 - nu**2) * (_K_A + nu * _K_B) / 24.0


def element_mass_matrix(h: float) -> np.ndarray:
    """Consistent Q1 mass matrix for a square element of side ``h``."""
    return h**2 / 36.0 * _M_E


def helmholtz_element_matrices(r: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Element matrix and unit load for the screened-Poisson density filter.

    Returns ``(H_e, b_e)`` with ``H_e = r^2 * S_e + M_e`` (Laplacian plus
    consistent mass) and ``b_e = M_e @ 1``, so the entries of ``b_e`` are the
    basis-function integrals and ``sum(b_e) == h**2``.
    """
    if r < 0.0:
        raise ValueError(f"filter length must be nonnegative, got {r}")
    if h <= 0.0:
        raise ValueError(f"element size must be positive, got {h}")
    h_e = r**2 * _S_E / 6.0 + element_mass_matrix(h)
    b_e = element_mass_matrix(h) @ np.ones(4)
    return h_e, b_e


@dataclass(frozen=True)
class ElementMatrices:
    """Reference element matrices shared by every element of a mesh."""

    k_e: np.ndarray  # (8, 8) elasticity stiffness, unit density
    h_e: np.ndarray  # (4, 4) Helmholtz matrix r^2*S + M
    b_e: np.ndarray  # (4,) Helmholtz unit load, sums to h^2

    @classmethod
    def build(cls, e0: float, nu: float, r: float, h: float) -> "ElementMatrices":
        h_e, b_e = helmholtz_element_matrices(r, h)
        return cls(k_e=elasticity_element_matrix(e0, nu, h), h_e=h_e, b_e=b_e)


@dataclass(frozen=True)
class StructuredMesh:
    """Rectangular grid of square Q1 elements.

    ``elem_nodes[e]`` lists the four node indices of element ``e``
    counterclockwise from the bottom-left corner; ``elem_dofs[e]`` the
    corresponding eight displacement dofs (``2*n``, ``2*n+1`` per node).
    These index arrays are the scatter maps realizing the element
    gather/scatter operators of the assembly.
    """

    nx: int
    ny: int
    h: float
    elem_nodes: np.ndarray = field(repr=False)  # (N_e, 4) int
    elem_dofs: np.ndarray = field(repr=False)  # (N_e, 8) int

    @property
    def n_elems(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def elem_volume(self) -> float:
        return self.h**2

    @property
    def domain_volume(self) -> float:
        return self.n_elems * self.h**2

    def node_id(self, i, j):
        """Node index at grid position (i, j), x fastest."""
        return j * (self.nx + 1) + i

    def node_coords(self) -> np.ndarray:
        """(N_v, 2) physical coordinates of all nodes."""
        i = np.arange(self.n_nodes) % (self.nx + 1)
        j = np.arange(self.n_nodes) // (self.nx + 1)
        return np.column_stack([i * self.h, j * self.h])

    def boundary_nodes(self, side: str) -> np.ndarray:
        """Node indices on one side: 'left', 'right', 'bottom' or 'top'."""
        nnx = self.nx + 1
        if side == "left":
            return np.arange(0, self.n_nodes, nnx)
        if side == "right":
            return np.arange(self.nx, self.n_nodes, nnx)
        if side == "bottom":
            return np.arange(nnx)
        if side == "top":
            return np.arange(self.ny * nnx, self.n_nodes)
        raise ValueError(f"unknown side {side!r}")


def build_mesh(nx: int, ny: int, h: float) -> StructuredMesh:
    """Build a structured mesh of ``nx`` by ``ny`` square elements of side ``h``."""
    if nx < 1 or ny < 1:
        raise ValueError(f"element counts must be >= 1, got nx={nx}, ny={ny}")
    if h <= 0.0:
        raise ValueError(f"element size must be positive, got {h}")
    e = np.arange(nx * ny)
    i = e % nx
    j = e // nx
    n0 = j * (nx + 1) + i
    elem_nodes = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    dofs = np.empty((nx * ny, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * elem_nodes
    dofs[:, 1::2] = 2 * elem_nodes + 1
    return StructuredMesh(nx=nx, ny=ny, h=float(h), elem_nodes=elem_nodes, elem_dofs=dofs)


def assemble(
    mesh: StructuredMesh,
    elem_matrix: np.ndarray,
    scales: np.ndarray | None = None,
    field_kind: str = "vector",
) -> sp.csc_matrix:
    """Assemble ``sum_e scales[e] * P_e @ elem_matrix @ P_e.T`` as sparse CSC.

    ``field_kind`` selects the scatter map: 'vector' (8x8 element matrix on
    displacement dofs) or 'scalar' (4x4 on nodes).  ``scales=None`` means all
    ones.  Linear in the number of elements; summation order over duplicate
    entries is fixed by the COO->CSC conversion, so results are bit-stable.
    """
    if field_kind == "vector":
        idx = mesh.elem_dofs
        n = mesh.n_dofs
        k = 8
    elif field_kind == "scalar":
        idx = mesh.elem_nodes
        n = mesh.n_nodes
        k = 4
    else:
        raise ValueError(f"unknown field kind {field_kind!r}")
    if elem_matrix.shape != (k, k):
        raise ValueError(f"element matrix must be {(k, k)}, got {elem_matrix.shape}")
    if scales is None:
        scales = np.ones(mesh.n_elems)
    scales = np.asarray(scales, dtype=float)
    if scales.shape != (mesh.n_elems,):
        raise ValueError(
            f"scales must have length {mesh.n_elems}, got shape {scales.shape}"
        )
    rows = np.repeat(idx, k, axis=1).ravel()
    cols = np.tile(idx, (1, k)).ravel()
    vals = (scales[:, None] * elem_matrix.ravel()[None, :]).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()


class SpdFactorization:
    """Cholesky-style factorization of a sparse SPD matrix.

    Uses SuperLU in symmetric mode with a minimum-degree ordering and no
    partial pivoting, so the factorization is P^T L D L^T P with D read off
    the diagonal of U.  A non-positive diagonal entry means the matrix was
    not positive definite on the retained dofs.

    ``fixed_dofs`` are removed by row/column deletion before factorizing;
    solutions carry zeros at those dofs.  Callers that already hold the
    reduced matrix can pass it through :meth:`from_reduced` instead.
    """

    def __init__(self, a: sp.spmatrix, fixed_dofs: np.ndarray | None = None,
                 _reduced: tuple | None = None):
        if _reduced is not None:
            a, self.free, self.n_full = _reduced
            a = a.tocsc()
        else:
            a = a.tocsc()
            self.n_full = a.shape[0]
            if fixed_dofs is not None and len(fixed_dofs) > 0:
                free = np.setdiff1d(np.arange(self.n_full), fixed_dofs)
                self.free = free
                a = a[np.ix_(free, free)].tocsc()
            else:
                self.free = None
        self._a_free = a
        try:
            self._lu = spla.splu(
                a,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as err:  # SuperLU signals exact singularity this way
            raise IndefiniteMatrixError(f"sparse factorization failed: {err}") from err
        d = self._lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise IndefiniteMatrixError(
                "non-positive pivot encountered; matrix is not positive definite"
            )

    @classmethod
    def from_reduced(
        cls, a_free: sp.spmatrix, free: np.ndarray, n_full: int
    ) -> "SpdFactorization":
        """Wrap a matrix already restricted to the free dofs."""
        return cls(a_free, _reduced=(a_free, free, n_full))

    @property
    def n_free(self) -> int:
        return self._a_free.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A x = rhs.  Full-length vectors in and out; fixed dofs stay zero."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n_full:
            raise ValueError(f"rhs must have length {self.n_full}, got {rhs.shape[0]}")
        if self.free is None:
            return self._lu.solve(rhs)
        x = np.zeros(self.n_full)
        x[self.free] = self._lu.solve(rhs[self.free])
        return x

    def solve_free(self, rhs_free: np.ndarray) -> np.ndarray:
        """Solve on the retained (free) dofs only."""
        return self._lu.solve(np.asarray(rhs_free, dtype=float))

    def matvec_free(self, x_free: np.ndarray) -> np.ndarray:
        return self._a_free @ x_free

    def reconstruct(self) -> sp.csc_matrix:
        """Rebuild the factored matrix from L * sqrt(D) as (L')(L')^T, permuted back."""
        lu = self._lu
        n = self.n_free
        l_chol = lu.L @ sp.diags(np.sqrt(lu.U.diagonal()))
        pr = sp.csc_matrix((np.ones(n), (lu.perm_r, np.arange(n))), shape=(n, n))
        pc = sp.csc_matrix((np.ones(n), (np.arange(n), lu.perm_c)), shape=(n, n))
        return (pr.T @ (l_chol @ l_chol.T) @ pc.T).tocsc()


def factorize(a: sp.spmatrix, fixed_dofs: np.ndarray | None = None) -> SpdFactorization:
    """Factorize a sparse SPD matrix after eliminating ``fixed_dofs``."""
    return SpdFactorization(a, fixed_dofs)


class PatternAssembler:
    """Repeated stiffness assembly on a fixed sparsity pattern.

    The scatter pattern, Dirichlet elimination, and duplicate-entry
    reduction are computed once; each :meth:`assemble` call only rescales
    the element matrix and reduces into the cached CSC structure.  Produces
    the free-dof submatrix directly, with a fixed summation order so results
    are bit-stable and match the generic :func:`assemble` route.
    """

    def __init__(self, mesh: StructuredMesh, elem_matrix: np.ndarray,
                 fixed_dofs: np.ndarray):
        self.mesh = mesh
        self.elem_matrix = elem_matrix
        self.fixed_dofs = np.asarray(fixed_dofs, dtype=np.int64)
        self.free = np.setdiff1d(np.arange(mesh.n_dofs), self.fixed_dofs)
        self.n_free = self.free.shape[0]
        renumber = -np.ones(mesh.n_dofs, dtype=np.int64)
        renumber[self.free] = np.arange(self.n_free)

        k = elem_matrix.shape[0]
        idx = renumber[mesh.elem_dofs]  # (N_e, k), -1 at fixed dofs
        rows = np.repeat(idx, k, axis=1).ravel()
        cols = np.tile(idx, (1, k)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        rows, cols = rows[keep], cols[keep]
        elem_of_entry = np.repeat(np.arange(mesh.n_elems), k * k)[keep]
        ke_of_entry = np.tile(elem_matrix.ravel(), mesh.n_elems)[keep]

        order = np.lexsort((rows, cols))  # CSC ordering: by column, then row
        rows, cols = rows[order], cols[order]
        self._elem_sorted = elem_of_entry[order]
        self._ke_sorted = ke_of_entry[order]
        boundary = np.empty(rows.shape[0], dtype=bool)
        boundary[0] = True
        boundary[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        self._slot_starts = np.flatnonzero(boundary)
        self._indices = rows[self._slot_starts].astype(np.int32)
        counts = np.bincount(cols[self._slot_starts], minlength=self.n_free)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def assemble(self, scales: np.ndarray) -> sp.csc_matrix:
        """Free-dof submatrix of ``sum_e scales[e] * P_e K_e P_e^T``."""
        vals = scales[self._elem_sorted] * self._ke_sorted
        data = np.add.reduceat(vals, self._slot_starts)
        return sp.csc_matrix(
            (data, self._indices, self._indptr), shape=(self.n_free, self.n_free)
        )

    def factorize(self, scales: np.ndarray) -> SpdFactorization:
        return SpdFactorization.from_reduced(
            self.assemble(scales), self.free, self.mesh.n_dofs
        )
