"""On-the-fly Galerkin reduced-order model for the elasticity system.

A reduced basis is rebuilt at every trust-region center from a bounded
window of full-order snapshots: the window is POD-compressed, the current
center's primal (and, for non-compliance objectives, adjoint) state is
appended, and the block is orthonormalized.  Because the center states enter
the basis exactly, the reduced objective and gradient reproduce the
full-order values at the center, which is the property the trust-region
convergence argument rests on.

Reduced operators are assembled from cached element-local basis slices using
dense operations only; residual norms are always evaluated in the full
space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import count

import numpy as np
import scipy.linalg

from .fem import StructuredMesh
from .hdm import HdmSolver, Objective
from .stats import RunStats

__all__ = [
    "pod",
    "gram_schmidt",
    "SnapshotWindow",
    "ReducedBasis",
    "RomSolution",
    "RomModel",
    "ErrorReport",
    "BasisMismatchError",
    "DegenerateBasisError",
]

_GEN_COUNTER = count(1)

GS_DROP_TOL = 1e-10


class BasisMismatchError(RuntimeError):
    """A reduced solution was paired with a basis it was not computed from."""


class DegenerateBasisError(RuntimeError):
    """The reduced stiffness matrix was numerically singular."""


def pod(snapshots: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` left singular vectors of a snapshot matrix (thin SVD).

    Columns carry a deterministic sign: the largest-magnitude component of
    each vector is made positive (first occurrence on ties), so repeated
    runs produce identical bases.
    """
    snapshots = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if n > snapshots.shape[1]:
        raise ValueError(
            f"requested {n} modes from {snapshots.shape[1]} snapshots"
        )
    if n == 0:
        return np.zeros((snapshots.shape[0], 0))
    u, _, _ = np.linalg.svd(snapshots, full_matrices=False)
    u = u[:, :n].copy()
    for col in range(n):
        pivot = np.argmax(np.abs(u[:, col]))
        if u[pivot, col] < 0.0:
            u[:, col] = -u[:, col]
    return u


def gram_schmidt(vectors: list[np.ndarray], drop_tol: float = GS_DROP_TOL) -> np.ndarray:
    """Orthonormalize a sequence of vectors, dropping near-dependent ones.

    Modified Gram-Schmidt with one reorthogonalization pass.  A vector whose
    residual after projection falls below ``drop_tol`` times its original
    norm is considered already represented and skipped.
    """
    basis: list[np.ndarray] = []
    for v in vectors:
        v = np.asarray(v, dtype=float).copy()
        norm0 = np.linalg.norm(v)
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        norm = np.linalg.norm(v)
        if norm >= drop_tol * norm0:
            basis.append(v / norm)
    if not basis:
        raise ValueError("no independent vectors supplied")
    return np.column_stack(basis)


class SnapshotWindow:
    """Bounded FIFO of full-order primal/adjoint snapshot pairs.

    Retains at most ``max_size`` of the most recent entries; only converged
    full-order states should be appended.  An optional ``key`` (the design
    hash) deduplicates states that are already present, so repeated centers
    never burn window slots.
    """

    def __init__(self, max_size: int):
        if max_size < 1:
            raise ValueError("window size must be >= 1")
        self.max_size = max_size
        self._primal: list[np.ndarray] = []
        self._adjoint: list[np.ndarray] = []
        self._keys: list[str | None] = []

    def __len__(self) -> int:
        return len(self._primal)

    def __contains__(self, key: str) -> bool:
        return key is not None and key in self._keys

    def append(self, u: np.ndarray, lam: np.ndarray, key: str | None = None) -> None:
        if key is not None and key in self._keys:
            return
        self._primal.append(np.asarray(u, dtype=float).copy())
        self._adjoint.append(np.asarray(lam, dtype=float).copy())
        self._keys.append(key)
        if len(self._primal) > self.max_size:
            self._primal.pop(0)
            self._adjoint.pop(0)
            self._keys.pop(0)

    def primal_matrix(self) -> np.ndarray:
        return np.column_stack(self._primal) if self._primal else np.zeros((0, 0))

    def adjoint_matrix(self) -> np.ndarray:
        return np.column_stack(self._adjoint) if self._adjoint else np.zeros((0, 0))


@dataclass
class ReducedBasis:
    """Orthonormal basis plus the element-local caches for dense assembly."""

    phi: np.ndarray  # (N_u, j) orthonormal columns
    elem_phi: np.ndarray = field(repr=False)  # (N_e, 8, j) rows of phi per element
    elem_k_phi: np.ndarray = field(repr=False)  # (N_e, 8, j) K_e @ elem_phi
    f_hat: np.ndarray  # (j,) reduced load
    gen_id: int = field(default_factory=lambda: next(_GEN_COUNTER))

    @property
    def size(self) -> int:
        return self.phi.shape[1]


@dataclass
class RomSolution:
    """One reduced solve: coefficients, reconstruction, and diagnostics."""

    basis_gen: int
    uhat: np.ndarray
    u: np.ndarray  # phi @ uhat
    lamhat: np.ndarray
    lam: np.ndarray
    j: float
    residual_norm: float  # full-space 2-norm of the primal residual
    grad: np.ndarray | None = None


@dataclass
class ErrorReport:
    """Residual norms and, in certified mode, computable error bounds."""

    primal_residual: float
    adjoint_residual: float
    sigma_min: float | None = None
    sigma_min_converged: bool = True
    energy_error_bound: float | None = None  # primal energy-norm bound
    objective_error_bound: float | None = None  # compliance-form objective bound


class RomModel:
    """Reduced evaluations bound to one problem (mesh, load, filter, material).

    Shares the element gather maps and statistics sink with the full-order
    solver it accelerates.  Bases are immutable once built; solves are
    reentrant.
    """

    def __init__(self, solver: HdmSolver, stats: RunStats | None = None):
        self.solver = solver
        self.mesh: StructuredMesh = solver.mesh
        self.k_e = solver.k_e
        self.f = solver.f
        self.free_mask = solver.free_mask
        self.material = solver.material
        self.stats = stats or solver.stats

    def build_basis(
        self,
        window: SnapshotWindow,
        center_u: np.ndarray,
        center_lambda: np.ndarray,
        is_compliance: bool,
        n_k: int,
        center_rho: np.ndarray | None = None,
    ) -> ReducedBasis:
        """Reduced basis from POD of the window plus the exact center states.

        ``n_k`` is the POD truncation size for each of the primal and
        adjoint snapshot blocks (capped by the window occupancy).  The
        returned basis always contains the center primal state in its span,
        and the adjoint state too when it is distinct.

        When ``center_rho`` is given, the reduced load absorbs the center
        snapshot's discrete residual (a round-off-level vector), making the
        reduced system exactly consistent with the stored state; without it
        the center solve would reproduce the snapshot only up to that
        residual amplified by the reduced conditioning.
        """
        if center_u is None or np.linalg.norm(center_u) == 0.0:
            raise ValueError("center primal state must be a nonzero vector")
        n_k = min(n_k, len(window))
        # The center states lead the orthonormalization so they are
        # represented exactly no matter how close the truncated POD span
        # comes to containing them; POD modes follow, dropping whatever the
        # center already covers.  The span matches appending the centers
        # last, but the exactness at the center is structural this way.
        blocks: list[np.ndarray] = [center_u]
        if not is_compliance:
            blocks.append(center_lambda)
        if n_k > 0:
            blocks.extend(pod(window.primal_matrix(), n_k).T)
            if not is_compliance:
                blocks.extend(pod(window.adjoint_matrix(), n_k).T)
        # Snapshots vanish at constrained dofs, but the SVD behind the POD
        # does not preserve exact zero rows in trailing modes; those stray
        # components would couple the reduced operator to eliminated dofs.
        # Re-impose the constraints before orthonormalization.
        blocks = [np.where(self.free_mask, v, 0.0) for v in blocks]
        phi = gram_schmidt(blocks)
        elem_phi = phi[self.mesh.elem_dofs]
        elem_k_phi = np.matmul(self.k_e, elem_phi)
        f_eff = self.f
        if center_rho is not None:
            f_eff = self.solver.apply_stiffness(center_rho, center_u)
        return ReducedBasis(
            phi=phi,
            elem_phi=elem_phi,
            elem_k_phi=elem_k_phi,
            f_hat=phi.T @ f_eff,
        )

    def reduced_stiffness(self, basis: ReducedBasis, rho: np.ndarray) -> np.ndarray:
        """Dense j x j reduced stiffness sum_e alpha_e (P_e^T Phi)^T K_e (P_e^T Phi).

        Evaluated as one GEMM over the stacked element slices.
        """
        alpha = self.material.alpha(rho)
        j = basis.size
        weighted = basis.elem_phi * alpha[:, None, None]
        return weighted.reshape(-1, j).T @ basis.elem_k_phi.reshape(-1, j)

    def solve(
        self,
        basis: ReducedBasis,
        rho: np.ndarray,
        objective: Objective,
        compute_gradient: bool = False,
    ) -> RomSolution:
        """Galerkin solve on the basis at density ``rho``.

        Computes the reduced primal (and adjoint, if the objective requires
        one), the objective value, the full-space residual norm, and
        optionally the reduced gradient by the same adjoint formulas as the
        full model with reduced states substituted.  Counts one reduced
        solve in the statistics.
        """
        k_hat = self.reduced_stiffness(basis, rho)
        try:
            cho = scipy.linalg.cho_factor(k_hat)
        except np.linalg.LinAlgError as err:
            raise DegenerateBasisError(f"reduced stiffness not SPD: {err}") from err
        uhat = scipy.linalg.cho_solve(cho, basis.f_hat)
        u = basis.phi @ uhat
        if objective.is_compliance:
            lamhat, lam = uhat, u
        else:
            g_hat = basis.phi.T @ objective.du(u, rho)
            lamhat = scipy.linalg.cho_solve(cho, g_hat)
            lam = basis.phi @ lamhat
        j = objective.value(u, rho)
        res = self.residual_vector(basis, rho, uhat)
        self.stats.rom_solves += 1
        sol = RomSolution(
            basis_gen=basis.gen_id,
            uhat=uhat,
            u=u,
            lamhat=lamhat,
            lam=lam,
            j=j,
            residual_norm=float(np.linalg.norm(res)),
        )
        if compute_gradient:
            s = self.solver.element_sensitivity(rho, u, lam, objective)
            sol.grad = self.solver.filter.apply_adjoint(s)
        return sol

    def _scatter_k_u(self, basis: ReducedBasis, rho: np.ndarray, what: np.ndarray) -> np.ndarray:
        """Full-space K(rho) @ (phi @ what) via the cached element products."""
        alpha = self.material.alpha(rho)
        contrib = (basis.elem_k_phi @ what) * alpha[:, None]
        return np.bincount(
            self.mesh.elem_dofs.ravel(),
            weights=contrib.ravel(),
            minlength=self.mesh.n_dofs,
        )

    def residual_vector(
        self, basis: ReducedBasis, rho: np.ndarray, uhat: np.ndarray
    ) -> np.ndarray:
        """Primal residual K(rho) phi uhat - f on the free dofs (zeros elsewhere)."""
        r = self._scatter_k_u(basis, rho, uhat) - self.f
        r[~self.free_mask] = 0.0
        return r

    def residual_norm(
        self, basis: ReducedBasis, rho: np.ndarray, solution: RomSolution
    ) -> float:
        """Full-space 2-norm of the primal residual of a reduced solution."""
        if solution.basis_gen != basis.gen_id:
            raise BasisMismatchError(
                "reduced solution does not belong to this basis generation"
            )
        return float(np.linalg.norm(self.residual_vector(basis, rho, solution.uhat)))

    def adjoint_residual_vector(
        self,
        basis: ReducedBasis,
        rho: np.ndarray,
        solution: RomSolution,
        objective: Objective,
    ) -> np.ndarray:
        """Adjoint residual K(rho) lam_k - dj/du(u_k) on the free dofs."""
        r = self._scatter_k_u(basis, rho, solution.lamhat) - objective.du(solution.u, rho)
        r[~self.free_mask] = 0.0
        return r

    def error_bounds(
        self,
        basis: ReducedBasis,
        rho: np.ndarray,
        solution: RomSolution,
        objective: Objective,
        mode: str = "cheap",
        power_max_iter: int = 200,
        power_rtol: float = 1e-10,
    ) -> ErrorReport:
        """Residual-norm error indicators, optionally with certified bounds.

        ``cheap`` returns the primal and adjoint residual norms.
        ``certified`` additionally estimates the smallest stiffness
        eigenvalue by inverse power iteration on a fresh factorization of
        K(rho) and reports the primal energy-norm bound and the
        compliance-form objective bound.
        """
        if solution.basis_gen != basis.gen_id:
            raise BasisMismatchError(
                "reduced solution does not belong to this basis generation"
            )
        r_p = float(np.linalg.norm(self.residual_vector(basis, rho, solution.uhat)))
        r_a = float(
            np.linalg.norm(self.adjoint_residual_vector(basis, rho, solution, objective))
        )
        report = ErrorReport(primal_residual=r_p, adjoint_residual=r_a)
        if mode == "cheap":
            return report
        if mode != "certified":
            raise ValueError(f"unknown mode {mode!r}")
        from .fem import SpdFactorization

        k = self.solver.assemble_stiffness(rho)
        fact = SpdFactorization(k, self.solver.fixed_dofs)
        sigma, converged = _smallest_eigenvalue(fact, power_max_iter, power_rtol)
        report.sigma_min = sigma
        report.sigma_min_converged = converged
        if converged:
            report.energy_error_bound = r_p / np.sqrt(sigma)
            report.objective_error_bound = r_p**2 / sigma
        return report


def _smallest_eigenvalue(fact, max_iter: int, rtol: float) -> tuple[float, bool]:
    """Smallest eigenvalue of the factorized SPD matrix by inverse power iteration."""
    n = fact.n_free
    x = np.ones(n) + 1e-3 * np.sin(np.arange(n))  # deterministic start
    x /= np.linalg.norm(x)
    prev = np.inf
    for _ in range(max_iter):
        y = fact.solve_free(x)
        ny = np.linalg.norm(y)
        x = y / ny
        ev = float(x @ fact.matvec_free(x))
        if abs(ev - prev) <= rtol * abs(ev):
            return ev, True
        prev = ev
    return prev, False
