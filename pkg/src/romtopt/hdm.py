"""Full-order elasticity evaluation: stiffness assembly, solve, objective, gradient.

The chain is psi -> rho (filter) -> K(rho) u = f -> J = j(u, rho), with the
gradient assembled by the adjoint method: one elasticity adjoint solve (free
for compliance, where the adjoint equals the displacement) and one filter
adjoint application.  Evaluations are pure functions of (psi, problem); the
solution object records a hash of psi so gradients can refuse stale inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .fem import PatternAssembler, SpdFactorization, StructuredMesh, assemble
from .filtering import HelmholtzFilter
from .stats import RunStats

__all__ = [
    "MaterialModel",
    "Objective",
    "ComplianceObjective",
    "HdmSolution",
    "HdmSolver",
    "StaleSolutionError",
    "psi_digest",
]


class StaleSolutionError(RuntimeError):
    """A solution object was paired with a design it was not computed from."""


def psi_digest(psi: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(psi, dtype=float).tobytes()).hexdigest()


@dataclass(frozen=True)
class MaterialModel:
    """Penalized material interpolation alpha(rho) = rho_l + (1-rho_l) rho^p.

    Strictly increasing on [0, 1] with alpha(1) = 1; the floor rho_l keeps
    the stiffness matrix positive definite in void regions.
    """

    rho_l: float = 1e-3
    p: float = 3.0

    def alpha(self, rho: np.ndarray) -> np.ndarray:
        return self.rho_l + (1.0 - self.rho_l) * rho**self.p

    def dalpha(self, rho: np.ndarray) -> np.ndarray:
        return (1.0 - self.rho_l) * self.p * rho ** (self.p - 1.0)


class Objective:
    """Interface for objectives j(u, rho) with analytic partials.

    Implementations provide the value and both partial derivatives;
    ``is_compliance`` short-circuits the adjoint solve (adjoint == primal)
    and ``is_linear_in_u`` marks objectives whose u-Hessian vanishes.
    """

    is_compliance = False
    is_linear_in_u = False

    def value(self, u: np.ndarray, rho: np.ndarray) -> float:
        raise NotImplementedError

    def du(self, u: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """Partial derivative w.r.t. u, returned as a vector (the transpose)."""
        raise NotImplementedError

    def drho(self, u: np.ndarray, rho: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ComplianceObjective(Objective):
    """Structural compliance j(u, rho) = f^T u."""

    is_compliance = True
    is_linear_in_u = True

    def __init__(self, f: np.ndarray):
        self.f = np.asarray(f, dtype=float)

    def value(self, u, rho):
        return float(self.f @ u)

    def du(self, u, rho):
        return self.f

    def drho(self, u, rho):
        return np.zeros(rho.shape[0])


@dataclass
class HdmSolution:
    """One converged full-order evaluation at a fixed design."""

    psi_hash: str
    rho: np.ndarray  # filtered density, clamped into [rho_l, 1]
    u: np.ndarray  # displacement (zeros at fixed dofs)
    lam: np.ndarray  # adjoint state; identical to u for compliance
    j: float
    clamp_width: float  # largest adjustment applied by the density clamp
    factorization: SpdFactorization = field(repr=False)


class HdmSolver:
    """Evaluates the full-order objective and its adjoint gradient.

    Holds the problem-defining pieces (mesh, unit element stiffness, filter,
    load, Dirichlet set) and a statistics sink.  The solver itself carries no
    per-design state; every call is a pure function of its arguments.
    """

    def __init__(
        self,
        mesh: StructuredMesh,
        k_e: np.ndarray,
        filt: HelmholtzFilter,
        f: np.ndarray,
        fixed_dofs: np.ndarray,
        material: MaterialModel | None = None,
        stats: RunStats | None = None,
    ):
        self.mesh = mesh
        self.k_e = k_e
        self.filter = filt
        self.fixed_dofs = np.asarray(fixed_dofs, dtype=np.int64)
        self.material = material or MaterialModel()
        self.stats = stats or RunStats()
        f = np.asarray(f, dtype=float).copy()
        f[self.fixed_dofs] = 0.0  # loads on constrained dofs go into reactions
        self.f = f
        free_mask = np.ones(mesh.n_dofs, dtype=bool)
        free_mask[self.fixed_dofs] = False
        self.free_mask = free_mask
        self._assembler = PatternAssembler(mesh, k_e, self.fixed_dofs)

    def filtered_density(self, psi: np.ndarray) -> tuple[np.ndarray, float]:
        """Filter and clamp the design into the admissible density box.

        The clamp guards alpha() against round-off excursions outside
        [rho_l, 1]; its largest adjustment is returned for logging.
        """
        rho_raw = self.filter.apply(psi).rho
        self.stats.filter_solves += 1
        rho = np.clip(rho_raw, self.material.rho_l, 1.0)
        clamp_width = float(np.max(np.abs(rho - rho_raw), initial=0.0))
        return rho, clamp_width

    def _check_density(self, rho: np.ndarray) -> None:
        lo, hi = self.material.rho_l, 1.0
        if rho.min() < lo - 1e-12 or rho.max() > hi + 1e-12:
            raise ValueError(
                f"density out of admissible range [{lo}, {hi}]: "
                f"min={rho.min()}, max={rho.max()}"
            )

    def assemble_stiffness(self, rho: np.ndarray):
        """Global stiffness K(rho) = sum_e alpha(rho_e) P_e K_e P_e^T (sparse)."""
        rho = np.asarray(rho, dtype=float)
        self._check_density(rho)
        return assemble(self.mesh, self.k_e, self.material.alpha(rho), "vector")

    def solve(self, psi: np.ndarray, objective: Objective) -> HdmSolution:
        """Solve the elasticity system at ``psi`` and evaluate the objective.

        Counts one full-order solve (plus one adjoint solve for
        non-compliance objectives) in the statistics sink.
        """
        psi = np.asarray(psi, dtype=float)
        rho, clamp_width = self.filtered_density(psi)
        self._check_density(rho)
        fact = self._assembler.factorize(self.material.alpha(rho))
        self.stats.factorizations += 1
        u = fact.solve(self.f)
        self.stats.hdm_solves += 1
        if objective.is_compliance:
            lam = u
        else:
            lam = fact.solve(objective.du(u, rho))
            self.stats.hdm_adjoint_solves += 1
        j = objective.value(u, rho)
        return HdmSolution(
            psi_hash=psi_digest(psi),
            rho=rho,
            u=u,
            lam=lam,
            j=j,
            clamp_width=clamp_width,
            factorization=fact,
        )

    def gradient(
        self, psi: np.ndarray, solution: HdmSolution, objective: Objective
    ) -> np.ndarray:
        """Adjoint gradient of J at ``psi``; requires a matching solution."""
        psi = np.asarray(psi, dtype=float)
        if psi_digest(psi) != solution.psi_hash:
            raise StaleSolutionError(
                "solution was computed at a different design than psi"
            )
        s = self.element_sensitivity(solution.rho, solution.u, solution.lam, objective)
        return self.filter.apply_adjoint(s)

    def element_sensitivity(
        self,
        rho: np.ndarray,
        u: np.ndarray,
        lam: np.ndarray,
        objective: Objective,
    ) -> np.ndarray:
        """Per-element inner sensitivity dj/drho_e - alpha'(rho_e) u_e^T K_e lam_e."""
        u_loc = u[self.mesh.elem_dofs]
        lam_loc = lam[self.mesh.elem_dofs]
        contraction = ((u_loc @ self.k_e) * lam_loc).sum(axis=1)
        return objective.drho(u, rho) - self.material.dalpha(rho) * contraction

    def apply_stiffness(self, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Matrix-free K(rho) @ v by element scatter, zeroed at fixed dofs."""
        contrib = (v[self.mesh.elem_dofs] @ self.k_e.T) * self.material.alpha(rho)[:, None]
        out = np.bincount(
            self.mesh.elem_dofs.ravel(),
            weights=contrib.ravel(),
            minlength=self.mesh.n_dofs,
        )
        out[~self.free_mask] = 0.0
        return out
