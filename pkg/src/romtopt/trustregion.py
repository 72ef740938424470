"""Error-aware trust-region driver with reduced-model subproblems.

The driver alternates between (i) one full-order solve at the current
center, which refreshes the snapshot window and reduced basis, (ii) an inner
MMA sweep on the reduced objective that stops when the trust-region
constraint is violated, and (iii) the usual accept/reject and radius logic
driven by the actual-to-predicted reduction ratio.  Two trust-region
constraints are supported: the full-space residual norm of the reduced
solution ('res', the error-aware choice) and plain design-space distance
('dist').  Disabling adaptivity yields the fixed-radius ablation that
accepts every candidate.

The driver is a sequential state machine; the evaluations it invokes are
pure.  Identical configuration yields an identical iteration log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hdm import HdmSolver, Objective, psi_digest
from .mma import MmaConfig, MmaOptimizer
from .rom import ReducedBasis, RomModel, SnapshotWindow
from .stats import RunStats

__all__ = [
    "TrConfig",
    "TrIterationRecord",
    "TrustRegionDriver",
    "initial_radius",
    "project_feasible",
    "termination_measure",
    "criticality_chi",
]

PREDICTED_DECREASE_FLOOR = 1e-14


def project_feasible(
    y: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    w: np.ndarray,
    cap: float,
    max_iter: int = 200,
) -> np.ndarray:
    """Euclidean projection onto {lower <= x <= upper, w @ x <= cap}.

    Bisection on the halfspace multiplier with inner box clipping; the
    multiplier equation is piecewise linear and monotone, so after the
    bracket collapses the active set is polished exactly.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError("volume weights must be positive")
    x = np.clip(y, lower, upper)
    if w @ x <= cap:
        return x

    def clipped(theta: float) -> np.ndarray:
        return np.clip(y - theta * w, lower, upper)

    theta_lo, theta_hi = 0.0, 1.0
    while w @ clipped(theta_hi) > cap:
        theta_lo = theta_hi
        theta_hi *= 2.0
        if theta_hi > 1e30:
            raise RuntimeError("projection multiplier bracket failed")
    for _ in range(max_iter):
        theta = 0.5 * (theta_lo + theta_hi)
        if w @ clipped(theta) > cap:
            theta_lo = theta
        else:
            theta_hi = theta
    # Exact polish on the active set at the final bracket.
    x = clipped(theta_hi)
    free = (x > lower + 1e-300) & (x < upper - 1e-300)
    denom = w[free] @ w[free]
    if denom > 0.0:
        fixed_sum = w[~free] @ x[~free]
        theta_star = (w[free] @ y[free] + fixed_sum - cap) / denom
        x_polished = clipped(theta_star)
        if w @ x_polished <= cap + 1e-12 * max(abs(cap), 1.0):
            x = x_polished
    return x


def termination_measure(
    psi: np.ndarray,
    grad: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    w: np.ndarray,
    cap: float,
) -> float:
    """First-order criticality proxy ||psi - P_C(psi - grad)||_2."""
    return float(
        np.linalg.norm(psi - project_feasible(psi - grad, lower, upper, w, cap))
    )


def criticality_chi(
    psi: np.ndarray,
    grad: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    w: np.ndarray,
    cap: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> float:
    """Criticality measure: |min <grad, d> over psi + d feasible, ||d|| <= 1|.

    Solved through the 1D dual of the unit-ball constraint: for a multiplier
    ``mu`` the inner problem is a Euclidean projection of ``-grad/(2 mu)``
    onto the shifted feasible polytope, and ``||d(mu)||`` is monotone in
    ``mu``, so bisection applies.  Intended as a diagnostic on small and
    medium problems.
    """
    psi = np.asarray(psi, dtype=float)
    grad = np.asarray(grad, dtype=float)
    d_lo = lower - psi
    d_hi = upper - psi
    slack = cap - w @ psi

    def proj(z: np.ndarray) -> np.ndarray:
        return project_feasible(z, d_lo, d_hi, w, slack)

    gnorm = np.linalg.norm(grad)
    if gnorm == 0.0:
        return 0.0
    # Ball inactive? Probe with a far target along -grad: the projection
    # approaches the minimum-norm linear minimizer over the polytope.
    d_far = proj(-grad * (1e12 / gnorm))
    if np.linalg.norm(d_far) <= 1.0 + 1e-9:
        return float(abs(grad @ d_far))
    mu_lo = gnorm * 1e-14
    mu_hi = gnorm
    while np.linalg.norm(proj(-grad / (2.0 * mu_hi))) > 1.0:
        mu_hi *= 4.0
        if mu_hi > 1e30 * gnorm:
            raise RuntimeError("criticality ball multiplier bracket failed")
    d = proj(-grad / (2.0 * mu_hi))
    for it in range(max_iter):
        mu = np.sqrt(mu_lo * mu_hi) if mu_lo > 0 else 0.5 * (mu_lo + mu_hi)
        d = proj(-grad / (2.0 * mu))
        nd = np.linalg.norm(d)
        if abs(nd - 1.0) <= tol:
            break
        if nd > 1.0:
            mu_lo = mu
        else:
            mu_hi = mu
    else:
        raise RuntimeError("criticality bisection did not converge")
    return float(abs(grad @ d))


def initial_radius(kind: str, psi0: np.ndarray, f: np.ndarray, tau: float) -> float:
    """Scaled initial radius: tau * ||f|| for 'res' (the residual of the zero
    state is -f), tau * ||psi0|| for 'dist'."""
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if kind == "res":
        return float(tau * np.linalg.norm(f))
    if kind == "dist":
        return float(tau * np.linalg.norm(psi0))
    raise ValueError(f"unknown trust-region constraint kind {kind!r}")


@dataclass(frozen=True)
class TrConfig:
    """Trust-region constants and switches.

    The defaults mirror the usual practical choices; ``gamma2 = 1`` leaves
    the radius unchanged on merely successful steps.  ``adaptive=False``
    gives the fixed-radius variant that accepts every candidate.
    """

    gamma1: float = 0.5
    gamma2: float = 1.0
    eta1: float = 0.1
    eta2: float = 0.75
    delta_max_factor: float = 100.0  # Delta_max = factor * Delta_0
    tau: float = 0.1
    constraint: str = "res"  # 'res' | 'dist'
    adaptive: bool = True
    term_tol: float = 1e-6
    max_inner: int = 50  # MMA steps per subproblem
    n_max: int = 19  # POD truncation cap; basis size <= 2*(n_max+1)
    window: int = 20  # snapshot window length
    assumption_check: bool = True  # assert model/gradient exactness at centers
    assumption_value_rtol: float = 1e-8
    assumption_grad_rtol: float = 1e-6
    center_residual_rtol: float = 1e-9
    fcd_kappa: float = 1e-4
    fcd_kappa_prime: float = 1.0
    chi_max_elems: int = 2500  # criticality diagnostic cap; above it chi is skipped
    probe_on_stall: bool = True  # sample the violating first step on stalls
    mma: MmaConfig = field(default_factory=MmaConfig)

    def __post_init__(self):
        if not 0.0 < self.gamma1 <= self.gamma2 <= 1.0:
            raise ValueError("need 0 < gamma1 <= gamma2 <= 1")
        if not 0.0 < self.eta1 < self.eta2 < 1.0:
            raise ValueError("need 0 < eta1 < eta2 < 1")
        if self.constraint not in ("res", "dist"):
            raise ValueError(f"unknown constraint kind {self.constraint!r}")


@dataclass
class TrIterationRecord:
    """Log entry for one major iteration."""

    k: int
    delta: float
    j_center: float
    j_model_candidate: float
    rho_ratio: float
    accepted: bool
    theta_candidate: float
    basis_size: int
    inner_steps: int
    rom_solves_iter: int
    cum_hdm: int
    cum_rom: int
    term_measure: float
    chi: float = float("nan")
    fcd_lhs: float = float("nan")  # achieved model decrease
    fcd_rhs: float = float("nan")  # fraction-of-Cauchy-decrease target
    j_candidate: float = float("nan")  # full-order value at the candidate


@dataclass
class SubproblemResult:
    """Outcome of one inner sweep: candidate point and bookkeeping.

    ``first_iterate`` keeps the first inner step even when it left the
    trust region immediately; the driver may sample it to unblock a stalled
    radius (see :class:`TrustRegionDriver`).
    """

    candidate: np.ndarray
    model_value: float
    theta: float
    steps: int = 0
    rom_solves: int = 0
    curvature: float = 0.0
    first_iterate: np.ndarray | None = None


class AssumptionViolation(AssertionError):
    """The reduced model failed to reproduce the full model at a center."""


class TrustRegionDriver:
    """Runs the reduced-model trust-region loop on one assembled problem."""

    def __init__(
        self,
        solver: HdmSolver,
        rom: RomModel,
        objective: Objective,
        volume_weights: np.ndarray,
        volume_cap: float,
        config: TrConfig,
        stats: RunStats | None = None,
    ):
        self.solver = solver
        self.rom = rom
        self.objective = objective
        self.w = np.asarray(volume_weights, dtype=float)
        self.cap = float(volume_cap)
        self.cfg = config
        self.stats = stats or solver.stats
        n = solver.mesh.n_elems
        self.lower = np.zeros(n)
        self.upper = np.ones(n)

    # -- pieces -----------------------------------------------------------

    def tr_constraint(
        self,
        psi: np.ndarray,
        center_psi: np.ndarray,
        residual_norm: float | None,
    ) -> float:
        """Trust-region constraint value at ``psi`` (exponent 1 in practice)."""
        if self.cfg.constraint == "dist":
            return float(np.linalg.norm(psi - center_psi))
        if residual_norm is None:
            raise ValueError("residual-based constraint needs a reduced solve")
        return float(residual_norm)

    def _evaluate_model(self, basis: ReducedBasis, psi: np.ndarray):
        """Reduced objective, gradient and residual at a subproblem iterate."""
        rho, _ = self.solver.filtered_density(psi)
        sol = self.rom.solve(basis, rho, self.objective, compute_gradient=True)
        return sol

    def solve_subproblem(
        self,
        basis: ReducedBasis,
        psi_k: np.ndarray,
        delta: float,
        j_center: float,
        grad_center: np.ndarray,
    ) -> "SubproblemResult":
        """Inner MMA sweep on the reduced objective, stopped at the trust boundary.

        Runs plain MMA on the reduced objective over the feasible set (no
        explicit trust-region constraint) and returns the last iterate whose
        constraint value stayed within the radius, or the center itself if
        the very first step left the region.  The largest curvature quotient
        observed along the sweep feeds the Cauchy-decrease diagnostic.
        """
        opt = MmaOptimizer(self.lower, self.upper, self.w, self.cap, self.cfg.mma)
        x, j_m, g_m = psi_k, j_center, grad_center
        res = SubproblemResult(candidate=psi_k, model_value=j_center, theta=0.0)
        # For the distance constraint, cap each variable's move at
        # delta/sqrt(N) so every single step lands inside the region; the
        # violation check then only catches accumulated drift.
        move_cap = (
            delta / np.sqrt(len(psi_k)) if self.cfg.constraint == "dist" else None
        )
        for i in range(self.cfg.max_inner):
            x_new = opt.step(x, j_m, g_m, move_cap=move_cap)
            sol = self._evaluate_model(basis, x_new)
            res.rom_solves += 1
            if i == 0:
                res.first_iterate = x_new
            dx = x_new - x
            dx_norm = np.linalg.norm(dx)
            if sol.grad is not None and dx_norm > 0.0:
                res.curvature = max(
                    res.curvature, abs((sol.grad - g_m) @ dx) / dx_norm**2
                )
            theta = self.tr_constraint(x_new, psi_k, sol.residual_norm)
            if theta > delta:
                break
            res.steps += 1
            # MMA descends its own approximation, which can transiently
            # raise the model; keep the best in-region model value seen so
            # the returned candidate never predicts an increase.
            if sol.j < res.model_value:
                res.candidate, res.model_value, res.theta = x_new, sol.j, theta
            x, j_m, g_m = x_new, sol.j, sol.grad
        return res

    def _check_center_consistency(
        self, basis: ReducedBasis, psi, rho, j_hdm, grad_hdm
    ) -> tuple[float, float]:
        """Verify the reduced model reproduces value/gradient/residual at a center.

        This exactness is the hinge of the convergence argument, so by
        default it is enforced as a runtime assertion at every center.
        """
        sol = self.rom.solve(basis, rho, self.objective, compute_gradient=True)
        cfg = self.cfg
        f_norm = np.linalg.norm(self.solver.f)
        if cfg.assumption_check:
            if abs(sol.j - j_hdm) > cfg.assumption_value_rtol * max(abs(j_hdm), 1e-300):
                raise AssumptionViolation(
                    f"model value mismatch at center: |{sol.j} - {j_hdm}|"
                )
            gerr = np.linalg.norm(sol.grad - grad_hdm)
            if gerr > cfg.assumption_grad_rtol * max(np.linalg.norm(grad_hdm), 1e-300):
                raise AssumptionViolation(
                    f"model gradient mismatch at center: {gerr}"
                )
            if sol.residual_norm > cfg.center_residual_rtol * f_norm:
                raise AssumptionViolation(
                    f"center residual {sol.residual_norm} exceeds "
                    f"{cfg.center_residual_rtol} * ||f||"
                )
        return sol.j, sol.residual_norm

    # -- main loop --------------------------------------------------------

    def run(
        self,
        psi0: np.ndarray,
        max_iters: int,
        j_stop: float | None = None,
        stop_rtol: float = 0.0,
        callback=None,
    ) -> list[TrIterationRecord]:
        """Run up to ``max_iters`` major iterations from ``psi0``.

        Stops early when the projected-gradient measure at an accepted
        center drops below the configured tolerance, or (if ``j_stop`` is
        given) once |J - j_stop| <= stop_rtol * |j_stop|.  Returns the
        per-iteration records; the record at index k describes major
        iteration k.
        """
        cfg = self.cfg
        psi = project_feasible(np.asarray(psi0, dtype=float), self.lower, self.upper,
                               self.w, self.cap)
        sol = self.solver.solve(psi, self.objective)
        grad = self.solver.gradient(psi, sol, self.objective)
        delta = initial_radius(cfg.constraint, psi, self.solver.f, cfg.tau)
        delta_max = cfg.delta_max_factor * delta
        window = SnapshotWindow(cfg.window)
        records: list[TrIterationRecord] = []

        for k in range(max_iters):
            # POD truncation: one less than the window occupancy, capped.
            # With one snapshot appended per major iteration this is the
            # min(k-1, n_max) schedule; window extras from rejected or
            # probed candidates advance it the same way a repeated center
            # would.
            n_k = min(max(len(window) - 1, 0), cfg.n_max)
            basis = self.rom.build_basis(
                window, sol.u, sol.lam, self.objective.is_compliance, n_k,
                center_rho=sol.rho,
            )
            window.append(sol.u, sol.lam, key=sol.psi_hash)
            rom_before = self.stats.rom_solves
            self._check_center_consistency(basis, psi, sol.rho, sol.j, grad)

            sub = self.solve_subproblem(basis, psi, delta, sol.j, grad)
            predicted = sol.j - sub.model_value
            rec = TrIterationRecord(
                k=k,
                delta=delta,
                j_center=sol.j,
                j_model_candidate=sub.model_value,
                rho_ratio=float("nan"),
                accepted=False,
                theta_candidate=sub.theta,
                basis_size=basis.size,
                inner_steps=sub.steps,
                rom_solves_iter=0,
                cum_hdm=0,
                cum_rom=0,
                term_measure=termination_measure(
                    psi, grad, self.lower, self.upper, self.w, self.cap
                ),
            )
            if self.solver.mesh.n_elems <= cfg.chi_max_elems:
                rec.chi = criticality_chi(
                    psi, grad, self.lower, self.upper, self.w, self.cap
                )
                beta_k = 1.0 + sub.curvature
                rec.fcd_rhs = (
                    cfg.fcd_kappa
                    * rec.chi
                    * min(rec.chi / beta_k, cfg.fcd_kappa_prime * delta, 1.0)
                )
            rec.fcd_lhs = predicted

            moved = not np.array_equal(sub.candidate, psi)
            if not moved or predicted < PREDICTED_DECREASE_FLOOR:
                # Nothing usable came back from the subproblem: shrink the
                # radius, and spend this iteration's full-order solve on the
                # violating first step instead.  Its snapshot enters the
                # window, so the next basis represents that state exactly
                # and the stalled step becomes admissible.
                if cfg.adaptive:
                    delta = cfg.gamma1 * delta
                if (
                    cfg.probe_on_stall
                    and sub.first_iterate is not None
                    and not np.array_equal(sub.first_iterate, psi)
                    and psi_digest(sub.first_iterate) not in window
                ):
                    probe_sol = self.solver.solve(sub.first_iterate, self.objective)
                    window.append(probe_sol.u, probe_sol.lam, key=probe_sol.psi_hash)
                    rec.j_candidate = probe_sol.j
            else:
                sol_hat = self.solver.solve(sub.candidate, self.objective)
                grad_hat = self.solver.gradient(sub.candidate, sol_hat, self.objective)
                rec.j_candidate = sol_hat.j
                ratio = (sol.j - sol_hat.j) / predicted
                rec.rho_ratio = float(ratio)
                if cfg.adaptive:
                    accept = ratio >= cfg.eta1
                    if ratio < cfg.eta1:
                        delta = cfg.gamma1 * delta
                    elif ratio >= cfg.eta2:
                        delta = min(2.0 * delta, delta_max)
                else:
                    accept = True
                rec.accepted = bool(accept)
                if accept:
                    psi, sol, grad = sub.candidate, sol_hat, grad_hat
                else:
                    # paid-for information from the ratio evaluation
                    window.append(sol_hat.u, sol_hat.lam, key=sol_hat.psi_hash)

            rec.rom_solves_iter = self.stats.rom_solves - rom_before
            rec.cum_hdm = self.stats.hdm_solves
            rec.cum_rom = self.stats.rom_solves
            records.append(rec)
            if callback is not None:
                callback(rec, psi, sol)
            if rec.accepted:
                tm = termination_measure(
                    psi, grad, self.lower, self.upper, self.w, self.cap
                )
                if tm <= cfg.term_tol:
                    break
            if (
                j_stop is not None
                and abs(sol.j - j_stop) <= stop_rtol * abs(j_stop)
            ):
                break
        self.final_psi = psi
        self.final_solution = sol
        return records
