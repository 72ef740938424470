"""Method of Moving Asymptotes for box constraints plus one linear volume bound.

Each step builds the separable rational approximation of the objective
around the current point, then solves the subproblem exactly: given the
volume multiplier, every variable has a closed-form minimizer, and the
multiplier itself is found by bisection on the volume constraint.  This is
exact for the single-linear-constraint problems treated here and avoids a
general interior-point subsolver.

Used both as the standalone full-order optimizer (one full solve + gradient
per major iteration) and as the trust-region subproblem engine driven by the
reduced model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MmaConfig", "MmaOptimizer", "hdm_mma_driver", "MmaHistory"]


@dataclass(frozen=True)
class MmaConfig:
    """Standard moving-asymptote parameters (Svanberg-style defaults)."""

    asy_init: float = 0.5  # initial asymptote offset, fraction of range
    asy_incr: float = 1.2  # asymptote expansion on oscillation-free steps
    asy_decr: float = 0.7  # asymptote contraction on sign flips
    asy_min_frac: float = 0.01  # closest asymptote distance, fraction of range
    asy_max_frac: float = 10.0  # farthest asymptote distance, fraction of range
    move: float = 0.2  # per-step move limit, fraction of range
    albefa: float = 0.1  # bound offset from asymptotes
    raa0: float = 1e-5  # curvature floor keeping the approximation strictly convex
    bisect_rtol: float = 1e-12  # volume activity tolerance, relative
    bisect_max_iter: int = 200


class MmaOptimizer:
    """Sequential MMA state for min F(x) over [lower, upper] with w @ x <= V.

    Mutates its asymptote memory on every :meth:`step`; a fresh instance
    gives a deterministic replay.
    """

    def __init__(
        self,
        lower: np.ndarray,
        upper: np.ndarray,
        volume_weights: np.ndarray,
        volume_cap: float,
        config: MmaConfig | None = None,
    ):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.lower >= self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")
        self.w = np.asarray(volume_weights, dtype=float)
        if np.any(self.w <= 0.0):
            raise ValueError("volume weights must be positive")
        self.volume_cap = float(volume_cap)
        self.cfg = config or MmaConfig()
        self.n = self.lower.shape[0]
        self.range = self.upper - self.lower
        self.it = 0
        self.xold1: np.ndarray | None = None
        self.xold2: np.ndarray | None = None
        self.low: np.ndarray | None = None
        self.upp: np.ndarray | None = None

    def _update_asymptotes(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        if self.it <= 2 or self.xold1 is None or self.xold2 is None:
            low = x - cfg.asy_init * self.range
            upp = x + cfg.asy_init * self.range
        else:
            sign = (x - self.xold1) * (self.xold1 - self.xold2)
            factor = np.ones(self.n)
            factor[sign > 0] = cfg.asy_incr
            factor[sign < 0] = cfg.asy_decr
            low = x - factor * (self.xold1 - self.low)
            upp = x + factor * (self.upp - self.xold1)
        low = np.clip(low, x - cfg.asy_max_frac * self.range, x - cfg.asy_min_frac * self.range)
        upp = np.clip(upp, x + cfg.asy_min_frac * self.range, x + cfg.asy_max_frac * self.range)
        return low, upp

    def step(
        self, x: np.ndarray, f_val: float, grad: np.ndarray,
        move_cap: float | None = None,
    ) -> np.ndarray:
        """One MMA update from the feasible point ``x`` with gradient ``grad``.

        Returns the exact minimizer of the convex separable approximation
        over the move-limited box intersected with the volume constraint.
        ``move_cap`` tightens the per-variable move further (used to keep
        steps inside a distance-type trust region).  ``f_val`` is recorded
        for interface completeness; the rational approximation depends only
        on the gradient.
        """
        del f_val
        x = np.asarray(x, dtype=float)
        grad = np.asarray(grad, dtype=float)
        if not np.all(np.isfinite(grad)):
            raise ValueError("gradient must be finite")
        if np.any(x < self.lower - 1e-12) or np.any(x > self.upper + 1e-12):
            raise ValueError("iterate outside box bounds")
        if self.w @ x > self.volume_cap * (1.0 + 1e-9) + 1e-12:
            raise ValueError("iterate violates the volume constraint")
        cfg = self.cfg
        self.it += 1
        low, upp = self._update_asymptotes(x)

        move = cfg.move * self.range
        if move_cap is not None:
            move = np.minimum(move, move_cap)
        alpha = np.maximum.reduce(
            [self.lower, low + cfg.albefa * (x - low), x - move]
        )
        beta = np.minimum.reduce(
            [self.upper, upp - cfg.albefa * (upp - x), x + move]
        )

        gp = np.maximum(grad, 0.0)
        gm = np.maximum(-grad, 0.0)
        curv = cfg.raa0 / self.range
        p0 = (upp - x) ** 2 * (1.001 * gp + 0.001 * gm + curv)
        q0 = (x - low) ** 2 * (0.001 * gp + 1.001 * gm + curv)
        # The volume constraint has positive slope, so its rational
        # approximation contributes only to the p-side.
        p1 = (upp - x) ** 2 * self.w

        def primal(lam: float) -> np.ndarray:
            sp_ = np.sqrt(p0 + lam * p1)
            sq = np.sqrt(q0)
            return np.clip((low * sp_ + upp * sq) / (sp_ + sq), alpha, beta)

        x0 = primal(0.0)
        vol_scale = max(abs(self.volume_cap), 1.0)
        if self.w @ x0 <= self.volume_cap + cfg.bisect_rtol * vol_scale:
            x_new = x0
        else:
            # w @ primal(lam) is continuous and non-increasing in lam, and
            # w @ alpha <= V since alpha <= x and x is feasible, so a root
            # always brackets.
            lam_lo, lam_hi = 0.0, 1.0
            while self.w @ primal(lam_hi) > self.volume_cap:
                lam_lo = lam_hi
                lam_hi *= 10.0
                if lam_hi > 1e40:
                    raise RuntimeError("volume multiplier bracket failed")
            x_new = primal(lam_hi)
            for _ in range(cfg.bisect_max_iter):
                lam_mid = 0.5 * (lam_lo + lam_hi)
                x_mid = primal(lam_mid)
                if self.w @ x_mid > self.volume_cap:
                    lam_lo = lam_mid
                else:
                    lam_hi = lam_mid
                    x_new = x_mid
                if abs(self.w @ x_new - self.volume_cap) <= cfg.bisect_rtol * vol_scale:
                    break

        self.xold2 = self.xold1
        self.xold1 = x.copy()
        self.low, self.upp = low, upp
        return x_new


@dataclass
class MmaHistory:
    """Per-iteration log of a full-order MMA run."""

    j: list = field(default_factory=list)  # objective at each center, j[k] = J(psi_k)
    term: list = field(default_factory=list)  # projected-gradient measure per center
    psi: np.ndarray | None = None  # final design
    rho: np.ndarray | None = None  # final filtered density


def hdm_mma_driver(
    solver,
    objective,
    psi0: np.ndarray,
    volume_weights: np.ndarray,
    volume_cap: float,
    max_iters: int,
    tol: float = 0.0,
    mma_config: MmaConfig | None = None,
    callback=None,
) -> MmaHistory:
    """Full-order MMA optimization: one HDM solve + gradient per iteration.

    Runs ``max_iters`` major iterations (or stops early once the
    projected-gradient termination measure drops below ``tol``), logging the
    objective at every center.  Entry ``j[k]`` is the objective at iterate k,
    so a run with ``max_iters=N`` produces N+1 entries and the reference
    objective of a length-N run is ``j[N]``.
    """
    from .trustregion import termination_measure  # local import avoids a cycle

    n = psi0.shape[0]
    opt = MmaOptimizer(
        lower=np.zeros(n),
        upper=np.ones(n),
        volume_weights=volume_weights,
        volume_cap=volume_cap,
        config=mma_config,
    )
    hist = MmaHistory()
    psi = np.asarray(psi0, dtype=float).copy()
    for k in range(max_iters + 1):
        sol = solver.solve(psi, objective)
        grad = solver.gradient(psi, sol, objective)
        tm = termination_measure(psi, grad, np.zeros(n), np.ones(n),
                                 volume_weights, volume_cap)
        hist.j.append(sol.j)
        hist.term.append(tm)
        if callback is not None:
            callback(k, psi, sol, grad)
        if k == max_iters or (tol > 0.0 and tm <= tol):
            hist.psi = psi
            hist.rho = sol.rho
            break
        psi = opt.step(psi, sol.j, grad)
    return hist
