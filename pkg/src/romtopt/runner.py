"""Run orchestration: configuration, method dispatch, and reference handling.

``run()`` executes one (problem, method) pair and returns a
:class:`~romtopt.report.RunReport`.  Methods:

* ``hdm-mma``      full-order MMA baseline;
* ``rom-tr-res``   reduced-model trust region, residual-norm constraint;
* ``rom-tr-dist``  reduced-model trust region, distance constraint;
* ``rom-fix-res``  fixed-radius ablation (accepts every candidate).

The reference optimum for cutoff counting is the objective after a long
full-order MMA run (2000 iterations by default); it is cached on disk keyed
by a fingerprint of everything that influences it.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .mma import MmaConfig, hdm_mma_driver
from .problems import AssembledProblem, ProblemSpec, assemble_problem, builtin_problem
from .report import (
    DEFAULT_NU,
    IterationRow,
    ReferenceCache,
    RunReport,
    spec_fingerprint,
)
from .trustregion import TrConfig, TrustRegionDriver

__all__ = ["RunConfig", "run", "build_reference", "METHODS"]

METHODS = ("hdm-mma", "rom-tr-res", "rom-tr-dist", "rom-fix-res")


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; every field can come from a key=value file."""

    e0: float = 1.0
    nu_poisson: float = 0.3
    penal: float = 3.0
    rho_l: float = 1e-3
    tau: float = 0.1
    gamma1: float = 0.5
    gamma2: float = 1.0
    eta1: float = 0.1
    eta2: float = 0.75
    delta_max_factor: float = 100.0
    n_max: int = 19
    window: int = 20
    max_inner: int = 50
    nu_cost: float = DEFAULT_NU
    eps: tuple = (0.01, 0.001)
    max_iters: int = 200
    reference_iters: int = 2000
    term_tol: float = 1e-6
    mma_move: float = 0.2
    mma_asy_init: float = 0.5
    mma_asy_incr: float = 1.2
    mma_asy_decr: float = 0.7
    stop_eps: float = 0.0  # stop a TR run once inside this band around J*
    seed: int = 0  # recorded for reproducibility bookkeeping; runs are deterministic
    snapshot_every: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        """Parse a flat ``key = value`` text file (# starts a comment)."""
        values = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
        return cls().with_overrides(values)

    def with_overrides(self, values: dict) -> "RunConfig":
        """Apply string or native overrides, coercing to the field types."""
        kwargs = {}
        by_name = {f.name: f for f in fields(self)}
        for key, val in values.items():
            if key not in by_name:
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(val, str):
                current = getattr(self, key)
                if isinstance(current, bool):
                    val = val.lower() in ("1", "true", "yes", "on")
                elif isinstance(current, int):
                    val = int(val)
                elif isinstance(current, float):
                    val = float(val)
                elif isinstance(current, tuple):
                    val = tuple(float(tok) for tok in val.split(","))
            kwargs[key] = val
        return replace(self, **kwargs)

    def mma_config(self) -> MmaConfig:
        return MmaConfig(
            move=self.mma_move,
            asy_init=self.mma_asy_init,
            asy_incr=self.mma_asy_incr,
            asy_decr=self.mma_asy_decr,
        )

    def tr_config(self, constraint: str, adaptive: bool) -> TrConfig:
        return TrConfig(
            gamma1=self.gamma1,
            gamma2=self.gamma2,
            eta1=self.eta1,
            eta2=self.eta2,
            delta_max_factor=self.delta_max_factor,
            tau=self.tau,
            constraint=constraint,
            adaptive=adaptive,
            term_tol=self.term_tol,
            max_inner=self.max_inner,
            n_max=self.n_max,
            window=self.window,
            mma=self.mma_config(),
        )


def _assemble(spec: ProblemSpec, config: RunConfig) -> AssembledProblem:
    from .hdm import MaterialModel

    return assemble_problem(
        spec,
        e0=config.e0,
        nu=config.nu_poisson,
        material=MaterialModel(rho_l=config.rho_l, p=config.penal),
    )


def reference_fingerprint(spec: ProblemSpec, config: RunConfig) -> str:
    """Hash of the reference-affecting inputs: geometry, material, MMA knobs."""
    payload = {
        "spec": asdict(spec),
        "e0": config.e0,
        "nu_poisson": config.nu_poisson,
        "penal": config.penal,
        "rho_l": config.rho_l,
        "mma": asdict(config.mma_config()),
        "reference_iters": config.reference_iters,
    }
    return spec_fingerprint(payload)


def build_reference(
    spec: ProblemSpec,
    config: RunConfig,
    cache: ReferenceCache | None = None,
    allow_run: bool = True,
) -> dict:
    """Reference objective history from a long full-order MMA run (or cache)."""
    fp = reference_fingerprint(spec, config)
    if cache is not None:
        data = cache.load(spec.name, fp)
        if data is not None:
            return data
    if not allow_run:
        raise FileNotFoundError(
            f"no cached reference for {spec.name} (fingerprint {fp}) and "
            "reference runs are disabled"
        )
    problem = _assemble(spec, config)
    hist = hdm_mma_driver(
        problem.solver,
        problem.objective,
        problem.psi0,
        problem.volume_weights,
        problem.volume_cap,
        max_iters=config.reference_iters,
        mma_config=config.mma_config(),
    )
    data = {"fingerprint": fp, "j_star": hist.j[-1], "j_history": hist.j}
    if cache is not None:
        data = cache.store(spec.name, fp, hist.j)
    return data


def _config_echo(spec: ProblemSpec, config: RunConfig, method: str) -> dict:
    echo = asdict(config)
    echo["eps"] = list(config.eps)
    echo.update(
        {"method": method, "problem": spec.name, "nx": spec.nx, "ny": spec.ny,
         "radius": spec.radius, "volume_fraction": spec.volume_fraction,
         "geometry": spec.describe()}
    )
    return echo


def run(
    spec: ProblemSpec | str,
    method: str,
    config: RunConfig | None = None,
    j_star: float | None = None,
    reference_cache: ReferenceCache | None = None,
    allow_reference_run: bool = True,
    max_iters: int | None = None,
) -> RunReport:
    """Execute one optimization run and return its report.

    ``j_star`` overrides the reference objective; otherwise it is obtained
    through :func:`build_reference` (cached when a cache is supplied).  For
    the baseline ``hdm-mma`` method the reference comes from the run itself
    when it is long enough.
    """
    if isinstance(spec, str):
        spec = builtin_problem(spec)
    config = config or RunConfig()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; available: {', '.join(METHODS)}")
    iters = max_iters if max_iters is not None else config.max_iters

    t0 = time.perf_counter()
    problem = _assemble(spec, config)
    rows: list[IterationRow] = []
    snapshots: list = []
    every = config.snapshot_every

    if method == "hdm-mma":
        def log_mma(k, psi, sol, grad):
            rows.append(
                IterationRow(
                    k=k, j=sol.j, n_hdm=problem.stats.hdm_solves,
                    n_rom=problem.stats.rom_solves,
                )
            )
            if every > 0 and k % every == 0:
                snapshots.append((k, sol.rho.copy()))

        hist = hdm_mma_driver(
            problem.solver,
            problem.objective,
            problem.psi0,
            problem.volume_weights,
            problem.volume_cap,
            max_iters=iters,
            mma_config=config.mma_config(),
            callback=log_mma,
        )
        final_rho = hist.rho
        if j_star is None:
            if iters >= config.reference_iters:
                j_star = hist.j[-1]
            else:
                j_star = build_reference(
                    spec, config, reference_cache, allow_reference_run
                )["j_star"]
    else:
        constraint = "dist" if method == "rom-tr-dist" else "res"
        adaptive = method != "rom-fix-res"
        driver = TrustRegionDriver(
            solver=problem.solver,
            rom=problem.rom,
            objective=problem.objective,
            volume_weights=problem.volume_weights,
            volume_cap=problem.volume_cap,
            config=config.tr_config(constraint, adaptive),
            stats=problem.stats,
        )
        if j_star is None:
            j_star = build_reference(
                spec, config, reference_cache, allow_reference_run
            )["j_star"]
        stop = config.stop_eps if config.stop_eps > 0.0 else 0.0

        def log_tr(rec, psi, sol):
            if every > 0 and (rec.k + 1) % every == 0:
                snapshots.append((rec.k + 1, sol.rho.copy()))

        records = driver.run(
            problem.psi0, max_iters=iters,
            j_stop=j_star if stop > 0.0 else None, stop_rtol=stop,
            callback=log_tr,
        )
        # Row k reports the center after major iteration k; row 0 is the
        # starting point, whose solve is the first HDM evaluation.
        rows.append(IterationRow(k=0, j=records[0].j_center, n_hdm=1, n_rom=0))
        for rec in records:
            j_after = rec.j_candidate if rec.accepted else rec.j_center
            rows.append(
                IterationRow(
                    k=rec.k + 1, j=j_after, delta=rec.delta,
                    rho_ratio=rec.rho_ratio, accepted=int(rec.accepted),
                    theta=rec.theta_candidate, n_hdm=rec.cum_hdm,
                    n_rom=rec.cum_rom,
                )
            )
        final_rho = driver.final_solution.rho

    report = RunReport(
        problem=spec.name,
        method=method,
        rows=rows,
        config=_config_echo(spec, config, method),
        j_star=j_star,
        final_rho=final_rho,
        snapshots=snapshots,
        wall_time=time.perf_counter() - t0,
    )
    return report
