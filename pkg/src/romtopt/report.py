"""Run reports, cost accounting, convergence tables, and density export.

Cost is measured in equivalent full-order solves, ``C = N_HDM + nu * N_ROM``
with ``nu`` the reduced-to-full solve-time ratio (0.01 by default).  Cutoff
statistics count the solves spent until the objective first enters a
relative band around the reference optimum.  The canonical CSV outputs carry
no wall-clock fields, so identical configurations reproduce byte-identical
files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "IterationRow",
    "RunReport",
    "CutoffStats",
    "cost",
    "report_table",
    "export_density",
    "load_density_csv",
    "spec_fingerprint",
    "ReferenceCache",
]

DEFAULT_NU = 0.01


def cost(n_hdm: int, n_rom: int, nu: float = DEFAULT_NU) -> float:
    """Equivalent full-order solves: N_HDM + nu * N_ROM."""
    return n_hdm + nu * n_rom


@dataclass
class IterationRow:
    """One line of the canonical run log."""

    k: int
    j: float
    delta: float = float("nan")
    rho_ratio: float = float("nan")
    accepted: int = 1
    theta: float = float("nan")
    n_hdm: int = 0
    n_rom: int = 0

    FIELDS = ("k", "j", "delta", "rho_ratio", "accepted", "theta", "n_hdm", "n_rom")


@dataclass
class CutoffStats:
    """Solve counts at the first iterate inside the epsilon band."""

    eps: float
    reached: bool
    iteration: int | None
    n_hdm: int | None
    n_rom: int | None
    c_eps: float | None


@dataclass
class RunReport:
    """Everything one optimization run produced."""

    problem: str
    method: str
    rows: list[IterationRow]
    config: dict
    j_star: float | None = None
    final_rho: np.ndarray | None = field(default=None, repr=False)
    snapshots: list = field(default_factory=list, repr=False)  # (k, rho) pairs
    wall_time: float = 0.0

    @property
    def final_objective(self) -> float:
        return self.rows[-1].j

    @property
    def n_hdm(self) -> int:
        return self.rows[-1].n_hdm

    @property
    def n_rom(self) -> int:
        return self.rows[-1].n_rom

    def cutoff(self, eps: float, j_star: float | None = None) -> CutoffStats:
        """First iterate with |J - J*| < eps * |J*| and the cost spent there."""
        ref = self.j_star if j_star is None else j_star
        if ref is None:
            raise ValueError("no reference objective available for cutoff counting")
        nu = self.config.get("nu_cost", DEFAULT_NU)
        for row in self.rows:
            if abs(row.j - ref) < eps * abs(ref):
                return CutoffStats(
                    eps=eps,
                    reached=True,
                    iteration=row.k,
                    n_hdm=row.n_hdm,
                    n_rom=row.n_rom,
                    c_eps=cost(row.n_hdm, row.n_rom, nu),
                )
        return CutoffStats(eps=eps, reached=False, iteration=None, n_hdm=None,
                           n_rom=None, c_eps=None)

    def to_csv(self) -> str:
        """Canonical per-iteration CSV (no wall-clock content)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(IterationRow.FIELDS)
        for r in self.rows:
            writer.writerow(
                [r.k, repr(float(r.j)), repr(float(r.delta)),
                 repr(float(r.rho_ratio)), r.accepted, repr(float(r.theta)),
                 r.n_hdm, r.n_rom]
            )
        return buf.getvalue()

    def save(self, out_dir: str | Path, snapshot_rho: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.csv").write_text(self.to_csv())
        meta = {
            "problem": self.problem,
            "method": self.method,
            "config": self.config,
            "j_star": self.j_star,
            "final_objective": self.final_objective,
            "n_hdm": self.n_hdm,
            "n_rom": self.n_rom,
            "wall_time_s": self.wall_time,
        }
        (out / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        nx = self.config.get("nx")
        ny = self.config.get("ny")
        if snapshot_rho and nx and ny:
            if self.final_rho is not None:
                export_density(self.final_rho, nx, ny, out / "density_final.pgm", "pgm")
                export_density(self.final_rho, nx, ny, out / "density_final.csv", "csv")
            for k, rho in self.snapshots:
                export_density(rho, nx, ny, out / f"density_{k:04d}.pgm", "pgm")


def report_table(
    reports: list[RunReport],
    epsilons: list[float],
    nu: float = DEFAULT_NU,
    j_star: float | None = None,
) -> tuple[str, str]:
    """Convergence table over runs and tolerances.

    Returns (pretty text, CSV) with columns: method, epsilon, tau, final
    objective, full and reduced solve counts at cutoff, and the blended
    cost.
    """
    if not reports:
        raise ValueError("need at least one report")
    header = ["method", "eps", "tau", "final_objective", "n_hdm", "n_rom", "cost"]
    rows = []
    for rep in reports:
        tau = rep.config.get("tau", "")
        for eps in epsilons:
            c = rep.cutoff(eps, j_star)
            rows.append(
                [
                    rep.method,
                    f"{eps:g}",
                    f"{tau}",
                    f"{rep.final_objective:.6g}",
                    "-" if c.n_hdm is None else str(c.n_hdm),
                    "-" if c.n_rom is None else str(c.n_rom),
                    "-" if c.n_hdm is None else f"{cost(c.n_hdm, c.n_rom, nu):.4g}",
                ]
            )
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    text = "\n".join(lines) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return text, buf.getvalue()


def export_density(
    rho: np.ndarray, nx: int, ny: int, path: str | Path, fmt: str = "pgm"
) -> None:
    """Write a density field to disk as 'pgm', 'vtk' or 'csv'.

    PGM renders material dark (pixel = round(255*(1-rho))), rows written
    top to bottom.  VTK writes legacy ASCII structured points with one
    CELL_DATA scalar.  CSV stores the row-major values and round-trips
    exactly.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (nx * ny,):
        raise ValueError(f"expected {nx * ny} densities, got shape {rho.shape}")
    grid = rho.reshape(ny, nx)  # row j holds elements j*nx .. j*nx+nx-1
    path = Path(path)
    if fmt == "pgm":
        pixels = np.rint(255.0 * (1.0 - grid)).clip(0, 255).astype(int)
        lines = [f"P2", f"{nx} {ny}", "255"]
        for j in range(ny - 1, -1, -1):  # top row first
            lines.append(" ".join(str(v) for v in pixels[j]))
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "vtk":
        lines = [
            "# vtk DataFile Version 3.0",
            "density field",
            "ASCII",
            "DATASET STRUCTURED_POINTS",
            f"DIMENSIONS {nx + 1} {ny + 1} 1",
            "ORIGIN 0 0 0",
            "SPACING 1 1 1",
            f"CELL_DATA {nx * ny}",
            "SCALARS density double 1",
            "LOOKUP_TABLE default",
        ]
        lines += [repr(float(v)) for v in rho]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "csv":
        lines = [",".join(repr(float(v)) for v in grid[j]) for j in range(ny)]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def load_density_csv(path: str | Path) -> np.ndarray:
    """Read back a density CSV written by :func:`export_density`."""
    rows = [
        [float(tok) for tok in line.split(",")]
        for line in Path(path).read_text().strip().splitlines()
    ]
    return np.asarray(rows).ravel()


def spec_fingerprint(payload: dict) -> str:
    """Stable hash of every quantity that can shift the reference optimum."""
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class ReferenceCache:
    """Disk cache of reference runs, keyed by the problem fingerprint.

    A cached entry stores the full objective history of the long reference
    run, so cutoff counts can be recomputed for any tolerance without
    re-running.
    """

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)

    def _path(self, name: str, fingerprint: str) -> Path:
        return self.dir / f"ref_{name}_{fingerprint}.json"

    def load(self, name: str, fingerprint: str) -> dict | None:
        p = self._path(name, fingerprint)
        if not p.exists():
            return None
        data = json.loads(p.read_text())
        if data.get("fingerprint") != fingerprint:
            return None
        return data

    def store(
        self, name: str, fingerprint: str, j_history: list[float],
        extra: dict | None = None,
    ) -> dict:
        self.dir.mkdir(parents=True, exist_ok=True)
        data = {
            "fingerprint": fingerprint,
            "j_star": j_history[-1],
            "j_history": list(map(float, j_history)),
        }
        if extra:
            data.update(extra)
        self._path(name, fingerprint).write_text(json.dumps(data))
        return data
