"""Benchmark problem definitions: geometry, supports, loads, and assembly.

Three classic compliance benchmarks are built in, plus a small variant of
the first for quick experiments:

* ``mbb``        half MBB beam, 3 x 1 domain on a 180 x 60 grid, R = 0.12,
                 half volume; symmetry on the left edge, roller at the
                 bottom-right corner, unit traction on the leftmost 0.3 of
                 the top edge.
* ``cantilever`` 160 x 100 domain (h = 1), R = 2, half volume; left edge
                 clamped, unit traction over the bottom 3 units of the
                 right edge (tip load).
* ``ssbeam``     simply supported 180 x 90 domain (h = 1), R = 0.5, 40%
                 volume; pin bottom-left, roller bottom-right, unit
                 traction over the 3-unit band at the center of the bottom
                 edge (bridge-style hung load).
* ``mbb-small``  60 x 20 version of ``mbb`` (same physical domain).

Loads of the form "force F spread over a segment of length F/q" become
consistent Q1 nodal loads by integrating the edge shape functions over the
loaded interval; segments need not align with nodes, partial element
coverage is integrated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import StructuredMesh, build_mesh, elasticity_element_matrix
from .filtering import HelmholtzFilter
from .hdm import ComplianceObjective, HdmSolver, MaterialModel
from .rom import RomModel
from .stats import RunStats

__all__ = [
    "LoadSegment",
    "EdgeSupport",
    "NodeSupport",
    "ProblemSpec",
    "AssembledProblem",
    "builtin_problem",
    "builtin_names",
    "assemble_problem",
    "edge_segment_loads",
]

BUILTIN = ("mbb", "cantilever", "ssbeam", "mbb-small")


@dataclass(frozen=True)
class LoadSegment:
    """Uniform traction of magnitude ``q`` on ``[start, end]`` along one side.

    ``direction`` is 'x' or 'y'; positive ``q`` pulls along the positive
    axis.  Coordinates run along the side (x for top/bottom, y for
    left/right).
    """

    side: str
    start: float
    end: float
    q: float
    direction: str = "y"


@dataclass(frozen=True)
class EdgeSupport:
    """Homogeneous Dirichlet condition on a whole side: fix 'x', 'y' or 'xy'."""

    side: str
    components: str


@dataclass(frozen=True)
class NodeSupport:
    """Homogeneous Dirichlet condition at grid node (i, j)."""

    i: int
    j: int
    components: str


@dataclass(frozen=True)
class ProblemSpec:
    """Complete description of one benchmark instance."""

    name: str
    nx: int
    ny: int
    h: float
    radius: float
    volume_fraction: float
    psi0_value: float
    loads: tuple[LoadSegment, ...]
    supports: tuple[EdgeSupport | NodeSupport, ...]
    objective: str = "compliance"

    @property
    def domain_volume(self) -> float:
        return self.nx * self.ny * self.h**2

    @property
    def volume_cap(self) -> float:
        return self.volume_fraction * self.domain_volume

    def describe(self) -> str:
        """One-line record of the geometry assumptions behind this spec."""
        supports = "; ".join(
            f"{s.side} edge {s.components} fixed" if isinstance(s, EdgeSupport)
            else f"node ({s.i},{s.j}) {s.components} fixed"
            for s in self.supports
        )
        loads = "; ".join(
            f"q={seg.q:g} on {seg.side} [{seg.start:g},{seg.end:g}] ({seg.direction})"
            for seg in self.loads
        )
        return (
            f"domain {self.nx * self.h:g} x {self.ny * self.h:g} "
            f"({self.nx}x{self.ny} elements, h={self.h:g}), R={self.radius:g}, "
            f"V={self.volume_fraction:g}|domain|, psi0={self.psi0_value:g}; "
            f"supports: {supports}; loads: {loads}"
        )


def builtin_names() -> tuple[str, ...]:
    return BUILTIN


def builtin_problem(name: str) -> ProblemSpec:
    """Look up a benchmark by name; unknown names list the available ones."""
    if name == "mbb" or name == "mbb-small":
        nx, ny = (180, 60) if name == "mbb" else (60, 20)
        h = 3.0 / nx
        return ProblemSpec(
            name=name,
            nx=nx,
            ny=ny,
            h=h,
            radius=0.12,
            volume_fraction=0.5,
            psi0_value=0.5,
            loads=(LoadSegment(side="top", start=0.0, end=0.3, q=-1.0),),
            supports=(
                EdgeSupport(side="left", components="x"),
                NodeSupport(i=nx, j=0, components="y"),
            ),
        )
    if name == "cantilever":
        nx, ny = 160, 100
        return ProblemSpec(
            name=name,
            nx=nx,
            ny=ny,
            h=1.0,
            radius=2.0,
            volume_fraction=0.5,
            psi0_value=0.5,
            loads=(LoadSegment(side="right", start=0.0, end=3.0, q=-1.0),),
            supports=(EdgeSupport(side="left", components="xy"),),
        )
    if name == "ssbeam":
        nx, ny = 180, 90
        return ProblemSpec(
            name=name,
            nx=nx,
            ny=ny,
            h=1.0,
            radius=0.5,
            volume_fraction=0.4,
            psi0_value=0.4,
            loads=(
                LoadSegment(side="bottom", start=nx / 2 - 1.5, end=nx / 2 + 1.5, q=-1.0),
            ),
            supports=(
                NodeSupport(i=0, j=0, components="xy"),
                NodeSupport(i=nx, j=0, components="y"),
            ),
        )
    raise ValueError(f"unknown problem {name!r}; available: {', '.join(BUILTIN)}")


def edge_segment_loads(
    mesh: StructuredMesh, segment: LoadSegment
) -> tuple[np.ndarray, np.ndarray]:
    """Consistent nodal loads for a uniform traction on a boundary segment.

    Integrates the two linear edge shape functions over the covered part of
    every boundary edge element, so full coverage reproduces the familiar
    q*h interior / q*h/2 endpoint weights and partial coverage is exact.
    Returns (node indices, load values).
    """
    h = mesh.h
    if segment.side in ("top", "bottom"):
        n_edges = mesh.nx
        length = mesh.nx * h
    elif segment.side in ("left", "right"):
        n_edges = mesh.ny
        length = mesh.ny * h
    else:
        raise ValueError(f"unknown side {segment.side!r}")
    a, b = segment.start, segment.end
    if not (0.0 - 1e-12 <= a < b <= length + 1e-12):
        raise ValueError(
            f"segment [{a}, {b}] outside side of length {length}"
        )
    side_nodes = mesh.boundary_nodes(segment.side)
    weights = np.zeros(n_edges + 1)
    k0 = max(int(np.floor(a / h)), 0)
    k1 = min(int(np.ceil(b / h)), n_edges)
    for k in range(k0, k1):
        s0, s1 = max(k * h, a), min((k + 1) * h, b)
        if s1 <= s0:
            continue
        # integrals of the hat functions ((k+1)h - s)/h and (s - kh)/h on [s0, s1]
        weights[k] += ((k + 1) * h * (s1 - s0) - (s1**2 - s0**2) / 2.0) / h
        weights[k + 1] += ((s1**2 - s0**2) / 2.0 - k * h * (s1 - s0)) / h
    nz = weights != 0.0
    return side_nodes[nz], segment.q * weights[nz]


def _support_dofs(mesh: StructuredMesh, supports) -> np.ndarray:
    dofs: list[int] = []
    for s in supports:
        if isinstance(s, EdgeSupport):
            nodes = mesh.boundary_nodes(s.side)
        else:
            nodes = np.array([mesh.node_id(s.i, s.j)])
        if "x" in s.components:
            dofs.extend(2 * nodes)
        if "y" in s.components:
            dofs.extend(2 * nodes + 1)
    return np.unique(np.asarray(dofs, dtype=np.int64))


@dataclass
class AssembledProblem:
    """A benchmark spec realized on its mesh, ready for the drivers."""

    spec: ProblemSpec
    mesh: StructuredMesh
    solver: HdmSolver
    rom: RomModel
    objective: ComplianceObjective
    volume_weights: np.ndarray
    volume_cap: float
    stats: RunStats
    psi0: np.ndarray = field(repr=False, default=None)


def assemble_problem(
    spec: ProblemSpec,
    e0: float = 1.0,
    nu: float = 0.3,
    material: MaterialModel | None = None,
    stats: RunStats | None = None,
) -> AssembledProblem:
    """Mesh, filter, load vector, and solvers for one benchmark spec."""
    material = material or MaterialModel()
    if spec.volume_cap < material.rho_l * spec.nx * spec.ny * spec.h**2:
        raise ValueError(
            "volume cap below the minimum attainable material volume"
        )
    stats = stats or RunStats()
    mesh = build_mesh(spec.nx, spec.ny, spec.h)
    k_e = elasticity_element_matrix(e0, nu, spec.h)
    filt = HelmholtzFilter(mesh, radius=spec.radius)
    f = np.zeros(mesh.n_dofs)
    for seg in spec.loads:
        nodes, vals = edge_segment_loads(mesh, seg)
        comp = 0 if seg.direction == "x" else 1
        np.add.at(f, 2 * nodes + comp, vals)
    fixed = _support_dofs(mesh, spec.supports)
    if spec.objective != "compliance":
        raise ValueError(f"unsupported objective {spec.objective!r}")
    solver = HdmSolver(
        mesh=mesh,
        k_e=k_e,
        filt=filt,
        f=f,
        fixed_dofs=fixed,
        material=material,
        stats=stats,
    )
    objective = ComplianceObjective(solver.f)
    rom = RomModel(solver, stats=stats)
    psi0 = np.full(mesh.n_elems, spec.psi0_value)
    return AssembledProblem(
        spec=spec,
        mesh=mesh,
        solver=solver,
        rom=rom,
        objective=objective,
        volume_weights=np.full(mesh.n_elems, mesh.elem_volume),
        volume_cap=spec.volume_cap,
        stats=stats,
        psi0=psi0,
    )
