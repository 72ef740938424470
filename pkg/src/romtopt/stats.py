"""Run statistics sink: solve counters shared by the full and reduced models.

All evaluation paths report through a single ``RunStats`` instance so the
cost accounting (equivalent full solves) can be audited against the actual
number of factorize+solve calls.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class RunStats:
    hdm_solves: int = 0
    hdm_adjoint_solves: int = 0
    rom_solves: int = 0
    factorizations: int = 0
    filter_solves: int = 0

    def snapshot(self) -> dict:
        return {
            "hdm_solves": self.hdm_solves,
            "hdm_adjoint_solves": self.hdm_adjoint_solves,
            "rom_solves": self.rom_solves,
            "factorizations": self.factorizations,
            "filter_solves": self.filter_solves,
        }
