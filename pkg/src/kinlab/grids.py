"""Uniform grids and sampled fields.

A ``GridSpec`` is a uniform 1-d lattice ``origin + j * spacing``; phase-space fields
live on the tensor product of an x-grid and a v-grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    n: int
    spacing: float
    origin: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a grid needs at least two points")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def symmetric(cls, half_width: float, spacing: float) -> "GridSpec":
        """Odd-sized grid centred on 0 covering at least [-half_width, half_width]."""
        m = int(np.ceil(half_width / spacing - 1e-9))
        return cls(2 * m + 1, float(spacing), -m * float(spacing))

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n)

    @property
    def extent(self) -> tuple[float, float]:
        return self.origin, self.origin + self.spacing * (self.n - 1)

    @property
    def is_symmetric(self) -> bool:
        lo, hi = self.extent
        return abs(lo + hi) <= 1e-9 * max(1.0, abs(hi))

    def scaled(self, factor: float) -> "GridSpec":
        return GridSpec(self.n, self.spacing * factor, self.origin * factor)

    def digest(self) -> str:
        return f"{self.n}:{self.spacing:.17g}:{self.origin:.17g}"


def lp_sum(values: np.ndarray, cell: float, p: float) -> float:
    """Riemann-sum L^p norm of samples with cell volume ``cell``."""
    a = np.abs(np.asarray(values, dtype=float))
    if np.isinf(p):
        return float(a.max()) if a.size else 0.0
    if p == 1:
        return float(a.sum() * cell)
    return float((np.sum(a**p) * cell) ** (1.0 / p))


@dataclass
class GridFunction:
    grid: GridSpec
    values: np.ndarray
    tail_mass: float = 0.0  # analytic mass outside the window, when known

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise ValueError("values do not match the grid")

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def mass(self) -> float:
        return float(np.trapezoid(self.values, dx=self.grid.spacing))

    def lp_norm(self, p: float) -> float:
        return lp_sum(self.values, self.grid.spacing, p)


@dataclass
class PhaseSpaceField:
    """Density on the tensor grid ``xgrid x vgrid``; ``values[i, j]`` is f(x_i, v_j)."""

    xgrid: GridSpec
    vgrid: GridSpec
    values: np.ndarray
    se: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.xgrid.n, self.vgrid.n):
            raise ValueError("values do not match the grid")

    @property
    def cell(self) -> float:
        return self.xgrid.spacing * self.vgrid.spacing

    def mass(self) -> float:
        return float(self.values.sum() * self.cell)

    def mass_se(self) -> float:
        if self.se is None:
            return 0.0
        return float(np.sqrt(np.sum(self.se**2)) * self.cell)

    def marginal_x(self) -> GridFunction:
        return GridFunction(self.xgrid, self.values.sum(axis=1) * self.vgrid.spacing)

    def marginal_v(self) -> GridFunction:
        return GridFunction(self.vgrid, self.values.sum(axis=0) * self.xgrid.spacing)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xgrid.points, self.vgrid.points, indexing="ij")

    def with_values(self, values: np.ndarray, se: np.ndarray | None = None) -> "PhaseSpaceField":
        return PhaseSpaceField(self.xgrid, self.vgrid, values, se, dict(self.meta))


def phase_mesh(xgrid: GridSpec, vgrid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(xgrid.points, vgrid.points, indexing="ij")
