"""Phase-space Gaussians with scalar blocks, and initial data.

``BlockCovariance(xx, xv, vv, d)`` stands for the 2d x 2d matrix whose blocks are
``xx * I``, ``xv * I`` and ``vv * I``; coordinates pair up as independent (x_i, v_i)
planes, so every computation reduces to a 2 x 2 matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import gammaln

from .errors import GridTooCoarse, SingularTarget
from .grids import GridFunction, GridSpec, PhaseSpaceField, phase_mesh


@dataclass(frozen=True)
class BlockCovariance:
    xx: float
    xv: float
    vv: float
    d: int = 1

    def __post_init__(self):
        if self.xx < -1e-12 or self.vv < -1e-12 or self.xx * self.vv - self.xv**2 < -1e-12:
            raise ValueError(f"not positive semidefinite: {self}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.xx, self.xv], [self.xv, self.vv]], dtype=float)

    @property
    def det2(self) -> float:
        return self.xx * self.vv - self.xv**2

    def __add__(self, other: "BlockCovariance") -> "BlockCovariance":
        return BlockCovariance(self.xx + other.xx, self.xv + other.xv, self.vv + other.vv, self.d)

    def scaled(self, c: float) -> "BlockCovariance":
        return BlockCovariance(c * self.xx, c * self.xv, c * self.vv, self.d)

    @classmethod
    def from_matrix(cls, m: np.ndarray, d: int = 1) -> "BlockCovariance":
        return cls(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]), d)


def gaussian_pdf(cov: BlockCovariance, x, v) -> np.ndarray:
    """Density of N(0, cov) at (x, v); d = 1 arrays broadcast, d > 1 uses last axis."""
    det = cov.det2
    if det <= 0:
        raise SingularTarget(f"covariance {cov} is singular")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    q = (cov.vv * x * x - 2 * cov.xv * x * v + cov.xx * v * v) / det
    if cov.d > 1:
        q = q.sum(axis=-1)
    return np.exp(-0.5 * q) / (2 * math.pi * math.sqrt(det)) ** cov.d


def gaussian_1d(var: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x / var) / math.sqrt(2 * math.pi * var)


@dataclass(frozen=True)
class GaussianData:
    """Centred Gaussian initial datum on R^d x R^d (product form when xv = 0)."""

    x_var: float = 1.0
    v_var: float = 1.0
    xv: float = 0.0
    d: int = 1

    kind = "gaussian"

    @property
    def cov(self) -> BlockCovariance:
        return BlockCovariance(self.x_var, self.xv, self.v_var, self.d)

    def density(self, x, v) -> np.ndarray:
        return gaussian_pdf(self.cov, x, v)

    def on_grid(self, xgrid: GridSpec, vgrid: GridSpec) -> PhaseSpaceField:
        X, V = phase_mesh(xgrid, vgrid)
        return PhaseSpaceField(xgrid, vgrid, self.density(X, V))

    def char_fn(self, xi, eta) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        q = self.x_var * xi * xi + 2 * self.xv * xi * eta + self.v_var * eta * eta
        if self.d > 1:
            q = q.sum(axis=-1)
        return np.exp(-0.5 * q)

    def sample(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        w, U = np.linalg.eigh(self.cov.matrix)
        A = U * np.sqrt(np.clip(w, 0.0, None))
        shape = (count,) if self.d == 1 else (count, self.d)
        z1, z2 = rng.standard_normal(shape), rng.standard_normal(shape)
        return A[0, 0] * z1 + A[0, 1] * z2, A[1, 0] * z1 + A[1, 1] * z2

    def transported(self, t: float) -> "GaussianData":
        """Law of (X + t V, V): the free-transport image T_t f0."""
        c = self.cov
        return GaussianData(c.xx + 2 * t * c.xv + t * t * c.vv, c.vv, c.xv + t * c.vv, self.d)

    def rho_variance(self, t1: float = 0.0) -> float:
        """Variance of the x-marginal of T_{t1} f0."""
        return self.transported(t1).x_var

    def drifted(self, t: float) -> "GaussianData":
        """Law of (X + (1 - e^-t) V, e^-t V): the drift-transport image."""
        a, b = 1 - math.exp(-t), math.exp(-t)
        c = self.cov
        return GaussianData(c.xx + 2 * a * c.xv + a * a * c.vv, b * b * c.vv, b * (c.xv + a * c.vv), self.d)

    def velocity_moment(self, nu: float) -> float:
        """E|V|^nu (d = 1)."""
        return float(self.v_var ** (nu / 2) * 2 ** (nu / 2)
                     * math.exp(gammaln((nu + 1) / 2)) / math.sqrt(math.pi))

    def rescaled(self, eps: float) -> "GaussianData":
        """x -> eps x dilation of the datum (density eps^-d f0(x/eps, v))."""
        return GaussianData(self.x_var * eps * eps, self.v_var, self.xv * eps, self.d)

    def describe(self) -> dict:
        return {"kind": "gaussian", "x_var": self.x_var, "v_var": self.v_var, "xv": self.xv, "d": self.d}


@dataclass
class GriddedData:
    """Initial datum tabulated on a phase-space grid (d = 1)."""

    field: PhaseSpaceField
    d: int = 1

    kind = "grid"

    def __post_init__(self):
        self._interp = RegularGridInterpolator(
            (self.field.xgrid.points, self.field.vgrid.points), self.field.values,
            bounds_error=False, fill_value=0.0)

    def density(self, x, v) -> np.ndarray:
        x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
        pts = np.stack([x.ravel(), v.ravel()], axis=-1)
        return self._interp(pts).reshape(x.shape)

    def on_grid(self, xgrid: GridSpec, vgrid: GridSpec) -> PhaseSpaceField:
        X, V = phase_mesh(xgrid, vgrid)
        return PhaseSpaceField(xgrid, vgrid, self.density(X, V))

    def rho_of_transported(self, t1: float) -> GridFunction:
        """x -> integral of f0(x - t1 w, w) dw on the datum's x-grid."""
        xg, vg = self.field.xgrid, self.field.vgrid
        X, V = phase_mesh(xg, vg)
        vals = self.density(X - t1 * V, V)
        rho = vals.sum(axis=1) * vg.spacing
        lost = self.field.mass() - rho.sum() * xg.spacing
        if lost > 1e-4:
            raise GridTooCoarse(f"sheared support leaves the grid (mass {lost:.2e} lost)")
        return GridFunction(xg, rho)

    def sample(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        f = np.clip(self.field.values, 0, None).ravel()
        idx = rng.choice(f.size, size=count, p=f / f.sum())
        i, j = np.unravel_index(idx, self.field.values.shape)
        hx, hv = self.field.xgrid.spacing, self.field.vgrid.spacing
        x = self.field.xgrid.points[i] + hx * (rng.uniform(size=count) - 0.5)
        v = self.field.vgrid.points[j] + hv * (rng.uniform(size=count) - 0.5)
        return x, v

    def velocity_moment(self, nu: float) -> float:
        m = self.field.marginal_v()
        return float(np.sum(np.abs(m.points) ** nu * m.values) * m.grid.spacing)

    def describe(self) -> dict:
        return {"kind": "grid", "shape": list(self.field.values.shape)}
