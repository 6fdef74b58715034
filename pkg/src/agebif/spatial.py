"""Interval discretization, Dirichlet Laplacian and its principal eigenpair."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded


class DiscretizationError(ValueError):
    """Raised for grids that cannot carry the discrete operators."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its iteration budget."""


@dataclass(frozen=True)
class SpatialGrid:
    n_interior: int
    length: float

    @property
    def spacing(self) -> float:
        return self.length / (self.n_interior + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.n_interior + 1)


def build_grid(n_interior: int, length: float = 1.0) -> SpatialGrid:
    if int(n_interior) != n_interior or n_interior < 3:
        raise DiscretizationError(f"need at least 3 interior nodes, got {n_interior}")
    if not length > 0:
        raise DiscretizationError(f"domain length must be positive, got {length}")
    return SpatialGrid(int(n_interior), float(length))


@dataclass(frozen=True)
class LaplacianMatrix:
    """Second-difference approximation of the negative Dirichlet Laplacian.

    Stored as the constant diagonal ``2/h**2`` and off-diagonal ``-1/h**2``;
    use :meth:`banded` for LAPACK-style storage and :meth:`dense` for tests.
    """

    grid: SpatialGrid
    diag: float = field(init=False)
    off: float = field(init=False)

    def __post_init__(self):
        h = self.grid.spacing
        object.__setattr__(self, "diag", 2.0 / h**2)
        object.__setattr__(self, "off", -1.0 / h**2)

    @property
    def size(self) -> int:
        return self.grid.n_interior

    def banded(self, shift=0.0, scale=1.0) -> np.ndarray:
        """Return ``shift + scale * L`` in (1, 1) banded storage.

        ``shift`` may be a scalar or a vector added to the diagonal.
        """
        n = self.size
        ab = np.empty((3, n))
        ab[0, :] = scale * self.off
        ab[2, :] = scale * self.off
        ab[1, :] = scale * self.diag + shift
        ab[0, 0] = 0.0
        ab[2, -1] = 0.0
        return ab

    def dense(self) -> np.ndarray:
        n = self.size
        return (
            self.diag * np.eye(n)
            + self.off * (np.eye(n, k=1) + np.eye(n, k=-1))
        )

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.diag * x
        y[1:] += self.off * x[:-1]
        y[:-1] += self.off * x[1:]
        return y


def assemble_laplacian(grid: SpatialGrid) -> LaplacianMatrix:
    return LaplacianMatrix(grid)


@dataclass(frozen=True)
class SpectralData:
    lambda1: float
    phi1: np.ndarray
    residual: float
    iterations: int


def closed_form_lambda1(grid: SpatialGrid) -> float:
    h = grid.spacing
    return (2.0 / h**2) * (1.0 - np.cos(np.pi * h / grid.length))


def principal_eigenpair(lap: LaplacianMatrix, tol: float = 1e-12, max_iter: int = 500) -> SpectralData:
    """Smallest eigenpair of ``lap`` by unshifted inverse iteration.

    The start vector is all ones. Iteration stops once the eigen-residual
    falls below ``tol * lambda1``, floored at the rounding level of the
    matrix so that very fine grids remain reachable.
    """
    n = lap.size
    ab = lap.banded()
    x = np.ones(n)
    floor = 8.0 * np.finfo(float).eps * abs(lap.off)
    lam = np.nan
    res = np.inf
    for it in range(1, max_iter + 1):
        y = solve_banded((1, 1), ab, x)
        x = y / np.max(np.abs(y))
        ax = lap.matvec(x)
        lam = float(x @ ax / (x @ x))
        res = float(np.max(np.abs(ax - lam * x)))
        if res <= max(tol * lam, floor):
            break
    else:
        raise ConvergenceError(f"inverse iteration did not converge, residual {res:.3e}")
    x = np.abs(x) / np.max(np.abs(x))
    return SpectralData(lam, x, res, it)
