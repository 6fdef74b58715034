"""Nonlocal birth operators ``phi -> int b(a) Pi_[h](a, 0) phi da`` and their spectra."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evolve import AgeGrid, Grids, as_potential, iter_linear

DENSE_LIMIT = 512


class SpectralConditionError(ValueError):
    """``1 - eta H`` is not positively invertible because ``eta * r(H) >= 1``."""

    def __init__(self, eta: float, radius: float):
        self.eta = eta
        self.radius = radius
        super().__init__(f"eta * r(H) = {eta * radius:.12g} >= 1 (r = {radius:.12g})")


@dataclass(frozen=True)
class BirthProfile:
    kind: str
    raw_samples: np.ndarray = field(repr=False)
    scale: float

    @property
    def samples(self) -> np.ndarray:
        return self.scale * self.raw_samples

    def weights(self, age: AgeGrid) -> np.ndarray:
        """Trapezoid weights times fertility: ``sum_k weights[k] * f[k]`` is the birth integral."""
        return age.weights * self.samples

    def rescaled(self, factor: float) -> BirthProfile:
        return BirthProfile(self.kind, self.raw_samples, self.scale * factor)


def normalize_profile(raw, lambda1: float, age: AgeGrid, kind: str = "prey") -> BirthProfile:
    """Scale ``raw`` so that the discrete birth functional of the decaying
    principal mode equals one.

    The decay factor ``(1 + da * lambda1) ** -k`` is what backward Euler
    produces for the principal eigenvector, so ``r(H_[0]) = 1`` holds on the
    grid and not just in the limit.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (age.steps + 1,):
        raise ValueError(f"profile has {raw.size} samples, age grid has {age.steps + 1} nodes")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValueError("profile samples must be finite and nonnegative")
    if not np.any(raw > 0):
        raise ValueError("profile is identically zero")
    tail = age.ages >= age.a_max * 0.9 - 1e-12
    if not np.all(raw[tail] > 0):
        raise ValueError("profile must be positive on the last 10% of the age interval")
    decay = (1.0 + age.da * lambda1) ** -np.arange(age.steps + 1, dtype=float)
    total = float(np.sum(age.weights * raw * decay))
    return BirthProfile(kind, raw, 1.0 / total)


def birth_integral(profile: BirthProfile, rows: np.ndarray, age: AgeGrid) -> np.ndarray:
    """``int b(a) w(a) da`` for stacked rows ``w`` (age along axis 0)."""
    return np.tensordot(profile.weights(age), rows, axes=(0, 0))


def _accumulate(potential, profile: BirthProfile, block: np.ndarray, grids: Grids, source=None) -> np.ndarray:
    wts = profile.weights(grids.age)
    acc = np.zeros_like(block, dtype=float)
    for k, row in enumerate(iter_linear(potential, block, grids, source)):
        acc += wts[k] * row
    return acc


def apply_birth_operator(potential, profile: BirthProfile, phi, grids: Grids) -> np.ndarray:
    return _accumulate(potential, profile, np.asarray(phi, dtype=float), grids)


@dataclass(frozen=True)
class BirthOperator:
    """``H_[h]`` for a fixed potential and profile; dense below ``DENSE_LIMIT`` nodes."""

    potential: np.ndarray = field(repr=False)
    profile: BirthProfile
    grids: Grids = field(repr=False)
    matrix: np.ndarray | None = field(default=None, repr=False)

    def apply(self, phi) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix @ phi
        return apply_birth_operator(self.potential, self.profile, phi, self.grids)


def assemble_birth_operator(potential, profile: BirthProfile, grids: Grids, dense: bool | None = None) -> BirthOperator:
    pot = as_potential(potential, grids)
    if dense is None:
        dense = grids.n <= DENSE_LIMIT
    matrix = _accumulate(pot, profile, np.eye(grids.n), grids) if dense else None
    return BirthOperator(pot, profile, grids, matrix)


@dataclass(frozen=True)
class KreinRutmanResult:
    radius: float
    eigvec: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    converged: bool = True
    lower: float = float("nan")
    upper: float = float("nan")


def power_iteration(apply, start: np.ndarray, tol: float = 1e-12, max_iter: int = 10000) -> KreinRutmanResult:
    """Dominant eigenpair of a positive operator.

    Uses the Collatz-Wielandt quotients ``min (Hx)_i / x_i <= r <= max (Hx)_i / x_i``
    as a two-sided bracket; stops once the bracket is narrower than
    ``tol * r``. Hitting the cap returns the best estimate with
    ``converged=False``.
    """
    x = np.asarray(start, dtype=float)
    x = x / np.max(x)
    converged = False
    for it in range(1, max_iter + 1):
        y = apply(x)
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValueError("operator is not strongly positive on the iterate")
        ratios = y / x
        lo, hi = float(ratios.min()), float(ratios.max())
        if hi - lo <= tol * hi:
            converged = True
            break
        x = y / np.max(y)
    radius = 0.5 * (lo + hi)
    residual = float(np.max(np.abs(y - radius * x)))
    return KreinRutmanResult(radius, x, residual, it, converged, lo, hi)


def spectral_radius(potential, profile: BirthProfile, grids: Grids, tol: float = 1e-12, operator: BirthOperator | None = None) -> KreinRutmanResult:
    op = operator if operator is not None else assemble_birth_operator(potential, profile, grids)
    return power_iteration(op.apply, grids.phi1, tol=tol)


def resolve_birth(eta: float, potential, profile: BirthProfile, rhs, grids: Grids, operator: BirthOperator | None = None, radius: float | None = None) -> np.ndarray:
    """Solve ``(1 - eta H_[h]) x = rhs``; refuses unless ``eta * r(H_[h]) < 1``."""
    op = operator if operator is not None else assemble_birth_operator(potential, profile, grids, dense=True)
    if op.matrix is None:
        op = assemble_birth_operator(op.potential, profile, grids, dense=True)
    if eta != 0:
        r = radius if radius is not None else spectral_radius(None, profile, grids, operator=op).radius
        if eta * r >= 1.0:
            raise SpectralConditionError(eta, r)
    a = np.eye(grids.n) - eta * op.matrix
    return np.linalg.solve(a, np.asarray(rhs, dtype=float))
