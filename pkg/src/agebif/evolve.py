"""Backward-Euler age stepping for the linear, logistic and coupled age flows.

All fields are numpy arrays of shape ``(steps + 1, n_interior)``; row ``k``
samples age ``a_k = k * da``. Every step solves a tridiagonal (or, for the
coupled flow, block-banded) system, so a step matrix of the form
``I + dt * (L + diag(p))`` with ``dt * max(0, -min p) <= 1/2`` is an M-matrix
and maps nonnegative rows to nonnegative rows.

In the coupled flow only the predator is substepped: the prey takes one
implicit step per age step, so with no predator it reproduces the logistic
flow exactly, and its linearization about ``(u, 0)`` reproduces the linear
flow with potential ``-beta2 u`` for any substep count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .model import ModelParams
from .spatial import (
    ConvergenceError,
    DiscretizationError,
    LaplacianMatrix,
    SpatialGrid,
    SpectralData,
    assemble_laplacian,
    build_grid,
    principal_eigenpair,
)

MAX_SUBSTEPS = 4096
CONE_TOL = 1e-12


class SubstepLimitError(RuntimeError):
    """The potential is so negative that positivity would need too many substeps."""


@dataclass(frozen=True)
class AgeGrid:
    a_max: float
    steps: int

    @property
    def da(self) -> float:
        return self.a_max / self.steps

    @property
    def ages(self) -> np.ndarray:
        return self.da * np.arange(self.steps + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights on the age nodes."""
        w = np.full(self.steps + 1, self.da)
        w[0] = w[-1] = 0.5 * self.da
        return w


def build_age_grid(a_max: float, steps: int) -> AgeGrid:
    if int(steps) != steps or steps < 16:
        raise DiscretizationError(f"need at least 16 age steps, got {steps}")
    if not a_max > 0:
        raise DiscretizationError(f"maximal age must be positive, got {a_max}")
    return AgeGrid(float(a_max), int(steps))


@dataclass(frozen=True)
class Grids:
    space: SpatialGrid
    age: AgeGrid
    lap: LaplacianMatrix = field(repr=False)
    spectral: SpectralData = field(repr=False)

    @property
    def n(self) -> int:
        return self.space.n_interior

    @property
    def shape(self) -> tuple[int, int]:
        return (self.age.steps + 1, self.space.n_interior)

    @property
    def lambda1(self) -> float:
        return self.spectral.lambda1

    @property
    def phi1(self) -> np.ndarray:
        return self.spectral.phi1

    def l2_norm(self, field_values: np.ndarray) -> float:
        """Discrete L2 norm over age x space (trapezoid in age, midpoint in space)."""
        sq = np.sum(field_values**2, axis=1) * self.space.spacing
        return float(np.sqrt(self.age.weights @ sq))


def make_grids(n_interior: int = 64, length: float = 1.0, a_max: float = 1.0, steps: int = 128) -> Grids:
    space = build_grid(n_interior, length)
    lap = assemble_laplacian(space)
    return Grids(space, build_age_grid(a_max, steps), lap, principal_eigenpair(lap))


def as_potential(h, grids: Grids) -> np.ndarray:
    pot = np.broadcast_to(np.asarray(h, dtype=float), grids.shape)
    if not np.all(np.isfinite(pot)):
        raise ValueError("potential has non-finite entries")
    return pot


def substeps_for(dt: float, min_potential: float) -> int:
    """Uniform substeps needed so that ``dt_sub * (-min h) <= 1/2``."""
    s = max(1, math.ceil(2.0 * dt * max(0.0, -min_potential) - 1e-12))
    if s > MAX_SUBSTEPS:
        raise SubstepLimitError(
            f"potential minimum {min_potential:.3e} needs {s} substeps (limit {MAX_SUBSTEPS})"
        )
    return s


def iter_linear(h, phi0, grids: Grids, source=None):
    """Yield the rows of the linear flow ``w' + (L + h) w = source``.

    ``phi0`` may be a vector or an ``(n, m)`` block of initial values. Every
    age step takes the same number of substeps, and the potential at
    ``a_{k+1}`` is used for every substep of step ``k``.
    """
    pot = as_potential(h, grids)
    da = grids.age.da
    w = np.array(phi0, dtype=float, copy=True)
    if w.shape[0] != grids.n:
        raise ValueError(f"initial value has {w.shape[0]} rows, grid has {grids.n}")
    if not np.all(np.isfinite(w)):
        raise ValueError("initial value has non-finite entries")
    src = None if source is None else np.broadcast_to(np.asarray(source, dtype=float), grids.shape + w.shape[1:])
    # one count for the whole run, set by the global minimum of the potential
    s = substeps_for(da, float(pot.min()))
    dt = da / s
    yield w
    for k in range(grids.age.steps):
        ab = grids.lap.banded(shift=1.0 + dt * pot[k + 1], scale=dt)
        for _ in range(s):
            rhs = w if src is None else w + dt * src[k + 1]
            w = solve_banded((1, 1), ab, rhs, check_finite=False)
        yield w


def propagate_linear(h, phi0, grids: Grids, source=None) -> np.ndarray:
    """Rows of the evolution ``w(a) = Pi_[h](a, 0) phi0`` (plus optional source)."""
    return np.stack(list(iter_linear(h, phi0, grids, source)))


# -- logistic flow ---------------------------------------------------------


def _logistic_step(x: np.ndarray, alpha: float, dt: float, lap: LaplacianMatrix) -> np.ndarray:
    """Solve ``(I + dt L) y + dt * alpha * y**2 = x`` by Newton's method."""
    y = solve_banded((1, 1), lap.banded(shift=1.0 + dt * alpha * x, scale=dt), x, check_finite=False)
    scale = max(float(np.max(np.abs(x))), 1e-300)
    for _ in range(30):
        g = y + dt * (lap.matvec(y) + alpha * y * y) - x
        delta = solve_banded((1, 1), lap.banded(shift=1.0 + 2.0 * dt * alpha * y, scale=dt), g, check_finite=False)
        y = y - delta
        if np.max(np.abs(delta)) <= 8 * np.finfo(float).eps * scale:
            return y
    if np.max(np.abs(delta)) <= 1e-12 * scale:
        return y
    raise ConvergenceError("logistic age step did not converge")


def propagate_logistic(phi0, alpha: float, grids: Grids, allow_negative: bool = False, source=None) -> np.ndarray:
    """Rows of ``u' + L u = -alpha u**2 + source`` from ``u(0) = phi0`` (fully implicit steps)."""
    u0 = np.asarray(phi0, dtype=float)
    if not allow_negative and np.min(u0) < -CONE_TOL:
        raise ValueError("logistic flow needs a nonnegative initial value")
    src = None if source is None else np.broadcast_to(np.asarray(source, dtype=float), grids.shape)
    rows = [u0.copy()]
    da = grids.age.da
    for k in range(grids.age.steps):
        rhs = rows[-1] if src is None else rows[-1] + da * src[k + 1]
        rows.append(_logistic_step(rhs, alpha, da, grids.lap))
    return np.stack(rows)


# -- coupled predator-prey flow --------------------------------------------


# half bandwidth above which a step system goes to sparse LU instead
BANDED_LIMIT = 17


def _step_entries(lap: LaplacianMatrix, da: float, p: ModelParams, u: np.ndarray, ys: np.ndarray):
    """COO entries of the Jacobian of one coupled age step.

    Unknowns are interleaved per node as ``(u_i, y1_i, ..., ys_i)``. The prey
    takes one implicit step of length ``da``; the predator takes ``s``
    substeps of length ``da / s`` with the new prey row held fixed.
    """
    a1, a2, b1, b2 = p.alpha1, p.alpha2, p.beta1, p.beta2
    n = lap.size
    s = ys.shape[0]
    w = s + 1
    dt = da / s
    node = np.arange(n) * w
    off = np.broadcast_to(np.asarray(lap.off, dtype=float), (n - 1,))
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(np.broadcast_to(v, r.shape))

    for j, (step, diag) in enumerate(
        [(da, 2 * a1 * u + a2 * ys[-1])] + [(dt, 2 * b1 * ys[i] - b2 * u) for i in range(s)]
    ):
        r = node + j
        put(r, r, 1.0 + step * (lap.diag + diag))
        put(r[:-1], r[1:], step * off)
        put(r[1:], r[:-1], step * off)
    put(node, node + s, da * a2 * u)
    for j in range(1, s + 1):
        put(node + j, node, -dt * b2 * ys[j - 1])
        if j > 1:
            put(node + j, node + j - 1, -np.ones(n))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n * w, w


def _step_banded(lap: LaplacianMatrix, da: float, p: ModelParams, u: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Same matrix as :func:`_step_entries` in ``(s + 1, s + 1)``-banded storage."""
    n = lap.size
    s = ys.shape[0]
    w = s + 1
    dt = da / s
    size = n * w
    ab = np.zeros((2 * w + 1, size))
    steps = np.full(w, dt)
    steps[0] = da
    diag = np.empty((n, w))
    diag[:, 0] = 2 * p.alpha1 * u + p.alpha2 * ys[-1]
    diag[:, 1:] = (2 * p.beta1 * ys - p.beta2 * u).T
    ab[w] = (1.0 + steps * (lap.diag + diag)).ravel()
    neighbor = (steps * np.broadcast_to(np.asarray(lap.off, dtype=float), (n - 1,))[:, None]).ravel()
    ab[0, w:] = neighbor
    ab[2 * w, :-w] = neighbor
    node = np.arange(n) * w
    ab[w - s, node + s] = da * p.alpha2 * u
    for j in range(1, s + 1):
        ab[w + j, node] = -dt * p.beta2 * ys[j - 1]
        if j > 1:
            ab[w + 1, node + j - 1] = -1.0
    return ab


def _step_solver(lap: LaplacianMatrix, da: float, p: ModelParams, u: np.ndarray, ys: np.ndarray):
    """Return ``solve(rhs)`` for the step Jacobian at ``(u, ys)``."""
    w = ys.shape[0] + 1
    if w <= BANDED_LIMIT:
        ab = _step_banded(lap, da, p, u, ys)
        return lambda rhs: solve_banded((w, w), ab, rhs, check_finite=False)
    r, c, v, size, _ = _step_entries(lap, da, p, u, ys)
    return splu(csc_matrix((v, (r, c)), shape=(size, size))).solve


def _step_residual(x, y0, u, ys, p: ModelParams, da: float, lap: LaplacianMatrix) -> np.ndarray:
    s = ys.shape[0]
    dt = da / s
    g = np.empty((lap.size, s + 1))
    g[:, 0] = u + da * (lap.matvec(u) + (p.alpha1 * u + p.alpha2 * ys[-1]) * u) - x
    prev = y0
    for j in range(s):
        y = ys[j]
        g[:, j + 1] = y + dt * (lap.matvec(y) + (p.beta1 * y - p.beta2 * u) * y) - prev
        prev = y
    return g


def _coupled_step(x, y0, p: ModelParams, da: float, s: int, lap: LaplacianMatrix):
    """One coupled age step from ``(x, y0)``: the new prey row and the ``s`` predator substates."""
    dt = da / s
    # predictor: prey with the old predator row, then predator substeps with the new prey row
    u = solve_banded((1, 1), lap.banded(shift=1.0 + da * (p.alpha1 * x + p.alpha2 * y0), scale=da), x, check_finite=False)
    ys = np.empty((s, lap.size))
    y = y0
    for j in range(s):
        y = solve_banded((1, 1), lap.banded(shift=1.0 + dt * (p.beta1 * y - p.beta2 * u), scale=dt), y, check_finite=False)
        ys[j] = y
    scale = max(float(np.max(np.abs(x))), float(np.max(np.abs(y0))), 1e-300)
    step = np.inf
    for _ in range(40):
        g = _step_residual(x, y0, u, ys, p, da, lap)
        delta = _step_solver(lap, da, p, u, ys)(g.ravel()).reshape(lap.size, s + 1)
        u = u - delta[:, 0]
        ys = ys - delta[:, 1:].T
        step = float(np.max(np.abs(delta)))
        if not np.isfinite(step):
            break
        if step <= 8 * np.finfo(float).eps * scale:
            return u, ys
    if np.isfinite(step) and step <= 1e-12 * scale:
        return u, ys
    raise ConvergenceError("coupled age step did not converge")


@dataclass
class CoupledPath:
    """Rows of a coupled run plus the predator substates.

    ``substates[k]`` is ``(u, ys)``: the prey row ``k + 1`` and the
    ``(s, n)`` array of predator states after each substep of age step
    ``k``; ``ys[-1]`` equals predator row ``k + 1``.
    """

    u: np.ndarray
    v: np.ndarray
    substates: list = field(repr=False)

    def substep_count(self, k: int) -> int:
        return self.substates[k][1].shape[0]


def coupled_substeps(u_bound: float, params: ModelParams, grids: Grids) -> int:
    """Uniform substep count keeping ``dt * beta2 * u <= 1/2`` wherever ``u <= u_bound``."""
    return substeps_for(grids.age.da, -params.beta2 * max(float(u_bound), 0.0))


def coupled_path(
    phi0_u,
    phi0_v,
    params: ModelParams,
    grids: Grids,
    allow_negative: bool = False,
    substeps: int | None = None,
) -> CoupledPath:
    """Run the coupled flow, recording substates.

    Every age step uses the same number of substeps. The default derives it
    from ``max phi0_u``, which bounds the prey at all ages; callers that need
    a map that is smooth in the initial data (Newton) pass a fixed count.
    """
    u0 = np.asarray(phi0_u, dtype=float)
    v0 = np.asarray(phi0_v, dtype=float)
    if not allow_negative and min(np.min(u0), np.min(v0)) < -CONE_TOL:
        raise ValueError("coupled flow needs nonnegative initial values")
    s = coupled_substeps(float(np.max(u0)), params, grids) if substeps is None else int(substeps)
    if not 1 <= s <= MAX_SUBSTEPS:
        raise SubstepLimitError(f"substep count {s} outside [1, {MAX_SUBSTEPS}]")
    us, vs, subs = [u0.copy()], [v0.copy()], []
    for _ in range(grids.age.steps):
        u, ys = _coupled_step(us[-1], vs[-1], params, grids.age.da, s, grids.lap)
        subs.append((u, ys))
        us.append(u)
        vs.append(ys[-1])
    return CoupledPath(np.stack(us), np.stack(vs), subs)


def propagate_coupled(phi0_u, phi0_v, params: ModelParams, grids: Grids, substeps: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    path = coupled_path(phi0_u, phi0_v, params, grids, substeps=substeps)
    return path.u, path.v


def _path_from_rows(base_u, base_v, params: ModelParams, grids: Grids) -> CoupledPath:
    """Hold row ``k + 1`` over the substeps of step ``k`` when no path is recorded."""
    s = coupled_substeps(float(np.max(base_u[0])), params, grids)
    subs = [(base_u[k + 1], np.tile(base_v[k + 1], (s, 1))) for k in range(grids.age.steps)]
    return CoupledPath(np.asarray(base_u), np.asarray(base_v), subs)


def iter_linearized(path: CoupledPath, params: ModelParams, grids: Grids, phi0_pair, rhs_pair=None):
    """Yield ``(du, dv)`` rows of the coupled flow linearized along ``path``.

    Each step solves the Jacobian of the corresponding coupled step, so the
    result is the exact derivative of the discrete flow. Initial values may
    be vectors or ``(n, m)`` blocks (used to materialize Jacobians column by
    column).
    """
    du = np.array(phi0_pair[0], dtype=float, copy=True)
    dv = np.array(phi0_pair[1], dtype=float, copy=True)
    n = grids.n
    if rhs_pair is not None:
        fu = np.broadcast_to(np.asarray(rhs_pair[0], dtype=float), grids.shape + du.shape[1:])
        fv = np.broadcast_to(np.asarray(rhs_pair[1], dtype=float), grids.shape + dv.shape[1:])
    yield du, dv
    da = grids.age.da
    for k in range(grids.age.steps):
        u, ys = path.substates[k]
        s = ys.shape[0]
        rhs = np.zeros((n, s + 1) + du.shape[1:])
        rhs[:, 0] = du
        rhs[:, 1] = dv
        if rhs_pair is not None:
            rhs[:, 0] += da * fu[k + 1]
            rhs[:, 1:] += (da / s) * fv[k + 1][:, None]
        sol = _step_solver(grids.lap, da, params, u, ys)(rhs.reshape((n * (s + 1),) + du.shape[1:]))
        sol = sol.reshape((n, s + 1) + du.shape[1:])
        du, dv = sol[:, 0], sol[:, s]
        yield du, dv


def propagate_linearized(base_u, base_v, params: ModelParams, grids: Grids, phi0_pair, rhs_pair=None, path=None):
    """Linearization of :func:`propagate_coupled` about ``(base_u, base_v)``.

    The first component carries potential ``2 alpha1 u + alpha2 v`` and the
    coupling ``alpha2 u`` on the second; the second carries potential
    ``2 beta1 v - beta2 u`` and the coupling ``-beta2 v`` on the first.
    Pass the :class:`CoupledPath` of the base run to differentiate through
    its substeps exactly.
    """
    if path is None:
        path = _path_from_rows(base_u, base_v, params, grids)
    rows = list(iter_linearized(path, params, grids, phi0_pair, rhs_pair))
    return np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows])
