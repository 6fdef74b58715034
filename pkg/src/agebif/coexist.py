"""Coexistence states of the coupled predator-prey age flow at fixed ``(eta, xi)``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .birthop import spectral_radius
from .evolve import (
    CONE_TOL,
    CoupledPath,
    coupled_path,
    coupled_substeps,
    iter_linearized,
)
from .model import Model
from .steady import (
    NEWTON_TOL,
    STEP_RATIO,
    TRIVIAL_TOL,
    NewtonDivergence,
    SemiTrivialSolution,
    Trivial,
)

ZERO_RATIO = 1e-8


@dataclass(frozen=True)
class SemiTrivialLimit:
    """Newton converged, but one species died out."""

    eta: float
    xi: float
    survivor: str  # "prey" or "predator"
    trace_u: np.ndarray = field(repr=False)
    trace_v: np.ndarray = field(repr=False)
    iterations: int = 0

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class CoexistenceSolution:
    eta: float
    xi: float
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    trace_u: np.ndarray = field(repr=False)
    trace_v: np.ndarray = field(repr=False)
    residuals: tuple[float, float]
    iterations: int
    path: CoupledPath = field(repr=False, compare=False)

    @property
    def sup_u(self) -> float:
        return float(np.max(self.u))

    @property
    def substeps(self) -> int:
        return self.path.substep_count(0)

    @property
    def sup_v(self) -> float:
        return float(np.max(self.v))


def trace_residual(model: Model, eta: float, xi: float, cu, cv, substeps: int | None = None):
    """``(c_u - eta B1[u], c_v - xi B2[v])`` and the coupled path from ``(c_u, c_v)``."""
    g = model.grids
    path = coupled_path(cu, cv, model.params, g, allow_negative=True, substeps=substeps)
    w1 = model.prey.weights(g.age)
    w2 = model.predator.weights(g.age)
    fu = np.asarray(cu) - eta * (w1 @ path.u)
    fv = np.asarray(cv) - xi * (w2 @ path.v)
    return fu, fv, path


def trace_jacobian(model: Model, eta: float, xi: float, path: CoupledPath) -> np.ndarray:
    """``I - diag(eta B1, xi B2) o D(flow)`` as a dense ``2n x 2n`` matrix."""
    g = model.grids
    n = g.n
    eye = np.eye(n)
    zero = np.zeros((n, n))
    du0 = np.hstack([eye, zero])
    dv0 = np.hstack([zero, eye])
    w1 = model.prey.weights(g.age)
    w2 = model.predator.weights(g.age)
    acc_u = np.zeros((n, 2 * n))
    acc_v = np.zeros((n, 2 * n))
    for k, (du, dv) in enumerate(iter_linearized(path, model.params, g, (du0, dv0))):
        acc_u += w1[k] * du
        acc_v += w2[k] * dv
    return np.eye(2 * n) - np.vstack([eta * acc_u, xi * acc_v])


def solve_coexistence(
    model: Model,
    eta: float,
    xi: float,
    seed_pair,
    tol: float = NEWTON_TOL,
    max_iter: int = 50,
    max_halvings: int = 8,
    substeps: int | None = None,
):
    """Damped Newton on the stacked traces ``(c_u, c_v)``.

    Returns a :class:`CoexistenceSolution`, a :class:`SemiTrivialLimit` when
    one trace vanishes (below ``ZERO_RATIO`` times the other), or
    :class:`Trivial` when both do.

    The age substep count stays fixed during each Newton solve so the
    residual is smooth in the traces. Without an explicit ``substeps`` the
    smallest count valid for the result itself is used: it follows
    ``max u(0)``, which bounds the prey at every age, and the solve is
    repeated with the count the result needs; on a threshold cycle the
    larger count wins.
    """
    if substeps is not None:
        return _solve_fixed(model, eta, xi, seed_pair, tol, max_iter, max_halvings, int(substeps))
    g, p = model.grids, model.params
    s = coupled_substeps(float(np.max(seed_pair[0])), p, g)
    tried = set()
    while True:
        sol = _solve_fixed(model, eta, xi, seed_pair, tol, max_iter, max_halvings, s)
        if not isinstance(sol, CoexistenceSolution):
            return sol
        need = coupled_substeps(float(np.max(sol.trace_u)), p, g)
        if need == s or (need < s and need in tried):
            return sol
        tried.add(s)
        s, seed_pair = need, (sol.trace_u, sol.trace_v)


def _solve_fixed(model, eta, xi, seed_pair, tol, max_iter, max_halvings, substeps):
    n = model.grids.n
    cu, cv = (np.array(s, dtype=float) for s in seed_pair)
    if min(np.min(cu), np.min(cv)) < -CONE_TOL:
        raise ValueError("seeds must be nonnegative")
    c = np.concatenate([cu, cv])
    fu, fv, path = trace_residual(model, eta, xi, c[:n], c[n:], substeps)
    F = np.concatenate([fu, fv])
    for it in range(max_iter + 1):
        size = float(np.max(np.abs(c)))
        nf = float(np.max(np.abs(F)))
        if size < TRIVIAL_TOL:
            return Trivial(float(eta), it)
        if it == max_iter:
            break
        delta = np.linalg.solve(trace_jacobian(model, eta, xi, path), -F)
        if nf <= tol * (1.0 + size) and np.max(np.abs(delta)) <= STEP_RATIO * size:
            trial = c + delta
            if np.min(trial) >= -CONE_TOL:
                tu, tv, tpath = trace_residual(model, eta, xi, trial[:n], trial[n:], substeps)
                ft = np.concatenate([tu, tv])
                if np.max(np.abs(ft)) <= nf:
                    c, F, path = np.maximum(trial, 0.0), ft, tpath
            return _classify(model, eta, xi, c, F, path, it + 1)
        s = 1.0
        for _ in range(max_halvings + 1):
            trial = c + s * delta
            if np.min(trial) >= -CONE_TOL:
                trial = np.maximum(trial, 0.0)
                tu, tv, tpath = trace_residual(model, eta, xi, trial[:n], trial[n:], substeps)
                ft = np.concatenate([tu, tv])
                nt = float(np.max(np.abs(ft)))
                if nt < nf or nt <= tol * (1.0 + size):
                    c, F, path = trial, ft, tpath
                    break
            s *= 0.5
        else:
            raise NewtonDivergence(
                f"no decrease after {max_halvings} halvings at eta={eta}, xi={xi}, |F|={nf:.3e}"
            )
    raise NewtonDivergence(f"no convergence in {max_iter} steps at eta={eta}, xi={xi}, |F|={nf:.3e}")


def _classify(model, eta, xi, c, F, path, its):
    n = model.grids.n
    cu, cv = c[:n], c[n:]
    su, sv = float(np.max(cu)), float(np.max(cv))
    scale = max(su, sv)
    if su <= ZERO_RATIO * scale:
        return SemiTrivialLimit(float(eta), float(xi), "predator", cu, cv, its)
    if sv <= ZERO_RATIO * scale:
        return SemiTrivialLimit(float(eta), float(xi), "prey", cu, cv, its)
    res = (float(np.max(np.abs(F[:n]))), float(np.max(np.abs(F[n:]))))
    return CoexistenceSolution(float(eta), float(xi), path.u, path.v, cu.copy(), cv.copy(), res, its, path)


# -- diagnostics -----------------------------------------------------------


@dataclass(frozen=True)
class OrderingReport:
    prey_ok: bool
    predator_ok: bool
    prey_excess: float
    predator_deficit: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.prey_ok and self.predator_ok


def ordering_check(
    sol: CoexistenceSolution,
    u_eta: SemiTrivialSolution | Trivial,
    v_xi: SemiTrivialSolution | Trivial,
    tol: float = 1e-8,
) -> OrderingReport:
    """``u <= u_eta`` and ``v >= v_xi`` at every node, up to ``tol`` times the field scale.

    A trivial semi-trivial state counts as the zero field.
    """
    ue = u_eta.field if u_eta else np.zeros_like(sol.u)
    vx = v_xi.field if v_xi else np.zeros_like(sol.v)
    tol_abs = tol * max(1.0, float(np.max(ue)), float(np.max(sol.v)))
    excess = float(np.max(sol.u - ue))
    deficit = float(np.max(vx - sol.v))
    return OrderingReport(excess <= tol_abs, deficit <= tol_abs, excess, deficit, tol_abs)


@dataclass(frozen=True)
class EnvelopeCheck:
    passed: bool
    margin: float
    continuum_margin: float
    growth_rate: float
    slack: float


def predator_envelope(v0: float, m: float, beta1: float, path: CoupledPath, da: float) -> np.ndarray:
    """Grid counterpart of ``f' = -beta1 f^2 + m f``, ``f(0) = v0``.

    Each implicit substep solves ``y + dt (beta1 y^2 - m y) = y_prev`` with the
    substep counts of ``path``, so ``sup v <= f`` holds row by row.
    """
    rows = [v0]
    y = v0
    for k in range(len(path.substates)):
        s = path.substep_count(k)
        dt = da / s
        for _ in range(s):
            q = 1.0 - m * dt
            y = 2.0 * y / (q + np.sqrt(q * q + 4.0 * beta1 * dt * y))
        rows.append(y)
    return np.array(rows)


def logistic_growth_envelope(v0: float, m: float, beta1: float, ages: np.ndarray) -> np.ndarray:
    """Closed-form solution of ``f' = -beta1 f^2 + m f``, ``f(0) = v0``."""
    if m == 0.0:
        return 1.0 / (beta1 * ages + 1.0 / v0)
    e = np.exp(-m * ages)
    return m * v0 / (beta1 * v0 * (1.0 - e) + m * e)


def envelope_check(sol: CoexistenceSolution, model: Model, slack: float = 0.05) -> EnvelopeCheck:
    """``v(a, x) <= f(a)`` with growth rate ``m = beta2 * max u``.

    Passes against the grid envelope within ``slack``; the closed-form margin
    is reported alongside.
    """
    g = model.grids
    p = model.params
    m = p.beta2 * float(np.max(sol.u))
    v0 = float(np.max(sol.v[0]))
    sup_v = np.max(sol.v, axis=1)
    disc = predator_envelope(v0, m, p.beta1, sol.path, g.age.da)
    cont = logistic_growth_envelope(v0, m, p.beta1, g.age.ages)
    margin = float(np.max(sup_v / disc)) - 1.0
    return EnvelopeCheck(margin <= slack, margin, float(np.max(sup_v / cont)) - 1.0, m, slack)


@dataclass(frozen=True)
class ParameterConstraints:
    xi_ok: bool
    eta_ok: bool
    xi_floor: float
    eta_floor: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.xi_ok and self.eta_ok


def parameter_constraints(
    sol: CoexistenceSolution,
    model: Model,
    u_eta: SemiTrivialSolution | Trivial,
    v_xi: SemiTrivialSolution | Trivial,
    tol: float = 1e-6,
) -> ParameterConstraints:
    """``xi >= 1/r(H2[-beta2 u_eta])`` and ``eta >= 1/r(H1[alpha2 v_xi])``."""
    g, p = model.grids, model.params
    pot_v = -p.beta2 * u_eta.field if u_eta else 0.0
    pot_u = p.alpha2 * v_xi.field if v_xi else 0.0
    xi_floor = 1.0 / spectral_radius(pot_v, model.predator, g).radius
    eta_floor = 1.0 / spectral_radius(pot_u, model.prey, g).radius
    return ParameterConstraints(
        sol.xi >= xi_floor - tol, sol.eta >= eta_floor - tol, xi_floor, eta_floor, tol
    )


def a_priori_bound(model: Model, eta: float, xi: float, u_eta: SemiTrivialSolution | Trivial) -> tuple[float, float]:
    """Sup-norm bounds ``(U, V)`` for any coexistence state at ``(eta, xi)``.

    ``U = sup u_eta``. With ``m = beta2 U`` the predator stays below the
    logistic-growth envelope ``f_c`` started at ``c = |v(0)|``, so ``c`` obeys
    ``c <= xi sup b2 int f_c``; ``V`` is the largest such ``c`` or the
    envelope plateau ``m / beta1``, whichever is larger.
    """
    g, p = model.grids, model.params
    big_u = float(np.max(u_eta.field)) if u_eta else 0.0
    m = p.beta2 * big_u
    bmax = float(np.max(model.predator.samples))
    ages, w = g.age.ages, g.age.weights

    def excess(c):
        return xi * bmax * float(w @ logistic_growth_envelope(c, m, p.beta1, ages)) - c

    hi = max(1.0, m / p.beta1)
    while excess(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    c_star = brentq(excess, lo, hi) if excess(lo) > 0 else lo
    return big_u, max(c_star, m / p.beta1)
