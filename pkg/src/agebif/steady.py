"""Single-species steady states: positive solutions of the logistic age flow
whose age-zero trace reproduces itself through the birth law.
"""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field as dc_field

import numpy as np
from scipy.optimize import brentq

from .birthop import (
    BirthProfile,
    assemble_birth_operator,
    birth_integral,
    resolve_birth,
    spectral_radius,
)
from .evolve import CONE_TOL, Grids, propagate_linear, propagate_logistic
from .model import Model, ModelParams  # noqa: F401  (re-exported)
from .spatial import ConvergenceError, DiscretizationError

NEWTON_TOL = 1e-10
TRIVIAL_TOL = 1e-10
STEP_RATIO = 1e-6


class NewtonDivergence(ConvergenceError):
    """Damped Newton made no progress (bad seed, grid, or parameter)."""


@dataclass(frozen=True)
class Trivial:
    """Marker returned when every seed collapses onto the zero solution."""

    param: float
    iterations: int = 0

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class SemiTrivialSolution:
    param: float
    alpha: float
    profile: BirthProfile = dc_field(repr=False)
    field: np.ndarray = dc_field(repr=False)
    trace: np.ndarray = dc_field(repr=False)
    newton_residual: float
    consistency: float
    iterations: int

    @property
    def sup(self) -> float:
        return float(np.max(self.field))


def _residual(c, eta, alpha, profile, grids):
    u = propagate_logistic(c, alpha, grids, allow_negative=True)
    return c - eta * birth_integral(profile, u, grids.age), u


def lower_bound(eta: float, alpha: float, grids: Grids) -> np.ndarray:
    """Pointwise lower envelope of the positive solution (age rows x nodes).

    ``lambda1/alpha * (eta - 1) / (eta (e^{lambda1 a} - 1) + 1 - e^{-lambda1 (a_m - a)}) * phi1``
    """
    lam = grids.lambda1
    a = grids.age.ages
    am = grids.age.a_max
    denom = eta * np.expm1(lam * a) + 1.0 - np.exp(-lam * (am - a))
    return np.outer((lam / alpha) * (eta - 1.0) / denom, grids.phi1)


def decay_envelope(c: float, alpha: float, grids: Grids) -> np.ndarray:
    """Backward-Euler solution of ``y' = -alpha y^2``, ``y(0) = c``, on the age grid.

    The implicit logistic step with the Dirichlet M-matrix cannot exceed this
    scalar recursion, so it bounds ``sup_x u(a, x)`` exactly on the grid.
    """
    dt = grids.age.da
    y = np.empty(grids.age.steps + 1)
    y[0] = c
    for k in range(grids.age.steps):
        y[k + 1] = 2.0 * y[k] / (1.0 + np.sqrt(1.0 + 4.0 * dt * alpha * y[k]))
    return y


def trace_bound(c: float, eta: float, alpha: float, profile: BirthProfile, grids: Grids) -> float:
    """``eta * sup b * int y(a) da`` with ``y`` the decay envelope from ``c``."""
    bmax = float(np.max(profile.samples))
    return eta * bmax * float(grids.age.weights @ decay_envelope(c, alpha, grids))


def upper_seed(eta: float, alpha: float, profile: BirthProfile, grids: Grids) -> np.ndarray:
    """Constant trace ``C`` with ``C >= trace_bound(C)``: a supersolution.

    Newton on the concave birth map started above the solution decreases
    monotonically onto it.
    """
    g = lambda c: trace_bound(c, eta, alpha, profile, grids) - c
    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    if g(lo) > 0:
        hi = brentq(g, lo, hi, xtol=1e-10 * hi)
    return np.full(grids.n, 1.05 * hi)


def default_seed(eta: float, alpha: float, profile: BirthProfile, grids: Grids) -> np.ndarray:
    return upper_seed(max(eta, 0.0), alpha, profile, grids)


def _newton(c, eta, alpha, profile, grids, tol, max_iter, max_halvings):
    """Damped Newton on the trace.

    Converged means a small residual *and* a Newton correction that is small
    relative to the iterate; iterates sliding into zero fail the second test.
    """
    F, u = _residual(c, eta, alpha, profile, grids)
    n = grids.n
    for it in range(max_iter + 1):
        size = float(np.max(np.abs(c)))
        nf = float(np.max(np.abs(F)))
        if size < TRIVIAL_TOL:
            return None, c, u, it, nf
        if it == max_iter:
            break
        jac = np.eye(n) - eta * assemble_birth_operator(2.0 * alpha * u, profile, grids, dense=True).matrix
        delta = np.linalg.solve(jac, -F)
        if nf <= tol * (1.0 + size) and np.max(np.abs(delta)) <= STEP_RATIO * size:
            # one free polishing step; keep it only if it helps
            Ft, ut = _residual(c + delta, eta, alpha, profile, grids)
            if np.max(np.abs(Ft)) <= nf:
                c, u, nf = c + delta, ut, float(np.max(np.abs(Ft)))
            return True, c, u, it + 1, nf
        s = 1.0
        for _ in range(max_halvings + 1):
            trial = c + s * delta
            if np.min(trial) >= -CONE_TOL:
                trial = np.maximum(trial, 0.0)
                Ft, ut = _residual(trial, eta, alpha, profile, grids)
                if np.max(np.abs(Ft)) < nf or np.max(np.abs(Ft)) <= tol * (1.0 + size):
                    c, F, u = trial, Ft, ut
                    break
            s *= 0.5
        else:
            raise NewtonDivergence(
                f"no decrease after {max_halvings} halvings at eta={eta}, |F|={nf:.3e}"
            )
    raise NewtonDivergence(f"no convergence in {max_iter} steps at eta={eta}, |F|={nf:.3e}")


def max_fertility(profile: BirthProfile, grids: Grids) -> float:
    """Largest intensity for which the discrete trace equation can have a positive solution."""
    w0 = float(profile.weights(grids.age)[0])
    return np.inf if w0 == 0.0 else 1.0 / w0


def solve_semitrivial(
    eta: float,
    alpha: float,
    profile: BirthProfile,
    grids: Grids,
    seed=None,
    tol: float = NEWTON_TOL,
    max_iter: int = 50,
    max_halvings: int = 8,
):
    """Positive solution of ``u' + L u = -alpha u^2``, ``u(0) = eta * int b u``.

    Newton runs on the age-zero trace with Jacobian ``1 - eta H_[2 alpha u]``.
    ``seed`` may be one vector or a list of vectors; :class:`Trivial` comes
    back only when every seed collapses to zero.
    """
    if not np.isfinite(eta):
        raise ValueError("eta must be finite")
    if eta >= max_fertility(profile, grids):
        newborn = eta * profile.weights(grids.age)[0]
        # c = eta * w0 * b0 * c + (positive rest) has no positive solution
        raise DiscretizationError(
            f"age step too coarse for eta={eta}: eta * b(0) * da/2 = {newborn:.3g} >= 1"
        )
    if seed is None:
        seeds = [default_seed(eta, alpha, profile, grids)]
    else:
        arr = np.asarray(seed, dtype=float)
        seeds = [arr] if arr.ndim == 1 else list(arr)
    total = 0
    for s0 in seeds:
        if np.min(s0) < -CONE_TOL:
            raise ValueError("seeds must be nonnegative")
        ok, c, u, its, nf = _newton(np.array(s0, dtype=float), eta, alpha, profile, grids, tol, max_iter, max_halvings)
        total += its
        if ok:
            r = spectral_radius(alpha * u, profile, grids).radius
            return SemiTrivialSolution(float(eta), alpha, profile, u, c, nf, abs(eta * r - 1.0), its)
    return Trivial(float(eta), total)


def solve_semitrivial_predator(xi: float, beta1: float, profile: BirthProfile, grids: Grids, seed=None, **kw):
    return solve_semitrivial(xi, beta1, profile, grids, seed=seed, **kw)


def prey_state(model: Model, eta: float, seed=None):
    return solve_semitrivial(eta, model.params.alpha1, model.prey, model.grids, seed=seed)


def predator_state(model: Model, xi: float, seed=None):
    return solve_semitrivial(xi, model.params.beta1, model.predator, model.grids, seed=seed)


def derivative_wrt_param(sol: SemiTrivialSolution, grids: Grids) -> np.ndarray:
    """``d u / d eta``: ``z(0) = (1 - eta H_[2 alpha u])^{-1} U``, then ``z = Pi_[2 alpha u] z(0)``."""
    pot = 2.0 * sol.alpha * sol.field
    births = birth_integral(sol.profile, sol.field, grids.age)
    z0 = resolve_birth(sol.param, pot, sol.profile, births, grids)
    return propagate_linear(pot, z0, grids)


@dataclass(frozen=True)
class EnvelopeReport:
    lower_ok: bool
    upper_ok: bool
    trace_ok: bool
    lower_margin: float
    upper_margin: float
    trace_margin: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok and self.trace_ok


def verify_envelopes(sol: SemiTrivialSolution, grids: Grids, slack: float = 0.05) -> EnvelopeReport:
    """Check the explicit lower and upper envelopes and the trace log-inequality.

    The upper envelope and trace bound use :func:`decay_envelope`, the grid
    counterpart of ``1/(alpha a + 1/c)``; the continuum curve lags the
    implicit step by ``O(da * c)`` and fails for large traces on coarse age
    grids. Margins are relative; each check passes within ``slack``.
    """
    eta, alpha, u = sol.param, sol.alpha, sol.field
    if eta <= 1.0:
        lower_margin = float("inf")
    else:
        low = lower_bound(eta, alpha, grids)
        lower_margin = float(np.min(u / low)) - 1.0

    c = float(np.max(u[0]))
    psi = decay_envelope(c, alpha, grids)
    upper_margin = float(np.max(np.max(u, axis=1) / psi)) - 1.0
    trace_margin = c / trace_bound(c, eta, alpha, sol.profile, grids) - 1.0
    return EnvelopeReport(
        lower_margin >= -slack,
        upper_margin <= slack,
        trace_margin <= slack,
        lower_margin,
        upper_margin,
        trace_margin,
        slack,
    )


def continuum_envelopes(sol: SemiTrivialSolution, grids: Grids) -> tuple[np.ndarray, float]:
    """Continuum upper envelope ``1/(alpha a + 1/c)`` and log trace bound, for reporting."""
    alpha, c = sol.alpha, float(np.max(sol.field[0]))
    psi = 1.0 / (alpha * grids.age.ages + 1.0 / c)
    bmax = float(np.max(sol.profile.samples))
    return psi, sol.param * bmax / alpha * np.log(alpha * grids.age.a_max * c + 1.0)
