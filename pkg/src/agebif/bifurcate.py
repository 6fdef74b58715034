"""Bifurcation points off the semi-trivial branches, kernel directions at
those points, and natural-parameter continuation of the coexistence branches.

Branch kinds:

* ``B3_in_xi``: fixed ``eta``, leaves ``(xi0(eta), u_eta, 0)`` as ``xi`` grows.
* ``S3_in_eta``: fixed ``xi``, leaves ``(eta0(xi), 0, v_xi)`` as ``eta`` grows.
* ``S4_in_eta``: fixed ``xi < 1``, leaves ``(eta1(xi), u_eta, 0)`` as ``eta`` grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .birthop import KreinRutmanResult, birth_integral, resolve_birth, spectral_radius
from .coexist import CoexistenceSolution, SemiTrivialLimit, solve_coexistence
from .evolve import (
    SubstepLimitError,
    coupled_path,
    propagate_linear,
    propagate_linearized,
)
from .model import Model
from .spatial import ConvergenceError
from .steady import SemiTrivialSolution, max_fertility, predator_state, prey_state

BRACKET_XTOL = 1e-8
JOIN_RATIO = 1e-6
# fraction of the largest admissible intensity used as a search or continuation bound
ADMISSIBLE = 0.99
SEED_MULTIPLES = (1.0, 2.0, 4.0, 0.5)


class NotFound(LookupError):
    """No sign change of the defining spectral equation inside the bracket."""


@dataclass(frozen=True)
class BifurcationPoint:
    kind: str  # xi0, eta0, xi1, eta1
    fixed: float  # the other parameter
    value: float
    spectral_residual: float
    radius: KreinRutmanResult = field(repr=False)
    anchored_semitrivial: SemiTrivialSolution = field(repr=False)


def _bracket_residual(value: float, kr: KreinRutmanResult) -> float:
    return max(abs(value * kr.lower - 1.0), abs(value * kr.upper - 1.0))


def _require(sol, name: str, param: float) -> SemiTrivialSolution:
    if not sol:
        raise ValueError(f"{name} state is trivial at parameter {param}; need a value above 1")
    return sol


def _prey_spectrum(model: Model, v: SemiTrivialSolution | None) -> KreinRutmanResult:
    pot = model.params.alpha2 * v.field if v else 0.0
    return spectral_radius(pot, model.prey, model.grids)


def _predator_spectrum(model: Model, u: SemiTrivialSolution | None) -> KreinRutmanResult:
    pot = -model.params.beta2 * u.field if u else 0.0
    return spectral_radius(pot, model.predator, model.grids)


def xi0(model: Model, eta: float) -> BifurcationPoint:
    """``1 / r(H2[-beta2 u_eta])``: where the predator invades the prey-only state."""
    u = _require(prey_state(model, eta), "prey", eta)
    kr = _predator_spectrum(model, u)
    value = 1.0 / kr.radius
    return BifurcationPoint("xi0", float(eta), value, _bracket_residual(value, kr), kr, u)


def eta0(model: Model, xi: float) -> BifurcationPoint:
    """``1 / r(H1[alpha2 v_xi])``: where the prey invades the predator-only state."""
    v = _require(predator_state(model, xi), "predator", xi)
    kr = _prey_spectrum(model, v)
    value = 1.0 / kr.radius
    return BifurcationPoint("eta0", float(xi), value, _bracket_residual(value, kr), kr, v)


def _bracket(g, lo: float, hi: float, kind: str, fixed: float):
    glo = g(lo)
    while True:
        try:
            ghi = g(hi)
            break
        except SubstepLimitError:
            # the far end is too stiff to resolve; the radius is monotone, so shrink toward lo
            hi = lo + 0.8 * (hi - lo)
            if hi - lo <= BRACKET_XTOL:
                raise NotFound(f"{kind} at {fixed}: no resolvable bracket end above {lo}")
    if glo == 0.0:
        return lo
    if np.sign(glo) == np.sign(ghi):
        raise NotFound(f"{kind} at {fixed}: no sign change on [{lo}, {hi}] (values {glo:.3e}, {ghi:.3e})")
    return brentq(g, lo, hi, xtol=BRACKET_XTOL, rtol=4 * np.finfo(float).eps)


def xi1(model: Model, eta: float, xi_max: float = 10.0) -> BifurcationPoint:
    """Root of ``eta * r(H1[alpha2 v_xi]) = 1`` in ``xi > 1`` (the radius falls with ``xi``)."""
    if not eta > 1.0:
        raise ValueError("xi1 needs eta > 1")

    def g(xi):
        v = predator_state(model, xi) if xi > 1.0 else None
        return eta * _prey_spectrum(model, v).radius - 1.0

    hi = min(xi_max, ADMISSIBLE * max_fertility(model.predator, model.grids))
    value = _bracket(g, 1.0, hi, "xi1", eta)
    v = _require(predator_state(model, value), "predator", value)
    kr = _prey_spectrum(model, v)
    return BifurcationPoint("xi1", float(eta), value, abs(eta * kr.radius - 1.0), kr, v)


def eta1(model: Model, xi: float, eta_max: float = 10.0) -> BifurcationPoint:
    """Root of ``xi * r(H2[-beta2 u_eta]) = 1`` in ``eta > 1`` (the radius grows with ``eta``)."""
    if not 0.0 < xi < 1.0:
        raise ValueError("eta1 needs 0 < xi < 1")

    def g(eta):
        u = prey_state(model, eta) if eta > 1.0 else None
        return xi * _predator_spectrum(model, u).radius - 1.0

    hi = min(eta_max, ADMISSIBLE * max_fertility(model.prey, model.grids))
    value = _bracket(g, 1.0, hi, "eta1", xi)
    u = _require(prey_state(model, value), "prey", value)
    kr = _predator_spectrum(model, u)
    return BifurcationPoint("eta1", float(xi), value, abs(xi * kr.radius - 1.0), kr, u)


@dataclass(frozen=True)
class LimitEstimates:
    """Bounds on the thresholds beyond which the coexistence windows close.

    ``n_lower`` bounds from below the prey intensity above which ``xi1`` no
    longer exists; ``delta_upper`` bounds from above the predator intensity
    below which ``eta1`` no longer exists. ``table`` rows are
    ``(parameter, 1/r(H1[alpha2 v_p]), 1/r(H2[-beta2 u_p]))``.
    """

    n_lower: float
    delta_upper: float
    table: list = field(repr=False)
    eta_max: float = float("nan")
    xi_max: float = float("nan")


def _resolvable(fn, model: Model, hi: float):
    """``fn(model, hi)``, backing ``hi`` off toward 1 while the flow is too stiff to resolve."""
    while True:
        try:
            return fn(model, hi), hi
        except SubstepLimitError:
            hi = 1.0 + 0.8 * (hi - 1.0)
            if hi - 1.0 <= BRACKET_XTOL:
                raise


def estimate_limits(model: Model, eta_max: float, xi_max: float, samples: int = 6) -> LimitEstimates:
    """Evaluate the bounds at ``eta_max`` and ``xi_max``.

    Both are clipped to the admissible range of the grid and backed off
    further where the predator flow would need more substeps than allowed;
    the bounds actually used are reported.
    """
    if not (eta_max > 1.0 and xi_max > 1.0):
        raise ValueError("bounds must exceed 1")
    eta_max = min(eta_max, ADMISSIBLE * max_fertility(model.prey, model.grids))
    xi_max = min(xi_max, ADMISSIBLE * max_fertility(model.predator, model.grids))
    low, xi_max = _resolvable(eta0, model, xi_max)
    up, eta_max = _resolvable(xi0, model, eta_max)
    nan = float("nan")
    table = []
    for p in np.geomspace(1.0 + 1e-2, max(eta_max, xi_max), samples):
        a = eta0(model, p).value if p <= xi_max else nan
        b = xi0(model, p).value if p <= eta_max else nan
        table.append((float(p), a, b))
    return LimitEstimates(low.value, up.value, table, float(eta_max), float(xi_max))


# -- kernel directions -----------------------------------------------------


@dataclass(frozen=True)
class KernelBasis:
    """Null direction ``(phi_star, psi_star)`` of the linearized fixed-point map.

    For bifurcation off the prey-only state the prey perturbation is
    ``-phi_star``; off the predator-only state both components enter with
    a plus sign.
    """

    point: BifurcationPoint
    base: str  # "prey" or "predator": which semi-trivial state is perturbed
    phi_star: np.ndarray = field(repr=False)
    psi_star: np.ndarray = field(repr=False)
    phi0: np.ndarray = field(repr=False)
    psi0: np.ndarray = field(repr=False)
    eigen_residual: float

    @property
    def prey_sign(self) -> float:
        return -1.0 if self.base == "prey" else 1.0


def _fixed_point_residual(model: Model, eta: float, xi: float, base_u, base_v, w0, z0, w, z) -> float:
    """Apply the linearized fixed-point map to ``(w0, z0)`` and compare."""
    g = model.grids
    path = coupled_path(base_u, base_v, model.params, g)
    W, Z = propagate_linearized(path.u, path.v, model.params, g, (w0, z0), path=path)
    ku = eta * birth_integral(model.prey, W, g.age)
    kv = xi * birth_integral(model.predator, Z, g.age)
    scale = max(float(np.max(np.abs(w))), float(np.max(np.abs(z))))
    return max(
        float(np.max(np.abs(ku - w0))),
        float(np.max(np.abs(kv - z0))),
        float(np.max(np.abs(W - w))),
        float(np.max(np.abs(Z - z))),
    ) / scale


def _kernel_off_prey(model: Model, eta: float, xi: float, u: SemiTrivialSolution, kr: KreinRutmanResult, point) -> KernelBasis:
    g, p = model.grids, model.params
    psi0 = kr.eigvec / np.max(kr.eigvec)
    psi_star = propagate_linear(-p.beta2 * u.field, psi0, g)
    n_psi = propagate_linear(2.0 * p.alpha1 * u.field, np.zeros(g.n), g, source=p.alpha2 * u.field * psi_star)
    pot = 2.0 * p.alpha1 * u.field
    phi0 = eta * resolve_birth(eta, pot, model.prey, birth_integral(model.prey, n_psi, g.age), g)
    phi_star = propagate_linear(pot, phi0, g) + n_psi
    res = _fixed_point_residual(model, eta, xi, u.trace, np.zeros(g.n), -phi0, psi0, -phi_star, psi_star)
    return KernelBasis(point, "prey", phi_star, psi_star, phi0, psi0, res)


def kernel_basis_xi(model: Model, eta: float) -> KernelBasis:
    """Kernel at ``(xi0(eta), u_eta, 0)``."""
    pt = xi0(model, eta)
    return _kernel_off_prey(model, eta, pt.value, pt.anchored_semitrivial, pt.radius, pt)


def kernel_basis_eta(model: Model, xi: float, eta_max: float = 10.0) -> KernelBasis:
    """Kernel at ``(eta1(xi), u_eta1, 0)`` for ``xi < 1``."""
    pt = eta1(model, xi, eta_max)
    return _kernel_off_prey(model, pt.value, xi, pt.anchored_semitrivial, pt.radius, pt)


def kernel_basis_predator(model: Model, xi: float) -> KernelBasis:
    """Kernel at ``(eta0(xi), 0, v_xi)``: the prey invades, the predator gains."""
    g, p = model.grids, model.params
    pt = eta0(model, xi)
    v = pt.anchored_semitrivial
    phi0 = pt.radius.eigvec / np.max(pt.radius.eigvec)
    phi_star = propagate_linear(p.alpha2 * v.field, phi0, g)
    pot = 2.0 * p.beta1 * v.field
    n_phi = propagate_linear(pot, np.zeros(g.n), g, source=p.beta2 * v.field * phi_star)
    psi0 = xi * resolve_birth(xi, pot, model.predator, birth_integral(model.predator, n_phi, g.age), g)
    psi_star = propagate_linear(pot, psi0, g) + n_phi
    res = _fixed_point_residual(model, pt.value, xi, np.zeros(g.n), v.trace, phi0, psi0, phi_star, psi_star)
    return KernelBasis(pt, "predator", phi_star, psi_star, phi0, psi0, res)


# -- continuation ----------------------------------------------------------


@dataclass(frozen=True)
class BranchPoint:
    param: float
    trace_u: np.ndarray = field(repr=False)
    trace_v: np.ndarray = field(repr=False)
    sup_u: float
    sup_v: float
    l2_u: float
    l2_v: float
    residual: float
    iterations: int
    substeps: int = 1


@dataclass
class Branch:
    kind: str
    fixed: float
    anchor: float
    points: list = field(default_factory=list)
    termination: str = ""
    join_param: float | None = None
    message: str = ""

    @property
    def params(self) -> np.ndarray:
        return np.array([p.param for p in self.points])


BRANCH_KINDS = ("B3_in_xi", "S3_in_eta", "S4_in_eta")


def _record(model: Model, param: float, sol: CoexistenceSolution) -> BranchPoint:
    g = model.grids
    return BranchPoint(
        float(param),
        sol.trace_u,
        sol.trace_v,
        sol.sup_u,
        sol.sup_v,
        g.l2_norm(sol.u),
        g.l2_norm(sol.v),
        max(sol.residuals),
        sol.iterations,
        sol.substeps,
    )


def _params_for(kind: str, fixed: float, param: float) -> tuple[float, float]:
    return (fixed, param) if kind == "B3_in_xi" else (param, fixed)


def continue_branch(
    model: Model,
    kind: str,
    basis: KernelBasis,
    step0: float = 0.01,
    param_limit: float = 10.0,
    point_cap: int = 200,
    min_step: float = 1e-4,
    max_step: float = 0.25,
    join_step: float = 1e-3,
) -> Branch:
    """Natural-parameter continuation with secant predictor.

    The first point sits at ``anchor + step0`` and is seeded by the kernel
    direction scaled as ``eps = step0 * |background| / |perturbation|``; if
    that lands back on the semi-trivial state, multiples of ``eps`` from
    ``SEED_MULTIPLES`` are tried before the step is halved.
    Failed correctors halve the step; easy ones grow it by 1.5. On a
    ``B3_in_xi`` branch a corrector that lands on ``u = 0`` triggers step
    halving down to ``join_step``, after which the join parameter is
    extrapolated linearly from the last two sup-norms of ``u``.
    Each point carries the substep count it was solved with, the smallest
    one its own prey trace allows.
    """
    if kind not in BRANCH_KINDS:
        raise ValueError(f"unknown branch kind {kind!r}; expected one of {BRANCH_KINDS}")
    expected = {"B3_in_xi": "xi0", "S3_in_eta": "eta0", "S4_in_eta": "eta1"}[kind]
    if basis.point.kind != expected:
        raise ValueError(f"{kind} starts from a {expected} point, got {basis.point.kind}")
    fixed, anchor = basis.point.fixed, basis.point.value
    profile = model.predator if kind == "B3_in_xi" else model.prey
    param_limit = min(param_limit, ADMISSIBLE * max_fertility(profile, model.grids))
    branch = Branch(kind, fixed, anchor)
    background = basis.point.anchored_semitrivial
    ref_scale = float(np.max(background.field))

    def seed_at(step, mult):
        param = anchor + step
        if basis.base == "prey":
            bg = background if kind == "B3_in_xi" else prey_state(model, param)
            eps = mult * step * float(np.max(bg.field)) / float(np.max(np.abs(basis.phi_star)))
            return param, (np.maximum(bg.trace - eps * basis.phi0, 0.0), eps * basis.psi0)
        eps = mult * step * ref_scale / float(np.max(np.abs(basis.psi_star)))
        return param, (eps * basis.phi0, background.trace + eps * basis.psi0)

    def correct(param, seed):
        eta, xi = _params_for(kind, fixed, param)
        try:
            return solve_coexistence(model, eta, xi, seed)
        except (ConvergenceError, SubstepLimitError, ValueError) as exc:
            return exc

    def off_base(sol):
        # a corrector that slid back onto the semi-trivial state is not a branch point
        invader = sol.sup_v if basis.base == "prey" else sol.sup_u
        return invader > JOIN_RATIO * ref_scale

    # first point: the scaled kernel seed, then a few amplitude multiples
    step = min(step0, param_limit - anchor)
    sol = None
    while sol is None:
        for mult in SEED_MULTIPLES:
            param, seed = seed_at(step, mult)
            trial = correct(param, seed)
            if isinstance(trial, CoexistenceSolution) and off_base(trial):
                sol = trial
                break
        else:
            step *= 0.5
            if step < min_step:
                branch.termination = "step_failure"
                branch.message = f"no coexistence state near the anchor: {trial!r}"
                return branch
    branch.points.append(_record(model, param, sol))
    collapsed_at = None

    while True:
        if len(branch.points) >= point_cap:
            branch.termination = "point_cap"
            return branch
        cur = branch.points[-1]
        if cur.param >= param_limit - 1e-14:
            branch.termination = "param_limit"
            return branch
        if collapsed_at is not None and collapsed_at - cur.param <= join_step:
            # successful points crept up on an earlier collapse
            branch.termination = "joined_B1"
            branch.join_param = _extrapolate_join(branch.points, collapsed_at)
            return branch
        step = min(step, max_step, param_limit - cur.param)
        if collapsed_at is not None:
            step = min(step, 0.5 * (collapsed_at - cur.param))
        new_param = cur.param + step
        if not new_param > cur.param:
            branch.termination = "step_failure"
            branch.message = f"step underflow at {cur.param}"
            return branch
        c_now = np.concatenate([cur.trace_u, cur.trace_v])
        if len(branch.points) >= 2:
            prev = branch.points[-2]
            c_prev = np.concatenate([prev.trace_u, prev.trace_v])
            c_pred = c_now + (c_now - c_prev) * (step / (cur.param - prev.param))
        else:
            c_pred = c_now
        c_pred = np.maximum(c_pred, 0.0)
        n = model.grids.n
        sol = correct(new_param, (c_pred[:n], c_pred[n:]))
        if isinstance(sol, CoexistenceSolution) and sol.sup_u <= JOIN_RATIO * ref_scale and kind == "B3_in_xi":
            sol = SemiTrivialLimit(sol.eta, sol.xi, "predator", sol.trace_u, sol.trace_v, sol.iterations)
        if isinstance(sol, CoexistenceSolution) and not off_base(sol):
            sol = ValueError("corrector returned to the semi-trivial state")
        if isinstance(sol, CoexistenceSolution):
            branch.points.append(_record(model, new_param, sol))
            if sol.iterations <= 4 and collapsed_at is None:
                step = min(1.5 * step, max_step)
            continue
        if kind == "B3_in_xi" and isinstance(sol, SemiTrivialLimit) and sol.survivor == "predator":
            collapsed_at = new_param if collapsed_at is None else min(collapsed_at, new_param)
            if collapsed_at - cur.param <= join_step:
                branch.termination = "joined_B1"
                branch.join_param = _extrapolate_join(branch.points, collapsed_at)
                return branch
            step = 0.5 * (collapsed_at - cur.param)
            continue
        step *= 0.5
        if step < min_step:
            branch.termination = "step_failure"
            branch.message = f"corrector failed at {new_param}: {sol!r}"
            return branch


def _extrapolate_join(points: list, collapsed_at: float) -> float:
    """Zero of the line through the last two ``(param, sup u)`` pairs, clipped to the bracket."""
    last = points[-1]
    if len(points) < 2:
        return 0.5 * (last.param + collapsed_at)
    prev = points[-2]
    slope = (last.sup_u - prev.sup_u) / (last.param - prev.param)
    if slope >= 0:
        return 0.5 * (last.param + collapsed_at)
    guess = last.param - last.sup_u / slope
    return float(min(max(guess, last.param), collapsed_at))
