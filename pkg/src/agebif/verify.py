"""Runnable invariant suite: one record per check, grouped so groups can run concurrently."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bifurcate import (
    NotFound,
    continue_branch,
    eta0,
    kernel_basis_eta,
    kernel_basis_predator,
    kernel_basis_xi,
    xi0,
    xi1,
)
from .birthop import resolve_birth, spectral_radius
from .coexist import (
    CoexistenceSolution,
    a_priori_bound,
    envelope_check,
    ordering_check,
    parameter_constraints,
    trace_residual,
)
from .config import ScenarioConfig
from .evolve import make_grids, propagate_coupled, propagate_linear, propagate_logistic
from .spatial import DiscretizationError, closed_form_lambda1
from .steady import (
    derivative_wrt_param,
    max_fertility,
    predator_state,
    prey_state,
    solve_semitrivial,
    verify_envelopes,
)


@dataclass(frozen=True)
class CheckRecord:
    name: str
    anchor: str  # the mathematical claim under test
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


@dataclass
class RunReport:
    records: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    @property
    def failures(self) -> list:
        return [r for r in self.records if not r.passed]

    def to_dict(self, timings: bool = False) -> dict:
        """Report as plain data; timings are opt-in so reruns compare byte for byte."""
        out = {"passed": self.passed, "records": [asdict(r) for r in self.records], "config": self.config}
        if timings:
            out["timings"] = self.timings
        return out


def slack_for(cfg: ScenarioConfig) -> float:
    """Discretization slack, widened in proportion on grids coarser than desk scale."""
    return cfg.run.slack * max(1.0, 64.0 / cfg.grid.n_interior, 128.0 / cfg.age.steps)


def _rec(out, name, anchor, passed, value, tol, detail=""):
    out.append(CheckRecord(name, anchor, bool(passed), float(value), float(tol), detail))


# -- groups ----------------------------------------------------------------


def _spatial(cfg, model, rng):
    out = []
    g = model.grids
    exact = closed_form_lambda1(g.space)
    err = abs(g.lambda1 - exact) / exact
    _rec(out, "eigenpair_closed_form", "discrete principal eigenvalue equals the closed form", err <= 1e-12, err, 1e-12)
    fine = make_grids(99, cfg.grid.length, cfg.age.a_max, 16)
    dev = abs(fine.lambda1 - (np.pi / cfg.grid.length) ** 2)
    _rec(out, "eigenvalue_continuum", "principal eigenvalue approaches (pi/L)^2 at n = 99", dev <= 0.01, dev, 0.01)
    return out


def _birthop(cfg, model, rng):
    out = []
    g = model.grids
    for name, prof in (("prey", model.prey), ("predator", model.predator)):
        r = spectral_radius(0.0, prof, g).radius
        _rec(out, f"normalization_{name}", "normalized birth operator without mortality has radius one", abs(r - 1.0) <= 1e-8, abs(r - 1.0), 1e-8)
    k = np.arange(g.age.steps + 1)
    worst = 0.0
    for c in (0.5, 1.0, 5.0):
        scalar = float(np.sum(model.prey.weights(g.age) * (1.0 + g.age.da * (g.lambda1 + c)) ** -k))
        worst = max(worst, abs(spectral_radius(c, model.prey, g).radius - scalar))
    _rec(out, "scalar_reduction", "constant potentials act on the principal mode by a scalar recursion", worst <= 1e-10, worst, 1e-10)
    strict = 0
    for _ in range(cfg.run.trials):
        h = rng.uniform(0.0, 3.0, g.shape)
        bump = np.zeros(g.shape)
        i, j = rng.integers(1, g.shape[0]), rng.integers(0, g.n)
        bump[max(i - 3, 1): i + 3, max(j - 3, 0): j + 3] = rng.uniform(0.5, 2.0)
        if spectral_radius(h + bump, model.prey, g).radius < spectral_radius(h, model.prey, g).radius:
            strict += 1
    _rec(out, "radius_monotone", "spectral radius strictly decreases when the potential grows", strict == cfg.run.trials, strict, cfg.run.trials)
    rhs = rng.uniform(0.0, 1.0, g.n)
    x = resolve_birth(0.8, 0.0, model.prey, rhs, g)
    _rec(out, "resolvent_positive", "the resolvent below the spectral threshold is positive", np.min(x) >= 0, np.min(x), 0.0)
    return out


def _evolve(cfg, model, rng):
    out = []
    g = model.grids
    h = rng.uniform(0.0, 5.0, g.shape)
    phi = rng.uniform(0.0, 1.0, g.n)
    rows = propagate_linear(h, phi, g)
    _rec(out, "linear_positivity", "nonnegative data stay strictly positive under the linear flow", np.min(rows[1:]) > 0, np.min(rows[1:]), 0.0)
    lower = propagate_linear(h, 0.5 * phi, g)
    gap = float(np.min(rows - lower))
    _rec(out, "linear_order", "the linear flow preserves the order of initial data", gap >= 0, gap, 0.0)
    base = propagate_logistic(phi * 10, 1.0, g)
    forced = propagate_logistic(phi * 10, 1.0, g, source=rng.uniform(0.0, 2.0, g.shape))
    gap = float(np.min(forced - base))
    _rec(out, "logistic_comparison", "a nonnegative source raises the logistic flow", gap >= -1e-12, gap, -1e-12)
    env = 1.0 / (g.age.ages + 1.0 / 10.0)
    excess = float(np.max(np.max(base, axis=1) - env * (1 + slack_for(cfg))))
    _rec(out, "logistic_envelope", "the logistic flow stays below the spatially constant solution", excess <= 0, excess, 0.0)
    u, v = propagate_coupled(phi, np.zeros(g.n), model.params, g)
    dev = float(np.max(np.abs(u - propagate_logistic(phi, model.params.alpha1, g))))
    _rec(out, "coupled_decouples", "without predators the coupled flow is the prey logistic flow", dev <= 1e-12 and np.max(np.abs(v)) == 0, dev, 1e-12)
    return out


def _steady(cfg, model, rng):
    out = []
    g = model.grids
    s = slack_for(cfg)
    a1 = model.params.alpha1
    for eta in (0.5, 0.9):
        seeds = rng.uniform(0.0, 50.0, (cfg.run.trials, g.n))
        res = solve_semitrivial(eta, a1, model.prey, g, seed=seeds)
        _rec(out, f"trivial_eta_{eta}", "subcritical fertility admits only the zero steady state", not res, 0.0 if not res else res.sup, 0.0)
    for eta in (1.2, 2.0, 5.0):
        try:
            sol = prey_state(model, eta)
        except DiscretizationError as exc:
            _rec(out, f"nontrivial_eta_{eta}", "supercritical fertility yields a positive steady state", False, eta, max_fertility(model.prey, g), str(exc))
            continue
        if not sol:
            _rec(out, f"nontrivial_eta_{eta}", "supercritical fertility yields a positive steady state", False, 0.0, 0.0, "collapsed to zero")
            continue
        _rec(out, f"spectral_identity_eta_{eta}", "the steady state sits exactly at spectral radius one", sol.consistency <= 1e-6, sol.consistency, 1e-6)
        env = verify_envelopes(sol, g, slack=s)
        _rec(out, f"envelopes_eta_{eta}", "lower envelope, decay envelope and trace bound hold", env.passed, min(env.lower_margin, -env.upper_margin, -env.trace_margin), -s)
    ref = prey_state(model, 2.0)
    seeds = rng.uniform(0.0, 100.0, (cfg.run.trials, g.n))
    spread = max(float(np.max(np.abs(solve_semitrivial(2.0, a1, model.prey, g, seed=sd).trace - ref.trace))) for sd in seeds)
    _rec(out, "uniqueness", "all positive seeds reach the same steady state", spread <= 1e-8, spread, 1e-8)
    gap = float(np.min(prey_state(model, 3.0).field - ref.field))
    _rec(out, "monotone_in_eta", "steady states grow with fertility", gap >= -1e-12, gap, -1e-12)
    sol = prey_state(model, 1.5)
    z = derivative_wrt_param(sol, g)
    _rec(out, "derivative_positive", "the steady state grows strictly with fertility", np.min(z[1:]) > 0 and np.min(z[0]) > 0, float(np.min(z)), 0.0)
    eps = 1e-4
    fd = (prey_state(model, 1.5 + eps).field - prey_state(model, 1.5 - eps).field) / (2 * eps)
    err = float(np.max(np.abs(fd - z)))
    tol = max(1e-4, 10 * eps**2)
    _rec(out, "derivative_fd", "fertility derivative matches central differences", err <= tol, err, tol)
    pred = predator_state(model, 1.5)
    val = pred.consistency if pred else float("inf")
    _rec(out, "predator_identity", "predator-only state sits at spectral radius one", val <= 1e-6, val, 1e-6)
    return out


def _bifpoints(cfg, model, rng):
    out = []
    etas = sorted(e for e in cfg.run.eta if e > 1.0)
    xis = sorted(x for x in cfg.run.xi if x > 1.0)
    pts = [xi0(model, e) for e in etas]
    vals = [p.value for p in pts]
    ok = all(0 < v < 1 for v in vals) and all(b < a for a, b in zip(vals, vals[1:]))
    _rec(out, "xi0_window", "predator invasion threshold lies in (0,1) and falls with prey fertility", ok, min(vals, default=0.0), 0.0, repr(vals))
    qts = [eta0(model, x) for x in xis]
    wals = [q.value for q in qts]
    ok = all(w > 1 for w in wals) and all(b > a for a, b in zip(wals, wals[1:]))
    _rec(out, "eta0_window", "prey invasion threshold exceeds one and rises with predator fertility", ok, min(wals, default=0.0), 1.0, repr(wals))
    worst = max([p.spectral_residual for p in pts + qts], default=0.0)
    _rec(out, "bifpoint_residuals", "bifurcation values solve their spectral equations", worst <= 1e-8, worst, 1e-8)
    for eta in (1.3, 2.0):
        kb = kernel_basis_xi(model, eta)
        ok = kb.eigen_residual <= 1e-6 and np.min(kb.psi0) > 0
        _rec(out, f"kernel_xi_eta_{eta}", "kernel direction is a fixed point of the linearized map", ok, kb.eigen_residual, 1e-6)
    try:
        kb = kernel_basis_eta(model, 0.9, cfg.run.eta_max)
        ok = kb.eigen_residual <= 1e-6 and np.min(kb.psi0) > 0
        _rec(out, "kernel_eta_xi_0.9", "kernel direction is a fixed point of the linearized map", ok, kb.eigen_residual, 1e-6)
    except NotFound as exc:
        _rec(out, "kernel_eta_xi_0.9", "kernel direction is a fixed point of the linearized map", True, 0.0, 1e-6, f"not found: {exc}")
    return out


def _revalidate(model, eta, xi, point):
    fu, fv, path = trace_residual(model, eta, xi, point.trace_u, point.trace_v, point.substeps)
    res = (float(np.max(np.abs(fu))), float(np.max(np.abs(fv))))
    return CoexistenceSolution(eta, xi, path.u, path.v, point.trace_u, point.trace_v, res, 0, path)


def _branch_b3(cfg, model, rng):
    out = []
    s = slack_for(cfg)
    eta = 1.3
    t0 = time.perf_counter()
    kb = kernel_basis_xi(model, eta)
    br = continue_branch(model, "B3_in_xi", kb, cfg.run.step0, cfg.run.xi_limit, cfg.run.point_cap)
    elapsed = time.perf_counter() - t0
    n = len(br.points)
    _rec(out, "b3_points", "the coexistence branch leaving the prey-only state is traced", n >= 10, n, 10, br.termination)
    right = all(p.param > kb.point.value for p in br.points)
    _rec(out, "b3_right", "coexistence bifurcates to the right", right, min(br.params, default=0.0) - kb.point.value, 0.0)
    try:
        target = xi1(model, eta, cfg.run.xi_max).value
    except NotFound:
        target = float("nan")
    joined = br.termination == "joined_B1" and br.join_param is not None
    dist = abs(br.join_param - target) if joined else float("inf")
    _rec(out, "b3_join", "the branch ends on the predator-only state at xi1", joined and dist <= 1e-2, dist, 1e-2, f"xi_hat={br.join_param}, xi1={target}")
    if joined:
        vx = predator_state(model, br.join_param)
        rel = float(np.max(np.abs(br.points[-1].trace_v - vx.trace)) / np.max(vx.trace)) if vx else float("inf")
        _rec(out, "b3_join_trace", "the last branch point is close to the predator-only state", rel <= s, rel, s)
    u_eta = kb.point.anchored_semitrivial
    order_ok = lim_ok = env_ok = reval_ok = True
    worst_res = 0.0
    for p in br.points:
        sol = _revalidate(model, eta, p.param, p)
        worst_res = max(worst_res, *sol.residuals)
        v_xi = predator_state(model, p.param)
        order_ok &= ordering_check(sol, u_eta, v_xi).passed
        lim_ok &= parameter_constraints(sol, model, u_eta, v_xi).passed
        env_ok &= envelope_check(sol, model, slack=s).passed
    reval_ok = worst_res <= 1e-8
    _rec(out, "b3_ordering", "coexistence prey stays below u_eta and predator above v_xi", order_ok, 0.0, 0.0)
    _rec(out, "b3_thresholds", "branch points respect both invasion thresholds", lim_ok, 0.0, 1e-6)
    _rec(out, "b3_envelope", "predators stay below the logistic growth envelope", env_ok, 0.0, s)
    _rec(out, "b3_revalidate", "stored traces reproduce steady states", reval_ok, worst_res, 1e-8)
    _rec(out, "b3_runtime", "branch continuation completes at desk scale", elapsed < 60.0, elapsed, 60.0)
    return out


def _branch_s3(cfg, model, rng):
    out = []
    xi = 2.0
    kb = kernel_basis_predator(model, xi)
    br = continue_branch(model, "S3_in_eta", kb, cfg.run.step0, cfg.run.eta_limit, cfg.run.point_cap)
    ok = br.termination == "param_limit" and len(br.points) > 0
    reached = br.points[-1].param if br.points else 0.0
    ok = ok and reached >= cfg.run.eta_limit - 1e-12
    _rec(out, "s3_reaches_limit", "the branch leaving the predator-only state runs to the parameter limit", ok, reached, cfg.run.eta_limit, br.termination)
    bound_ok = True
    worst = -np.inf
    for p in br.points:
        U, V = a_priori_bound(model, p.param, xi, prey_state(model, p.param))
        ratio = max(p.sup_u / U, p.sup_v / V)
        worst = max(worst, ratio)
        bound_ok &= ratio <= 1.0 and min(p.sup_u, p.sup_v) > 0
    _rec(out, "s3_bounded", "sup-norms stay below the a priori bound", bound_ok, worst, 1.0)
    return out


GROUPS = {
    "spatial": _spatial,
    "birthop": _birthop,
    "evolve": _evolve,
    "steady": _steady,
    "bifpoints": _bifpoints,
    "branch_b3": _branch_b3,
    "branch_s3": _branch_s3,
}


def run_group(cfg: ScenarioConfig, name: str, seed: int):
    rng = np.random.default_rng([seed, list(GROUPS).index(name)])
    t0 = time.perf_counter()
    try:
        records = GROUPS[name](cfg, cfg.build(), rng)
    except Exception as exc:  # a crashing group is a failed check, not a crashed suite
        records = [CheckRecord(f"{name}_error", "group completes", False, float("nan"), 0.0, f"{type(exc).__name__}: {exc}")]
    return name, records, time.perf_counter() - t0


def verify_suite(cfg: ScenarioConfig, seed: int = 0, parallel: bool = False, groups=None) -> RunReport:
    names = list(groups or GROUPS)
    report = RunReport(config=cfg.echo())
    t0 = time.perf_counter()
    if parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(run_group, [cfg] * len(names), names, [seed] * len(names)))
    else:
        results = [run_group(cfg, name, seed) for name in names]
    for name, records, dt in results:
        report.records.extend(records)
        report.timings[name] = dt
    report.timings["total"] = time.perf_counter() - t0
    return report
