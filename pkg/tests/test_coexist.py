import numpy as np
import pytest

from agebif.bifurcate import kernel_basis_xi, xi0
from agebif.coexist import (
    CoexistenceSolution,
    SemiTrivialLimit,
    a_priori_bound,
    envelope_check,
    logistic_growth_envelope,
    ordering_check,
    parameter_constraints,
    solve_coexistence,
    trace_jacobian,
    trace_residual,
)
from agebif.evolve import coupled_path, coupled_substeps
from agebif.steady import Trivial, predator_state, prey_state


@pytest.fixture(scope="module")
def kernel_point(model):
    """A coexistence state at eta=2, xi=xi0(2)+0.2 reached from the kernel seed."""
    kb = kernel_basis_xi(model, 2.0)
    xi = kb.point.value + 0.2
    u = kb.point.anchored_semitrivial
    base = 0.2 * u.sup / np.max(np.abs(kb.phi_star))
    for mult in (1.0, 2.0, 4.0, 0.5):
        eps = mult * base
        seed = (np.maximum(u.trace - eps * kb.phi0, 0.0), eps * kb.psi0)
        sol = solve_coexistence(model, 2.0, xi, seed)
        if isinstance(sol, CoexistenceSolution):
            return sol
    pytest.fail("no coexistence state from the kernel seed")


def test_predator_only_seed_stays_predator_only(model):
    v = predator_state(model, 1.5)
    for eta in (0.5, 1.5, 3.0):
        sol = solve_coexistence(model, eta, 1.5, (np.zeros(model.grids.n), v.trace))
        assert isinstance(sol, SemiTrivialLimit) and sol.survivor == "predator"
        np.testing.assert_allclose(sol.trace_v, v.trace, rtol=1e-9)
        np.testing.assert_array_equal(sol.trace_u, 0.0)


def test_no_coexistence_left_of_the_invasion_threshold(model):
    x0 = xi0(model, 2.0).value
    rng = np.random.default_rng(21)
    u = prey_state(model, 2.0)
    for _ in range(3):
        seed = (u.trace * rng.uniform(0.5, 1.0, model.grids.n), rng.uniform(0.1, 5.0, model.grids.n))
        try:
            sol = solve_coexistence(model, 2.0, x0 - 0.2, seed)
        except Exception as exc:  # a failed solve is not a coexistence state either
            sol = exc
        assert not isinstance(sol, CoexistenceSolution)


def test_kernel_seed_reaches_coexistence(model, kernel_point):
    sol = kernel_point
    assert sol.u[:-1].min() > 0 and sol.v[:-1].min() > 0
    assert max(sol.residuals) <= 1e-8


def test_stored_traces_reproduce_fields(model, kernel_point):
    sol = kernel_point
    fu, fv, path = trace_residual(model, sol.eta, sol.xi, sol.trace_u, sol.trace_v, sol.substeps)
    np.testing.assert_allclose(path.u, sol.u, rtol=0, atol=1e-10 * sol.sup_u)
    np.testing.assert_allclose(path.v, sol.v, rtol=0, atol=1e-10 * sol.sup_v)
    assert max(np.abs(fu).max(), np.abs(fv).max()) <= 1e-8


def test_orderings_and_thresholds(model, kernel_point):
    sol = kernel_point
    u_eta, v_xi = prey_state(model, sol.eta), predator_state(model, sol.xi)
    assert isinstance(v_xi, Trivial)
    assert ordering_check(sol, u_eta, v_xi).passed
    assert parameter_constraints(sol, model, u_eta, v_xi).passed


def test_substep_count_is_self_consistent(model, kernel_point):
    sol = kernel_point
    assert sol.substeps == coupled_substeps(float(np.max(sol.trace_u)), model.params, model.grids)


def _fake(model, eta, xi, cu, cv):
    path = coupled_path(cu, cv, model.params, model.grids)
    return CoexistenceSolution(eta, xi, path.u, path.v, cu, cv, (0.0, 0.0), 0, path)


def test_semitrivial_states_meet_the_orderings_with_equality(model):
    u_eta, v_xi = prey_state(model, 2.0), predator_state(model, 1.5)
    n = model.grids.n
    prey_only = _fake(model, 2.0, 1.5, u_eta.trace, np.zeros(n))
    rep = ordering_check(prey_only, u_eta, Trivial(1.5))
    assert rep.prey_ok and abs(rep.prey_excess) <= 1e-9 * u_eta.sup
    pred_only = _fake(model, 2.0, 1.5, np.zeros(n), v_xi.trace)
    rep = ordering_check(pred_only, Trivial(2.0), v_xi)
    assert rep.predator_ok and abs(rep.predator_deficit) <= 1e-9 * v_xi.sup


def test_growth_envelope(model, kernel_point):
    assert envelope_check(kernel_point, model, slack=0.05).passed
    v_xi = predator_state(model, 2.0)
    pred_only = _fake(model, 0.5, 2.0, np.zeros(model.grids.n), v_xi.trace)
    chk = envelope_check(pred_only, model)
    assert chk.growth_rate == 0.0 and chk.passed
    ages = model.grids.age.ages
    np.testing.assert_allclose(logistic_growth_envelope(3.0, 0.0, 1.0, ages), 1.0 / (ages + 1.0 / 3.0))
    base = _fake(model, 2.0, 0.6, kernel_point.trace_u, kernel_point.trace_v)
    plateau = 2.0 * model.params.beta2 * base.sup_u / model.params.beta1
    grown = CoexistenceSolution(
        base.eta, base.xi, base.u, np.full_like(base.v, plateau), base.trace_u, base.trace_v, (0.0, 0.0), 0, base.path
    )
    assert not envelope_check(grown, model).passed


def test_a_priori_bound_dominates(model, kernel_point):
    sol = kernel_point
    big_u, big_v = a_priori_bound(model, sol.eta, sol.xi, prey_state(model, sol.eta))
    assert sol.sup_u <= big_u and sol.sup_v <= big_v


def test_trace_jacobian_matches_differences(small_model):
    m = small_model
    rng = np.random.default_rng(22)
    cu, cv = rng.uniform(5.0, 20.0, 5), rng.uniform(1.0, 5.0, 5)
    s = coupled_substeps(float(cu.max()), m.params, m.grids)
    _, _, path = trace_residual(m, 2.0, 1.5, cu, cv, s)
    jac = trace_jacobian(m, 2.0, 1.5, path)
    eps = 1e-6
    for j in range(10):
        e = np.zeros(10)
        e[j] = eps
        up = np.concatenate(trace_residual(m, 2.0, 1.5, cu + e[:5], cv + e[5:], s)[:2])
        dn = np.concatenate(trace_residual(m, 2.0, 1.5, cu - e[:5], cv - e[5:], s)[:2])
        np.testing.assert_allclose(jac[:, j], (up - dn) / (2 * eps), atol=1e-6)


def test_negative_seed_rejected(model):
    with pytest.raises(ValueError):
        solve_coexistence(model, 2.0, 1.5, (-np.ones(model.grids.n), np.ones(model.grids.n)))
