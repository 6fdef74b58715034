import numpy as np
import oracles
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agebif.birthop import (
    SpectralConditionError,
    apply_birth_operator,
    assemble_birth_operator,
    normalize_profile,
    power_iteration,
    resolve_birth,
    spectral_radius,
)
from agebif.evolve import make_grids
from agebif.model import build_model

GRIDS = make_grids(16, steps=32)


def constant_profile(grids, kind="prey"):
    return normalize_profile(np.ones(grids.age.steps + 1), grids.lambda1, grids.age, kind)


PROFILE = constant_profile(GRIDS)


def scalar_reduction(c, grids, profile):
    k = np.arange(grids.age.steps + 1)
    return float(profile.weights(grids.age) @ (1.0 + grids.age.da * (grids.lambda1 + c)) ** -k)


def _scale_errors(raw_fn, target):
    errs = []
    for m in (128, 256, 512):
        g = make_grids(16, steps=m)
        prof = normalize_profile(raw_fn(g.age.ages), np.pi**2, g.age)
        errs.append(abs(prof.scale - target) / target)
    return errs


@pytest.mark.parametrize(
    "raw_fn, target",
    [
        (np.ones_like, np.pi**2 / (1.0 - np.exp(-np.pi**2))),
        (lambda a: np.exp(np.pi**2 * a), 1.0),
    ],
)
def test_profile_scale_converges_to_continuum(raw_fn, target):
    # backward Euler decay is first order in the age step
    errs = _scale_errors(raw_fn, target)
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


@pytest.mark.parametrize(
    "raw",
    [
        np.where(np.linspace(0, 1, 33) <= 0.5, 1.0, 0.0),
        np.zeros(33),
        -np.ones(33),
        np.ones(20),
        np.full(33, np.nan),
    ],
)
def test_unusable_profiles_are_rejected(raw):
    with pytest.raises(ValueError):
        normalize_profile(raw, GRIDS.lambda1, GRIDS.age)


@pytest.mark.parametrize("raw_fn", [np.ones_like, lambda a: 1.0 + a, lambda a: np.exp(-a)])
def test_normalization_makes_radius_one(raw_fn):
    prof = normalize_profile(raw_fn(GRIDS.age.ages), GRIDS.lambda1, GRIDS.age)
    kr = spectral_radius(0.0, prof, GRIDS)
    assert kr.radius == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(kr.eigvec, GRIDS.phi1, atol=1e-8)
    np.testing.assert_allclose(apply_birth_operator(0.0, prof, GRIDS.phi1, GRIDS), GRIDS.phi1, rtol=1e-12)


@pytest.mark.parametrize("c", [0.5, 1.0, 5.0])
def test_constant_potential_scalar_reduction(c):
    s = scalar_reduction(c, GRIDS, PROFILE)
    assert s < 1.0
    np.testing.assert_allclose(apply_birth_operator(c, PROFILE, GRIDS.phi1, GRIDS), s * GRIDS.phi1, rtol=1e-12)
    assert spectral_radius(c, PROFILE, GRIDS).radius == pytest.approx(s, abs=1e-10)


def test_default_grid_scalar_reduction():
    model = build_model()
    g = model.grids
    for c in (0.5, 1.0, 5.0):
        r = spectral_radius(c, model.prey, g).radius
        assert abs(r - scalar_reduction(c, g, model.prey)) <= 1e-10


def test_zero_maps_to_zero_and_operator_is_linear():
    rng = np.random.default_rng(0)
    h = rng.uniform(0, 3, GRIDS.shape)
    assert np.all(apply_birth_operator(h, PROFILE, np.zeros(16), GRIDS) == 0.0)
    x, y = rng.uniform(size=16), rng.uniform(size=16)
    lhs = apply_birth_operator(h, PROFILE, 2.0 * x - 3.0 * y, GRIDS)
    rhs = 2.0 * apply_birth_operator(h, PROFILE, x, GRIDS) - 3.0 * apply_birth_operator(h, PROFILE, y, GRIDS)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_dense_operator_matches_independent_assembly():
    rng = np.random.default_rng(1)
    h = rng.uniform(-3, 3, GRIDS.shape)
    op = assemble_birth_operator(h, PROFILE, GRIDS)
    ref = oracles.birth_matrix(h, PROFILE.samples, oracles.laplacian(16), 1.0, 32)
    np.testing.assert_allclose(op.matrix, ref, rtol=1e-11, atol=1e-14)
    matfree = assemble_birth_operator(h, PROFILE, GRIDS, dense=False)
    x = rng.uniform(size=16)
    np.testing.assert_allclose(matfree.apply(x), op.apply(x), rtol=1e-12)
    kr = spectral_radius(h, PROFILE, GRIDS)
    assert kr.radius == pytest.approx(oracles.perron(ref), rel=1e-10)
    assert kr.lower <= kr.radius <= kr.upper
    assert np.all(kr.eigvec > 0)


def test_power_iteration_cap_reports_best_estimate():
    mat = np.array([[1.0, 0.999], [0.999, 1.0]]) + np.diag([0.0, 1e-3])
    kr = power_iteration(lambda x: mat @ x, np.array([1.0, 0.0]) + 1e-3, tol=1e-15, max_iter=3)
    assert not kr.converged
    assert kr.iterations == 3
    assert kr.lower <= kr.upper


def test_radius_strictly_monotone_for_random_bumps():
    rng = np.random.default_rng(2)
    g = make_grids(8, steps=16)
    prof = constant_profile(g)
    for _ in range(100):
        h = rng.uniform(-2.0, 4.0, g.shape)
        bump = np.zeros(g.shape)
        i, j = rng.integers(1, g.shape[0]), rng.integers(0, g.n)
        bump[i, j] = rng.uniform(0.05, 2.0)
        assert spectral_radius(h + bump, prof, g).radius < spectral_radius(h, prof, g).radius


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.01, 5.0))
def test_radius_decreases_with_constant_shift(c, d):
    g = make_grids(8, steps=16)
    prof = constant_profile(g)
    assert spectral_radius(c + d, prof, g).radius < spectral_radius(c, prof, g).radius


def test_resolvent_examples():
    rng = np.random.default_rng(3)
    h = rng.uniform(0, 3, GRIDS.shape)
    rhs = rng.uniform(size=16)
    np.testing.assert_allclose(resolve_birth(0.0, h, PROFILE, rhs, GRIDS), rhs)
    kr = spectral_radius(h, PROFILE, GRIDS)
    eta = 0.5 / kr.radius
    x = resolve_birth(eta, h, PROFILE, kr.eigvec, GRIDS)
    np.testing.assert_allclose(x, kr.eigvec / (1.0 - eta * kr.radius), rtol=1e-8)
    assert np.all(resolve_birth(0.9 / kr.radius, h, PROFILE, rhs, GRIDS) > 0)
    with pytest.raises(SpectralConditionError):
        resolve_birth(1.0 / kr.radius + 1e-6, h, PROFILE, rhs, GRIDS)
