import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import laplacian

from agebif.spatial import (
    DiscretizationError,
    assemble_laplacian,
    build_grid,
    closed_form_lambda1,
    principal_eigenpair,
)


def test_three_node_grid():
    g = build_grid(3, 1.0)
    assert g.spacing == pytest.approx(0.25)
    np.testing.assert_allclose(g.nodes, [0.25, 0.5, 0.75])


def test_ninety_nine_node_grid():
    g = build_grid(99, 1.0)
    assert g.spacing == pytest.approx(0.01)
    assert g.nodes.shape == (99,)


@pytest.mark.parametrize("n, length", [(2, 1.0), (0, 1.0), (5, 0.0), (5, -1.0)])
def test_grid_rejects_unusable_input(n, length):
    with pytest.raises(DiscretizationError):
        build_grid(n, length)


def test_three_node_stencil():
    lap = assemble_laplacian(build_grid(3))
    np.testing.assert_allclose(lap.dense(), [[32, -16, 0], [-16, 32, -16], [0, -16, 32]])


def test_dirichlet_leakage_on_constants():
    g = build_grid(7)
    out = assemble_laplacian(g).matvec(np.ones(7))
    expected = np.zeros(7)
    expected[[0, -1]] = 1.0 / g.spacing**2
    np.testing.assert_allclose(out, expected, atol=1e-9)


def test_three_node_spectrum():
    lap = assemble_laplacian(build_grid(3)).dense()
    k = np.arange(1, 4)
    np.testing.assert_allclose(np.linalg.eigvalsh(lap), 32 * (1 - np.cos(k * np.pi / 4)), rtol=1e-13)


def test_three_node_eigenpair():
    sd = principal_eigenpair(assemble_laplacian(build_grid(3)))
    assert sd.lambda1 == pytest.approx(32 * (1 - np.cos(np.pi / 4)), rel=1e-12)
    np.testing.assert_allclose(sd.phi1, [np.sqrt(0.5), 1.0, np.sqrt(0.5)], atol=1e-12)


def test_fine_grid_eigenvalue_near_continuum():
    sd = principal_eigenpair(assemble_laplacian(build_grid(99)))
    assert abs(sd.lambda1 - np.pi**2) <= 0.01


@pytest.mark.parametrize("n, length", [(3, 1.0), (8, 1.0), (64, 1.0), (33, 2.5), (200, 0.3)])
def test_eigenpair_matches_dense_oracle(n, length):
    g = build_grid(n, length)
    sd = principal_eigenpair(assemble_laplacian(g))
    dense = laplacian(n, length)
    vals, vecs = np.linalg.eigh(dense)
    # dense eigensolvers are accurate relative to the matrix norm
    assert abs(sd.lambda1 - vals[0]) <= 1e-13 * np.linalg.norm(dense, 2)
    assert sd.lambda1 == pytest.approx(closed_form_lambda1(g), rel=1e-12)
    ref = np.abs(vecs[:, 0]) / np.max(np.abs(vecs[:, 0]))
    np.testing.assert_allclose(sd.phi1, ref, atol=1e-10)
    sine = np.sin(np.pi * g.nodes / length)
    np.testing.assert_allclose(sd.phi1, sine / np.max(sine), atol=1e-10)
    # below the rounding level of the stencil the residual contract is a floor
    rounding = 8.0 * np.finfo(float).eps / g.spacing**2
    assert sd.residual <= max(1e-12 * sd.lambda1, rounding)
    if n <= 99 and length == 1.0:
        assert sd.residual <= 1e-12 * sd.lambda1


def test_eigenvalue_converges_at_second_order():
    errs = [abs(principal_eigenpair(assemble_laplacian(build_grid(n))).lambda1 - np.pi**2) for n in (15, 31, 63)]
    lams = [principal_eigenpair(assemble_laplacian(build_grid(n))).lambda1 for n in (15, 31, 63)]
    assert lams[0] < np.pi**2 and lams[0] < lams[1] < lams[2]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=3, max_value=300), st.floats(min_value=0.1, max_value=10.0))
def test_eigenvector_is_positive_and_exact(n, length):
    g = build_grid(n, length)
    sd = principal_eigenpair(assemble_laplacian(g))
    assert np.all(sd.phi1 > 0)
    assert np.max(sd.phi1) == pytest.approx(1.0)
    assert sd.lambda1 == pytest.approx(closed_form_lambda1(g), rel=1e-12)
