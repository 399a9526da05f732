"""
Tests for the algebraic curvature operator layer.
Covers bivector indexing, Kulkarni wedges, the O(n) action and validation.
"""

import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.curvop import (
    BivectorBasis,
    CurvatureOperator,
    Frame,
    Riemann4,
    SymmetricForm,
    act,
    act_batch,
    bianchi_project,
    bianchi_residual,
    biv_index,
    biv_pair,
    complex_sectional,
    from_riemann,
    haar_orthogonal,
    haar_orthogonal_batch,
    identity_operator,
    kulkarni_wedge,
    model_operator,
    operator_norm,
    ricci,
    scal,
    sectional,
    to_riemann,
    wedge_coordinates,
    zero_operator,
)
from src.errors import InputError, InvariantError


def random_operator(n, seed):
    rng = np.random.default_rng(seed)
    N = n * (n - 1) // 2
    g = rng.standard_normal((N, N))
    return bianchi_project(0.5 * (g + g.T))


def test_bivector_indexing():
    """Test: lexicographic indices and their inverse."""
    assert biv_index(0, 1, 4) == 0
    assert biv_index(0, 3, 4) == 2
    assert biv_index(2, 3, 4) == 5
    basis = BivectorBasis(5)
    assert basis.N == 10
    for k, (i, j) in enumerate(basis.ordering):
        assert basis.index(i, j) == k
        assert biv_pair(k, 5) == (i, j)
    with pytest.raises(InputError):
        biv_index(1, 1, 4)
    assert BivectorBasis(3).ordering == [(0, 1), (0, 2), (1, 2)]
    for n in (2, 13):
        with pytest.raises(InputError):
            BivectorBasis(n)


def test_kulkarni_wedge_of_metric_is_identity():
    """Test: g∧g is the identity and diagonal wedges hit a single slot."""
    for n in (3, 4, 6):
        g = SymmetricForm.identity(n)
        assert_allclose(kulkarni_wedge(g, g).mat, np.eye(n * (n - 1) // 2), atol=1e-15)

    a = SymmetricForm.diagonal([1, 0, 0, 0])
    b = SymmetricForm.diagonal([0, 1, 0, 0])
    expected = np.zeros((6, 6))
    expected[0, 0] = 0.5
    assert_allclose(kulkarni_wedge(a, b).mat, expected, atol=1e-15)


def test_model_operator():
    """Test: model operators are scaled projections."""
    assert_allclose(model_operator(4, 1.0, 4).mat, np.eye(6))
    assert scal(model_operator(3, 2.0, 5)) == pytest.approx(0.75)
    assert scal(model_operator(2, 1.0, 5)) == pytest.approx(1.0)
    with pytest.raises(InputError):
        model_operator(1, 1.0, 4)
    with pytest.raises(InputError):
        model_operator(5, 1.0, 4)
    with pytest.raises(InputError):
        model_operator(2, 0.0, 4)


def test_riemann_tensor_conversion_is_exact():
    """Test: from_riemann inverts to_riemann and the tensor has all symmetries."""
    r = random_operator(5, seed=3)
    t = to_riemann(r)
    assert bianchi_residual(t.comp) < 1e-12
    assert_allclose(from_riemann(t).mat, r.mat, atol=1e-14)

    # Diagonal entries are sectional curvatures R(e_i, e_j, e_j, e_i)
    s = model_operator(3, 1.0, 4)
    comp = to_riemann(s).comp
    assert comp[0, 1, 1, 0] == pytest.approx(1.0)
    assert comp[0, 3, 3, 0] == pytest.approx(0.0)


def test_validation_rejects_bad_operators():
    """Test: asymmetric or non-Bianchi matrices are rejected."""
    m = np.zeros((6, 6))
    m[0, 5] = m[5, 0] = 1.0
    with pytest.raises(InvariantError):
        CurvatureOperator(4, m)

    m = np.zeros((6, 6))
    m[0, 1] = 1.0
    with pytest.raises(InvariantError):
        CurvatureOperator(4, m)

    with pytest.raises(InputError):
        CurvatureOperator(4, np.eye(5))

    with pytest.raises(InvariantError):
        Riemann4(2, np.ones((2, 2, 2, 2)))


def test_bianchi_project_is_a_projection():
    """Test: projection lands on Bianchi operators and fixes them."""
    rng = np.random.default_rng(11)
    g = rng.standard_normal((10, 10))
    p = bianchi_project(0.5 * (g + g.T))
    validated = CurvatureOperator(5, p.mat)
    assert_allclose(bianchi_project(validated).mat, validated.mat, atol=1e-13)

    # n = 3: every symmetric matrix already satisfies Bianchi
    h = rng.standard_normal((3, 3))
    sym = 0.5 * (h + h.T)
    assert_allclose(bianchi_project(sym).mat, sym, atol=1e-14)

    with pytest.raises(InputError):
        bianchi_project(g)


def test_action_is_a_group_action():
    """Test: act(a·b, R) = act(a, act(b, R)) and spectra are preserved."""
    r = random_operator(5, seed=7)
    a = haar_orthogonal(5, seed=1)
    b = haar_orthogonal(5, seed=2)
    assert_allclose(act(a @ b, r).mat, act(a, act(b, r)).mat, atol=1e-12)
    assert_allclose(np.sort(act(a, r).eigenvalues()), np.sort(r.eigenvalues()), atol=1e-12)
    assert scal(act(a, r)) == pytest.approx(scal(r))

    with pytest.raises(InputError):
        act(2.0 * np.eye(5), r)

    stack = np.stack([a, b, a @ b])
    batch = act_batch(stack, r)
    for k in range(3):
        assert_allclose(batch[k], act(stack[k], r).mat, atol=1e-12)


def test_haar_sampling_is_deterministic():
    """Test: seeded Haar draws repeat and are orthogonal."""
    a = haar_orthogonal(6, seed=42)
    assert_allclose(a, haar_orthogonal(6, seed=42))
    assert_allclose(a.T @ a, np.eye(6), atol=1e-12)
    batch = haar_orthogonal_batch(4, 8, seed=5)
    assert batch.shape == (8, 4, 4)
    assert_allclose(np.einsum('bji,bjk->bik', batch, batch), np.broadcast_to(np.eye(4), (8, 4, 4)), atol=1e-12)


def test_sectional_and_ricci():
    """Test: round sphere values."""
    n = 4
    ident = identity_operator(n)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    assert sectional(ident, x, y) == pytest.approx(1.0)
    assert_allclose(ricci(ident).mat, (n - 1) * np.eye(n), atol=1e-14)
    with pytest.raises(InputError):
        sectional(ident, x, 3.0 * x)

    w = wedge_coordinates(np.eye(4)[0], np.eye(4)[1])
    assert_allclose(w, [1, 0, 0, 0, 0, 0])


def test_complex_sectional():
    """Test: identity gives 4 on every orthonormal 4-frame."""
    q = haar_orthogonal(6, seed=9)
    frame = Frame(q[:, :4])
    assert complex_sectional(identity_operator(6), frame) == pytest.approx(4.0)
    assert complex_sectional(zero_operator(6), frame) == pytest.approx(0.0)
    with pytest.raises(InvariantError):
        Frame(np.ones((4, 2)))


def test_operator_arithmetic_and_json():
    """Test: linear operations and the JSON form."""
    r = random_operator(4, seed=4)
    s = 2.0 * r - r / 2.0 + (-r)
    assert_allclose(s.mat, 0.5 * r.mat, atol=1e-14)
    assert operator_norm(identity_operator(4)) == pytest.approx(1.0)
    restored = CurvatureOperator.from_json(r.to_json())
    assert_allclose(restored.mat, r.mat)
    with pytest.raises(InputError):
        CurvatureOperator.from_json({"mat": []})
