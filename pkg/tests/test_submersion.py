"""
Tests for the canonical variation of Riemannian submersions.
"""

import json
import logging
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.conditions import Condition
from src.curvop import Riemann4, bianchi_residual, from_riemann, sectional, to_riemann
from src.errors import ConditionViolation, InputError, InvariantError
from src.submersion import (
    DEFAULT_T_GRID,
    SubmersionData,
    berger_oracle,
    berger_vertizontal_fd,
    error_term,
    error_term_components,
    find_t_star,
    fiber_operator,
    fit_error_constant,
    hopf_data,
    product_data,
    pullback_rescaled,
    random_data,
    torus_data,
    variation_curvature,
)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def _padded(n: int, block: Riemann4, start: int):
    comp = np.zeros((n,) * 4)
    s = slice(start, start + block.n)
    comp[s, s, s, s] = block.comp
    return from_riemann(Riemann4(n, comp))


def test_data_validation():
    """Test: shapes, skew A, symmetric T and the fiber Gauss equation are enforced."""
    d = random_data(5, 2, seed=1)
    with pytest.raises(InputError):
        SubmersionData(5, 5, d.R_M, d.A, d.T, d.R_B, d.R_F)
    with pytest.raises(InputError):
        SubmersionData(5, 2, d.R_M, d.A[:, :, :2], d.T, d.R_B, d.R_F)

    bad_A = np.array(d.A)
    bad_A[0, 0, 1] += 0.5
    with pytest.raises(InvariantError):
        SubmersionData(5, 2, d.R_M, bad_A, d.T, d.R_B, d.R_F)

    bad_T = np.array(d.T)
    bad_T[0, 1, 0] += 0.5
    with pytest.raises(InvariantError):
        SubmersionData(5, 2, d.R_M, d.A, bad_T, d.R_B, d.R_F)

    eye = np.eye(2)
    unit_sphere = np.einsum('ad,bc->abcd', eye, eye) - np.einsum('ac,bd->abcd', eye, eye)
    wrong_fiber = Riemann4(2, d.R_F.comp + unit_sphere)
    with pytest.raises(InvariantError):
        SubmersionData(5, 2, d.R_M, d.A, d.T, d.R_B, wrong_fiber)


def test_identity_at_t_one():
    """Test: t = 1 gives back R_M."""
    for d in (random_data(5, 2, seed=2), random_data(4, 1, seed=3), hopf_data()):
        scale = max(1.0, float(np.max(np.abs(d.R_M.comp))))
        assert np.max(np.abs(variation_curvature(d, 1.0).comp - d.R_M.comp)) <= 1e-12 * scale
        assert_allclose(pullback_rescaled(d, 1.0).mat, from_riemann(d.R_M).mat, atol=1e-12 * scale)


def test_variation_is_a_curvature_tensor():
    """Test: consistent random data gives Bianchi tensors for every t."""
    d = random_data(6, 3, seed=4)
    for t in (0.1, 0.37, 2.0):
        assert bianchi_residual(variation_curvature(d, t).comp) <= 1e-10
    for bad in (0.0, -0.5):
        with pytest.raises(InputError):
            variation_curvature(d, bad)
        with pytest.raises(InputError):
            error_term(d, bad)


def test_mixed_components_scale_as_stated():
    """Test: the (v,v,v,h) error rows are α/t + βt with β the T-A coupling."""
    d = random_data(5, 2, seed=7)
    k, n = d.k, d.n
    V, H = slice(0, k), slice(k, n)
    t1, t2 = 0.5, 0.25
    e1 = to_riemann(error_term(d, t1)).comp[V, V, V, H]
    e2 = to_riemann(error_term(d, t2)).comp[V, V, V, H]
    # e = α/t + βt
    det = (1 / t1) * t2 - (1 / t2) * t1
    alpha = (e1 * t2 - e2 * t1) / det
    beta = ((1 / t1) * e2 - (1 / t2) * e1) / det

    coupling = np.zeros_like(e1)
    for i in range(k):
        for j in range(k):
            for m in range(k):
                for r in range(n - k):
                    coupling[i, j, m, r] = d.T[i, m] @ d.A[r, j] - d.T[j, m] @ d.A[r, i]
    assert_allclose(beta, coupling, atol=1e-9)
    assert_allclose(alpha + beta, d.R_M.comp[V, V, V, H], atol=1e-9)


def test_error_term_matches_components():
    """Test: Eᵗ blocks agree with the explicit formulas."""
    d = random_data(5, 2, seed=9)
    t = 0.4
    E = to_riemann(error_term(d, t)).comp
    V, H = slice(0, 2), slice(2, 5)
    slots = {"v": V, "h": H}
    for name, block in error_term_components(d, t).items():
        assert_allclose(E[tuple(slots[c] for c in name)], block, atol=1e-10)


def test_product_submersion():
    """Test: products decouple; Eᵗ is the base block."""
    d = product_data(1.0, 2.0, 2, 5)
    assert np.max(np.abs(d.A)) == 0.0 and np.max(np.abs(d.T)) == 0.0
    t = 0.5
    expected = fiber_operator(d, t) + _padded(5, d.R_B, 2)
    assert_allclose(pullback_rescaled(d, t).mat, expected.mat, atol=1e-14)
    assert_allclose(error_term(d, t).mat, _padded(5, d.R_B, 2).mat, atol=1e-14)
    assert_allclose(np.diag(fiber_operator(d, t).mat)[0], 4.0)

    flat_base = product_data(1.0, 0.0, 2, 4)
    for t in (1.0, 0.3):
        assert np.max(np.abs(error_term(flat_base, t).mat)) <= 1e-14


def test_hopf_against_berger_oracle():
    """Test: Hopf variation matches FD curvature of the Berger spheres."""
    d = hopf_data()
    assert np.max(np.abs(d.T)) == 0.0
    assert_allclose(pullback_rescaled(d, 1.0).eigenvalues(), 1.0, atol=1e-14)
    for t in (1.0, 0.5, 0.25):
        deviation = berger_oracle(t)
        logger.info(f"Berger t={t}: deviation {deviation:.2e}")
        assert deviation <= 1e-6

    op = pullback_rescaled(d, 0.5)
    e = np.eye(3)
    assert sectional(op, e[0], e[1]) == pytest.approx(0.25)
    assert sectional(op, e[1], e[2]) == pytest.approx(4.0 - 3 * 0.25)
    assert berger_vertizontal_fd(0.5, [0.2, 0.1, -0.3]) == pytest.approx(0.25, abs=1e-6)


def test_error_bound_fit():
    """Test: ‖Eᵗ‖ ≤ C/t on the Hopf grid, with C at most 16/9."""
    d = hopf_data()
    norms = [float(np.max(np.abs(error_term(d, t).eigenvalues()))) for t in DEFAULT_T_GRID]
    assert_allclose(norms, 4.0 - 3.0 * DEFAULT_T_GRID ** 2, rtol=1e-12)
    C, validated = fit_error_constant(DEFAULT_T_GRID, norms)
    assert validated
    assert 1.7 <= C <= 16.0 / 9.0 + 1e-12


def test_find_t_star_hopf():
    """Test: Hopf scan passes for the almost-positive spectral condition."""
    d = hopf_data()
    c = Condition("spectral", epsilon=0.5)
    with pytest.raises(ConditionViolation):
        find_t_star(d, c)
    report = find_t_star(d, c, strict=False)
    assert not report.hypothesis_ok
    assert report.t_star == pytest.approx(1.0)
    assert report.verdict == "pass"
    assert report.bound_validated
    json.dumps(report.to_dict())


def test_find_t_star_products():
    """Test: round fibers dominate scal; negative bases give a sharp t_*."""
    scal = Condition("scal")
    report = find_t_star(product_data(1.0, 1.0, 2, 4), scal)
    assert report.t_star == pytest.approx(1.0)
    assert report.t_boundary is None

    grid = np.linspace(0.1, 1.0, 10)
    mixed = find_t_star(product_data(1.0, -4.0, 2, 4), scal, grid=grid)
    assert mixed.t_star == pytest.approx(0.4)
    assert mixed.t_boundary == pytest.approx(0.5, rel=1e-6)
    threaded = find_t_star(product_data(1.0, -4.0, 2, 4), scal, grid=grid, threads=2)
    assert threaded.margins == mixed.margins

    spectral = find_t_star(product_data(1.0, 1.0, 2, 4), Condition("spectral", epsilon=0.5))
    assert spectral.hypothesis_ok and spectral.delta > 0


def test_flat_fibers_violate_hypothesis():
    """Test: torus fibers carry no positive curvature."""
    with pytest.raises(ConditionViolation) as info:
        find_t_star(torus_data(2, 4), Condition("scal"))
    assert info.value.margin == pytest.approx(0.0)
    with pytest.raises(InputError):
        find_t_star(hopf_data(), Condition("scal"), grid=[0.5, -0.1])
