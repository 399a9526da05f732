"""
Tests for the conformal surgery engine.
"""

import json
import logging
import math
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.conditions import Condition
from src.curvop import from_riemann, identity_operator
from src.errors import ConditionViolation, InputError, InvariantError
from src.geometry import euclidean, radial_operator, stereographic_sphere
import src.conformal as conformal
from src.conformal import (
    ConformalConstants,
    CutoffProfile,
    FlatteningFactor,
    Jet,
    build_alpha,
    choose_lambda,
    conformal_chart,
    conformal_connection,
    conformal_curvature_radial,
    conformal_gradient,
    conformal_hessian,
    covariant_derivative,
    cutoff_derivatives,
    cylinder_operator,
    decompose_R_D,
    decomposition_oracle,
    dq_bound_check,
    error_operator,
    hessian,
    cutoff_bound_check,
    formula_oracle,
    scalar_jet_fd,
    star_shaped_check,
    verify_conformal,
)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@pytest.fixture(scope="module")
def profile():
    """Short profile with a visible Step 2: r2 ≈ 5e-4."""
    return build_alpha(0.5, 0.2, 0.5, 0.25, gamma_fraction=0.5)


def test_trivial_conformal_factor():
    """Test: σ ≡ 1 leaves gradient, Hessian and connection unchanged."""
    chart = stereographic_sphere(3)
    x = np.array([0.2, -0.1, 0.3])
    one = lambda y: 1.0
    f = lambda y: float(y[0] * y[1] + math.cos(y[2]))
    X = lambda y: np.array([1.0, y[0], -y[2]])
    Y = lambda y: np.array([y[1], 0.5, y[0] * y[2]])

    _, df, _ = scalar_jet_fd(f, x)
    assert_allclose(conformal_gradient(one, f, chart, x), np.linalg.solve(chart.g(x), df), atol=1e-12)
    assert_allclose(conformal_hessian(one, f, chart, x), hessian(chart, f, x), atol=1e-12)
    assert_allclose(conformal_connection(one, X, Y, chart, x), covariant_derivative(chart, X, Y, x), atol=1e-12)


def test_conformal_hessian_against_fd():
    """Test: σ = eˣ on flat ℝ², f = y."""
    chart = euclidean(2)
    sigma = lambda y: math.exp(y[0])
    f = lambda y: float(y[1])
    x = np.array([0.3, -0.2])
    fd = hessian(conformal_chart(chart, sigma), f, x)
    assert_allclose(conformal_hessian(sigma, f, chart, x), fd, atol=1e-6)

    grad = conformal_gradient(sigma, f, chart, x)
    g = conformal_chart(chart, sigma).g(x)
    _, df, _ = scalar_jet_fd(f, x)
    assert float(grad @ g @ grad) == pytest.approx(float(df @ df) / sigma(x) ** 2, rel=1e-10)


def test_radial_curvature_formula():
    """Test: w(t) = 1/t with f = |x| turns flat ℝ⁴ into the unit cylinder; w ≡ 1 keeps the sphere."""
    x = np.array([0.3, 0.2, -0.1, 0.4])
    inverse = Jet(lambda t: 1.0 / t, lambda t: -1.0 / t ** 2, lambda t: 2.0 / t ** 3)
    radius = lambda y: float(np.linalg.norm(y))
    op = from_riemann(conformal_curvature_radial(inverse, radius, euclidean(4), x))
    assert_allclose(op.mat, radial_operator(1.0, 0.0, x / np.linalg.norm(x)).mat, atol=1e-6)

    constant = Jet(lambda t: 1.0, lambda t: 0.0, lambda t: 0.0)
    sphere = from_riemann(conformal_curvature_radial(constant, radius, stereographic_sphere(4), x))
    assert_allclose(sphere.mat, identity_operator(4).mat, atol=1e-6)

    with pytest.raises(InputError):
        conformal_curvature_radial(Jet(lambda t: -1.0, lambda t: 0.0, lambda t: 0.0), radius, euclidean(4), x)


def test_conformal_formulas_against_fd():
    """Test: gradient, Hessian, connection and curvature formulas on random fixtures."""
    deviation = formula_oracle(fixtures=4, seed=3)
    logger.info(f"conformal formulas vs FD: {deviation:.2e}")
    assert deviation <= 1e-5


def test_flattening_factor():
    """Test: built-in charts, v(0) = 1 and flatness of v²g."""
    ff = FlatteningFactor("sphere", 4)
    assert ff.v(np.zeros(4)) == 1.0
    assert ff.eps_prime == 1.0
    assert ff.validate() <= 1e-6
    assert_allclose(ff.ambient_operator(np.eye(4)[3]).mat, np.eye(6), atol=1e-12)
    assert 0.5 <= ff.v(np.full(4, 0.5)) <= 2.0
    assert FlatteningFactor("Flat", 5).kappa == 0.0

    with pytest.raises(InputError):
        FlatteningFactor("torus", 4)
    with pytest.raises(InputError):
        FlatteningFactor("sphere", 2)
    with pytest.raises(InputError):
        FlatteningFactor("sphere", 4, eps_prime=2.5)


def test_cutoff_profile():
    """Test: v_λ blends v into 1 and its radial derivatives are consistent."""
    ff = FlatteningFactor("sphere", 4)
    cp = CutoffProfile(ff, 0.2)
    for r in (0.02, 0.09):
        st = cp.state(r)
        assert st.v_lambda == pytest.approx(st.v, rel=1e-14)
        assert st.q == pytest.approx(1.0, abs=1e-14)
    for r in (0.2, 0.5, 0.9):
        st = cp.state(r)
        assert st.v_lambda == pytest.approx(1.0)
        assert st.q == pytest.approx(1.0 / st.v, rel=1e-14)
    for r in np.linspace(0.01, 1.0, 40):
        st = cp.state(float(r))
        assert 0.25 <= st.q <= 4.0 and 0.5 <= st.v_lambda <= 2.0

    h = 1e-6
    for r in (0.12, 0.15, 0.18):
        st = cutoff_derivatives(ff, cp, r)
        assert st.r_dq == pytest.approx(st.q * st.r_dlog_q, rel=1e-10)
        slope = (cp.state(r + h).log_q - cp.state(r - h).log_q) / (2 * h)
        assert r * slope == pytest.approx(st.r_dlog_q, abs=1e-8)
        d_psi1 = (cp.state(r + h).r_dlog_q - cp.state(r - h).r_dlog_q) / (2 * h)
        assert r * d_psi1 - st.r_dlog_q == pytest.approx(st.r2_ddlog_q, abs=1e-7)

    with pytest.raises(InputError):
        CutoffProfile(ff, 0.0)



def test_cutoff_far_from_lambda(profile, monkeypatch):
    """Test: radii hundreds of e-folds away from λ stay finite on both sides of the blend."""
    ff = FlatteningFactor("sphere", 4)
    cp = CutoffProfile(ff, 1e-250)
    v, rv1, r2v2, _ = ff.radial(0.5)
    outer = cutoff_derivatives(ff, cp, 0.5)
    assert all(math.isfinite(value) for value in outer)
    assert outer.phi == 0.0
    assert outer.q == pytest.approx(1.0 / v, rel=1e-14)
    assert outer.r_dlog_q == pytest.approx(-rv1 / v, rel=1e-14)
    assert outer.r2_ddlog_q == pytest.approx(-(v * r2v2 - rv1 * rv1) / (v * v), rel=1e-14)

    inner = cutoff_derivatives(ff, cp, math.exp(-650.0))
    assert inner.phi == 1.0 and inner.q == pytest.approx(1.0, abs=1e-15)
    assert all(math.isfinite(value) for value in inner)

    nu = np.eye(4)[-1]
    for log_r in (math.log(0.4), math.log(0.2), -650.0):
        R_D, E = decompose_R_D(ff, cp, profile, nu, math.exp(log_r), scaled=True, log_r=log_r)
        assert np.all(np.isfinite(R_D.mat)) and np.all(np.isfinite(E.mat))

    real = conformal.cutoff_derivatives
    monkeypatch.setattr(conformal, "cutoff_derivatives",
                        lambda *args: real(*args)._replace(r2_ddlog_q=float("nan")))
    with pytest.raises(InvariantError):
        decompose_R_D(ff, cp, profile, nu, 0.4, scaled=True)

def test_build_alpha(profile):
    """Test: u(r0) = 1, plateau at τ, u = γ/r below r2 and the slope condition below r1."""
    ap = profile
    assert ap.log_u(ap.r0) == 0.0
    assert ap.alpha(ap.r0) == 0.0
    assert ap.alpha(1.01 * ap.r1) == pytest.approx(0.2)
    assert ap.r2 < ap.r1 and ap.gamma < ap.gamma_max < ap.delta
    for factor in (0.9, 0.1, 1e-3):
        r = factor * ap.r2
        assert ap.alpha(r) == 1.0
        assert ap.u(r) * r == pytest.approx(ap.gamma, rel=1e-8)

    for s in np.linspace(0.0, ap.s2, 41):
        log_r = ap.log_r1 - float(s) / ap.c
        assert ap.slope_slack(log_r) >= 0.0
        b = ap.beta(float(s))
        assert ap.dbeta(float(s)) <= 0.9 * b * (2.0 - b) + 1e-12

    # plateau and mid-ramp only: the ramp is C² at its joints
    nodes = [math.log(ap.r1 + x * (ap.r0 - ap.r1)) for x in (0.1, 0.15, 0.2, 0.45, 0.5, 0.55, 0.9)]
    nodes += [ap.log_r1 - float(s) / ap.c for s in np.linspace(0.05, 0.95, 9) * ap.s2]
    residual = max(ap.log_u_residual(x) for x in nodes)
    logger.info(f"log u residual: {residual:.2e}")
    assert residual <= 1e-8

    again = build_alpha(0.5, 0.2, 0.5, 0.25, gamma=ap.gamma)
    assert again.s2 == pytest.approx(ap.s2, rel=1e-8)
    shortest = build_alpha(0.5, 0.2, 0.5, 0.25, gamma_fraction=1.0)
    assert shortest.s2 == pytest.approx(shortest.s2_min)


def test_build_alpha_range():
    """Test: γ must stay in (0, γ_max]."""
    ap = build_alpha(0.5, 0.2, 0.5, 0.25)
    with pytest.raises(InputError):
        build_alpha(0.5, 0.2, 0.5, 0.25, gamma=2.0 * ap.delta)
    with pytest.raises(InputError):
        build_alpha(0.5, 0.2, 0.5, 0.25, gamma=math.sqrt(ap.gamma_max * ap.delta))
    with pytest.raises(InputError):
        build_alpha(0.5, 1.5, 0.5, 0.25)
    with pytest.raises(InputError):
        build_alpha(0.5, 0.2, 0.25, 0.5)
    with pytest.raises(InputError):
        build_alpha(0.5, 0.2, 0.5, 0.25, gamma=ap.gamma, gamma_fraction=0.5)

    full = build_alpha(0.5, 1.0, 0.5, 0.25)
    assert full.s2 == 0.0 and full.gamma == pytest.approx(full.delta)


def test_decomposition_trivial_cases(profile):
    """Test: a flat chart has E = 0 and ends on the cylinder of radius γ."""
    ff = FlatteningFactor("flat", 4)
    cp = CutoffProfile(ff, 0.1)
    nu = np.array([0.0, 0.6, 0.0, 0.8])
    assert np.max(np.abs(error_operator(ff, cp, nu, 0.07).mat)) == 0.0

    r = 0.5 * profile.r2
    R_D, E = decompose_R_D(ff, cp, profile, nu, r)
    assert np.max(np.abs(E.mat)) == 0.0
    assert_allclose(R_D.mat, (cylinder_operator(nu) / profile.gamma ** 2).mat,
                    rtol=1e-8, atol=1e-8 / profile.gamma ** 2)


def test_decomposition_against_fd(profile):
    """Test: assembled R̃_D matches the FD curvature of (u·v_λ)²g on the round S⁴."""
    ff = FlatteningFactor("sphere", 4)
    cp = CutoffProfile(ff, 0.2)
    rng = np.random.default_rng(11)
    for r in (0.3, 0.375, 0.15, 0.12):
        nu = rng.standard_normal(4)
        deviation = decomposition_oracle(ff, cp, profile, nu, r, h_rel=5e-3)
        logger.info(f"decomposition vs FD at r={r}: {deviation:.2e}")
        assert deviation <= 1e-5

    R_D, E = decompose_R_D(ff, cp, profile, np.eye(4)[3], 0.15)
    scaled, _ = decompose_R_D(ff, cp, profile, np.eye(4)[3], 0.15, scaled=True)
    factor = math.exp(2.0 * (profile.log_u(0.15) + cp.state(0.15).log_q)) * 0.15 ** 2
    assert_allclose(R_D.mat * factor, scaled.mat, atol=1e-12)
    assert np.max(np.abs(E.mat)) > 0


def test_cutoff_bound_and_dq_bounds():
    """Test: λ·‖R̃^λ_M‖ stays bounded, R̃^λ_M = R̃_M beyond λ, and |dq| has a λ-free bound."""
    sphere = FlatteningFactor("sphere", 4)
    result = cutoff_bound_check(sphere)
    assert result.bounded
    assert result.C2 > 0
    assert result.outer_defect <= 1e-10
    assert [row["lambda"] for row in result.rows] == pytest.approx([0.1, 0.05, 0.025])

    flat = cutoff_bound_check(FlatteningFactor("flat", 4))
    assert flat.C2 == 0.0

    dq = dq_bound_check(sphere)
    assert dq["ok"]
    assert all(row["max_dq"] > 0 for row in dq["rows"])
    assert all(row["max_dq"] == 0.0 for row in dq_bound_check(FlatteningFactor("flat", 4))["rows"])


def test_choose_lambda():
    """Test: λ sits below every bound; vanishing constants drop out."""
    k = ConformalConstants(n=4, rho=0.45, c=0.2, eps1=0.5, eps_prime=1.0, C1=0.0, C2=0.0,
                           C_step1=1.0, sup_R_M=0.0, r0=0.1, r1=0.05)
    assert choose_lambda(k, 1e-3) == pytest.approx(0.9e-3)
    with pytest.raises(InputError):
        choose_lambda(k, None)

    k = ConformalConstants(n=4, rho=0.45, c=0.2, eps1=0.5, eps_prime=1.0, C1=0.8, C2=1.1,
                           C_step1=1.0, sup_R_M=1.0, r0=0.1, r1=0.05)
    lam = choose_lambda(k, 0.5)
    assert lam < 0.5
    assert lam < math.sqrt(k.rho / (48.0 * k.sup_R_M))
    assert lam < k.rho / (6.0 * k.C1)
    assert lam < k.rho / (48.0 * k.C2)


def test_star_shaped_check():
    """Test: homogeneous margins pass the ray test."""
    ok, witness = star_shaped_check(Condition("spectral", epsilon=0.5), [identity_operator(4)])
    assert ok and witness is None


def test_verify_conformal_scal():
    """Test: round S⁴ with positive scalar curvature ends on a round cylinder."""
    ff = FlatteningFactor("sphere", 4)
    report = verify_conformal(ff, Condition("scal"), grid=17, directions=2)
    k = report.constants
    assert k.rho == pytest.approx(0.45, rel=1e-6)
    assert k.c == pytest.approx(0.9 * 0.45 / 2.0, rel=1e-6)
    assert k.lam < report.profile.r2 < k.r1 < k.r0 <= 0.9 * ff.eps_prime
    assert report.slope_failures == 0
    assert report.step1_ok
    assert report.min_margin > 0
    assert report.end_deviation <= 1e-10
    assert report.log_u_residual <= 1e-8
    assert report.oracle_deviation <= 1e-5
    assert report.gamma < report.profile.delta
    assert report.verdict == "pass"

    first = [row["margin_scaled"] for row in report.rows if row["nu_index"] == 0]
    second = [row["margin_scaled"] for row in report.rows if row["nu_index"] == 1]
    assert_allclose(first, second, rtol=1e-9, atol=1e-12)
    json.dumps(report.to_dict())


def test_verify_conformal_spectral():
    """Test: almost-positive spectral condition passes on the round S⁴."""
    report = verify_conformal(FlatteningFactor("sphere", 4), Condition("spectral", epsilon=0.5), grid=17)
    assert report.constants.rho == pytest.approx(0.0556, rel=1e-2)
    assert report.verdict == "pass"


def test_verify_conformal_errors():
    """Test: bad targets, flat ambient and missing inner cones are rejected."""
    with pytest.raises(InputError):
        verify_conformal(FlatteningFactor("sphere", 4), Condition("scal"), gamma=1.0)
    with pytest.raises(ConditionViolation):
        verify_conformal(FlatteningFactor("flat", 4), Condition("scal"))
    with pytest.raises(InputError):
        verify_conformal(FlatteningFactor("sphere", 4), Condition("sec_almost_nonneg", epsilon=0.1))
