"""
Tests for model geometries, tubes and the finite-difference oracle.
"""

import logging
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.conditions import Condition, margin
from src.curvop import Frame, act, bianchi_project, from_riemann, haar_orthogonal, identity_operator, model_operator, operator_norm, to_riemann
from src.errors import InputError, InvariantError
from src.geometry import (
    ChartMetric,
    RotSymModel,
    chart_curvature_fd,
    chart_curvature_operator_fd,
    embedded_sff_fd,
    euclidean,
    gauss_tube_curvature,
    householder,
    orthonormal_frame,
    pullback,
    radial_operator,
    sphere_line_product,
    stereographic_sphere,
    tube_condition_radius,
    tube_curvature,
    tube_sff,
    warped_chart,
    warped_curvature,
)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def test_model_validation():
    """Test: kinds, aliases and radius bounds."""
    assert RotSymModel("RoundSpherePoint", 4).kind == "sphere-point"
    assert RotSymModel("sphere-subsphere", 5, k=2).dv == 2
    with pytest.raises(InputError):
        RotSymModel("torus", 4)
    with pytest.raises(InputError):
        RotSymModel("sphere-point", 4, k=1)
    with pytest.raises(InputError):
        RotSymModel("sphere-point", 4, r_max=4.0)
    with pytest.raises(InputError):
        RotSymModel("sphere-subsphere", 4, k=3)
    with pytest.raises(InputError):
        warped_curvature(RotSymModel("sphere-point", 4), 3.0)


def test_warped_curvature_of_space_forms():
    """Test: flat gives zero, round models give sectional curvature 1/a²."""
    assert np.max(np.abs(warped_curvature(RotSymModel("flat-point", 4), 0.5).comp)) == 0.0
    for model in (RotSymModel("sphere-point", 4), RotSymModel("sphere-subsphere", 5, k=2)):
        for r in (0.1, 0.7, 1.2):
            op = from_riemann(warped_curvature(model, r))
            assert_allclose(op.mat, identity_operator(model.n).mat, atol=1e-14)
    op = from_riemann(warped_curvature(RotSymModel("hyperbolic-point", 4, a=2.0), 1.0))
    assert_allclose(np.diag(op.mat), -0.25)


def test_plane_curvatures_match_warped_formulas():
    """Test: doubly warped formulas reduce to the ambient curvature."""
    r = 0.7
    for model in (RotSymModel("sphere-point", 4, a=1.5), RotSymModel("hyperbolic-point", 4),
                  RotSymModel("sphere-subsphere", 5, k=2)):
        f, df, ddf = float(model.f(r)), float(model.df(r)), float(model.ddf(r))
        k = model.plane_curvatures(r)
        assert float(k["vv"]) == pytest.approx((1 - df ** 2) / f ** 2)
        assert float(k["rv"]) == pytest.approx(-ddf / f)
        if model.kind == "sphere-subsphere":
            h, dh, ddh = float(model.h(r)), float(model.dh_(r)), float(model.ddh(r))
            assert float(k["hh"]) == pytest.approx((1 - dh ** 2) / h ** 2)
            assert float(k["rh"]) == pytest.approx(-ddh / h)
            assert float(k["vh"]) == pytest.approx(-df * dh / (f * h))


class TaperedPoint(RotSymModel):
    """f(r) = tanh r: rotationally symmetric with curvature varying in r."""

    def f(self, r):
        return np.tanh(np.asarray(r, dtype=float))

    def df(self, r):
        return 1.0 / np.cosh(np.asarray(r, dtype=float)) ** 2

    def ddf(self, r):
        return -2.0 * self.f(r) * self.df(r)

    def df_defect(self, r):
        return 1.0 - self.df(r) ** 2


def test_plane_curvatures_follow_the_warping_function():
    """Test: a model that is not a space form gets its curvature from f, checked against the FD chart."""
    model = TaperedPoint("flat-point", 4)
    rng = np.random.default_rng(8)
    chart = warped_chart(model)
    for r in (0.4, 0.9):
        k = model.plane_curvatures(r)
        sech2 = 1.0 / np.cosh(r) ** 2
        assert float(k["rv"]) == pytest.approx(2.0 * sech2)
        assert float(k["vv"]) == pytest.approx((1.0 - sech2 ** 2) / np.tanh(r) ** 2)
        assert float(k["vv"]) != pytest.approx(float(k["rv"]))

        direction = rng.standard_normal(model.n)
        x = r * direction / np.linalg.norm(direction)
        fd = chart_curvature_operator_fd(chart, x)
        c = np.linalg.inv(orthonormal_frame(chart, x)) @ (x / r)
        expected = radial_operator(float(k["vv"]), float(k["rv"]), c)
        assert_allclose(fd.mat, expected.mat, atol=1e-5)
        closed = from_riemann(warped_curvature(model, r))
        assert_allclose(np.sort(fd.eigenvalues()), np.sort(closed.eigenvalues()), atol=1e-5)


def test_plane_curvatures_at_underflowing_radii():
    """Test: point models keep their centre curvature once f² underflows."""
    for model in (RotSymModel("sphere-point", 4), RotSymModel("hyperbolic-point", 4, a=2.0)):
        k = model.plane_curvatures(np.array([1e-200, 1e-5, 0.0]))
        assert np.all(np.isfinite(k["vv"])) and np.all(np.isfinite(k["rv"]))
        assert_allclose(k["vv"], model.kappa, rtol=1e-9)
        assert_allclose(k["rv"], model.kappa, rtol=1e-9)


def test_fd_oracle_on_flat_and_round_charts():
    """Test: Euclidean chart is flat; stereographic S^4 has sectional curvature 1."""
    flat = chart_curvature_fd(euclidean(4), np.array([0.3, -0.2, 0.1, 0.5]))
    assert np.max(np.abs(flat.comp)) <= 1e-8

    rng = np.random.default_rng(1)
    chart = stereographic_sphere(4)
    for _ in range(3):
        x = rng.uniform(-0.8, 0.8, 4)
        op = chart_curvature_operator_fd(chart, x)
        assert_allclose(op.mat, np.eye(6), atol=1e-6)

    product = chart_curvature_operator_fd(sphere_line_product(4), np.array([0.2, 0.4, -0.1, 0.7]))
    assert_allclose(product.mat, model_operator(3, 1.0, 4).mat, atol=1e-6)


def test_fd_oracle_with_richardson():
    """Test: Richardson extrapolation keeps the sphere result."""
    chart = ChartMetric(4, stereographic_sphere(4, a=2.0).metric, h_fd=2e-3, richardson=True)
    op = chart_curvature_operator_fd(chart, np.array([0.5, 0.1, -0.4, 0.2]))
    assert_allclose(op.mat, 0.25 * np.eye(6), atol=1e-6)


def test_warped_chart_agrees_with_closed_form():
    """Test: FD curvature of the normal-coordinate chart matches warped_curvature."""
    rng = np.random.default_rng(5)
    models = [RotSymModel("flat-point", 4), RotSymModel("sphere-point", 4),
              RotSymModel("hyperbolic-point", 4), RotSymModel("sphere-point", 5, a=2.0)]
    for model in models:
        chart = warped_chart(model)
        for _ in range(2):
            direction = rng.standard_normal(model.n)
            r = float(rng.uniform(0.3, 1.0))
            x = r * direction / np.linalg.norm(direction)
            fd = chart_curvature_operator_fd(chart, x)
            # radial direction expressed in the Gram–Schmidt frame
            c = np.linalg.inv(orthonormal_frame(chart, x)) @ (x / r)
            expected = radial_operator(model.kappa, model.kappa, c)
            closed = from_riemann(warped_curvature(model, r))
            assert_allclose(np.sort(fd.eigenvalues()), np.sort(closed.eigenvalues()), atol=1e-5)
            assert_allclose(fd.mat, expected.mat, atol=1e-5)


def test_metric_must_be_positive_definite():
    """Test: non-positive-definite metrics are rejected."""
    chart = ChartMetric(3, lambda x: -np.eye(3))
    with pytest.raises(InvariantError):
        chart_curvature_fd(chart, np.zeros(3))
    boxed = ChartMetric(3, lambda x: np.eye(3), box=1.0)
    with pytest.raises(InputError):
        chart_curvature_fd(boxed, np.array([1.0, 0.0, 0.0]))


def test_tube_second_fundamental_form():
    """Test: tube sff and its bounded remainder."""
    sff, A = tube_sff(RotSymModel("flat-point", 4), 0.25)
    assert_allclose(np.diag(sff.mat), 4.0)
    assert_allclose(A.mat, 0.0, atol=1e-15)

    sphere = RotSymModel("sphere-point", 4)
    sff, A = tube_sff(sphere, 0.5)
    assert_allclose(np.diag(sff.mat), 1.0 / np.tan(0.5))
    assert_allclose(np.diag(A.mat), 1.0 / np.tan(0.5) - 2.0)
    _, A_small = tube_sff(sphere, 1e-6)
    assert np.max(np.abs(A_small.mat)) <= 1e-4

    sub = RotSymModel("sphere-subsphere", 5, k=2)
    sff, A = tube_sff(sub, 0.3)
    assert_allclose(np.diag(sff.mat)[2:], -np.tan(0.3))
    _, A_small = tube_sff(sub, 1e-6)
    assert np.max(np.abs(A_small.mat)) <= 1e-4

    # sphere of radius 0.5 in R^3 seen from its centre
    radius = 0.5
    embed = lambda u: np.array([u[0], u[1], np.sqrt(radius ** 2 - u @ u)])
    fd = embedded_sff_fd(embed, np.zeros(2), np.array([0.0, 0.0, -1.0]))
    flat_sff, _ = tube_sff(RotSymModel("flat-point", 3), radius)
    assert_allclose(fd.mat, flat_sff.mat, atol=1e-6)


def test_tube_curvature():
    """Test: flat tubes are round cylinders; round tubes have bounded r·‖E‖."""
    report = tube_curvature(RotSymModel("flat-point", 5), 0.3)
    assert np.max(np.abs(report.E.mat)) <= 1e-12
    assert report.L_fit <= 1e-12

    sphere = RotSymModel("sphere-point", 4)
    scaled = [r * operator_norm(tube_curvature(sphere, r).E) for r in np.geomspace(1e-3, 1.0, 20)]
    assert max(scaled) < 1.0
    r = 0.4
    R_T = tube_curvature(sphere, r).R_T
    assert_allclose(R_T.mat[0, 0], 1.0 / np.sin(r) ** 2, rtol=1e-10)
    assert_allclose(gauss_tube_curvature(sphere, r).mat, R_T.mat, rtol=1e-10, atol=1e-10)

    sub = RotSymModel("sphere-subsphere", 5, k=2)
    near_focal = tube_curvature(sub, 0.999 * sub.r_max)
    assert np.all(np.isfinite(near_focal.E.mat))
    assert_allclose(gauss_tube_curvature(sub, 0.6).mat, tube_curvature(sub, 0.6).R_T.mat, atol=1e-10)


def test_tube_condition_radius():
    """Test: small tubes around points have positive scalar curvature."""
    sphere = RotSymModel("sphere-point", 4)
    grid = np.geomspace(1e-3, 1.0, 16)
    r_star, rows = tube_condition_radius(sphere, Condition("scal"), grid)
    assert r_star == pytest.approx(1.0)
    L = tube_curvature(sphere, 1.0, grid=grid).L_fit
    assert all(row["r_norm_E"] <= L + 1e-12 for row in rows)


def test_pullback_equivariance():
    """Test: pullbacks by frames are the O(n) action."""
    rng = np.random.default_rng(3)
    g = rng.standard_normal((6, 6))
    op = bianchi_project(0.5 * (g + g.T))
    t = to_riemann(op)
    assert_allclose(pullback(Frame.standard(4), t).mat, op.mat, atol=1e-14)

    a = haar_orthogonal(4, seed=8)
    assert_allclose(pullback(Frame(a), t).mat, act(a.T, op).mat, atol=1e-12)

    perm = np.eye(4)[:, [2, 0, 3, 1]]
    assert_allclose(pullback(Frame(perm), t).mat, act(perm.T, op).mat, atol=1e-14)

    # two bases of the same V block give the same margin
    block = np.eye(4)
    block[:3, :3] = haar_orthogonal(3, seed=9)
    scal = Condition("scal")
    assert margin(scal, pullback(Frame(block), t)) == pytest.approx(margin(scal, op))


def test_householder_and_radial_operator():
    """Test: reflections and isotropic operators."""
    u = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.array([0.0, 0.6, 0.0, 0.8])
    H = householder(u, v)
    assert_allclose(H @ u, v, atol=1e-15)
    assert_allclose(H.T @ H, np.eye(4), atol=1e-15)
    assert_allclose(householder(u, u), np.eye(4))

    assert_allclose(radial_operator(1.0, 1.0, v).mat, np.eye(6), atol=1e-15)
    cylinder = radial_operator(1.0, 0.0, np.eye(4)[3])
    assert_allclose(cylinder.mat, model_operator(3, 1.0, 4).mat, atol=1e-15)
    with pytest.raises(InputError):
        radial_operator(1.0, 1.0, np.zeros(4))
