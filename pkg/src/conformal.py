"""
Conformal surgery around a point of a conformally flat manifold.

Near p the metric is g = v⁻²δ in a chart centred at p, so v²g is flat. The
deformed metric is σ²g with σ = u·v_λ: v_λ blends v (inside r ≤ λ/2) into 1
(outside r ≥ λ), and u solves u′/u = −α/r with α ramping from 0 at r0 up to 1
below r2, where σ²g = (γ/r)²δ is the cylinder Sⁿ⁻¹(γ) × ℝ.

Both built-in charts are radial, so every operator below is isotropic around
the radial direction ν and is assembled in the standard chart frame. Far
down the profile curvatures are handled in scaled form (u·q·r)²·R̃_D, which
is all that the positively homogeneous margins need.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.integrate import quad

from src.conditions import Condition, inner_cone_radius, margin
from src.curvop import (
    CurvatureOperator,
    Riemann4,
    SymmetricForm,
    from_riemann,
    kulkarni_wedge,
    model_operator,
    operator_norm,
    to_riemann,
)
from src.errors import ConditionViolation, InputError, InvariantError
from src.geometry import (
    ChartMetric,
    chart_curvature_operator_fd,
    christoffel_fd,
    euclidean,
    orthonormal_frame,
    radial_operator,
    riemann_coordinates_fd,
    stereographic_sphere,
    tensor_to_operator,
)
from src.observability import StageTrace
from src.utils import get_timestamp, smoothstep, smoothstep_d1, smoothstep_d2, validate_dimension, validate_positive
from src.version import VERSION

logger = logging.getLogger(__name__)

SAFETY = 0.9
CHARTS = ("sphere", "flat")
STEP1_RATIO = 0.5
# α = τ on the first quarter of [r1, r0], 0 on the last quarter
STEP1_EDGES = (0.25, 0.75)
BETA_SLOPE = 1.8
SMOOTHSTEP_SLOPE = 15.0 / 8.0
CUTOFF_SLOPE = 2.0 * SMOOTHSTEP_SLOPE
QUAD_EPSABS = 1e-15
QUAD_EPSREL = 1e-14
LOG_R_FLOOR = -650.0
ASSEMBLY_TOL = 1e-9
ORACLE_TOL = 1e-5
END_TOL = 1e-10
RESIDUAL_TOL = 1e-8
GAMMA_TOL = 1e-8
LOG_STEP = 1e-3
DEFAULT_LAMBDA_GRID = (0.1, 0.05, 0.025)
FD_JET_STEP = 1e-4


# Conformal change formulas on a chart

class Jet(NamedTuple):
    """A scalar function of one variable with its first two derivatives."""

    f: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]


def scalar_jet_fd(f: Callable[[np.ndarray], float], x, h: float = FD_JET_STEP):
    """(f, ∂f, ∂∂f) at x by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    eye = np.eye(n)
    f0 = float(f(x))
    plus = np.array([float(f(x + h * eye[i])) for i in range(n)])
    minus = np.array([float(f(x - h * eye[i])) for i in range(n)])
    grad = (plus - minus) / (2 * h)
    hess = np.empty((n, n))
    for i in range(n):
        hess[i, i] = (plus[i] - 2 * f0 + minus[i]) / h ** 2
        for j in range(i + 1, n):
            mixed = (f(x + h * (eye[i] + eye[j])) - f(x + h * (eye[i] - eye[j]))
                     - f(x - h * (eye[i] - eye[j])) + f(x - h * (eye[i] + eye[j]))) / (4 * h ** 2)
            hess[i, j] = hess[j, i] = float(mixed)
    return f0, grad, hess


def vector_jacobian_fd(field_: Callable[[np.ndarray], np.ndarray], x, h: float = FD_JET_STEP) -> np.ndarray:
    """J[k, i] = ∂_i Y^k."""
    x = np.asarray(x, dtype=float)
    eye = np.eye(x.size)
    cols = [(np.asarray(field_(x + h * eye[i])) - np.asarray(field_(x - h * eye[i]))) / (2 * h)
            for i in range(x.size)]
    return np.stack(cols, axis=1)


def conformal_chart(chart: ChartMetric, sigma: Callable[[np.ndarray], float]) -> ChartMetric:
    """The chart of σ²g."""
    return ChartMetric(chart.dim, lambda y: float(sigma(y)) ** 2 * chart.g(y), chart.h_fd, chart.box,
                       chart.richardson)


def _positive_factor(sigma, x) -> float:
    value = float(sigma(x))
    if not value > 0:
        raise InputError(f"conformal factor must be positive, got {value:.3e} at {x}")
    return value


def hessian(chart: ChartMetric, f, x) -> np.ndarray:
    """Hess^g f = ∂²f − Γᵏ ∂_k f in coordinates."""
    _, df, ddf = scalar_jet_fd(f, x)
    gamma, _ = christoffel_fd(chart, x)
    return ddf - np.einsum('kij,k->ij', gamma, df)


def covariant_derivative(chart: ChartMetric, X, Y, x) -> np.ndarray:
    """∇^g_X Y = X^i ∂_i Y + Γ(X, Y) in coordinates."""
    x = np.asarray(x, dtype=float)
    gamma, _ = christoffel_fd(chart, x)
    Xv, Yv = np.asarray(X(x), dtype=float), np.asarray(Y(x), dtype=float)
    return vector_jacobian_fd(Y, x) @ Xv + np.einsum('kij,i,j->k', gamma, Xv, Yv)


def conformal_gradient(sigma, f, chart: ChartMetric, x) -> np.ndarray:
    """
    ∇^{σ²g} f = σ⁻² ∇^g f.

    Examples:
        σ ≡ 1 → the g-gradient
    """
    x = np.asarray(x, dtype=float)
    s = _positive_factor(sigma, x)
    _, df, _ = scalar_jet_fd(f, x)
    return np.linalg.solve(chart.g(x), df) / s ** 2


def conformal_hessian(sigma, f, chart: ChartMetric, x) -> np.ndarray:
    """
    Hess^{σ²g} f = Hess^g f + σ⁻¹(dσ(∇^g f)·g − dσ⊙df).

    Examples:
        σ = eˣ on flat ℝ², f = y → matches the FD Hessian of σ²g
    """
    x = np.asarray(x, dtype=float)
    s = _positive_factor(sigma, x)
    g = chart.g(x)
    _, dsigma, _ = scalar_jet_fd(sigma, x)
    _, df, _ = scalar_jet_fd(f, x)
    grad_f = np.linalg.solve(g, df)
    sym = np.outer(dsigma, df) + np.outer(df, dsigma)
    return hessian(chart, f, x) + (float(dsigma @ grad_f) * g - sym) / s


def conformal_connection(sigma, X, Y, chart: ChartMetric, x) -> np.ndarray:
    """∇^{σ²g}_X Y = ∇^g_X Y + σ⁻¹(dσ(X)Y + dσ(Y)X − g(X,Y)∇^g σ)."""
    x = np.asarray(x, dtype=float)
    s = _positive_factor(sigma, x)
    g = chart.g(x)
    _, dsigma, _ = scalar_jet_fd(sigma, x)
    Xv, Yv = np.asarray(X(x), dtype=float), np.asarray(Y(x), dtype=float)
    grad_sigma = np.linalg.solve(g, dsigma)
    correction = (dsigma @ Xv) * Yv + (dsigma @ Yv) * Xv - (Xv @ g @ Yv) * grad_sigma
    return covariant_derivative(chart, X, Y, x) + correction / s


def wedge_tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kulkarni wedge of two symmetric coordinate forms as a (4,0) tensor; g∧g is the unit sphere."""
    return 0.5 * (np.einsum('ad,bc->abcd', a, b) + np.einsum('bc,ad->abcd', a, b)
                  - np.einsum('ac,bd->abcd', a, b) - np.einsum('bd,ac->abcd', a, b))


def conformal_curvature_radial(w: Jet, f, chart: ChartMetric, x, R_g: Optional[np.ndarray] = None) -> Riemann4:
    """
    Curvature of σ²g for σ = w∘f:

        R = σ²[R_g − (w′/w) g∧(2Hess f + (w′/w)|df|² g) − 2(w″/w − 2(w′/w)²) g∧df²]

    returned in the Gram–Schmidt frame of σ²g. R_g defaults to the FD
    coordinate tensor of the chart.

    Examples:
        flat g, w(t) = 1/t, f = |x| → the cylinder Sⁿ⁻¹(1) × ℝ
    """
    x = np.asarray(x, dtype=float)
    f0, df, _ = scalar_jet_fd(f, x)
    W = float(w.f(f0))
    if not W > 0:
        raise InputError(f"w must be positive on the range of f, got w({f0:.6g}) = {W:.3e}")
    w1, w2 = float(w.d1(f0)) / W, float(w.d2(f0)) / W
    g = chart.g(x)
    norm_df = float(df @ np.linalg.solve(g, df))
    hess = hessian(chart, f, x)
    if R_g is None:
        R_g = riemann_coordinates_fd(chart, x)
    coords = W ** 2 * (R_g - w1 * wedge_tensor(g, 2.0 * hess + w1 * norm_df * g)
                       - 2.0 * (w2 - 2.0 * w1 ** 2) * wedge_tensor(g, np.outer(df, df)))
    frame = orthonormal_frame(chart, x) / W
    comp = np.einsum('abcd,ai,bj,ck,dl->ijkl', coords, frame, frame, frame, frame)
    return to_riemann(tensor_to_operator(comp))


def formula_oracle(fixtures: int = 6, seed: int = 0, n: int = 3) -> float:
    """
    Largest relative gap between the conformal-change formulas and the FD
    quantities of σ²g, over random fixtures σ = exp(p·f) on flat and round charts.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for index in range(fixtures):
        chart = euclidean(n) if index % 2 == 0 else stereographic_sphere(n)
        k = rng.uniform(-0.5, 0.5, n)
        Q = rng.uniform(-0.5, 0.5, (n, n))
        Q = 0.5 * (Q + Q.T)
        p = float(rng.uniform(-0.8, 0.8))
        A, b = rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, n)
        x = rng.uniform(-0.4, 0.4, n)

        def f(y, k=k, Q=Q):
            return float(k @ y + 0.5 * y @ Q @ y + 0.1 * math.sin(y[0]))

        w = Jet(lambda t, p=p: math.exp(p * t), lambda t, p=p: p * math.exp(p * t),
                lambda t, p=p: p * p * math.exp(p * t))

        def sigma(y, w=w, f=f):
            return w.f(f(y))

        X = lambda y, A=A, b=b: A @ y + b
        Y = lambda y, A=A: np.array([math.cos(y[-1]), *(A[0, 1:] * y[1:])])

        deformed = conformal_chart(chart, sigma)
        gaps = []
        hess_fd = hessian(deformed, f, x)
        gaps.append(np.max(np.abs(conformal_hessian(sigma, f, chart, x) - hess_fd)) / max(1.0, np.max(np.abs(hess_fd))))
        conn_fd = covariant_derivative(deformed, X, Y, x)
        gaps.append(np.max(np.abs(conformal_connection(sigma, X, Y, chart, x) - conn_fd))
                    / max(1.0, np.max(np.abs(conn_fd))))
        _, df, _ = scalar_jet_fd(f, x)
        grad_fd = np.linalg.solve(deformed.g(x), df)
        gaps.append(np.max(np.abs(conformal_gradient(sigma, f, chart, x) - grad_fd)) / max(1.0, np.max(np.abs(grad_fd))))
        curv_fd = chart_curvature_operator_fd(deformed, x)
        from_formula = from_riemann(conformal_curvature_radial(w, f, chart, x))
        gaps.append(np.max(np.abs(from_formula.mat - curv_fd.mat)) / max(1.0, operator_norm(curv_fd)))
        logger.debug(f"conformal fixture {index}: gaps {[f'{g:.2e}' for g in gaps]}")
        worst = max(worst, *gaps)
    return float(worst)


# Flattening charts

@dataclass(frozen=True)
class FlatteningFactor:
    """
    A radial flattening factor v around p: g = v⁻²δ on the chart, v(0) = 1.

    sphere: round Sⁿ(a) stereographically, v = 1 + |y|²/(4a²)
    flat:   Euclidean chart, v ≡ 1
    eps_prime is the chart radius on which ½ ≤ v ≤ 2 is enforced.
    """

    kind: str
    n: int
    a: float = 1.0
    eps_prime: Optional[float] = None

    def __post_init__(self):
        kind = str(self.kind).strip().lower()
        if kind not in CHARTS:
            raise InputError(f"unknown flattening chart {self.kind!r}; expected one of {', '.join(CHARTS)}")
        object.__setattr__(self, 'kind', kind)
        ok, msg = validate_dimension(self.n, 3, 12)
        if not ok:
            raise InputError(msg)
        ok, msg = validate_positive(self.a, "a")
        if not ok:
            raise InputError(msg)
        eps = self.a if self.eps_prime is None else float(self.eps_prime)
        if not 0 < eps < 2.0 * self.a:
            raise InputError(f"eps_prime must lie in (0, {2.0 * self.a:g}) so that v <= 2, got {eps}")
        object.__setattr__(self, 'eps_prime', eps)

    @property
    def kappa(self) -> float:
        return 1.0 / self.a ** 2 if self.kind == "sphere" else 0.0

    @property
    def chart(self) -> ChartMetric:
        if self.kind == "sphere":
            return stereographic_sphere(self.n, self.a)
        return euclidean(self.n)

    def v(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return self.radial(float(np.linalg.norm(y)))[0]

    def radial(self, r: float) -> tuple[float, float, float, float]:
        """(v, r·v′, r²·v″, v² − 1) at flat radius r."""
        if self.kind == "flat":
            return 1.0, 0.0, 0.0, 0.0
        t = r * r / (2.0 * self.a ** 2)
        return 1.0 + 0.5 * t, t, t, t * (1.0 + 0.25 * t)

    def ambient_operator(self, nu) -> CurvatureOperator:
        """R̃_M: curvature of g in the frame v·∂_i."""
        return radial_operator(self.kappa, self.kappa, nu)

    def validate(self, samples: int = 3, seed: int = 0) -> float:
        """Largest FD curvature of v²g at random points; must stay below 1e-6."""
        chart = self.chart
        flattened = ChartMetric(self.n, lambda y: self.v(y) ** 2 * chart.g(y))
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(samples):
            d = rng.standard_normal(self.n)
            y = float(rng.uniform(0.1, 0.9)) * self.eps_prime * d / np.linalg.norm(d)
            worst = max(worst, float(np.max(np.abs(chart_curvature_operator_fd(flattened, y).mat))))
        if worst > 1e-6:
            raise InvariantError(f"v²g is not flat for the {self.kind} chart (FD curvature {worst:.3e})")
        return worst

    def describe(self) -> dict:
        return {"chart": self.kind, "n": self.n, "a": self.a, "eps_prime": self.eps_prime}


# Cutoff blend v_λ

def cutoff(x):
    """φ with φ = 1 on [0, ½] and φ = 0 on [1, ∞)."""
    return 1.0 - smoothstep(2.0 * np.asarray(x, dtype=float) - 1.0)


def cutoff_d1(x):
    return -2.0 * smoothstep_d1(2.0 * np.asarray(x, dtype=float) - 1.0)


def cutoff_d2(x):
    return -4.0 * smoothstep_d2(2.0 * np.asarray(x, dtype=float) - 1.0)


class CutoffState(NamedTuple):
    phi: float
    v: float
    v_lambda: float
    q: float
    log_q: float
    r_dlog_q: float
    r2_ddlog_q: float
    r_dq: float


@dataclass(frozen=True)
class CutoffProfile:
    """v_λ = √(1 + φ(r/λ)(v² − 1)) and q = v_λ/v."""

    ff: FlatteningFactor
    lam: float

    def __post_init__(self):
        ok, msg = validate_positive(self.lam, "lambda")
        if not ok:
            raise InputError(msg)
        object.__setattr__(self, 'lam', float(self.lam))

    def state(self, r: float) -> CutoffState:
        return cutoff_derivatives(self.ff, self, r)

    def q(self, r: float) -> float:
        return self.state(r).q

    def v_lambda(self, r: float) -> float:
        return self.state(r).v_lambda


def cutoff_derivatives(ff: FlatteningFactor, cp: CutoffProfile, r: float) -> CutoffState:
    """
    Values and scale-free radial derivatives of the cutoff blend at r.

    r_dlog_q = r(log q)′ and r2_ddlog_q = r²(log q)″ come from P = v_λ²;
    r_dq = r·q′ uses dq = (1/(2q))((1−φ_λ)d(v⁻²) + dφ_λ(1 − v⁻²)).
    """
    v, rv1, r2v2, m = ff.radial(r)
    x = r / cp.lam
    # φ is locally constant off the ramp; x² overflows when λ is far below r
    if x >= 1.0:
        phi, x_dphi, x2_ddphi = 0.0, 0.0, 0.0
    elif x <= 0.5:
        phi, x_dphi, x2_ddphi = 1.0, 0.0, 0.0
    else:
        phi = float(cutoff(x))
        x_dphi = x * float(cutoff_d1(x))
        x2_ddphi = x * x * float(cutoff_d2(x))
    P = 1.0 + phi * m
    rP1 = x_dphi * m + phi * 2.0 * v * rv1
    r2P2 = x2_ddphi * m + 2.0 * x_dphi * 2.0 * v * rv1 + phi * 2.0 * (rv1 * rv1 + v * r2v2)
    log_q = 0.5 * math.log1p(phi * m) - math.log(v)
    q = math.exp(log_q)
    r_dlog_q = rP1 / (2.0 * P) - rv1 / v
    r2_ddlog_q = r2P2 / (2.0 * P) - rP1 * rP1 / (2.0 * P * P) - (v * r2v2 - rv1 * rv1) / (v * v)
    r_dq = ((1.0 - phi) * (-2.0 * rv1 / v ** 3) + x_dphi * m / (v * v)) / (2.0 * q)
    return CutoffState(phi, v, math.sqrt(P), q, log_q, r_dlog_q, r2_ddlog_q, r_dq)


# α and u

class AlphaState(NamedTuple):
    region: str
    alpha: float
    r_dalpha: float
    log_u: float


def _step1_shape(x):
    """1 on [0, ¼], C² ramp down, 0 on [¾, 1]."""
    lo, hi = STEP1_EDGES
    return 1.0 - float(smoothstep((x - lo) / (hi - lo)))


def _step1_shape_d1(x):
    lo, hi = STEP1_EDGES
    return -float(smoothstep_d1((x - lo) / (hi - lo))) / (hi - lo)


def _step1_log_integral(r: float, r0: float, r1: float) -> float:
    """∫_r^{r0} shape(x(t))/t dt; log u = τ times this on [r1, r0]."""
    width = r0 - r1
    lo, hi = STEP1_EDGES
    points = [p for p in (r1 + lo * width, r1 + hi * width) if r < p < r0]
    value, _ = quad(lambda t: _step1_shape((t - r1) / width) / t, r, r0, points=points or None,
                    epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    return float(value)


def _step1_state(tau: float, r0: float, r1: float, r: float, with_log_u: bool = True) -> AlphaState:
    width = r0 - r1
    x = (r - r1) / width
    J = _step1_log_integral(r, r0, r1) if with_log_u else 0.0
    return AlphaState("step1", tau * _step1_shape(x), tau * r * _step1_shape_d1(x) / width, tau * J)


def _w_of(tau: float) -> float:
    """w with 2/(1 + e^{−w}) = τ."""
    return -math.log(2.0 / tau - 1.0)


@dataclass(frozen=True)
class AlphaProfile:
    """
    α on (0, ∞): 0 beyond r0, the Step-1 ramp on [r1, r0], β(s(r)) on
    [r2, r1] with s = c·log(r1/r), and 1 below r2.

    β = 2/(1 + e^{−w}) with w = w_τ(1 − S(s/s2)) so that β′ ≤ 0.9·β(2 − β).
    Radii below r1 are handled through log r.
    """

    c: float
    tau: float
    r0: float
    r1: float
    s2: float
    w_tau: float
    log_integral_r1: float
    tanh_mean: float
    gamma_target: Optional[float] = None

    @property
    def log_r1(self) -> float:
        return math.log(self.r1)

    @property
    def log_r2(self) -> float:
        return self.log_r1 - self.s2 / self.c

    @property
    def r2(self) -> float:
        return math.exp(self.log_r2)

    @property
    def log_delta(self) -> float:
        return self.log_r1 + self.tau * self.log_integral_r1

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta)

    @property
    def log_gamma(self) -> float:
        return self.log_delta + self.s2 * self.tanh_mean / self.c

    @property
    def gamma(self) -> float:
        return math.exp(self.log_gamma)

    @property
    def s2_min(self) -> float:
        return SMOOTHSTEP_SLOPE * abs(self.w_tau) / BETA_SLOPE

    @property
    def gamma_max(self) -> float:
        return math.exp(self.log_delta + self.s2_min * self.tanh_mean / self.c)

    def w(self, s: float) -> float:
        return self.w_tau * (1.0 - float(smoothstep(s / self.s2))) if self.s2 > 0 else 0.0

    def dw(self, s: float) -> float:
        return -self.w_tau * float(smoothstep_d1(s / self.s2)) / self.s2 if self.s2 > 0 else 0.0

    def beta(self, s: float) -> float:
        return 1.0 + math.tanh(0.5 * self.w(s))

    def dbeta(self, s: float) -> float:
        b = self.beta(s)
        return 0.5 * b * (2.0 - b) * self.dw(s)

    def tanh_integral(self, s: float) -> float:
        """∫₀ˢ (β − 1)."""
        if s <= 0:
            return 0.0
        value, _ = quad(lambda t: math.tanh(0.5 * self.w(t)), 0.0, min(s, self.s2),
                        epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
        return float(value)

    def state(self, log_r: float) -> AlphaState:
        if log_r >= math.log(self.r0):
            return AlphaState("outer", 0.0, 0.0, 0.0)
        if log_r >= self.log_r1:
            return _step1_state(self.tau, self.r0, self.r1, math.exp(log_r))
        base = self.tau * self.log_integral_r1
        if log_r > self.log_r2:
            s = self.c * (self.log_r1 - log_r)
            return AlphaState("step2", self.beta(s), -self.c * self.dbeta(s),
                              base + (s + self.tanh_integral(s)) / self.c)
        return AlphaState("cylinder", 1.0, 0.0,
                          base + self.s2 * (1.0 + self.tanh_mean) / self.c + (self.log_r2 - log_r))

    def alpha(self, r: float) -> float:
        return self.state(math.log(r)).alpha

    def dalpha(self, r: float) -> float:
        return self.state(math.log(r)).r_dalpha / r

    def log_u(self, r: float) -> float:
        return self.state(math.log(r)).log_u

    def u(self, r: float) -> float:
        return math.exp(self.log_u(r))

    def slope_slack(self, log_r: float) -> float:
        """r·(α′ + c·α(2 − α)/r), non-negative below r1."""
        st = self.state(log_r)
        return st.r_dalpha + self.c * st.alpha * (2.0 - st.alpha)

    def log_u_residual(self, log_r: float, h: Optional[float] = None) -> float:
        """
        |d log u/d log r + α| by a five-point stencil in log r. The default
        step is LOG_STEP on the Step-1 ramp and ten times that below r1.
        """
        if h is None:
            h = LOG_STEP if log_r >= self.log_r1 else 10.0 * LOG_STEP
        f = [self.state(log_r + k * h).log_u for k in (-2, -1, 1, 2)]
        slope = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
        return abs(slope + self.state(log_r).alpha)

    def summary(self) -> dict:
        return {
            "c": self.c, "tau": self.tau, "r0": self.r0, "r1": self.r1, "log_r2": self.log_r2,
            "s2": self.s2, "s2_min": self.s2_min, "log_delta": self.log_delta, "log_gamma": self.log_gamma,
            "gamma": self.gamma, "delta": self.delta, "gamma_max": self.gamma_max,
        }


def build_alpha(c: float, tau: float, r0: float, r1: float, gamma: Optional[float] = None,
                gamma_fraction: Optional[float] = None) -> AlphaProfile:
    """
    Build α for a target end radius γ, given absolutely or as a fraction of γ_max.

    The attainable range is (0, γ_max] with γ_max < δ = r1·exp(∫_{r1}^{r0} α/t dt),
    since β may not grow faster than 0.9·β(2 − β). τ = 1 only admits γ = δ.

    Examples:
        gamma_fraction = 1 → s2 = s2_min
        gamma > δ → InputError
    """
    for value, name in ((c, "c"), (tau, "tau"), (r0, "r0"), (r1, "r1")):
        ok, msg = validate_positive(value, name)
        if not ok:
            raise InputError(msg)
    if tau > 1.0:
        raise InputError(f"tau must lie in (0, 1], got {tau}")
    if not r1 < r0:
        raise InputError(f"need r1 < r0, got r1={r1}, r0={r0}")
    if gamma is not None and gamma_fraction is not None:
        raise InputError("give either gamma or gamma_fraction, not both")

    J1 = _step1_log_integral(r1, r0, r1)
    log_delta = math.log(r1) + tau * J1
    w_tau = _w_of(tau) if tau < 1.0 else 0.0

    if w_tau == 0.0:
        if gamma is not None and abs(math.log(gamma) - log_delta) > GAMMA_TOL:
            raise InputError(f"tau = 1 only reaches gamma = delta = {math.exp(log_delta):.6g}")
        return AlphaProfile(c, tau, r0, r1, 0.0, 0.0, J1, 0.0, gamma)

    mean, _ = quad(lambda x: math.tanh(0.5 * w_tau * (1.0 - float(smoothstep(x)))), 0.0, 1.0,
                   epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL)
    s2_min = SMOOTHSTEP_SLOPE * abs(w_tau) / BETA_SLOPE
    log_gamma_max = log_delta + s2_min * mean / c

    if gamma is None:
        fraction = 0.5 if gamma_fraction is None else float(gamma_fraction)
        if not 0 < fraction <= 1:
            raise InputError(f"gamma_fraction must lie in (0, 1], got {fraction}")
        log_gamma = log_gamma_max + math.log(fraction)
    else:
        ok, msg = validate_positive(gamma, "gamma")
        if not ok:
            raise InputError(msg)
        log_gamma = math.log(gamma)
        if log_gamma >= log_delta:
            raise InputError(f"gamma {gamma:.6g} must lie below delta = {math.exp(log_delta):.6g}")
        if log_gamma > log_gamma_max + GAMMA_TOL:
            raise InputError(f"gamma {gamma:.6g} out of range (0, {math.exp(log_gamma_max):.6g}]")
        log_gamma = min(log_gamma, log_gamma_max)

    s2 = c * (log_gamma - log_delta) / mean
    if math.log(r1) - s2 / c < LOG_R_FLOOR:
        raise InputError(f"gamma target drives r2 below double range (log r2 = {math.log(r1) - s2 / c:.1f})")
    ap = AlphaProfile(c, tau, r0, r1, float(s2), w_tau, J1, float(mean), gamma)

    # independent quadrature of ∫(β − 1) over the actual segment
    achieved = ap.log_delta + ap.tanh_integral(ap.s2) / c
    if abs(achieved - log_gamma) > GAMMA_TOL:
        raise InvariantError(f"gamma formula misses its target by {abs(achieved - log_gamma):.3e} in log")
    for s in np.linspace(0.0, ap.s2, 65):
        b = ap.beta(float(s))
        if ap.dbeta(float(s)) > 0.9 * b * (2.0 - b) + 1e-12:
            raise InvariantError(f"beta grows too fast at s={s:.6g}")
    logger.info(f"alpha profile: tau={tau:.4g}, r0={r0:.4g}, r1={r1:.4g}, s2={ap.s2:.4g}, "
                f"log r2={ap.log_r2:.4g}, gamma={ap.gamma:.4g}")
    return ap


# Decomposition

def scaled_radial(psi1: float, psi2: float, nu) -> CurvatureOperator:
    """(e^ψ r)²·curvature of e^{2ψ}δ given r·ψ′ = psi1 and r²·ψ″ = psi2."""
    return radial_operator(-(2.0 * psi1 + psi1 * psi1), -(psi2 + psi1), nu)


def _unit(nu, n: int) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (n,):
        raise InputError(f"direction needs shape ({n},), got {nu.shape}")
    norm = np.linalg.norm(nu)
    if norm == 0.0:
        raise InputError("direction must be non-zero")
    return nu / norm


def cylinder_operator(nu) -> CurvatureOperator:
    """R_{Sⁿ⁻¹×ℝ} with the ℝ factor along nu."""
    return radial_operator(1.0, 0.0, nu)


def radial_wedge(nu) -> CurvatureOperator:
    """g ∧ (ν♭ ⊗ ν♭)."""
    nu = np.asarray(nu, dtype=float)
    n = nu.size
    return kulkarni_wedge(SymmetricForm.identity(n), SymmetricForm(n, np.outer(nu, nu)))


def error_operator(ff: FlatteningFactor, cp: CutoffProfile, nu, r: float) -> CurvatureOperator:
    """E^λ = q⁻¹ g∧(∂_r q·g − dq⊙ν♭)."""
    nu = _unit(nu, ff.n)
    st = cutoff_derivatives(ff, cp, r)
    dq = st.r_dq / r
    form = dq * np.eye(ff.n) - 2.0 * dq * np.outer(nu, nu)
    return kulkarni_wedge(SymmetricForm.identity(ff.n), SymmetricForm(ff.n, form)) * (1.0 / st.q)


def scaled_blended_ambient(ff: FlatteningFactor, cp: CutoffProfile, nu, r: float) -> CurvatureOperator:
    """(q·r)²·R̃^λ_M."""
    st = cutoff_derivatives(ff, cp, r)
    return scaled_radial(st.r_dlog_q, st.r2_ddlog_q, _unit(nu, ff.n))


def blended_ambient(ff: FlatteningFactor, cp: CutoffProfile, nu, r: float) -> CurvatureOperator:
    """R̃^λ_M, the curvature of v_λ²g in the frame q⁻¹∂_i."""
    st = cutoff_derivatives(ff, cp, r)
    return scaled_blended_ambient(ff, cp, nu, r) * (1.0 / (st.q * r) ** 2)


def conformal_operator(ff: FlatteningFactor, cp: CutoffProfile, ap: AlphaProfile, nu, r: float,
                       scaled: bool = False, log_r: Optional[float] = None) -> CurvatureOperator:
    """
    R̃_D directly from the conformal factor u·q of g_D = (u·q)²δ.

    scaled=True returns (u·q·r)²·R̃_D; log_r may replace r for radii below
    double range of r².
    """
    log_r = math.log(r) if log_r is None else log_r
    r = math.exp(log_r)
    st = cutoff_derivatives(ff, cp, r)
    a = ap.state(log_r)
    op = scaled_radial(-a.alpha + st.r_dlog_q, a.alpha - a.r_dalpha + st.r2_ddlog_q, _unit(nu, ff.n))
    if scaled:
        return op
    return op * math.exp(-2.0 * (a.log_u + st.log_q + log_r))


def decompose_R_D(ff: FlatteningFactor, cp: CutoffProfile, ap: AlphaProfile, nu, r: float,
                  scaled: bool = False, C1: Optional[float] = None,
                  log_r: Optional[float] = None) -> tuple[CurvatureOperator, CurvatureOperator]:
    """
    R̃_D = u⁻²R̃^λ_M + (uq)⁻²[α(2−α)/r²·R_{Sⁿ⁻¹×ℝ} + (2α′/r)·g∧ν♭² + (2α/r)·E^λ].

    Returns (R̃_D, E^λ), R̃_D scaled by (u·q·r)² when asked. The assembly is
    checked against the direct conformal curvature, and ‖E^λ‖ against C1
    when given.

    Examples:
        flat chart → q ≡ 1 and E^λ = 0
        flat chart, r < r2 → R̃_D = R_{Sⁿ⁻¹×ℝ}/γ²
    """
    log_r = math.log(r) if log_r is None else log_r
    r = math.exp(log_r)
    nu = _unit(nu, ff.n)
    st = cutoff_derivatives(ff, cp, r)
    a = ap.state(log_r)
    E = error_operator(ff, cp, nu, r)
    scaled_op = (scaled_blended_ambient(ff, cp, nu, r)
                 + a.alpha * (2.0 - a.alpha) * cylinder_operator(nu)
                 + 2.0 * a.r_dalpha * radial_wedge(nu)
                 + 2.0 * a.alpha * r * E)
    direct = conformal_operator(ff, cp, ap, nu, r, scaled=True, log_r=log_r)
    if not (np.all(np.isfinite(scaled_op.mat)) and np.all(np.isfinite(direct.mat))
            and np.all(np.isfinite(E.mat))):
        raise InvariantError(f"non-finite conformal curvature at log r = {log_r:.6g}")
    gap = float(np.max(np.abs(scaled_op.mat - direct.mat)))
    if gap > ASSEMBLY_TOL * max(1.0, operator_norm(direct)):
        raise InvariantError(f"conformal assembly disagrees with the direct curvature by {gap:.3e} at r={r:.6g}")
    if C1 is not None and operator_norm(E) > C1 * (1.0 + 1e-12):
        raise InvariantError(f"‖E‖ = {operator_norm(E):.4g} exceeds C1 = {C1:.4g} at r={r:.6g}")
    if scaled:
        return scaled_op, E
    return scaled_op * math.exp(-2.0 * (a.log_u + st.log_q + log_r)), E


def deformed_chart(ff: FlatteningFactor, cp: CutoffProfile, ap: AlphaProfile, h_fd: float) -> ChartMetric:
    """Chart of g_D = (u·v_λ)²g."""
    base = ff.chart

    def metric(y):
        r = float(np.linalg.norm(y))
        return (ap.u(r) * cutoff_derivatives(ff, cp, r).v_lambda) ** 2 * base.g(y)
    return ChartMetric(ff.n, metric, h_fd, richardson=True)


def decomposition_oracle(ff: FlatteningFactor, cp: CutoffProfile, ap: AlphaProfile, nu, r: float,
                         h_rel: float = 1e-2) -> float:
    """Relative gap between the assembled R̃_D and the FD curvature of the explicit metric."""
    nu = _unit(nu, ff.n)
    expected, _ = decompose_R_D(ff, cp, ap, nu, r)
    fd = chart_curvature_operator_fd(deformed_chart(ff, cp, ap, h_rel * r), r * nu)
    gap = float(np.max(np.abs(fd.mat - expected.mat))) / max(1.0, operator_norm(expected))
    logger.debug(f"conformal oracle at r={r:.6g}: deviation {gap:.3e}")
    return gap


# Constants

@dataclass
class ConformalConstants:
    """
    Constants of the conformal surgery.

    eps1 is the Step-1 margin (ball radius around R̃_M inside C); the end
    radius of the modified region is r0, and eps_prime the chart radius.
    """

    n: int
    rho: float
    c: float
    eps1: float
    eps_prime: float
    C1: float
    C2: float
    C_step1: float
    sup_R_M: float
    r0: float
    r1: float
    tau: Optional[float] = None
    lam: Optional[float] = None

    @property
    def end_radius(self) -> float:
        return self.r0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["end_radius"] = self.end_radius
        return out


def star_shaped_check(c: Condition, ops: list, ts=None) -> tuple[bool, Optional[dict]]:
    """Sampled ray test: margin(t·R) > 0 for t ∈ (0, 1] whenever R satisfies c."""
    ts = np.geomspace(1e-3, 1.0, 7) if ts is None else np.asarray(ts, dtype=float)
    for index, op in enumerate(ops):
        if not margin(c, op) > c.tolerance:
            continue
        for t in ts:
            value = margin(c, float(t) * op)
            if not value > 0:
                return False, {"sample": index, "t": float(t), "margin": value}
    return True, None


def error_constant(ff: FlatteningFactor, lambdas=None, grid: int = 64) -> float:
    """C1 = 2·max ‖E^λ‖ over a λ grid; E^λ is bounded independently of λ."""
    lambdas = np.geomspace(ff.eps_prime / 64, ff.eps_prime / 2, 6) if lambdas is None else lambdas
    nu = np.eye(ff.n)[-1]
    worst = 0.0
    for lam in lambdas:
        cp = CutoffProfile(ff, float(lam))
        radii = np.concatenate([np.linspace(0.5 * lam, lam, 33), np.geomspace(1e-3 * ff.eps_prime, ff.eps_prime, grid)])
        worst = max(worst, max(operator_norm(error_operator(ff, cp, nu, float(r))) for r in radii))
    return 2.0 * worst


@dataclass
class CutoffBound:
    C2: float
    rows: list
    bounded: bool
    outer_defect: float

    def to_dict(self) -> dict:
        return asdict(self)


def cutoff_bound_check(ff: FlatteningFactor, lambdas=None, nodes: int = 65) -> CutoffBound:
    """
    λ·sup_{r ≤ λ} ‖R̃^λ_M‖ on a λ grid.

    The grid is bounded when no value exceeds twice the one at the largest
    λ. Beyond λ the blend leaves g alone, so R̃^λ_M must equal R̃_M there.

    Examples:
        flat chart → C2 = 0
    """
    if lambdas is None:
        lambdas = [ff.eps_prime * value for value in DEFAULT_LAMBDA_GRID]
    lambdas = sorted((float(x) for x in lambdas), reverse=True)
    nu = np.eye(ff.n)[-1]
    ambient = ff.ambient_operator(nu)
    rows = []
    outer_defect = 0.0
    for lam in lambdas:
        if not 0 < lam < ff.eps_prime:
            raise InputError(f"lambda must lie in (0, {ff.eps_prime:g}), got {lam}")
        cp = CutoffProfile(ff, lam)
        sup = max(operator_norm(blended_ambient(ff, cp, nu, float(r))) for r in np.linspace(0.5 * lam, lam, nodes))
        rows.append({"lambda": lam, "scaled_sup": lam * sup})
        for r in np.linspace(lam, ff.eps_prime, 9):
            gap = float(np.max(np.abs(blended_ambient(ff, cp, nu, float(r)).mat - ambient.mat)))
            outer_defect = max(outer_defect, gap)
    values = [row["scaled_sup"] for row in rows]
    bounded = all(value <= 2.0 * values[0] + 1e-12 for value in values)
    return CutoffBound(float(max(values)), rows, bounded, outer_defect)


def dq_bound_check(ff: FlatteningFactor, lambdas=None, grid: int = 65) -> dict:
    """
    max |dq| per λ against the λ-independent bound
    (1/(2·min q))·(sup|d(v⁻²)| + c_φ·C) with (1 − v⁻²) ≤ C·r.
    """
    if lambdas is None:
        lambdas = [ff.eps_prime * value for value in DEFAULT_LAMBDA_GRID]
    radii = np.linspace(ff.eps_prime / grid, ff.eps_prime, grid)
    d_inv_sq, C = 0.0, 0.0
    for r in radii:
        v, rv1, _, m = ff.radial(float(r))
        d_inv_sq = max(d_inv_sq, abs(2.0 * rv1 / v ** 3) / r)
        C = max(C, m / (v * v) / r)
    q_min = 1.0 / ff.radial(ff.eps_prime)[0]
    bound = (d_inv_sq + CUTOFF_SLOPE * C) / (2.0 * q_min)
    rows = []
    for lam in lambdas:
        cp = CutoffProfile(ff, float(lam))
        sample = np.concatenate([np.linspace(0.5 * lam, lam, grid), radii])
        rows.append({"lambda": float(lam),
                     "max_dq": max(abs(cutoff_derivatives(ff, cp, float(r)).r_dq) / r for r in sample)})
    ok = all(row["max_dq"] <= bound + 1e-12 for row in rows)
    return {"bound": bound, "rows": rows, "ok": ok}


def _step1_ball(ff: FlatteningFactor, tau: float, r0: float, r1: float, r: float) -> float:
    """‖u²R̃_D − R̃_M‖ for the Step-1 ramp alone (v_λ = 1 there); u cancels."""
    nu = np.eye(ff.n)[-1]
    a = _step1_state(tau, r0, r1, r, with_log_u=False)
    v, rv1, r2v2, _ = ff.radial(r)
    psi1 = -rv1 / v
    psi2 = -(v * r2v2 - rv1 * rv1) / (v * v)
    scaled = scaled_radial(-a.alpha + psi1, a.alpha - a.r_dalpha + psi2, nu)
    return operator_norm(scaled * (v * v / (r * r)) - ff.ambient_operator(nu))


def choose_tau(ff: FlatteningFactor, k: ConformalConstants, nodes: int = 33) -> float:
    """0.9 × the largest τ for which the Step-1 ball inequality holds on the grid."""
    radii = np.linspace(k.r1, k.r0, nodes)

    def excess(tau):
        return max(_step1_ball(ff, tau, k.r0, k.r1, float(r)) for r in radii) - k.eps1

    if excess(1.0) < 0:
        return SAFETY
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise InvariantError("no positive tau satisfies the Step-1 ball inequality")
    return SAFETY * lo


def estimate_constants(ff: FlatteningFactor, c: Condition, grid: int = 64) -> ConformalConstants:
    """
    ρ, ε_1, c, C1, C2 and the radii r0, r1 for a flattening chart.

    Examples:
        sphere(n=4), scal → rho 0.45, c ≈ 0.2025
    """
    if not c.convex and c.variant != "spectral":
        raise InputError(f"no inner-cone radius available for {c.name}")
    n = ff.n
    nu = np.eye(n)[-1]
    # R̃_M is the same at every point of the built-in charts
    ambient = [ff.ambient_operator(nu)]
    margins = np.array([margin(c, op) for op in ambient])
    worst = int(np.argmin(margins))
    if not margins[worst] > c.tolerance:
        raise ConditionViolation(f"{ff.kind} chart violates {c.name} (margin {margins[worst]:.3e})",
                                 float(margins[worst]))
    S = model_operator(n - 1, 1.0, n)
    ok, witness = star_shaped_check(c, ambient + [S])
    if not ok:
        raise ConditionViolation(f"{c.name} is not star-shaped at sample {witness}", witness["margin"])

    rho = inner_cone_radius(c, S, ambient)
    c_slope = SAFETY * (rho / 4.0) / operator_norm(radial_wedge(nu))
    eps1 = 0.5 * float(margins[worst]) / c.lipschitz(n)
    C1 = error_constant(ff, grid=grid)
    C2 = cutoff_bound_check(ff).C2
    sup_R_M = max(operator_norm(op) for op in ambient)
    C_step1 = max(operator_norm(cylinder_operator(nu)), operator_norm(radial_wedge(nu)), C1)
    r0 = SAFETY * (min(rho / (4.0 * C1), ff.eps_prime) if C1 > 0 else ff.eps_prime)
    k = ConformalConstants(n=n, rho=float(rho), c=float(c_slope), eps1=float(eps1), eps_prime=ff.eps_prime,
                           C1=float(C1), C2=float(C2), C_step1=float(C_step1), sup_R_M=float(sup_R_M),
                           r0=float(r0), r1=STEP1_RATIO * float(r0))
    logger.info(f"conformal constants for {ff.kind} / {c.name}: rho={k.rho:.4g}, c={k.c:.4g}, "
                f"eps1={k.eps1:.4g}, C1={k.C1:.4g}, C2={k.C2:.4g}, r0={k.r0:.4g}")
    return k


def choose_lambda(k: ConformalConstants, r2: Optional[float]) -> float:
    """
    λ = 0.9·min{r2, ρ^{1/2}(48 max‖R̃_M‖)^{−1/2}, ρ/(6C1), ρ/(48C2)}; vanishing
    constants drop their bound.
    """
    if r2 is None or not r2 > 0:
        raise InputError("r2 is undefined; build the alpha profile first")
    if not k.rho > 0:
        raise InputError(f"rho must be positive, got {k.rho}")
    bounds = [r2]
    if k.sup_R_M > 0:
        bounds.append(math.sqrt(k.rho) / math.sqrt(48.0 * k.sup_R_M))
    if k.C1 > 0:
        bounds.append(k.rho / (6.0 * k.C1))
    if k.C2 > 0:
        bounds.append(k.rho / (48.0 * k.C2))
    return SAFETY * min(bounds)


# Verification

def end_metric_check(ff: FlatteningFactor, cp: CutoffProfile, ap: AlphaProfile, samples: int = 9) -> float:
    """
    Largest |(u·q·r/γ)² − 1| on {r < λ/2}, where g_D should be ds² + g_{Sⁿ⁻¹(γ)}
    under s = γ·log r.
    """
    log_lam = math.log(cp.lam)
    worst = 0.0
    for log_r in np.linspace(log_lam - 12.0, log_lam - math.log(2.0) - 1e-3, samples):
        log_r = float(max(log_r, LOG_R_FLOOR))
        st = cutoff_derivatives(ff, cp, math.exp(log_r))
        ratio = 2.0 * (ap.state(log_r).log_u + st.log_q + log_r - ap.log_gamma)
        worst = max(worst, abs(math.expm1(ratio)))
    return worst


@dataclass
class ConformalReport:
    """Outcome of the conformal surgery verification."""

    flattening: FlatteningFactor
    condition: Condition
    constants: ConformalConstants
    profile: AlphaProfile
    rows: list
    min_margin: float
    slope_failures: int
    step1_ok: bool
    log_u_residual: float
    end_deviation: float
    dq_check: dict
    cutoff_bound: CutoffBound
    oracle_deviation: Optional[float]
    verdict: str
    generated_at: str = field(default_factory=get_timestamp)

    @property
    def gamma(self) -> float:
        return self.profile.gamma

    def to_dict(self) -> dict:
        return {
            "version": VERSION,
            "generated_at": self.generated_at,
            "flattening": self.flattening.describe(),
            "condition": self.condition.to_dict(),
            "constants": self.constants.to_dict(),
            "profile": self.profile.summary(),
            "samples": self.rows,
            "min_margin_scaled": self.min_margin,
            "slope_failures": self.slope_failures,
            "step1_ok": self.step1_ok,
            "log_u_residual": self.log_u_residual,
            "end_deviation": self.end_deviation,
            "dq_check": self.dq_check,
            "cutoff_bound": self.cutoff_bound.to_dict(),
            "oracle_deviation": self.oracle_deviation,
            "verdict": self.verdict,
        }


def sample_nodes(ap: AlphaProfile, lam: float, grid: int) -> list[float]:
    """log r nodes covering Step 1, Step 2, the cylinder above λ, the cutoff and the inner end."""
    log_lam = math.log(lam)
    nodes = [math.log(r) for r in np.linspace(ap.r1, ap.r0, grid)[1:]]
    nodes += [ap.log_r1 - s / ap.c for s in np.linspace(0.0, ap.s2, grid)]
    if ap.log_r2 > log_lam:
        nodes += list(np.linspace(ap.log_r2, log_lam, max(grid // 2, 2))[1:])
    nodes += [math.log(lam * x) for x in np.linspace(0.5, 1.0, max(grid // 2, 2))[:-1]]
    nodes += list(np.linspace(log_lam - 10.0, log_lam - math.log(2.0), max(grid // 4, 2)))
    return [float(max(x, LOG_R_FLOOR)) for x in nodes]


def _node_rows(ff: FlatteningFactor, c: Condition, cp: CutoffProfile, ap: AlphaProfile,
               k: ConformalConstants, log_r: float, directions: list) -> list:
    rows = []
    state = ap.state(log_r)
    r = math.exp(log_r)
    for index, nu in enumerate(directions):
        R_D, E = decompose_R_D(ff, cp, ap, nu, r, scaled=True, C1=k.C1, log_r=log_r)
        row = {
            "region": state.region,
            "log_r": log_r,
            "nu_index": index,
            "alpha": state.alpha,
            "r_dalpha": state.r_dalpha,
            "margin_scaled": margin(c, R_D),
            "E_norm": operator_norm(E),
        }
        if state.region == "step1":
            row["step1_ball"] = _step1_ball(ff, ap.tau, ap.r0, ap.r1, r)
        elif state.region in ("step2", "cylinder"):
            row["slope_slack"] = ap.slope_slack(log_r)
        rows.append(row)
    return rows


def oracle_radius(ap: AlphaProfile, rng) -> float:
    """A Step-1 radius away from the C² joints of the ramp: on the plateau or mid-ramp."""
    x = float(rng.uniform(0.05, 0.2)) if rng.random() < 0.5 else float(rng.uniform(0.4, 0.6))
    return ap.r1 + x * (ap.r0 - ap.r1)


def verify_conformal(ff: FlatteningFactor, c: Condition, gamma: Optional[float] = None,
                     gamma_fraction: Optional[float] = None, grid: int = 33, directions: int = 1,
                     oracle_samples: int = 2, seed: int = 0, threads: int = 1) -> ConformalReport:
    """
    Run the conformal surgery and verify it.

    Margins are sampled for (u·q·r)²·R̃_D on every region of the profile, with
    ν = e_n plus directions − 1 random unit vectors. The verdict passes when
    every margin is positive, α′ + cα(2 − α)/r ≥ 0 below r1, Step 1 keeps
    its ball, u solves its ODE, the end is the round cylinder Sⁿ⁻¹(γ) × ℝ,
    the ‖dq‖ and λ·‖R̃^λ_M‖ bounds hold, and the FD oracle agrees.

    Examples:
        sphere(n=4), scal → pass
        sphere(n=4), gamma above delta → InputError
    """
    with StageTrace("conformal.constants", {"chart": ff.kind, "condition": c.name}) as stage:
        ff.validate()
        k = estimate_constants(ff, c)
        k.tau = choose_tau(ff, k)
        stage.output = k.to_dict()
    with StageTrace("conformal.profile") as stage:
        ap = build_alpha(k.c, k.tau, k.r0, k.r1, gamma=gamma, gamma_fraction=gamma_fraction)
        k.lam = choose_lambda(k, ap.r2)
        cp = CutoffProfile(ff, k.lam)
        stage.output = {**ap.summary(), "lambda": k.lam}

    with StageTrace("conformal.verify") as stage:
        rng = np.random.default_rng(seed)
        dirs = [np.eye(ff.n)[-1]]
        for _ in range(max(directions, 1) - 1):
            d = rng.standard_normal(ff.n)
            dirs.append(d / np.linalg.norm(d))
        nodes = sample_nodes(ap, k.lam, grid)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                chunks = list(pool.map(lambda x: _node_rows(ff, c, cp, ap, k, x, dirs), nodes))
        else:
            chunks = [_node_rows(ff, c, cp, ap, k, x, dirs) for x in nodes]
        rows = [row for chunk in chunks for row in chunk]

        min_margin = min(row["margin_scaled"] for row in rows)
        slope_failures = sum(1 for row in rows if "slope_slack" in row and row["slope_slack"] < -1e-12)
        step1_ok = all(row["step1_ball"] < k.eps1 for row in rows if "step1_ball" in row)

        residual_nodes = [x for x in nodes if ap.log_r2 + 0.05 < x < math.log(ap.r0) - 4 * LOG_STEP]
        residual = max((ap.log_u_residual(x) for x in residual_nodes), default=0.0)
        end_deviation = end_metric_check(ff, cp, ap)
        dq = dq_bound_check(ff)
        cutoff_bound = cutoff_bound_check(ff)

        deviation = None
        if oracle_samples > 0:
            deviation = 0.0
            for _ in range(oracle_samples):
                d = rng.standard_normal(ff.n)
                r = oracle_radius(ap, rng)
                deviation = max(deviation, decomposition_oracle(ff, cp, ap, d, r))

        passed = (min_margin > 0 and slope_failures == 0 and step1_ok and residual <= RESIDUAL_TOL
                  and abs(ap.log_u(ap.r0)) <= 1e-15 and end_deviation <= END_TOL and dq["ok"]
                  and cutoff_bound.bounded and (deviation is None or deviation <= ORACLE_TOL))
        verdict = "pass" if passed else "fail"
        stage.output = {"verdict": verdict, "min_margin": min_margin, "end_deviation": end_deviation}

    logger.info(f"conformal verification {ff.kind} / {c.name}: {len(rows)} samples, "
                f"min scaled margin {min_margin:.4g}, gamma {ap.gamma:.4g}, verdict {verdict}")
    return ConformalReport(ff, c, k, ap, rows, float(min_margin), slope_failures, step1_ok, float(residual),
                           float(end_deviation), dq, cutoff_bound, deviation, verdict)
