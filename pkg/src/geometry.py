"""
Model geometries with closed-form curvature, distance tubes and a
finite-difference metric → curvature oracle.

Frames on a tube T(r) are ordered (V, H, ∂r): the n−k−1 directions tangent
to the normal sphere, the k directions parallel to N, then the radial
direction (or the flat ℝ factor of T(r) × ℝ, which takes the same slot).
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.conditions import Condition, margin
from src.curvop import (
    CurvatureOperator,
    Frame,
    Riemann4,
    SymmetricForm,
    bianchi_project,
    from_riemann,
    kulkarni_wedge,
    model_operator,
    operator_norm,
    to_riemann,
)
from src.errors import InputError, InvariantError
from src.utils import validate_dimension, validate_positive

logger = logging.getLogger(__name__)

MODEL_KINDS = ("flat-point", "sphere-point", "hyperbolic-point", "sphere-subsphere")

_KIND_ALIASES = {
    "flat-point": "flat-point", "flatpoint": "flat-point", "flat": "flat-point",
    "sphere-point": "sphere-point", "roundspherepoint": "sphere-point", "sphere": "sphere-point",
    "hyperbolic-point": "hyperbolic-point", "hyperbolicpoint": "hyperbolic-point", "hyperbolic": "hyperbolic-point",
    "sphere-subsphere": "sphere-subsphere", "roundspheresubsphere": "sphere-subsphere", "subsphere": "sphere-subsphere",
}

FD_STEP = 1e-4


def xcotx_minus_one(x):
    """x·cot(x) − 1 without cancellation near 0."""
    x = np.asarray(x, dtype=float)
    x2 = x * x
    small = np.abs(x) < 1e-2
    safe = np.where(small, 1.0, x)
    series = -x2 / 3.0 - x2 ** 2 / 45.0 - 2.0 * x2 ** 3 / 945.0
    return np.where(small, series, safe / np.tan(safe) - 1.0)


def xcothx_minus_one(x):
    """x·coth(x) − 1 without cancellation near 0."""
    x = np.asarray(x, dtype=float)
    x2 = x * x
    small = np.abs(x) < 1e-2
    safe = np.where(small, 1.0, x)
    series = x2 / 3.0 - x2 ** 2 / 45.0 + 2.0 * x2 ** 3 / 945.0
    return np.where(small, series, safe / np.tanh(safe) - 1.0)


@dataclass(frozen=True)
class RotSymModel:
    """
    Rotationally symmetric model around a point or a totally geodesic subsphere.

    Metric dr² + f(r)² g_{S^{n−k−1}} + h(r)² g_{S^k}:
        flat-point         f = r
        sphere-point       f = a·sin(r/a)
        hyperbolic-point   f = a·sinh(r/a)
        sphere-subsphere   f = a·sin(r/a), h = a·cos(r/a)
    """

    kind: str
    n: int
    a: float = 1.0
    k: int = 0
    r_max: Optional[float] = None

    def __post_init__(self):
        key = str(self.kind).strip().lower().replace("_", "-")
        if key not in _KIND_ALIASES:
            raise InputError(f"unknown model kind {self.kind!r}; expected one of {', '.join(MODEL_KINDS)}")
        object.__setattr__(self, 'kind', _KIND_ALIASES[key])
        ok, msg = validate_dimension(self.n, 2, 12)
        if not ok:
            raise InputError(msg)
        ok, msg = validate_positive(self.a, "a")
        if not ok:
            raise InputError(msg)
        if self.kind == "sphere-subsphere":
            if not 1 <= self.k <= self.n - 2:
                raise InputError(f"subsphere dimension must satisfy 1 <= k <= n-2, got k={self.k}")
        elif self.k != 0:
            raise InputError(f"{self.kind} is a point model; k must be 0")

        limit = {
            "flat-point": np.inf,
            "hyperbolic-point": np.inf,
            "sphere-point": np.pi * self.a,
            "sphere-subsphere": 0.5 * np.pi * self.a,
        }[self.kind]
        default = {
            "flat-point": 1e3,
            "hyperbolic-point": 50.0 * self.a,
            "sphere-point": 0.9 * np.pi * self.a,
            "sphere-subsphere": 0.45 * np.pi * self.a,
        }[self.kind]
        r_max = default if self.r_max is None else float(self.r_max)
        if not 0 < r_max < limit:
            raise InputError(f"r_max must lie in (0, {limit:g}) for {self.kind}, got {r_max}")
        object.__setattr__(self, 'r_max', r_max)

    @property
    def dv(self) -> int:
        return self.n - self.k - 1

    @property
    def dh(self) -> int:
        return self.k

    @property
    def kappa(self) -> float:
        """Sectional curvature of the ambient space form."""
        return {"flat-point": 0.0, "hyperbolic-point": -1.0 / self.a ** 2}.get(self.kind, 1.0 / self.a ** 2)

    def check_radius(self, r: float):
        if not 0 < r < self.r_max:
            raise InputError(f"radius {r} outside (0, {self.r_max:g}) for {self.kind}")

    def f(self, r):
        x = np.asarray(r, dtype=float) / self.a
        if self.kind == "flat-point":
            return np.asarray(r, dtype=float)
        if self.kind == "hyperbolic-point":
            return self.a * np.sinh(x)
        return self.a * np.sin(x)

    def df(self, r):
        x = np.asarray(r, dtype=float) / self.a
        if self.kind == "flat-point":
            return np.ones_like(x)
        if self.kind == "hyperbolic-point":
            return np.cosh(x)
        return np.cos(x)

    def ddf(self, r):
        return -self.kappa * self.f(r)

    def df_defect(self, r):
        """1 − f′(r)² in closed form, keeping relative precision as r → 0."""
        x = np.asarray(r, dtype=float) / self.a
        if self.kind == "flat-point":
            return np.zeros_like(x)
        if self.kind == "hyperbolic-point":
            return -np.sinh(x) ** 2
        return np.sin(x) ** 2

    def h(self, r):
        if self.kind != "sphere-subsphere":
            raise InputError(f"{self.kind} has no parallel factor")
        return self.a * np.cos(np.asarray(r, dtype=float) / self.a)

    def dh_(self, r):
        if self.kind != "sphere-subsphere":
            raise InputError(f"{self.kind} has no parallel factor")
        return -np.sin(np.asarray(r, dtype=float) / self.a)

    def ddh(self, r):
        return -self.kappa * self.h(r)

    def dh_defect(self, r):
        """1 − h′(r)²."""
        if self.kind != "sphere-subsphere":
            raise InputError(f"{self.kind} has no parallel factor")
        return np.cos(np.asarray(r, dtype=float) / self.a) ** 2

    def scaled_vertical_sff(self, r):
        """r·f′(r)/f(r); equals 1 at r = 0 (also after underflow)."""
        x = np.asarray(r, dtype=float) / self.a
        if self.kind == "flat-point":
            return np.ones_like(x)
        if self.kind == "hyperbolic-point":
            return 1.0 + xcothx_minus_one(x)
        return 1.0 + xcotx_minus_one(x)

    def scaled_horizontal_sff(self, r):
        """r·h′(r)/h(r); zero for point models."""
        x = np.asarray(r, dtype=float) / self.a
        if self.kind != "sphere-subsphere":
            return np.zeros_like(x)
        return -x * np.tan(x)

    def plane_curvatures(self, r) -> dict:
        """
        Sectional curvatures of the coordinate planes at radius r.

        Keys 'vv' (1−f′²)/f² and 'rv' −f″/f; the subsphere model adds
        'hh' (1−h′²)/h², 'rh' −h″/h and 'vh' −f′h′/(fh).
        """
        r = np.asarray(r, dtype=float)
        f = self.f(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            vv = self.df_defect(r) / (f * f)
            rv = -self.ddf(r) / f
        # f² underflows deep inside a point model; both planes take the value at the centre
        out = {"vv": np.where(f * f > 0, vv, self.kappa), "rv": np.where(f > 0, rv, self.kappa)}
        if self.kind == "sphere-subsphere":
            h = self.h(r)
            out["hh"] = self.dh_defect(r) / (h * h)
            out["rh"] = -self.ddh(r) / h
            out["vh"] = -self.df(r) * self.dh_(r) / (f * h)
        return out

    def describe(self) -> dict:
        return {"kind": self.kind, "n": self.n, "a": self.a, "k": self.k, "r_max": self.r_max}


@dataclass(frozen=True)
class TubeReport:
    """Curvature of T(r) × ℝ split as model_operator(n−k−1, r, n) + E."""

    r: float
    R_T: CurvatureOperator
    E: CurvatureOperator
    L_fit: float


# Operators built from plane curvatures

def plane_operator(n: int, values: np.ndarray) -> CurvatureOperator:
    """Diagonal operator whose (i, j) plane has sectional curvature values[i, j]."""
    i, j = np.triu_indices(n, 1)
    return CurvatureOperator._wrap(n, np.diag(np.asarray(values, dtype=float)[i, j]))


def frame_plane_values(m: RotSymModel, r: float) -> np.ndarray:
    k = m.plane_curvatures(r)
    dv, dh, n = m.dv, m.dh, m.n
    blocks = np.empty(n, dtype=object)
    blocks[:dv] = "v"
    blocks[dv:dv + dh] = "h"
    blocks[n - 1] = "r"
    table = {
        ("v", "v"): "vv", ("h", "h"): "hh", ("v", "h"): "vh", ("h", "v"): "vh",
        ("v", "r"): "rv", ("r", "v"): "rv", ("h", "r"): "rh", ("r", "h"): "rh",
    }
    values = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a != b:
                values[a, b] = float(k[table[(blocks[a], blocks[b])]])
    return values


def warped_curvature(m: RotSymModel, r: float) -> Riemann4:
    """
    Ambient curvature at radius r in the adapted frame (V, H, ∂r).

    Examples:
        flat-point → zero tensor
        sphere-point(a=1) → every sectional curvature 1
    """
    m.check_radius(r)
    return to_riemann(plane_operator(m.n, frame_plane_values(m, r)))


def radial_operator(k_tan: float, k_rad: float, nu) -> CurvatureOperator:
    """
    Isotropic operator with radial unit direction nu: k_tan on planes ⟂ nu,
    k_rad on planes containing nu.
    """
    nu = np.asarray(nu, dtype=float)
    norm = np.linalg.norm(nu)
    if norm == 0.0:
        raise InputError("radial direction must be non-zero")
    nu = nu / norm
    n = nu.size
    p_r = np.outer(nu, nu)
    p_t = np.eye(n) - p_r
    tangent = kulkarni_wedge(SymmetricForm(n, p_t), SymmetricForm(n, p_t))
    mixed = kulkarni_wedge(SymmetricForm(n, p_r), SymmetricForm(n, p_t))
    return float(k_tan) * tangent + 2.0 * float(k_rad) * mixed


def householder(u, v) -> np.ndarray:
    """Orthogonal reflection mapping the unit vector u to the unit vector v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = u - v
    norm = np.linalg.norm(w)
    if norm < 1e-14:
        return np.eye(u.size)
    w = w / norm
    return np.eye(u.size) - 2.0 * np.outer(w, w)


def pullback(b: Frame, t: Riemann4) -> CurvatureOperator:
    """
    Operator of the tensor pulled back by the frame b.

    The standard frame gives from_riemann(t).
    """
    if not isinstance(b, Frame):
        b = Frame(b)
    if b.m != t.n:
        raise InputError(f"frame lives in R^{b.m}, tensor in dimension {t.n}")
    f = b.vectors
    comp = np.einsum('abcd,ai,bj,ck,dl->ijkl', t.comp, f, f, f, f)
    return from_riemann(Riemann4(b.n, comp))


# Tubes

def tube_sff(m: RotSymModel, r: float) -> tuple[SymmetricForm, SymmetricForm]:
    """
    Second fundamental form of T(r) and the bounded remainder A = sff − (1/r)π_V.

    Examples:
        flat-point → (1/r) on V, A = 0
        sphere-point(1) → cot r on V, A = cot r − 1/r
    """
    m.check_radius(r)
    sv = m.scaled_vertical_sff(r)
    sh = m.scaled_horizontal_sff(r)
    diag = np.concatenate([np.full(m.dv, sv / r), np.full(m.dh, sh / r)])
    remainder = np.concatenate([np.full(m.dv, (sv - 1.0) / r), np.full(m.dh, sh / r)])
    return SymmetricForm.diagonal(diag), SymmetricForm.diagonal(remainder)


def scaled_tube_error(m: RotSymModel, r) -> CurvatureOperator:
    """r²·E(r), evaluated so that flat tubes give exactly zero."""
    n = m.n
    sv = float(m.scaled_vertical_sff(r))
    sh = float(m.scaled_horizontal_sff(r))
    scaled = np.zeros(n)
    scaled[:m.dv] = sv
    scaled[m.dv:m.dv + m.dh] = sh
    defect = np.zeros(n)
    defect[:m.dv] = xcotx_minus_one(r / m.a) if m.kind in ("sphere-point", "sphere-subsphere") else (
        xcothx_minus_one(r / m.a) if m.kind == "hyperbolic-point" else 0.0)
    values = np.zeros((n, n))
    kr2 = m.kappa * float(r) ** 2
    for a in range(n - 1):
        for b in range(n - 1):
            if a == b:
                continue
            values[a, b] = kr2 + scaled[a] * scaled[b]
            if a < m.dv and b < m.dv:
                # s_a s_b − 1 = d_a + d_b + d_a d_b with d = s − 1
                values[a, b] = kr2 + defect[a] + defect[b] + defect[a] * defect[b]
    return plane_operator(n, values)


def tube_curvature(m: RotSymModel, r: float, grid=None) -> TubeReport:
    """
    Curvature of T(r) × ℝ via the Gauss equation, with E = R̃_T − model.

    L_fit is max r·‖E(r)‖ over `grid` (default: 32 log-spaced radii up to r).
    """
    m.check_radius(r)
    E = scaled_tube_error(m, r) / r ** 2
    R_T = model_operator(m.dv, r, m.n) + E if m.dv >= 2 else E
    if grid is None:
        grid = np.geomspace(min(1e-3 * m.r_max, r), r, 32)
    L_fit = max(operator_norm(scaled_tube_error(m, s)) / s for s in grid)
    return TubeReport(float(r), R_T, E, float(L_fit))


def gauss_tube_curvature(m: RotSymModel, r: float) -> CurvatureOperator:
    """R̃_T assembled literally: ambient restriction ⊕ 0 plus sff ∧ sff."""
    sff, _ = tube_sff(m, r)
    n = m.n
    ambient = pullback(Frame(np.eye(n)), warped_curvature(m, r))
    # restrict to V ⊕ H and give the ℝ factor a zero row and column
    _, j = np.triu_indices(n, 1)
    restricted = CurvatureOperator._wrap(n, ambient.mat * np.outer(j < n - 1, j < n - 1))
    padded = np.zeros((n, n))
    padded[:n - 1, :n - 1] = sff.mat
    form = SymmetricForm(n, padded)
    return restricted + kulkarni_wedge(form, form)


def tube_condition_radius(m: RotSymModel, c: Condition, grid) -> tuple[float, list]:
    """
    Largest grid radius r_* with margin(c, R̃_T(r)) > 0 for every grid r ≤ r_*.

    Returns (r_*, rows); r_* is 0 when the smallest radius already fails.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    rows = []
    r_star = 0.0
    intact = True
    for r in grid:
        report = tube_curvature(m, float(r), grid=[float(r)])
        value = margin(c, report.R_T)
        rows.append({"r": float(r), "margin": value, "r_norm_E": float(r) * operator_norm(report.E)})
        if intact and value > 0:
            r_star = float(r)
        else:
            intact = False
    logger.info(f"tube radius for {m.kind} / {c.name}: r_* = {r_star:.4g}")
    return r_star, rows


# Finite-difference oracle

@dataclass(frozen=True)
class ChartMetric:
    """
    Metric g_ij(x) on a coordinate chart.

    Attributes:
        dim: chart dimension
        metric: callable x ↦ (dim, dim) matrix
        h_fd: central-difference step
        box: points must satisfy |x_i| ≤ box − 2·h_fd (None for unbounded)
        richardson: combine steps h and h/2
    """

    dim: int
    metric: Callable[[np.ndarray], np.ndarray]
    h_fd: float = FD_STEP
    box: Optional[float] = None
    richardson: bool = False

    def g(self, x) -> np.ndarray:
        g = np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float)
        if g.shape != (self.dim, self.dim):
            raise InvariantError(f"metric returned shape {g.shape}, expected {(self.dim, self.dim)}")
        if np.max(np.abs(g - g.T)) > 1e-12 * max(1.0, np.max(np.abs(g))):
            raise InvariantError(f"metric not symmetric at {x}")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as e:
            raise InvariantError(f"metric not positive definite at {x}") from e
        return g

    def check_point(self, x: np.ndarray):
        if x.shape != (self.dim,):
            raise InputError(f"point needs shape ({self.dim},), got {x.shape}")
        if self.box is not None and np.max(np.abs(x)) > self.box - 2 * self.h_fd:
            raise InputError(f"point {x} too close to the chart boundary")


def metric_derivatives_fd(chart: ChartMetric, x, h: Optional[float] = None):
    """(g, ∂g, ∂∂g) at x by central differences; ∂g[c,a,b] = ∂_c g_ab."""
    x = np.asarray(x, dtype=float)
    h = chart.h_fd if h is None else h
    n = chart.dim
    eye = np.eye(n)
    g0 = chart.g(x)
    plus = [chart.g(x + h * eye[c]) for c in range(n)]
    minus = [chart.g(x - h * eye[c]) for c in range(n)]
    dg = np.stack([(plus[c] - minus[c]) / (2 * h) for c in range(n)])
    ddg = np.empty((n, n, n, n))
    for c in range(n):
        ddg[c, c] = (plus[c] - 2 * g0 + minus[c]) / h ** 2
        for d in range(c + 1, n):
            mixed = (chart.g(x + h * (eye[c] + eye[d])) - chart.g(x + h * (eye[c] - eye[d]))
                     - chart.g(x - h * (eye[c] - eye[d])) + chart.g(x - h * (eye[c] + eye[d]))) / (4 * h ** 2)
            ddg[c, d] = ddg[d, c] = mixed
    return g0, dg, ddg


def christoffel_fd(chart: ChartMetric, x, h: Optional[float] = None):
    """(Γ, ∂Γ) with Γ[k,i,j] = Γ^k_ij and ∂Γ[a,k,i,j] = ∂_a Γ^k_ij."""
    g, dg, ddg = metric_derivatives_fd(chart, x, h)
    ginv = np.linalg.inv(g)
    # first kind: Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
    first = 0.5 * (np.einsum('ijl->lij', dg) + np.einsum('jil->lij', dg) - dg)
    gamma = np.einsum('kl,lij->kij', ginv, first)
    dfirst = 0.5 * (np.einsum('aijl->alij', ddg) + np.einsum('ajil->alij', ddg) - ddg)
    dginv = -np.einsum('km,amn,nl->akl', ginv, dg, ginv)
    dgamma = np.einsum('akl,lij->akij', dginv, first) + np.einsum('kl,alij->akij', ginv, dfirst)
    return gamma, dgamma


def riemann_coordinates_fd(chart: ChartMetric, x, h: Optional[float] = None) -> np.ndarray:
    """Coordinate components R_abcd = g(R(∂_a, ∂_b)∂_c, ∂_d)."""
    g = chart.g(np.asarray(x, dtype=float))
    gamma, dgamma = christoffel_fd(chart, x, h)
    # R^d_cab = ∂_a Γ^d_bc − ∂_b Γ^d_ac + Γ^e_bc Γ^d_ae − Γ^e_ac Γ^d_be
    up = (np.einsum('adbc->dcab', dgamma) - np.einsum('bdac->dcab', dgamma)
          + np.einsum('ebc,dae->dcab', gamma, gamma) - np.einsum('eac,dbe->dcab', gamma, gamma))
    return np.einsum('fcab,fd->abcd', up, g)


def orthonormal_frame(chart: ChartMetric, x) -> np.ndarray:
    """Gram–Schmidt frame of the coordinate basis: columns F = L⁻ᵀ with g = LLᵀ."""
    L = np.linalg.cholesky(chart.g(np.asarray(x, dtype=float)))
    return np.linalg.inv(L).T


def tensor_to_operator(t: np.ndarray) -> CurvatureOperator:
    n = t.shape[0]
    t = 0.25 * (t - t.transpose(1, 0, 2, 3) - t.transpose(0, 1, 3, 2) + t.transpose(1, 0, 3, 2))
    t = 0.5 * (t + t.transpose(2, 3, 0, 1))
    i, j = np.triu_indices(n, 1)
    mat = -t[i[:, None], j[:, None], i[None, :], j[None, :]]
    return bianchi_project(0.5 * (mat + mat.T))


def chart_curvature_operator_fd(chart: ChartMetric, x) -> CurvatureOperator:
    """Curvature operator at x in the Gram–Schmidt frame, by finite differences."""
    x = np.asarray(x, dtype=float)
    chart.check_point(x)
    f = orthonormal_frame(chart, x)

    def frame_tensor(h):
        coords = riemann_coordinates_fd(chart, x, h)
        return np.einsum('abcd,ai,bj,ck,dl->ijkl', coords, f, f, f, f)

    t = frame_tensor(chart.h_fd)
    if chart.richardson:
        t = (4.0 * frame_tensor(0.5 * chart.h_fd) - t) / 3.0
    return tensor_to_operator(t)


def chart_curvature_fd(chart: ChartMetric, x) -> Riemann4:
    """
    Riemann tensor at x in the Gram–Schmidt frame of the coordinate basis.

    Examples:
        euclidean chart → zero to 1e-8
        stereographic sphere → sectional curvatures 1/a²
    """
    return to_riemann(chart_curvature_operator_fd(chart, x))


def euclidean(n: int) -> ChartMetric:
    return ChartMetric(n, lambda x: np.eye(n))


def stereographic_sphere(n: int, a: float = 1.0, h_fd: float = FD_STEP) -> ChartMetric:
    """Round Sⁿ(a): g = (1 + |y|²/(4a²))⁻² δ."""
    return ChartMetric(n, lambda y: np.eye(n) / (1.0 + (y @ y) / (4.0 * a * a)) ** 2, h_fd)


def sphere_line_product(n: int, h_fd: float = FD_STEP) -> ChartMetric:
    """Unit S^{n−1} (stereographic, first n−1 coordinates) × ℝ."""
    def metric(x):
        y = x[:n - 1]
        g = np.eye(n)
        g[:n - 1, :n - 1] /= (1.0 + (y @ y) / 4.0) ** 2
        return g
    return ChartMetric(n, metric, h_fd)


def warped_chart(m: RotSymModel, h_fd: float = FD_STEP) -> ChartMetric:
    """
    Normal-coordinate chart of a model: g = x̂x̂ᵀ + (f(|x|)/|x|)²(I − x̂x̂ᵀ).

    The subsphere model is the round sphere and uses the stereographic chart.
    """
    if m.kind == "sphere-subsphere":
        return stereographic_sphere(m.n, m.a, h_fd)
    n = m.n

    def metric(x):
        r = np.linalg.norm(x)
        if r == 0.0:
            return np.eye(n)
        p = np.outer(x, x) / (r * r)
        ratio = float(m.f(r)) / r
        return p + ratio ** 2 * (np.eye(n) - p)
    return ChartMetric(n, metric, h_fd, box=m.r_max / np.sqrt(n))


def embedded_sff_fd(embed: Callable[[np.ndarray], np.ndarray], x, normal,
                    h: float = FD_STEP) -> SymmetricForm:
    """
    Second fundamental form ⟨∂_i∂_j F, normal⟩ of an explicit embedding F,
    expressed in the Gram–Schmidt frame of the induced metric.
    """
    x = np.asarray(x, dtype=float)
    normal = np.asarray(normal, dtype=float)
    m = x.size
    eye = np.eye(m)
    f0 = np.asarray(embed(x), dtype=float)
    jac = np.stack([(embed(x + h * eye[i]) - embed(x - h * eye[i])) / (2 * h) for i in range(m)], axis=1)
    hess = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            if i == j:
                d2 = (embed(x + h * eye[i]) - 2 * f0 + embed(x - h * eye[i])) / h ** 2
            else:
                d2 = (embed(x + h * (eye[i] + eye[j])) - embed(x + h * (eye[i] - eye[j]))
                      - embed(x - h * (eye[i] - eye[j])) + embed(x - h * (eye[i] + eye[j]))) / (4 * h ** 2)
            hess[i, j] = hess[j, i] = float(d2 @ normal)
    g = jac.T @ jac
    frame = np.linalg.inv(np.linalg.cholesky(g)).T
    return SymmetricForm(m, frame.T @ hess @ frame)
