"""
Canonical variation of a Riemannian submersion.

The fibers of π: (M, g_M) → (B, g_B) are rescaled by t², giving g_M^t.
Curvatures are handled pointwise in a g_M-orthonormal frame (v_1..v_k,
h_1..h_{n−k}): vertical directions first, horizontal after. The O'Neill
tensors are stored through their values

    A[r, i] = A_{h_r} v_i      (horizontal components)
    T[i, j] = T_{v_i} v_j      (horizontal components)

so ⟨A_{h_r} h_s, v_i⟩ = −⟨A[r, i], e_s⟩ is recovered by skew symmetry.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from src.conditions import Condition, cepsilon_delta, margin
from src.curvop import (
    MAX_DIM,
    CurvatureOperator,
    Riemann4,
    bianchi_project,
    from_riemann,
    operator_norm,
    sectional,
    to_riemann,
)
from src.errors import ConditionViolation, InputError, InvariantError
from src.geometry import ChartMetric, chart_curvature_operator_fd, orthonormal_frame
from src.observability import StageTrace
from src.utils import get_timestamp, validate_positive
from src.version import VERSION

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-10
FORMULA_TOL = 1e-10
DEFAULT_T_GRID = np.geomspace(1.0 / 16.0, 1.0, 17)
BERGER_FD_STEP = 2e-3
BLOCKS = ("vvvv", "vvvh", "vvhh", "hvhv", "hhhv", "hhhh")


def _space_form(dim: int, kappa: float) -> Riemann4:
    """Constant sectional curvature kappa: R(x,y,y,x) = kappa for orthonormal x, y."""
    eye = np.eye(dim)
    comp = kappa * (np.einsum('ad,bc->abcd', eye, eye) - np.einsum('ac,bd->abcd', eye, eye))
    return Riemann4(dim, comp)


def _scale(a: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0


@dataclass(frozen=True, eq=False)
class SubmersionData:
    """
    Pointwise frame data of a Riemannian submersion.

    Attributes:
        n: total dimension
        k: fiber dimension
        R_M: curvature of g_M in the (V, H) frame
        A: A[r, i] = A_{h_r} v_i, shape (n−k, k, n−k)
        T: T[i, j] = T_{v_i} v_j, shape (k, k, n−k)
        R_B: base curvature pulled back to the horizontal block
        R_F: intrinsic curvature of the fiber with its induced metric
        name: label used in reports
    """

    n: int
    k: int
    R_M: Riemann4
    A: np.ndarray
    T: np.ndarray
    R_B: Riemann4
    R_F: Riemann4
    name: str = "custom"

    def __post_init__(self):
        n, k = self.n, self.k
        if not (2 <= n <= MAX_DIM):
            raise InputError(f"total dimension must lie in [2, {MAX_DIM}], got {n}")
        if not (1 <= k <= n - 1):
            raise InputError(f"fiber dimension must lie in [1, n-1], got k={k}, n={n}")
        m = n - k
        A = np.array(self.A, dtype=float)
        T = np.array(self.T, dtype=float)
        if A.shape != (m, k, m):
            raise InputError(f"A needs shape {(m, k, m)}, got {A.shape}")
        if T.shape != (k, k, m):
            raise InputError(f"T needs shape {(k, k, m)}, got {T.shape}")
        for name, t, dim in (("R_M", self.R_M, n), ("R_B", self.R_B, m), ("R_F", self.R_F, k)):
            if t.n != dim:
                raise InputError(f"{name} must have dimension {dim}, got {t.n}")

        skew = float(np.max(np.abs(A + A.transpose(2, 1, 0))))
        if skew > IDENTITY_TOL * _scale(A):
            raise InvariantError(f"A is not skew in its horizontal arguments (defect {skew:.3e})")
        asym = float(np.max(np.abs(T - T.transpose(1, 0, 2))))
        if asym > IDENTITY_TOL * _scale(T):
            raise InvariantError(f"T is not symmetric in its vertical arguments (defect {asym:.3e})")

        A.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'T', T)

        # Gauss equation for the fibers: at t = 1 the variation must give back R_M
        V = slice(0, k)
        gauss = self.R_F.comp - _fiber_gauss_term(T) - self.R_M.comp[V, V, V, V]
        defect = float(np.max(np.abs(gauss))) if gauss.size else 0.0
        if defect > IDENTITY_TOL * _scale(self.R_M.comp):
            raise InvariantError(f"R_F is inconsistent with R_M and T (Gauss defect {defect:.3e})")

    @property
    def dh(self) -> int:
        return self.n - self.k

    def describe(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "k": self.k,
            "A_norm": float(np.linalg.norm(self.A)),
            "T_norm": float(np.linalg.norm(self.T)),
        }


# Correction terms

def _fiber_gauss_term(T: np.ndarray) -> np.ndarray:
    """⟨T_{v_j}v_m, T_{v_i}v_l⟩ − ⟨T_{v_i}v_m, T_{v_j}v_l⟩, indexed [i, j, m, l]."""
    return np.einsum('jmx,ilx->ijml', T, T) - np.einsum('imx,jlx->ijml', T, T)


def _mixed_term(d: SubmersionData) -> np.ndarray:
    """⟨T_{v_i}v_m, A_{h_r}v_j⟩ − ⟨T_{v_j}v_m, A_{h_r}v_i⟩, indexed [i, j, m, r]."""
    return np.einsum('imx,rjx->ijmr', d.T, d.A) - np.einsum('jmx,rix->ijmr', d.T, d.A)


def _twist_term(d: SubmersionData) -> np.ndarray:
    """⟨A_{h_r}v_j, A_{h_s}v_i⟩ − ⟨A_{h_r}v_i, A_{h_s}v_j⟩, indexed [i, j, r, s]."""
    return np.einsum('rjx,six->ijrs', d.A, d.A) - np.einsum('rix,sjx->ijrs', d.A, d.A)


def _vertizontal_term(d: SubmersionData) -> np.ndarray:
    """⟨A_{h_r}v_j, A_{h_s}v_i⟩, indexed [r, i, s, j]."""
    return np.einsum('rjx,six->risj', d.A, d.A)


def _block(d: SubmersionData, t: Riemann4, name: str) -> np.ndarray:
    V, H = slice(0, d.k), slice(d.k, d.n)
    slots = tuple(V if c == "v" else H for c in name)
    return t.comp[slots]


def _three_one(full: np.ndarray, x: np.ndarray, a: slice, b: slice):
    """Place x[p, q, s, u] = R(a_p, a_q, a_s, b_u) and its symmetric images."""
    full[a, a, a, b] = x
    full[a, a, b, a] = -x.transpose(0, 1, 3, 2)
    full[a, b, a, a] = x.transpose(2, 3, 0, 1)
    full[b, a, a, a] = -x.transpose(3, 2, 0, 1)


def _assemble(n: int, k: int, blocks: dict) -> np.ndarray:
    """Full (4,0) array from the six block families by the curvature symmetries."""
    V, H = slice(0, k), slice(k, n)
    full = np.zeros((n, n, n, n))
    full[V, V, V, V] = blocks["vvvv"]
    _three_one(full, blocks["vvvh"], V, H)
    q = blocks["vvhh"]
    full[V, V, H, H] = q
    full[H, H, V, V] = q.transpose(2, 3, 0, 1)
    w = blocks["hvhv"]
    full[H, V, H, V] = w
    full[V, H, V, H] = w.transpose(1, 0, 3, 2)
    full[H, V, V, H] = -w.transpose(0, 1, 3, 2)
    full[V, H, H, V] = -w.transpose(1, 0, 2, 3)
    _three_one(full, blocks["hhhv"], H, V)
    full[H, H, H, H] = blocks["hhhh"]
    return full


def _check_scale(t: float):
    ok, msg = validate_positive(t, "t")
    if not ok:
        raise InputError(msg)


def variation_curvature(d: SubmersionData, t: float) -> Riemann4:
    """
    (4,0) curvature of g_M^t evaluated on the g_M-orthonormal frame.

    Examples:
        t = 1 → R_M
        Hopf data, any t → vertizontal R(h, v, v, h) = t⁴
    """
    _check_scale(t)
    t2, t4 = t * t, t ** 4
    R = d.R_M
    blocks = {
        "vvvv": t2 * d.R_F.comp - t4 * _fiber_gauss_term(d.T),
        "vvvh": t2 * _block(d, R, "vvvh") - (t2 - t4) * _mixed_term(d),
        "vvhh": t2 * _block(d, R, "vvhh") + (t2 - t4) * _twist_term(d),
        "hvhv": t2 * _block(d, R, "hvhv") + (t2 - t4) * _vertizontal_term(d),
        "hhhv": t2 * _block(d, R, "hhhv"),
        "hhhh": t2 * _block(d, R, "hhhh") + (1.0 - t2) * d.R_B.comp,
    }
    return Riemann4(d.n, _assemble(d.n, d.k, blocks))


def _rescaled_weights(d: SubmersionData, t: float) -> np.ndarray:
    w = np.ones(d.n)
    w[:d.k] = 1.0 / t
    return np.einsum('a,b,c,e->abce', w, w, w, w)


def pullback_rescaled(d: SubmersionData, t: float) -> CurvatureOperator:
    """Operator of g_M^t in the frame (v_1/t, .., v_k/t, h_1, .., h_{n−k})."""
    _check_scale(t)
    comp = variation_curvature(d, t).comp * _rescaled_weights(d, t)
    return from_riemann(Riemann4(d.n, comp))


def fiber_operator(d: SubmersionData, t: float) -> CurvatureOperator:
    """R̃ᵗ_F: the fiber (F, t²g_F) times flat ℝ^{n−k}, in the rescaled frame."""
    _check_scale(t)
    comp = np.zeros((d.n,) * 4)
    V = slice(0, d.k)
    comp[V, V, V, V] = d.R_F.comp / (t * t)
    return from_riemann(Riemann4(d.n, comp))


def error_term_components(d: SubmersionData, t: float) -> dict:
    """Explicit block families of Eᵗ = R̃ᵗ_M − R̃ᵗ_F, keyed by BLOCKS."""
    _check_scale(t)
    t2 = t * t
    R = d.R_M
    return {
        "vvvv": -_fiber_gauss_term(d.T),
        "vvvh": _block(d, R, "vvvh") / t - (1.0 / t - t) * _mixed_term(d),
        "vvhh": _block(d, R, "vvhh") + (1.0 - t2) * _twist_term(d),
        "hvhv": _block(d, R, "hvhv") + (1.0 - t2) * _vertizontal_term(d),
        "hhhv": t * _block(d, R, "hhhv"),
        "hhhh": t2 * _block(d, R, "hhhh") + (1.0 - t2) * d.R_B.comp,
    }


def error_term(d: SubmersionData, t: float) -> CurvatureOperator:
    """
    Eᵗ = R̃ᵗ_M − R̃ᵗ_F, cross-checked against the explicit block formulas.

    Raises:
        InvariantError: the two evaluations disagree beyond 1e-10 (relative)
    """
    E = pullback_rescaled(d, t) - fiber_operator(d, t)
    explicit = from_riemann(Riemann4(d.n, _assemble(d.n, d.k, error_term_components(d, t))))
    defect = float(np.max(np.abs(E.mat - explicit.mat))) if E.mat.size else 0.0
    if defect > FORMULA_TOL * _scale(E.mat):
        raise InvariantError(f"error term disagrees with its component formulas at t={t} (defect {defect:.3e})")
    return E


# t_* search

@dataclass
class RescaleReport:
    """Grid scan of the canonical variation against a condition."""

    data: SubmersionData
    condition: Condition
    t_grid: list
    margins: list
    error_norms: list
    C: float
    bound_validated: bool
    t_star: float
    t_boundary: Optional[float]
    hypothesis_margin: float
    hypothesis_ok: bool
    delta: Optional[float]
    verdict: str
    generated_at: str = field(default_factory=get_timestamp)

    @property
    def rows(self) -> list:
        return [
            {"t": t, "margin": m, "E_norm": e, "t_E_norm": t * e}
            for t, m, e in zip(self.t_grid, self.margins, self.error_norms)
        ]

    def to_dict(self) -> dict:
        return {
            "version": VERSION,
            "generated_at": self.generated_at,
            "data": self.data.describe(),
            "condition": self.condition.to_dict(),
            "samples": self.rows,
            "C": self.C,
            "bound_validated": self.bound_validated,
            "t_star": self.t_star,
            "t_boundary": self.t_boundary,
            "hypothesis_margin": self.hypothesis_margin,
            "hypothesis_ok": self.hypothesis_ok,
            "delta": self.delta,
            "verdict": self.verdict,
        }


def _scan_point(d: SubmersionData, c: Condition, t: float) -> tuple[float, float]:
    return margin(c, pullback_rescaled(d, t)), operator_norm(error_term(d, t))


def fit_error_constant(t_grid, error_norms) -> tuple[float, bool]:
    """
    Fit C in ‖Eᵗ‖ ≤ C/t on the upper half of the grid, validate on the lower half.

    Returns:
        tuple: (C, validated)
    """
    t = np.asarray(t_grid, dtype=float)
    scaled = t * np.asarray(error_norms, dtype=float)
    order = np.argsort(t)
    half = len(order) // 2
    fit, check = order[half:], order[:half]
    C = float(np.max(scaled[fit]))
    validated = bool(np.all(scaled[check] <= C * (1.0 + 1e-9) + 1e-12))
    return C, validated


def find_t_star(d: SubmersionData, c: Condition, grid=None, strict: bool = True,
                threads: int = 1) -> RescaleReport:
    """
    Largest grid value t_* such that g_M^t satisfies c at every grid t ≤ t_*.

    Args:
        d: submersion data
        c: condition
        grid: t values in (0, 1]; defaults to 17 log-spaced values on [1/16, 1]
        strict: raise when the fiber hypothesis fails instead of scanning anyway
        threads: worker threads for the scan (results are order independent)

    Returns:
        RescaleReport; t_boundary refines the first sign change by root
        finding when the margin is evaluated exactly.

    Raises:
        ConditionViolation: strict and the fiber operator R̃¹_F does not satisfy c
    """
    t_grid = np.sort(np.asarray(DEFAULT_T_GRID if grid is None else grid, dtype=float))
    if t_grid.size == 0 or not np.all(t_grid > 0):
        raise InputError("t grid must be non-empty with positive values")

    fiber = fiber_operator(d, 1.0)
    hyp = margin(c, fiber)
    hypothesis_ok = c.verdict(hyp) == "pass"
    if not hypothesis_ok:
        message = f"fiber hypothesis violated for {c.name} on {d.name} (margin {hyp:.3e})"
        if strict:
            raise ConditionViolation(message, hyp)
        logger.warning(f"{message}; scanning anyway")
    delta = None
    if hypothesis_ok and c.variant == "spectral":
        delta = cepsilon_delta(c.epsilon, fiber)

    logger.info(f"Scanning {t_grid.size} values of t for {d.name} against {c.name}")
    with StageTrace("rescale.scan", {"data": d.name, "condition": c.name}) as stage:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda t: _scan_point(d, c, float(t)), t_grid))
        else:
            results = [_scan_point(d, c, float(t)) for t in t_grid]
        margins = [m for m, _ in results]
        norms = [e for _, e in results]
        C, validated = fit_error_constant(t_grid, norms)

        t_star, t_boundary = 0.0, None
        failing = [i for i, m in enumerate(margins) if c.verdict(m) != "pass"]
        first_fail = failing[0] if failing else len(margins)
        if first_fail > 0:
            t_star = float(t_grid[first_fail - 1])
        if 0 < first_fail < len(margins) and not c.sampled:
            f = lambda t: margin(c, pullback_rescaled(d, t)) - c.tolerance
            t_boundary = float(brentq(f, t_star, float(t_grid[first_fail]), xtol=1e-14))
        stage.output = {"t_star": t_star, "C": C}

    if not validated:
        logger.warning(f"t·‖E^t‖ exceeds the fitted C={C:.4g} on the small-t half of the grid")
    verdict = "pass" if t_star > 0 else "fail"
    logger.info(f"t_* = {t_star:.4g} for {d.name} ({verdict}), C = {C:.4g}")
    return RescaleReport(
        data=d, condition=c, t_grid=[float(t) for t in t_grid], margins=margins, error_norms=norms,
        C=C, bound_validated=validated, t_star=t_star, t_boundary=t_boundary,
        hypothesis_margin=hyp, hypothesis_ok=hypothesis_ok, delta=delta, verdict=verdict,
    )


# Built-in submersions

def hopf_data() -> SubmersionData:
    """Hopf fibration S³(1) → S²(1/2): great-circle fibers (T = 0), |A_h v| = 1."""
    A = np.zeros((2, 1, 2))
    A[0, 0] = [0.0, -1.0]
    A[1, 0] = [1.0, 0.0]
    return SubmersionData(
        n=3, k=1, R_M=_space_form(3, 1.0), A=A, T=np.zeros((1, 1, 2)),
        R_B=_space_form(2, 4.0), R_F=_space_form(1, 0.0), name="hopf",
    )


def product_data(fiber_curvature: float, base_curvature: float, k: int, n: int) -> SubmersionData:
    """Riemannian product F^k × B^{n−k} of space forms, projected onto B."""
    if not (1 <= k <= n - 1):
        raise InputError(f"fiber dimension must lie in [1, n-1], got k={k}, n={n}")
    R_F = _space_form(k, float(fiber_curvature))
    R_B = _space_form(n - k, float(base_curvature))
    comp = np.zeros((n,) * 4)
    V, H = slice(0, k), slice(k, n)
    comp[V, V, V, V] = R_F.comp
    comp[H, H, H, H] = R_B.comp
    return SubmersionData(
        n=n, k=k, R_M=Riemann4(n, comp), A=np.zeros((n - k, k, n - k)), T=np.zeros((k, k, n - k)),
        R_B=R_B, R_F=R_F, name=f"product(kF={fiber_curvature:g},kB={base_curvature:g},k={k},n={n})",
    )


def torus_data(k: int, n: int, base_curvature: float = 1.0) -> SubmersionData:
    """Flat torus fibers over a space form."""
    d = product_data(0.0, base_curvature, k, n)
    return SubmersionData(d.n, d.k, d.R_M, d.A, d.T, d.R_B, d.R_F, name=f"torus(k={k},n={n})")


def random_data(n: int, k: int, seed: int = 0) -> SubmersionData:
    """
    Algebraically consistent random data: random R_M, R_B, A and T, with R_F
    fixed by the fibers' Gauss equation.
    """
    rng = np.random.default_rng(seed)
    m = n - k

    def random_tensor(dim):
        if dim < 2:
            return Riemann4.zero(dim)
        N = dim * (dim - 1) // 2
        g = rng.standard_normal((N, N))
        return to_riemann(bianchi_project(0.5 * (g + g.T)))

    R_M = random_tensor(n)
    R_B = random_tensor(m)
    skew = rng.standard_normal((m, k, m))
    A = 0.5 * (skew - skew.transpose(2, 1, 0))
    sym = rng.standard_normal((k, k, m))
    T = 0.5 * (sym + sym.transpose(1, 0, 2))
    V = slice(0, k)
    R_F = Riemann4(k, R_M.comp[V, V, V, V] + _fiber_gauss_term(T))
    return SubmersionData(n, k, R_M, A, T, R_B, R_F, name=f"random(n={n},k={k},seed={seed})")


# Berger oracle

def _inverse_stereographic(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Point of S³ ⊂ ℝ⁴ and its Jacobian (4×3)."""
    s = float(y @ y)
    p = np.append(2.0 * y, s - 1.0) / (1.0 + s)
    J = np.empty((4, 3))
    J[:3] = 2.0 * np.eye(3) / (1.0 + s) - 4.0 * np.outer(y, y) / (1.0 + s) ** 2
    J[3] = 4.0 * y / (1.0 + s) ** 2
    return p, J


def _hopf_field(p: np.ndarray) -> np.ndarray:
    # multiplication by i on ℂ² = ℝ⁴
    return np.array([-p[1], p[0], -p[3], p[2]])


def berger_chart(t: float, h_fd: float = BERGER_FD_STEP) -> ChartMetric:
    """
    Berger metric on S³ (Hopf fibers scaled by t) in the stereographic chart:
    g = JᵀJ − (1 − t²)(Jᵀ ip)(Jᵀ ip)ᵀ.
    """
    _check_scale(t)

    def metric(y):
        p, J = _inverse_stereographic(y)
        w = J.T @ _hopf_field(p)
        return J.T @ J - (1.0 - t * t) * np.outer(w, w)
    return ChartMetric(3, metric, h_fd, richardson=True)


def berger_vertizontal_fd(t: float, y) -> float:
    """FD sectional curvature of a plane spanned by the Hopf field and a horizontal vector."""
    y = np.asarray(y, dtype=float)
    chart = berger_chart(t)
    op = chart_curvature_operator_fd(chart, y)
    p, J = _inverse_stereographic(y)
    X = np.linalg.lstsq(J, _hopf_field(p), rcond=None)[0]
    c = np.linalg.solve(orthonormal_frame(chart, y), X)
    c /= np.linalg.norm(c)
    other = np.eye(3)[int(np.argmin(np.abs(c)))]
    h = other - (other @ c) * c
    return sectional(op, c, h / np.linalg.norm(h))


def berger_oracle(t: float, y=None) -> float:
    """Largest gap between the sorted spectra of the assembled operator and the FD operator."""
    y = np.array([0.3, -0.2, 0.1]) if y is None else np.asarray(y, dtype=float)
    expected = np.sort(pullback_rescaled(hopf_data(), t).eigenvalues())
    fd = np.sort(chart_curvature_operator_fd(berger_chart(t), y).eigenvalues())
    deviation = float(np.max(np.abs(expected - fd)))
    logger.debug(f"Berger oracle at t={t}: deviation {deviation:.3e}")
    return deviation
