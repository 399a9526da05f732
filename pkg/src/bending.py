"""
Surgery bending of a distance tube.

The hypersurface D ⊂ M × ℝ is swept by a unit-speed profile curve
s ↦ (r(s), t(s)) with angle θ(s): r′ = −cos θ, t′ = sin θ. θ starts at 0
(D coincides with M × {0}), climbs through a short initial ramp and then a
run of bumps until it reaches π/2, after which D is the cylinder
T(r_final) × ℝ.

Frames on D are ordered (V, H, γ): the tube directions first, then the unit
tangent of the profile curve. Curvatures far down the profile are handled in
scaled form r²·R̃, which is all that the (positively homogeneous) margins
need.
"""

import copy
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.optimize import brentq

from src.conditions import Condition, inner_cone_radius, margin
from src.curvop import (
    CurvatureOperator,
    Frame,
    Riemann4,
    SymmetricForm,
    act,
    from_riemann,
    kulkarni_wedge,
    model_operator,
    operator_norm,
    to_riemann,
)
from src.errors import ConditionViolation, InputError, InvariantError
from src.geometry import (
    ChartMetric,
    RotSymModel,
    chart_curvature_operator_fd,
    frame_plane_values,
    householder,
    orthonormal_frame,
    plane_operator,
    pullback,
    radial_operator,
    scaled_tube_error,
    tube_condition_radius,
    tube_curvature,
    tube_sff,
    warped_curvature,
)
from src.observability import StageTrace
from src.utils import (
    get_timestamp,
    smoothstep,
    smoothstep_d1,
    smoothstep_d2,
    smoothstep_integral,
    validate_positive,
)
from src.version import VERSION

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * np.pi
SAFETY = 0.9
TABLE_NODES = 513
QUAD_TOL = 1e-10
ORACLE_TOL = 1e-5
JOIN_TOL = 1e-10
SMOOTH_FD_MIN_RADIUS = 1e-3

# bump profile on u ∈ [0, 1]: zero, C² ramp up, plateau 1, ramp down, zero
BUMP_EDGES = (0.0, 0.125, 0.25, 0.75, 0.875, 1.0)
BUMP_WIDTH = 0.125
BUMP_AREA = 0.625

SEGMENT_KINDS = ("flat", "ramp", "bump")


def bump(u):
    """Normalized bump b(u): 0 on the outer eighths, 1 on [¼, ¾]."""
    u = np.asarray(u, dtype=float)
    up = smoothstep((u - 0.125) / BUMP_WIDTH)
    down = 1.0 - smoothstep((u - 0.75) / BUMP_WIDTH)
    return np.where(u < 0.5, up, down)


def bump_integral(u):
    """B(u) = ∫₀ᵘ b; B(1) = 5/8."""
    u = np.asarray(u, dtype=float)
    w = BUMP_WIDTH
    rise = w * smoothstep_integral((u - 0.125) / w)
    plateau = np.clip(u - 0.25, 0.0, 0.5)
    t = np.clip((u - 0.75) / w, 0.0, 1.0)
    fall = w * (t - smoothstep_integral(t))
    return rise + plateau + fall


@dataclass
class Segment:
    """
    One piece of the angle profile on a local parameter u ∈ [0, 1].

    The segment covers arc length span·r_start starting at radius
    r_start = exp(log_r_start). Everything except the absolute arc length is
    scale-free, so segments far below double precision stay exact.

    Attributes:
        kind: 'flat' (θ constant), 'ramp' (θ rises by gain along a smoothstep)
            or 'bump' (θ′ follows b(u), total rise gain)
        log_r_start: logarithm of the radius at u = 0
        span: arc length divided by the starting radius
        theta_start: θ at u = 0
        gain: θ(1) − θ(0)
        s_start: arc length at u = 0 (float, may lose resolution deep down)
        log_ratio: log(r_end / r_start), given exactly for flat segments
    """

    kind: str
    log_r_start: float
    span: float
    theta_start: float
    gain: float = 0.0
    s_start: float = 0.0
    log_ratio: Optional[float] = None
    u: np.ndarray = field(init=False, repr=False)
    theta_table: np.ndarray = field(init=False, repr=False)
    cos_table: np.ndarray = field(init=False, repr=False)
    sin_table: np.ndarray = field(init=False, repr=False)
    cos_total: float = field(init=False, repr=False)
    sin_total: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise InputError(f"unknown segment kind {self.kind!r}")
        if not self.span > 0 or not np.isfinite(self.span):
            raise InvariantError(f"segment span must be positive and finite, got {self.span}")
        if self.kind == "flat" and self.gain != 0.0:
            raise InvariantError("flat segments keep θ constant")
        self.u = np.linspace(0.0, 1.0, TABLE_NODES)
        self.theta_table = self.theta_at(self.u)
        self.cos_table = cumulative_simpson(np.cos(self.theta_table), x=self.u, initial=0.0)
        self.sin_table = cumulative_simpson(np.sin(self.theta_table), x=self.u, initial=0.0)
        self.cos_total = self.cos_integral(1.0)
        self.sin_total = self.sin_integral(1.0)
        if self.log_ratio is None:
            end = 1.0 - self.span * self.cos_total
            if not end > 0:
                raise InvariantError(f"segment drives the radius to {end:.3e} (span {self.span})")
            self.log_ratio = float(np.log1p(-self.span * self.cos_total))

    @classmethod
    def flat(cls, log_r_start: float, theta: float, log_ratio: float, s_start: float = 0.0) -> "Segment":
        """Straight piece at angle θ shrinking the radius by exp(log_ratio)."""
        if not log_ratio < 0:
            raise InvariantError(f"flat segment must shrink the radius, got log ratio {log_ratio}")
        span = -math.expm1(log_ratio) / math.cos(theta)
        return cls("flat", log_r_start, span, theta, 0.0, s_start, float(log_ratio))

    @property
    def edges(self) -> tuple:
        return BUMP_EDGES if self.kind == "bump" else (0.0, 1.0)

    @property
    def theta_end(self) -> float:
        return min(self.theta_start + self.gain, HALF_PI)

    @property
    def log_r_end(self) -> float:
        return self.log_r_start + self.log_ratio

    @property
    def length(self) -> float:
        """Arc length; underflows to 0 for very deep segments."""
        return self.span * math.exp(self.log_r_start)

    def theta_at(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "flat":
            return np.full_like(u, self.theta_start)
        if self.kind == "ramp":
            return self.theta_start + self.gain * smoothstep(u)
        return self.theta_start + self.gain * bump_integral(u) / BUMP_AREA

    def dtheta_du(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(u)
        if self.kind == "ramp":
            return self.gain * smoothstep_d1(u)
        return self.gain * bump(u) / BUMP_AREA

    def _integral(self, func, u: float) -> float:
        cuts = [e for e in self.edges if e < u] + [u]
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            total += quad(func, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return total

    def cos_integral(self, u: float) -> float:
        """∫₀ᵘ cos θ by adaptive quadrature between the profile's kinks."""
        if self.kind == "flat":
            return math.cos(self.theta_start) * u
        return self._integral(lambda x: math.cos(float(self.theta_at(x))), u)

    def sin_integral(self, u: float) -> float:
        if self.kind == "flat":
            return math.sin(self.theta_start) * u
        return self._integral(lambda x: math.sin(float(self.theta_at(x))), u)

    def log_ratio_at(self, u):
        """log(r(u) / r_start)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "flat":
            with np.errstate(divide='ignore'):
                return np.logaddexp(np.log1p(-u), np.log(u) + self.log_ratio)
        if u.ndim == 0:
            return np.log1p(-self.span * self.cos_integral(float(u)))
        return np.log1p(-self.span * np.array([self.cos_integral(float(x)) for x in u]))

    def node_log_ratios(self) -> np.ndarray:
        if self.kind == "flat":
            return self.log_ratio_at(self.u)
        return np.log1p(-self.span * self.cos_table)

    def scaled_dtheta(self, u, log_ratio):
        """r·θ′ at u, given log(r(u)/r_start)."""
        return np.exp(log_ratio) * self.dtheta_du(u) / self.span

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "s_start": self.s_start,
            "log_r_start": self.log_r_start,
            "span": self.span,
            "theta_start": self.theta_start,
            "theta_end": self.theta_end,
        }


class ProfileState(NamedTuple):
    """θ, r·θ′ and log r at one point of a profile."""

    s: float
    theta: float
    r_dtheta: float
    log_r: float

    @property
    def r(self) -> float:
        return math.exp(self.log_r)

    @property
    def dtheta(self) -> float:
        return self.r_dtheta / self.r


@dataclass
class AngleProfile:
    """
    Piecewise angle function θ(s) of the bending curve.

    Attributes:
        rbar: radius where the deformation starts (s = 0)
        segments: consecutive Segment objects
        step1_count: number of leading segments forming the initial bend
        log_r_reach: log of the reachable radius r* of the bump sequence
        complete: True once θ reaches π/2
    """

    rbar: float
    segments: list = field(default_factory=list)
    step1_count: int = 0
    log_r_reach: Optional[float] = None
    complete: bool = False

    def append(self, kind: str, span: float = 0.0, gain: float = 0.0,
               log_ratio: Optional[float] = None) -> Segment:
        s_start = self.s_final
        theta = self.theta_final
        log_r = self.log_r_final
        if kind == "flat":
            seg = Segment.flat(log_r, theta, log_ratio, s_start)
        else:
            seg = Segment(kind, log_r, span, theta, gain, s_start)
        self.segments.append(seg)
        return seg

    def attach(self, seg: Segment) -> Segment:
        """Append a segment built elsewhere; it must continue the profile."""
        drift = abs(seg.log_r_start - self.log_r_final)
        if abs(seg.theta_start - self.theta_final) > 1e-15 or drift > 1e-12 * max(1.0, abs(self.log_r_final)):
            raise InvariantError("segment does not continue the profile")
        seg.s_start = self.s_final
        self.segments.append(seg)
        return seg

    @property
    def theta_final(self) -> float:
        return self.segments[-1].theta_end if self.segments else 0.0

    @property
    def log_r_final(self) -> float:
        return self.segments[-1].log_r_end if self.segments else math.log(self.rbar)

    @property
    def r_final(self) -> float:
        return math.exp(self.log_r_final)

    @property
    def s_final(self) -> float:
        if not self.segments:
            return 0.0
        last = self.segments[-1]
        return last.s_start + last.length

    @property
    def bend_count(self) -> int:
        return sum(1 for seg in self.segments if seg.kind == "bump")

    @property
    def breakpoints(self) -> list:
        return [seg.s_start for seg in self.segments] + [self.s_final]

    def locate_index(self, s: float) -> tuple[Optional[int], float]:
        """Index of the segment containing s and the local parameter; (None, 0) past the end."""
        if s < 0:
            raise InputError(f"profile parameter must be non-negative, got {s}")
        if s >= self.s_final:
            if not self.complete and s > self.s_final:
                raise InputError(f"s = {s} lies beyond an unfinished profile (ends at {self.s_final})")
            return None, 0.0
        starts = np.array([seg.s_start for seg in self.segments])
        i = int(np.searchsorted(starts, s, side='right') - 1)
        seg = self.segments[i]
        return i, min(max((s - seg.s_start) / seg.length, 0.0), 1.0)

    def locate(self, s: float) -> tuple[Optional[Segment], float]:
        """Segment containing s and the local parameter; (None, 0) past the end."""
        i, u = self.locate_index(s)
        return (None, 0.0) if i is None else (self.segments[i], u)

    def _terminal_state(self, s: float) -> ProfileState:
        theta = HALF_PI if self.complete else self.theta_final
        return ProfileState(s=float(s), theta=theta, r_dtheta=0.0, log_r=self.log_r_final)

    @staticmethod
    def _segment_state(seg: Segment, u: float) -> ProfileState:
        log_ratio = float(seg.log_ratio_at(u))
        return ProfileState(
            s=seg.s_start + u * seg.length,
            theta=float(seg.theta_at(u)),
            r_dtheta=float(seg.scaled_dtheta(u, log_ratio)),
            log_r=seg.log_r_start + log_ratio,
        )

    def state(self, s: float) -> ProfileState:
        seg, u = self.locate(float(s))
        if seg is None:
            return self._terminal_state(s)
        return self._segment_state(seg, u)._replace(s=float(s))

    def shifted_state(self, s_star: float, offset: float) -> ProfileState:
        """
        State at s_star + offset·r(s_star).

        The offset is carried across segments in local parameters, so it keeps
        its relative precision when r(s_star) is far below the resolution of
        the absolute arc length.
        """
        i, u = self.locate_index(float(s_star))
        if i is None:
            raise InputError(f"s_star = {s_star} lies past the bent region")
        seg = self.segments[i]
        log_r_star = seg.log_r_start + float(seg.log_ratio_at(u))
        u += offset * math.exp(log_r_star - seg.log_r_start) / seg.span
        while u > 1.0 and i + 1 < len(self.segments):
            nxt = self.segments[i + 1]
            u = (u - 1.0) * seg.span * math.exp(seg.log_r_start - nxt.log_r_start) / nxt.span
            i, seg = i + 1, nxt
        while u < 0.0 and i > 0:
            prev = self.segments[i - 1]
            u = 1.0 + u * seg.span * math.exp(seg.log_r_start - prev.log_r_start) / prev.span
            i, seg = i - 1, prev
        if u < 0.0:
            raise InputError("shifted state lies before the start of the profile")
        if u > 1.0:
            if not self.complete:
                raise InputError("shifted state lies beyond an unfinished profile")
            return self._terminal_state(self.s_final)
        return self._segment_state(seg, u)

    def theta(self, s: float) -> float:
        return self.state(s).theta

    def r(self, s: float) -> float:
        return self.state(s).r

    def t(self, s: float) -> float:
        """Height t(s) = ∫₀ˢ sin θ."""
        seg, u = self.locate(float(s))
        total = 0.0
        for prior in self.segments:
            if prior is seg:
                return total + prior.length * prior.sin_integral(u)
            total += prior.length * prior.sin_total
        return total + (float(s) - self.s_final)

    def nodes(self, index: int, count: int):
        """(u, θ, r·θ′, log r) at `count` table nodes of segment `index`."""
        seg = self.segments[index]
        picks = np.unique(np.linspace(0, TABLE_NODES - 1, count).round().astype(int))
        log_ratios = seg.node_log_ratios()[picks]
        u = seg.u[picks]
        return u, seg.theta_table[picks], seg.scaled_dtheta(u, log_ratios), seg.log_r_start + log_ratios

    def summary(self) -> dict:
        return {
            "rbar": self.rbar,
            "bend_count": self.bend_count,
            "segments": len(self.segments),
            "step1_segments": self.step1_count,
            "s_final": self.s_final,
            "log_r_final": self.log_r_final,
            "r_final": self.r_final,
            "log_r_reach": self.log_r_reach,
            "breakpoints": self.breakpoints,
        }


# Constants

@dataclass(frozen=True)
class BendingConstants:
    """Constants driving the three bending steps."""

    n: int
    rbar: float
    rho: float
    L: float
    r_star: float
    C1: float
    C2: float
    eps1: float
    eps_ball: float
    sup_R_M: float
    sup_R_T: float
    r_S: float
    theta0: float
    s0: float
    boundary: bool = False
    safety: float = SAFETY

    @property
    def plateau_coefficient(self) -> float:
        """Step-2 plateau of θ′ is plateau_coefficient · sin θ_l / r_l."""
        return self.rho / (4.0 * self.C2)

    @property
    def slope_coefficient(self) -> float:
        """Bound θ′ ≤ slope_coefficient · sin θ / r along the bumps."""
        return self.rho / (2.0 * self.C2)

    def bend_bound(self) -> int:
        return int(math.ceil((HALF_PI - self.theta0) * 16.0 * self.C2 / (self.rho * math.sin(self.theta0))))

    def to_dict(self) -> dict:
        return asdict(self)


def _mixed_norm(op: CurvatureOperator) -> float:
    """Norm of the block coupling planes with and without the radial slot."""
    _, j = np.triu_indices(op.n, 1)
    radial = j == op.n - 1
    block = op.mat[np.ix_(radial, ~radial)]
    return float(np.linalg.norm(block, 2)) if block.size else 0.0


def estimate_constants(m: RotSymModel, c: Condition, rbar: float, grid: int = 64) -> BendingConstants:
    """
    Estimate the bending constants on D(rbar).

    A flat ambient is accepted on the cone boundary: ε1 = 0 and θ0 is limited
    by the ramp slope alone.

    Examples:
        sphere-point(1), scal, rbar 0.5 → rho 0.45, C2 2, r_S ≈ 0.289, θ0 ≈ 0.0162
    """
    ok, msg = validate_positive(rbar, "rbar")
    if not ok:
        raise InputError(msg)
    rbar = float(rbar)
    m.check_radius(rbar)
    if m.dv < 2:
        raise InputError(f"bending needs at least two normal-sphere directions, got {m.dv}")
    if not c.convex and c.variant != "spectral":
        raise InputError(f"no inner-cone radius available for {c.name}")

    radii = np.geomspace(1e-4 * rbar, rbar, grid)
    ambient = [from_riemann(warped_curvature(m, float(r))) for r in radii]
    margins = np.array([margin(c, op) for op in ambient])
    worst = int(np.argmin(margins))
    sup_R_M = max(operator_norm(op) for op in ambient)
    # a flat ambient sits on the cone boundary; bending is then driven by S alone
    boundary = sup_R_M <= c.tolerance and margins[worst] >= -c.tolerance
    if margins[worst] <= c.tolerance and not boundary:
        raise ConditionViolation(
            f"{m.kind} violates {c.name} at r = {radii[worst]:.4g} (margin {margins[worst]:.3e})",
            float(margins[worst]),
        )
    if boundary:
        logger.warning(f"{m.kind} lies on the boundary of {c.name}; Step 1 has no margin budget")
    if (not boundary and worst in (0, grid - 1)
            and margins[worst] < np.min(margins[1:-1]) - 1e-12 * max(1.0, abs(margins[worst]))):
        logger.warning(f"Step-1 margin minimum attained at the edge of the sample grid (r = {radii[worst]:.4g})")

    rho = inner_cone_radius(c, model_operator(m.dv, 1.0, m.n), ambient)
    L = 2.0 * max(operator_norm(scaled_tube_error(m, float(r))) / r for r in radii)
    scan, _ = tube_condition_radius(m, c, radii)
    if scan == 0.0:
        raise ConditionViolation(f"tubes of {m.kind} violate {c.name} at every sampled radius")
    r_star = min(scan, rho / L) if L > 0 else scan

    C1 = 2.0 * max(_mixed_norm(op) for op in ambient)
    C2 = 0.0
    for r in radii:
        sff, A = tube_sff(m, float(r))
        C2 = max(C2, r * np.max(np.abs(np.diag(sff.mat))) + r * np.max(np.abs(np.diag(A.mat))))
    C2 = 2.0 * float(C2)

    eps1 = 0.0 if boundary else 0.5 * float(margins[worst])
    eps_ball = eps1 / c.lipschitz(m.n)

    bounds = [1.0, r_star, rbar]
    if L > 0:
        bounds.append(rho / (4.0 * L))
    if sup_R_M + C1 > 0:
        bounds.append(0.5 * math.sqrt(rho) / math.sqrt(sup_R_M + C1))
    r_S = SAFETY * min(bounds)

    outer = np.geomspace(0.5 * r_S, rbar, grid)
    sup_R_T = max(operator_norm(tube_curvature(m, float(r), grid=[float(r)]).R_T) for r in outer)

    def ball_budget(theta):
        return math.sin(theta) ** 2 * (sup_R_M + sup_R_T) - 0.5 * eps_ball

    def error_budget(theta):
        return (1.0 - math.cos(theta)) * C1 + 2.0 * math.sin(theta) * C2 / r_S - 0.5 * eps_ball

    cap = r_S / 8.0
    limits = [cap]
    # on the boundary only the ramp slope limits θ0
    for budget in (() if boundary else (ball_budget, error_budget)):
        if budget(cap) > 0:
            limits.append(brentq(budget, 0.0, cap, xtol=1e-15))
    theta0 = SAFETY * min(limits)

    k = BendingConstants(
        n=m.n, rbar=rbar, rho=float(rho), L=float(L), r_star=float(r_star), C1=float(C1), C2=C2,
        eps1=eps1, eps_ball=float(eps_ball), sup_R_M=float(sup_R_M), sup_R_T=float(sup_R_T),
        r_S=float(r_S), theta0=float(theta0), s0=rbar - 0.5 * r_S, boundary=bool(boundary),
    )
    logger.info(f"bending constants for {m.kind} / {c.name}: rho={k.rho:.4g}, L={k.L:.4g}, "
                f"C2={k.C2:.4g}, r_S={k.r_S:.4g}, theta0={k.theta0:.4g}")
    return k


# Profile construction

def initial_bend(k: BendingConstants) -> AngleProfile:
    """
    Step 1: θ = 0 down to r_S, a smoothstep ramp to θ0 over r_S/4, then
    constant θ0 up to s0 = rbar − r_S/2.
    """
    p = AngleProfile(rbar=k.rbar)
    p.append("flat", log_ratio=math.log(k.r_S / k.rbar))
    p.append("ramp", span=0.25, gain=k.theta0)
    ramp_end = p.r_final
    p.append("flat", log_ratio=math.log1p(-0.25 * k.r_S * math.cos(k.theta0) / ramp_end))
    p.step1_count = len(p.segments)

    slope = k.theta0 * smoothstep_d1(0.5) / (0.25 * k.r_S)
    if slope > 1.0:
        raise InvariantError(f"initial ramp slope {slope:.4g} exceeds 1")
    if not p.r_final > 0.5 * k.r_S:
        raise InvariantError(f"r(s0) = {p.r_final:.6g} not above r_S/2 = {0.5 * k.r_S:.6g}")
    logger.debug(f"initial bend: s0={p.s_final:.6g}, r(s0)={p.r_final:.6g}")
    return p


def _check_slope_bound(p: AngleProfile, k: BendingConstants):
    for index in range(p.step1_count, len(p.segments)):
        seg = p.segments[index]
        if seg.kind == "flat":
            continue
        log_ratios = seg.node_log_ratios()
        r_dtheta = seg.scaled_dtheta(seg.u, log_ratios)
        bound = k.slope_coefficient * np.sin(seg.theta_table)
        excess = r_dtheta - bound * (1.0 + 1e-12)
        if np.any(excess > 0):
            j = int(np.argmax(excess))
            raise InvariantError(
                f"segment {index}: r·θ′ = {r_dtheta[j]:.6g} exceeds (ρ/2C2)·sin θ = {bound[j]:.6g} at u = {seg.u[j]:.4f}"
            )


def inductive_bend(p: AngleProfile, k: BendingConstants, r_target: Optional[float] = None,
                   target_fraction: float = 0.5, plateau_factor: float = 1.0,
                   check: bool = True) -> AngleProfile:
    """
    Step 2: bumps until θ reaches π/2, with a straight piece inserted before
    the last bump so that the cylinder radius equals r_target.

    Each bump starts at (θ_l, r_l), covers arc length r_l/2 and raises θ with
    plateau θ′ = plateau_factor·(ρ/4C2)·sin θ_l / r_l; the last bump is
    clamped to land on π/2. Without r_target the radius is
    target_fraction · r*.

    Returns:
        A new, complete AngleProfile
    """
    if p.complete:
        raise InputError("profile already reaches π/2")
    if not plateau_factor > 0:
        raise InputError(f"plateau_factor must be positive, got {plateau_factor}")
    rise = plateau_factor * k.plateau_coefficient * 0.5 * BUMP_AREA
    guard = int(math.ceil(k.bend_bound() / min(plateau_factor, 1.0)))

    trial = []
    theta, log_r = p.theta_final, p.log_r_final
    while True:
        full = rise * math.sin(theta)
        last = theta + full >= HALF_PI
        seg = Segment("bump", log_r, 0.5, theta, HALF_PI - theta if last else full)
        trial.append(seg)
        if last:
            break
        if len(trial) > guard:
            raise InvariantError(f"more than {guard} bends without reaching π/2")
        theta, log_r = seg.theta_end, seg.log_r_end
    log_reach = trial[-1].log_r_end

    if r_target is None:
        if not 0 < target_fraction < 1:
            raise InputError(f"target_fraction must lie in (0, 1), got {target_fraction}")
        log_target = math.log(target_fraction) + log_reach
    else:
        ok, msg = validate_positive(r_target, "r_target")
        if not ok:
            raise InputError(msg)
        log_target = math.log(float(r_target))
        if not log_target < log_reach:
            raise InputError(f"r_target {r_target:.6g} must lie below the reachable radius r* = {math.exp(log_reach):.6g}")

    out = copy.copy(p)
    out.segments = list(p.segments)
    for seg in trial[:-1]:
        out.attach(seg)
    final = trial[-1]
    log_needed = log_target - final.log_ratio
    out.append("flat", log_ratio=log_needed - out.log_r_final)
    out.append("bump", span=0.5, gain=HALF_PI - out.theta_final)
    out.log_r_reach = log_reach
    out.complete = True

    if check:
        _check_slope_bound(out, k)
        if out.bend_count > k.bend_bound():
            raise InvariantError(f"{out.bend_count} bends exceed the bound {k.bend_bound()}")
    logger.info(f"inductive bend: {out.bend_count} bends, r* = exp({log_reach:.6g}), "
                f"r_final = exp({out.log_r_final:.6g})")
    return out


# Curvature of D

def sff_deformed(theta: float, dtheta: float, sff_T: SymmetricForm) -> SymmetricForm:
    """
    Second fundamental form of D on span{γ′} ⊕ T(r) with respect to μ.

    Block diagonal: −θ′ on γ′, sin θ · sff_T on the tube.
    """
    m = sff_T.n
    mat = np.zeros((m + 1, m + 1))
    mat[0, 0] = -float(dtheta)
    mat[1:, 1:] = math.sin(theta) * sff_T.mat
    return SymmetricForm(m + 1, mat)


def _normal_direction(m: RotSymModel, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (m.n - m.k,):
        raise InputError(f"normal direction needs shape ({m.n - m.k},), got {nu.shape}")
    if not np.all(np.isfinite(nu)) or abs(np.linalg.norm(nu) - 1.0) > 1e-10:
        raise InputError("normal direction must be a unit vector")
    return nu


def _adapted_basis(m: RotSymModel, nu: np.ndarray) -> np.ndarray:
    """Columns (V, H, ν) in ℝⁿ = normal space ⊕ T N."""
    q = householder(np.eye(m.dv + 1)[m.dv], nu)
    basis = np.zeros((m.n, m.n))
    basis[:m.dv + 1, :m.dv] = q[:, :m.dv]
    basis[m.dv + 1:, m.dv:m.dv + m.k] = np.eye(m.k)
    basis[:m.dv + 1, m.n - 1] = nu
    return basis


def assemble_R_D(m: RotSymModel, p: AngleProfile, nu, s: float,
                 k: Optional[BendingConstants] = None) -> tuple[CurvatureOperator, CurvatureOperator]:
    """
    Curvature of D at (ν, s) by the Gauss equation in M × ℝ.

    Returns (R̃_D, E) with E = R̃_D − cos²θ·R̃_M − sin²θ·R̃_T. With constants
    the error bound ‖E‖ ≤ cos θ(1 − cos θ)C1 + (θ′ sin θ / r)C2 is enforced.
    """
    nu = _normal_direction(m, nu)
    state = p.state(s)
    r, theta = state.r, state.theta
    m.check_radius(r)
    n = m.n

    basis = _adapted_basis(m, nu)
    R_M = from_riemann(warped_curvature(m, r))
    coords = to_riemann(act(basis, R_M)).comp
    padded = np.zeros((n + 1,) * 4)
    padded[:n, :n, :n, :n] = coords
    frame = np.zeros((n + 1, n))
    frame[:n, :n - 1] = basis[:, :n - 1]
    frame[:n, n - 1] = math.cos(theta) * basis[:, n - 1]
    frame[n, n - 1] = -math.sin(theta)
    ambient = pullback(Frame(frame), Riemann4(n + 1, padded))

    sff_T, _ = tube_sff(m, r)
    form = sff_deformed(theta, state.dtheta, sff_T)
    order = list(range(1, n)) + [0]
    form = SymmetricForm(n, form.mat[np.ix_(order, order)])
    R_D = ambient + kulkarni_wedge(form, form)

    R_T = tube_curvature(m, r, grid=[r]).R_T
    E = R_D - (math.cos(theta) ** 2 * R_M + math.sin(theta) ** 2 * R_T)
    if k is not None:
        bound = (math.cos(theta) * (1.0 - math.cos(theta)) * k.C1
                 + state.dtheta * math.sin(theta) / r * k.C2)
        size = operator_norm(E)
        if size > bound + 1e-10 * max(1.0, operator_norm(R_D)):
            raise InvariantError(f"‖E‖ = {size:.6g} exceeds the assembly bound {bound:.6g} at s = {s}")
    return R_D, E


def scaled_ambient(m: RotSymModel, r: float) -> CurvatureOperator:
    """r²·R̃_M in the frame (V, H, ∂r)."""
    return plane_operator(m.n, frame_plane_values(m, r) * r * r)


def scaled_cylinder(m: RotSymModel, r: float) -> CurvatureOperator:
    """r²·R̃_T of T(r) × ℝ."""
    E = scaled_tube_error(m, r)
    return model_operator(m.dv, 1.0, m.n) + E if m.dv >= 2 else E


def scaled_deformed(m: RotSymModel, theta: float, r_dtheta: float, r: float) -> CurvatureOperator:
    """r²·R̃_D from plane curvatures; valid after r underflows to 0."""
    n = m.n
    ambient = frame_plane_values(m, r) * r * r
    scaled = np.zeros(n - 1)
    scaled[:m.dv] = float(m.scaled_vertical_sff(r))
    scaled[m.dv:] = float(m.scaled_horizontal_sff(r))
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    values = np.zeros((n, n))
    values[:n - 1, :n - 1] = ambient[:n - 1, :n - 1] + sin_t ** 2 * np.outer(scaled, scaled)
    values[:n - 1, n - 1] = cos_t ** 2 * ambient[:n - 1, n - 1] - sin_t * scaled * r_dtheta
    values[n - 1, :n - 1] = values[:n - 1, n - 1]
    return plane_operator(n, values)


def membership_target_check(m: RotSymModel, k: BendingConstants, seg: Segment, u: float) -> dict:
    """
    Distance of r²·R̃_D from r²·R̃_M + sin²θ·model(n−k−1, 1, n) against the
    radius ρ sin²θ, at local parameter u of a segment.
    """
    log_ratio = float(seg.log_ratio_at(u))
    theta = float(seg.theta_at(u))
    r = math.exp(seg.log_r_start + log_ratio)
    r_dtheta = float(seg.scaled_dtheta(u, log_ratio))
    return _membership(m, k, theta, r_dtheta, r)


def _membership(m, k, theta, r_dtheta, r) -> dict:
    target = scaled_ambient(m, r) + math.sin(theta) ** 2 * model_operator(m.dv, 1.0, m.n)
    distance = operator_norm(scaled_deformed(m, theta, r_dtheta, r) - target)
    radius = k.rho * math.sin(theta) ** 2
    return {"distance": distance, "radius": radius, "ok": bool(distance < radius)}


# Verification

@dataclass
class BendingReport:
    """Outcome of verifying a bent profile."""

    model: RotSymModel
    condition: Condition
    constants: BendingConstants
    profile: AngleProfile
    rows: list
    min_margin: float
    error_bound_ok: bool
    target_failures: int
    step1_ok: bool
    oracle_deviation: Optional[float]
    verdict: str
    smoothing: Optional["SmoothingReport"] = None
    generated_at: str = field(default_factory=get_timestamp)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def log_r_final(self) -> float:
        return self.profile.log_r_final

    @property
    def r_final(self) -> float:
        return self.profile.r_final

    def to_dict(self) -> dict:
        out = {
            "version": VERSION,
            "generated_at": self.generated_at,
            "model": self.model.describe(),
            "condition": self.condition.to_dict(),
            "constants": self.constants.to_dict(),
            "profile": self.profile.summary(),
            "samples": self.rows,
            "min_margin_scaled": self.min_margin,
            "error_bound_ok": self.error_bound_ok,
            "target_failures": self.target_failures,
            "step1_ok": self.step1_ok,
            "oracle_deviation": self.oracle_deviation,
            "verdict": self.verdict,
        }
        if self.smoothing is not None:
            out["smoothing"] = self.smoothing.to_dict()
        return out


def _segment_rows(m: RotSymModel, c: Condition, p: AngleProfile, k: BendingConstants,
                  index: int, nodes: int) -> list:
    seg = p.segments[index]
    step1 = index < p.step1_count
    rows = []
    for u, theta, r_dtheta, log_r in zip(*p.nodes(index, nodes)):
        r = math.exp(log_r)
        theta, r_dtheta = float(theta), float(r_dtheta)
        R_D = scaled_deformed(m, theta, r_dtheta, r)
        E = R_D - (math.cos(theta) ** 2 * scaled_ambient(m, r) + math.sin(theta) ** 2 * scaled_cylinder(m, r))
        bound = r * r * math.cos(theta) * (1.0 - math.cos(theta)) * k.C1 + r_dtheta * math.sin(theta) * k.C2
        row = {
            "segment": index,
            "kind": seg.kind,
            "u": float(u),
            "s": seg.s_start + float(u) * seg.length,
            "log_r": float(log_r),
            "theta": theta,
            "margin_scaled": margin(c, R_D),
            "E_scaled": operator_norm(E),
            "E_bound_scaled": bound,
        }
        if step1:
            row["step1_floor"] = r * r * (margin(c, from_riemann(warped_curvature(m, r))) - k.eps1)
        else:
            check = _membership(m, k, theta, r_dtheta, r)
            row["target_distance"] = check["distance"]
            row["target_radius"] = check["radius"]
        rows.append(row)
    return rows


def profile_chart(m: RotSymModel, p: AngleProfile, s_star: float) -> tuple[ChartMetric, float]:
    """
    Chart of D around the profile value s_star: y ∈ ℝⁿ, s = s_star + r*(|y| − 1),
    g = r*² ŷŷᵀ + (f(r(s))/|y|)²(I − ŷŷᵀ) with r* = r(s_star).
    """
    if m.k != 0:
        raise InputError("profile charts are built for point models")
    r_star = p.r(s_star)
    n = m.n

    def metric(y):
        rho = np.linalg.norm(y)
        P = np.outer(y, y) / (rho * rho)
        F = float(m.f(p.shifted_state(s_star, rho - 1.0).r))
        return r_star ** 2 * P + (F / rho) ** 2 * (np.eye(n) - P)
    return ChartMetric(n, metric), r_star


def oracle_deviation(m: RotSymModel, p: AngleProfile, samples: int = 4, seed: int = 0,
                     bends: int = 3) -> float:
    """
    Largest relative deviation between the closed-form curvature of D and the
    finite-difference curvature of its explicit metric ds² + f(r(s))² g_S,
    over random (ν, s) in the initial bend and the first bumps.
    """
    rng = np.random.default_rng(seed)
    last = min(p.step1_count + bends, len(p.segments)) - 1
    lo = 0.5 * p.segments[0].length
    hi = p.segments[last].s_start + p.segments[last].length
    worst = 0.0
    for _ in range(samples):
        s_star = float(rng.uniform(lo, hi))
        direction = rng.standard_normal(m.n)
        y = direction / np.linalg.norm(direction)
        chart, r_star = profile_chart(m, p, s_star)
        fd = chart_curvature_operator_fd(chart, y)
        state = p.state(s_star)
        expected = scaled_deformed(m, state.theta, state.r_dtheta, state.r) / state.r ** 2
        c = np.linalg.inv(orthonormal_frame(chart, y)) @ (y / r_star)
        ambient = radial_operator(expected.mat[0, 0], expected.mat[-1, -1], c)
        deviation = float(np.max(np.abs(fd.mat - ambient.mat))) / max(1.0, operator_norm(ambient))
        logger.debug(f"oracle at s={s_star:.6g}: deviation {deviation:.3e}")
        worst = max(worst, deviation)
    return worst


def verify_bend(m: RotSymModel, c: Condition, p: AngleProfile, k: BendingConstants,
                nodes: int = 17, oracle_samples: int = 4, seed: int = 0, threads: int = 1) -> BendingReport:
    """
    Sample margins of D along the whole profile and check the bending invariants.

    Margins are reported for r²·R̃_D; the sign agrees with the unscaled
    margin. For a boundary ambient only rows with θ > 0 enter the minimum.
    The verdict passes when every sampled margin is positive, the
    assembly error bound and the membership target hold, Step 1 keeps its
    margin budget and the FD oracle agrees (point models).
    """
    if not p.complete:
        raise InputError("profile must reach π/2 before verification")
    indices = list(range(len(p.segments)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda i: _segment_rows(m, c, p, k, i, nodes), indices))
    else:
        chunks = [_segment_rows(m, c, p, k, i, nodes) for i in indices]
    rows = [row for chunk in chunks for row in chunk]

    r_end = p.r_final
    rows.append({
        "segment": len(p.segments), "kind": "terminal", "u": 0.0, "s": p.s_final,
        "log_r": p.log_r_final, "theta": HALF_PI,
        "margin_scaled": margin(c, scaled_cylinder(m, r_end)), "E_scaled": 0.0, "E_bound_scaled": 0.0,
    })

    # a boundary ambient has margin 0 off the deformed region
    deformed = [row for row in rows if row["theta"] > 0] if k.boundary else rows
    min_margin = min(row["margin_scaled"] for row in deformed)
    error_bound_ok = all(row["E_scaled"] <= row["E_bound_scaled"] + 1e-12 for row in rows)
    target_failures = sum(1 for row in rows if "target_distance" in row
                        and not row["target_distance"] < row["target_radius"])
    step1_ok = all(row["margin_scaled"] >= row["step1_floor"] - 1e-12 for row in rows if "step1_floor" in row)

    deviation = None
    if m.k == 0 and oracle_samples > 0:
        deviation = oracle_deviation(m, p, oracle_samples, seed)

    passed = (min_margin > 0 and error_bound_ok and target_failures == 0 and step1_ok
              and (deviation is None or deviation <= ORACLE_TOL))
    verdict = "pass" if passed else "fail"
    logger.info(f"bend verification {m.kind} / {c.name}: {len(rows)} samples, "
                f"min scaled margin {min_margin:.4g}, membership target failures {target_failures}, verdict {verdict}")
    return BendingReport(m, c, k, p, rows, float(min_margin), error_bound_ok, target_failures,
                         step1_ok, deviation, verdict)


# Cylindrical end

@dataclass
class SmoothingReport:
    verdict: str
    r_double_star: float
    rows: list
    r: float = float("nan")

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "r_double_star": self.r_double_star, "r": self.r, "rows": self.rows}


def _blend(t):
    x = (np.asarray(t, dtype=float) - 0.25) / 0.5
    return smoothstep(x), smoothstep_d1(x) / 0.5, smoothstep_d2(x) / 0.25


def _vertical_defect(m: RotSymModel, r: float) -> float:
    """(r − f(r)) / r without cancellation."""
    x = r / m.a
    if m.kind == "flat-point":
        return 0.0
    x2 = x * x
    if abs(x) < 1e-2:
        series = x2 / 6.0 - x2 * x2 / 120.0 + x2 ** 3 / 5040.0
        return -series if m.kind == "hyperbolic-point" else series
    if m.kind == "hyperbolic-point":
        return 1.0 - math.sinh(x) / x
    return 1.0 - math.sin(x) / x


def blend_family(m: RotSymModel, r: float, t: float) -> dict:
    """
    Warping functions of the end family at (r, t).

    F_t = (1 − φ)f + φr blends the tube towards the round cylinder and
    G_t = (1 − φ)h + φh(0) flattens the parallel factor, with φ the
    smoothstep on [¼, ¾].
    """
    phi, dphi, ddphi = (float(v) for v in _blend(t))
    out = {"F": (1.0 - phi) * float(m.f(r)) + phi * r}
    if m.k:
        a = m.a
        out["G"] = (1.0 - phi) * float(m.h(r)) + phi * a
    out.update(phi=phi, dphi=dphi, ddphi=ddphi)
    return out


def end_plane_values(m: RotSymModel, r: float, t: float) -> np.ndarray:
    """
    Plane curvatures of the tube T(r) × [0, 1] ⊂ B × [0, 1] under the blend,
    for the metric divided by r², in the frame (V, H, τ).
    """
    phi, dphi, ddphi = (float(v) for v in _blend(t))
    n, dv = m.n, m.dv
    D = _vertical_defect(m, r)
    f_hat = (1.0 - phi) * (1.0 - D) + phi
    f_t = dphi * r * D
    f_tt = ddphi * r * r * D
    values = np.zeros((n, n))
    values[:dv, :dv] = (1.0 - f_t ** 2) / f_hat ** 2
    values[:dv, n - 1] = values[n - 1, :dv] = -f_tt / f_hat
    if m.k:
        a = m.a
        lift = 2.0 * a * math.sin(0.5 * r / a) ** 2   # h(0) − h(r)
        G = (1.0 - phi) * float(m.h(r)) + phi * a
        g_t = dphi * lift
        g_tt = ddphi * r * lift
        inv = r / G
        values[dv:n - 1, dv:n - 1] = inv ** 2 * (1.0 - g_t ** 2)
        values[dv:n - 1, n - 1] = values[n - 1, dv:n - 1] = -g_tt * inv
        values[:dv, dv:n - 1] = values[dv:n - 1, :dv] = -f_t * g_t * inv / f_hat
    np.fill_diagonal(values, 0.0)
    return values


def end_chart(m: RotSymModel, r: float) -> ChartMetric:
    """Normalized chart (y_V, y_H, τ = t/r) of the blended tube."""
    n, dv, k = m.n, m.dv, m.k

    def sphere_factor(y):
        return 1.0 / (1.0 + (y @ y) / 4.0) ** 2

    def metric(x):
        t = r * x[n - 1]
        fam = blend_family(m, r, t)
        g = np.eye(n)
        g[:dv, :dv] *= (fam["F"] / r) ** 2 * sphere_factor(x[:dv])
        if k:
            g[dv:n - 1, dv:n - 1] *= (fam["G"] / r) ** 2 * sphere_factor(x[dv:n - 1])
        return g
    return ChartMetric(n, metric)


def smoothing_radius(m: RotSymModel, c: Condition, grid: int = 48, t_points: int = 33) -> float:
    """
    r**: largest scanned radius below which every blended tube satisfies c.

    Examples:
        sphere-point(1), n = 4, scal → about 0.7
    """
    radii = np.geomspace(1e-4 * m.r_max, 0.999 * m.r_max, grid)
    ts = np.linspace(0.0, 1.0, t_points)
    r_ds = 0.0
    for r in radii:
        if min(margin(c, plane_operator(m.n, end_plane_values(m, float(r), float(t)))) for t in ts) <= 0:
            break
        r_ds = float(r)
    logger.info(f"smoothing radius for {m.kind} / {c.name}: r** = {r_ds:.4g}")
    return r_ds


def smooth_end(m: RotSymModel, c: Condition, r: Optional[float] = None, log_r: Optional[float] = None,
               r_double_star: Optional[float] = None, t_points: int = 33, fd_points: int = 3) -> SmoothingReport:
    """
    Step 3: check that the blend from the tube metric to the round cylinder
    keeps the condition on T(r) × [0, 1].

    Radii below the smallest positive double are checked at that value.
    """
    if r is None:
        if log_r is None:
            raise InputError("smooth_end needs r or log_r")
        tiny = np.finfo(float).tiny
        r = max(math.exp(log_r), tiny) if log_r > math.log(tiny) else tiny
    ok, msg = validate_positive(r, "r")
    if not ok:
        raise InputError(msg)
    r = float(r)
    r_ds = smoothing_radius(m, c) if r_double_star is None else float(r_double_star)
    if not r < r_ds:
        raise InputError(f"radius {r:.6g} must lie below the smoothing radius r** = {r_ds:.6g}")

    rows = []
    for t in np.linspace(0.0, 1.0, t_points):
        op = plane_operator(m.n, end_plane_values(m, r, float(t)))
        rows.append({"t": float(t), "margin_normalized": margin(c, op)})

    start, end = blend_family(m, r, 0.0), blend_family(m, r, 1.0)
    ends = max(abs(start["F"] - float(m.f(r))), abs(end["F"] - r))
    if m.k:
        ends = max(ends, abs(start["G"] - float(m.h(r))), abs(end["G"] - m.a))

    fd_worst = None
    if r >= SMOOTH_FD_MIN_RADIUS and fd_points > 0:
        chart = end_chart(m, r)
        fd_worst = 0.0
        for t in np.linspace(0.25, 0.75, fd_points):
            x = np.zeros(m.n)
            x[m.n - 1] = t / r
            fd = chart_curvature_operator_fd(chart, x)
            expected = plane_operator(m.n, end_plane_values(m, r, float(t)))
            deviation = float(np.max(np.abs(fd.mat - expected.mat))) / max(1.0, operator_norm(expected))
            rows.append({"t": float(t), "fd_deviation": deviation})
            fd_worst = max(fd_worst, deviation)
    else:
        logger.debug(f"smoothing FD check skipped at r = {r:.3e}")

    passed = (all(row["margin_normalized"] > 0 for row in rows if "margin_normalized" in row)
              and ends <= 1e-10 and (fd_worst is None or fd_worst <= ORACLE_TOL))
    rows.append({"endpoint_defect": ends})
    verdict = "pass" if passed else "fail"
    logger.info(f"smoothing at r = {r:.4g}: {verdict} (r** = {r_ds:.4g})")
    return SmoothingReport(verdict, r_ds, rows, r)


# Joining

@dataclass
class JoinResult:
    verdict: str
    reasons: list


def cross_section(m: RotSymModel) -> tuple:
    """Metric class of the cylinder cross-section T(r)."""
    if m.k == 0:
        return ("round-sphere", m.n - 1)
    return ("sphere-product", m.dv, m.k, m.a)


def join(a: BendingReport, b: BendingReport) -> JoinResult:
    """Two bent manifolds join along their cylinders when the cross-sections agree."""
    reasons = []
    for label, report in (("first", a), ("second", b)):
        if report.verdict != "pass":
            reasons.append(f"{label} bend did not pass")
    if a.n != b.n:
        reasons.append(f"dimensions differ: {a.n} vs {b.n}")
    if not math.isclose(a.log_r_final, b.log_r_final, rel_tol=0.0, abs_tol=JOIN_TOL):
        reasons.append(f"cylinder radii differ: exp({a.log_r_final:.12g}) vs exp({b.log_r_final:.12g})")
    if cross_section(a.model) != cross_section(b.model):
        reasons.append(f"cross-sections differ: {cross_section(a.model)} vs {cross_section(b.model)}")
    return JoinResult("fail" if reasons else "pass", reasons)


def bending_pipeline(m: RotSymModel, c: Condition, rbar: float, r_target: Optional[float] = None,
                     target_fraction: float = 0.5, nodes: int = 17, oracle_samples: int = 4,
                     seed: int = 0, threads: int = 1) -> BendingReport:
    """Constants, Step 1, Step 2, verification and the cylindrical-end check."""
    with StageTrace("bend.constants", {"model": m.kind, "condition": c.name}) as stage:
        k = estimate_constants(m, c, rbar)
        stage.output = k.to_dict()
    with StageTrace("bend.profile") as stage:
        p = inductive_bend(initial_bend(k), k, r_target=r_target, target_fraction=target_fraction)
        stage.output = {"bends": p.bend_count, "log_r_final": p.log_r_final}
    with StageTrace("bend.verify") as stage:
        report = verify_bend(m, c, p, k, nodes=nodes, oracle_samples=oracle_samples, seed=seed, threads=threads)
        stage.output = {"verdict": report.verdict, "min_margin": report.min_margin}
    with StageTrace("bend.smooth") as stage:
        report.smoothing = smooth_end(m, c, log_r=p.log_r_final)
        stage.output = {"verdict": report.smoothing.verdict}
    if report.smoothing.verdict != "pass":
        report.verdict = "fail"
    return report
