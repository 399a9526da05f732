"""
Curvature conditions as signed-margin predicates.

A margin is a continuous function of the operator that is strictly positive
exactly on the (open) condition. Exact variants are spectral formulas;
PIC, p-curvature and almost-nonnegative sectional curvature minimize over
orthonormal frames (multistart Givens descent with exact trigonometric line
searches).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Optional

import numpy as np

from src.curvop import (
    CurvatureOperator,
    act_batch,
    bianchi_project,
    biv_index,
    bivector_count,
    frobenius_norm,
    haar_orthogonal_batch,
    identity_operator,
    model_operator,
    operator_norm,
    wedge_coordinates,
    zero_operator,
)
from src.errors import ConditionViolation, InputError

logger = logging.getLogger(__name__)

VARIANTS = ("scal", "pic", "pcurv", "sec_almost_nonneg", "spectral", "operator_positive")

_ALIASES = {
    "scal": "scal", "scal_positive": "scal", "scalpositive": "scal",
    "pic": "pic",
    "pcurv": "pcurv", "p_curvature": "pcurv", "pcurvature": "pcurv",
    "sec_almost_nonneg": "sec_almost_nonneg", "secalmostnonneg": "sec_almost_nonneg",
    "spectral": "spectral", "spectral_almost_pos": "spectral", "spectralalmostpos": "spectral",
    "operator_positive": "operator_positive", "operatorpositive": "operator_positive",
}

CONVEX_VARIANTS = {"scal", "pic", "pcurv", "operator_positive"}

# Line search samples: the objective restricted to a Givens rotation is a
# trigonometric polynomial of degree at most 4.
_LINE_SAMPLES = 9
_GRID = np.linspace(-np.pi, np.pi, 361)[:-1]
_HARMONICS = np.arange(1, 5)


@dataclass(frozen=True)
class MinimizerConfig:
    """Settings of the sampled frame minimization."""

    multistarts: int = 256
    sweeps: int = 50
    step_tolerance: float = 1e-8
    refine_best: int = 16
    partitions: int = 1
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.multistarts < 1 or self.sweeps < 1 or self.partitions < 1 or self.threads < 1:
            raise InputError("minimizer counts must be positive")
        if self.refine_best < 1:
            raise InputError("refine_best must be positive")


@dataclass(frozen=True)
class Condition:
    """
    A curvature condition.

    Attributes:
        variant: one of VARIANTS (aliases such as "ScalPositive" accepted)
        p: p for the p-curvature condition
        epsilon: ε for the almost-nonnegative / almost-positive variants
        tolerance: margins with |margin| ≤ tolerance are "boundary"
        minimizer: settings for the sampled variants
    """

    variant: str
    p: Optional[int] = None
    epsilon: Optional[float] = None
    tolerance: float = 1e-6
    minimizer: MinimizerConfig = field(default_factory=MinimizerConfig)

    def __post_init__(self):
        key = str(self.variant).strip().lower()
        if key not in _ALIASES:
            raise InputError(f"unknown condition {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        object.__setattr__(self, 'variant', _ALIASES[key])
        if self.variant == "pcurv":
            if self.p is None or int(self.p) != self.p or self.p < 0:
                raise InputError(f"p-curvature needs an integer p >= 0, got {self.p!r}")
            object.__setattr__(self, 'p', int(self.p))
        if self.variant in ("sec_almost_nonneg", "spectral"):
            if self.epsilon is None or not float(self.epsilon) > 0:
                raise InputError(f"{self.variant} needs epsilon > 0, got {self.epsilon!r}")
            object.__setattr__(self, 'epsilon', float(self.epsilon))
        if self.tolerance < 0:
            raise InputError("tolerance must be non-negative")

    @property
    def convex(self) -> bool:
        return self.variant in CONVEX_VARIANTS

    @property
    def sampled(self) -> bool:
        return self.variant in ("pic", "pcurv", "sec_almost_nonneg")

    @property
    def name(self) -> str:
        if self.variant == "pcurv":
            return f"pcurv:p={self.p}"
        if self.epsilon is not None:
            return f"{self.variant}:epsilon={self.epsilon:g}"
        return self.variant

    def lipschitz(self, n: int) -> float:
        """Lipschitz constant of the margin in operator norm."""
        N = bivector_count(n)
        return {
            "scal": float(N),
            "operator_positive": 1.0,
            "spectral": 1.0 + (self.epsilon or 0.0),
            "pic": 6.0,
            "pcurv": float((n - (self.p or 0)) * (n - (self.p or 0) - 1)),
            "sec_almost_nonneg": 1.0 + (self.epsilon or 0.0) * N,
        }[self.variant]

    def verdict(self, margin: float) -> str:
        if margin > self.tolerance:
            return "pass"
        if margin < -self.tolerance:
            return "fail"
        return "boundary"

    def with_minimizer(self, **changes) -> "Condition":
        settings = {**asdict(self.minimizer), **changes}
        return Condition(self.variant, self.p, self.epsilon, self.tolerance, MinimizerConfig(**settings))

    def to_dict(self) -> dict:
        out = {"type": self.variant}
        if self.p is not None:
            out["p"] = self.p
        if self.epsilon is not None:
            out["epsilon"] = self.epsilon
        return out

    @classmethod
    def from_dict(cls, data: dict, **kwargs) -> "Condition":
        unknown = set(data) - {"type", "p", "epsilon"}
        if unknown:
            raise InputError(f"unknown condition keys: {sorted(unknown)}")
        if "type" not in data:
            raise InputError("condition needs a 'type'")
        return cls(data["type"], data.get("p"), data.get("epsilon"), **kwargs)


def parse_condition(text: str, **kwargs) -> Condition:
    """
    Parse "name" or "name:key=value,...".

    Examples:
        "scal" → Condition("scal")
        "spectral:epsilon=0.3" → Condition("spectral", epsilon=0.3)
        "pcurv:p=2" → Condition("pcurv", p=2)
    """
    name, _, params = str(text).partition(":")
    data: dict = {"type": name.strip()}
    for item in filter(None, (s.strip() for s in params.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"malformed condition parameter {item!r}")
        key = key.strip()
        try:
            data[key] = int(value) if key == "p" else float(value)
        except ValueError as e:
            raise InputError(f"bad value for {key}: {value!r}") from e
    return Condition.from_dict(data, **kwargs)


def parse_operator(text: str) -> CurvatureOperator:
    """
    Parse an operator descriptor.

    Examples:
        "model:d=3,r=1,n=5", "identity:n=4", "zero:n=4"
    """
    name, _, params = str(text).partition(":")
    values = {}
    for item in filter(None, (s.strip() for s in params.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"malformed operator parameter {item!r}")
        try:
            values[key.strip()] = float(value)
        except ValueError as e:
            raise InputError(f"bad value for {key}: {value!r}") from e
    name = name.strip().lower()
    try:
        n = int(values["n"])
        if name == "model":
            return model_operator(int(values["d"]), values["r"], n)
        if name == "identity":
            return identity_operator(n)
        if name == "zero":
            return zero_operator(n)
    except KeyError as e:
        raise InputError(f"operator {name!r} missing parameter {e}") from e
    raise InputError(f"unknown operator kind {name!r}")


# Sampled frame minimization

def _pair_sum(frames: np.ndarray, mat: np.ndarray, m: int) -> np.ndarray:
    total = 0.0
    for a in range(m):
        for b in range(a + 1, m):
            w = wedge_coordinates(frames[..., :, a], frames[..., :, b])
            total = total + np.einsum('...p,pq,...q->...', w, mat, w)
    return total


def _pic_values(frames: np.ndarray, mat: np.ndarray) -> np.ndarray:
    f = [frames[..., :, a] for a in range(4)]
    total = 0.0
    for a, b in ((0, 2), (0, 3), (1, 2), (1, 3)):
        w = wedge_coordinates(f[a], f[b])
        total = total + np.einsum('...p,pq,...q->...', w, mat, w)
    w01 = wedge_coordinates(f[0], f[1])
    w23 = wedge_coordinates(f[2], f[3])
    return total + 2.0 * np.einsum('...p,pq,...q->...', w01, mat, w23)


class _FrameObjective:
    """Frame functional minimized by a sampled variant."""

    def __init__(self, kind: str, mat: np.ndarray, n: int, m: int):
        self.kind = kind
        self.mat = mat
        self.n = n
        self.m = m
        within = kind == "pic"
        self.planes = [(i, j) for i in range(m) for j in range(i + 1, n) if within or j >= m]

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        if self.kind == "pic":
            return _pic_values(frames[..., :, :4], self.mat)
        values = _pair_sum(frames[..., :, :self.m], self.mat, self.m)
        return 2.0 * values if self.kind == "pcurv" else values


def _rotate(q: np.ndarray, i: int, j: int, theta: np.ndarray) -> np.ndarray:
    c = np.cos(theta)[..., None]
    s = np.sin(theta)[..., None]
    qi = q[..., :, i].copy()
    qj = q[..., :, j].copy()
    q = q.copy()
    q[..., :, i] = c * qi - s * qj
    q[..., :, j] = s * qi + c * qj
    return q


def _line_search(q: np.ndarray, objective: _FrameObjective, i: int, j: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(_LINE_SAMPLES) / _LINE_SAMPLES
    samples = np.stack([objective(_rotate(q, i, j, np.full(q.shape[0], a))) for a in angles])
    spectrum = np.fft.rfft(samples, axis=0)
    a0 = spectrum[0].real / _LINE_SAMPLES
    ak = 2.0 * spectrum[1:5].real / _LINE_SAMPLES
    bk = -2.0 * spectrum[1:5].imag / _LINE_SAMPLES

    k = _HARMONICS[:, None]
    phase = k * _GRID[None, :]
    grid_vals = a0[None, :] + np.cos(phase).T @ ak + np.sin(phase).T @ bk
    theta = _GRID[np.argmin(grid_vals, axis=0)]
    for _ in range(3):
        kt = k * theta[None, :]
        d1 = np.sum(k * (-ak * np.sin(kt) + bk * np.cos(kt)), axis=0)
        d2 = np.sum(-k * k * (ak * np.cos(kt) + bk * np.sin(kt)), axis=0)
        step = np.where(d2 > 0, -d1 / np.where(d2 > 0, d2, 1.0), 0.0)
        theta = theta + np.clip(step, -np.pi / 360, np.pi / 360)
    kt = k * theta[None, :]
    best = a0 + np.sum(ak * np.cos(kt) + bk * np.sin(kt), axis=0)
    at_zero = a0 + np.sum(ak, axis=0)
    theta = np.where(best < at_zero, theta, 0.0)
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


def _descend(q: np.ndarray, objective: _FrameObjective, sweeps: int, tol: float) -> np.ndarray:
    for _ in range(sweeps):
        largest = 0.0
        for i, j in objective.planes:
            theta = _line_search(q, objective, i, j)
            q = _rotate(q, i, j, theta)
            largest = max(largest, float(np.max(np.abs(theta))))
        if largest < tol:
            break
    return q


def _minimize_partition(objective: _FrameObjective, cfg: MinimizerConfig, starts: int, seed) -> float:
    q = haar_orthogonal_batch(objective.n, starts, seed)
    q = _descend(q, objective, min(3, cfg.sweeps), cfg.step_tolerance)
    values = objective(q)
    keep = np.argsort(values)[:cfg.refine_best]
    q = _descend(q[keep], objective, cfg.sweeps, cfg.step_tolerance)
    return float(np.min(objective(q)))


def minimize_over_frames(r: CurvatureOperator, m: int, kind: str, cfg: MinimizerConfig) -> float:
    """
    Minimum of a frame functional over orthonormal m-frames.

    Starts are split into cfg.partitions partitions (seeded independently)
    and combined by minimum; the result depends on the partition count, not
    on the thread count.
    """
    objective = _FrameObjective(kind, r.mat, r.n, m)
    if not objective.planes:
        return float(objective(np.eye(r.n)[None])[0])
    per_part = max(1, cfg.multistarts // cfg.partitions)
    seeds = [cfg.seed] + [np.random.default_rng([cfg.seed, k]) for k in range(1, cfg.partitions)]
    if cfg.threads > 1 and cfg.partitions > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda s: _minimize_partition(objective, cfg, per_part, s), seeds))
    else:
        results = [_minimize_partition(objective, cfg, per_part, s) for s in seeds]
    return min(results)


def margin(c: Condition, r: CurvatureOperator) -> float:
    """
    Signed margin of r with respect to c (positive iff r satisfies c).

    Examples:
        (scal, model_operator(2,1,5)) → 1
        (spectral ε=0.5, identity) → 1.5
    """
    n = r.n
    if c.variant == "scal":
        return float(np.trace(r.mat))
    if c.variant == "operator_positive":
        return float(np.linalg.eigvalsh(r.mat)[0])
    if c.variant == "spectral":
        eig = np.linalg.eigvalsh(r.mat)
        return float(eig[0] + c.epsilon * np.max(np.abs(eig)))
    if c.variant == "pcurv":
        if c.p > n - 2:
            raise InputError(f"p-curvature needs p <= n-2, got p={c.p}, n={n}")
        m = n - c.p
        if m == n:
            return 2.0 * float(np.trace(r.mat))
        return minimize_over_frames(r, m, "pcurv", c.minimizer)
    if c.variant == "pic":
        if n < 4:
            raise InputError(f"isotropic curvature needs n >= 4, got {n}")
        return minimize_over_frames(r, 4, "pic", c.minimizer)
    # sec_almost_nonneg
    return minimize_over_frames(r, 2, "sec", c.minimizer) + c.epsilon * float(np.trace(r.mat))


# Inner cones

@dataclass
class InnerConeCertificate:
    """Sampled check that r + t(s + T) stays in the condition for ‖T‖ < rho."""

    s: CurvatureOperator
    rho: float
    base: CurvatureOperator
    rows: list
    verdict: str
    witness: Optional[dict] = None


def cepsilon_delta(epsilon: float, r: CurvatureOperator) -> float:
    """
    Radius δ with B_{tδ}(r + tS) ⊂ C_ε for all t ≥ 0 and S ≥ 0, ‖S‖ = 1.

    Uses ε′ = midpoint of (max(0, −λ_min/‖r‖), ε). The zero operator is the
    apex of every C_ε and gets ε′ = ε/2.

    Examples:
        (1, identity) → 0.0625
        (1, zero) → 0.0625
    """
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    eig = np.linalg.eigvalsh(r.mat)
    norm = float(np.max(np.abs(eig)))
    m = float(eig[0] + epsilon * norm)
    if norm > 0 and not m > 0:
        raise ConditionViolation(f"operator not in C_eps for eps={epsilon} (margin {m:.3e})", m)
    eps0 = max(0.0, -float(eig[0]) / norm) if norm > 0 else 0.0
    eps1 = 0.5 * (eps0 + epsilon)
    return 0.5 * min((epsilon - eps1) / (1.0 + epsilon) ** 2, epsilon / (1.0 + epsilon))


def random_directions(n: int, count: int, seed) -> list[CurvatureOperator]:
    """Unit (operator norm) Bianchi directions from Gaussian symmetric matrices."""
    rng = np.random.default_rng(seed)
    N = bivector_count(n)
    out = []
    while len(out) < count:
        g = rng.standard_normal((N, N))
        t = bianchi_project(0.5 * (g + g.T))
        norm = operator_norm(t)
        if norm > 1e-12:
            out.append(t / norm)
    return out


def _escape_radius(c: Condition, s: CurvatureOperator, t: CurvatureOperator, cap: float, rtol: float) -> float:
    if margin(c, s + cap * t) > 0:
        return np.inf
    lo, hi = 0.0, cap
    # shrink the bracket geometrically before bisecting
    while hi > 1e-12 * cap and margin(c, s + (hi / 2) * t) <= 0:
        hi /= 2
    lo = hi / 2
    for _ in range(200):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if margin(c, s + mid * t) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def inner_cone_rho_estimate(c: Condition, s: CurvatureOperator, directions: int = 64, seed: int = 0) -> float:
    """
    ρ̂: minimum over sampled unit directions T of sup{ρ : margin(s + ρT) > 0}.

    Directions are −I, −s/‖s‖ and at least `directions` random ones.
    """
    if not c.convex:
        raise InputError(f"{c.name} is not a convex cone condition")
    ms = margin(c, s)
    if not ms > c.tolerance:
        raise ConditionViolation(f"s does not satisfy {c.name} (margin {ms:.3e})", ms)
    norm = operator_norm(s)
    dirs = [-identity_operator(s.n), -(s / norm)] + random_directions(s.n, max(directions, 64), seed)
    cap = 1e3 * max(norm, 1.0)
    rtol = 1e-3 if c.sampled else 1e-12
    rho = min(_escape_radius(c, s, t, cap, rtol) for t in dirs)
    logger.debug(f"inner cone estimate for {c.name}: {rho:.6g}")
    return float(rho)


def inner_cone_rho_convex(c: Condition, s: CurvatureOperator, directions: int = 64, seed: int = 0) -> float:
    """Conservative inner-cone radius: 0.9·ρ̂."""
    return 0.9 * inner_cone_rho_estimate(c, s, directions, seed)


def inner_cone_radius(c: Condition, s: CurvatureOperator, ambient: list) -> float:
    """
    Radius ρ with B_{tρ}(R + tS) ⊂ C for every R in ambient and t ≥ 0.

    Convex conditions only need the inner cone around s; C_ε uses the
    explicit δ of each ambient operator.
    """
    if c.convex:
        return inner_cone_rho_convex(c, s)
    if c.variant == "spectral":
        return min(cepsilon_delta(c.epsilon, op) for op in ambient)
    raise InputError(f"no inner-cone radius available for {c.name}")


def certify_inner_cone(c: Condition, s: CurvatureOperator, r: CurvatureOperator, rho: float,
                       directions: int = 16, t_points: int = 24, seed: int = 0) -> InnerConeCertificate:
    """
    Sample margins of r + t(s + T) for t on a log grid and ‖T‖ = 0.999·rho.

    The first non-positive row is returned as the witness.
    """
    rho = float(rho)
    if not rho > 0:
        raise InputError(f"rho must be positive, got {rho}")
    s_norm = operator_norm(s)
    if s_norm == 0.0:
        raise InputError("s must be non-zero")
    unit = max(operator_norm(r), 1e-300) / s_norm
    ts = np.logspace(-3, 4, t_points) * unit
    dirs = [("-I", -identity_operator(s.n)), ("-s", -(s / s_norm))]
    dirs += [(f"random-{k}", t) for k, t in enumerate(random_directions(s.n, directions, seed))]

    rows = [{"t": 0.0, "direction": "none", "margin": margin(c, r)}]
    for t in ts:
        for label, d in dirs:
            rows.append({"t": float(t), "direction": label,
                         "margin": margin(c, r + float(t) * (s + 0.999 * rho * d))})
    witness = next((row for row in rows if not row["margin"] > 0), None)
    verdict = "pass" if witness is None else "fail"
    return InnerConeCertificate(s, rho, r, rows, verdict, witness)


# Orbit averaging

class OrbitAverage(NamedTuple):
    S: CurvatureOperator
    lam: float
    residual: float


def orbit_average(r: CurvatureOperator, d: int, samples: int, seed: int = 0,
                  chunk: int = 20000) -> OrbitAverage:
    """
    Monte-Carlo average of a∗r over a ∈ O(d+1) acting on the first d+1
    coordinates, fitted against model_operator(d+1, 1, n).

    Examples:
        (model_operator(2,1,4), 2, 10⁵) → λ = 1/3, residual below 10⁻²
    """
    n = r.n
    if d < 2 or d + 1 > n:
        raise InputError(f"need 2 <= d and d+1 <= n, got d={d}, n={n}")
    if samples < 1:
        raise InputError(f"need at least one sample, got {samples}")
    inside = [biv_index(i, j, n) for i in range(d) for j in range(i + 1, d)]
    outside = [k for k in range(r.N) if k not in inside]
    scale = max(float(np.max(np.abs(r.mat))), 1e-300)
    if outside and np.max(np.abs(r.mat[outside, :])) > 1e-12 * scale:
        raise InputError(f"operator not supported in the Lambda^2 R^{d} block")

    block = [biv_index(i, j, n) for i in range(d + 1) for j in range(i + 1, d + 1)]
    sub = CurvatureOperator._wrap(d + 1, r.mat[np.ix_(block, block)])

    total = np.zeros((len(block), len(block)))
    done = 0
    k = 0
    while done < samples:
        count = min(chunk, samples - done)
        state = seed if k == 0 else np.random.default_rng([seed, k])
        total += act_batch(haar_orthogonal_batch(d + 1, count, state), sub).sum(axis=0)
        done += count
        k += 1

    mat = np.zeros_like(r.mat)
    mat[np.ix_(block, block)] = total / samples
    S = CurvatureOperator._wrap(n, mat)
    M = model_operator(d + 1, 1.0, n)
    s_norm = frobenius_norm(S)
    if s_norm == 0.0:
        raise InputError("cannot average the zero operator")
    lam = float(np.sum(S.mat * M.mat) / np.sum(M.mat * M.mat))
    residual = frobenius_norm(S - lam * M) / s_norm
    logger.info(f"orbit average d={d}, samples={samples}: lambda={lam:.6f}, residual={residual:.3e}")
    return OrbitAverage(S, lam, residual)
