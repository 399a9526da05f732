"""
Algebraic curvature operators.

Conventions used throughout curvcone:

- Λ²ℝⁿ carries the orthonormal basis {e_i∧e_j}_{i<j} in lexicographic order.
- mat[(ij),(kl)] = R(e_i, e_j, e_l, e_k), so the diagonal holds sectional
  curvatures and ⟨u∧v, R(z∧t)⟩ = R(u, v, t, z).
- The Kulkarni wedge is
  (A∧B)(x,y,z,w) = ½[A(x,w)B(y,z) + A(y,z)B(x,w) − A(x,z)B(y,w) − A(y,w)B(x,z)],
  which makes g∧g the identity operator.
- ‖R‖ is the operator (spectral) norm of mat.
"""

import logging
import numbers
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import ortho_group

from src.errors import InputError, InvariantError
from src.utils import validate_dimension

logger = logging.getLogger(__name__)

MAX_DIM = 12
SYMMETRY_TOL = 1e-12
BIANCHI_TOL = 1e-10
FRAME_TOL = 1e-10
ORTHOGONAL_TOL = 1e-10


@lru_cache(maxsize=None)
def _pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n, 1)
    i.setflags(write=False)
    j.setflags(write=False)
    return i, j


def bivector_count(n: int) -> int:
    return n * (n - 1) // 2


def _dimension_from_count(count: int) -> int:
    n = int(round((1 + np.sqrt(1 + 8 * count)) / 2))
    if bivector_count(n) != count:
        raise InputError(f"{count} is not a bivector count n(n-1)/2")
    return n


def _is_scalar(x) -> bool:
    return isinstance(x, numbers.Real) or (isinstance(x, np.ndarray) and x.ndim == 0)


def _scale(a: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0


def biv_index(i: int, j: int, n: int) -> int:
    """
    Position of e_i∧e_j in the lexicographic bivector basis.

    Examples:
        biv_index(0, 1, 4) → 0
        biv_index(0, 3, 4) → 2
        biv_index(2, 3, 4) → 5
    """
    if not (0 <= i < j < n):
        raise InputError(f"need 0 <= i < j < n, got ({i}, {j}, {n})")
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def biv_pair(index: int, n: int) -> tuple[int, int]:
    """Inverse of biv_index."""
    if not (0 <= index < bivector_count(n)):
        raise InputError(f"bivector index {index} out of range for n={n}")
    i, j = _pairs(n)
    return int(i[index]), int(j[index])


@dataclass(frozen=True)
class BivectorBasis:
    """Lexicographic basis of Λ²ℝⁿ."""

    n: int

    def __post_init__(self):
        ok, msg = validate_dimension(self.n, 3, MAX_DIM)
        if not ok:
            raise InputError(msg)

    @property
    def N(self) -> int:
        return bivector_count(self.n)

    @property
    def ordering(self) -> list[tuple[int, int]]:
        i, j = _pairs(self.n)
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def index(self, i: int, j: int) -> int:
        return biv_index(i, j, self.n)

    def pair(self, index: int) -> tuple[int, int]:
        return biv_pair(index, self.n)


def _tensor_from_mat(mat: np.ndarray, n: int) -> np.ndarray:
    i, j = _pairs(n)
    t = np.zeros((n, n, n, n))
    ia, ja = i[:, None], j[:, None]
    kb, lb = i[None, :], j[None, :]
    t[ia, ja, kb, lb] = -mat
    t[ja, ia, kb, lb] = mat
    t[ia, ja, lb, kb] = mat
    t[ja, ia, lb, kb] = -mat
    return t


def _mat_from_tensor(t: np.ndarray, n: int) -> np.ndarray:
    i, j = _pairs(n)
    return -t[i[:, None], j[:, None], i[None, :], j[None, :]]


def _cyclic_sum(t: np.ndarray) -> np.ndarray:
    return t + np.einsum('yzxw->xyzw', t) + np.einsum('zxyw->xyzw', t)


def bianchi_residual(t: np.ndarray) -> float:
    """Largest entry of the cyclic sum b(T), relative to the entry scale."""
    if t.size == 0:
        return 0.0
    return float(np.max(np.abs(_cyclic_sum(t)))) / _scale(t)


@dataclass(frozen=True, eq=False)
class Riemann4:
    """(4,0) curvature tensor with components R_ijkl."""

    n: int
    comp: np.ndarray

    def __post_init__(self):
        t = np.array(self.comp, dtype=float)
        n = self.n
        if t.shape != (n, n, n, n):
            raise InputError(f"Riemann4 of dimension {n} needs shape {(n,) * 4}, got {t.shape}")
        scale = _scale(t)
        defects = (
            np.max(np.abs(t + t.transpose(1, 0, 2, 3))),
            np.max(np.abs(t + t.transpose(0, 1, 3, 2))),
            np.max(np.abs(t - t.transpose(2, 3, 0, 1))),
        ) if t.size else (0.0,)
        if max(defects) > BIANCHI_TOL * scale:
            raise InvariantError(f"Riemann4 symmetry defect {max(defects):.3e}")
        if bianchi_residual(t) > BIANCHI_TOL:
            raise InvariantError(f"Riemann4 Bianchi residual {bianchi_residual(t):.3e}")
        t.setflags(write=False)
        object.__setattr__(self, 'comp', t)

    @classmethod
    def zero(cls, n: int) -> "Riemann4":
        return cls(n, np.zeros((n, n, n, n)))


@dataclass(frozen=True, eq=False)
class CurvatureOperator:
    """Symmetric endomorphism of Λ²ℝⁿ satisfying the first Bianchi identity."""

    n: int
    mat: np.ndarray

    # numpy scalars defer to the operator arithmetic below
    __array_ufunc__ = None

    def __post_init__(self):
        m = np.array(self.mat, dtype=float)
        N = bivector_count(self.n)
        if m.shape != (N, N):
            raise InputError(f"operator of dimension {self.n} needs shape {(N, N)}, got {m.shape}")
        scale = _scale(m)
        asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if asym > SYMMETRY_TOL * scale:
            raise InvariantError(f"operator not symmetric (defect {asym:.3e})")
        m = 0.5 * (m + m.T)
        residual = bianchi_residual(_tensor_from_mat(m, self.n))
        if residual > BIANCHI_TOL:
            raise InvariantError(f"operator violates Bianchi identity (residual {residual:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, 'mat', m)

    @classmethod
    def _wrap(cls, n: int, mat: np.ndarray) -> "CurvatureOperator":
        # Results of linear operations on valid operators skip re-validation.
        obj = object.__new__(cls)
        m = 0.5 * (mat + mat.T)
        m.setflags(write=False)
        object.__setattr__(obj, 'n', n)
        object.__setattr__(obj, 'mat', m)
        return obj

    @property
    def N(self) -> int:
        return bivector_count(self.n)

    def _check_same(self, other: "CurvatureOperator"):
        if not isinstance(other, CurvatureOperator):
            return NotImplemented
        if other.n != self.n:
            raise InputError(f"dimension mismatch {self.n} vs {other.n}")
        return None

    def __add__(self, other):
        bad = self._check_same(other)
        if bad is NotImplemented:
            return bad
        return CurvatureOperator._wrap(self.n, self.mat + other.mat)

    def __sub__(self, other):
        bad = self._check_same(other)
        if bad is NotImplemented:
            return bad
        return CurvatureOperator._wrap(self.n, self.mat - other.mat)

    def __mul__(self, scalar):
        if not _is_scalar(scalar):
            return NotImplemented
        return CurvatureOperator._wrap(self.n, float(scalar) * self.mat)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if not _is_scalar(scalar):
            return NotImplemented
        return CurvatureOperator._wrap(self.n, self.mat / float(scalar))

    def __neg__(self):
        return CurvatureOperator._wrap(self.n, -self.mat)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.mat)

    def to_json(self) -> dict:
        return {"n": self.n, "mat": self.mat.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "CurvatureOperator":
        try:
            return cls(int(obj["n"]), np.asarray(obj["mat"], dtype=float))
        except (KeyError, TypeError) as e:
            raise InputError(f"malformed operator JSON: {e}") from e


@dataclass(frozen=True, eq=False)
class SymmetricForm:
    """Symmetric bilinear form on ℝⁿ."""

    n: int
    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=float)
        if m.shape != (self.n, self.n):
            raise InputError(f"form of dimension {self.n} needs shape {(self.n, self.n)}, got {m.shape}")
        asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if asym > SYMMETRY_TOL * _scale(m):
            raise InvariantError(f"form not symmetric (defect {asym:.3e})")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, 'mat', m)

    @classmethod
    def identity(cls, n: int) -> "SymmetricForm":
        return cls(n, np.eye(n))

    @classmethod
    def diagonal(cls, values) -> "SymmetricForm":
        v = np.asarray(values, dtype=float)
        return cls(len(v), np.diag(v))

    def __mul__(self, scalar):
        return SymmetricForm(self.n, float(scalar) * self.mat)

    __rmul__ = __mul__

    def __add__(self, other: "SymmetricForm"):
        return SymmetricForm(self.n, self.mat + other.mat)

    def __sub__(self, other: "SymmetricForm"):
        return SymmetricForm(self.n, self.mat - other.mat)


@dataclass(frozen=True, eq=False)
class Frame:
    """Ordered orthonormal vectors in ℝ^m, stored as matrix columns."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[1] > v.shape[0]:
            raise InputError(f"frame needs an m×k matrix with k ≤ m, got shape {v.shape}")
        gram_defect = float(np.max(np.abs(v.T @ v - np.eye(v.shape[1])))) if v.size else 0.0
        if gram_defect > FRAME_TOL:
            raise InvariantError(f"frame not orthonormal (Gram defect {gram_defect:.3e})")
        v.setflags(write=False)
        object.__setattr__(self, 'vectors', v)

    @classmethod
    def standard(cls, n: int) -> "Frame":
        return cls(np.eye(n))

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]


def to_riemann(r: CurvatureOperator) -> Riemann4:
    """Induced (4,0) tensor; exact inverse of from_riemann."""
    return Riemann4(r.n, _tensor_from_mat(r.mat, r.n))


def from_riemann(t: Riemann4) -> CurvatureOperator:
    """
    Curvature operator of a (4,0) tensor.

    The diagonal of the result holds the sectional curvatures
    R(e_i, e_j, e_j, e_i).
    """
    m = _mat_from_tensor(t.comp, t.n)
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > SYMMETRY_TOL * _scale(m):
        raise InvariantError(f"tensor does not induce a symmetric operator (defect {asym:.3e})")
    return CurvatureOperator._wrap(t.n, m)


def bianchi_project(m) -> CurvatureOperator:
    """
    Orthogonal projection of a symmetric N×N matrix onto Bianchi operators.

    Removes the Λ⁴ component: T ↦ T − b(T)/3 on the induced tensor. For
    n = 3 every symmetric matrix is already a curvature operator.
    """
    if isinstance(m, CurvatureOperator):
        m = m.mat
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"need a square matrix, got shape {m.shape}")
    n = _dimension_from_count(m.shape[0])
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > SYMMETRY_TOL * _scale(m):
        raise InputError(f"matrix not symmetric (defect {asym:.3e})")
    t = _tensor_from_mat(0.5 * (m + m.T), n)
    projected = t - _cyclic_sum(t) / 3.0
    return CurvatureOperator._wrap(n, _mat_from_tensor(projected, n))


def kulkarni_wedge(a: SymmetricForm, b: SymmetricForm) -> CurvatureOperator:
    """
    Kulkarni wedge A∧B of two symmetric forms.

    Examples:
        g∧g → identity operator
        diag(1,0,…)∧diag(0,1,0,…) → single entry ½ at the (0,1) slot
    """
    if a.n != b.n:
        raise InputError(f"dimension mismatch {a.n} vs {b.n}")
    n = a.n
    i, j = _pairs(n)
    A, B = a.mat, b.mat
    ip, jp = i[:, None], j[:, None]
    kq, lq = i[None, :], j[None, :]
    m = 0.5 * (A[ip, kq] * B[jp, lq] + A[jp, lq] * B[ip, kq]
               - A[ip, lq] * B[jp, kq] - A[jp, kq] * B[ip, lq])
    return CurvatureOperator._wrap(n, m)


def second_exterior_power(a: np.ndarray) -> np.ndarray:
    """
    Matrix of Λ²a in the bivector basis; accepts a single n×n matrix or a
    stack of shape (batch, n, n).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    i, j = _pairs(n)
    ip, jp = i[:, None], j[:, None]
    kq, lq = i[None, :], j[None, :]
    return a[..., ip, kq] * a[..., jp, lq] - a[..., ip, lq] * a[..., jp, kq]


def _check_orthogonal(a: np.ndarray):
    eye = np.eye(a.shape[-1])
    defect = float(np.max(np.abs(np.swapaxes(a, -1, -2) @ a - eye)))
    if defect > ORTHOGONAL_TOL:
        raise InputError(f"matrix not orthogonal (defect {defect:.3e})")


def act(a, r: CurvatureOperator) -> CurvatureOperator:
    """
    O(n) action a∗R = Λ²a ∘ R ∘ Λ²aᵀ.

    Satisfies act(a·b, R) = act(a, act(b, R)).
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (r.n, r.n):
        raise InputError(f"need a {r.n}×{r.n} matrix, got shape {a.shape}")
    _check_orthogonal(a)
    lam = second_exterior_power(a)
    return CurvatureOperator._wrap(r.n, lam @ r.mat @ lam.T)


def act_batch(a: np.ndarray, r: CurvatureOperator) -> np.ndarray:
    """Matrices of act(a_s, r) for a stack a of shape (batch, n, n)."""
    a = np.asarray(a, dtype=float)
    _check_orthogonal(a)
    lam = second_exterior_power(a)
    return lam @ r.mat @ np.swapaxes(lam, -1, -2)


def identity_operator(n: int) -> CurvatureOperator:
    return CurvatureOperator._wrap(n, np.eye(bivector_count(n)))


def zero_operator(n: int) -> CurvatureOperator:
    N = bivector_count(n)
    return CurvatureOperator._wrap(n, np.zeros((N, N)))


def model_operator(d: int, r: float, n: int) -> CurvatureOperator:
    """
    Curvature operator of S^d(r) × ℝ^{n−d}: (1/r²)·projection onto
    Λ²(span{e_0..e_{d−1}}).

    Examples:
        model_operator(n, 1, n) → identity
        model_operator(3, 2, 5) → trace 3/4
    """
    if d < 2:
        raise InputError(f"model operator needs d >= 2 curved directions, got {d}")
    if d > n:
        raise InputError(f"model operator needs d <= n, got d={d}, n={n}")
    if not r > 0:
        raise InputError(f"radius must be positive, got {r}")
    _, j = _pairs(n)
    return CurvatureOperator._wrap(n, np.diag(np.where(j < d, 1.0 / r ** 2, 0.0)))


def scal(r: CurvatureOperator) -> float:
    """Trace of the operator (half the scalar curvature)."""
    return float(np.trace(r.mat))


def ricci(r: CurvatureOperator) -> SymmetricForm:
    t = _tensor_from_mat(r.mat, r.n)
    return SymmetricForm(r.n, np.einsum('ijki->jk', t))


def wedge_coordinates(x, y) -> np.ndarray:
    """Bivector coordinates of x∧y (broadcasts over leading axes)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i, j = _pairs(x.shape[-1])
    return x[..., i] * y[..., j] - x[..., j] * y[..., i]


def sectional(r: CurvatureOperator, x, y) -> float:
    """Sectional curvature R(x,y,y,x)/|x∧y|²."""
    w = wedge_coordinates(x, y)
    norm2 = float(w @ w)
    if norm2 <= 1e-14 * float(np.dot(x, x)) * float(np.dot(y, y)) or norm2 == 0.0:
        raise InputError("degenerate plane: x and y are linearly dependent")
    return float(w @ r.mat @ w) / norm2


def operator_norm(r: CurvatureOperator) -> float:
    if r.N == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(r.mat))))


def frobenius_norm(r: CurvatureOperator) -> float:
    return float(np.linalg.norm(r.mat))


def complex_sectional(r: CurvatureOperator, f) -> float:
    """
    R_1331 + R_1441 + R_2332 + R_2442 − 2R_1234 on the frame (f1, f2, f3, f4).

    Examples:
        identity operator, any frame → 4
        zero operator → 0
    """
    vectors = f.vectors if isinstance(f, Frame) else Frame(f).vectors
    if vectors.shape != (r.n, 4):
        raise InputError(f"complex sectional curvature needs 4 vectors in R^{r.n}")
    f1, f2, f3, f4 = vectors.T
    total = 0.0
    for a, b in ((f1, f3), (f1, f4), (f2, f3), (f2, f4)):
        w = wedge_coordinates(a, b)
        total += float(w @ r.mat @ w)
    return total + 2.0 * float(wedge_coordinates(f1, f2) @ r.mat @ wedge_coordinates(f3, f4))


def haar_orthogonal(n: int, seed: int) -> np.ndarray:
    """Haar-distributed element of O(n), deterministic in seed."""
    return haar_orthogonal_batch(n, 1, seed)[0]


def haar_orthogonal_batch(n: int, count: int, seed: int) -> np.ndarray:
    """
    Stack of count Haar-distributed elements of O(n), shape (count, n, n).

    seed may be an int or a numpy Generator; the batch of size 1 equals
    haar_orthogonal(n, seed).
    """
    if n < 2:
        raise InputError(f"Haar sampling needs n >= 2, got {n}")
    if count < 1:
        raise InputError(f"need at least one sample, got {count}")
    draws = ortho_group.rvs(dim=n, size=count, random_state=seed)
    return np.asarray(draws, dtype=float).reshape(count, n, n)
