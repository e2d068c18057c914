"""Finite-dimensional exterior algebra on R^d.

Alternating k-tensors are stored as coefficient vectors in the basis
``e_I = e_{i_1} ^ ... ^ e_{i_k}`` with ``I`` running over the strictly
increasing k-subsets of ``range(d)`` in lexicographic order.  Multi-indices
are 0-based throughout.

Minor vectors of a d x m matrix follow the ordering

    M(L) = (M_1^0, ..., M_m^0, M_1^1, ..., M_m^1)

where ``M_k^0`` collects the order-k minors whose columns avoid the last
column and ``M_k^1`` those that use it.  Inside each block the minors are
sorted lexicographically by (rows, cols).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Callable, Sequence

import numpy as np

ORTHO_TOL = 1e-12


class DegreeError(ValueError):
    """Raised on incompatible tensor degrees or dimensions."""


@lru_cache(maxsize=None)
def multi_indices(d: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Strictly increasing k-subsets of ``range(d)``, lexicographic."""
    if not 0 <= k <= d:
        raise DegreeError(f"degree {k} outside [0, {d}]")
    return tuple(combinations(range(d), k))


@lru_cache(maxsize=None)
def _index_lookup(d: int, k: int) -> dict[tuple[int, ...], int]:
    return {idx: pos for pos, idx in enumerate(multi_indices(d, k))}


def _perm_sign(seq: Sequence[int]) -> int:
    """Sign of the permutation sorting ``seq`` (0 if it has repeats)."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class AltTensor:
    d: int
    k: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if c.size != comb(self.d, self.k):
            raise DegreeError(
                f"expected {comb(self.d, self.k)} coefficients for k={self.k}, d={self.d}; got {c.size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, d: int, k: int) -> "AltTensor":
        return cls(d, k, np.zeros(comb(d, k)))

    @classmethod
    def scalar(cls, d: int, value: float) -> "AltTensor":
        return cls(d, 0, np.array([value], dtype=float))

    @classmethod
    def basis(cls, d: int, idx: Sequence[int]) -> "AltTensor":
        """``e_{i_1} ^ ... ^ e_{i_k}`` for any (not necessarily sorted) indices."""
        idx = tuple(int(i) for i in idx)
        k = len(idx)
        out = np.zeros(comb(d, k))
        sign = _perm_sign(idx)
        if sign:
            out[_index_lookup(d, k)[tuple(sorted(idx))]] = sign
        return cls(d, k, out)

    @classmethod
    def vector(cls, v: Sequence[float]) -> "AltTensor":
        v = np.asarray(v, dtype=float)
        return cls(v.size, 1, v)

    def __add__(self, other: "AltTensor") -> "AltTensor":
        _check_same(self, other)
        return AltTensor(self.d, self.k, self.coeffs + other.coeffs)

    def __sub__(self, other: "AltTensor") -> "AltTensor":
        _check_same(self, other)
        return AltTensor(self.d, self.k, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "AltTensor":
        return AltTensor(self.d, self.k, self.coeffs * float(s))

    __rmul__ = __mul__

    def __neg__(self) -> "AltTensor":
        return AltTensor(self.d, self.k, -self.coeffs)

    def __xor__(self, other: "AltTensor") -> "AltTensor":
        return wedge(self, other)

    def allclose(self, other: "AltTensor", atol: float = ORTHO_TOL) -> bool:
        return self.d == other.d and self.k == other.k and np.allclose(self.coeffs, other.coeffs, rtol=0, atol=atol)


def _check_same(a: AltTensor, b: AltTensor) -> None:
    if a.d != b.d or a.k != b.k:
        raise DegreeError(f"shape mismatch: (d={a.d}, k={a.k}) vs (d={b.d}, k={b.k})")


@lru_cache(maxsize=None)
def _wedge_table(d: int, r: int, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Index triples (i, j, target, sign) for all non-vanishing basis products."""
    look = _index_lookup(d, r + s)
    ii, jj, tt, ss = [], [], [], []
    for i, I in enumerate(multi_indices(d, r)):
        for j, J in enumerate(multi_indices(d, s)):
            if set(I) & set(J):
                continue
            ii.append(i)
            jj.append(j)
            tt.append(look[tuple(sorted(I + J))])
            ss.append(_perm_sign(I + J))
    return (np.array(ii, dtype=np.intp), np.array(jj, dtype=np.intp),
            np.array(tt, dtype=np.intp), np.array(ss, dtype=float))


def wedge(a: AltTensor, b: AltTensor) -> AltTensor:
    if a.d != b.d:
        raise DegreeError(f"dimension mismatch: {a.d} vs {b.d}")
    if a.k + b.k > a.d:
        raise DegreeError(f"degree overflow: {a.k} + {b.k} > {a.d}")
    ii, jj, tt, ss = _wedge_table(a.d, a.k, b.k)
    out = np.zeros(comb(a.d, a.k + b.k))
    np.add.at(out, tt, ss * a.coeffs[ii] * b.coeffs[jj])
    return AltTensor(a.d, a.k + b.k, out)


def wedge_vectors(*vectors: Sequence[float]) -> AltTensor:
    """``v_1 ^ ... ^ v_k``; the coefficients are the k x k minors of [v_1 ... v_k]."""
    V = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
    d, k = V.shape
    coeffs = [np.linalg.det(V[list(I), :]) if k else 1.0 for I in multi_indices(d, k)]
    return AltTensor(d, k, np.array(coeffs))


def inner(a: AltTensor, b: AltTensor) -> float:
    """Inner product of alternating tensors of equal degree.

    The lexicographic wedge basis of an orthonormal frame is orthonormal, so
    this is the Euclidean product of coefficient vectors.
    """
    if a.d != b.d or a.k != b.k:
        raise DegreeError(f"inner product needs equal d and degree; got (d={a.d}, k={a.k}), (d={b.d}, k={b.k})")
    return float(a.coeffs @ b.coeffs)


def contract(a: AltTensor, b: AltTensor) -> AltTensor:
    """Interior product ``a ⌞ b``: the (r-s)-tensor with (a ⌞ b)·g = a·(g ^ b)."""
    if a.d != b.d:
        raise DegreeError(f"dimension mismatch: {a.d} vs {b.d}")
    if b.k > a.k:
        raise DegreeError(f"cannot contract degree {a.k} by degree {b.k}")
    return AltTensor(a.d, a.k - b.k, contraction_matrix(b, a.k) @ a.coeffs)


def contraction_matrix(b: AltTensor, r: int | None = None) -> np.ndarray:
    """Matrix of ``alpha -> alpha ⌞ b`` from Λ_r to Λ_{r-s} (default r = s + 1)."""
    d, s = b.d, b.k
    r = s + 1 if r is None else r
    q = r - s
    if q < 0:
        raise DegreeError(f"cannot contract degree {r} by degree {s}")
    # row g of the matrix is the coefficient vector of (e_g ^ b)
    rows = [wedge(AltTensor.basis(d, G), b).coeffs for G in multi_indices(d, q)]
    return np.array(rows).reshape(comb(d, q), comb(d, r))


# -- induced maps ---------------------------------------------------------

def compound(F: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix: entry (I, J) is the minor with rows I, cols J."""
    F = np.asarray(F, dtype=float)
    d, m = F.shape
    if k == 0:
        return np.ones((1, 1))
    rows = multi_indices(d, k)
    cols = multi_indices(m, k)
    sub = F[np.array(rows)[:, None, :, None], np.array(cols)[None, :, None, :]]
    return np.linalg.det(sub)


def lambda_k(F: np.ndarray, k: int) -> np.ndarray:
    """Matrix of Λ_k F on Λ_k R^d in the lexicographic wedge basis."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DegreeError(f"lambda_k needs a square matrix, got shape {F.shape}")
    d = F.shape[0]
    if not 0 <= k <= d:
        raise DegreeError(f"degree {k} outside [0, {d}]")
    return compound(F, k)


def check_orthonormal(basis: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    Q = np.asarray(basis, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"basis must be a square matrix of column vectors, got {Q.shape}")
    err = np.abs(Q.T @ Q - np.eye(Q.shape[0])).max()
    if err > tol:
        raise ValueError(f"basis is not orthonormal (max deviation {err:.3g})")
    return Q


def wedge_covector(A: np.ndarray, beta: Sequence[float], k: int | None = None) -> np.ndarray:
    """Matrix of ``A ^ beta``: Λ_{k+1} -> Λ_k, alpha -> A(alpha ⌞ beta).

    ``A`` is a C(d,k) x C(d,k) matrix and ``beta`` a vector, both in the same
    orthonormal coordinates.  Since C(d,k) = C(d,d-k), ``k`` must be given
    whenever the size of ``A`` does not determine it.
    """
    beta = np.asarray(beta, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = beta.size
    if k is None:
        ks = [j for j in range(d) if comb(d, j) == A.shape[0] == A.shape[1]]
        if len(ks) != 1:
            raise DegreeError(f"cannot infer the degree of A with shape {A.shape} in dimension {d}; pass k")
        k = ks[0]
    if not 0 <= k < d or A.shape != (comb(d, k), comb(d, k)):
        raise DegreeError(f"A of shape {A.shape} is not an operator on Λ_{k} R^{d} with k < {d}")
    return A @ contraction_matrix(AltTensor.vector(beta), k + 1)


def wedge_normal(A: np.ndarray, n: Sequence[float], basis: np.ndarray, k: int | None = None) -> np.ndarray:
    """``A ^ n`` for a unit normal n that is the last vector of an orthonormal basis.

    ``A`` is expressed in the wedge basis built from ``basis``; the returned
    matrix maps Λ_{k+1} to Λ_k in the same coordinates.
    """
    Q = check_orthonormal(basis)
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > ORTHO_TOL:
        raise ValueError("n must be a unit vector")
    if np.abs(Q[:, -1] - n).max() > ORTHO_TOL:
        raise ValueError("n must be the last basis vector")
    e_d = np.zeros(Q.shape[0])
    e_d[-1] = 1.0
    return wedge_covector(A, e_d, k)


def wedge_normal_tuple(F: np.ndarray, basis: np.ndarray) -> tuple[np.ndarray, ...]:
    """(Λ_0 F ^ n, ..., Λ_{d-1} F ^ n) in the coordinates of ``basis`` (n last)."""
    Q = check_orthonormal(basis)
    Fv = Q.T @ np.asarray(F, dtype=float) @ Q
    return tuple(wedge_normal(lambda_k(Fv, k), Q[:, -1], Q, k) for k in range(Q.shape[0]))


# -- minor vectors ----------------------------------------------------------

def nu(d: int, m: int) -> int:
    """Number of minors of all orders of a d x m matrix."""
    return sum(comb(m, k) * comb(d, k) for k in range(1, m + 1))


@lru_cache(maxsize=None)
def minor_labels(d: int, m: int) -> tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]:
    """(rows, cols) of every entry of the minor vector of a d x m matrix."""
    if not 1 <= m <= d:
        raise DegreeError(f"minor vectors need 1 <= m <= d; got d={d}, m={m}")
    last = m - 1
    block0, block1 = [], []
    for k in range(1, m + 1):
        for rows in multi_indices(d, k):
            for cols in multi_indices(m, k):
                (block1 if last in cols else block0).append((k, rows, cols))
    # M^0 blocks by ascending k, then M^1 blocks by ascending k
    block0.sort(key=lambda t: (t[0], t[1], t[2]))
    block1.sort(key=lambda t: (t[0], t[1], t[2]))
    return tuple((rows, cols) for _, rows, cols in block0 + block1)


@lru_cache(maxsize=None)
def _label_gather(d: int, m: int) -> list[tuple[int, np.ndarray, np.ndarray, np.ndarray]]:
    """Per order k: (k, positions in the vector, row index array, col index array)."""
    labels = minor_labels(d, m)
    out = []
    for k in range(1, m + 1):
        pos = [p for p, (r, _) in enumerate(labels) if len(r) == k]
        rows = np.array([labels[p][0] for p in pos])
        cols = np.array([labels[p][1] for p in pos])
        out.append((k, np.array(pos), rows, cols))
    return out


@dataclass(frozen=True)
class MinorVector:
    d: int
    m: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != nu(self.d, self.m):
            raise DegreeError(f"minor vector of a {self.d}x{self.m} matrix has {nu(self.d, self.m)} entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def labels(self):
        return minor_labels(self.d, self.m)

    def block(self, which: int) -> np.ndarray:
        """The M^0 (which=0) or M^1 (which=1) block."""
        last = self.m - 1
        mask = np.array([(last in cols) == bool(which) for _, cols in self.labels])
        return self.values[mask]

    def get(self, rows: Sequence[int], cols: Sequence[int]) -> float:
        key = (tuple(rows), tuple(cols))
        return float(self.values[self.labels.index(key)])


def minors_batch(F: np.ndarray) -> np.ndarray:
    """Minor vectors of a stack of d x m matrices, shape (..., nu)."""
    F = np.asarray(F, dtype=float)
    d, m = F.shape[-2:]
    out = np.empty(F.shape[:-2] + (nu(d, m),))
    for k, pos, rows, cols in _label_gather(d, m):
        if k == 1:
            out[..., pos] = F[..., rows[:, 0], cols[:, 0]]
        else:
            sub = F[..., rows[:, :, None], cols[:, None, :]]
            out[..., pos] = np.linalg.det(sub)
    return out


def minors(F: np.ndarray) -> MinorVector:
    F = np.asarray(F, dtype=float)
    if F.ndim != 2:
        raise DegreeError(f"expected a matrix, got shape {F.shape}")
    d, m = F.shape
    if m > d:
        raise DegreeError(f"minor vectors need m <= d; got {d}x{m}")
    return MinorVector(d, m, minors_batch(F))


# -- basis change -----------------------------------------------------------

def cauchy_binet_matrix(A: np.ndarray, d: int) -> np.ndarray:
    """Linear map T with ``minors(F @ A) = T @ minors(F)`` for every d x m matrix F.

    Column i of ``A`` holds the coordinates of the new basis vector b_i in the
    old basis, so the representation of a linear map changes as F -> F A.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if A.shape != (m, m):
        raise DegreeError(f"transition matrix must be square, got {A.shape}")
    labels = minor_labels(d, m)
    look = {lab: p for p, lab in enumerate(labels)}
    comp = {k: compound(A, k) for k in range(1, m + 1)}
    T = np.zeros((len(labels), len(labels)))
    for p, (rows, cols) in enumerate(labels):
        k = len(rows)
        cidx = _index_lookup(m, k)
        j = cidx[cols]
        for K in multi_indices(m, k):
            T[p, look[(rows, K)]] = comp[k][cidx[K], j]
    return T


def cauchy_binet_transport(mv: MinorVector, A: np.ndarray, cond_max: float = 1e12) -> MinorVector:
    """Minor vector after the change of source basis described by ``A``."""
    A = np.asarray(A, dtype=float)
    if A.shape != (mv.m, mv.m):
        raise DegreeError(f"transition matrix must be {mv.m}x{mv.m}, got {A.shape}")
    if np.linalg.cond(A) > cond_max:
        raise np.linalg.LinAlgError("transition matrix is singular (condition number above 1e12)")
    return MinorVector(mv.d, mv.m, cauchy_binet_matrix(A, mv.d) @ mv.values)


# -- cofactor of the normal -------------------------------------------------

def cof_normal_from_minors(values: np.ndarray, d: int, orientation: float = 1.0) -> np.ndarray:
    """``sum_i (-1)^(d-i) M_{omit i}(F) e_i`` from minor vectors of d x (d-1) matrices.

    ``values`` has shape (..., nu(d, d-1)); ``orientation`` is det of the frame.
    """
    values = np.asarray(values, dtype=float)
    labels = minor_labels(d, d - 1)
    look = {lab: p for p, lab in enumerate(labels)}
    cols = tuple(range(d - 1))
    out = np.empty(values.shape[:-1] + (d,))
    for i in range(d):
        rows = tuple(r for r in range(d) if r != i)
        # 0-based i here: (-1)^(d-(i+1))
        out[..., i] = (-1) ** (d - 1 - i) * values[..., look[(rows, cols)]]
    return out * np.asarray(orientation)[..., None]


def cof_normal(F: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """``(cof F~) n`` for any extension F~ of a tangential map.

    ``F`` is d x (d-1) with column j the image of tangent vector v_j, in
    canonical coordinates; ``basis`` is the orthonormal frame [v_1 .. v_{d-1}, n].
    The result does not depend on how F~ acts on n.
    """
    Q = check_orthonormal(basis)
    F = np.asarray(F, dtype=float)
    d = Q.shape[0]
    if F.shape[-2:] != (d, d - 1):
        raise DegreeError(f"F must be {d}x{d - 1}, got {F.shape}")
    return cof_normal_from_minors(minors_batch(F), d, np.sign(np.linalg.det(Q)))


def cofactor(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix of a (stack of) square matrix, valid for singular F too."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    if d == 1:
        return np.ones_like(F)
    if d == 2:
        C = np.empty_like(F)
        C[..., 0, 0] = F[..., 1, 1]
        C[..., 0, 1] = -F[..., 1, 0]
        C[..., 1, 0] = -F[..., 0, 1]
        C[..., 1, 1] = F[..., 0, 0]
        return C
    C = np.empty_like(F)
    for i in range(d):
        for j in range(d):
            sub = np.delete(np.delete(F, i, axis=-2), j, axis=-1)
            C[..., i, j] = (-1) ** (i + j) * np.linalg.det(sub)
    return C


def adjugate(F: np.ndarray) -> np.ndarray:
    return np.swapaxes(cofactor(F), -1, -2)


# -- homogeneity diagnostic -------------------------------------------------

def homogeneity_probe(
    psi: Callable[[tuple[np.ndarray, ...]], float],
    shapes: Sequence[tuple[int, ...]],
    samples: int = 200,
    rng: np.random.Generator | int | None = None,
    ts: Sequence[float] | None = None,
) -> float:
    """Max relative deviation of ``psi(t X)`` from ``t psi(X)`` over random X and t.

    Returns 0 (to rounding) for positively 1-homogeneous ``psi``.
    """
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(samples):
        X = tuple(rng.standard_normal(s) for s in shapes)
        base = float(psi(X))
        t_values = ts if ts is not None else (rng.uniform(0.0, 10.0) or 10.0,)
        for t in t_values:
            scaled = float(psi(tuple(t * x for x in X)))
            ref = t * base
            worst = max(worst, abs(scaled - ref) / max(abs(ref), 1e-300))
    return worst
