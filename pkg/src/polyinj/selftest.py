"""Randomized consistency checks of the exterior-algebra layer.

Each check compares a library result with an independent oracle (Leibniz
determinants, explicit interior-product signs, direct recomputation after a
basis change) and reports the worst scaled error over its random cases.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from math import comb
from typing import Callable

import numpy as np

from .multilinear import (
    AltTensor,
    cauchy_binet_transport,
    cof_normal,
    cofactor,
    contract,
    inner,
    lambda_k,
    minors,
    multi_indices,
    wedge,
    wedge_covector,
    wedge_normal,
    wedge_vectors,
)

TOL = 1e-12
CB_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    d: int
    cases: int
    max_err: float
    tol: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.max_err <= self.tol)


def _scaled(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(b)), initial=0.0))


def _rand_tensor(rng, d, k) -> AltTensor:
    return AltTensor(d, k, rng.standard_normal(comb(d, k)))


def _rand_frame(rng, d) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q


def _leibniz(M: np.ndarray) -> np.ndarray:
    """Determinants of a stack of k x k matrices by the permutation sum."""
    k = M.shape[-1]
    total = np.zeros(M.shape[:-2])
    for perm in itertools.permutations(range(k)):
        inv = sum(1 for i in range(k) for j in range(i + 1, k) if perm[i] > perm[j])
        total += (-1) ** inv * np.prod(M[..., list(range(k)), list(perm)], axis=-1)
    return total


def _pos(I, d):
    return multi_indices(d, len(I)).index(tuple(I))


# -- individual checks (one random case each) ------------------------------------

def _wedge_antisymmetry(rng, d):
    r = int(rng.integers(0, d + 1))
    s = int(rng.integers(0, d - r + 1))
    a, b = _rand_tensor(rng, d, r), _rand_tensor(rng, d, s)
    return _scaled(wedge(a, b).coeffs, (-1) ** (r * s) * wedge(b, a).coeffs)


def _inner_basis(rng, d):
    k = int(rng.integers(1, d + 1))
    I = list(rng.choice(d, size=k, replace=False))
    same = rng.uniform() < 0.5
    J = list(rng.permutation(I)) if same else list(rng.choice(d, size=k, replace=False))

    def sign(seq):
        return (-1) ** sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])

    expected = sign(I) * sign(J) if set(I) == set(J) else 0.0
    return abs(inner(AltTensor.basis(d, I), AltTensor.basis(d, J)) - expected)


def _contraction_adjunction(rng, d):
    r = int(rng.integers(0, d + 1))
    s = int(rng.integers(0, r + 1))
    a, b = _rand_tensor(rng, d, r), _rand_tensor(rng, d, s)
    c = contract(a, b)
    lhs = np.array([inner(c, AltTensor.basis(d, G)) for G in multi_indices(d, r - s)])
    rhs = np.array([inner(a, wedge(AltTensor.basis(d, G), b)) for G in multi_indices(d, r - s)])
    return _scaled(lhs, rhs)


def _contraction_explicit(rng, d):
    """e_I ⌞ e_j removes j with sign (-1)^(k-1-pos), or vanishes when j is not in I."""
    k = int(rng.integers(1, d + 1))
    I = tuple(sorted(rng.choice(d, size=k, replace=False)))
    j = int(rng.integers(0, d))
    got = contract(AltTensor.basis(d, I), AltTensor.basis(d, [j])).coeffs
    want = np.zeros(comb(d, k - 1))
    if j in I:
        p = I.index(j)
        want[_pos([i for i in I if i != j], d)] = (-1) ** (k - 1 - p)
    return _scaled(got, want)


def _contraction_normal(rng, d):
    """(v_I ^ n) ⌞ n = v_I and v_I ⌞ n = 0 for an orthonormal frame with n last."""
    Q = _rand_frame(rng, d)
    n = Q[:, -1]
    k = int(rng.integers(0, d))
    I = sorted(rng.choice(d - 1, size=k, replace=False)) if k else []
    vI = wedge_vectors(*[Q[:, i] for i in I]) if k else AltTensor.scalar(d, 1.0)
    with_n = wedge_vectors(*([Q[:, i] for i in I] + [n]))
    nn = AltTensor.vector(n)
    err = _scaled(contract(with_n, nn).coeffs, vI.coeffs)
    if k:
        err = max(err, _scaled(contract(vI, nn).coeffs, np.zeros(comb(d, k - 1))))
    # equal degrees: a ⌞ b is the inner product
    a, b = _rand_tensor(rng, d, k), _rand_tensor(rng, d, k)
    return max(err, abs(float(contract(a, b).coeffs[0]) - inner(a, b)) / (1 + abs(inner(a, b))))


def _wedge_normal_characterization(rng, d):
    Q = _rand_frame(rng, d)
    F = rng.standard_normal((d, d))
    Fv = Q.T @ F @ Q
    k = int(rng.integers(0, d))
    A = lambda_k(Fv, k)
    W = wedge_normal(A, Q[:, -1], Q, k)
    err = 0.0
    for J in multi_indices(d, k + 1):
        col = W[:, _pos(J, d)]
        if J[-1] < d - 1:
            err = max(err, _scaled(col, 0.0))
        else:
            # minors expansion: column J' of the brute-force compound
            Jp = J[:-1]
            if k == 0:
                want = np.ones(1)
            else:
                rows = np.array(multi_indices(d, k))
                want = _leibniz(Fv[rows[:, :, None], np.array(Jp)[None, None, :]])
            err = max(err, _scaled(col, want))
    # degree zero with a general covector: (Λ_0 F ^ β) α = α · β
    beta = rng.standard_normal(d)
    alpha = rng.standard_normal(d)
    err = max(err, _scaled(wedge_covector(np.ones((1, 1)), beta, 0) @ alpha, alpha @ beta))
    return err


def _minor_expansion(rng, d):
    F = rng.standard_normal((d, d))
    G = rng.standard_normal((d, d))
    err = 0.0
    for k in range(0, d + 1):
        L = lambda_k(F, k)
        if k == 0:
            err = max(err, _scaled(L, np.ones((1, 1))))
            continue
        idx = np.array(multi_indices(d, k))
        brute = _leibniz(F[idx[:, None, :, None], idx[None, :, None, :]])
        err = max(err, _scaled(L, brute))
        err = max(err, _scaled(lambda_k(F @ G, k), L @ lambda_k(G, k)))
    return err


def _cauchy_binet(rng, d):
    m = d - 1
    F = rng.standard_normal((d, m))
    A = rng.standard_normal((m, m))
    while np.linalg.cond(A) > 1e6:
        A = rng.standard_normal((m, m))
    got = cauchy_binet_transport(minors(F), A).values
    want = minors(F @ A).values
    return float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300))


def _cof_extension(rng, d):
    """(cof L) n from 5 random extensions L of the same tangential map."""
    Q = _rand_frame(rng, d)
    F = rng.standard_normal((d, d - 1))
    ref = cof_normal(F, Q)
    err = 0.0
    for _ in range(5):
        w = rng.standard_normal(d) * rng.uniform(0.1, 10.0)
        L = np.column_stack([F, w]) @ Q.T
        err = max(err, _scaled(cofactor(L) @ Q[:, -1], ref))
    return err


CHECKS: dict[str, tuple[Callable, tuple[int, ...], int, float]] = {
    # name: (case function, dimensions, default cases, tolerance)
    "wedge_antisymmetry": (_wedge_antisymmetry, (2, 3, 4, 5), 500, TOL),
    "inner_basis": (_inner_basis, (2, 3, 4, 5), 500, TOL),
    "contraction_adjunction": (_contraction_adjunction, (2, 3, 4, 5), 500, TOL),
    "contraction_explicit": (_contraction_explicit, (2, 3, 4, 5), 500, TOL),
    "contraction_normal": (_contraction_normal, (2, 3, 4, 5), 500, TOL),
    "wedge_normal": (_wedge_normal_characterization, (2, 3, 4, 5), 500, TOL),
    "minor_expansion": (_minor_expansion, (2, 3, 4, 5), 500, TOL),
    "cauchy_binet": (_cauchy_binet, (3, 4), 100, CB_TOL),
    "cof_extension": (_cof_extension, (2, 3), 100, TOL),
}


def run_selftest(seed: int = 0, cases: int | None = None, names=None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, dims, default_cases, tol) in CHECKS.items():
        if names is not None and name not in names:
            continue
        for d in dims:
            t0 = time.perf_counter()
            n = cases or default_cases
            err = max(fn(rng, d) for _ in range(n))
            out.append(CheckResult(name, d, n, err, tol, time.perf_counter() - t0))
    return out


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<24} {'d':>2} {'cases':>6} {'max_err':>11} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<24} {r.d:>2} {r.cases:>6} {r.max_err:>11.3e} {r.tol:>8.0e}  {'PASS' if r.passed else 'FAIL'}")
    fails = sum(not r.passed for r in results)
    lines.append(f"{len(results)} checks, {fails} failures")
    return "\n".join(lines)
