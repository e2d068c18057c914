import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from polyinj.multilinear import (
    AltTensor, DegreeError, MinorVector, adjugate, cauchy_binet_matrix, cauchy_binet_transport, cof_normal,
    cofactor, compound, contract, homogeneity_probe, inner, lambda_k, minor_labels, minors, minors_batch,
    multi_indices, nu, wedge, wedge_covector, wedge_normal, wedge_normal_tuple, wedge_vectors,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def e(d, *idx):
    return AltTensor.basis(d, idx)


# -- oracles --------------------------------------------------------------------

def perm_det(M):
    """Determinant by the signed permutation sum."""
    import itertools
    k = len(M)
    tot = 0.0
    for p in itertools.permutations(range(k)):
        inv = sum(p[i] > p[j] for i in range(k) for j in range(i + 1, k))
        tot += (-1) ** inv * np.prod([M[i][p[i]] for i in range(k)])
    return tot


# -- wedge -------------------------------------------------------------------------

def test_wedge_examples():
    assert np.allclose(wedge(e(3, 0), e(3, 0)).coeffs, 0)
    assert np.allclose(wedge(e(3, 0), e(3, 1)).coeffs, e(3, 0, 1).coeffs)
    assert ((e(3, 0) + e(3, 1)) ^ e(3, 1)).allclose(e(3, 0, 1))


def test_wedge_errors():
    with pytest.raises(DegreeError):
        wedge(e(3, 0, 1), e(3, 0, 2))
    with pytest.raises(DegreeError):
        wedge(e(2, 0), e(3, 0))


def test_basis_unsorted_sign():
    assert np.allclose(e(3, 1, 0).coeffs, -e(3, 0, 1).coeffs)
    assert np.allclose(e(3, 1, 1).coeffs, 0)


@given(st.integers(2, 5), st.data())
def test_wedge_graded_antisymmetry(d, data):
    r = data.draw(st.integers(0, d))
    s = data.draw(st.integers(0, d - r))
    a = AltTensor(d, r, data.draw(arrays(float, comb(d, r), elements=finite)))
    b = AltTensor(d, s, data.draw(arrays(float, comb(d, s), elements=finite)))
    assert np.allclose(wedge(a, b).coeffs, (-1) ** (r * s) * wedge(b, a).coeffs, atol=1e-12)


@given(st.integers(2, 4), st.data())
def test_wedge_vectors_matches_iterated_wedge(d, data):
    k = data.draw(st.integers(1, d))
    V = data.draw(arrays(float, (k, d), elements=finite))
    it = AltTensor.vector(V[0])
    for v in V[1:]:
        it = it ^ AltTensor.vector(v)
    assert np.allclose(wedge_vectors(*V).coeffs, it.coeffs, atol=1e-9)


# -- inner -----------------------------------------------------------------------------

def test_inner_examples():
    assert inner(e(3, 0, 1), e(3, 0, 1)) == 1
    assert inner(e(3, 0, 1), e(3, 0, 2)) == 0
    assert inner(e(3, 0, 1), e(3, 1, 0)) == -1
    with pytest.raises(DegreeError):
        inner(e(3, 0), e(3, 0, 1))


def test_inner_equals_gram_determinant(rng):
    # (v1 ^ v2) . (w1 ^ w2) = det [v_i . w_j]
    for _ in range(20):
        V, Wm = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
        assert math.isclose(inner(wedge_vectors(*V), wedge_vectors(*Wm)), np.linalg.det(V @ Wm.T), abs_tol=1e-12)


# -- contraction -----------------------------------------------------------------------

def test_contraction_examples(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    v1, v2, n = Q.T
    nn = AltTensor.vector(n)
    assert contract(wedge_vectors(v1, v2, n), nn).allclose(wedge_vectors(v1, v2))
    assert contract(wedge_vectors(v1, v2), nn).allclose(AltTensor.zero(3, 1))
    a, b = AltTensor(3, 2, rng.standard_normal(3)), AltTensor(3, 2, rng.standard_normal(3))
    assert math.isclose(contract(a, b).coeffs[0], inner(a, b), abs_tol=1e-14)
    with pytest.raises(DegreeError):
        contract(e(3, 0), e(3, 0, 1))


@given(st.integers(2, 5), st.data())
def test_contraction_adjunction(d, data):
    r = data.draw(st.integers(0, d))
    s = data.draw(st.integers(0, r))
    a = AltTensor(d, r, data.draw(arrays(float, comb(d, r), elements=finite)))
    b = AltTensor(d, s, data.draw(arrays(float, comb(d, s), elements=finite)))
    c = contract(a, b)
    for G in multi_indices(d, r - s):
        g = AltTensor.basis(d, G)
        assert math.isclose(inner(c, g), inner(a, wedge(g, b)), abs_tol=1e-9)


# -- induced maps ------------------------------------------------------------------------

def test_lambda_k_examples(rng):
    for k in range(4):
        assert np.allclose(lambda_k(np.eye(3), k), np.eye(comb(3, k)))
    assert np.allclose(lambda_k(np.diag([2.0, 3.0]), 2) @ e(2, 0, 1).coeffs, 6 * e(2, 0, 1).coeffs)
    F = rng.standard_normal((3, 3))
    L = lambda_k(F, 2)
    for a, I in enumerate(multi_indices(3, 2)):
        for b, J in enumerate(multi_indices(3, 2)):
            assert math.isclose(L[a, b], perm_det(F[np.ix_(I, J)]), abs_tol=1e-12)
    with pytest.raises(DegreeError):
        lambda_k(np.ones((3, 2)), 1)


@given(st.integers(1, 4), st.data())
def test_lambda_k_functorial(d, data):
    A = data.draw(arrays(float, (d, d), elements=finite))
    B = data.draw(arrays(float, (d, d), elements=finite))
    k = data.draw(st.integers(0, d))
    assert np.allclose(lambda_k(A @ B, k), lambda_k(A, k) @ lambda_k(B, k), atol=1e-7, rtol=1e-9)


def test_lambda_k_acts_on_wedges(rng):
    F = rng.standard_normal((4, 4))
    V = rng.standard_normal((3, 4))
    lhs = lambda_k(F, 3) @ wedge_vectors(*V).coeffs
    rhs = wedge_vectors(*(F @ V.T).T).coeffs
    assert np.allclose(lhs, rhs, atol=1e-12)


# -- wedge with normal ---------------------------------------------------------------------

def test_wedge_normal_characterization(rng):
    d = 3
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    F = rng.standard_normal((d, d))
    tup = wedge_normal_tuple(F, Q)
    Fv = Q.T @ F @ Q
    for k, W in enumerate(tup):
        for J in multi_indices(d, k + 1):
            col = W[:, multi_indices(d, k + 1).index(J)]
            if J[-1] < d - 1:
                assert np.allclose(col, 0)
            else:
                want = lambda_k(Fv, k)[:, multi_indices(d, k).index(J[:-1])] if k else [1.0]
                assert np.allclose(col, want, atol=1e-12)
    beta, alpha = rng.standard_normal(d), rng.standard_normal(d)
    assert math.isclose((wedge_covector(np.ones((1, 1)), beta, 0) @ alpha)[0], alpha @ beta, abs_tol=1e-12)


def test_wedge_normal_errors(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    A = np.eye(3)
    with pytest.raises(ValueError):
        wedge_normal(A, 2 * Q[:, -1], Q, 1)
    with pytest.raises(ValueError):
        wedge_normal(A, Q[:, -1], Q + 1e-6, 1)
    with pytest.raises(ValueError):
        wedge_normal(A, Q[:, 0], Q, 1)
    # C(3,1) == C(3,2): the degree cannot be inferred from the shape
    with pytest.raises(DegreeError):
        wedge_covector(A, Q[:, -1])


# -- minors -------------------------------------------------------------------------------

def test_minors_examples():
    assert np.allclose(minors(np.eye(2)).values, [1, 0, 0, 1, 1])
    assert nu(3, 2) == 9 and len(minors(np.ones((3, 2))).values) == 9
    assert np.allclose(minors(np.array([[1.0, 2.0], [3.0, 4.0]])).values, [1, 3, 2, 4, -2])
    with pytest.raises(DegreeError):
        minors(np.ones((2, 3)))


def test_minor_order_blocks():
    labels = minor_labels(3, 2)
    # M0 block: column 0 only; M1 block: involves the last column
    blocks = [int(1 in cols) for _, cols in labels]
    assert blocks == sorted(blocks)
    ks = [len(r) for r, c in labels if 1 not in c]
    assert ks == sorted(ks)


@given(st.integers(1, 4), st.data())
def test_minor_length_and_det(d, data):
    m = data.draw(st.integers(1, d))
    F = data.draw(arrays(float, (d, m), elements=finite))
    mv = minors(F)
    assert len(mv.values) == sum(comb(m, k) * comb(d, k) for k in range(1, m + 1))
    if m == d:
        assert math.isclose(mv.values[-1], np.linalg.det(F), abs_tol=1e-8, rel_tol=1e-9)


def test_minors_of_extension_restrict(rng):
    # M0 of an extension equals the minors of the restriction, label by label
    F = rng.standard_normal((3, 2))
    Ft = np.column_stack([F, rng.standard_normal(3)])
    mt, mf = minors(Ft), minors(F)
    m0 = [lab for lab in mt.labels if 2 not in lab[1]]
    assert len(m0) == len(mf.values)
    assert np.allclose(mt.block(0), [mf.get(*lab) for lab in m0])


def test_m1_vanishes_when_normal_is_killed(rng):
    L = rng.standard_normal((3, 3))
    L[:, -1] = 0.0
    assert np.allclose(minors(L).block(1), 0)


def test_minors_batch_matches_single(rng):
    F = rng.standard_normal((5, 3, 2))
    assert np.allclose(minors_batch(F)[2], minors(F[2]).values)


def test_minorvector_get():
    mv = minors(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert mv.get((0, 1), (0, 1)) == pytest.approx(-2)
    with pytest.raises(DegreeError):
        MinorVector(2, 2, np.zeros(4))


# -- Cauchy-Binet ---------------------------------------------------------------------------

def test_cauchy_binet_examples(rng):
    F = rng.standard_normal((3, 2))
    mv = minors(F)
    assert np.allclose(cauchy_binet_transport(mv, np.eye(2)).values, mv.values)
    scaled = cauchy_binet_transport(mv, 2 * np.eye(2)).values
    ks = np.array([len(r) for r, _ in mv.labels])
    assert np.allclose(scaled, 2.0 ** ks * mv.values)
    with pytest.raises(np.linalg.LinAlgError):
        cauchy_binet_transport(mv, np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]]))


@given(st.integers(3, 4), st.data())
def test_cauchy_binet_commutes(d, data):
    m = d - 1
    F = data.draw(arrays(float, (d, m), elements=finite))
    A = np.eye(m) + 0.3 * data.draw(arrays(float, (m, m), elements=st.floats(-1, 1)))
    T = cauchy_binet_matrix(A, d)
    assert np.allclose(T @ minors(F).values, minors(F @ A).values, atol=1e-9)


def test_cauchy_binet_linear(rng):
    A = rng.standard_normal((2, 2))
    F, G = rng.standard_normal((2, 3, 2))
    a = cauchy_binet_transport(MinorVector(3, 2, minors(F).values + 2 * minors(G).values), A).values
    b = cauchy_binet_transport(minors(F), A).values + 2 * cauchy_binet_transport(minors(G), A).values
    assert np.allclose(a, b)


# -- cofactor of the normal ------------------------------------------------------------------

def test_cof_normal_examples(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    n = Q[:, -1]
    assert np.allclose(cof_normal(Q[:, :2], Q), n)
    assert np.allclose(cof_normal(2 * Q[:, :2], Q), 4 * n)
    # 2-D: tangent t, normal (t_y, -t_x); the zero-normal extension is the oracle
    t = np.array([0.6, 0.8])
    basis = np.column_stack([t, [t[1], -t[0]]])
    f = np.array([[1.5], [-0.4]])
    L = np.column_stack([f[:, 0], [0.0, 0.0]]) @ basis.T
    assert np.allclose(cof_normal(f, basis), cofactor(L) @ basis[:, -1])
    with pytest.raises(ValueError):
        cof_normal(f, 1.01 * basis)


@given(st.integers(2, 3), st.data())
def test_cof_normal_extension_independent(d, data):
    seed = data.draw(st.integers(0, 2 ** 31))
    r = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(r.standard_normal((d, d)))
    F = r.standard_normal((d, d - 1))
    ref = cof_normal(F, Q)
    for _ in range(5):
        L = np.column_stack([F, 10 * r.standard_normal(d)]) @ Q.T
        assert np.allclose(cofactor(L) @ Q[:, -1], ref, atol=1e-12 * (1 + np.abs(ref).max()))


def test_cofactor_and_adjugate(rng):
    F = rng.standard_normal((4, 3, 3))
    assert np.allclose(cofactor(F), np.linalg.det(F)[:, None, None] * np.linalg.inv(F).transpose(0, 2, 1))
    assert np.allclose(adjugate(F) @ F, np.linalg.det(F)[:, None, None] * np.eye(3))
    assert np.allclose(compound(F[0], 2), lambda_k(F[0], 2))


# -- homogeneity ---------------------------------------------------------------------------------

def test_homogeneity_probe(rng):
    norm = lambda X: np.linalg.norm(X[0])
    assert homogeneity_probe(norm, [(3, 2)], 50, rng) <= 1e-12
    assert homogeneity_probe(lambda X: norm(X) + 1, [(3, 2)], 50, rng) > 0
    dev = homogeneity_probe(lambda X: norm(X) ** 2, [(3, 2)], 10, rng, ts=[2.0])
    assert dev == pytest.approx(1.0)
