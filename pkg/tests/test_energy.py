import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polyinj.deformations import Affine, Identity
from polyinj.energy import (
    BulkDensity, CoerciveDensity, InfeasibleStateError, MembraneDensity, PressureDensity, SurfaceDensity,
    W_standard, coercivity_check, convexity_probe, eval_functional, jensen_check, make_surface,
    U_coercive, U_membrane, U_pressure,
)
from polyinj.geometry import make_domain
from polyinj.multilinear import cof_normal, minors_batch, nu

SQUARE = make_domain("unit-square")
E2 = np.eye(2)
E3 = np.eye(3)


def _random_frame(rng, d):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q


def _pos_det(rng, n, lo=0.2, hi=5.0):
    out = []
    while len(out) < n:
        F = rng.standard_normal((2, 2))
        d = np.linalg.det(F)
        if lo <= d <= hi:
            out.append(F)
        elif lo <= -d <= hi:
            out.append(F[:, ::-1].copy())
    return np.array(out)


def test_W_identity_value():
    val, grad = W_standard(np.eye(2))
    assert val == pytest.approx(4.0)
    # |F|^2 + det^2 + 1/det: gradient 2F + (2 det - 1/det^2) cof F = 2I + I
    assert np.allclose(grad, 3 * np.eye(2))


def test_W_blows_up_at_zero_det():
    W = BulkDensity()
    vals = [float(W.value(np.diag([1.0, t]))) for t in (1e-2, 1e-4, 1e-6)]
    assert vals[0] < vals[1] < vals[2] and vals[2] > 1e5
    with pytest.raises(InfeasibleStateError):
        W.value(np.diag([1.0, -1.0]))
    with pytest.raises(InfeasibleStateError):
        W.grad(np.zeros((2, 2)))


@pytest.mark.parametrize("W", [BulkDensity(), BulkDensity(p=3.0, c1=0.5, h="t2-log", a=2.0, b=0.5)], ids=["default", "log"])
def test_W_gradient_fd(W, rng):
    F = _pos_det(rng, 100)
    G = W.grad(F)
    h = 1e-6
    err = 0.0
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = h
            fd = (W.value(F + E) - W.value(F - E)) / (2 * h)
            err = max(err, float(np.max(np.abs(fd - G[:, i, j]) / np.maximum(1.0, np.abs(G[:, i, j])))))
    assert err <= 1e-6


def test_W_phi_matches_value(rng):
    W = BulkDensity(p=3.0)
    F = _pos_det(rng, 50)
    assert np.allclose(W.phi(minors_batch(F), 2), W.value(F), rtol=1e-12)
    assert np.isinf(W.phi(np.array([1.0, 0, 0, 1, -0.5]), 2))


def test_h_limits():
    for h in ("t2+1/t", "t2-log"):
        info = BulkDensity(h=h).check_h_limits()
        assert info["h_at_small_t"] > 10 and info["h_over_t_at_large_t"] > 1e5
        assert info["increasing_to_zero"] and info["superlinear"]
    with pytest.raises(ValueError):
        BulkDensity(h="exp")
    with pytest.raises(ValueError):
        BulkDensity(c1=0.0)


def test_pressure_examples():
    assert U_pressure(None, np.array([0.3, 0.4]), np.zeros((2, 1)), E2) == 0.0
    F = np.array([[2.0], [0.0]])
    assert np.allclose(cof_normal(F, E2), [0, 2])
    assert U_pressure(None, np.array([0.0, 1.0]), F, E2) == pytest.approx(2.0)


def test_membrane_examples():
    F = np.eye(3)[:, :2]
    assert U_membrane(None, np.zeros(3), np.zeros((3, 2)), E3) == 0.0
    assert U_membrane(None, np.zeros(3), F, E3, eps0=0.7) == pytest.approx(0.7)
    for t in (0.5, 2.0, 3.0):
        assert U_membrane(None, np.zeros(3), t * F, E3, eps0=0.7) == pytest.approx(0.7 * t ** 2)
    with pytest.raises(ValueError):
        MembraneDensity(eps0=0.0)


def test_coercive_examples():
    F = np.eye(3)[:, :2]
    U = U_coercive(MembraneDensity(eps0=0.7), c=1.0, p=2.0)
    assert U.value(None, np.zeros(3), F, E3) == pytest.approx(0.7 + 2.0)
    base = PressureDensity()
    y = np.array([0.2, -0.4])
    assert U_coercive(base, 2.0).value(None, y, np.zeros((2, 1)), E2) == base.value(None, y, np.zeros((2, 1)), E2)
    with pytest.raises(ValueError):
        U_coercive(base, 0.0)
    with pytest.raises(ValueError):
        U_coercive(base, 1.0, p=1.0)
    assert not PressureDensity().coercive and U_coercive(base, 1.0).coercive


@given(st.integers(0, 2 ** 31), st.sampled_from([2, 3]))
def test_minor_representation(seed, d):
    """Catalog values agree with the direct cofactor formulas in any frame."""
    r = np.random.default_rng(seed)
    Q = _random_frame(r, d)
    F = r.standard_normal((d, d - 1))
    y = r.standard_normal(d)
    c = cof_normal(F, Q)
    assert PressureDensity(pi0=1.3).value(None, y, F, Q) == pytest.approx(1.3 * y @ c, rel=1e-12, abs=1e-12)
    assert MembraneDensity(eps0=0.4).value(None, y, F, Q) == pytest.approx(0.4 * np.linalg.norm(c), rel=1e-12)
    co = U_coercive(MembraneDensity(), 0.5, 3.0)
    assert co.value(None, y, F, Q) == pytest.approx(np.linalg.norm(c) + 0.5 * np.linalg.norm(F) ** 3, rel=1e-12)


@given(st.integers(0, 2 ** 31), st.floats(0, 2 * math.pi))
def test_frame_independence_d3(seed, angle):
    """Rotating the tangent basis (and re-expressing F in it) leaves U unchanged."""
    r = np.random.default_rng(seed)
    Q = _random_frame(r, 3)
    F = r.standard_normal((3, 2))
    y = r.standard_normal(3)
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    Q2 = Q.copy()
    Q2[:, :2] = Q[:, :2] @ R
    F2 = F @ R
    for U in (PressureDensity(), MembraneDensity(), U_coercive(MembraneDensity(), 1.0)):
        assert U.value(None, y, F2, Q2) == pytest.approx(U.value(None, y, F, Q), rel=1e-10, abs=1e-10)


def test_frame_must_be_orthonormal():
    with pytest.raises(ValueError):
        MembraneDensity().value(None, np.zeros(2), np.ones((2, 1)), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_convexity_probe_examples():
    rng = np.random.default_rng(0)
    assert convexity_probe(lambda m: m @ np.arange(1.0, 6.0), 5, rng=rng) <= 1e-12
    assert convexity_probe(lambda m: np.linalg.norm(m, axis=-1), 5, rng=rng) == 0.0

    # -|m|^2: the midpoint gap is lam (1 - lam) |m1 - m2|^2
    m1, m2 = np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]])
    pts = iter([m1, m2])
    gap = convexity_probe(lambda m: -(m * m).sum(-1), 2, trials=1, rng=np.random.default_rng(5),
                          sampler=lambda r, n: next(pts))
    lam = np.random.default_rng(5).uniform(0.0, 1.0, 1)[0]
    assert gap == pytest.approx(lam * (1 - lam) * 5.0, rel=1e-12)


@pytest.mark.parametrize("U", [PressureDensity(), MembraneDensity(), PressureDensity(pi0=-2.0, cap=1.5)],
                         ids=["pressure", "membrane", "pressure-neg"])
@pytest.mark.parametrize("d", [2, 3])
def test_surface_convex_in_minors(U, d):
    y = np.linspace(0.2, 0.9, d)
    v = convexity_probe(lambda m: U.phi(None, y, m, 1.0, d), nu(d, d - 1), trials=2000, rng=1)
    assert v <= 1e-12


@pytest.mark.parametrize("density", [
    BulkDensity(), BulkDensity(p=3.0, h="t2-log"),
    SurfaceDensity(), MembraneDensity(), U_coercive(MembraneDensity(), 1.0),
    U_coercive(PressureDensity(), 1.0), U_coercive(PressureDensity(pi0=-3.0), 2.0, p=3.0),
], ids=lambda d: getattr(d, "name", None) or type(d).__name__)
def test_coercivity_holds(density):
    assert coercivity_check(density, d=2, trials=1000, rng=2) >= -1e-9


def test_pressure_not_coercive():
    # no finite a2: the declared bound is -inf, which holds trivially
    assert coercivity_check(PressureDensity(), 2, rng=0) == math.inf


def test_jensen_membrane():
    xi = np.array([[1.0, 0.2], [0.1, 0.9], [0.3, -0.4]])
    aff, avgs = jensen_check(MembraneDensity(), xi, fields=20, rng=4)
    assert len(avgs) == 20 and np.all(avgs >= aff - 1e-12)


def test_eval_functional_examples():
    W = BulkDensity()
    e = eval_functional(Identity(), SQUARE, W)
    assert e.bulk == pytest.approx(4.0, abs=1e-12) and e.surface == 0.0 and e.total == pytest.approx(4.0)
    e = eval_functional(Identity(), SQUARE, W, MembraneDensity())
    assert e.surface == pytest.approx(4.0, abs=1e-12)
    e = eval_functional(Affine(2 * np.eye(2)), SQUARE, W)
    assert e.bulk == pytest.approx(8 + 16 + 0.25, abs=1e-10)


def test_make_surface():
    assert isinstance(make_surface("zero"), SurfaceDensity)
    assert isinstance(make_surface("membrane", c=1.0), CoerciveDensity)
    with pytest.raises(ValueError):
        make_surface("gravity")
