"""Bulk and surface energy densities, convexity probes and the total functional.

Bulk densities act on d x d gradients with positive determinant.  Surface
densities act on the tangential derivative: a d x (d-1) matrix whose column
j is the image of the tangent vector v_j of an orthonormal boundary frame
[v_1 .. v_{d-1}, n].  Every density also exposes its convex representative
``phi`` as a function of the minor vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Domain2D, QuadratureRule, boundary_quadrature, interior_quadrature
from .multilinear import (check_orthonormal, cof_normal_from_minors, cofactor, minor_labels,
                          minors_batch, nu)


class InfeasibleStateError(ValueError):
    """A deformation gradient with non-positive determinant was evaluated."""

    def __init__(self, msg, where=None):
        super().__init__(msg)
        self.where = where


# -- bulk -------------------------------------------------------------------------

H_KINDS = {
    "t2+1/t": (lambda t, a, b: a * t ** 2 + b / t, lambda t, a, b: 2 * a * t - b / t ** 2),
    "t2-log": (lambda t, a, b: a * t ** 2 - b * np.log(t), lambda t, a, b: 2 * a * t - b / t),
}


@dataclass(frozen=True)
class BulkDensity:
    """W(F) = c1 |F|^p + h(det F), with h(t) = a t^2 + b / t or a t^2 - b log t."""
    p: float = 2.0
    c1: float = 1.0
    h: str = "t2+1/t"
    a: float = 1.0
    b: float = 1.0
    a1: float = 0.0  # constant in the lower bound of the coercivity hypothesis

    def __post_init__(self):
        if self.h not in H_KINDS:
            raise ValueError(f"unknown h {self.h!r}; choose from {sorted(H_KINDS)}")
        if self.c1 <= 0 or self.a <= 0 or self.b <= 0:
            raise ValueError("c1, a and b must be positive")
        if self.p < 1:
            raise ValueError("p must be >= 1 for convexity")

    @property
    def hkind(self) -> int:
        return list(H_KINDS).index(self.h)

    def h_value(self, t):
        return H_KINDS[self.h][0](np.asarray(t, dtype=float), self.a, self.b)

    def h_prime(self, t):
        return H_KINDS[self.h][1](np.asarray(t, dtype=float), self.a, self.b)

    def _det(self, F):
        F = np.asarray(F, dtype=float)
        d = np.linalg.det(F)
        if np.any(d <= 0):
            bad = np.flatnonzero(np.atleast_1d(d) <= 0)
            raise InfeasibleStateError(f"det F <= 0 at {len(bad)} point(s)", bad)
        return d

    def value(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        d = self._det(F)
        nf2 = (F * F).sum(axis=(-2, -1))
        return self.c1 * nf2 ** (self.p / 2) + self.h_value(d)

    def grad(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        d = self._det(F)
        nf2 = (F * F).sum(axis=(-2, -1))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(nf2 > 0, self.c1 * self.p * nf2 ** (self.p / 2 - 1), 0.0)
        return np.asarray(s)[..., None, None] * F + np.asarray(self.h_prime(d))[..., None, None] * cofactor(F)

    def phi(self, m: np.ndarray, d: int) -> np.ndarray:
        """Convex representative on minor vectors of d x d matrices (last entry = det)."""
        m = np.asarray(m, dtype=float)
        order1 = np.array([len(r) == 1 for r, _ in minor_labels(d, d)])
        t = m[..., -1]
        with np.errstate(divide="ignore", invalid="ignore"):
            hv = np.where(t > 0, self.h_value(np.where(t > 0, t, 1.0)), np.inf)
        return self.c1 * ((m[..., order1] ** 2).sum(axis=-1)) ** (self.p / 2) + hv

    def lower_bound(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return self.a1 + self.c1 * ((F * F).sum(axis=(-2, -1))) ** (self.p / 2) + self.h_value(np.linalg.det(F))

    def check_h_limits(self) -> dict:
        t = 10.0 ** np.arange(-6, 7)
        hv = self.h_value(t)
        return {"h_at_small_t": float(hv[0]), "h_over_t_at_large_t": float(hv[-1] / t[-1]),
                "increasing_to_zero": bool(np.all(np.diff(hv[:6]) < 0)),
                "superlinear": bool(np.all(np.diff(hv[6:] / t[6:]) > 0))}


def W_standard(F, p: float = 2.0, c1: float = 1.0, h: str = "t2+1/t", a: float = 1.0, b: float = 1.0):
    """Value and F-gradient of the default polyconvex density."""
    W = BulkDensity(p, c1, h, a, b)
    return W.value(F), W.grad(F)


# -- surface ------------------------------------------------------------------------

def frame_orientation(basis: np.ndarray) -> np.ndarray:
    """det of each orthonormal frame [v_1 .. v_{d-1}, n]; rejects non-orthonormal input."""
    B = np.asarray(basis, dtype=float)
    if B.ndim == 2:
        check_orthonormal(B)
        return np.sign(np.linalg.det(B))
    eye = np.eye(B.shape[-1])
    err = np.abs(np.einsum("nki,nkj->nij", B, B) - eye).max()
    if err > 1e-12:
        raise ValueError(f"frames are not orthonormal (max deviation {err:.3g})")
    return np.sign(np.linalg.det(B))


def _tangent_cof(F: np.ndarray, orientation) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    d = F.shape[-2]
    return cof_normal_from_minors(minors_batch(F), d, orientation)


@dataclass(frozen=True)
class SurfaceDensity:
    """Base class.  ``value(x, y, F, basis)`` with ``basis = [v_1 .. v_{d-1}, n]``."""
    name: str = "zero"
    a2: float = 0.0
    c2: float = 0.0
    p: float = 2.0

    def phi(self, x, y, m, orientation, d: int) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        return np.zeros(m.shape[:-1])

    def value(self, x, y, F, basis) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return self.phi(x, y, minors_batch(F), frame_orientation(basis), F.shape[-2])

    def grad_F(self, x, y, F, orientation) -> np.ndarray:
        """Derivative in F for d = 2 (F of shape (..., 2, 1))."""
        return np.zeros_like(np.asarray(F, dtype=float))

    def grad_y(self, x, y, F, orientation) -> np.ndarray:
        return np.zeros_like(np.asarray(y, dtype=float))

    def lower_bound(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return self.a2 + self.c2 * ((F * F).sum(axis=(-2, -1))) ** (self.p / 2)

    @property
    def coercive(self) -> bool:
        return self.c2 > 0


ZeroSurface = SurfaceDensity


def _rot_grad(w: np.ndarray, orientation) -> np.ndarray:
    """Gradient in F (2 x 1) of w . c where c = orientation * (-F_1, F_0)."""
    o = np.asarray(orientation, dtype=float)
    G = np.empty(w.shape[:-1] + (2, 1))
    G[..., 0, 0] = o * w[..., 1]
    G[..., 1, 0] = -o * w[..., 0]
    return G


@dataclass(frozen=True)
class PressureDensity(SurfaceDensity):
    """pi(y) y . (cof F) n with pi(y) = pi0 + pi1 . y, clipped to [-cap, cap].

    Unbounded below in F and y, so it declares no finite lower bound.
    """
    name: str = "pressure"
    a2: float = -math.inf
    pi0: float = 1.0
    pi1: tuple[float, ...] = ()
    cap: float = 10.0

    def pressure(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        val = np.full(y.shape[:-1], self.pi0)
        if self.pi1:
            val = val + y @ np.asarray(self.pi1, dtype=float)
        return np.clip(val, -self.cap, self.cap)

    def _pressure_grad(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not self.pi1:
            return np.zeros_like(y)
        raw = self.pi0 + y @ np.asarray(self.pi1, dtype=float)
        inside = (np.abs(raw) < self.cap)[..., None]
        return np.where(inside, np.asarray(self.pi1, dtype=float), 0.0)

    def phi(self, x, y, m, orientation, d):
        y = np.asarray(y, dtype=float)
        c = cof_normal_from_minors(m, d, orientation)
        return self.pressure(y) * (y * c).sum(axis=-1)

    def grad_F(self, x, y, F, orientation):
        y = np.asarray(y, dtype=float)
        return _rot_grad(self.pressure(y)[..., None] * y, orientation)

    def grad_y(self, x, y, F, orientation):
        y = np.asarray(y, dtype=float)
        c = _tangent_cof(F, orientation)
        return self.pressure(y)[..., None] * c + (y * c).sum(axis=-1)[..., None] * self._pressure_grad(y)


@dataclass(frozen=True)
class MembraneDensity(SurfaceDensity):
    """eps0 |(cof F) n|."""
    name: str = "membrane"
    eps0: float = 1.0

    def __post_init__(self):
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")

    def phi(self, x, y, m, orientation, d):
        c = cof_normal_from_minors(m, d, orientation)
        return self.eps0 * np.sqrt((c * c).sum(axis=-1))

    def grad_F(self, x, y, F, orientation):
        c = _tangent_cof(F, orientation)
        nc = np.sqrt((c * c).sum(axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(nc[..., None] > 0, c / nc[..., None], 0.0)
        return _rot_grad(self.eps0 * unit, orientation)


@dataclass(frozen=True)
class CoerciveDensity(SurfaceDensity):
    """base + c |F|^p; convex in the order-1 minor block, so still tangentially polyconvex."""
    name: str = "coercive"
    base: SurfaceDensity = field(default_factory=SurfaceDensity)
    c: float = 1.0
    y_bound: float = 10.0  # |y| range over which the declared lower bound holds for pressure bases

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("coercivity constant c must be positive")
        if self.p <= 1:
            raise ValueError("coercive variants need p > 1")
        a2, c2 = self._declared_bound()
        object.__setattr__(self, "a2", a2)
        object.__setattr__(self, "c2", c2)

    def _declared_bound(self) -> tuple[float, float]:
        if isinstance(self.base, PressureDensity):
            # |pi y . cof n| <= cap R |F| in 2-D; half of c|F|^p absorbs it
            k = self.base.cap * self.y_bound
            t = (k / (0.5 * self.c * self.p)) ** (1.0 / (self.p - 1))
            return 0.5 * self.c * t ** self.p - k * t, 0.5 * self.c
        return self.base.a2, self.c + self.base.c2

    def phi(self, x, y, m, orientation, d):
        m = np.asarray(m, dtype=float)
        order1 = np.array([len(r) == 1 for r, _ in minor_labels(d, d - 1)])
        return self.base.phi(x, y, m, orientation, d) + self.c * ((m[..., order1] ** 2).sum(axis=-1)) ** (self.p / 2)

    def grad_F(self, x, y, F, orientation):
        F = np.asarray(F, dtype=float)
        nf2 = (F * F).sum(axis=(-2, -1))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(nf2 > 0, self.c * self.p * nf2 ** (self.p / 2 - 1), 0.0)
        return self.base.grad_F(x, y, F, orientation) + s[..., None, None] * F

    def grad_y(self, x, y, F, orientation):
        return self.base.grad_y(x, y, F, orientation)


def U_pressure(x, y, F, basis, pi0: float = 1.0) -> np.ndarray:
    return PressureDensity(pi0=pi0).value(x, y, F, basis)


def U_membrane(x, y, F, basis, eps0: float = 1.0) -> np.ndarray:
    return MembraneDensity(eps0=eps0).value(x, y, F, basis)


def U_coercive(base: SurfaceDensity, c: float, p: float = 2.0) -> CoerciveDensity:
    return CoerciveDensity(base=base, c=c, p=p)


def make_surface(kind: str, eps0: float = 1.0, pi0: float = 1.0, c: float = 0.0, p: float = 2.0,
                 cap: float = 10.0) -> SurfaceDensity:
    kind = kind.lower()
    if kind in ("zero", "none"):
        base = SurfaceDensity()
    elif kind == "pressure":
        base = PressureDensity(pi0=pi0, cap=cap)
    elif kind == "membrane":
        base = MembraneDensity(eps0=eps0)
    else:
        raise ValueError(f"unknown surface density {kind!r}")
    return CoerciveDensity(base=base, c=c, p=p) if c > 0 else base


# -- probes --------------------------------------------------------------------------

def convexity_probe(phi: Callable[[np.ndarray], np.ndarray], dim: int, trials: int = 1000, rng=None,
                    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None) -> float:
    """Largest midpoint-convexity violation over random pairs and weights (0 if none)."""
    rng = np.random.default_rng(rng)
    if sampler is None:
        def sampler(r, n):
            return r.standard_normal((n, dim))
    m1, m2 = sampler(rng, trials), sampler(rng, trials)
    lam = rng.uniform(0.0, 1.0, trials)
    mid = lam[:, None] * m1 + (1 - lam[:, None]) * m2
    gap = np.asarray(phi(mid)) - (lam * np.asarray(phi(m1)) + (1 - lam) * np.asarray(phi(m2)))
    return float(max(0.0, np.max(gap)))


def coercivity_check(density, d: int = 2, trials: int = 1000, rng=None, y_bound: float = 10.0) -> float:
    """min over random states of U - (a2 + c2 |F|^p); non-negative when the declared bound holds.

    For bulk densities F is drawn with det F > 0 and the bound a1 + c1|F|^p + h(det F) is used.
    """
    rng = np.random.default_rng(rng)
    if isinstance(density, BulkDensity):
        F = rng.standard_normal((trials, d, d)) * rng.uniform(0.1, 5.0, (trials, 1, 1))
        neg = np.linalg.det(F) < 0
        F[neg, :, 0] *= -1
        F = F[np.linalg.det(F) > 1e-8]
        return float((density.value(F) - density.lower_bound(F)).min())
    F = rng.standard_normal((trials, d, d - 1)) * rng.uniform(0.0, 10.0, (trials, 1, 1))
    y = rng.standard_normal((trials, d))
    y *= (rng.uniform(0.0, y_bound, trials) / np.linalg.norm(y, axis=1))[:, None]
    basis = np.eye(d)
    if d == 2:
        basis = np.array([[1.0, 0.0], [0.0, -1.0]])  # tangent e1, outward normal -e2
    x = np.zeros((trials, d))
    return float((density.value(x, y, F, basis) - density.lower_bound(F)).min())


def homogeneity_of_surface(density: SurfaceDensity, d: int = 3, samples: int = 200, rng=None) -> float:
    """Homogeneity deviation of the convex representative in the minor variable."""
    from .multilinear import homogeneity_probe
    y = np.ones(d) / math.sqrt(d)
    return homogeneity_probe(lambda X: float(density.phi(None, y, X[0], 1.0, d)), [(nu(d, d - 1),)], samples, rng)


# -- Jensen surrogate for tangential quasiconvexity -------------------------------------

def _disk_mesh(rings: int = 4):
    from scipy.spatial import Delaunay
    pts = [np.zeros((1, 2))]
    for k in range(1, rings + 1):
        th = 2 * math.pi * np.arange(6 * k) / (6 * k)
        pts.append((k / rings) * np.column_stack([np.cos(th), np.sin(th)]))
    P = np.vstack(pts)
    tri = Delaunay(P).simplices
    boundary = np.arange(len(P) - 6 * rings, len(P))
    return P, tri, boundary


def jensen_check(density: SurfaceDensity, xi: np.ndarray, fields: int = 20, rng=None,
                 amplitude: float = 0.3, rings: int = 4) -> tuple[float, np.ndarray]:
    """Affine energy and averaged energies of xi + D(phi) for random piecewise-affine phi vanishing on the disk boundary.

    ``xi`` is d x 2 (tangent plane R^2, so d = 3 for the genuine surface case).
    """
    rng = np.random.default_rng(rng)
    xi = np.asarray(xi, dtype=float)
    d = xi.shape[0]
    P, T, bnd = _disk_mesh(rings)
    A = P[T[:, 1]] - P[T[:, 0]]
    B = P[T[:, 2]] - P[T[:, 0]]
    area = 0.5 * np.abs(A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0])
    basis = np.eye(d)
    y = np.zeros((len(T), d))
    x = np.zeros((len(T), d))
    u_affine = float(density.value(x[:1], y[:1], xi[None], basis)[0])
    avgs = []
    for _ in range(fields):
        phi = amplitude * rng.standard_normal((len(P), d))
        phi[bnd] = 0.0
        # gradient of the P1 interpolant on each triangle: solve [A B]^T G^T = [dphi]
        M = np.stack([A, B], axis=1)  # (T, 2, 2) rows are edge vectors
        dphi = np.stack([phi[T[:, 1]] - phi[T[:, 0]], phi[T[:, 2]] - phi[T[:, 0]]], axis=1)  # (T, 2, d)
        G = np.linalg.solve(M, dphi)  # (T, 2, d): row j = derivative along coordinate j
        F = xi[None] + np.swapaxes(G, 1, 2)
        vals = density.value(x, y, F, basis)
        avgs.append(float(area @ vals / area.sum()))
    return u_affine, np.array(avgs)


# -- total functional ----------------------------------------------------------------------

@dataclass
class EnergyBreakdown:
    bulk: float
    surface: float
    interior_nodes: int = 0
    boundary_nodes: int = 0

    @property
    def total(self) -> float:
        return self.bulk + self.surface


def eval_functional(u, dom: Domain2D, W: BulkDensity, U: SurfaceDensity | None = None,
                    quad_int: QuadratureRule | None = None, quad_bdy: QuadratureRule | None = None,
                    h: float = 1 / 32) -> EnergyBreakdown:
    """Bulk plus surface energy of an analytic or discrete deformation.

    For analytic maps the tangential derivative is Du t at each boundary node.
    """
    U = U or SurfaceDensity()
    if hasattr(u, "energy_breakdown"):
        return u.energy_breakdown(W, U)
    quad_int = quad_int or interior_quadrature(dom, h)
    quad_bdy = quad_bdy or boundary_quadrature(dom, 4, h)
    F = u._grad(quad_int.nodes)
    bulk = float(quad_int.weights @ W.value(F))
    xb = quad_bdy.nodes
    Ft = np.einsum("nij,nj->ni", u._grad(xb), quad_bdy.tangents)[:, :, None]
    basis = np.stack([quad_bdy.tangents, quad_bdy.normals], axis=2)
    surf = float(quad_bdy.weights @ U.value(xb, u._value(xb), Ft, basis))
    return EnergyBreakdown(bulk, surf, len(quad_int.nodes), len(xb))
