"""Residuals of the divergence identities for deformations and test pairs.

For a test pair (phi, g) the interior identity reads

    int [adj Du g(u)] . Dphi + int det Du phi div g(u) = 0

when phi has compact support in the domain.  The up-to-the-boundary form
subtracts the surface term

    int_boundary phi g(u) . cof(D^tau u) n

and holds for every smooth phi when no cavity opens at the boundary.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Domain2D, boundary_quadrature, interior_quadrature, QuadratureRule
from .multilinear import adjugate, cof_normal_from_minors, minors_batch

MACHINE_ZERO = 1e-13
UNDEFINED_FRACTION = 1e-3
# direction used to split quadrature nodes lying on a kink; it is not
# parallel to any interface of the catalog maps
_SPLIT_DIR = np.array([1.0, 0.6180339887498949]) / math.hypot(1.0, 0.6180339887498949)


class IdentityError(ValueError):
    pass


@dataclass(frozen=True)
class ScalarField:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    compact: bool = False


@dataclass(frozen=True)
class VectorField:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]

    def div(self, y: np.ndarray) -> np.ndarray:
        J = self.jac(y)
        return J[:, 0, 0] + J[:, 1, 1]


@dataclass(frozen=True)
class TestPair:
    phi: ScalarField
    g: VectorField

    __test__ = False  # not a pytest class

    @property
    def name(self) -> str:
        return f"{self.phi.name}|{self.g.name}"


def _const(c):
    return lambda x: np.full(len(x), float(c))


def phi_family(name: str, center=(0.0, 0.5), radius: float = 0.45) -> ScalarField:
    """Scalar test functions: 1, x1, x2, x1x2, bump (compactly supported, C^2)."""
    if name == "1":
        return ScalarField("1", _const(1.0), lambda x: np.zeros_like(x))
    if name == "x1":
        return ScalarField("x1", lambda x: x[:, 0], lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))]))
    if name == "x2":
        return ScalarField("x2", lambda x: x[:, 1], lambda x: np.column_stack([np.zeros(len(x)), np.ones(len(x))]))
    if name == "x1x2":
        return ScalarField("x1x2", lambda x: x[:, 0] * x[:, 1], lambda x: x[:, ::-1].copy())
    if name == "bump":
        c = np.asarray(center, dtype=float)
        R2 = radius ** 2

        def val(x):
            q = np.maximum(1.0 - ((x - c) ** 2).sum(axis=1) / R2, 0.0)
            return q ** 3

        def grad(x):
            q = np.maximum(1.0 - ((x - c) ** 2).sum(axis=1) / R2, 0.0)
            return (3 * q ** 2 * (-2.0 / R2))[:, None] * (x - c)

        return ScalarField(f"bump({c[0]:g},{c[1]:g},{radius:g})", val, grad, compact=True)
    raise IdentityError(f"unknown phi family member {name!r}")


def g_family(name: str, rho: float = 4.0) -> VectorField:
    """Vector fields: y, (y1^2, y2), and y times a C^2 cutoff of radius rho (bounded, compact)."""
    if name == "y":
        return VectorField("y", lambda y: y.copy(), lambda y: np.broadcast_to(np.eye(2), (len(y), 2, 2)).copy())
    if name == "quad":
        def jac(y):
            J = np.zeros((len(y), 2, 2))
            J[:, 0, 0] = 2 * y[:, 0]
            J[:, 1, 1] = 1.0
            return J
        return VectorField("quad", lambda y: np.column_stack([y[:, 0] ** 2, y[:, 1]]), jac)
    if name == "cutoff":
        R2 = rho ** 2

        def chi(y):
            return np.maximum(1.0 - (y ** 2).sum(axis=1) / R2, 0.0)

        def val(y):
            return (chi(y) ** 3)[:, None] * y

        def jac(y):
            q = chi(y)
            dchi3 = (3 * q ** 2 * (-2.0 / R2))[:, None] * y  # gradient of chi^3
            return (q ** 3)[:, None, None] * np.eye(2) + y[:, :, None] * dchi3[:, None, :]

        return VectorField(f"cutoff({rho:g})", val, jac)
    raise IdentityError(f"unknown g family member {name!r}")


def make_pair(phi: str, g: str, **kw) -> TestPair:
    return TestPair(phi_family(phi, **{k: v for k, v in kw.items() if k in ("center", "radius")}),
                    g_family(g, **{k: v for k, v in kw.items() if k == "rho"}))


@dataclass
class ResidualReport:
    h: float
    vol_adj: float
    vol_det: float
    surface: float
    nudged: int = 0
    dropped: int = 0

    @property
    def r_int(self) -> float:
        return self.vol_adj + self.vol_det

    @property
    def r_bdy(self) -> float:
        return self.vol_adj + self.vol_det - self.surface


def _prepare_nodes(deformation, quad: QuadratureRule, spacing: float) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Drop undefined nodes and split nodes sitting on a kink into two half-weight nodes."""
    x, w = quad.nodes, quad.weights
    undefined = ~deformation.defined(x)
    if undefined.mean() > UNDEFINED_FRACTION:
        raise IdentityError(f"{undefined.sum()} of {len(x)} quadrature nodes hit the singular set")
    x, w = x[~undefined], w[~undefined]
    eps = 1e-8 * _SPLIT_DIR
    a = np.where(deformation.defined(x - eps)[:, None], x - eps, x)
    b = np.where(deformation.defined(x + eps)[:, None], x + eps, x)
    near = deformation.singular(x) | (deformation.branch_signature(a) != deformation.branch_signature(b))
    if near.any():
        d = 0.25 * spacing * _SPLIT_DIR
        xs = np.vstack([x[~near], x[near] - d, x[near] + d])
        ws = np.concatenate([w[~near], 0.5 * w[near], 0.5 * w[near]])
        x, w = xs, ws
    return x, w, int(near.sum()), int(undefined.sum())


def volume_terms(deformation, pair: TestPair, quad: QuadratureRule, spacing: float) -> tuple[float, float, int, int]:
    x, w, nudged, dropped = _prepare_nodes(deformation, quad, spacing)
    F = deformation._grad(x)
    y = deformation._value(x)
    gy = pair.g.value(y)
    adj_term = np.einsum("nij,nj,ni->n", adjugate(F), gy, pair.phi.grad(x))
    det_term = np.linalg.det(F) * pair.phi.value(x) * pair.g.div(y)
    return float(w @ adj_term), float(w @ det_term), nudged, dropped


def tangential_derivative(deformation, dom: Domain2D, s: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """D^tau u at boundary parameters ``s`` by differencing the trace over (s - delta, s + delta).

    Returns the 2 x 1 matrices stacked as (N, 2, 1).  Endpoints where the map
    is undefined are moved inward by 1e-9 delta.
    """
    lo, hi = s - delta, s + delta
    for arr, sign in ((lo, 1.0), (hi, -1.0)):
        bad = ~deformation.defined(dom.point_at(arr))
        arr[bad] += sign * 1e-9 * delta[bad]
    ua = deformation._value(dom.point_at(lo))
    ub = deformation._value(dom.point_at(hi))
    return ((ub - ua) / (hi - lo)[:, None])[:, :, None]


def surface_term(deformation, dom: Domain2D, pair: TestPair, bquad: QuadratureRule) -> float:
    s = bquad.params
    # midpoint panels are differenced over the whole panel; Gauss nodes over a short centred step
    delta = 0.5 * bquad.spacing if bquad.order <= 2 else 1e-4 * bquad.spacing
    x = bquad.nodes
    phi = pair.phi.value(x)
    keep = phi != 0 if pair.phi.compact else np.ones(len(x), dtype=bool)
    if not keep.any():
        return 0.0
    F = tangential_derivative(deformation, dom, s[keep], delta[keep].copy())
    # frame [t, n] with n = (t_y, -t_x) has det -1
    cn = cof_normal_from_minors(minors_batch(F), 2, -1.0)
    xs = x[keep]
    ok = deformation.defined(xs)
    y = np.empty_like(xs)
    y[ok] = deformation._value(xs[ok])
    if (~ok).any():  # node itself undefined: use the mean of the two endpoint values
        y[~ok] = 0.5 * (deformation._value(dom.point_at(s[keep][~ok] - 0.5 * delta[keep][~ok]))
                        + deformation._value(dom.point_at(s[keep][~ok] + 0.5 * delta[keep][~ok])))
    vals = phi[keep] * np.einsum("ni,ni->n", pair.g.value(y), cn)
    return float(bquad.weights[keep] @ vals)


def residual_interior(deformation, dom: Domain2D, pair: TestPair, quad: QuadratureRule | None = None,
                      h: float = 1 / 64) -> float:
    """Interior residual; requires a compactly supported phi."""
    if not pair.phi.compact:
        raise IdentityError("the interior identity needs a compactly supported phi")
    quad = quad or interior_quadrature(dom, h)
    a, d, _, _ = volume_terms(deformation, pair, quad, h)
    return a + d


def residual_boundary(deformation, dom: Domain2D, pair: TestPair, h: float = 1 / 64,
                      quad_int: QuadratureRule | None = None, quad_bdy: QuadratureRule | None = None) -> ResidualReport:
    quad_int = quad_int or interior_quadrature(dom, h)
    quad_bdy = quad_bdy or boundary_quadrature(dom, 2, h)
    a, d, nudged, dropped = volume_terms(deformation, pair, quad_int, h)
    return ResidualReport(h, a, d, surface_term(deformation, dom, pair, quad_bdy), nudged, dropped)


@dataclass
class StudyRow:
    map: str
    phi: str
    g: str
    h: float
    r_int: float
    r_bdy: float
    surface: float
    vol_adj: float
    vol_det: float
    nudged: int


@dataclass
class RefinementStudy:
    rows: list[StudyRow] = field(default_factory=list)

    def series(self, pair_name: str, which: str = "r_bdy") -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if f"{r.phi}|{r.g}" == pair_name]
        return np.array([r.h for r in rows]), np.array([getattr(r, which) for r in rows])

    def pair_names(self) -> list[str]:
        seen = []
        for r in self.rows:
            k = f"{r.phi}|{r.g}"
            if k not in seen:
                seen.append(k)
        return seen

    def fitted_order(self, pair_name: str, which: str = "r_bdy") -> float | None:
        """Least-squares slope of log|R| against log h; None when all rows are machine zero."""
        h, r = self.series(pair_name, which)
        r = np.abs(r)
        ok = r > MACHINE_ZERO
        if ok.sum() < 2:
            return None
        return float(np.polyfit(np.log(h[ok]), np.log(r[ok]), 1)[0])

    def machine_zero(self, pair_name: str, which: str = "r_bdy") -> bool:
        return bool(np.all(np.abs(self.series(pair_name, which)[1]) <= MACHINE_ZERO))

    def csv_rows(self):
        yield ("map", "phi", "g", "h", "R_int", "R_bdy", "surface_term")
        for r in self.rows:
            yield (r.map, r.phi, r.g, repr(r.h), repr(r.r_int), repr(r.r_bdy), repr(r.surface))


def refinement_study(deformation, dom: Domain2D, pairs: Sequence[TestPair], h_list: Sequence[float],
                     threads: int = 1) -> RefinementStudy:
    if len(h_list) < 3:
        raise IdentityError("a refinement study needs at least three levels")
    tasks = [(p, h) for p in pairs for h in h_list]

    def run(task):
        p, h = task
        rep = residual_boundary(deformation, dom, p, h)
        return StudyRow(deformation.name, p.phi.name, p.g.name, float(h), rep.r_int, rep.r_bdy,
                        rep.surface, rep.vol_adj, rep.vol_det, rep.nudged)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(run, tasks))
    else:
        rows = [run(t) for t in tasks]
    return RefinementStudy(rows)
