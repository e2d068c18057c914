"""Planar reference domains, boundary charts, tangent frames and quadrature.

Boundaries are traversed counterclockwise and parametrized by arclength
``s`` in ``[0, perimeter)``.  With a counterclockwise unit tangent ``t`` the
outward normal is ``n = (t_y, -t_x)``.

Quadrature ``order`` is the convergence order of the composite rule: an
n-point Gauss rule per cell or panel has order 2n and integrates
polynomials of degree 2n - 1 exactly on flat pieces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CORNER_TOL = 1e-12


class GeometryError(ValueError):
    pass


class FrameUndefinedError(GeometryError):
    """The boundary has no tangent plane at the requested point (a corner)."""


@dataclass(frozen=True)
class TangentFrame:
    x: np.ndarray
    tangents: np.ndarray  # d x (d-1), orthonormal columns
    normal: np.ndarray

    @property
    def basis(self) -> np.ndarray:
        """Orthonormal basis [v_1 .. v_{d-1}, n] as columns."""
        return np.column_stack([self.tangents, self.normal])


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int
    kind: str = "interior"
    params: np.ndarray | None = None  # arclength parameters of boundary nodes
    tangents: np.ndarray | None = None
    normals: np.ndarray | None = None
    spacing: np.ndarray | None = None  # panel length owning each boundary node

    def integrate(self, values: np.ndarray) -> float:
        return float(np.asarray(values) @ self.weights) if np.ndim(values) == 1 else np.tensordot(self.weights, values, axes=(0, 0))

    def to_csv_rows(self):
        yield ("x", "y", "weight")
        for (x, y), w in zip(self.nodes, self.weights):
            yield (repr(float(x)), repr(float(y)), repr(float(w)))


@dataclass(frozen=True)
class BoundaryChart:
    """A bi-Lipschitz parametrization of a piece of the boundary.

    ``psi(t)`` maps the parameter interval into the plane; ``dpsi(t)`` is its
    derivative column.  ``s0`` is the arclength of ``psi(interval[0])`` so
    neighbouring charts can be matched on their overlap.
    """
    interval: tuple[float, float]
    psi: Callable[[np.ndarray], np.ndarray]
    dpsi: Callable[[np.ndarray], np.ndarray]
    s0: float
    speed: float
    label: str = ""

    def frame(self, t: float) -> TangentFrame:
        a, b = self.interval
        if not a < t < b:
            raise FrameUndefinedError(f"parameter {t} outside open chart interval ({a}, {b})")
        d = np.asarray(self.dpsi(np.array([t]))[0], dtype=float)
        v = d / np.linalg.norm(d)
        return TangentFrame(self.psi(np.array([t]))[0], v[:, None], np.array([v[1], -v[0]]))

    def arclength(self, t: np.ndarray) -> np.ndarray:
        return self.s0 + self.speed * (np.asarray(t) - self.interval[0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15 and \
            min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    return any(
        o == 0 and on_seg(a, b, c)
        for o, a, b, c in ((o1, p1, p2, q1), (o2, p1, p2, q2), (o3, q1, q2, p1), (o4, q1, q2, p2))
    )


class Domain2D:
    """A bounded planar domain whose boundary is one closed simple curve.

    Use :func:`make_domain` rather than the constructor.
    """

    def __init__(self, kind: str, vertices: np.ndarray | None = None,
                 center: Sequence[float] = (0.0, 0.0), radius: float = 1.0,
                 rect: tuple[float, float, float, float] | None = None):
        self.kind = kind
        self.rect = rect
        if kind == "disk":
            if radius <= 0:
                raise GeometryError("disk radius must be positive")
            self.center = np.asarray(center, dtype=float)
            self.radius = float(radius)
            self.vertices = None
            self.perimeter = 2 * math.pi * self.radius
            self.area = math.pi * self.radius ** 2
            self.corners = np.zeros(0)
            c, r = self.center, self.radius
            self.bbox = (c[0] - r, c[0] + r, c[1] - r, c[1] + r)
            return
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2 or len(V) < 3:
            raise GeometryError("a polygon needs at least three 2-D vertices")
        if np.allclose(V[0], V[-1]):
            V = V[:-1]
        signed = 0.5 * np.sum(V[:, 0] * np.roll(V[:, 1], -1) - np.roll(V[:, 0], -1) * V[:, 1])
        if abs(signed) < 1e-14:
            raise GeometryError("degenerate polygon (zero area)")
        if signed < 0:
            V = V[::-1].copy()
        n = len(V)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(V[i], V[(i + 1) % n], V[j], V[(j + 1) % n]):
                    raise GeometryError(f"self-intersecting polygon: edges {i} and {j} cross")
        self.vertices = V
        self.kind = kind
        edges = np.roll(V, -1, axis=0) - V
        self.edge_lengths = np.linalg.norm(edges, axis=1)
        if np.any(self.edge_lengths < 1e-14):
            raise GeometryError("polygon has a zero-length edge")
        self.edge_tangents = edges / self.edge_lengths[:, None]
        self.corners = np.concatenate([[0.0], np.cumsum(self.edge_lengths)[:-1]])
        self.perimeter = float(self.edge_lengths.sum())
        self.area = float(abs(signed))
        self.bbox = (V[:, 0].min(), V[:, 0].max(), V[:, 1].min(), V[:, 1].max())

    def __repr__(self) -> str:
        if self.kind == "disk":
            return f"Domain2D(disk, center={self.center.tolist()}, radius={self.radius})"
        return f"Domain2D({self.kind}, {len(self.vertices)} vertices)"

    # -- boundary ---------------------------------------------------------

    def point_at(self, s: np.ndarray) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        if self.kind == "disk":
            th = s / self.radius
            return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
        k = np.clip(np.searchsorted(self.corners, s, side="right") - 1, 0, len(self.corners) - 1)
        local = s - self.corners[k]
        return self.vertices[k] + local[..., None] * self.edge_tangents[k]

    def tangent_at(self, s: np.ndarray) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        if self.kind == "disk":
            th = s / self.radius
            return np.stack([-np.sin(th), np.cos(th)], axis=-1)
        k = np.clip(np.searchsorted(self.corners, s, side="right") - 1, 0, len(self.corners) - 1)
        return self.edge_tangents[k]

    def is_corner(self, s: float) -> bool:
        if self.kind == "disk":
            return False
        s = float(np.mod(s, self.perimeter))
        gap = np.abs(self.corners - s)
        gap = np.minimum(gap, self.perimeter - gap)
        return bool(gap.min() <= CORNER_TOL * max(1.0, self.perimeter))

    def boundary_polyline(self, n: int) -> np.ndarray:
        """``n`` boundary points at equal arclength spacing, corners included, closed."""
        s = np.linspace(0.0, self.perimeter, n, endpoint=False)
        if self.kind != "disk":
            s = np.union1d(s, self.corners)
        pts = self.point_at(s)
        return np.vstack([pts, pts[:1]])

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "disk":
            return np.sum((pts - self.center) ** 2, axis=1) < self.radius ** 2
        x, y = pts[:, 0], pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        V = self.vertices
        for a, b in zip(V, np.roll(V, -1, axis=0)):
            if a[1] == b[1]:
                continue
            crosses = (a[1] > y) != (b[1] > y)
            xint = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= crosses & (x < xint)
        return inside

    # -- charts -----------------------------------------------------------

    def charts(self) -> list[BoundaryChart]:
        """Charts covering the boundary: one per polygon edge, four overlapping arcs on a disk."""
        out = []
        if self.kind == "disk":
            c, r = self.center, self.radius
            half = 0.3 * math.pi  # each arc spans 0.6*pi, neighbours overlap by 0.1*pi
            for q in range(4):
                mid = q * math.pi / 2
                a, b = mid - half, mid + half
                out.append(BoundaryChart(
                    (a, b),
                    lambda t, c=c, r=r: c + r * np.stack([np.cos(t), np.sin(t)], axis=-1),
                    lambda t, r=r: r * np.stack([-np.sin(t), np.cos(t)], axis=-1),
                    s0=float(np.mod(a * r, self.perimeter)), speed=r, label=f"arc{q}"))
            return out
        for i, (v, t, L) in enumerate(zip(self.vertices, self.edge_tangents, self.edge_lengths)):
            out.append(BoundaryChart(
                (0.0, float(L)),
                lambda u, v=v, t=t: v + np.asarray(u)[..., None] * t,
                lambda u, t=t: np.broadcast_to(t, np.shape(u) + (2,)),
                s0=float(self.corners[i]), speed=1.0, label=f"edge{i}"))
        return out


def make_domain(shape: str, params: Sequence[float] | None = None) -> Domain2D:
    """Build a domain from a named shape.

    ``rectangle`` takes (a, b, c, d) for (a, b) x (c, d); ``unit-disk`` takes
    nothing; ``disk`` takes (cx, cy, r); ``polygon`` takes a flat or nested
    vertex list.
    """
    shape = shape.strip().lower()
    params = [] if params is None else params
    if shape == "rectangle":
        a, b, c, d = (float(p) for p in params)
        if not (a < b and c < d):
            raise GeometryError(f"rectangle needs a < b and c < d, got {(a, b, c, d)}")
        return Domain2D("polygon", np.array([[a, c], [b, c], [b, d], [a, d]]), rect=(a, b, c, d))
    if shape == "unit-square":
        return make_domain("rectangle", (0, 1, 0, 1))
    if shape == "unit-disk":
        return Domain2D("disk")
    if shape == "disk":
        cx, cy, r = (float(p) for p in params)
        return Domain2D("disk", center=(cx, cy), radius=r)
    if shape == "polygon":
        V = np.asarray(params, dtype=float).reshape(-1, 2)
        return Domain2D("polygon", V)
    raise GeometryError(f"unknown domain shape {shape!r}")


def frame_at(dom: Domain2D, s: float) -> TangentFrame:
    if dom.is_corner(s):
        raise FrameUndefinedError(f"frame undefined at corner parameter s={s}")
    t = dom.tangent_at(np.array([s]))[0]
    return TangentFrame(dom.point_at(np.array([s]))[0], t[:, None], np.array([t[1], -t[0]]))


# -- quadrature -------------------------------------------------------------

def gauss_points(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on (0, 1) for the given convergence order."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(max(1, math.ceil(order / 2)))
    return 0.5 * (x + 1.0), 0.5 * w


def boundary_quadrature(dom: Domain2D, order: int = 2, h: float | None = None) -> QuadratureRule:
    """Composite Gauss rule on boundary panels of length <= h (one panel per edge by default)."""
    gx, gw = gauss_points(order)
    params, weights, spacing = [], [], []
    if dom.kind == "disk":
        npan = max(4, math.ceil(dom.perimeter / h)) if h else max(8, order)
        edges = [(0.0, dom.perimeter, npan)]
    else:
        edges = [(s0, L, max(1, math.ceil(L / h - 1e-9)) if h else 1)
                 for s0, L in zip(dom.corners, dom.edge_lengths)]
    for s0, L, npan in edges:
        width = L / npan
        starts = s0 + width * np.arange(npan)
        params.append((starts[:, None] + width * gx[None, :]).ravel())
        weights.append(np.tile(width * gw, npan))
        spacing.append(np.full(npan * len(gx), width))
    s = np.concatenate(params)
    t = dom.tangent_at(s)
    return QuadratureRule(dom.point_at(s), np.concatenate(weights), order, "boundary", s,
                          t, np.column_stack([t[:, 1], -t[:, 0]]), np.concatenate(spacing))


def _ear_clip(V: np.ndarray) -> list[tuple[int, int, int]]:
    idx = list(range(len(V)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(V) ** 2:
            raise GeometryError("ear clipping failed; polygon may be degenerate")
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = V[i0], V[i1], V[i2]
            if cross(a, b, c) <= 0:
                continue
            others = [V[j] for j in idx if j not in (i0, i1, i2)]
            if any(cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0 for p in others):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
    tris.append(tuple(idx))
    return tris


def _triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed (Duffy) Gauss rule on the reference triangle, barycentric-free."""
    gx, gw = gauss_points(order + 1)
    u, v = np.meshgrid(gx, gx, indexing="ij")
    wu, wv = np.meshgrid(gw, gw, indexing="ij")
    xi = u.ravel()
    eta = (v * (1 - u)).ravel()
    w = (wu * wv * (1 - u)).ravel()
    return np.column_stack([xi, eta]), w


def interior_quadrature(dom: Domain2D, h: float, order: int = 2) -> QuadratureRule:
    """Composite interior rule on cells of diameter scale <= h."""
    if h <= 0:
        raise ValueError("h must be positive")
    gx, gw = gauss_points(order)
    if dom.rect is not None:
        a, b, c, d = dom.rect
        nx = max(1, math.ceil((b - a) / h - 1e-9))
        ny = max(1, math.ceil((d - c) / h - 1e-9))
        hx, hy = (b - a) / nx, (d - c) / ny
        xs = (a + hx * (np.arange(nx)[:, None] + gx[None, :])).ravel()
        ys = (c + hy * (np.arange(ny)[:, None] + gx[None, :])).ravel()
        wx = np.tile(hx * gw, nx)
        wy = np.tile(hy * gw, ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        W = np.outer(wx, wy)
        return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel(), order)
    if dom.kind == "disk":
        nr = max(1, math.ceil(dom.radius / h - 1e-9))
        nth = max(8, math.ceil(dom.perimeter / h))
        dr = dom.radius / nr
        r = (dr * (np.arange(nr)[:, None] + gx[None, :])).ravel()
        wr = np.tile(dr * gw, nr) * r
        th = 2 * math.pi * (np.arange(nth) + 0.5) / nth
        R, T = np.meshgrid(r, th, indexing="ij")
        W = np.outer(wr, np.full(nth, 2 * math.pi / nth))
        nodes = dom.center + np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
        return QuadratureRule(nodes, W.ravel(), order)
    ref, rw = _triangle_rule(order)
    nodes, weights = [], []
    V = dom.vertices
    for i0, i1, i2 in _ear_clip(V):
        A, B, C = V[i0], V[i1], V[i2]
        k = max(1, math.ceil(max(np.linalg.norm(B - A), np.linalg.norm(C - B), np.linalg.norm(A - C)) / h - 1e-9))
        e1, e2 = (B - A) / k, (C - A) / k
        area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
        for p in range(k):
            for q in range(k - p):
                # upright sub-triangle
                o = A + p * e1 + q * e2
                nodes.append(o + ref[:, :1] * e1 + ref[:, 1:] * e2)
                weights.append(rw * area2)
                if p + q < k - 1:
                    # inverted sub-triangle
                    o2 = A + (p + 1) * e1 + (q + 1) * e2
                    nodes.append(o2 - ref[:, :1] * e1 - ref[:, 1:] * e2)
                    weights.append(rw * area2)
    return QuadratureRule(np.vstack(nodes), np.concatenate(weights), order)


def sample_uniform(dom: Domain2D, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points drawn uniformly from the domain by rejection from its bounding box."""
    x0, x1, y0, y1 = dom.bbox
    if dom.rect is not None:
        return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    out, have = [], 0
    ratio = dom.area / ((x1 - x0) * (y1 - y0))
    while have < n:
        m = int((n - have) / ratio * 1.1) + 16
        pts = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m)])
        pts = pts[dom.contains(pts)]
        out.append(pts)
        have += len(pts)
    return np.vstack(out)[:n]


# -- chart-level weak continuity of minors ---------------------------------

def _bump(s: np.ndarray, r: float) -> np.ndarray:
    """Smooth bump supported in (0, r), equal to exp(1 - 1/(1 - z^2)) with z centred."""
    z = (2 * s - r) / r
    out = np.zeros_like(s)
    m = np.abs(z) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - z[m] ** 2))
    return out


def _bump_grad(s: np.ndarray, r: float) -> np.ndarray:
    z = (2 * s - r) / r
    out = np.zeros_like(s)
    m = np.abs(z) < 1
    zm = z[m]
    out[m] = np.exp(1.0 - 1.0 / (1.0 - zm ** 2)) * (-2 * zm / (1 - zm ** 2) ** 2) * (2 / r)
    return out


@dataclass
class ChartDemoRow:
    n: int
    gap_order1: float
    gap_order2: float


@dataclass
class ChartDemoResult:
    rows: list[ChartDemoRow] = field(default_factory=list)

    @property
    def gaps1(self) -> np.ndarray:
        return np.array([r.gap_order1 for r in self.rows])

    @property
    def gaps2(self) -> np.ndarray:
        return np.array([r.gap_order2 for r in self.rows])


def chart_minor_convergence_demo(
    u_grad: Callable[[np.ndarray], np.ndarray] | None = None,
    frequencies: Sequence[int] = (4, 8, 16, 32),
    amplitude: float = 1.0,
    r: float = 1.0,
    test_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    order: int = 8,
) -> ChartDemoResult:
    """Gaps between integrated minors of oscillating maps and of their limit.

    The chart is the flat square (0, r)^2 inside R^3, x = (s, t, 0), with
    tangent basis (e_1, e_2).  The sequence is
    ``u_n = u + n^-1 * amplitude * phi(n x) psi(x)`` with a periodic profile
    ``phi`` and a smooth bump ``psi`` supported in the chart.  ``u_grad``
    returns the 3 x 3 gradient of u at points of shape (N, 3); ``test_fn``
    returns the weight vector eta (N, 9) paired with the minor vector of the
    3 x 2 tangential derivative.
    """
    from .multilinear import minor_labels, minors_batch

    if u_grad is None:
        def u_grad(x):
            F = np.zeros((len(x), 3, 3))
            F[:, 0, 0] = 1 + 0.3 * x[:, 1]
            F[:, 0, 1] = 0.3 * x[:, 0]
            F[:, 1, 1] = 1.0
            F[:, 2, 0] = 0.5 * np.cos(x[:, 0])
            F[:, 2, 2] = 1.0
            return F
    if test_fn is None:
        def test_fn(x):
            s, t = x[:, 0], x[:, 1]
            base = np.column_stack([np.ones_like(s), s, t, s * t, 1 + s ** 2, np.cos(t), 1 + t, s - t, 2 - s * t])
            return base

    labels = minor_labels(3, 2)
    order1 = np.array([len(rw) == 1 for rw, _ in labels])
    out = ChartDemoResult()
    for n in frequencies:
        # resolve the oscillation: at least 4 panels per period, Gauss per panel
        panels = max(16, 4 * int(math.ceil(n * r / (2 * math.pi))) * 4)
        gx, gw = gauss_points(order)
        hpan = r / panels
        s1 = (hpan * (np.arange(panels)[:, None] + gx[None, :])).ravel()
        w1 = np.tile(hpan * gw, panels)
        S, T = np.meshgrid(s1, s1, indexing="ij")
        W = np.outer(w1, w1).ravel()
        x = np.column_stack([S.ravel(), T.ravel(), np.zeros(S.size)])
        Fu = u_grad(x)[:, :, :2]
        # D(phi(n x) psi(x)) / n restricted to the chart, phi(z) = (sin z1, sin z2, sin(z1 + z2))
        z1, z2 = n * x[:, 0], n * x[:, 1]
        phi = np.column_stack([np.sin(z1), np.sin(z2), np.sin(z1 + z2)])
        dphi = np.zeros((len(x), 3, 2))
        dphi[:, 0, 0] = np.cos(z1)
        dphi[:, 1, 1] = np.cos(z2)
        dphi[:, 2, 0] = np.cos(z1 + z2)
        dphi[:, 2, 1] = np.cos(z1 + z2)
        psi = _bump(x[:, 0], r) * _bump(x[:, 1], r)
        dpsi = np.column_stack([_bump_grad(x[:, 0], r) * _bump(x[:, 1], r),
                                _bump(x[:, 0], r) * _bump_grad(x[:, 1], r)])
        pert = dphi * psi[:, None, None] + phi[:, :, None] * dpsi[:, None, :] / n
        Fn = Fu + amplitude * pert
        eta = test_fn(x)
        diff = np.einsum("qi,qi->qi", eta, minors_batch(Fn) - minors_batch(Fu))
        integ = W @ diff
        out.rows.append(ChartDemoRow(int(n), float(abs(integ[order1].sum())), float(abs(integ[~order1].sum()))))
    return out
