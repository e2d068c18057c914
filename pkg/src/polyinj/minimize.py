"""P1 minimization of bulk plus boundary energy under three admissible classes.

The discrete functional is

    E(u) = sum_T |T| W(Du_T) + sum_edges |e| U(x_e, y_e, (u_b - u_a) / |e|, frame_e)

with y_e the mean of the two end values.  Classes:

* ``a1``: values fixed on a set of boundary vertices,
* ``a2``: zero boundary mean (trapezoidal weights),
* ``a3``: every vertex inside a box or disk K.

The optimizer is projected gradient descent with a Barzilai-Borwein trial
step, Armijo backtracking and a determinant safeguard.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .energy import BulkDensity, EnergyBreakdown, InfeasibleStateError, SurfaceDensity
from .geometry import Domain2D, GeometryError

DELTA_DET = 1e-8
ARMIJO = 1e-4
MIN_STEP = 1e-14
QUALITY_MIN = 0.2
TRI_CHUNK = 8192
SMOOTH_SWEEPS = 60
QUALITY_PASSES = 8


# -- mesh ------------------------------------------------------------------------------

@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 2)
    tris: np.ndarray  # (T, 3), counterclockwise
    boundary: np.ndarray  # (B,) vertex ids in counterclockwise order
    boundary_params: np.ndarray  # (B,) arclength of each boundary vertex
    grads: np.ndarray = field(init=False, repr=False)  # (T, 3, 2) barycentric gradients
    areas: np.ndarray = field(init=False, repr=False)
    corner: np.ndarray | None = None  # (B,) flags

    def __post_init__(self):
        P = self.vertices[self.tris]
        e1 = P[:, 1] - P[:, 0]
        e2 = P[:, 2] - P[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            raise GeometryError("mesh has non-positive triangle areas")
        self.areas = 0.5 * det
        # gradients of the barycentric coordinates
        g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
        self.grads = np.stack([-g1 - g2, g1, g2], axis=1)
        b = self.boundary
        self.edges = np.column_stack([b, np.roll(b, -1)])
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        self.edge_lengths = np.linalg.norm(d, axis=1)
        self.edge_tangents = d / self.edge_lengths[:, None]
        self.edge_normals = np.column_stack([self.edge_tangents[:, 1], -self.edge_tangents[:, 0]])
        self.edge_midpoints = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        # trapezoidal boundary weights per boundary vertex
        self.boundary_weights = 0.5 * (self.edge_lengths + np.roll(self.edge_lengths, 1))
        if self.corner is None:
            prev = np.roll(self.edge_tangents, 1, axis=0)
            turn = np.abs(prev[:, 0] * self.edge_tangents[:, 1] - prev[:, 1] * self.edge_tangents[:, 0])
            self.corner = turn > 1e-12
        # average-edge frames at boundary vertices (corners flagged)
        t = self.edge_tangents + np.roll(self.edge_tangents, 1, axis=0)
        t /= np.linalg.norm(t, axis=1)[:, None]
        self.vertex_tangents = t
        self.vertex_normals = np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def diameters(self) -> np.ndarray:
        P = self.vertices[self.tris]
        return np.stack([np.linalg.norm(P[:, i] - P[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))], 1).max(1)

    def quality(self) -> np.ndarray:
        """Inradius over diameter per triangle."""
        P = self.vertices[self.tris]
        L = np.stack([np.linalg.norm(P[:, i] - P[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))], 1)
        return (self.areas / (0.5 * L.sum(axis=1))) / L.max(axis=1)

    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)


def _rectangle_mesh(dom: Domain2D, h: float) -> Mesh:
    a, b, c, d = dom.rect
    s = h / math.sqrt(2)
    nx = max(1, math.ceil((b - a) / s - 1e-9))
    ny = max(1, math.ceil((d - c) / s - 1e-9))
    xs = np.linspace(a, b, nx + 1)
    ys = np.linspace(c, d, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    V = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]
    bnd = ([vid(i, 0) for i in range(nx)] + [vid(nx, j) for j in range(ny)]
           + [vid(i, ny) for i in range(nx, 0, -1)] + [vid(0, j) for j in range(ny, 0, -1)])
    bnd = np.array(bnd)
    params = _arclength_params(dom, V[bnd])
    return Mesh(V, np.array(tris), bnd, params)


def _arclength_params(dom: Domain2D, pts: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts))
    for k, p in enumerate(pts):
        best, bs = np.inf, 0.0
        for s0, v, t, L in zip(dom.corners, dom.vertices, dom.edge_tangents, dom.edge_lengths):
            u = np.clip((p - v) @ t, 0, L)
            dist = np.linalg.norm(v + u * t - p)
            if dist < best - 1e-14:
                best, bs = dist, s0 + u
        out[k] = bs
    return out


def _delaunay_inside(V: np.ndarray, dom: Domain2D) -> np.ndarray:
    from scipy.spatial import Delaunay

    tri = Delaunay(V).simplices
    tri = tri[dom.contains(V[tri].mean(axis=1))]
    P = V[tri]
    det = (P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (P[:, 1, 1] - P[:, 0, 1]) * (P[:, 2, 0] - P[:, 0, 0])
    tri = tri[np.abs(det) > 1e-14]
    det = det[np.abs(det) > 1e-14]
    tri[det < 0] = tri[det < 0][:, [0, 2, 1]]
    return tri


def _tri_quality(P: np.ndarray) -> np.ndarray:
    e = [np.linalg.norm(P[..., i, :] - P[..., j, :], axis=-1) for i, j in ((0, 1), (1, 2), (2, 0))]
    d1, d2 = P[..., 1, :] - P[..., 0, :], P[..., 2, :] - P[..., 0, :]
    area = 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])
    return area / (0.5 * (e[0] + e[1] + e[2])) / np.maximum(np.maximum(e[0], e[1]), e[2])


def _improve_quality(V: np.ndarray, tri: np.ndarray, nb: int, dom: Domain2D, target: float = 0.21) -> None:
    """Move interior vertices of poor triangles to maximize the worst quality of their star (in place)."""
    from scipy.optimize import minimize as nm

    star = [[] for _ in range(len(V))]
    for t, row in enumerate(tri):
        for v in row:
            star[v].append(t)
    for _ in range(QUALITY_PASSES):
        q = _tri_quality(V[tri])
        bad = np.unique(tri[q < target])
        bad = bad[bad >= nb]
        if len(bad) == 0:
            return
        for v in bad:
            ts = tri[star[v]]

            def cost(x, v=v, ts=ts):
                P = V[ts].copy()
                P[ts == v] = x
                return -_tri_quality(P).min()

            res = nm(cost, V[v], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 200})
            if res.fun < cost(V[v]) and dom.contains(res.x[None])[0]:
                V[v] = res.x


def _polygon_mesh(dom: Domain2D, h: float) -> Mesh:
    s = 0.6 * h
    bpts = []
    for v, t, L in zip(dom.vertices, dom.edge_tangents, dom.edge_lengths):
        n = max(1, math.ceil(L / s - 1e-9))
        bpts.append(v + np.outer(np.arange(n) * (L / n), t))
    B = np.vstack(bpts)
    x0, x1, y0, y1 = dom.bbox
    gx = np.arange(x0 + s / 2, x1, s)
    gy = np.arange(y0 + s * math.sqrt(3) / 4, y1, s * math.sqrt(3) / 2)
    pts = []
    for j, y in enumerate(gy):
        off = 0.5 * s if j % 2 else 0.0
        pts.append(np.column_stack([gx + off, np.full(len(gx), y)]))
    I = np.vstack(pts)
    I = I[dom.contains(I)]
    # keep interior lattice points away from the boundary
    from ._fallback import polyline_distance
    closed = np.vstack([dom.vertices, dom.vertices[:1]])
    I = I[polyline_distance(closed, I) > 0.45 * s]
    nb = len(B)
    V = np.vstack([B, I])
    # spring relaxation of the interior points with fixed boundary points
    for sweep in range(SMOOTH_SWEEPS):
        if sweep % 5 == 0:
            tri = _delaunay_inside(V, dom)
            bars = np.unique(np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1), axis=0)
        vec = V[bars[:, 0]] - V[bars[:, 1]]
        L = np.linalg.norm(vec, axis=1)
        L0 = 1.2 * s * math.sqrt(np.sum(L**2) / np.sum(np.full_like(L, s) ** 2))
        force = np.maximum(L0 - L, 0.0)[:, None] * vec / L[:, None]
        move = np.zeros_like(V)
        np.add.at(move, bars[:, 0], force)
        np.add.at(move, bars[:, 1], -force)
        trial = V[nb:] + 0.2 * move[nb:]
        ok = dom.contains(trial) & (polyline_distance(closed, trial) > 0.3 * s)
        V[nb:][ok] = trial[ok]
    tri = _delaunay_inside(V, dom)
    _improve_quality(V, tri, nb, dom)
    mesh = Mesh(V, tri, np.arange(nb), _arclength_params(dom, B))
    if abs(mesh.areas.sum() - dom.area) > 1e-10 * max(1.0, dom.area):
        raise GeometryError("triangulation does not cover the polygon; refine h")
    return mesh


def triangulate(dom: Domain2D, h: float) -> Mesh:
    if h <= 0:
        raise ValueError("mesh size h must be positive")
    if dom.kind == "disk":
        raise GeometryError("triangulation of curved domains is not supported; use a polygon")
    mesh = _rectangle_mesh(dom, h) if dom.rect is not None else _polygon_mesh(dom, h)
    q = mesh.quality()
    if q.min() < QUALITY_MIN - 1e-12:
        raise GeometryError(f"mesh quality {q.min():.3f} below {QUALITY_MIN}")
    if mesh.diameters().max() > h * (1 + 1e-12):
        raise GeometryError("mesh diameter exceeds h")
    return mesh


# -- constraints ---------------------------------------------------------------------------

@dataclass
class Constraint:
    kind: str  # "a1" | "a2" | "a3"
    gamma: np.ndarray | None = None  # a1: fixed vertex ids
    values: np.ndarray | None = None  # a1: prescribed positions
    K: tuple | None = None  # a3: ("box", lo, hi) or ("disk", center, radius)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("a1", "a2", "a3"):
            raise ValueError(f"unknown admissible class {self.kind!r}")
        if self.kind == "a1" and (self.gamma is None or len(self.gamma) == 0):
            raise ValueError("class a1 needs a non-empty set of fixed boundary vertices")
        if self.kind == "a3":
            if self.K is None or self.K[0] not in ("box", "disk"):
                raise ValueError("class a3 needs K = ('box', lo, hi) or ('disk', center, radius)")


def project_K(u: np.ndarray, K: tuple) -> np.ndarray:
    if K[0] == "box":
        return np.clip(u, np.asarray(K[1], dtype=float), np.asarray(K[2], dtype=float))
    c, r = np.asarray(K[1], dtype=float), float(K[2])
    d = u - c
    n = np.linalg.norm(d, axis=1)
    scale = np.where(n > r, r / np.where(n > 0, n, 1.0), 1.0)
    return c + d * scale[:, None]


def project_constraint(u: np.ndarray, mesh: Mesh, con: Constraint) -> np.ndarray:
    u = np.array(u, dtype=float)
    if con.kind == "a1":
        u[con.gamma] = con.values
    elif con.kind == "a2":
        w = mesh.boundary_weights
        u -= (w @ u[mesh.boundary]) / w.sum()
    else:
        u = project_K(u, con.K)
    return u


def constraint_residual(u: np.ndarray, mesh: Mesh, con: Constraint) -> float:
    if con.kind == "a1":
        return float(np.abs(u[con.gamma] - con.values).max())
    if con.kind == "a2":
        w = mesh.boundary_weights
        return float(np.abs(w @ u[mesh.boundary]).max() / w.sum())
    return float(np.abs(project_K(u, con.K) - u).max())


def _tangent_project(g: np.ndarray, u: np.ndarray, mesh: Mesh, con: Constraint) -> np.ndarray:
    """Projected gradient: the stationarity measure of each class."""
    if con.kind == "a1":
        g = g.copy()
        g[con.gamma] = 0.0
        return g
    if con.kind == "a2":
        wt = np.zeros(mesh.n_vertices)
        wt[mesh.boundary] = mesh.boundary_weights
        return g - np.outer(wt, wt @ g) / (wt @ wt)
    return u - project_K(u - g, con.K)


# -- discrete deformation -------------------------------------------------------------------

@dataclass
class DiscreteDeformation:
    mesh: Mesh
    u: np.ndarray
    constraint: Constraint | None = None
    name: str = "discrete"

    def gradients(self) -> np.ndarray:
        return np.einsum("tki,tkj->tij", self.u[self.mesh.tris], self.mesh.grads)

    def dets(self) -> np.ndarray:
        F = self.gradients()
        return F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]

    def volume(self) -> float:
        """Integral of det Du_h."""
        return float(self.mesh.areas @ self.dets())

    def reference_mass(self) -> float:
        return float(self.mesh.areas @ np.abs(self.dets()))

    def boundary_trace(self):
        from .degree import BoundaryTrace
        b = self.mesh.boundary
        return BoundaryTrace(self.u[b], self.mesh.boundary_params)

    def draw_samples(self, n: int, rng: np.random.Generator):
        from .degree import Samples
        m = self.mesh
        t = rng.choice(len(m.tris), size=n, p=m.areas / m.areas.sum())
        r1, r2 = rng.uniform(size=n), rng.uniform(size=n)
        flip = r1 + r2 > 1
        r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
        U = self.u[m.tris[t]]
        y = U[:, 0] + r1[:, None] * (U[:, 1] - U[:, 0]) + r2[:, None] * (U[:, 2] - U[:, 0])
        d = self.dets()[t]
        return Samples(y, np.abs(d), d, 0, n, float(m.areas.sum()))

    def energy_breakdown(self, W: BulkDensity, U: SurfaceDensity) -> EnergyBreakdown:
        bulk, surf, _ = _energy_parts(self.u, self.mesh, W, U, need_grad=False)
        return EnergyBreakdown(bulk, surf, len(self.mesh.tris), len(self.mesh.edges))


def _bulk(u, mesh: Mesh, W: BulkDensity, threads: int = 1):
    def work(lo):
        hi = min(lo + TRI_CHUNK, len(mesh.tris))
        return kernels.assemble_standard_p1(u, mesh.tris[lo:hi], mesh.grads[lo:hi], mesh.areas[lo:hi],
                                            W.c1, W.p, W.a, W.b, W.hkind)

    starts = range(0, len(mesh.tris), TRI_CHUNK)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    energy = 0.0
    grad = np.zeros_like(u)
    for e, g, _ in parts:  # fixed reduction order
        energy += e
        grad += g
    dets = np.concatenate([p[2] for p in parts])
    return energy, grad, dets


def _surface(u, mesh: Mesh, U: SurfaceDensity, need_grad: bool = True):
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    L = mesh.edge_lengths
    F = ((u[b] - u[a]) / L[:, None])[:, :, None]
    y = 0.5 * (u[a] + u[b])
    basis = np.stack([mesh.edge_tangents, mesh.edge_normals], axis=2)
    x = mesh.edge_midpoints
    vals = U.value(x, y, F, basis)
    energy = float(L @ vals)
    if not need_grad:
        return energy, None
    orient = -np.ones(len(L))
    gF = U.grad_F(x, y, F, orient)[:, :, 0]
    gy = U.grad_y(x, y, F, orient)
    grad = np.zeros_like(u)
    np.add.at(grad, b, gF + 0.5 * L[:, None] * gy)
    np.add.at(grad, a, -gF + 0.5 * L[:, None] * gy)
    return energy, grad


def _energy_parts(u, mesh, W, U, need_grad=True, threads=1):
    eb, gb, dets = _bulk(u, mesh, W, threads)
    if not np.isfinite(eb):
        bad = np.flatnonzero(dets <= 0)
        raise InfeasibleStateError(f"{len(bad)} triangle(s) with det <= 0", bad)
    es, gs = _surface(u, mesh, U, need_grad)
    return eb, es, (gb + gs if need_grad else None)


def assemble_energy_and_gradient(uh: DiscreteDeformation, W: BulkDensity, U: SurfaceDensity | None = None,
                                 threads: int = 1) -> tuple[float, np.ndarray]:
    U = U or SurfaceDensity()
    eb, es, g = _energy_parts(uh.u, uh.mesh, W, U, True, threads)
    return eb + es, g


# -- solver ------------------------------------------------------------------------------------

@dataclass
class TraceRow:
    iter: int
    energy: float
    grad_norm: float
    min_det: float
    step: float
    residual: float
    volume: float


@dataclass
class SolveTrace:
    rows: list[TraceRow] = field(default_factory=list)
    converged: bool = False
    line_search_failed: bool = False
    diverged: bool = False
    message: str = ""

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.rows])

    def csv_rows(self):
        yield ("iter", "energy", "grad_norm", "min_det")
        for r in self.rows:
            yield (str(r.iter), repr(r.energy), repr(r.grad_norm), repr(r.min_det))


@dataclass
class SolveOptions:
    max_iter: int = 500
    tol: float = 1e-6
    delta_det: float = DELTA_DET
    armijo: float = ARMIJO
    threads: int = 1
    diverge_energy: float = -1e12
    callback: Callable | None = None


def boundary_selection(mesh: Mesh, dom: Domain2D, gamma: str | Sequence[int] = "all") -> np.ndarray:
    """Vertex ids of the boundary part Gamma: 'all' or a list of polygon edge indices."""
    if isinstance(gamma, str):
        if gamma.strip().lower() == "all":
            return mesh.boundary.copy()
        gamma = [int(g) for g in gamma.replace(",", " ").split()]
    s = mesh.boundary_params
    keep = np.zeros(len(s), dtype=bool)
    for e in gamma:
        s0 = dom.corners[e]
        s1 = s0 + dom.edge_lengths[e]
        keep |= (s >= s0 - 1e-12) & (s <= s1 + 1e-12)
        if e == len(dom.corners) - 1:
            keep |= np.abs(s) <= 1e-12
    if not keep.any():
        raise ValueError("selected boundary part Gamma contains no mesh vertex")
    return mesh.boundary[keep]


def ray_blend(mesh: Mesh, boundary_values: np.ndarray) -> np.ndarray:
    """Interpolate boundary data inwards along rays from the vertex centroid."""
    V = mesh.vertices
    b = mesh.boundary
    c = V.mean(axis=0)
    ub = boundary_values
    uc = ub.mean(axis=0)
    out = np.empty_like(V)
    out[b] = ub
    Pb = V[b]
    ang_b = np.arctan2(Pb[:, 1] - c[1], Pb[:, 0] - c[0])
    order = np.argsort(ang_b)
    ang_s = ang_b[order]
    for v in mesh.interior_vertices():
        d = V[v] - c
        th = math.atan2(d[1], d[0])
        k = np.searchsorted(ang_s, th) % len(ang_s)
        i0, i1 = order[k - 1], order[k]
        # intersect the ray with boundary segment Pb[i0] -> Pb[i1]
        A = np.column_stack([d, Pb[i0] - Pb[i1]])
        try:
            rho_inv, lam = np.linalg.solve(A, Pb[i0] - c)
        except np.linalg.LinAlgError:
            rho_inv, lam = 1.0, 0.0
        rho = 1.0 / rho_inv if rho_inv > 0 else 0.0
        lam = min(max(lam, 0.0), 1.0)
        target = (1 - lam) * ub[i0] + lam * ub[i1]
        out[v] = uc + rho * (target - uc)
    return out


def initial_guess(mesh: Mesh, con: Constraint, u0: Callable | None = None, delta_det: float = DELTA_DET) -> np.ndarray:
    V = mesh.vertices
    if con.kind == "a1" and u0 is not None:
        guess = np.asarray(u0(V), dtype=float)
        trial = DiscreteDeformation(mesh, project_constraint(guess, mesh, con))
        if trial.dets().min() > delta_det:
            return trial.u
        if len(con.gamma) == len(mesh.boundary):
            guess = ray_blend(mesh, np.asarray(u0(V[mesh.boundary]), dtype=float))
            trial = DiscreteDeformation(mesh, project_constraint(guess, mesh, con))
            if trial.dets().min() > delta_det:
                return trial.u
        raise InfeasibleStateError("no feasible initial guess: blended boundary data inverts triangles")
    if con.kind == "a3":
        # contract the identity towards the centre of K so that the projection keeps it affine
        K = con.K
        if K[0] == "box":
            lo, hi = np.asarray(K[1], dtype=float), np.asarray(K[2], dtype=float)
            c = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
        else:
            c = np.asarray(K[1], dtype=float)
            half = np.full(2, float(K[2]) / math.sqrt(2))
        vc = 0.5 * (V.min(axis=0) + V.max(axis=0))
        vh = 0.5 * (V.max(axis=0) - V.min(axis=0))
        scale = min(1.0, float(np.min(half / vh)))
        guess = c + scale * (V - vc) if scale < 1.0 else V.copy()
        return project_constraint(guess, mesh, con)
    return project_constraint(V.copy(), mesh, con)


def minimize(dom: Domain2D, mesh_h: float, W: BulkDensity, U: SurfaceDensity | None, con_kind: str = "a1",
             opts: SolveOptions | None = None, u0: Callable | None = None, gamma="all", K: tuple | None = None,
             mesh: Mesh | None = None, u_init: np.ndarray | None = None) -> tuple[DiscreteDeformation, SolveTrace]:
    """Projected-gradient descent on the discrete functional."""
    opts = opts or SolveOptions()
    U = U or SurfaceDensity()
    mesh = mesh or triangulate(dom, mesh_h)
    if con_kind == "a1":
        g_ids = boundary_selection(mesh, dom, gamma)
        f0 = u0 if u0 is not None else (lambda x: np.asarray(x, dtype=float).copy())
        con = Constraint("a1", g_ids, np.asarray(f0(mesh.vertices[g_ids]), dtype=float))
    elif con_kind == "a3":
        con = Constraint("a3", K=K if K is not None else ("box", (-10.0, -10.0), (10.0, 10.0)))
    else:
        con = Constraint(con_kind)
    u = project_constraint(u_init, mesh, con) if u_init is not None else initial_guess(mesh, con, u0, opts.delta_det)
    uh = DiscreteDeformation(mesh, u, con)
    if uh.dets().min() <= opts.delta_det:
        raise InfeasibleStateError("initial guess violates the determinant safeguard")
    trace = SolveTrace()

    def evaluate(v):
        eb, gb, dets = _bulk(v, mesh, W, opts.threads)
        if not np.isfinite(eb) or dets.min() <= opts.delta_det:
            return np.inf, None, dets
        es, gs = _surface(v, mesh, U, True)
        return eb + es, gb + gs, dets

    E, g, dets = evaluate(u)
    pg = _tangent_project(g, u, mesh, con)
    step = 1.0
    prev = None
    trace.rows.append(TraceRow(0, E, float(np.linalg.norm(pg)), float(dets.min()), 0.0,
                               constraint_residual(u, mesh, con), float(mesh.areas @ dets)))
    for it in range(1, opts.max_iter + 1):
        gn = float(np.linalg.norm(pg))
        if gn <= opts.tol:
            trace.converged = True
            trace.message = "projected gradient below tolerance"
            break
        if prev is not None:
            s_vec, y_vec = prev
            sy = float(np.sum(s_vec * y_vec))
            step = float(np.sum(s_vec * s_vec)) / sy if sy > 0 else 2 * step
            step = min(max(step, 1e-10), 1e10)
        direction = pg if con.kind != "a3" else g
        t = step
        accepted = False
        while t >= MIN_STEP:
            trial = project_constraint(u - t * direction, mesh, con)
            Et, gt, dt = evaluate(trial)
            if np.isfinite(Et) and Et <= E - opts.armijo * float(np.sum(g * (u - trial))) and Et < E:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            trace.line_search_failed = True
            trace.message = "line search failed (step below 1e-14)"
            break
        prev = (trial - u, gt - g)
        u, E, g, dets = trial, Et, gt, dt
        pg = _tangent_project(g, u, mesh, con)
        row = TraceRow(it, E, float(np.linalg.norm(pg)), float(dets.min()), t,
                       constraint_residual(u, mesh, con), float(mesh.areas @ dets))
        trace.rows.append(row)
        if opts.callback is not None:
            opts.callback(row, u)
        if E < opts.diverge_energy:
            trace.diverged = True
            trace.message = "energy unbounded below (diverged)"
            break
    else:
        trace.message = "maximum iterations reached"
    if not trace.converged and trace.rows[-1].grad_norm <= opts.tol:
        trace.converged = True
    return DiscreteDeformation(mesh, u, con), trace


def boundary_polygon_area(u: np.ndarray, mesh: Mesh) -> float:
    """Signed area enclosed by the deformed boundary polygon (shoelace)."""
    P = u[mesh.boundary]
    return float(0.5 * np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1]))


def null_lagrangian_check(fields: Sequence[DiscreteDeformation], reference: float | None = None) -> float:
    """Max deviation of the integral of det Du_h from the reference over fields with equal boundary values."""
    if not fields:
        raise ValueError("need at least one field")
    m0 = fields[0].mesh
    b0 = fields[0].u[m0.boundary]
    for f in fields[1:]:
        if f.mesh is not m0 and not np.array_equal(f.mesh.boundary, m0.boundary):
            raise ValueError("fields live on different boundary meshes")
        if not np.array_equal(f.u[f.mesh.boundary], b0):
            raise ValueError("boundary nodal values differ between fields")
    ref = boundary_polygon_area(fields[0].u, m0) if reference is None else reference
    return max(abs(f.volume() - ref) for f in fields)
