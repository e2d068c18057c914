"""Brouwer degree of planar boundary traces and preimage counting.

The degree of a map at ``y`` only depends on the boundary trace, and for a
closed polyline it is the winding number: the sum of signed angle
increments divided by 2 pi.  The preimage-counting function N_u is
estimated from the area formula

    integral over a cell of N_u = integral over its preimage of |det Du|

with Monte-Carlo samples in the reference domain.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .geometry import Domain2D, interior_quadrature, sample_uniform

CHUNK = 1 << 16
MAX_SE = 0.2


class DegreeError(ValueError):
    pass


class TooCloseError(DegreeError):
    """The point lies on (or within tolerance of) the boundary image."""


class UnresolvedTraceError(DegreeError):
    """Angle sum is not close to a multiple of 2 pi."""


class StabilizationError(DegreeError):
    pass


@dataclass(frozen=True)
class BoundaryTrace:
    points: np.ndarray  # (M + 1, 2), closed: first == last
    params: np.ndarray  # (M,) boundary parameters of points[:-1]

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if len(P) < 4:
            raise DegreeError("trace needs at least three distinct points")
        if not np.array_equal(P[0], P[-1]):
            P = np.vstack([P, P[:1]])
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        P = self.points
        return P[:, 0].min(), P[:, 0].max(), P[:, 1].min(), P[:, 1].max()

    def resampled(self, factor: int = 2) -> "BoundaryTrace":
        """Insert ``factor - 1`` points on every segment (same curve, finer sampling)."""
        P = self.points
        t = np.arange(factor) / factor
        pts = (P[:-1, None, :] + t[None, :, None] * (P[1:] - P[:-1])[:, None, :]).reshape(-1, 2)
        return BoundaryTrace(pts, np.repeat(self.params, factor))

    def reparametrized(self, shift: int) -> "BoundaryTrace":
        """Same curve traversed from a different starting vertex."""
        P = self.points[:-1]
        return BoundaryTrace(np.roll(P, -shift, axis=0), np.roll(self.params, -shift))


def trace_of(deformation, dom: Domain2D, n: int = 1024) -> BoundaryTrace:
    """Boundary trace of ``deformation`` sampled at ``n`` arclength parameters.

    Corners are always included.  Parameters where the map is undefined are
    replaced by two points straddling them at 1e-9 of the spacing.
    """
    if n < 256:
        raise DegreeError("boundary traces need at least 256 samples")
    s = np.linspace(0.0, dom.perimeter, n, endpoint=False)
    if dom.kind != "disk":
        s = np.union1d(s, dom.corners)
    x = dom.point_at(s)
    bad = ~deformation.defined(x)
    if bad.any():
        eps = 1e-9 * dom.perimeter / n
        s = np.sort(np.concatenate([s[~bad], s[bad] - eps, s[bad] + eps]))
        x = dom.point_at(s)
        if (~deformation.defined(x)).any():
            raise DegreeError("map undefined on a boundary set of positive length")
    return BoundaryTrace(deformation._value(x), s)


def curve_trace(curve, n: int = 1024) -> BoundaryTrace:
    """Trace of a closed parametric curve ``theta -> (N, 2)`` on [0, 2 pi)."""
    th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    return BoundaryTrace(curve(th), th)


def winding_number(trace: BoundaryTrace, y, tol: float = 1e-10) -> int:
    y = np.asarray(y, dtype=float).reshape(1, 2)
    dist = kernels.polyline_distance(trace.points, y)[0]
    if dist <= tol:
        raise TooCloseError(f"point {y[0].tolist()} within {dist:.3g} of the trace")
    w = kernels.winding_angle_sums(trace.points, y)[0] / (2 * math.pi)
    k = round(w)
    if abs(w - k) >= 0.1:
        raise UnresolvedTraceError(f"angle sum {w:.4f} * 2pi is not near an integer")
    return int(k)


@dataclass
class Grid:
    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int

    @classmethod
    def around(cls, bbox, resolution: int, margin: float = 0.05) -> "Grid":
        x0, x1, y0, y1 = bbox
        wx, wy = x1 - x0, y1 - y0
        pad = margin * max(wx, wy)
        return cls(x0 - pad, y0 - pad, (wx + 2 * pad) / resolution, (wy + 2 * pad) / resolution,
                   resolution, resolution)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def centers(self) -> np.ndarray:
        xs = self.x0 + self.dx * (np.arange(self.nx) + 0.5)
        ys = self.y0 + self.dy * (np.arange(self.ny) + 0.5)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass
class DegreeField:
    grid: Grid
    degree: np.ndarray  # (nx, ny) int
    on_curve: np.ndarray  # (nx, ny) bool

    def image_mask(self) -> np.ndarray:
        """Raster of the topological image: off-curve cells with nonzero degree."""
        return (self.degree != 0) & ~self.on_curve

    def nonzero_values(self) -> list[int]:
        return sorted(set(np.unique(self.degree[self.image_mask()]).tolist()))

    @property
    def gamma(self) -> int | None:
        vals = self.nonzero_values()
        return vals[0] if len(vals) == 1 else None

    def image_area(self) -> float:
        return float(self.image_mask().sum() * self.grid.cell_area)


def _chunked(fn, n: int, threads: int):
    """Apply ``fn(lo, hi)`` on fixed-size chunks, results returned in order."""
    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda b: fn(*b), bounds))


def degree_on_grid(trace: BoundaryTrace, grid: Grid, threads: int = 1) -> DegreeField:
    c = grid.centers()
    diag = math.hypot(grid.dx, grid.dy)
    dist = np.concatenate(_chunked(lambda lo, hi: kernels.polyline_distance(trace.points, c[lo:hi]), len(c), threads))
    on = dist <= diag
    deg = np.zeros(len(c), dtype=np.int64)
    idx = np.flatnonzero(~on)
    sums = np.concatenate(_chunked(lambda lo, hi: kernels.winding_angle_sums(trace.points, c[idx[lo:hi]]), len(idx), threads)) \
        if len(idx) else np.zeros(0)
    w = sums / (2 * math.pi)
    k = np.rint(w)
    if len(w) and np.abs(w - k).max() >= 0.1:
        raise UnresolvedTraceError("angle sums not near multiples of 2 pi; refine the trace")
    deg[idx] = k.astype(np.int64)
    return DegreeField(grid, deg.reshape(grid.nx, grid.ny), on.reshape(grid.nx, grid.ny))


def degree_field(trace: BoundaryTrace, resolution: int = 128, threads: int = 1) -> DegreeField:
    if resolution < 64:
        raise DegreeError("degree fields need resolution >= 64")
    return degree_on_grid(trace, Grid.around(trace.bbox, resolution), threads)


@dataclass
class StabilityResult:
    k0: int  # 1-based index from which the degree equals the target
    degrees: list[int]
    target: int


def degree_stability(traces: Sequence[BoundaryTrace], y, limit: BoundaryTrace | None = None) -> StabilityResult:
    """First index k0 (1-based) from which deg(u_k; y) equals the limiting degree."""
    degs = [winding_number(t, y) for t in traces]
    target = winding_number(limit, y) if limit is not None else degs[-1]
    if degs[-1] != target:
        raise StabilizationError(f"degrees {degs} do not reach the limit value {target}")
    k0 = len(degs)
    while k0 > 1 and degs[k0 - 2] == target:
        k0 -= 1
    return StabilityResult(k0, degs, target)


# -- preimage counting --------------------------------------------------------

@dataclass
class Samples:
    y: np.ndarray
    absdet: np.ndarray
    dets: np.ndarray
    discarded: int
    total: int
    domain_area: float


def draw_samples(deformation, dom: Domain2D, n: int, rng: np.random.Generator, threads: int = 1) -> Samples:
    """Evaluate the map and its Jacobian at ``n`` uniform points of the domain.

    Points on non-smooth sets are discarded and counted.
    """
    if hasattr(deformation, "draw_samples"):
        return deformation.draw_samples(n, rng)
    x = sample_uniform(dom, n, rng)

    def work(lo, hi):
        xs = x[lo:hi]
        ok = ~deformation.singular(xs)
        y = np.full((hi - lo, 2), np.nan)
        d = np.full(hi - lo, np.nan)
        if ok.any():
            y[ok] = deformation._value(xs[ok])
            d[ok] = np.linalg.det(deformation._grad(xs[ok]))
        return y, d

    parts = _chunked(work, n, threads)
    y = np.vstack([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    good = np.isfinite(d) & np.isfinite(y).all(axis=1)
    return Samples(y[good], np.abs(d[good]), d[good], int((~good).sum()), n, dom.area)


@dataclass
class PreimageHistogram:
    grid: Grid
    n_u: np.ndarray  # (nx, ny) estimated mean N_u per cell
    hits: np.ndarray  # (nx, ny) sample counts
    n_u_se: np.ndarray  # (nx, ny) standard error of n_u
    samples: int
    discarded: int
    mass: float  # estimate of the integral of |det Du|
    reference_mass: float | None = None

    @property
    def mass_rel_error(self) -> float | None:
        if self.reference_mass is None:
            return None
        return abs(self.mass - self.reference_mass) / abs(self.reference_mass)

    def resolved(self, min_hits: int = 30, max_se: float = MAX_SE) -> np.ndarray:
        """Cells whose estimate is backed by enough hits and a small standard error.

        |det Du| can be heavy tailed near cavitation points (infinite variance),
        so a hit count alone does not make a cell estimate trustworthy.
        """
        return (self.hits >= min_hits) & (self.n_u_se <= max_se)

    def max_count(self, min_hits: int = 30) -> int:
        pop = self.resolved(min_hits)
        return int(np.rint(self.n_u[pop]).max()) if pop.any() else 0

    def overlap_area(self, min_hits: int = 30) -> float:
        """Area of resolved cells with N_u >= 2."""
        return float((self.resolved(min_hits) & (np.rint(self.n_u) >= 2)).sum() * self.grid.cell_area)


def _reference_mass(deformation, dom: Domain2D, h: float = 1 / 256) -> float | None:
    if hasattr(deformation, "reference_mass"):
        return deformation.reference_mass()
    q = interior_quadrature(dom, h)
    ok = ~deformation.singular(q.nodes)
    return float(q.weights[ok] @ np.abs(np.linalg.det(deformation._grad(q.nodes[ok]))))


def histogram_on_grid(s: Samples, grid: Grid, threads: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell N_u estimate, hit count and standard error of the estimate."""
    w = s.absdet * (s.domain_area / s.total)
    w2 = w * w

    def work(lo, hi):
        a, c = kernels.bin_weighted(s.y[lo:hi], w[lo:hi], grid.x0, grid.y0, grid.dx, grid.dy, grid.nx, grid.ny)
        b, _ = kernels.bin_weighted(s.y[lo:hi], w2[lo:hi], grid.x0, grid.y0, grid.dx, grid.dy, grid.nx, grid.ny)
        return a, b, c

    wsum = np.zeros((grid.nx, grid.ny))
    wsq = np.zeros((grid.nx, grid.ny))
    cnt = np.zeros((grid.nx, grid.ny), dtype=np.int64)
    for a, b, c in _chunked(work, len(w), threads):  # fixed order keeps sums thread-count independent
        wsum += a
        wsq += b
        cnt += c
    return wsum / grid.cell_area, cnt, np.sqrt(wsq) / grid.cell_area


def _check_discards(s: Samples) -> None:
    if s.discarded > 0.01 * s.total:
        raise DegreeError(f"{s.discarded} of {s.total} samples hit non-smooth points (more than 1%)")


def preimage_histogram(deformation, dom: Domain2D, samples: int = 10 ** 5, resolution: int = 128,
                       rng=None, threads: int = 1, check_mass: bool = True,
                       grid: Grid | None = None) -> PreimageHistogram:
    rng = np.random.default_rng(rng)
    s = draw_samples(deformation, dom, samples, rng, threads)
    _check_discards(s)
    if grid is None:
        grid = Grid.around((s.y[:, 0].min(), s.y[:, 0].max(), s.y[:, 1].min(), s.y[:, 1].max()), resolution)
    n_u, cnt, se = histogram_on_grid(s, grid, threads)
    mass = float(n_u.sum() * grid.cell_area)
    ref = _reference_mass(deformation, dom) if check_mass else None
    return PreimageHistogram(grid, n_u, cnt, se, s.total, s.discarded, mass, ref)


@dataclass
class InjectivityReport:
    injective_ae: bool
    confidence: float
    overlap_area: float
    deg_equals_Nu: bool
    agreement: float
    disagreement_area: float
    gamma: int | None
    degree_values: list[int]
    max_Nu: int
    compared_cells: int
    min_det: float
    mass_rel_error: float | None
    degree_field: DegreeField = field(repr=False)
    histogram: PreimageHistogram = field(repr=False)

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "degree_values": self.degree_values,
            "overlap_area": self.overlap_area,
            "injective_ae": self.injective_ae,
            "confidence": self.confidence,
            "deg_equals_Nu": self.deg_equals_Nu,
            "deg_Nu_agreement": self.agreement,
            "deg_Nu_disagreement_area": self.disagreement_area,
            "max_Nu": self.max_Nu,
            "compared_cells": self.compared_cells,
            "min_det": self.min_det,
            "mass_rel_error": self.mass_rel_error,
        }


def injectivity_report(deformation, dom: Domain2D, samples: int = 10 ** 5, resolution: int = 128,
                       rng=None, threads: int = 1, trace: BoundaryTrace | None = None,
                       trace_samples: int = 2048, min_hits: int = 30) -> InjectivityReport:
    """Cross-check the degree of the trace against the preimage count, cell by cell."""
    rng = np.random.default_rng(rng)
    if trace is None and hasattr(deformation, "boundary_trace"):
        trace = deformation.boundary_trace()
    if trace is None:
        trace = trace_of(deformation, dom, trace_samples)
    elif not hasattr(deformation, "draw_samples"):
        x = dom.point_at(trace.params)
        ok = deformation.defined(x)
        if np.abs(deformation._value(x[ok]) - trace.points[:-1][ok]).max() > 1e-9:
            raise DegreeError("trace does not come from this deformation")
    s = draw_samples(deformation, dom, samples, rng, threads)
    _check_discards(s)
    tb = trace.bbox
    bbox = (min(tb[0], s.y[:, 0].min()), max(tb[1], s.y[:, 0].max()),
            min(tb[2], s.y[:, 1].min()), max(tb[3], s.y[:, 1].max()))
    grid = Grid.around(bbox, resolution)
    n_u, cnt, se = histogram_on_grid(s, grid, threads)
    hist = PreimageHistogram(grid, n_u, cnt, se, s.total, s.discarded, float(n_u.sum() * grid.cell_area),
                             _reference_mass(deformation, dom))
    fld = degree_on_grid(trace, grid, threads)
    populated = (cnt >= min_hits) & ~fld.on_curve
    pop = hist.resolved(min_hits) & ~fld.on_curve
    rounded = np.rint(n_u).astype(np.int64)
    compared = int(pop.sum())
    agree = float((rounded[pop] == fld.degree[pop]).mean()) if compared else 0.0
    overlap = hist.overlap_area(min_hits)
    confidence = float(pop.sum() / populated.sum()) if populated.any() else 0.0
    return InjectivityReport(
        injective_ae=overlap < 1e-3 * dom.area,
        confidence=confidence,
        overlap_area=overlap,
        deg_equals_Nu=agree >= 0.95,
        agreement=agree,
        disagreement_area=float((pop & (rounded != fld.degree)).sum() * grid.cell_area),
        gamma=fld.gamma,
        degree_values=fld.nonzero_values(),
        max_Nu=hist.max_count(min_hits),
        compared_cells=compared,
        min_det=float(s.dets.min()) if len(s.dets) else float("nan"),
        mass_rel_error=hist.mass_rel_error,
        degree_field=fld,
        histogram=hist,
    )
