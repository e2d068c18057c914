"""Numpy implementations of the hot kernels (used when the extension is absent)."""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi
CHUNK = 4096


def winding_angle_sums(trace: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sum of signed angle increments of a closed polyline seen from each point."""
    trace = np.ascontiguousarray(trace, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    out = np.empty(len(points))
    for lo in range(0, len(points), CHUNK):
        p = points[lo:lo + CHUNK]
        a = trace[None, :-1, :] - p[:, None, :]
        b = trace[None, 1:, :] - p[:, None, :]
        cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        dot = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
        out[lo:lo + CHUNK] = np.arctan2(cross, dot).sum(axis=1)
    return out


def polyline_distance(trace: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the polyline (segments between consecutive vertices)."""
    trace = np.ascontiguousarray(trace, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    a = trace[:-1]
    e = trace[1:] - a
    ee = np.maximum((e * e).sum(axis=1), 1e-300)
    out = np.empty(len(points))
    for lo in range(0, len(points), CHUNK):
        p = points[lo:lo + CHUNK]
        w = p[:, None, :] - a[None, :, :]
        t = np.clip((w * e[None]).sum(axis=2) / ee[None], 0.0, 1.0)
        d = w - t[..., None] * e[None]
        out[lo:lo + CHUNK] = np.sqrt((d * d).sum(axis=2).min(axis=1))
    return out


def bin_weighted(points, weights, x0, y0, dx, dy, nx, ny):
    """Histogram of weights and of counts on a regular grid; points outside are dropped."""
    points = np.asarray(points, dtype=float)
    i = np.floor((points[:, 0] - x0) / dx).astype(np.int64)
    j = np.floor((points[:, 1] - y0) / dy).astype(np.int64)
    ok = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
    flat = i[ok] * ny + j[ok]
    wsum = np.bincount(flat, weights=np.asarray(weights, dtype=float)[ok], minlength=nx * ny)
    cnt = np.bincount(flat, minlength=nx * ny)
    return wsum.reshape(nx, ny), cnt.reshape(nx, ny).astype(np.int64)


def assemble_standard_p1(u, tris, grads, areas, c1, p, a, b, hkind):
    """Energy, nodal gradient and per-triangle det for W = c1 |F|^p + h(det F).

    ``hkind`` 0: h(t) = a t^2 + b / t;  1: h(t) = a t^2 - b log t.
    Returns (energy, grad, dets); energy is inf when some det <= 0.
    """
    u = np.asarray(u, dtype=float)
    U = u[tris]  # (T, 3, 2)
    F = np.einsum("tki,tkj->tij", U, grads)
    det = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    if np.any(det <= 0):
        return np.inf, np.zeros_like(u), det
    nf2 = (F * F).sum(axis=(1, 2))
    if hkind == 0:
        hv = a * det ** 2 + b / det
        dh = 2 * a * det - b / det ** 2
    else:
        hv = a * det ** 2 - b * np.log(det)
        dh = 2 * a * det - b / det
    energy = float(areas @ (c1 * nf2 ** (p / 2) + hv))
    cof = np.empty_like(F)
    cof[:, 0, 0] = F[:, 1, 1]
    cof[:, 0, 1] = -F[:, 1, 0]
    cof[:, 1, 0] = -F[:, 0, 1]
    cof[:, 1, 1] = F[:, 0, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nf2 > 0, c1 * p * nf2 ** (p / 2 - 1), 0.0)
    P = scale[:, None, None] * F + dh[:, None, None] * cof
    local = np.einsum("tij,tkj->tki", P, grads) * areas[:, None, None]
    g = np.zeros_like(u)
    np.add.at(g, tris.ravel(), local.reshape(-1, 2))
    return energy, g, det
