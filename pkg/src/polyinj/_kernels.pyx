# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in _fallback.py (same signatures and results)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, sqrt, floor, log, pow, INFINITY

cnp.import_array()


def winding_angle_sums(trace, points):
    cdef double[:, ::1] tr = np.ascontiguousarray(trace, dtype=np.float64)
    cdef double[:, ::1] pt = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t m = tr.shape[0], n = pt.shape[0], i, k
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double px, py, ax, ay, bx, by, s
    with nogil:
        for i in range(n):
            px = pt[i, 0]
            py = pt[i, 1]
            s = 0.0
            for k in range(m - 1):
                ax = tr[k, 0] - px
                ay = tr[k, 1] - py
                bx = tr[k + 1, 0] - px
                by = tr[k + 1, 1] - py
                s += atan2(ax * by - ay * bx, ax * bx + ay * by)
            o[i] = s
    return out


def polyline_distance(trace, points):
    cdef double[:, ::1] tr = np.ascontiguousarray(trace, dtype=np.float64)
    cdef double[:, ::1] pt = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t m = tr.shape[0], n = pt.shape[0], i, k
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double ex, ey, wx, wy, ee, t, dx, dy, d2, best
    with nogil:
        for i in range(n):
            best = INFINITY
            for k in range(m - 1):
                ex = tr[k + 1, 0] - tr[k, 0]
                ey = tr[k + 1, 1] - tr[k, 1]
                wx = pt[i, 0] - tr[k, 0]
                wy = pt[i, 1] - tr[k, 1]
                ee = ex * ex + ey * ey
                if ee < 1e-300:
                    ee = 1e-300
                t = (wx * ex + wy * ey) / ee
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                dx = wx - t * ex
                dy = wy - t * ey
                d2 = dx * dx + dy * dy
                if d2 < best:
                    best = d2
            o[i] = sqrt(best)
    return out


def bin_weighted(points, weights, double x0, double y0, double dx, double dy, Py_ssize_t nx, Py_ssize_t ny):
    cdef double[:, ::1] pt = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    wsum = np.zeros((nx, ny))
    cnt = np.zeros((nx, ny), dtype=np.int64)
    cdef double[:, ::1] ws = wsum
    cdef long long[:, ::1] cs = cnt
    cdef Py_ssize_t n = pt.shape[0], k, i, j
    with nogil:
        for k in range(n):
            i = <Py_ssize_t> floor((pt[k, 0] - x0) / dx)
            j = <Py_ssize_t> floor((pt[k, 1] - y0) / dy)
            if i < 0 or i >= nx or j < 0 or j >= ny:
                continue
            ws[i, j] += w[k]
            cs[i, j] += 1
    return wsum, cnt


def assemble_standard_p1(u, tris, grads, areas, double c1, double p, double a, double b, int hkind):
    cdef double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef long long[:, ::1] tt = np.ascontiguousarray(tris, dtype=np.int64)
    cdef double[:, :, ::1] gg = np.ascontiguousarray(grads, dtype=np.float64)
    cdef double[::1] ar = np.ascontiguousarray(areas, dtype=np.float64)
    cdef Py_ssize_t nt = tt.shape[0], t, k, v
    g = np.zeros((uu.shape[0], 2))
    det = np.empty(nt)
    cdef double[:, ::1] go = g
    cdef double[::1] dt = det
    cdef double F00, F01, F10, F11, d, nf2, hv, dh, sc, P00, P01, P10, P11, energy = 0.0
    cdef bint bad = False
    with nogil:
        for t in range(nt):
            F00 = 0.0; F01 = 0.0; F10 = 0.0; F11 = 0.0
            for k in range(3):
                v = tt[t, k]
                F00 += uu[v, 0] * gg[t, k, 0]
                F01 += uu[v, 0] * gg[t, k, 1]
                F10 += uu[v, 1] * gg[t, k, 0]
                F11 += uu[v, 1] * gg[t, k, 1]
            d = F00 * F11 - F01 * F10
            dt[t] = d
            if d <= 0.0:
                bad = True
    if bad:
        return np.inf, np.zeros_like(np.asarray(u, dtype=np.float64)), det
    with nogil:
        for t in range(nt):
            F00 = 0.0; F01 = 0.0; F10 = 0.0; F11 = 0.0
            for k in range(3):
                v = tt[t, k]
                F00 += uu[v, 0] * gg[t, k, 0]
                F01 += uu[v, 0] * gg[t, k, 1]
                F10 += uu[v, 1] * gg[t, k, 0]
                F11 += uu[v, 1] * gg[t, k, 1]
            d = dt[t]
            nf2 = F00 * F00 + F01 * F01 + F10 * F10 + F11 * F11
            if hkind == 0:
                hv = a * d * d + b / d
                dh = 2.0 * a * d - b / (d * d)
            else:
                hv = a * d * d - b * log(d)
                dh = 2.0 * a * d - b / d
            energy += ar[t] * (c1 * pow(nf2, p / 2.0) + hv)
            sc = c1 * p * pow(nf2, p / 2.0 - 1.0) if nf2 > 0.0 else 0.0
            P00 = sc * F00 + dh * F11
            P01 = sc * F01 - dh * F10
            P10 = sc * F10 - dh * F01
            P11 = sc * F11 + dh * F00
            for k in range(3):
                v = tt[t, k]
                go[v, 0] += ar[t] * (P00 * gg[t, k, 0] + P01 * gg[t, k, 1])
                go[v, 1] += ar[t] * (P10 * gg[t, k, 0] + P11 * gg[t, k, 1])
    return energy, g, det
