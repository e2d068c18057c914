"""Time the compiled kernels against the numpy fallback on representative sizes.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Both backends must agree; the script aborts if outputs differ beyond 1e-9.
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from polyinj import _fallback
from polyinj.geometry import make_domain
from polyinj.minimize import triangulate

try:
    from polyinj import _kernels
except ImportError:
    _kernels = None


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _flat(x):
    if isinstance(x, tuple):
        return np.concatenate([np.ravel(np.asarray(v, dtype=float)) for v in x])
    return np.ravel(np.asarray(x, dtype=float))


def cases(scale: float, rng: np.random.Generator):
    n_trace = int(2048 * scale)
    th = np.linspace(0, 2 * math.pi, n_trace + 1)
    trace = np.column_stack([np.cos(th) + 0.1 * np.cos(5 * th), np.sin(th)])
    pts = rng.uniform(-1.5, 1.5, (int(5000 * scale), 2))
    yield "winding_angle_sums", (trace, pts)
    yield "polyline_distance", (trace, pts)
    n = int(10 ** 6 * scale)
    yield "bin_weighted", (rng.uniform(-1, 1, (n, 2)), rng.uniform(0, 2, n), -1.0, -1.0, 2 / 256, 2 / 256, 256, 256)
    mesh = triangulate(make_domain("unit-square"), 0.01 / math.sqrt(scale))
    u = mesh.vertices + 0.001 * rng.standard_normal(mesh.vertices.shape)
    yield "assemble_standard_p1", (u, mesh.tris, mesh.grads, mesh.areas, 1.0, 2.0, 1.0, 1.0, 0)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8}")
    for name, a in cases(args.scale, rng):
        t_np, out_np = _best(lambda: getattr(_fallback, name)(*a), args.repeat)
        if _kernels is None:
            print(f"{name:<22} {1e3 * t_np:>11.2f} {'-':>12} {'-':>8}")
            continue
        t_cy, out_cy = _best(lambda: getattr(_kernels, name)(*a), args.repeat)
        f_np, f_cy = _flat(out_np), _flat(out_cy)
        same_inf = np.isinf(f_np) & (f_np == f_cy)
        err = np.max(np.where(same_inf, 0.0, np.abs(f_np - f_cy) / (1 + np.abs(f_np))))
        if not err <= 1e-9:
            raise SystemExit(f"{name}: backends disagree (scaled error {err:.3g})")
        print(f"{name:<22} {1e3 * t_np:>11.2f} {1e3 * t_cy:>12.2f} {t_np / t_cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
