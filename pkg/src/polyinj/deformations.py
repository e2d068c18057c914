"""Closed-form planar deformations with values, gradients and cofactors.

All evaluators are vectorized over points of shape (N, 2).  Piecewise maps
report a ``singular`` mask marking points on branch interfaces or other
non-smooth sets; there the first listed branch is used.

The counterexample is the composition

    u = u4 o polar o u3 o u2 o u1

on the rectangle (-1, 1) x (0, 1): u1 opens a cavity at the origin of the
bottom edge, u2 stretches the material near the cavity downwards, u3 closes
it while pushing part of the material below the rectangle [1, 2] x [-1, 1],
and ``u4 o polar`` rotates that picture about the origin, multiplying angles
by alpha.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .multilinear import adjugate, cofactor

H_FD = 1e-6


class DeformationDomainError(ValueError):
    """Evaluation requested outside the set where the map is defined."""


def _pts(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


class Deformation:
    """Base class: subclasses implement ``_value`` and optionally ``_grad``."""

    name = "deformation"
    smoothness = "smooth"

    def _value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        return fd_gradient(self._value, x)

    def defined(self, x: np.ndarray) -> np.ndarray:
        return np.ones(len(_pts(x)), dtype=bool)

    def singular(self, x: np.ndarray) -> np.ndarray:
        """Points where the map is undefined or not differentiable (measure zero)."""
        return ~self.defined(x)

    def branch_signature(self, x: np.ndarray) -> np.ndarray:
        """Integer label of the smooth piece containing each point (0 for smooth maps)."""
        return np.zeros(len(_pts(x)), dtype=np.int64)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = _pts(x)
        bad = ~self.defined(x)
        if bad.any():
            raise DeformationDomainError(f"{self.name} undefined at {x[bad][:3].tolist()}")
        return x

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self._value(self._check(x))
        return y[0] if x.ndim == 1 else y

    def eval_flagged(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = self._check(x)
        return self._value(x), self.singular(x)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        F = self._grad(self._check(x))
        return F[0] if x.ndim == 1 else F

    def det(self, x) -> np.ndarray:
        return np.linalg.det(self.gradient(x))

    def adj(self, x) -> np.ndarray:
        return adjugate(self.gradient(x))

    def cof(self, x) -> np.ndarray:
        return cofactor(self.gradient(x))

    def __repr__(self) -> str:
        return f"<{self.name}>"


def fd_gradient(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = H_FD) -> np.ndarray:
    """Central-difference Jacobian, shape (N, m, d)."""
    x = _pts(x)
    cols = []
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


class Identity(Deformation):
    name = "identity"

    def _value(self, x):
        return x.copy()

    def _grad(self, x):
        return np.broadcast_to(np.eye(x.shape[1]), (len(x), x.shape[1], x.shape[1])).copy()


class Affine(Deformation):
    name = "affine"

    def __init__(self, A, b=(0.0, 0.0)):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def _value(self, x):
        return x @ self.A.T + self.b

    def _grad(self, x):
        return np.broadcast_to(self.A, (len(x),) + self.A.shape).copy()


class Shear(Deformation):
    """(x1 + a sin x2, x2), an area-preserving smooth diffeomorphism for |a| < 1."""
    name = "shear"

    def __init__(self, a: float = 0.1):
        self.a = float(a)

    def _value(self, x):
        return np.column_stack([x[:, 0] + self.a * np.sin(x[:, 1]), x[:, 1]])

    def _grad(self, x):
        F = np.zeros((len(x), 2, 2))
        F[:, 0, 0] = 1.0
        F[:, 0, 1] = self.a * np.cos(x[:, 1])
        F[:, 1, 1] = 1.0
        return F

    def inverse(self, y):
        y = _pts(y)
        return np.column_stack([y[:, 0] - self.a * np.sin(y[:, 1]), y[:, 1]])


class Fold(Deformation):
    """(|x1|, x2): two-to-one, orientation reversing on x1 < 0."""
    name = "fold"
    smoothness = "piecewise"

    def _value(self, x):
        return np.column_stack([np.abs(x[:, 0]), x[:, 1]])

    def _grad(self, x):
        F = np.zeros((len(x), 2, 2))
        F[:, 0, 0] = np.sign(x[:, 0])
        F[:, 1, 1] = 1.0
        return F

    def singular(self, x):
        return _pts(x)[:, 0] == 0

    def branch_signature(self, x):
        return (_pts(x)[:, 0] > 0).astype(np.int64)


class Translated(Deformation):
    """``base(x) + shift``."""

    def __init__(self, base: Deformation, shift: Sequence[float]):
        self.base = base
        self.shift = np.asarray(shift, dtype=float)
        self.name = f"{base.name}+shift"
        self.smoothness = base.smoothness

    def _value(self, x):
        return self.base._value(x) + self.shift

    def _grad(self, x):
        return self.base._grad(x)

    def defined(self, x):
        return self.base.defined(x)

    def singular(self, x):
        return self.base.singular(x)

    def branch_signature(self, x):
        return self.base.branch_signature(x)


class FunctionDeformation(Deformation):
    """Wrap a vectorized callable; the gradient falls back to central differences."""

    def __init__(self, f, grad=None, name="function"):
        self.f = f
        self.g = grad
        self.name = name

    def _value(self, x):
        return self.f(x)

    def _grad(self, x):
        return self.g(x) if self.g is not None else fd_gradient(self.f, x)


# -- counterexample pieces ------------------------------------------------------

class U1(Deformation):
    """x -> (|x|_inf + 3) / (4 |x|_inf) x, opening a cavity at the origin."""
    name = "u1"
    smoothness = "piecewise; undefined at 0, kinks on |x1| = |x2|"

    def defined(self, x):
        return np.abs(_pts(x)).max(axis=1) > 0

    def singular(self, x):
        x = _pts(x)
        return ~self.defined(x) | (np.abs(x[:, 0]) == np.abs(x[:, 1]))

    def branch_signature(self, x):
        x = _pts(x)
        k = np.argmax(np.abs(x), axis=1)
        return 2 * k + (x[np.arange(len(x)), k] > 0)

    def _value(self, x):
        s = np.abs(x).max(axis=1)
        return ((s + 3) / (4 * s))[:, None] * x

    def _grad(self, x):
        s = np.abs(x).max(axis=1)
        f = (s + 3) / (4 * s)
        df = -3.0 / (4 * s ** 2)
        k = np.argmax(np.abs(x), axis=1)  # first index on ties
        ds = np.zeros_like(x)
        ds[np.arange(len(x)), k] = np.sign(x[np.arange(len(x)), k])
        return f[:, None, None] * np.eye(2) + df[:, None, None] * x[:, :, None] * ds[:, None, :]


class U2(Deformation):
    """Stretches the strip |x1| < 3/4 downwards; identity elsewhere."""
    name = "u2"
    smoothness = "piecewise; kinks on x1 = 0 and |x1| = 3/4"

    def singular(self, x):
        a = np.abs(_pts(x)[:, 0])
        return (a == 0.75) | (a == 0)

    def branch_signature(self, x):
        x1 = _pts(x)[:, 0]
        return 2 * (np.abs(x1) < 0.75) + (x1 > 0)

    def _value(self, x):
        x1, x2 = x[:, 0], x[:, 1]
        inner = np.abs(x1) < 0.75
        y2 = np.where(inner, 1 - (1 - x2) * (7 - 8 * np.abs(x1)), x2)
        return np.column_stack([x1, y2])

    def _grad(self, x):
        x1, x2 = x[:, 0], x[:, 1]
        inner = np.abs(x1) < 0.75
        F = np.zeros((len(x), 2, 2))
        F[:, 0, 0] = 1.0
        F[:, 1, 0] = np.where(inner, 8 * np.sign(x1) * (1 - x2), 0.0)
        F[:, 1, 1] = np.where(inner, 7 - 8 * np.abs(x1), 1.0)
        return F


def u3_branch(x: np.ndarray) -> np.ndarray:
    """Index (0..3) of the first matching case of the four-branch formula."""
    x = _pts(x)
    x1, x2 = x[:, 0], x[:, 1]
    a = np.abs(x1)
    v = (4 * x2 + 3) / 8
    b1 = (0 <= x2) & (x2 < 0.75) & (0.75 < a)
    b2 = (a < v) & (0 <= x2) & (x2 < 0.75)
    b3 = (a < v) & (-0.25 <= x2) & (x2 < 0)
    return np.select([b1, b2, b3], [0, 1, 2], default=3)


class U3(Deformation):
    """Closes the cavity and rescales onto [1, 2] x [-1, 1], leaking material below it."""
    name = "u3"
    smoothness = "piecewise; four branches"

    def singular(self, x):
        x = _pts(x)
        x1, x2 = x[:, 0], x[:, 1]
        a = np.abs(x1)
        return ((x2 == 0) | (x2 == 0.75) | (x2 == -0.25) | (a == 0.75)
                | (a == (4 * x2 + 3) / 8) | (x1 == 0))

    def branch_signature(self, x):
        x = _pts(x)
        return 2 * u3_branch(x) + (x[:, 0] > 0)

    def _value(self, x):
        x1, x2 = x[:, 0], x[:, 1]
        br = u3_branch(x)
        a = np.abs(x1)
        with np.errstate(divide="ignore", invalid="ignore"):
            y1 = np.select(
                [br == 0, br == 1, br == 2],
                [0.5 * (np.sign(x1) * (1 - 4 * (1 - a) * (1 - x2)) + 3),
                 4 * x1 * x2 / (4 * x2 + 3) + 1.5,
                 -4 * x1 * x2 / (4 * x2 + 3) + 1.5],
                default=(x1 + 3) / 2)
        return np.column_stack([y1, 2 * x2 - 1])

    def _grad(self, x):
        x1, x2 = x[:, 0], x[:, 1]
        br = u3_branch(x)
        a = np.abs(x1)
        q = 4 * x2 + 3
        sg = np.where(br == 2, -1.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            f11 = np.select([br == 0, br <= 2], [2 * (1 - x2), sg * 4 * x2 / q], default=0.5)
            f12 = np.select([br == 0, br <= 2], [2 * np.sign(x1) * (1 - a), sg * 12 * x1 / q ** 2], default=0.0)
        F = np.zeros((len(x), 2, 2))
        F[:, 0, 0] = f11
        F[:, 0, 1] = f12
        F[:, 1, 1] = 2.0
        return F


class PolarMap(Deformation):
    """(x1, x2) -> (sqrt(x1^2 + x2^2), arctan(x2 / x1)) on the right half-plane."""
    name = "polar"

    def defined(self, x):
        return _pts(x)[:, 0] > 0

    def _value(self, x):
        return np.column_stack([np.hypot(x[:, 0], x[:, 1]), np.arctan(x[:, 1] / x[:, 0])])

    def _grad(self, x):
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        r = np.sqrt(r2)
        F = np.empty((len(x), 2, 2))
        F[:, 0, 0] = x[:, 0] / r
        F[:, 0, 1] = x[:, 1] / r
        F[:, 1, 0] = -x[:, 1] / r2
        F[:, 1, 1] = x[:, 0] / r2
        return F


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 4 * math.pi / 5 < alpha < math.pi:
        raise ValueError(f"alpha must lie in (4pi/5, pi), got {alpha}")
    return alpha


@dataclass(frozen=True)
class CounterexampleParams:
    alpha: float = 0.9 * math.pi

    def __post_init__(self):
        check_alpha(self.alpha)


class U4Polar(Deformation):
    """(r, theta) -> (r cos(alpha theta), r sin(alpha theta))."""
    name = "u4"

    def __init__(self, alpha: float = 0.9 * math.pi):
        self.alpha = check_alpha(alpha)

    def _value(self, x):
        r, t = x[:, 0], x[:, 1]
        return np.column_stack([r * np.cos(self.alpha * t), r * np.sin(self.alpha * t)])

    def _grad(self, x):
        r, t = x[:, 0], x[:, 1]
        c, s = np.cos(self.alpha * t), np.sin(self.alpha * t)
        F = np.empty((len(x), 2, 2))
        F[:, 0, 0] = c
        F[:, 0, 1] = -self.alpha * r * s
        F[:, 1, 0] = s
        F[:, 1, 1] = self.alpha * r * c
        return F


def u4_polar(r, theta, alpha: float = 0.9 * math.pi) -> np.ndarray:
    return U4Polar(alpha)(np.column_stack([np.atleast_1d(r), np.atleast_1d(theta)]).squeeze())


class Composition(Deformation):
    """``maps[-1] o ... o maps[0]``; gradients by the chain rule."""

    def __init__(self, maps: Sequence[Deformation], name: str = "composition"):
        self.maps = list(maps)
        self.name = name
        self.smoothness = "piecewise"

    def _stages(self, x):
        pts = [x]
        for m in self.maps[:-1]:
            pts.append(m._value(pts[-1]))
        return pts

    def defined(self, x):
        x = _pts(x)
        ok = np.ones(len(x), dtype=bool)
        cur = x
        for m in self.maps:
            ok &= m.defined(cur)
            if not ok.any():
                break
            cur = np.where(ok[:, None], cur, 1.0)  # keep later stages finite
            with np.errstate(all="ignore"):
                cur = m._value(cur)
        return ok

    def singular(self, x):
        x = _pts(x)
        bad = ~self.defined(x)
        cur = np.where(bad[:, None], 1.0, x)
        for m in self.maps:
            bad |= m.singular(cur)
            with np.errstate(all="ignore"):
                cur = m._value(cur)
        return bad

    def branch_signature(self, x):
        x = _pts(x)
        sig = np.zeros(len(x), dtype=np.int64)
        cur = np.where(self.defined(x)[:, None], x, 1.0)
        for m in self.maps:
            sig = 16 * sig + m.branch_signature(cur)
            with np.errstate(all="ignore"):
                cur = m._value(cur)
        return sig

    def _value(self, x):
        for m in self.maps:
            x = m._value(x)
        return x

    def _grad(self, x):
        F = None
        for m, p in zip(self.maps, self._stages(x)):
            G = m._grad(p)
            F = G if F is None else G @ F
        return F


def u_composed(alpha: float = 0.9 * math.pi) -> Composition:
    return Composition([U1(), U2(), U3(), PolarMap(), U4Polar(alpha)], name="u_composed")


def u1(x):
    return U1()(x)


def u2(x):
    return U2()(x)


def u3(x):
    return U3()(x)


CATALOG: dict[str, Callable[..., Deformation]] = {
    "identity": lambda **kw: Identity(),
    "affine": lambda **kw: Affine(kw.get("A", [[1.0, 0.0], [0.0, 1.0]]), kw.get("b", (0.0, 0.0))),
    "shear": lambda **kw: Shear(kw.get("a", 0.1)),
    "fold": lambda **kw: Fold(),
    "u1": lambda **kw: U1(),
    "u2": lambda **kw: U2(),
    "u3": lambda **kw: U3(),
    "u_composed": lambda **kw: u_composed(kw.get("alpha", 0.9 * math.pi)),
}


def get_map(name: str, **params) -> Deformation:
    try:
        return CATALOG[name](**params)
    except KeyError:
        raise ValueError(f"unknown map {name!r}; choose from {sorted(CATALOG)}") from None
