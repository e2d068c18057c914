"""Run configuration: flat ``key = value`` files with dotted keys.

Sections are optional; ``[degree]`` followed by ``samples = 1000`` is the
same as ``degree.samples = 1000`` at top level.  A JSON manifest written by
a previous run is also accepted and its ``config`` block is reused.
"""
from __future__ import annotations

import configparser
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

ROOT_SECTION = "__root__"
OUT_ENV = "POLYINJ_OUT"


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad type or out-of-range value."""


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if not text:
        return []
    return [float(_fraction(v)) for v in text.replace(",", " ").split()]


def _fraction(tok) -> float:
    tok = str(tok).strip()
    if "/" in tok:
        a, b = tok.split("/", 1)
        return float(a) / float(b)
    if tok.lower() == "pi":
        return math.pi
    return float(tok)


def _names(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [t for t in str(text).replace(",", " ").split() if t]


@dataclass(frozen=True)
class Key:
    parse: Callable[[Any], Any]
    default: Any
    check: Callable[[Any], bool] = lambda v: True
    doc: str = ""


def _pos(v) -> bool:
    return v > 0


SCHEMA: dict[str, Key] = {
    "domain.shape": Key(str, "auto", lambda v: v in ("auto", "rectangle", "unit-square", "unit-disk", "disk", "polygon"),
                        "auto picks the default domain of each subcommand"),
    "domain.params": Key(_floats, [], doc="shape parameters (rectangle: a b c d)"),
    "map.name": Key(str, "auto", doc="deformation catalog name"),
    "map.alpha": Key(_fraction, 0.9 * math.pi, lambda v: 0.8 * math.pi < v < math.pi, "opening angle of the last factor"),
    "map.shear": Key(float, 0.1, doc="shear amplitude"),
    "counterexample.samples": Key(int, 10 ** 6, _pos),
    "counterexample.resolution": Key(int, 128, lambda v: v >= 64),
    "counterexample.export": Key(int, 20000, lambda v: v >= 0, "rows of the sampled-points CSV"),
    "counterexample.trace_samples": Key(int, 4096, lambda v: v >= 256),
    "degree.samples": Key(int, 10 ** 6, _pos),
    "degree.resolution": Key(int, 128, lambda v: v >= 64),
    "degree.min_hits": Key(int, 30, _pos),
    "identities.phi_family": Key(_names, ["1", "x1x2", "bump"]),
    "identities.g_family": Key(_names, ["y", "quad", "cutoff"]),
    "identities.h_list": Key(_floats, [1 / 32, 1 / 64, 1 / 128, 1 / 256, 1 / 512],
                             lambda v: len(v) >= 3 and all(h > 0 for h in v)),
    "energy.W": Key(str, "standard", lambda v: v == "standard"),
    "energy.h": Key(str, "t2+1/t", lambda v: v in ("t2+1/t", "t2-log")),
    "energy.p": Key(float, 2.0, lambda v: v > 1),
    "energy.c1": Key(float, 1.0, _pos),
    "energy.a": Key(float, 1.0, _pos),
    "energy.b": Key(float, 1.0, _pos),
    "energy.U": Key(str, "zero", lambda v: v in ("zero", "pressure", "membrane")),
    "energy.eps0": Key(float, 1.0, _pos),
    "energy.pi0": Key(float, 1.0),
    "energy.c": Key(float, 0.0, lambda v: v >= 0, "coercive surface term, 0 disables"),
    "energy.trials": Key(int, 1000, _pos),
    "minimize.class": Key(str, "a1", lambda v: v in ("a1", "a2", "a3")),
    "minimize.mesh_h": Key(float, 0.05, _pos),
    "minimize.max_iter": Key(int, 500, lambda v: v >= 0),
    "minimize.tol": Key(float, 1e-6, _pos),
    "minimize.gamma": Key(str, "all", doc="'all' or polygon edge indices"),
    "minimize.u0_scale": Key(float, 1.0, _pos, "A1 boundary data u0 = scale * identity"),
    "minimize.K": Key(str, "box -10 -10 10 10", doc="'box x0 y0 x1 y1' or 'disk cx cy r'"),
    "minimize.check_samples": Key(int, 100000, lambda v: v >= 0, "injectivity check samples, 0 disables"),
    "run.seed": Key(int, 0, lambda v: v >= 0),
    "run.threads": Key(int, 0, lambda v: v >= 0, "0 uses all cores"),
    "run.out": Key(str, "", doc="output directory"),
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def threads(self) -> int:
        t = self.values["run.threads"]
        return t if t > 0 else (os.cpu_count() or 1)

    @property
    def out_dir(self) -> Path:
        out = self.values["run.out"] or os.environ.get(OUT_ENV, "") or "polyinj_out"
        return Path(out)

    def echo(self) -> dict[str, Any]:
        """JSON-safe copy of every resolved key."""
        return {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in sorted(self.values.items())}

    def K(self) -> tuple:
        parts = self.values["minimize.K"].split()
        if not parts or parts[0] not in ("box", "disk"):
            raise ConfigError("minimize.K must start with 'box' or 'disk'")
        nums = _floats(" ".join(parts[1:]))
        if parts[0] == "box":
            if len(nums) != 4 or nums[0] >= nums[2] or nums[1] >= nums[3]:
                raise ConfigError("minimize.K box needs x0 y0 x1 y1 with x0 < x1, y0 < y1")
            return ("box", tuple(nums[:2]), tuple(nums[2:]))
        if len(nums) != 3 or nums[2] <= 0:
            raise ConfigError("minimize.K disk needs cx cy r with r > 0")
        return ("disk", tuple(nums[:2]), nums[2])


def _coerce(key: str, raw) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    entry = SCHEMA[key]
    try:
        val = entry.parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    if not entry.check(val):
        raise ConfigError(f"{key}: value {raw!r} out of range")
    return val


def read_file(path: str | os.PathLike) -> dict[str, Any]:
    """Raw key/value pairs from a config file or a previous manifest."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    text = p.read_text()
    if p.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        return dict(data.get("config", data))
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case (energy.W, energy.U)
    try:
        cp.read_string(f"[{ROOT_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from None
    out = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            out[k if sec == ROOT_SECTION else f"{sec}.{k}"] = v
    return out


def load(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then file values, then command-line overrides."""
    vals = {k: entry.default for k, entry in SCHEMA.items()}
    if path:
        for k, v in read_file(path).items():
            vals[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            vals[k] = _coerce(k, v)
    return RunConfig(vals)
