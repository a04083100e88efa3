"""Warping profiles f(u) with first and second derivatives.

Presets are closed-form; user profiles are natural cubic splines whose
derivatives come straight from the spline coefficients, so curvature never
depends on numerical differentiation of sampled data.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError

ArrayFn = Callable[[np.ndarray], np.ndarray]

PRESETS = ("linear", "sin", "cosh", "sinh", "constant")


@dataclass(frozen=True)
class Profile:
    name: str
    value: ArrayFn
    first: ArrayFn
    second: ArrayFn

    def __call__(self, u):
        return self.value(np.asarray(u, dtype=float))


def _scaled(name: str, scale: float, f: ArrayFn, f1: ArrayFn, f2: ArrayFn) -> Profile:
    return Profile(
        name=name,
        value=lambda u: scale * f(np.asarray(u, dtype=float)),
        first=lambda u: scale * f1(np.asarray(u, dtype=float)),
        second=lambda u: scale * f2(np.asarray(u, dtype=float)),
    )


def preset(name: str, scale: float = 1.0) -> Profile:
    """Closed-form profile by name; `scale` multiplies f (and its derivatives)."""
    if scale <= 0:
        raise ConfigError(f"profile scale must be positive, got {scale}")
    if name == "linear":
        return _scaled(name, scale, lambda u: u, np.ones_like, np.zeros_like)
    if name == "sin":
        return _scaled(name, scale, np.sin, np.cos, lambda u: -np.sin(u))
    if name == "cosh":
        return _scaled(name, scale, np.cosh, np.sinh, np.cosh)
    if name == "sinh":
        return _scaled(name, scale, np.sinh, np.cosh, np.sinh)
    if name == "constant":
        return _scaled(name, scale, np.ones_like, np.zeros_like, np.zeros_like)
    raise ConfigError(f"unknown profile preset {name!r} (expected one of {', '.join(PRESETS)})")


def spline(knots_u, knots_f) -> Profile:
    u = np.asarray(knots_u, dtype=float)
    f = np.asarray(knots_f, dtype=float)
    if u.ndim != 1 or u.shape != f.shape or len(u) < 4:
        raise ConfigError("spline profile needs at least 4 (u, f) knots of equal length")
    if np.any(np.diff(u) <= 0):
        raise ConfigError("spline knots must be strictly increasing in u")
    cs = CubicSpline(u, f, bc_type="natural")
    d1 = cs.derivative(1)
    d2 = cs.derivative(2)
    return Profile(name="spline", value=cs, first=d1, second=d2)


def profile_from_spec(spec: Any) -> Profile:
    """Build a profile from a config value: a preset name, {preset, scale}, or {spline: {u, f}}."""
    if isinstance(spec, Profile):
        return spec
    if isinstance(spec, str):
        return preset(spec)
    if isinstance(spec, dict):
        if "spline" in spec:
            knots = spec["spline"]
            if not isinstance(knots, dict) or "u" not in knots or "f" not in knots:
                raise ConfigError("spline profile must be a mapping with 'u' and 'f' knot lists")
            return spline(knots["u"], knots["f"])
        if "preset" in spec:
            return preset(spec["preset"], float(spec.get("scale", 1.0)))
    raise ConfigError(f"cannot interpret profile spec {spec!r}")
