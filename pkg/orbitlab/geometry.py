"""Cohomogeneity-one warped products M = I x T^m with metric du^2 + f(u)^2 g_fiber.

The quotient of M by the torus acting on the fibers is the interval I; the
u-coordinate is arc length along the meridians, which are geodesics, so
everything horizontal is one-dimensional and affine in u.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GeodesicEscapeError, InsufficientDataError, SingularOrbitError
from .profiles import Profile, profile_from_spec

PROFILE_SAMPLES = 513


@dataclass(frozen=True)
class WarpedManifold:
    u_min: float
    u_max: float
    profile: Profile
    fiber_dim: int = 1
    fiber_period: float = 2 * math.pi
    # Supports are clamped this fraction of |I| away from the endpoint orbits.
    clamp_fraction: float = 1e-3

    def __post_init__(self) -> None:
        if not self.u_min < self.u_max:
            raise DomainError(f"empty quotient interval ({self.u_min}, {self.u_max})")
        if self.fiber_dim < 1:
            raise DomainError(f"fiber_dim must be positive, got {self.fiber_dim}")
        if self.fiber_period <= 0:
            raise DomainError(f"fiber_period must be positive, got {self.fiber_period}")
        if not 0 <= self.clamp_fraction < 0.5:
            raise DomainError(f"clamp_fraction must lie in [0, 0.5), got {self.clamp_fraction}")
        samples = np.linspace(self.u_min, self.u_max, PROFILE_SAMPLES)[1:-1]
        values = self.profile.value(samples)
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            bad = samples[np.argmin(values)]
            raise DomainError(f"profile {self.profile.name!r} is not positive inside the interval (u={bad:.6g})")

    @classmethod
    def from_spec(cls, spec) -> WarpedManifold:
        """Build from a `config.ManifoldSpec`."""
        return cls(
            u_min=float(spec.u_min),
            u_max=float(spec.u_max),
            profile=profile_from_spec(spec.profile),
            fiber_dim=int(spec.fiber_dim),
            fiber_period=float(spec.fiber_period),
            clamp_fraction=float(spec.clamp_fraction),
        )

    @property
    def N(self) -> int:
        return self.fiber_dim + 1

    @property
    def length(self) -> float:
        return self.u_max - self.u_min

    @property
    def principal_bounds(self) -> tuple[float, float]:
        eps = self.clamp_fraction * self.length
        return self.u_min + eps, self.u_max - eps

    @property
    def fiber_volume(self) -> float:
        return self.fiber_period**self.fiber_dim

    def f(self, u) -> np.ndarray:
        return self.profile.value(np.asarray(u, dtype=float))

    def inside(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (u > self.u_min) & (u < self.u_max)


@dataclass(frozen=True, eq=False)
class QuotientGrid:
    """Strictly increasing nodes on the quotient interval.

    Grids built from configs are uniform; displacement paths carry the
    transported (Lagrangian) nodes, which stay strictly increasing before
    any caustic but are no longer evenly spaced.
    """

    nodes: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise DomainError("a quotient grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise DomainError("quotient grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise DomainError("quotient grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> QuotientGrid:
        return cls(np.linspace(a, b, n))

    @classmethod
    def principal(cls, mf: WarpedManifold, n: int) -> QuotientGrid:
        lo, hi = mf.principal_bounds
        return cls.uniform(lo, hi, n)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> float | None:
        """Uniform spacing h, or None for a non-uniform grid."""
        d = np.diff(self.nodes)
        h = (self.nodes[-1] - self.nodes[0]) / (self.n - 1)
        return float(h) if np.allclose(d, h, rtol=1e-9, atol=0.0) else None

    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        d = np.diff(self.nodes)
        w = np.zeros(self.n)
        w[:-1] += d / 2
        w[1:] += d / 2
        return w


def require_principal(mf: WarpedManifold, nodes, what: str = "support") -> None:
    """Reject nodes outside the clamped principal stratum."""
    lo, hi = mf.principal_bounds
    nodes = np.asarray(nodes, dtype=float)
    tol = 1e-12 * max(1.0, mf.length)
    bad = (nodes < lo - tol) | (nodes > hi + tol)
    if np.any(bad):
        u = nodes[np.argmax(bad)]
        raise DomainError(f"{what} node u={u:.6g} lies outside the principal stratum [{lo:.6g}, {hi:.6g}]")


def _require_inside(mf: WarpedManifold, u, what: str = "u") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(mf.inside(u)):
        bad = np.atleast_1d(u)[~np.atleast_1d(mf.inside(u))][0]
        raise DomainError(f"{what}={bad:.6g} outside the quotient interval ({mf.u_min:.6g}, {mf.u_max:.6g})")
    return u


# ---------------------------------------------------------------------------
# Volume and curvature
# ---------------------------------------------------------------------------


def quotient_volume_density(mf: WarpedManifold, u):
    """Density of the pushed-forward volume pi_* vol with respect to du: f(u)^m P^m."""
    u = _require_inside(mf, u)
    out = mf.f(u) ** mf.fiber_dim * mf.fiber_volume
    return float(out) if np.ndim(out) == 0 else out


def horizontal_ricci(mf: WarpedManifold, u):
    """Ric(d/du) = -m f''(u)/f(u), the Ricci curvature on the unit horizontal direction."""
    u = _require_inside(mf, u)
    f = mf.f(u)
    if np.any(f <= 0):
        raise SingularOrbitError(f"profile vanishes at u={np.atleast_1d(u)[np.argmin(np.atleast_1d(f))]:.6g}")
    out = -mf.fiber_dim * mf.profile.second(u) / f
    return float(out) if np.ndim(out) == 0 else out


def horizontal_ricci_fd(mf: WarpedManifold, u, h: float):
    """Finite-difference Ricci oracle: second derivative of f by a central stencil."""
    if h <= 0:
        raise DomainError(f"stencil width must be positive, got {h}")
    u = np.asarray(u, dtype=float)
    if not (np.all(mf.inside(u - h)) and np.all(mf.inside(u + h))):
        raise DomainError(f"stencil [u-h, u+h] leaves ({mf.u_min:.6g}, {mf.u_max:.6g})")
    f0 = mf.f(u)
    if np.any(f0 <= 0):
        raise SingularOrbitError("profile vanishes at the stencil centre")
    d2 = (mf.f(u + h) - 2 * f0 + mf.f(u - h)) / h**2
    out = -mf.fiber_dim * d2 / f0
    return float(out) if np.ndim(out) == 0 else out


def exp_horizontal(mf: WarpedManifold, u: float, v: float, t: float) -> float:
    """Exponential map along a meridian: u + t v, provided the geodesic stays on [u_min, u_max]."""
    end = u + t * v
    if mf.u_min <= end <= mf.u_max:
        return end
    wall = mf.u_max if end > mf.u_max else mf.u_min
    exit_time = (wall - u) / v if v != 0 else 0.0
    raise GeodesicEscapeError(
        f"horizontal geodesic from u={u:.6g} with v={v:.6g} leaves the interval at t={exit_time:.6g}",
        exit_time=exit_time,
    )


def riccati_defect(mf: WarpedManifold, u0: float, v0: float, delta_samples: Sequence[tuple[float, float]]) -> float:
    """Max residual of N delta''/delta + Ric(gamma') along one transported particle.

    What remains is the trace-free Hilbert-Schmidt term of the Riccati
    identity, which stays of higher order for isotropic initial fields.
    """
    if len(delta_samples) < 5:
        raise InsufficientDataError(f"need at least 5 delta samples, got {len(delta_samples)}")
    times = np.array([s[0] for s in delta_samples], dtype=float)
    delta = np.array([s[1] for s in delta_samples], dtype=float)
    steps = np.diff(times)
    dt = steps[0]
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=1e-15):
        raise InsufficientDataError("delta samples must be uniformly spaced in increasing time")
    second = (delta[2:] - 2 * delta[1:-1] + delta[:-2]) / dt**2
    positions = u0 + times[1:-1] * v0
    ric = horizontal_ricci(mf, positions) * v0**2
    return float(np.max(np.abs(mf.N * second / delta[1:-1] + ric)))
