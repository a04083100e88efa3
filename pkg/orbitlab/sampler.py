"""Seeded localized geodesics for curvature certification.

Each geodesic starts from a raised-cosine bump of radius r around a centre
u0 and follows the potential whose gradient is a * f(u)/f(u0). At t = 0
that potential has the same Hessian eigenvalue a f'(u0)/f(u0) horizontally
and along every fiber direction, so the transport starts isotropic and the
energy's second derivative is driven by the horizontal Ricci curvature.
The potential is then scaled by theta, which keeps the map monotone.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from .config import DensitySpec, SamplerConfig, Tolerances
from .errors import CausticError, ConfigError
from .geometry import WarpedManifold
from .measures import QuotientMeasure, make_quotient_measure
from .transport import DisplacementPath, MongeMap, displacement_interpolate

logger = logging.getLogger(__name__)

# Displacements are drawn from [MIN_SEPARATION_SHARE, 1] x max_separation.
MIN_SEPARATION_SHARE = 0.25


class GeodesicSpec(NamedTuple):
    id: int
    center: float
    # Endpoint separation of the unscaled potential at the centre.
    displacement: float
    theta: float
    radius: float


def isotropic_velocity(mf: WarpedManifold, nodes, u0: float, speed: float) -> np.ndarray:
    return speed * mf.f(nodes) / float(mf.f(u0))


def bump_source(mf: WarpedManifold, u0: float, radius: float, n_u: int) -> QuotientMeasure:
    return make_quotient_measure(mf, DensitySpec("bump", {"center": u0, "radius": radius}), n_u)


def path_times(times, n_steps: int) -> np.ndarray:
    """Uniform time grid with n_steps intervals, refined to contain every requested time."""
    base = np.linspace(0.0, 1.0, n_steps + 1)
    merged = np.concatenate([base, np.asarray(times, dtype=float)])
    return np.unique(np.round(merged, 12))


def isotropic_map(mf: WarpedManifold, source: QuotientMeasure, u0: float, displacement: float, theta: float) -> MongeMap:
    nodes = source.grid.nodes
    monge = MongeMap.from_velocity(mf, nodes, theta * isotropic_velocity(mf, nodes, u0, displacement))
    if not monge.is_monotone():
        raise CausticError(f"theta={theta:g} is too large: the scaled map is not monotone near u={u0:.6g}")
    return monge


def build_geodesic(
    mf: WarpedManifold,
    spec: GeodesicSpec,
    times,
    n_u: int,
    tolerances: Tolerances | None = None,
) -> DisplacementPath:
    source = bump_source(mf, spec.center, spec.radius, n_u)
    monge = isotropic_map(mf, source, spec.center, spec.displacement, spec.theta)
    return displacement_interpolate(source, monge, times, tolerances)


def _stays_inside(mf: WarpedManifold, center: float, radius: float, displacement: float, theta: float) -> bool:
    ends = np.array([center - radius, center + radius])
    moved = ends + theta * isotropic_velocity(mf, ends, center, displacement)
    lo, hi = mf.principal_bounds
    return bool(np.all((moved >= lo) & (moved <= hi)))


def sample_geodesics(mf: WarpedManifold, cfg: SamplerConfig) -> list[GeodesicSpec]:
    """Draw cfg.count localized geodesics, cycling through cfg.thetas.

    A geodesic whose support would be pushed out of the principal stratum
    is turned around so that it moves toward the interior.
    """
    if cfg.count < 1:
        raise ConfigError(f"sampler.count must be positive, got {cfg.count}")
    if not cfg.thetas:
        raise ConfigError("sampler.thetas is empty")
    radius = cfg.support_radius * mf.length
    separation = cfg.max_separation * mf.length
    lo, hi = cfg.center_window if cfg.center_window is not None else mf.principal_bounds
    plo, phi = mf.principal_bounds
    lo, hi = max(lo, plo) + radius, min(hi, phi) - radius
    if not lo < hi:
        raise ConfigError(f"no room for supports of radius {radius:.4g} inside the sampling window")

    rng = np.random.default_rng(cfg.seed)
    centers = rng.uniform(lo, hi, size=cfg.count)
    magnitudes = rng.uniform(MIN_SEPARATION_SHARE, 1.0, size=cfg.count) * separation
    signs = rng.choice([-1.0, 1.0], size=cfg.count)
    specs = []
    for i in range(cfg.count):
        center = float(centers[i])
        displacement = float(signs[i] * magnitudes[i])
        theta = float(cfg.thetas[i % len(cfg.thetas)])
        if not _stays_inside(mf, center, radius, displacement, theta):
            logger.debug("geodesic %d at u0=%.6g turned toward the interior", i, center)
            displacement = -displacement
        specs.append(GeodesicSpec(id=i, center=center, displacement=displacement, theta=theta, radius=radius))
    return specs
