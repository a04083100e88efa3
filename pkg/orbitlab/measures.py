"""Absolutely continuous measures on M and on its quotient, and their orbit disintegration.

A measure on M is a density rho(u, theta) with respect to vol on a
(quotient grid) x (periodic fiber grid) product. Disintegrating it along the
torus orbits gives the quotient marginal pi_* mu, stored as a density q with
respect to pi_* vol, and one conditional per orbit, stored as a density
with respect to the normalized uniform fiber measure vol_0. With both
conventions the gluing identity is the literal product rho = q * c_u.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .config import DensitySpec, ReferenceSpec
from .errors import ConfigError, DegenerateMeasureError, DomainError, MassError, ShapeError
from .geometry import QuotientGrid, WarpedManifold, require_principal

logger = logging.getLogger(__name__)

DENSITY_PRESETS = ("uniform-band", "gaussian-on-quotient", "two-bump", "bump", "random")


def fiber_nodes(fiber_dim: int, n_theta: int, period: float) -> np.ndarray:
    """Product grid on the torus fiber, shape (n_theta**m, m), C order."""
    axis = period * np.arange(n_theta) / n_theta
    mesh = np.meshgrid(*([axis] * fiber_dim), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def _check_density(values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{what} density has non-finite entries")
    if np.any(values < 0):
        raise DomainError(f"{what} density is negative somewhere (min {values.min():.3g})")
    return values


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AbsContMeasure:
    manifold: WarpedManifold
    grid: QuotientGrid
    n_theta: int
    density: np.ndarray

    def __post_init__(self) -> None:
        rho = _check_density(self.density, "measure")
        shape = (self.grid.n, self.n_theta**self.manifold.fiber_dim)
        if rho.shape != shape:
            raise ShapeError(f"density shape {rho.shape} does not match grid {shape}")
        require_principal(self.manifold, self.grid.nodes)
        object.__setattr__(self, "density", rho)

    def fiber_mean(self) -> np.ndarray:
        return self.density.mean(axis=1)

    def mass(self) -> float:
        mf = self.manifold
        line = self.fiber_mean() * mf.f(self.grid.nodes) ** mf.fiber_dim * mf.fiber_volume
        return float(self.grid.weights() @ line)

    def normalized(self) -> AbsContMeasure:
        mass = self.mass()
        if not mass > 0:
            raise MassError("cannot normalize a measure with zero mass")
        return AbsContMeasure(self.manifold, self.grid, self.n_theta, self.density / mass)


@dataclass(frozen=True, eq=False)
class QuotientMeasure:
    """Density q with respect to pi_* vol on a quotient grid.

    `cumulative` is set for measures transported along a displacement path:
    the mass below each particle is invariant, so it is carried exactly
    instead of being re-integrated on the moved nodes.
    """

    manifold: WarpedManifold
    grid: QuotientGrid
    density: np.ndarray
    cumulative: np.ndarray | None = None

    def __post_init__(self) -> None:
        q = _check_density(self.density, "quotient")
        if q.shape != (self.grid.n,):
            raise ShapeError(f"quotient density has {q.shape} entries for {self.grid.n} nodes")
        require_principal(self.manifold, self.grid.nodes)
        object.__setattr__(self, "density", q)
        if self.cumulative is not None:
            cum = np.asarray(self.cumulative, dtype=float)
            if cum.shape != q.shape or np.any(np.diff(cum) < 0):
                raise ShapeError("cumulative mass must be nondecreasing with one entry per node")
            object.__setattr__(self, "cumulative", cum)

    def line_density(self) -> np.ndarray:
        """Density with respect to du: q f^m P^m."""
        mf = self.manifold
        return self.density * mf.f(self.grid.nodes) ** mf.fiber_dim * mf.fiber_volume

    def quadrature_mass(self) -> float:
        return float(self.grid.weights() @ self.line_density())

    def mass(self) -> float:
        if self.cumulative is not None:
            return float(self.cumulative[-1])
        return self.quadrature_mass()

    def cdf(self) -> np.ndarray:
        if self.cumulative is not None:
            return self.cumulative
        return cumulative_trapezoid(self.line_density(), self.grid.nodes, initial=0.0)

    def normalized(self) -> QuotientMeasure:
        mass = self.mass()
        if not mass > 0:
            raise DegenerateMeasureError("quotient measure has empty support")
        cum = None if self.cumulative is None else self.cumulative / mass
        return QuotientMeasure(self.manifold, self.grid, self.density / mass, cum)


@dataclass(frozen=True, eq=False)
class OrbitConditional:
    """Probability density on one orbit with respect to the normalized fiber measure."""

    u: float
    density: np.ndarray
    n_theta: int
    fiber_dim: int = 1

    def __post_init__(self) -> None:
        rho = _check_density(self.density, "conditional")
        if rho.shape != (self.n_theta**self.fiber_dim,):
            raise ShapeError(f"conditional has {rho.shape} entries, expected {self.n_theta**self.fiber_dim}")
        object.__setattr__(self, "density", rho)

    def mass(self) -> float:
        return float(self.density.mean())


@dataclass(frozen=True, eq=False)
class Disintegration:
    marginal: QuotientMeasure
    conditionals: tuple[OrbitConditional, ...]
    n_theta: int
    # Grid indices of orbits inside the support that carry no fiber mass.
    degenerate: tuple[int, ...] = field(default=())

    def conditional_matrix(self) -> np.ndarray:
        return np.stack([c.density for c in self.conditionals])


def uniform_conditional(mf: WarpedManifold, n_theta: int, u: float | None = None) -> OrbitConditional:
    """vol_0: the normalized uniform measure on a principal orbit."""
    if u is None:
        u = 0.5 * sum(mf.principal_bounds)
    return OrbitConditional(u=float(u), density=np.ones(n_theta**mf.fiber_dim), n_theta=n_theta, fiber_dim=mf.fiber_dim)


# ---------------------------------------------------------------------------
# Pushforward, disintegration, gluing
# ---------------------------------------------------------------------------


def pushforward_quotient(mu: AbsContMeasure) -> QuotientMeasure:
    """pi_* mu as a density with respect to pi_* vol (the fiber average of rho)."""
    return QuotientMeasure(mu.manifold, mu.grid, mu.fiber_mean())


def disintegrate(mu: AbsContMeasure) -> Disintegration:
    """Split mu into its quotient marginal and one conditional per orbit.

    Orbits with zero fiber mass strictly between the first and last charged
    orbit are flagged as degenerate; they get the uniform conditional and
    zero marginal weight, which is harmless because the disintegration is
    only defined pi_* mu almost everywhere.
    """
    marginal = pushforward_quotient(mu)
    mean = marginal.density
    charged = mean > 0
    safe = np.where(charged, mean, 1.0)
    conditional = np.where(charged[:, None], mu.density / safe[:, None], 1.0)

    degenerate: tuple[int, ...] = ()
    if np.any(charged):
        idx = np.flatnonzero(charged)
        inner = np.arange(idx[0], idx[-1] + 1)
        degenerate = tuple(int(i) for i in inner if not charged[i])
        if degenerate:
            logger.warning("%d degenerate orbit(s) inside the support, first at u=%.6g",
                           len(degenerate), mu.grid.nodes[degenerate[0]])

    conditionals = tuple(
        OrbitConditional(u=float(u), density=conditional[i], n_theta=mu.n_theta, fiber_dim=mu.manifold.fiber_dim)
        for i, u in enumerate(mu.grid.nodes)
    )
    return Disintegration(marginal=marginal, conditionals=conditionals, n_theta=mu.n_theta, degenerate=degenerate)


def glue(d: Disintegration) -> AbsContMeasure:
    """Rebuild mu from its disintegration: mu(A) = integral of mu_x(A) d(pi_* mu)(x)."""
    marginal = d.marginal
    if len(d.conditionals) != marginal.grid.n:
        raise ShapeError(f"{len(d.conditionals)} conditionals for {marginal.grid.n} quotient nodes")
    for c, u in zip(d.conditionals, marginal.grid.nodes, strict=True):
        if c.n_theta != d.n_theta or not np.isclose(c.u, u, rtol=0, atol=1e-12):
            raise ShapeError(f"conditional at u={c.u:.6g} does not match quotient node {u:.6g}")
    density = marginal.density[:, None] * d.conditional_matrix()
    return AbsContMeasure(marginal.manifold, marginal.grid, d.n_theta, density)


def reference_conditional(
    potential: float | Callable[[float, np.ndarray], np.ndarray],
    mf: WarpedManifold,
    n_theta: int,
    checkpoints: int = 5,
) -> OrbitConditional:
    """nu_0 for the finite reference measure nu = exp(-V) vol.

    V(u, theta) must not change along horizontal directions, so that every
    orbit sees the same conditional; `checkpoints` quotient points are compared.
    """
    theta = fiber_nodes(mf.fiber_dim, n_theta, mf.fiber_period)
    lo, hi = mf.principal_bounds
    if callable(potential):
        rows = [np.broadcast_to(np.asarray(potential(float(u), theta), dtype=float), (len(theta),))
                for u in np.linspace(lo, hi, checkpoints)]
        for u, row in zip(np.linspace(lo, hi, checkpoints)[1:], rows[1:], strict=True):
            if not np.allclose(row, rows[0], rtol=1e-12, atol=1e-12):
                raise DomainError(f"reference potential varies along horizontal directions (at u={u:.6g})")
        values = rows[0]
    else:
        values = np.full(len(theta), float(potential))
    if not np.all(np.isfinite(values)):
        raise MassError("reference weight exp(-V) is not integrable on the fiber")
    weight = np.exp(-(values - values.min()))
    total = weight.mean()
    if not np.isfinite(total) or total <= 0:
        raise MassError("reference weight exp(-V) is not integrable on the fiber")
    return OrbitConditional(u=0.5 * (lo + hi), density=weight / total, n_theta=n_theta, fiber_dim=mf.fiber_dim)


def reference_from_spec(mf: WarpedManifold, spec: ReferenceSpec, n_theta: int) -> OrbitConditional | None:
    """nu_0 for V(theta) = amplitude * sum_i cos(mode * 2 pi theta_i / period); None for vol_0."""
    if spec.amplitude == 0:
        return None
    wave = 2 * np.pi * spec.mode / mf.fiber_period

    def potential(u: float, theta: np.ndarray) -> np.ndarray:
        return spec.amplitude * np.cos(wave * theta).sum(axis=1)

    return reference_conditional(potential, mf, n_theta)


# ---------------------------------------------------------------------------
# Preset generators
# ---------------------------------------------------------------------------


def _raised_cosine(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < 1, np.cos(0.5 * np.pi * np.clip(x, -1, 1)) ** 4, 0.0)


def _band(mf: WarpedManifold, params: dict, lo: float, hi: float) -> tuple[float, float]:
    a = float(params.get("lo", lo))
    b = float(params.get("hi", hi))
    plo, phi = mf.principal_bounds
    a, b = max(a, plo), min(b, phi)
    if not a < b:
        raise ConfigError(f"density band [{a:.6g}, {b:.6g}] is empty inside the principal stratum")
    return a, b


def quotient_profile(mf: WarpedManifold, spec: DensitySpec, n_u: int, seed: int = 0) -> tuple[QuotientGrid, np.ndarray]:
    """Grid and unnormalized quotient density (w.r.t. pi_* vol) for a preset."""
    p = spec.params
    plo, phi = mf.principal_bounds
    mid = 0.5 * (plo + phi)
    if spec.preset == "uniform-band":
        a, b = _band(mf, p, plo, phi)
        grid = QuotientGrid.uniform(a, b, n_u)
        return grid, np.ones(n_u)
    if spec.preset == "gaussian-on-quotient":
        c = float(p.get("center", mid))
        w = float(p.get("width", 0.1 * mf.length))
        a, b = _band(mf, p, c - 4 * w, c + 4 * w)
        grid = QuotientGrid.uniform(a, b, n_u)
        return grid, np.exp(-0.5 * ((grid.nodes - c) / w) ** 2)
    if spec.preset == "two-bump":
        centers = p.get("centers", [plo + 0.3 * (phi - plo), plo + 0.7 * (phi - plo)])
        w = float(p.get("width", 0.06 * mf.length))
        weights = p.get("weights", [1.0] * len(centers))
        a, b = _band(mf, p, plo, phi)
        grid = QuotientGrid.uniform(a, b, n_u)
        q = sum(float(k) * np.exp(-0.5 * ((grid.nodes - float(c)) / w) ** 2) for c, k in zip(centers, weights, strict=True))
        return grid, np.asarray(q)
    if spec.preset == "bump":
        c = float(p.get("center", mid))
        r = float(p.get("radius", 0.1 * mf.length))
        grid = QuotientGrid.uniform(c - r, c + r, n_u)
        return grid, _raised_cosine((grid.nodes - c) / r)
    if spec.preset == "random":
        rng = np.random.default_rng(seed)
        a, b = _band(mf, p, plo, phi)
        grid = QuotientGrid.uniform(a, b, n_u)
        x = (grid.nodes - a) / (b - a)
        k = np.arange(1, 5)
        coef = rng.normal(size=(2, 4)) / k
        log_q = coef[0] @ np.cos(np.pi * np.outer(k, x)) + coef[1] @ np.sin(np.pi * np.outer(k, x))
        return grid, np.exp(0.7 * log_q)
    raise ConfigError(f"unknown density preset {spec.preset!r} (expected one of {', '.join(DENSITY_PRESETS)})")


def make_quotient_measure(mf: WarpedManifold, spec: DensitySpec, n_u: int, seed: int = 0) -> QuotientMeasure:
    grid, q = quotient_profile(mf, spec, n_u, seed)
    return QuotientMeasure(mf, grid, q).normalized()


def make_density(mf: WarpedManifold, spec: DensitySpec, n_u: int, n_theta: int, seed: int = 0) -> AbsContMeasure:
    """Preset density on M: quotient profile times a positive fiber modulation.

    `fiber_modulation` (default 0) tilts the fiber by 1 + eps cos(theta_1);
    the `random` preset draws its own smooth modulation from the seed.
    """
    grid, q = quotient_profile(mf, spec, n_u, seed)
    theta = fiber_nodes(mf.fiber_dim, n_theta, mf.fiber_period)
    phase = 2 * np.pi * theta / mf.fiber_period
    if spec.preset == "random":
        rng = np.random.default_rng([seed, 1])
        k = np.arange(1, 4)
        log_b = np.zeros((grid.n, len(theta)))
        x = (grid.nodes - grid.nodes[0]) / (grid.nodes[-1] - grid.nodes[0])
        for dim in range(mf.fiber_dim):
            a_cos, a_sin, drift = rng.normal(size=(3, 3)) / k
            angles = np.outer(phase[:, dim], k)
            fiber = np.cos(angles) @ a_cos + np.sin(angles) @ a_sin
            log_b += np.outer(1.0 + drift[0] * x, fiber)
        modulation = np.exp(0.5 * log_b)
    else:
        eps = float(spec.params.get("fiber_modulation", 0.0))
        if not -1 < eps < 1:
            raise ConfigError(f"fiber_modulation must lie in (-1, 1), got {eps}")
        modulation = np.broadcast_to(1.0 + eps * np.cos(phase[:, 0]), (grid.n, len(theta)))
    return AbsContMeasure(mf, grid, n_theta, q[:, None] * modulation).normalized()
