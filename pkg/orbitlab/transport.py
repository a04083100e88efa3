"""Optimal transport on the quotient interval and between orbit conditionals.

Quotient transport is one-dimensional, so the optimal map is the monotone
rearrangement T = Q_1 o F_0 and W2 is an L2 distance between quantile
functions. Displacement paths are Lagrangian: every grid node of the source
is a particle moving with constant velocity T(u) - u, and the mass below a
particle never changes, so each intermediate measure carries its exact
cumulative mass.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .config import Tolerances
from .errors import (
    CausticError,
    DegenerateMeasureError,
    DegenerateOrbitError,
    DomainError,
    GeodesicEscapeError,
    MarginalError,
    ShapeError,
)
from .geometry import QuotientGrid, WarpedManifold, exp_horizontal
from .kantorovich import MAX_ATOMS
from .measures import OrbitConditional, QuotientMeasure, fiber_nodes, uniform_conditional

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Quantile helpers
# ---------------------------------------------------------------------------


def _unit_cdf(measure: QuotientMeasure) -> np.ndarray:
    cdf = measure.cdf()
    total = cdf[-1]
    if not total > 0:
        raise DegenerateMeasureError("quotient measure has empty support")
    return cdf / total


def _quantile(cdf: np.ndarray, nodes: np.ndarray, levels, side: str = "left") -> np.ndarray:
    """Inverse of a piecewise-linear CDF.

    side="left" gives the left limit at levels where the quantile jumps
    (a zero-mass gap in the support), side="right" the right limit. Level 0
    always maps to the last node with zero cumulative mass.
    """
    s = np.clip(np.asarray(levels, dtype=float), 0.0, 1.0)
    n = len(nodes)
    right = np.clip(np.searchsorted(cdf, s, side="right"), 1, n - 1)
    left = np.clip(np.searchsorted(cdf, s, side="left"), 1, n - 1)
    idx = np.where((side == "right") | (s <= 0), right, left)
    lo, hi = cdf[idx - 1], cdf[idx]
    span = hi - lo
    frac = np.where(span > 0, (s - lo) / np.where(span > 0, span, 1.0), 1.0)
    frac = np.clip(frac, 0.0, 1.0)
    return nodes[idx - 1] + frac * (nodes[idx] - nodes[idx - 1])


def _quantile_w2(c0: np.ndarray, x0: np.ndarray, c1: np.ndarray, x1: np.ndarray) -> float:
    # Both quantiles are linear between merged levels, so Simpson is exact.
    levels = np.unique(np.clip(np.concatenate([c0, c1, [0.0, 1.0]]), 0.0, 1.0))
    a = _quantile(c1, x1, levels[:-1], "right") - _quantile(c0, x0, levels[:-1], "right")
    b = _quantile(c1, x1, levels[1:], "left") - _quantile(c0, x0, levels[1:], "left")
    sq = np.diff(levels) * (a * a + a * b + b * b) / 3.0
    return float(np.sqrt(max(sq.sum(), 0.0)))


# ---------------------------------------------------------------------------
# Monge maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MongeMap:
    """Samples of T(u) = exp_u(grad psi(u)) on the source nodes."""

    manifold: WarpedManifold
    nodes: np.ndarray
    image: np.ndarray
    potential: np.ndarray
    gradient: np.ndarray

    def __post_init__(self) -> None:
        shape = np.shape(self.nodes)
        for name in ("image", "potential", "gradient"):
            if np.shape(getattr(self, name)) != shape:
                raise ShapeError(f"Monge map {name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        mf = self.manifold
        outside = (self.image < mf.u_min) | (self.image > mf.u_max)
        if np.any(outside):
            i = int(np.argmax(outside))
            raise GeodesicEscapeError(
                f"particle {i} at u={self.nodes[i]:.6g} is sent outside the quotient interval",
                exit_time=_exit_time(mf, self.nodes[i], self.gradient[i]),
                particle=i,
            )

    @classmethod
    def from_image(cls, mf: WarpedManifold, nodes, image) -> MongeMap:
        """Gauge psi(u_0) = 0, psi' = T - id by the trapezoid rule."""
        nodes = np.asarray(nodes, dtype=float)
        image = np.asarray(image, dtype=float)
        gradient = image - nodes
        potential = cumulative_trapezoid(gradient, nodes, initial=0.0)
        return cls(mf, nodes, image, potential, gradient)

    @classmethod
    def from_velocity(cls, mf: WarpedManifold, nodes, velocity) -> MongeMap:
        nodes = np.asarray(nodes, dtype=float)
        return cls.from_image(mf, nodes, nodes + np.asarray(velocity, dtype=float))

    def is_monotone(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.image) >= -tol))

    @property
    def speed(self) -> np.ndarray:
        return np.abs(self.gradient)

    def __call__(self, u):
        return np.interp(u, self.nodes, self.image)


def _exit_time(mf: WarpedManifold, u: float, v: float) -> float:
    if v == 0:
        return 0.0
    wall = mf.u_max if v > 0 else mf.u_min
    return float((wall - u) / v)


def quantile_monge(mu0: QuotientMeasure, mu1: QuotientMeasure) -> MongeMap:
    """Monotone rearrangement T = Q_1 o F_0 on the nodes of mu0."""
    if mu0.manifold is not mu1.manifold and mu0.manifold != mu1.manifold:
        raise ShapeError("source and target live on different manifolds")
    f0 = _unit_cdf(mu0)
    c1 = _unit_cdf(mu1)
    image = _quantile(c1, mu1.grid.nodes, f0)
    return MongeMap.from_image(mu0.manifold, mu0.grid.nodes, image)


def w2_distance(mu0: QuotientMeasure, mu1: QuotientMeasure) -> float:
    """W2 between two quotient measures through their quantile functions."""
    return _quantile_w2(_unit_cdf(mu0), mu0.grid.nodes, _unit_cdf(mu1), mu1.grid.nodes)


# ---------------------------------------------------------------------------
# Atoms
# ---------------------------------------------------------------------------


def atomize(measure: QuotientMeasure, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n equal-mass atoms, each at the barycentre of its quantile slab."""
    if not 1 <= n <= MAX_ATOMS:
        raise DomainError(f"atom count must lie in [1, {MAX_ATOMS}], got {n}")
    cdf = _unit_cdf(measure)
    nodes = measure.grid.nodes
    # Integral of the quantile function up to each CDF level.
    area = np.concatenate([[0.0], np.cumsum(np.diff(cdf) * (nodes[:-1] + nodes[1:]) / 2)])
    levels = np.linspace(0.0, 1.0, n + 1)
    idx = np.clip(np.searchsorted(cdf, levels, side="left"), 1, len(nodes) - 1)
    partial = area[idx - 1] + (levels - cdf[idx - 1]) * (nodes[idx - 1] + _quantile(cdf, nodes, levels)) / 2
    partial[0] = 0.0
    return n * np.diff(partial), np.full(n, 1.0 / n)


def w2_atoms(x, a, y, b, tol: float = 1e-9) -> float:
    """Exact W2 between two atomic measures on the line."""
    x, a, y, b = (np.asarray(v, dtype=float) for v in (x, a, y, b))
    if x.shape != a.shape or y.shape != b.shape:
        raise ShapeError("atom positions and weights differ in length")
    if np.any(a < 0) or np.any(b < 0):
        raise MarginalError("atom weights must be nonnegative")
    if abs(a.sum() - b.sum()) > tol:
        raise MarginalError(f"atomic masses differ: {a.sum():.12g} vs {b.sum():.12g}")
    ox, oy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    ca, cb = np.cumsum(a[ox]) / a.sum(), np.cumsum(b[oy]) / b.sum()
    ca[-1] = cb[-1] = 1.0
    levels = np.unique(np.concatenate([[0.0], ca, cb]))
    levels = levels[levels <= 1.0]
    mid = 0.5 * (levels[:-1] + levels[1:])
    qx = x[ox][np.clip(np.searchsorted(ca, mid, side="left"), 0, len(x) - 1)]
    qy = y[oy][np.clip(np.searchsorted(cb, mid, side="left"), 0, len(y) - 1)]
    return float(np.sqrt(np.sum(np.diff(levels) * (qx - qy) ** 2)))


# ---------------------------------------------------------------------------
# Displacement interpolation
# ---------------------------------------------------------------------------


class JacobianSample(NamedTuple):
    jacobian: float
    delta: float


@dataclass(frozen=True, eq=False)
class DisplacementPath:
    manifold: WarpedManifold
    monge: MongeMap
    times: np.ndarray
    measures: tuple[QuotientMeasure, ...]
    # (time, particle) arrays.
    potentials: np.ndarray
    jacobians: np.ndarray
    slopes: np.ndarray

    @property
    def source(self) -> QuotientMeasure:
        return self.measures[0]

    @property
    def target(self) -> QuotientMeasure:
        return self.measures[-1]

    @property
    def speed(self) -> np.ndarray:
        return self.monge.speed

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if len(hits) == 0:
            raise DomainError(f"t={t:.6g} is not on the path time grid")
        return int(hits[0])

    def at(self, t: float) -> QuotientMeasure:
        return self.measures[self.index(t)]

    def deltas(self) -> np.ndarray:
        return self.jacobians ** (1.0 / self.manifold.N)

    def to_dict(self) -> dict:
        return {
            "t": self.times.tolist(),
            "nodes": [m.grid.nodes.tolist() for m in self.measures],
            "densities": [m.density.tolist() for m in self.measures],
            "jacobians": self.jacobians.tolist(),
        }


def _check_time_grid(t_grid) -> np.ndarray:
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or len(times) < 2:
        raise DomainError("time grid needs at least the two endpoints")
    if times[0] != 0.0 or times[-1] != 1.0:
        raise DomainError(f"time grid must run from 0 to 1, got [{times[0]:.6g}, {times[-1]:.6g}]")
    if np.any(np.diff(times) <= 0):
        raise DomainError("time grid must be strictly increasing")
    return times


def _support_window(q: np.ndarray) -> slice:
    charged = np.flatnonzero(q > 0)
    if len(charged) == 0:
        raise DegenerateMeasureError("source measure has empty support")
    first, last = charged[0], charged[-1]
    if len(charged) != last - first + 1:
        raise DomainError("displacement paths need a source with connected support")
    return slice(max(first - 1, 0), min(last + 2, len(q)))


def displacement_interpolate(
    mu0: QuotientMeasure,
    monge: MongeMap,
    t_grid: Sequence[float],
    tolerances: Tolerances | None = None,
) -> DisplacementPath:
    """mu_t = (T_t)_* mu0 with T_t(u) = u + t grad psi(u).

    Densities at the moved particles follow from rho_0 = rho_t(T_t) J(t),
    with J the quotient stretch times the fiber volume ratio.
    """
    tol = tolerances or Tolerances()
    if not np.array_equal(mu0.grid.nodes, monge.nodes):
        raise ShapeError("Monge map is not sampled on the source grid")
    times = _check_time_grid(t_grid)
    mf = mu0.manifold
    window = _support_window(mu0.density)
    nodes = monge.nodes[window]
    velocity = monge.gradient[window]
    q0 = mu0.density[window]
    cumulative = _unit_cdf(mu0)[window]
    mass = mu0.mass()
    stretch = np.gradient(monge.image[window], nodes)
    charged = q0 > 0
    lo, hi = mf.principal_bounds
    f_base = mf.f(nodes) ** mf.fiber_dim

    measures, potentials, jacobians, slopes = [], [], [], []
    for t in times:
        moved = nodes + t * velocity
        outside = (moved < lo) | (moved > hi)
        if np.any(outside):
            i = int(np.argmax(outside))
            raise GeodesicEscapeError(
                f"particle {i} (u={nodes[i]:.6g}) leaves the principal stratum by t={t:.6g}",
                exit_time=_exit_time(mf, nodes[i], velocity[i]),
                particle=i,
            )
        slope = 1.0 + t * (stretch - 1.0)
        collapsed = charged & (slope < tol.caustic)
        if np.any(collapsed):
            i = int(np.argmax(collapsed))
            raise CausticError(f"transport collapses particle {i} (u={nodes[i]:.6g}) at t={t:.6g}", time=t, particle=i)
        jac = np.abs(slope) * (mf.f(moved) ** mf.fiber_dim / f_base)
        if t == 0.0:
            grid, q = QuotientGrid(nodes), q0
        else:
            grid, q = QuotientGrid(moved), np.divide(q0, jac, out=np.zeros_like(q0), where=charged)
        measures.append(QuotientMeasure(mf, grid, q, cumulative * mass))
        potentials.append(monge.potential[window] + 0.5 * t * velocity**2)
        jacobians.append(jac)
        slopes.append(slope)

    windowed = MongeMap(mf, nodes, monge.image[window], monge.potential[window], velocity)
    logger.debug("displacement path: %d particles, %d times", len(nodes), len(times))
    return DisplacementPath(
        manifold=mf,
        monge=windowed,
        times=times,
        measures=tuple(measures),
        potentials=np.array(potentials),
        jacobians=np.array(jacobians),
        slopes=np.array(slopes),
    )


def hopf_lax_potential(nodes, psi0, t: float) -> np.ndarray:
    """psi_t(u) = min_y psi0(y) + (u - y)^2 / 2t over the grid nodes."""
    nodes = np.asarray(nodes, dtype=float)
    psi0 = np.asarray(psi0, dtype=float)
    if nodes.shape != psi0.shape:
        raise ShapeError("potential and nodes differ in length")
    if t < 0:
        raise DomainError(f"Hopf-Lax time must be nonnegative, got {t}")
    if t == 0:
        return psi0.copy()
    return np.min(psi0[None, :] + (nodes[:, None] - nodes[None, :]) ** 2 / (2.0 * t), axis=1)


def transport_jacobian(path: DisplacementPath, t: float, u: float, mf: WarpedManifold | None = None) -> JacobianSample:
    """J(t, u) = |d T_t/du| (f(T_t u)/f(u))^m for the particle starting at u."""
    mf = mf or path.manifold
    k = path.index(t)
    hits = np.flatnonzero(np.isclose(path.monge.nodes, u, rtol=0.0, atol=1e-12))
    if len(hits) == 0:
        raise DomainError(f"u={u:.6g} is not a particle start node of the path")
    i = int(hits[0])
    slope = float(path.slopes[k, i])
    if abs(slope) < Tolerances().caustic:
        raise CausticError(f"particle {i} collapses at t={t:.6g}", time=t, particle=i)
    moved = path.monge.nodes[i] + path.times[k] * path.monge.gradient[i]
    jac = abs(slope) * float(mf.f(moved) / mf.f(path.monge.nodes[i])) ** mf.fiber_dim
    return JacobianSample(jacobian=jac, delta=jac ** (1.0 / mf.N))


# ---------------------------------------------------------------------------
# Path diagnostics
# ---------------------------------------------------------------------------


class EndpointMismatch(NamedTuple):
    mass: float
    density: float


def endpoint_mismatch(path: DisplacementPath, mu1: QuotientMeasure) -> EndpointMismatch:
    """How far the path's t=1 measure is from the intended target.

    `mass` compares cumulative mass at every transported particle; `density`
    is the largest density gap relative to the target's peak, over interior
    particles.
    """
    end = path.target
    cdf1 = _unit_cdf(mu1)
    at_particles = np.interp(end.grid.nodes, mu1.grid.nodes, cdf1)
    mass = float(np.max(np.abs(at_particles - _unit_cdf(end))))
    target_q = np.interp(end.grid.nodes, mu1.grid.nodes, mu1.density / mu1.mass())
    inner = slice(1, -1) if end.grid.n > 2 else slice(None)
    gap = np.abs(end.density[inner] / end.mass() - target_q[inner])
    peak = float(np.max(mu1.density / mu1.mass()))
    return EndpointMismatch(mass=mass, density=float(np.max(gap) / peak) if peak > 0 else 0.0)


def geodesic_residual(path: DisplacementPath) -> float:
    """max |W2(mu_s, mu_t) - |t - s| W2(mu_0, mu_1)| over the time grid."""
    full = w2_distance(path.source, path.target)
    worst = 0.0
    for i, s in enumerate(path.times):
        for j in range(i + 1, len(path.times)):
            d = w2_distance(path.measures[i], path.measures[j])
            worst = max(worst, abs(d - (path.times[j] - s) * full))
    return worst


# ---------------------------------------------------------------------------
# Equivariance and orbit-to-orbit transport
# ---------------------------------------------------------------------------


class OrbitTransportReport(NamedTuple):
    commutator: float
    pushforward: float
    # Largest gap between exp_u(grad psi(u)) and the stored image T(u).
    orbit: float
    rotations: int

    @property
    def violation(self) -> float:
        return max(self.commutator, self.pushforward, self.orbit)


def _circular_gap(a: np.ndarray, b: np.ndarray, period: float) -> np.ndarray:
    d = np.mod(a - b, period)
    return np.minimum(d, period - d)


def _fiber_gradient(psi: Callable, u: float, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    out = np.empty_like(theta)
    for k in range(theta.shape[1]):
        step = np.zeros(theta.shape[1])
        step[k] = h
        out[:, k] = (np.asarray(psi(u, theta + step)) - np.asarray(psi(u, theta - step))) / (2 * h)
    return out


def orbit_transport_check(
    mf: WarpedManifold,
    monge: MongeMap,
    rotations: int | Sequence[float] = 16,
    n_theta: int = 64,
    vertical: Callable[[float, np.ndarray], np.ndarray] | None = None,
    seed: int = 0,
    target: Callable[[float], OrbitConditional] | None = None,
) -> OrbitTransportReport:
    """Lift T to M as (u, theta) -> (T(u), theta) and test its equivariance.

    The fiber-uniform conditional at u is pushed along the lift, binned on
    the image orbit at T(u) and compared with `target(T(u))`, by default the
    fiber-uniform conditional vol_{T(u)}. `vertical` adds a fiber-dependent
    part to the potential; its fiber gradient g^{ab} d_b psi = d_theta psi / f^2
    moves points along the orbit, which breaks commutation with rotations.
    """
    theta = fiber_nodes(mf.fiber_dim, n_theta, mf.fiber_period)
    if isinstance(rotations, int):
        rng = np.random.default_rng(seed)
        angles = rng.uniform(0.0, mf.fiber_period, size=(rotations, mf.fiber_dim))
    else:
        angles = np.broadcast_to(np.asarray(rotations, dtype=float)[:, None], (len(rotations), mf.fiber_dim))
    period = mf.fiber_period
    spacing = period / n_theta

    def lift(u: float, pts: np.ndarray) -> np.ndarray:
        if vertical is None:
            return pts
        return pts + _fiber_gradient(vertical, u, pts) / float(mf.f(u)) ** 2

    commutator = pushforward = orbit = 0.0
    for u, image_u, grad in zip(monge.nodes, monge.image, monge.gradient, strict=True):
        orbit = max(orbit, abs(exp_horizontal(mf, float(u), float(grad), 1.0) - float(image_u)))
        base = lift(u, theta)
        for g in angles:
            moved_then_rotated = base + g
            rotated_then_moved = lift(u, theta + g)
            commutator = max(commutator, float(np.max(_circular_gap(rotated_then_moved, moved_then_rotated, period))))
        expected = uniform_conditional(mf, n_theta, image_u) if target is None else target(float(image_u))
        if expected.n_theta != n_theta or expected.fiber_dim != mf.fiber_dim:
            raise ShapeError(f"target conditional at u={image_u:.6g} is not on a {n_theta}-point fiber grid")
        if not np.isclose(expected.u, image_u, rtol=0.0, atol=1e-12):
            raise ShapeError(f"target conditional sits at u={expected.u:.6g}, not at T(u)={image_u:.6g}")
        bins = np.mod(np.rint(base / spacing).astype(int), n_theta)
        flat = np.ravel_multi_index(tuple(bins.T), (n_theta,) * mf.fiber_dim)
        counts = np.bincount(flat, minlength=n_theta**mf.fiber_dim)
        pushed = counts * len(counts) / len(theta)
        pushforward = max(pushforward, float(np.max(np.abs(pushed - expected.density))))
    return OrbitTransportReport(commutator=commutator, pushforward=pushforward, orbit=orbit, rotations=len(angles))


def _fiber_cdf(c: OrbitConditional, period: float) -> tuple[np.ndarray, np.ndarray]:
    nodes = period * np.arange(c.n_theta + 1) / c.n_theta
    dens = np.append(c.density, c.density[0])
    cdf = cumulative_trapezoid(dens, nodes, initial=0.0)
    if not cdf[-1] > 0:
        raise DegenerateOrbitError(f"conditional at u={c.u:.6g} carries no mass")
    return nodes, cdf / cdf[-1]


def fiber_rearrangement(source: OrbitConditional, target: OrbitConditional, period: float) -> np.ndarray:
    """Monotone map S between two circle conditionals, with the circle cut at theta = 0."""
    if source.fiber_dim != 1 or target.fiber_dim != 1:
        raise DomainError("fiber rearrangement is only defined for circle fibers")
    xs, cs = _fiber_cdf(source, period)
    xt, ct = _fiber_cdf(target, period)
    return _quantile(ct, xt, cs[:-1])


class ComposedTransport(NamedTuple):
    u: float
    image_u: float
    theta: np.ndarray
    image_theta: np.ndarray
    defect: float


def compose_orbit_transport(
    monge: MongeMap, source: OrbitConditional, target: OrbitConditional, node: int
) -> ComposedTransport:
    """R o S: rearrange within the orbit, then move the orbit with the quotient map.

    `defect` is the largest cumulative-mass gap between the source conditional
    and the pullback of the target; it is the pushforward property of R o S.
    """
    mf = monge.manifold
    u, image_u = float(monge.nodes[node]), float(monge.image[node])
    if not np.isclose(source.u, u, rtol=0.0, atol=1e-12):
        raise ShapeError(f"source conditional sits at u={source.u:.6g}, not at node u={u:.6g}")
    if not np.isclose(target.u, image_u, rtol=0.0, atol=1e-12):
        raise ShapeError(f"target conditional sits at u={target.u:.6g}, not at T(u)={image_u:.6g}")
    images = fiber_rearrangement(source, target, mf.fiber_period)
    xs, cs = _fiber_cdf(source, mf.fiber_period)
    xt, ct = _fiber_cdf(target, mf.fiber_period)
    defect = float(np.max(np.abs(np.interp(images, xt, ct) - cs[:-1])))
    return ComposedTransport(u=u, image_u=image_u, theta=xs[:-1], image_theta=images, defect=defect)
