"""Internal energy, the Lambda_N quadratic form, and displacement-convexity certificates.

The energy density is U_N(r) = -N (r^(1 - 1/N) - r). Along a displacement
path it becomes u(delta) = delta^N U_N(delta^-N) = -N (delta - 1), affine in
delta = J^(1/N), so the second time derivative of H picks up exactly
-N delta''/delta, which the Riccati identity ties to the Ricci curvature in
the direction of motion.

Two families of functionals live here. `h_functional` and `lambda_form`
act on one orbit conditional against the fiber reference measure.
`lifted_energy` and `lifted_lambda` act on quotient measures lifted
fiber-uniformly to M; these are the ones evaluated along paths.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .config import SamplerConfig, TaylorConfig, Tolerances
from .errors import CausticError, ConfigError, DomainError, GeodesicEscapeError, ShapeError
from .geometry import WarpedManifold, horizontal_ricci
from .measures import OrbitConditional, QuotientMeasure
from .sampler import GeodesicSpec, bump_source, build_geodesic, isotropic_map, path_times, sample_geodesics
from .transport import DisplacementPath, displacement_interpolate

logger = logging.getLogger(__name__)

# Diagnostics below this magnitude are treated as vanishing to working precision.
NOISE_FLOOR = 1e-13


# ---------------------------------------------------------------------------
# Kernels and energy densities
# ---------------------------------------------------------------------------


def green_kernel(s, t):
    """G(s, t) = s(1 - t) for s <= t, t(1 - s) otherwise."""
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any((s_arr < 0) | (s_arr > 1) | (t_arr < 0) | (t_arr > 1)):
        raise DomainError("Green kernel arguments must lie in [0, 1]")
    out = np.where(s_arr <= t_arr, s_arr * (1 - t_arr), t_arr * (1 - s_arr))
    return float(out) if out.ndim == 0 else out


def trapezoid_weights(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    d = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def green_weights(times, t: float) -> np.ndarray:
    """Quadrature weights for s -> integral of phi(s) G(s, t) ds on a time grid."""
    return trapezoid_weights(times) * green_kernel(np.asarray(times, dtype=float), t)


def u_entropy(r, N: int):
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise DomainError("U_N is only defined for nonnegative densities")
    out = -N * (r_arr ** (1.0 - 1.0 / N) - r_arr)
    return float(out) if out.ndim == 0 else out


def entropy_along_delta(delta, N: int):
    """u(delta) = delta^N U_N(delta^-N)."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise DomainError("delta must be positive")
    out = delta**N * u_entropy(delta ** (-float(N)), N)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class EnergyConfig:
    N: int
    # Density of the reference conditional nu_0 w.r.t. vol_0; None means vol_0 itself.
    reference: OrbitConditional | None = None
    # Coefficient c of an extra c*r term in the energy density.
    affine: float = 0.0

    def __post_init__(self) -> None:
        if self.N < 2:
            raise ConfigError(f"energy dimension N must be at least 2, got {self.N}")

    @classmethod
    def for_manifold(cls, mf: WarpedManifold, reference: OrbitConditional | None = None) -> EnergyConfig:
        return cls(N=mf.N, reference=reference)

    def density(self, r):
        out = u_entropy(r, self.N)
        return out + self.affine * np.asarray(r, dtype=float) if self.affine else out


def _fiber_values(mu) -> np.ndarray:
    return np.asarray(mu.density if isinstance(mu, OrbitConditional) else mu, dtype=float)


def _reference_weights(n: int, cfg: EnergyConfig) -> np.ndarray:
    if cfg.reference is None:
        return np.ones(n)
    if len(cfg.reference.density) != n:
        raise ShapeError(f"reference conditional has {len(cfg.reference.density)} nodes, density has {n}")
    return cfg.reference.density


def h_functional(mu, cfg: EnergyConfig) -> float:
    """H(mu) = integral of U_N(rho) against the fiber reference."""
    rho = _fiber_values(mu)
    return float(np.mean(_reference_weights(len(rho), cfg) * cfg.density(rho)))


def lambda_form(mu, v, cfg: EnergyConfig) -> float:
    """Lambda_N(mu, v) = integral of |v|^2 rho^(1 - 1/N) against the fiber reference."""
    rho = _fiber_values(mu)
    v = np.asarray(v, dtype=float)
    if v.ndim != 0 and v.shape != rho.shape:
        raise ShapeError(f"field has shape {v.shape}, density has {rho.shape}")
    if np.any(rho < 0):
        raise DomainError("negative density")
    return float(np.mean(_reference_weights(len(rho), cfg) * v**2 * rho ** (1.0 - 1.0 / cfg.N)))


def _volume_weights(mu: QuotientMeasure) -> np.ndarray:
    mf = mu.manifold
    return mu.grid.weights() * mf.f(mu.grid.nodes) ** mf.fiber_dim * mf.fiber_volume


def _fiber_average(values: np.ndarray, fn, cfg: EnergyConfig) -> np.ndarray:
    """Per node, the vol_0 mean of c * fn(values / c) for the reference density c of nu_0."""
    if cfg.reference is None:
        return fn(values)
    c = np.asarray(cfg.reference.density, dtype=float)
    return np.mean(c[None, :] * fn(values[:, None] / c[None, :]), axis=1)


def lifted_energy(mu: QuotientMeasure, cfg: EnergyConfig) -> float:
    """H on M of the fiber-uniform lift: integral of U_N(d mu / d nu) d nu.

    With the default reference this is the integral of U_N(q) d(pi_* vol).
    """
    return float(_volume_weights(mu) @ _fiber_average(mu.density, cfg.density, cfg))


def lifted_lambda(mu: QuotientMeasure, speed, cfg: EnergyConfig) -> float:
    """Lambda_N on M of the fiber-uniform lift with horizontal speed per node."""
    speed = np.asarray(speed, dtype=float)
    if speed.shape != mu.density.shape:
        raise ShapeError(f"speed has {speed.shape} entries for {mu.density.shape} nodes")
    power = 1.0 - 1.0 / cfg.N
    return float(_volume_weights(mu) @ (speed**2 * _fiber_average(mu.density, lambda r: r**power, cfg)))


def jacobian_energy(path: DisplacementPath, t: float, cfg: EnergyConfig) -> float:
    """H(mu_t) pulled back to the source: integral of U_N(rho_0/J) J d vol."""
    k = path.index(t)
    source = path.source
    jac = path.jacobians[k]
    q0 = source.density
    pulled = np.divide(q0, jac, out=np.zeros_like(q0), where=q0 > 0)
    integrand = np.where(q0 > 0, _fiber_average(pulled, cfg.density, cfg) * jac, 0.0)
    return float(_volume_weights(source) @ integrand)


def path_energies(path: DisplacementPath, cfg: EnergyConfig) -> np.ndarray:
    return np.array([lifted_energy(m, cfg) for m in path.measures])


def path_lambdas(path: DisplacementPath, cfg: EnergyConfig) -> np.ndarray:
    # Particles keep their speed pre-caustic, so |grad psi_s| at T_s(x) is |grad psi(x)|.
    return np.array([lifted_lambda(m, path.speed, cfg) for m in path.measures])


def green_lambda_integral(path: DisplacementPath, t: float, cfg: EnergyConfig, lambdas=None) -> float:
    lambdas = path_lambdas(path, cfg) if lambdas is None else lambdas
    return float(green_weights(path.times, path.times[path.index(t)]) @ lambdas)


def convexity_residual(path: DisplacementPath, t: float, K: float, cfg: EnergyConfig) -> float:
    """R(t, K) = (1-t) H(mu_0) + t H(mu_1) - H(mu_t) - K * int Lambda_N(mu_s) G(s, t) ds."""
    k = path.index(t)
    t = float(path.times[k])
    energies = path_energies(path, cfg)
    chord = (1 - t) * energies[0] + t * energies[-1] - energies[k]
    if K == 0:
        return float(chord)
    return float(chord - K * green_lambda_integral(path, t, cfg))


# ---------------------------------------------------------------------------
# K estimation
# ---------------------------------------------------------------------------


class KSample(NamedTuple):
    geodesic: int
    theta: float
    t: float
    k: float
    numerator: float
    denominator: float
    residual: float
    center: float
    ric_min: float
    ric_max: float

    def to_dict(self) -> dict:
        return {key: (None if isinstance(v, float) and not math.isfinite(v) else v) for key, v in self._asdict().items()}


@dataclass(frozen=True)
class ConvexityReport:
    samples: tuple[KSample, ...]
    k_inf: float
    ric_min: float
    ric_max: float
    k_requested: float | None = None
    tolerance: float = 0.05
    skipped: int = 0
    taylor: TaylorDiagnostics | None = None
    riccati: float | None = None
    notes: tuple[str, ...] = field(default=())

    @classmethod
    def from_samples(
        cls,
        samples: Iterable[KSample],
        k_requested: float | None = None,
        tolerance: float = 0.05,
        skipped: int = 0,
    ) -> ConvexityReport:
        """Deterministic reduction: order of `samples` does not matter."""
        ordered = tuple(sorted(samples, key=lambda s: (s.geodesic, s.theta, s.t)))
        finite = [s.k for s in ordered if math.isfinite(s.k)]
        return cls(
            samples=ordered,
            k_inf=min(finite) if finite else math.nan,
            ric_min=min((s.ric_min for s in ordered), default=math.nan),
            ric_max=max((s.ric_max for s in ordered), default=math.nan),
            k_requested=k_requested,
            tolerance=tolerance,
            skipped=skipped,
        )

    @property
    def passed(self) -> bool | None:
        if self.k_requested is None:
            return None
        return bool(math.isfinite(self.k_inf) and self.k_inf >= self.k_requested - self.tolerance)

    @property
    def witness(self) -> KSample | None:
        """The sample attaining K_inf, reported when certification fails."""
        if self.passed is not False:
            return None
        finite = [s for s in self.samples if math.isfinite(s.k)]
        return min(finite, key=lambda s: s.k) if finite else None

    def to_dict(self) -> dict:
        witness = self.witness
        return {
            "k_inf": _finite_or_none(self.k_inf),
            "k_requested": self.k_requested,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "ric_min": _finite_or_none(self.ric_min),
            "ric_max": _finite_or_none(self.ric_max),
            "skipped": self.skipped,
            "witness": witness.to_dict() if witness else None,
            "riccati_defect": self.riccati,
            "taylor": self.taylor.to_dict() if self.taylor else None,
            "samples": [s.to_dict() for s in self.samples],
        }


def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


def geodesic_k_samples(
    path: DisplacementPath,
    spec: GeodesicSpec,
    times: Sequence[float],
    cfg: EnergyConfig,
    k_requested: float | None,
    tolerances: Tolerances,
) -> tuple[list[KSample], int]:
    """K_est(t) = [(1-t) H_0 + t H_1 - H_t] / int Lambda G for one geodesic; returns (samples, skipped)."""
    energies = path_energies(path, cfg)
    lambdas = path_lambdas(path, cfg)
    ric = np.concatenate([horizontal_ricci(path.manifold, m.grid.nodes) for m in path.measures])
    samples, skipped = [], 0
    for t in times:
        k = path.index(t)
        tt = float(path.times[k])
        chord = (1 - tt) * energies[0] + tt * energies[-1] - energies[k]
        denom = float(green_weights(path.times, tt) @ lambdas)
        if denom < tolerances.lambda_floor:
            logger.info("geodesic %d t=%.4g: Lambda integral %.3g below floor, skipped", spec.id, tt, denom)
            skipped += 1
            continue
        K = 0.0 if k_requested is None else k_requested
        samples.append(
            KSample(
                geodesic=spec.id,
                theta=spec.theta,
                t=tt,
                k=float(chord / denom),
                numerator=float(chord),
                denominator=denom,
                residual=float(chord - K * denom),
                center=spec.center,
                ric_min=float(ric.min()),
                ric_max=float(ric.max()),
            )
        )
    return samples, skipped


def estimate_k(
    mf: WarpedManifold,
    sampler: SamplerConfig,
    cfg: EnergyConfig,
    k_requested: float | None = None,
    tolerances: Tolerances | None = None,
    jobs: int = 1,
) -> ConvexityReport:
    """Sample localized geodesics and report the smallest convexity constant they support."""
    tol = tolerances or Tolerances()
    specs = sample_geodesics(mf, sampler)
    times = path_times(sampler.times, sampler.n_steps)

    def evaluate(spec: GeodesicSpec) -> tuple[list[KSample], int]:
        try:
            path = build_geodesic(mf, spec, times, sampler.n_u, tol)
        except (GeodesicEscapeError, CausticError) as e:
            logger.warning("geodesic %d skipped: %s", spec.id, e)
            return [], len(sampler.times)
        return geodesic_k_samples(path, spec, sampler.times, cfg, k_requested, tol)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate, specs))
    else:
        results = [evaluate(spec) for spec in specs]

    samples = [s for batch, _ in results for s in batch]
    skipped = sum(n for _, n in results)
    report = ConvexityReport.from_samples(samples, k_requested, tol.k_tolerance, skipped)
    logger.info("K_inf=%.6g over %d samples (%d skipped)", report.k_inf, len(report.samples), skipped)
    return report


# ---------------------------------------------------------------------------
# Second-order Taylor check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaylorDiagnostics:
    base_point: float
    direction: float
    t: float
    ricci: float
    thetas: tuple[float, ...]
    D: tuple[float, ...]
    P: tuple[float, ...]
    W: tuple[float, ...]
    # Fitted log-log slopes of |D|/W and |D - P|/W against theta; None when
    # the quantity vanishes to working precision.
    d_exponent: float | None
    remainder_exponent: float | None

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(d / p if p != 0 else math.nan for d, p in zip(self.D, self.P, strict=True))

    def to_dict(self) -> dict:
        return {
            "base_point": self.base_point,
            "direction": self.direction,
            "t": self.t,
            "ricci": self.ricci,
            "thetas": list(self.thetas),
            "D": list(self.D),
            "P": list(self.P),
            "W": list(self.W),
            "ratios": [_finite_or_none(r) for r in self.ratios],
            "d_exponent": self.d_exponent,
            "remainder_exponent": self.remainder_exponent,
        }


def _fit_exponent(thetas: np.ndarray, values: np.ndarray) -> float | None:
    values = np.abs(values)
    if np.max(values) < NOISE_FLOOR or np.any(values == 0):
        return None
    return float(np.polyfit(np.log(thetas), np.log(values), 1)[0])


def taylor_check(
    mf: WarpedManifold,
    u0: float,
    v0: float,
    thetas: Sequence[float],
    taylor: TaylorConfig,
    cfg: EnergyConfig,
    tolerances: Tolerances | None = None,
) -> TaylorDiagnostics:
    """Compare D(theta) = H(mu_t) - chord with -theta^2 Ric(v0) W(theta) as theta shrinks.

    Supports shrink with theta (radius taylor.radius_factor * theta), so D
    and the predictor are both compared after dividing by W, the
    Green-weighted integral of rho_s^(1 - 1/N).
    """
    thetas_arr = np.asarray(thetas, dtype=float)
    if len(thetas_arr) < 2:
        raise ConfigError("taylor check needs at least two theta values")
    if np.any(np.diff(thetas_arr) >= 0):
        raise ConfigError("taylor thetas must be strictly decreasing")
    if np.any(thetas_arr <= 0):
        raise ConfigError("taylor thetas must be positive")
    if not 0 < taylor.t < 1:
        raise ConfigError(f"taylor.t must lie in (0, 1), got {taylor.t}")

    ricci = horizontal_ricci(mf, u0)
    times = path_times([taylor.t], taylor.n_steps)
    D, P, W = [], [], []
    for theta in thetas_arr:
        source = bump_source(mf, u0, taylor.radius_factor * theta, taylor.n_u)
        monge = isotropic_map(mf, source, u0, v0, theta)
        path = displacement_interpolate(source, monge, times, tolerances)
        energies = path_energies(path, cfg)
        k = path.index(taylor.t)
        d = energies[k] - (1 - taylor.t) * energies[0] - taylor.t * energies[-1]
        mass_term = np.array([lifted_lambda(m, np.ones_like(m.density), cfg) for m in path.measures])
        w = float(green_weights(path.times, taylor.t) @ mass_term)
        D.append(float(d))
        W.append(w)
        P.append(float(-(theta**2) * ricci * v0**2 * w))
        logger.debug("taylor theta=%.4g D=%.6g P=%.6g W=%.6g", theta, d, P[-1], w)

    d_arr, p_arr, w_arr = np.array(D), np.array(P), np.array(W)
    return TaylorDiagnostics(
        base_point=u0,
        direction=v0,
        t=taylor.t,
        ricci=ricci,
        thetas=tuple(float(x) for x in thetas_arr),
        D=tuple(D),
        P=tuple(P),
        W=tuple(W),
        d_exponent=_fit_exponent(thetas_arr, d_arr / w_arr),
        remainder_exponent=_fit_exponent(thetas_arr, (d_arr - p_arr) / w_arr),
    )
