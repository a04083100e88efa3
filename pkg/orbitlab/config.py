"""Experiment configuration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

EIGHTHS = (0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875)


@dataclass
class Tolerances:
    gluing: float = 1e-10
    mass: float = 1e-9
    path: float = 1e-6
    lp_marginal: float = 1e-9
    caustic: float = 1e-12
    lambda_floor: float = 1e-14
    k_tolerance: float = 0.05


@dataclass
class ManifoldSpec:
    profile: Any = "sin"
    u_min: float = 0.0
    u_max: float = math.pi
    fiber_dim: int = 1
    fiber_period: float = 2 * math.pi
    clamp_fraction: float = 1e-3


@dataclass
class GridConfig:
    n_u: int = 256
    n_theta: int = 64


@dataclass
class DensitySpec:
    preset: str = "uniform-band"
    params: dict = field(default_factory=dict)
    csv: str | None = None


@dataclass
class SamplerConfig:
    count: int = 200
    seed: int = 0
    # Fractions of the quotient interval length |I|.
    support_radius: float = 0.1
    max_separation: float = 0.2
    thetas: tuple[float, ...] = (0.1, 0.05)
    times: tuple[float, ...] = EIGHTHS
    n_u: int = 256
    n_steps: int = 32
    center_window: tuple[float, float] | None = None


@dataclass
class TaylorConfig:
    enabled: bool = False
    base_point: float | None = None
    direction: float = 1.0
    thetas: tuple[float, ...] = (0.1, 0.05, 0.025)
    t: float = 0.5
    radius_factor: float = 1.0
    n_u: int = 512
    n_steps: int = 32


@dataclass
class ReferenceSpec:
    # V(theta) = amplitude * sum_i cos(mode * 2 pi theta_i / period); amplitude 0 keeps vol_0.
    amplitude: float = 0.0
    mode: int = 1


@dataclass
class CertifyConfig:
    k: float | None = None
    riccati: bool = True
    taylor: TaylorConfig = field(default_factory=TaylorConfig)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)


@dataclass
class TransportConfig:
    source: DensitySpec = field(default_factory=lambda: DensitySpec("gaussian-on-quotient"))
    target: DensitySpec = field(default_factory=lambda: DensitySpec("gaussian-on-quotient"))
    n_steps: int = 32
    lp_atoms: int | None = 128
    rotations: int = 16


@dataclass
class ExperimentConfig:
    seed: int
    manifold: ManifoldSpec = field(default_factory=ManifoldSpec)
    grid: GridConfig = field(default_factory=GridConfig)
    density: DensitySpec = field(default_factory=DensitySpec)
    transport: TransportConfig = field(default_factory=TransportConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)
    output: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)
