"""Shared test fixtures."""

import math
from pathlib import Path

import pytest

from orbitlab.config import DensitySpec, SamplerConfig, TaylorConfig
from orbitlab.convexity import EnergyConfig
from orbitlab.geometry import WarpedManifold
from orbitlab.profiles import preset

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture
def sphere():
    """Unit round sphere, f = sin on (0, pi): horizontal Ricci 1."""
    return WarpedManifold(0.0, math.pi, preset("sin"))


@pytest.fixture
def cylinder():
    """Flat cylinder, f = 1."""
    return WarpedManifold(-1.0, 3.0, preset("constant"))


@pytest.fixture
def plane():
    """Flat plane in polar coordinates, f(u) = u."""
    return WarpedManifold(0.0, 4.0, preset("linear"))


@pytest.fixture
def hyperbolic():
    """f = cosh on (-1, 1): horizontal Ricci -1."""
    return WarpedManifold(-1.0, 1.0, preset("cosh"))


@pytest.fixture
def energy2():
    return EnergyConfig(N=2)


@pytest.fixture
def band():
    def make(lo: float, hi: float) -> DensitySpec:
        return DensitySpec("uniform-band", {"lo": lo, "hi": hi})

    return make


@pytest.fixture
def sphere_sampler():
    return SamplerConfig(count=200, thetas=(0.05, 0.025), center_window=(math.pi / 4, 3 * math.pi / 4))


@pytest.fixture
def taylor_cfg():
    return TaylorConfig(enabled=True, thetas=(0.1, 0.05, 0.025), t=0.5, n_u=512)


@pytest.fixture
def configs_dir():
    return CONFIGS
