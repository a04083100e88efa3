import math

import numpy as np
import pytest
from scipy.integrate import quad

from orbitlab.config import DensitySpec
from orbitlab.errors import CausticError, DomainError, GeodesicEscapeError, MarginalError, ShapeError
from orbitlab.geometry import QuotientGrid
from orbitlab.kantorovich import kantorovich_lp, squared_distance_cost
from orbitlab.measures import (
    OrbitConditional,
    QuotientMeasure,
    fiber_nodes,
    make_quotient_measure,
    uniform_conditional,
)
from orbitlab.transport import (
    MongeMap,
    atomize,
    compose_orbit_transport,
    displacement_interpolate,
    endpoint_mismatch,
    fiber_rearrangement,
    geodesic_residual,
    hopf_lax_potential,
    orbit_transport_check,
    quantile_monge,
    transport_jacobian,
    w2_atoms,
    w2_distance,
)

TIMES = np.linspace(0.0, 1.0, 9)


def _uniform(mf, lo, hi, n=257):
    return QuotientMeasure(mf, QuotientGrid.uniform(lo, hi, n), np.ones(n)).normalized()


# ---------------------------------------------------------------------------
# Quantile transport
# ---------------------------------------------------------------------------


def test_translation_on_cylinder(cylinder):
    mu0, mu1 = _uniform(cylinder, 0.0, 1.0), _uniform(cylinder, 0.3, 1.3)
    monge = quantile_monge(mu0, mu1)
    np.testing.assert_allclose(monge.image, mu0.grid.nodes + 0.3, atol=1e-12)
    np.testing.assert_allclose(monge.gradient, 0.3, atol=1e-12)
    assert w2_distance(mu0, mu1) == pytest.approx(0.3, abs=1e-12)


def test_identity_map_has_flat_potential(sphere):
    mu = make_quotient_measure(sphere, DensitySpec("gaussian-on-quotient"), 256)
    monge = quantile_monge(mu, mu)
    np.testing.assert_allclose(monge.image, mu.grid.nodes, atol=1e-12)
    np.testing.assert_allclose(monge.potential, 0.0, atol=1e-12)
    assert w2_distance(mu, mu) == pytest.approx(0.0, abs=1e-12)


def test_halving_matches_lp(cylinder):
    mu0, mu1 = _uniform(cylinder, 0.0, 1.0), _uniform(cylinder, 0.0, 0.5)
    monge = quantile_monge(mu0, mu1)
    np.testing.assert_allclose(monge.image, mu0.grid.nodes / 2, atol=1e-12)
    x, a = atomize(mu0, 64)
    y, b = atomize(mu1, 64)
    _, cost = kantorovich_lp(a, b, squared_distance_cost(x, y))
    assert w2_distance(mu0, mu1) ** 2 == pytest.approx(1 / 12, abs=1e-12)
    assert cost == pytest.approx(w2_distance(mu0, mu1) ** 2, abs=1e-4)


def test_monge_map_is_monotone(sphere):
    mu0 = make_quotient_measure(sphere, DensitySpec("random"), 256, seed=1)
    mu1 = make_quotient_measure(sphere, DensitySpec("two-bump"), 256)
    assert quantile_monge(mu0, mu1).is_monotone()


def test_w2_symmetric(sphere):
    mu0 = make_quotient_measure(sphere, DensitySpec("random"), 256, seed=1)
    mu1 = make_quotient_measure(sphere, DensitySpec("two-bump"), 256)
    assert w2_distance(mu0, mu1) == pytest.approx(w2_distance(mu1, mu0), abs=1e-12)


def test_atoms_have_equal_mass_and_keep_the_mean(sphere):
    mu = make_quotient_measure(sphere, DensitySpec("random"), 512, seed=2)
    x, a = atomize(mu, 128)
    assert np.all(np.diff(x) > 0)
    np.testing.assert_allclose(a, 1 / 128)
    line = mu.line_density()
    mean = np.trapezoid(mu.grid.nodes * line, mu.grid.nodes) / np.trapezoid(line, mu.grid.nodes)
    assert float(a @ x) == pytest.approx(mean, abs=1e-4)


def test_atom_count_limit(sphere):
    mu = make_quotient_measure(sphere, DensitySpec("bump"), 64)
    with pytest.raises(DomainError):
        atomize(mu, 513)


def test_w2_atoms_mass_mismatch():
    with pytest.raises(MarginalError):
        w2_atoms([0.0], [1.0], [1.0], [0.5])


# ---------------------------------------------------------------------------
# Displacement interpolation
# ---------------------------------------------------------------------------


@pytest.fixture
def sphere_pair(sphere):
    mu0 = make_quotient_measure(sphere, DensitySpec("gaussian-on-quotient", {"center": 1.2, "width": 0.15}), 1024)
    target = {"centers": [1.4, 2.0], "width": 0.1, "lo": 1.0, "hi": 2.4}
    mu1 = make_quotient_measure(sphere, DensitySpec("two-bump", target), 1024)
    return mu0, mu1


def test_path_endpoints(sphere_pair):
    mu0, mu1 = sphere_pair
    path = displacement_interpolate(mu0, quantile_monge(mu0, mu1), TIMES)
    np.testing.assert_array_equal(path.source.grid.nodes, path.monge.nodes)
    np.testing.assert_array_equal(path.source.density, mu0.density[: len(path.source.density)])
    assert endpoint_mismatch(path, mu1).mass <= 1e-9


def test_path_conserves_mass(sphere_pair):
    mu0, mu1 = sphere_pair
    path = displacement_interpolate(mu0, quantile_monge(mu0, mu1), TIMES)
    for m in path.measures:
        assert m.mass() == pytest.approx(1.0, abs=1e-9)


def test_path_is_a_constant_speed_geodesic(sphere_pair):
    mu0, mu1 = sphere_pair
    path = displacement_interpolate(mu0, quantile_monge(mu0, mu1), TIMES)
    assert geodesic_residual(path) <= 1e-6


def test_translation_midpoint(cylinder):
    mu0, mu1 = _uniform(cylinder, 0.0, 1.0), _uniform(cylinder, 0.3, 1.3)
    mid = displacement_interpolate(mu0, quantile_monge(mu0, mu1), [0.0, 0.5, 1.0]).at(0.5)
    assert mid.grid.nodes[0] == pytest.approx(0.15, abs=1e-12)
    assert mid.grid.nodes[-1] == pytest.approx(1.15, abs=1e-12)
    np.testing.assert_allclose(mid.density, mu0.density, rtol=1e-12)


def test_change_of_variables(sphere_pair):
    mu0, mu1 = sphere_pair
    path = displacement_interpolate(mu0, quantile_monge(mu0, mu1), TIMES)
    source = path.source
    f0 = source.manifold.f(source.grid.nodes)
    for k, m in enumerate(path.measures):
        moved = np.trapezoid(m.density**2 * m.manifold.f(m.grid.nodes), m.grid.nodes)
        jac = path.jacobians[k]
        pulled = np.trapezoid(np.where(source.density > 0, source.density**2 / jac, 0.0) * f0, source.grid.nodes)
        assert moved == pytest.approx(pulled, rel=1e-4)


def test_escape_from_principal_stratum(sphere):
    mu0 = _uniform(sphere, 2.8, 3.0)
    monge = MongeMap.from_velocity(sphere, mu0.grid.nodes, np.full(mu0.grid.n, 0.14))
    with pytest.raises(GeodesicEscapeError) as exc:
        displacement_interpolate(mu0, monge, TIMES)
    assert exc.value.particle is not None


def test_caustic_detected(cylinder):
    mu0 = _uniform(cylinder, 0.0, 1.0, n=65)
    monge = MongeMap.from_image(cylinder, mu0.grid.nodes, mu0.grid.nodes[::-1].copy())
    with pytest.raises(CausticError) as exc:
        displacement_interpolate(mu0, monge, [0.0, 0.5, 1.0])
    assert exc.value.time == 0.5


def test_time_grid_must_span_unit_interval(cylinder):
    mu0 = _uniform(cylinder, 0.0, 1.0, n=17)
    with pytest.raises(DomainError):
        displacement_interpolate(mu0, quantile_monge(mu0, mu0), [0.0, 0.5])


def test_split_support_rejected(cylinder):
    q = np.ones(17)
    q[8] = 0.0
    mu0 = QuotientMeasure(cylinder, QuotientGrid.uniform(0.0, 1.0, 17), q)
    with pytest.raises(DomainError, match="connected"):
        displacement_interpolate(mu0, MongeMap.from_velocity(cylinder, mu0.grid.nodes, np.zeros(17)), [0.0, 1.0])


def test_potentials_follow_particles(cylinder):
    mu0, mu1 = _uniform(cylinder, 0.0, 1.0, n=33), _uniform(cylinder, 0.3, 1.3, n=33)
    path = displacement_interpolate(mu0, quantile_monge(mu0, mu1), [0.0, 0.5, 1.0])
    np.testing.assert_allclose(path.potentials[2] - path.potentials[0], 0.5 * 0.3**2, atol=1e-12)


# ---------------------------------------------------------------------------
# Hopf-Lax
# ---------------------------------------------------------------------------


NODES = np.linspace(-2.0, 2.0, 2001)
INNER = np.abs(NODES) <= 1.0


def test_hopf_lax_time_zero():
    psi = np.sin(NODES)
    np.testing.assert_array_equal(hopf_lax_potential(NODES, psi, 0.0), psi)


def test_hopf_lax_linear():
    out = hopf_lax_potential(NODES, 0.7 * NODES, 0.5)
    np.testing.assert_allclose(out[INNER], 0.7 * NODES[INNER] - 0.7**2 * 0.5 / 2, atol=1e-5)


def test_hopf_lax_constant():
    np.testing.assert_allclose(hopf_lax_potential(NODES, np.full_like(NODES, 3.0), 0.4), 3.0)


def test_hopf_lax_quadratic():
    out = hopf_lax_potential(NODES, NODES**2 / 2, 1.0)
    np.testing.assert_allclose(out[INNER], NODES[INNER] ** 2 / 4, atol=1e-5)


def test_hopf_lax_semigroup():
    psi = NODES**2 / 2
    twice = hopf_lax_potential(NODES, hopf_lax_potential(NODES, psi, 0.3), 0.2)
    once = hopf_lax_potential(NODES, psi, 0.5)
    np.testing.assert_allclose(twice[INNER], once[INNER], atol=1e-4)


def test_hopf_lax_negative_time():
    with pytest.raises(DomainError):
        hopf_lax_potential(NODES, NODES, -0.1)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------


def test_jacobian_identity(sphere):
    mu = make_quotient_measure(sphere, DensitySpec("bump"), 129)
    path = displacement_interpolate(mu, quantile_monge(mu, mu), TIMES)
    u = float(path.monge.nodes[64])
    assert transport_jacobian(path, 0.5, u).jacobian == pytest.approx(1.0, abs=1e-12)


def test_jacobian_cylinder_translation(cylinder):
    mu0, mu1 = _uniform(cylinder, 0.0, 1.0, n=65), _uniform(cylinder, 0.3, 1.3, n=65)
    path = displacement_interpolate(mu0, quantile_monge(mu0, mu1), TIMES)
    for t in TIMES:
        assert transport_jacobian(path, t, 0.5).jacobian == pytest.approx(1.0, abs=1e-12)


def test_jacobian_plane_translation_matches_area_ratio(plane):
    nodes = np.linspace(1.0, 2.0, 101)
    mu0 = QuotientMeasure(plane, QuotientGrid(nodes), np.ones(101))
    path = displacement_interpolate(mu0, MongeMap.from_velocity(plane, nodes, np.full(101, 0.5)), TIMES)
    u, eps = float(nodes[50]), 1e-3
    for t in TIMES:
        sample = transport_jacobian(path, t, u)
        assert sample.jacobian == pytest.approx((u + 0.5 * t) / u, abs=1e-12)
        moved = quad(plane.f, u - eps + 0.5 * t, u + eps + 0.5 * t)[0]
        assert sample.jacobian == pytest.approx(moved / quad(plane.f, u - eps, u + eps)[0], abs=1e-6)
        assert sample.delta == pytest.approx(sample.jacobian**0.5)


def test_jacobian_off_grid(cylinder):
    mu0 = _uniform(cylinder, 0.0, 1.0, n=5)
    path = displacement_interpolate(mu0, quantile_monge(mu0, mu0), TIMES)
    with pytest.raises(DomainError):
        transport_jacobian(path, 0.5, 0.3)
    with pytest.raises(DomainError):
        transport_jacobian(path, 0.3, 0.5)


# ---------------------------------------------------------------------------
# Equivariance and orbit-to-orbit transport
# ---------------------------------------------------------------------------


def test_quotient_map_lift_is_equivariant(sphere):
    mu0 = make_quotient_measure(sphere, DensitySpec("random"), 64, seed=1)
    mu1 = make_quotient_measure(sphere, DensitySpec("bump"), 64)
    report = orbit_transport_check(sphere, quantile_monge(mu0, mu1), rotations=16)
    assert report.violation <= 1e-12
    assert report.rotations == 16


def test_vertical_potential_breaks_equivariance(plane):
    nodes = np.linspace(1.0, 2.0, 5)
    monge = MongeMap.from_velocity(plane, nodes, np.full(5, 0.1))
    report = orbit_transport_check(plane, monge, rotations=[0.3, 1.1], vertical=lambda u, th: 0.2 * np.cos(th[:, 0]))
    assert report.commutator > 1e-3


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.9])
def test_radial_shift_moves_orbit_measures(plane, lam):
    nodes = np.linspace(1.0, 2.0, 33)
    shift = MongeMap.from_velocity(plane, nodes, np.full(33, lam))
    seen = []

    def target(u):
        seen.append(u)
        return uniform_conditional(plane, 64, u)

    report = orbit_transport_check(plane, shift, rotations=16, target=target)
    assert report.violation <= 1e-10
    np.testing.assert_allclose(seen, nodes + lam, atol=1e-12)


def test_pushforward_compares_against_target_orbit(plane):
    nodes = np.linspace(1.0, 2.0, 9)
    shift = MongeMap.from_velocity(plane, nodes, np.full(9, 0.5))
    theta = fiber_nodes(1, 64, plane.fiber_period)[:, 0]
    tilted = 1.0 + 0.3 * np.cos(theta)
    report = orbit_transport_check(plane, shift, target=lambda u: OrbitConditional(u, tilted, 64))
    assert report.pushforward == pytest.approx(0.3)
    with pytest.raises(ShapeError, match="not at T"):
        orbit_transport_check(plane, shift, target=lambda u: uniform_conditional(plane, 64, u - 0.5))


def test_inconsistent_gradient_is_reported(plane):
    nodes = np.linspace(1.0, 2.0, 9)
    image = nodes + 0.5
    broken = MongeMap(plane, nodes, image, np.zeros(9), np.full(9, 0.25))
    assert orbit_transport_check(plane, broken).orbit == pytest.approx(0.25)


def test_fiber_rearrangement_pushes_source_to_target(sphere):
    theta = fiber_nodes(1, 128, sphere.fiber_period)[:, 0]
    target_density = 1.0 + 0.5 * np.cos(theta)
    mu0, mu1 = _uniform(sphere, 1.0, 2.0, n=33), _uniform(sphere, 1.2, 2.2, n=33)
    monge = quantile_monge(mu0, mu1)
    source = OrbitConditional(float(monge.nodes[10]), np.ones(128), 128)
    target = OrbitConditional(float(monge.image[10]), target_density / target_density.mean(), 128)
    composed = compose_orbit_transport(monge, source, target, 10)
    assert composed.defect <= 1e-9
    assert np.all(np.diff(composed.image_theta) >= 0)
    assert composed.image_u == pytest.approx(float(monge.nodes[10]) + 0.2, abs=1e-12)


def test_fiber_rearrangement_identity():
    c = OrbitConditional(1.0, np.ones(32), 32)
    images = fiber_rearrangement(c, c, 2 * math.pi)
    np.testing.assert_allclose(images, 2 * math.pi * np.arange(32) / 32, atol=1e-12)
