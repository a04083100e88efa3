import numpy as np
import pytest

from orbitlab.errors import DomainError, MarginalError, ShapeError
from orbitlab.kantorovich import MAX_ATOMS, kantorovich_lp, squared_distance_cost
from orbitlab.transport import w2_atoms


def test_single_atoms():
    _, cost = kantorovich_lp([1.0], [1.0], squared_distance_cost([0.2], [0.7]))
    assert cost == pytest.approx(0.25)


def test_split_mass_to_midpoint():
    plan, cost = kantorovich_lp([0.5, 0.5], [1.0], squared_distance_cost([0.0, 1.0], [0.5]))
    assert cost == pytest.approx(0.25)
    np.testing.assert_allclose(plan.dense(), [[0.5], [0.5]])


def test_optimal_cost_beats_product_plan():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(size=20), rng.uniform(size=30)
    a, b = np.full(20, 1 / 20), np.full(30, 1 / 30)
    cost = squared_distance_cost(x, y)
    plan, optimum = kantorovich_lp(a, b, cost)
    assert optimum <= float(a @ cost @ b) + 1e-12
    assert plan.marginal_defect() <= 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_quantile_formula_matches_lp(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 40, size=2)
    x, y = rng.normal(size=n), rng.normal(1.0, 2.0, size=m)
    a, b = rng.uniform(0.1, 1.0, size=n), rng.uniform(0.1, 1.0, size=m)
    a, b = a / a.sum(), b / b.sum()
    _, cost = kantorovich_lp(a, b, squared_distance_cost(x, y))
    assert w2_atoms(x, a, y, b) ** 2 == pytest.approx(cost, abs=1e-8)


def test_sparse_export():
    plan, _ = kantorovich_lp([0.5, 0.5], [0.5, 0.5], squared_distance_cost([0.0, 1.0], [0.0, 1.0]))
    assert plan.triplets() == [(0, 0, 0.5), (1, 1, 0.5)]


def test_mass_mismatch():
    with pytest.raises(MarginalError, match="masses differ"):
        kantorovich_lp([1.0], [0.5], np.zeros((1, 1)))


def test_atom_limit():
    n = MAX_ATOMS + 1
    with pytest.raises(DomainError, match="limited"):
        kantorovich_lp(np.full(n, 1 / n), np.full(n, 1 / n), np.zeros((n, n)))


def test_cost_shape():
    with pytest.raises(ShapeError):
        kantorovich_lp([0.5, 0.5], [1.0], np.zeros((1, 2)))


def test_negative_cost():
    with pytest.raises(DomainError):
        kantorovich_lp([1.0], [1.0], np.array([[-1.0]]))
