"""Density ingestion and export: long-format CSV (u, theta_1..theta_m, rho) plus JSON metadata."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .config import DensitySpec, GridConfig
from .errors import ConfigError, ShapeError
from .geometry import QuotientGrid, WarpedManifold
from .measures import AbsContMeasure, Disintegration, fiber_nodes, make_density


def density_header(fiber_dim: int) -> list[str]:
    return ["u", *(f"theta_{k + 1}" for k in range(fiber_dim)), "rho"]


def density_rows(mu: AbsContMeasure) -> list[list[float]]:
    mf = mu.manifold
    theta = fiber_nodes(mf.fiber_dim, mu.n_theta, mf.fiber_period)
    return [
        [float(u), *(float(x) for x in theta[j]), float(mu.density[i, j])]
        for i, u in enumerate(mu.grid.nodes)
        for j in range(len(theta))
    ]


def read_density_csv(path: str | Path, mf: WarpedManifold) -> AbsContMeasure:
    """Load a product-grid density; rows may come in any order."""
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = [[float(x) for x in row] for row in reader if row]
    except (OSError, StopIteration, ValueError) as e:
        raise ConfigError(f"{path}: cannot read density CSV: {e}") from None
    expected = density_header(mf.fiber_dim)
    if [h.strip() for h in header] != expected:
        raise ShapeError(f"{path}: header {header} does not match {expected}")
    data = np.array(rows, dtype=float).reshape(-1, len(expected))

    u_nodes = np.unique(data[:, 0])
    axis = np.unique(data[:, 1:-1])
    n_theta = len(axis)
    expected_axis = mf.fiber_period * np.arange(n_theta) / n_theta
    if not np.allclose(axis, expected_axis, rtol=0, atol=1e-9 * mf.fiber_period):
        raise ShapeError(f"{path}: fiber coordinates are not an evenly spaced periodic grid")
    if len(data) != len(u_nodes) * n_theta**mf.fiber_dim:
        raise ShapeError(f"{path}: {len(data)} rows do not fill a {len(u_nodes)} x {n_theta}^{mf.fiber_dim} grid")

    iu = np.searchsorted(u_nodes, data[:, 0])
    it = np.rint(data[:, 1:-1] * n_theta / mf.fiber_period).astype(int) % n_theta
    flat = np.ravel_multi_index(tuple(it.T), (n_theta,) * mf.fiber_dim)
    density = np.full((len(u_nodes), n_theta**mf.fiber_dim), np.nan)
    density[iu, flat] = data[:, -1]
    if np.any(np.isnan(density)):
        raise ShapeError(f"{path}: duplicate or missing grid points")
    return AbsContMeasure(mf, QuotientGrid(u_nodes), n_theta, density)


def load_density(
    mf: WarpedManifold, spec: DensitySpec, grid: GridConfig, seed: int, base_dir: str | Path | None = None
) -> AbsContMeasure:
    """Density from a CSV file when `spec.csv` is set, otherwise from its preset."""
    if spec.csv:
        path = Path(spec.csv)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return read_density_csv(path, mf).normalized()
    return make_density(mf, spec, grid.n_u, grid.n_theta, seed)


def density_metadata(mu: AbsContMeasure, degenerate: tuple[int, ...] = ()) -> dict:
    return {
        "grid": {
            "n_u": mu.grid.n,
            "n_theta": mu.n_theta,
            "fiber_dim": mu.manifold.fiber_dim,
            "u_range": [float(mu.grid.nodes[0]), float(mu.grid.nodes[-1])],
        },
        "mass": mu.mass(),
        "flags": {"degenerate_orbits": [float(mu.grid.nodes[i]) for i in degenerate]},
    }


def marginal_rows(d: Disintegration) -> list[list[float]]:
    m = d.marginal
    return [[float(u), float(q), float(l)] for u, q, l in zip(m.grid.nodes, m.density, m.line_density(), strict=True)]


def conditional_rows(d: Disintegration) -> list[list[float]]:
    mf = d.marginal.manifold
    theta = fiber_nodes(mf.fiber_dim, d.n_theta, mf.fiber_period)
    return [
        [c.u, *(float(x) for x in theta[j]), float(c.density[j])]
        for c in d.conditionals
        for j in range(len(theta))
    ]
