"""Exact discrete Kantorovich problem, used as an independent oracle for the quantile W2."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import ot

from .errors import DomainError, MarginalError, ShapeError

logger = logging.getLogger(__name__)

MAX_ATOMS = 512
NUM_ITER_MAX = 10_000_000


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse plan: weights[k] of mass moves from source atom rows[k] to target atom cols[k]."""

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.source_weights), len(self.target_weights)))
        out[self.rows, self.cols] = self.weights
        return out

    def marginal_defect(self) -> float:
        plan = self.dense()
        return float(
            max(
                np.max(np.abs(plan.sum(axis=1) - self.source_weights)),
                np.max(np.abs(plan.sum(axis=0) - self.target_weights)),
            )
        )

    def triplets(self) -> list[tuple[int, int, float]]:
        """Sparse export rows (i, j, weight)."""
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.rows, self.cols, self.weights, strict=True)]


def squared_distance_cost(x, y) -> np.ndarray:
    """d(x_i, y_j)^2 along the quotient coordinate."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return ot.dist(x.reshape(-1, 1), y.reshape(-1, 1), metric="sqeuclidean")


def kantorovich_lp(a, b, cost, tol: float = 1e-9) -> tuple[TransportPlan, float]:
    """Optimal plan and cost min <pi, cost> over couplings of a and b (network simplex)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("marginals must be one-dimensional weight vectors")
    if len(a) > MAX_ATOMS or len(b) > MAX_ATOMS:
        raise DomainError(f"LP oracle is limited to {MAX_ATOMS} atoms per side, got {len(a)} x {len(b)}")
    if cost.shape != (len(a), len(b)):
        raise ShapeError(f"cost matrix has shape {cost.shape}, expected {(len(a), len(b))}")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise DomainError("cost matrix must be finite and nonnegative")
    if np.any(a < 0) or np.any(b < 0):
        raise MarginalError("marginal weights must be nonnegative")
    if abs(a.sum() - b.sum()) > tol:
        raise MarginalError(f"marginal masses differ: {a.sum():.12g} vs {b.sum():.12g}")

    plan, log = ot.emd(a, b, cost, numItermax=NUM_ITER_MAX, log=True)
    if log.get("warning"):
        logger.warning("network simplex: %s", log["warning"])
    rows, cols = np.nonzero(plan > 0)
    result = TransportPlan(rows=rows, cols=cols, weights=plan[rows, cols], source_weights=a, target_weights=b)
    defect = result.marginal_defect()
    if defect > tol:
        raise MarginalError(f"LP plan violates its marginals by {defect:.3g}")
    return result, float(np.sum(plan * cost))
