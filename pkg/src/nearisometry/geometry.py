"""Geometric primitives: point configurations, distances, simplex volumes,
distortion ratios and the minimax affine approximant on a simplex."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import pdist, squareform

from .errors import DegenerateError

EXHAUSTIVE_LIMIT = 20


@dataclass(frozen=True)
class PointConfig:
    """Ordered finite set of points in R^D with optional labels."""

    points: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        pts = as_points(self.points)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != len(pts):
                raise ValueError(f"{len(labels)} labels for {len(pts)} points")
            object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def diam(self) -> float:
        return diameter(self.points)

    def subset(self, indices) -> "PointConfig":
        idx = list(indices)
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return PointConfig(self.points[idx], labels)


def as_points(points) -> np.ndarray:
    """Coerce a PointConfig, sequence of vectors or array into a (k, D) float array."""
    if isinstance(points, PointConfig):
        return points.points
    if isinstance(points, np.ndarray):
        arr = np.array(points, dtype=float)
    else:
        rows = list(points)
        if rows and any(np.ndim(r) != 1 for r in rows):
            raise ValueError("every point must be a 1-d vector")
        lengths = {len(r) for r in rows}
        if len(lengths) > 1:
            raise ValueError(f"dimension mismatch among points: lengths {sorted(lengths)}")
        arr = np.array(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ValueError(f"expected a (k, D) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def diameter(points) -> float:
    pts = as_points(points)
    if len(pts) < 2:
        return 0.0
    return float(pdist(pts).max())


def pairwise_distances(config) -> np.ndarray:
    """Symmetric matrix of Euclidean distances with zero diagonal."""
    pts = as_points(config)
    if len(pts) == 0:
        raise ValueError("need at least one point")
    if len(pts) == 1:
        return np.zeros((1, 1))
    return squareform(pdist(pts))


def simplex_volume(points) -> float:
    """l-volume of the simplex with l+1 vertices: sqrt(det Gram)/l!."""
    pts = as_points(points)
    order = len(pts) - 1
    if order < 1:
        raise ValueError("a simplex needs at least two vertices")
    if order > pts.shape[1]:
        raise ValueError(f"order {order} exceeds dimension {pts.shape[1]}")
    return float(_batched_volumes(pts[None])[0])


def _batched_volumes(simplices: np.ndarray) -> np.ndarray:
    # simplices: (n, l+1, D)
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    gram = edges @ np.swapaxes(edges, 1, 2)
    det = np.linalg.det(gram)
    order = simplices.shape[1] - 1
    return np.sqrt(np.clip(det, 0.0, None)) / math.factorial(order)


@dataclass(frozen=True)
class SimplexVolumeResult:
    order: int
    volume: float
    witness: tuple


def max_simplex_volume(config, order: int, limit: Optional[int] = EXHAUSTIVE_LIMIT) -> SimplexVolumeResult:
    """Exhaustive maximum of the order-l simplex volume over all (l+1)-tuples.

    Configurations larger than ``limit`` are rejected so that callers subsample
    explicitly; pass ``limit=None`` to accept the combinatorial cost.
    """
    pts = as_points(config)
    k, dim = pts.shape
    if not 1 <= order <= dim:
        raise ValueError(f"order must lie in [1, {dim}], got {order}")
    if k < order + 1:
        raise ValueError(f"need at least {order + 1} points, got {k}")
    if limit is not None and k > limit:
        raise ValueError(f"{k} points exceed the exhaustive limit {limit}; subsample explicitly")
    tuples = np.array(list(itertools.combinations(range(k), order + 1)))
    best_vol, best_tuple = -1.0, None
    for start in range(0, len(tuples), 50_000):
        chunk = tuples[start:start + 50_000]
        vols = _batched_volumes(pts[chunk])
        i = int(np.argmax(vols))
        if vols[i] > best_vol:
            best_vol, best_tuple = float(vols[i]), tuple(int(t) for t in chunk[i])
    return SimplexVolumeResult(order, best_vol, best_tuple)


def distortion_profile(P, Q, pairing: Optional[Sequence[int]] = None) -> tuple[float, float]:
    """(min, max) over pairs of |q_i - q_j| / |p_i - p_j|.

    ``pairing[i]`` is the index in Q matched to point i of P (identity if omitted).
    """
    p = as_points(P)
    q = as_points(Q)
    if pairing is not None:
        pairing = list(pairing)
        if sorted(pairing) != list(range(len(q))):
            raise ValueError("pairing must be a bijection onto Q's indices")
        q = q[pairing]
    if len(p) != len(q) or len(p) < 2:
        raise ValueError("P and Q need the same cardinality, at least 2")
    dp, dq = pdist(p), pdist(q)
    if np.any(dp == 0):
        raise DegenerateError("coincident points in P")
    ratios = dq / dp
    return float(ratios.min()), float(ratios.max())


def log_distortion(P, Q) -> float:
    """Smallest delta with (1+delta)^-1 <= ratio <= 1+delta for every pair."""
    lo, hi = distortion_profile(P, Q)
    if lo <= 0:
        return math.inf
    return max(hi, 1.0 / lo) - 1.0


@dataclass(frozen=True)
class AffineFunction:
    """Scalar affine function x -> slope . x + intercept."""

    slope: np.ndarray
    intercept: float

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.slope + self.intercept


@dataclass(frozen=True)
class MinimaxAffineResult:
    approximant: AffineFunction
    interpolant: AffineFunction
    level_offset: float
    max_error: float


def barycentric_lattice(dim: int, resolution: int) -> np.ndarray:
    """All barycentric weights with denominators ``resolution`` (shape (n, dim+1))."""
    rows = []
    for head in itertools.product(range(resolution + 1), repeat=dim):
        s = sum(head)
        if s <= resolution:
            rows.append((resolution - s,) + head)
    return np.array(rows, dtype=float) / resolution


def _default_resolution(dim: int, target: int = 10_000) -> int:
    n = 1
    while math.comb(n + 1 + dim, dim) <= target:
        n += 1
    return n


def minimax_affine_on_simplex(f: Callable, simplex, resolution: Optional[int] = None) -> MinimaxAffineResult:
    """Best affine approximation of a convex (or concave) f on a simplex.

    The secant hyperplane f1 through the vertex values is shifted by Y, half the
    extreme value of f - f1, so the error equioscillates between vertices and the
    extremal point. ``f`` maps an (n, D) array to n values.
    """
    verts = as_points(simplex)
    dim = verts.shape[1]
    if verts.shape[0] != dim + 1:
        raise ValueError(f"a {dim}-simplex needs {dim + 1} vertices")
    if simplex_volume(verts) <= 1e-14 * max(diameter(verts), 1e-300) ** dim:
        raise DegenerateError("simplex has zero volume")
    values = np.asarray(f(verts), dtype=float).reshape(-1)
    system = np.hstack([verts, np.ones((dim + 1, 1))])
    coef = np.linalg.solve(system, values)
    f1 = AffineFunction(coef[:dim].copy(), float(coef[dim]))

    res = resolution or _default_resolution(dim)
    weights = barycentric_lattice(dim, res)
    grid = weights @ verts
    gap = np.asarray(f(grid), dtype=float).reshape(-1) - f1(grid)
    i_min, i_max = int(np.argmin(gap)), int(np.argmax(gap))
    sign = -1.0 if abs(gap[i_min]) >= abs(gap[i_max]) else 1.0
    start = weights[i_min if sign < 0 else i_max][1:]

    edges = verts[1:] - verts[0]

    def objective(w):
        x = verts[0] + w @ edges
        return -sign * (float(np.asarray(f(x[None]), dtype=float).reshape(-1)[0]) - float(f1(x)))

    constraints = [{"type": "ineq", "fun": lambda w: 1.0 - np.sum(w)}]
    refined = minimize(objective, start, method="SLSQP", bounds=[(0.0, 1.0)] * dim,
                       constraints=constraints, options={"ftol": 1e-15, "maxiter": 200})
    extreme = sign * max(-refined.fun if refined.success else -np.inf, sign * gap[i_min if sign < 0 else i_max])
    level = 0.5 * extreme
    approx = AffineFunction(f1.slope, f1.intercept + level)
    return MinimaxAffineResult(approx, f1, float(level), float(abs(level)))
