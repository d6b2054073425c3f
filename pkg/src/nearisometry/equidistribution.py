"""Well-distributed points on spheres and the torus: Riesz energy minimization,
separation and covering metrics, discrepancy, finite-field point sets and
spherical design tests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist

from .errors import ConsistencyError, InfiniteEnergy

# ---------------------------------------------------------------- manifolds


class Manifold:
    kind = "abstract"
    dim = 0
    ambient_dim = 0

    def sample(self, n: int, rng) -> np.ndarray:
        raise NotImplementedError

    def project(self, X) -> np.ndarray:
        """Nearest manifold point for each ambient point."""
        raise NotImplementedError

    def tangent(self, X, G) -> np.ndarray:
        """Component of each row of G tangent to the manifold at the matching row of X."""
        raise NotImplementedError

    def residual(self, X) -> np.ndarray:
        """Violation of the defining equation."""
        raise NotImplementedError

    def dense_cover(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def cover_resolution(self, n: int) -> float:
        """Typical spacing of ``dense_cover(n)``: (area / n)^(1/D)."""
        return (self.area / n) ** (1.0 / self.dim)

    @property
    def area(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class Sphere(Manifold):
    """Unit sphere S^D in R^(D+1)."""

    kind = "sphere"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("sphere dimension must be at least 1")
        self.dim = int(dim)
        self.ambient_dim = self.dim + 1

    def sample(self, n, rng):
        return self.project(rng.normal(size=(n, self.ambient_dim)))

    def project(self, X):
        X = np.asarray(X, dtype=float)
        norms = np.linalg.norm(X, axis=-1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("cannot project the origin onto the sphere")
        return X / norms

    def tangent(self, X, G):
        return G - np.sum(G * X, axis=-1, keepdims=True) * X

    def residual(self, X):
        return np.abs(np.linalg.norm(X, axis=-1) - 1.0)

    @property
    def area(self):
        n = self.ambient_dim
        return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)

    def dense_cover(self, n):
        if self.dim == 1:
            t = 2 * math.pi * (np.arange(n) + 0.5) / n
            return np.column_stack([np.cos(t), np.sin(t)])
        if self.dim == 2:
            i = np.arange(n) + 0.5
            z = 1.0 - 2.0 * i / n
            phi = math.pi * (3.0 - math.sqrt(5.0)) * i
            r = np.sqrt(1.0 - z * z)
            return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        return self.sample(n, np.random.default_rng(0))

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


class Torus(Manifold):
    """((R + r cos u) cos v, (R + r cos u) sin v, r sin u) with R = 2, r = 1 by default."""

    kind = "torus"
    dim = 2
    ambient_dim = 3

    def __init__(self, center_radius: float = 2.0, tube_radius: float = 1.0):
        if not center_radius > tube_radius > 0:
            raise ValueError("need center_radius > tube_radius > 0")
        self.R = float(center_radius)
        self.r = float(tube_radius)

    def point(self, u, v):
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        w = self.R + self.r * np.cos(u)
        return np.stack([w * np.cos(v), w * np.sin(v), self.r * np.sin(u)], axis=-1)

    def sample(self, n, rng):
        # area element is proportional to R + r cos u
        out = np.empty(0)
        while len(out) < n:
            u = rng.uniform(0, 2 * math.pi, size=2 * n)
            keep = rng.uniform(0, self.R + self.r, size=2 * n) < self.R + self.r * np.cos(u)
            out = np.concatenate([out, u[keep]])
        u = out[:n]
        v = rng.uniform(0, 2 * math.pi, size=n)
        return self.point(u, v)

    def _core(self, X):
        rho = np.linalg.norm(X[..., :2], axis=-1, keepdims=True)
        if np.any(rho == 0):
            raise ValueError("points on the symmetry axis have no nearest torus point")
        core = np.concatenate([self.R * X[..., :2] / rho, np.zeros_like(rho)], axis=-1)
        return core

    def project(self, X):
        X = np.asarray(X, dtype=float)
        core = self._core(X)
        off = X - core
        return core + self.r * off / np.linalg.norm(off, axis=-1, keepdims=True)

    def tangent(self, X, G):
        normal = (X - self._core(X)) / self.r
        return G - np.sum(G * normal, axis=-1, keepdims=True) * normal

    def residual(self, X):
        X = np.asarray(X, dtype=float)
        rho = np.linalg.norm(X[..., :2], axis=-1)
        return np.abs((rho - self.R) ** 2 + X[..., 2] ** 2 - self.r ** 2)

    @property
    def area(self):
        return 4.0 * math.pi ** 2 * self.R * self.r

    def dense_cover(self, n):
        nu = max(4, int(round(math.sqrt(n * self.r / self.R))))
        nv = max(4, int(round(n / nu)))
        u = 2 * math.pi * (np.arange(nu) + 0.5) / nu
        v = 2 * math.pi * (np.arange(nv) + 0.5) / nv
        uu, vv = np.meshgrid(u, v, indexing="ij")
        return self.point(uu.ravel(), vv.ravel())

    def to_dict(self):
        return {"kind": self.kind, "centerRadius": self.R, "tubeRadius": self.r}


def manifold_from_dict(data: dict) -> Manifold:
    if data["kind"] == "sphere":
        return Sphere(data["dim"])
    if data["kind"] == "torus":
        return Torus(data.get("centerRadius", 2.0), data.get("tubeRadius", 1.0))
    raise ValueError(f"unknown manifold {data['kind']!r}")


# ---------------------------------------------------------------- Riesz energy


def riesz_energy(config, s: float) -> float:
    """sum_{i<j} |x_i - x_j|^-s, or sum log(1/|x_i - x_j|) when s = 0."""
    X = np.asarray(config, dtype=float)
    if s < 0:
        raise ValueError("s must be non-negative")
    if len(X) < 2:
        return 0.0
    d = pdist(X)
    if np.any(d == 0):
        raise InfiniteEnergy("coincident points")
    if s == 0:
        return float(-np.sum(np.log(d)))
    return float(np.sum(d ** (-s)))


def riesz_gradient(X, s: float) -> np.ndarray:
    """Euclidean gradient of the energy with respect to every point."""
    X = np.asarray(X, dtype=float)
    d2 = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    if np.any(d2 == 0):
        raise InfiniteEnergy("coincident points")
    w = -1.0 / d2 if s == 0 else -s * d2 ** (-(s + 2) / 2)
    # sum_j w_ij (x_i - x_j)
    return w.sum(axis=1)[:, None] * X - w @ X


@dataclass
class EnergyReport:
    s: float
    energy: float
    gradient_norm: float
    iterations: int
    seed: int
    trace: list = field(default_factory=list, repr=False)
    restarts: int = 1

    def to_dict(self) -> dict:
        return {"s": self.s, "energy": self.energy, "gradientNorm": self.gradient_norm,
                "iterations": self.iterations, "seed": self.seed, "restarts": self.restarts}


def descend(manifold: Manifold, X, s: float, max_iters: int = 2000, tol: float = 1e-9,
            armijo: float = 0.5, shrink: float = 0.5) -> tuple[np.ndarray, EnergyReport]:
    """Projected gradient descent with Armijo backtracking and retraction onto the manifold.

    Each line search starts from a Barzilai-Borwein step; only steps that decrease
    the energy by the Armijo margin are accepted, so the energy trace is monotone.
    Stops when the tangent gradient norm falls to ``tol`` times the energy scale
    or the step collapses.
    """
    X = manifold.project(np.asarray(X, dtype=float))
    energy = riesz_energy(X, s)
    trace = [energy]
    scale = max(abs(energy), 1.0)
    g = manifold.tangent(X, riesz_gradient(X, s))
    gnorm = float(np.linalg.norm(g))
    step = 0.1 * float(pdist(X).min()) / max(float(np.max(np.linalg.norm(g, axis=1))), 1e-300)
    it = 0
    while it < max_iters and gnorm > tol * scale:
        accepted = False
        while step * gnorm > 1e-15 * math.sqrt(len(X)):
            trial = manifold.project(X - step * g)
            try:
                e_trial = riesz_energy(trial, s)
            except InfiniteEnergy:
                e_trial = math.inf
            if e_trial <= energy - armijo * step * gnorm ** 2:
                accepted = True
                break
            step *= shrink
        if not accepted:
            break
        it += 1
        g_new = manifold.tangent(trial, riesz_gradient(trial, s))
        ds, dg = (trial - X).ravel(), (g_new - g).ravel()
        curvature = float(ds @ dg)
        step = float(ds @ ds) / curvature if curvature > 0 else 2.0 * step
        X, energy, g = trial, e_trial, g_new
        gnorm = float(np.linalg.norm(g))
        trace.append(energy)
    return X, EnergyReport(float(s), energy, gnorm, it, -1, trace)


def optimize_config(manifold: Manifold, k: int, s: float, max_iters: int = 2000, seed: int = 0,
                    restarts: int = 1, tol: float = 1e-9) -> tuple[np.ndarray, EnergyReport]:
    """Best local minimizer over ``restarts`` seeded random starts (seeds seed, seed+1, ...)."""
    if k < 2:
        raise ValueError("need at least two points")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        X, report = descend(manifold, manifold.sample(k, rng), s, max_iters, tol)
        report.seed = seed + r
        if best is None or report.energy < best[1].energy:
            best = (X, report)
    best[1].restarts = restarts
    return best


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class ConfigMetrics:
    min_distance: float
    separation_radius: float
    mesh_norm: float
    mesh_ratio: float
    cover_points: int
    cover_resolution: float

    def to_dict(self) -> dict:
        return {"minDistance": self.min_distance, "separationRadius": self.separation_radius,
                "meshNorm": self.mesh_norm, "meshRatio": self.mesh_ratio,
                "coverPoints": self.cover_points, "coverResolution": self.cover_resolution}


def config_metrics(manifold: Manifold, config, dense_n: int = 200_000) -> ConfigMetrics:
    """Separation radius (half the min distance), mesh norm over a dense cover and their ratio."""
    X = np.asarray(config, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least two points")
    min_dist = float(pdist(X).min())
    cover = manifold.dense_cover(dense_n)
    mesh, _ = cKDTree(X).query(cover)
    rho = float(mesh.max())
    sep = 0.5 * min_dist
    ratio = rho / sep if sep > 0 else math.inf
    return ConfigMetrics(min_dist, sep, rho, ratio, len(cover), manifold.cover_resolution(len(cover)))


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    ks: tuple
    min_distances: tuple

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "k": list(self.ks),
                "minDistance": list(self.min_distances)}


def scaling_check(manifold: Manifold, s: float, ks: Sequence[int], seed: int = 0, restarts: int = 1,
                  max_iters: int = 2000) -> ScalingFit:
    """Least-squares slope of log(min distance) against log k over optimized configurations."""
    ks = list(ks)
    if len(ks) < 3 or ks != sorted(ks):
        raise ValueError("need at least three ascending k values")
    dists = []
    for k in ks:
        X, _ = optimize_config(manifold, k, s, max_iters=max_iters, seed=seed, restarts=restarts)
        dists.append(float(pdist(X).min()))
    slope, intercept = np.polyfit(np.log(ks), np.log(dists), 1)
    return ScalingFit(float(slope), float(intercept), tuple(ks), tuple(dists))


# ---------------------------------------------------------------- moments and discrepancy


def sphere_moment(alpha: Sequence[int]) -> float:
    """Mean of x^alpha over the unit sphere in R^len(alpha) under normalized area."""
    alpha = [int(a) for a in alpha]
    if any(a < 0 for a in alpha):
        raise ValueError("exponents must be non-negative")
    if any(a % 2 for a in alpha):
        return 0.0
    n = len(alpha)
    log = (math.lgamma(n / 2) + sum(math.lgamma((a + 1) / 2) for a in alpha)
           - (n / 2) * math.log(math.pi) - math.lgamma((sum(alpha) + n) / 2))
    return math.exp(log)


def monomials(n: int, degree: int) -> list:
    """Exponent tuples of length n with the given total degree."""
    out = []
    for cut in itertools.combinations(range(degree + n - 1), n - 1):
        bounds = (-1,) + cut + (degree + n - 1,)
        out.append(tuple(bounds[i + 1] - bounds[i] - 1 for i in range(n)))
    return out


def design_test(config, t: int, index: bool = False) -> float:
    """Largest |mean of x^alpha over the config - sphere mean| over monomials.

    Monomials of total degree exactly t when ``index`` is set, else every degree up to t.
    """
    X = np.asarray(config, dtype=float)
    degrees = [t] if index else range(0, t + 1)
    worst = 0.0
    for deg in degrees:
        for alpha in monomials(X.shape[1], deg):
            mean = float(np.mean(np.prod(X ** np.array(alpha), axis=1)))
            worst = max(worst, abs(mean - sphere_moment(alpha)))
    return worst


def discrepancy(config, f: Callable, exact: Optional[float] = None, manifold: Optional[Manifold] = None,
                n_mc: int = 200_000, seed: int = 0) -> float:
    """|integral of f - config average|; Monte Carlo over the manifold when ``exact`` is absent."""
    X = np.asarray(config, dtype=float)
    avg = float(np.mean(f(X)))
    if exact is None:
        if manifold is None:
            raise ValueError("need the exact integral or a manifold to sample")
        exact = float(np.mean(f(manifold.sample(n_mc, np.random.default_rng(seed)))))
    return abs(exact - avg)


# ---------------------------------------------------------------- finite fields


def is_odd_prime(p: int) -> bool:
    if p < 3 or p % 2 == 0:
        return False
    return all(p % q for q in range(3, int(math.isqrt(p)) + 1, 2))


def quadratic_character(a: int, p: int) -> int:
    """Legendre symbol by Euler's criterion."""
    a %= p
    if a == 0:
        return 0
    return 1 if pow(a, (p - 1) // 2, p) == 1 else -1


def finite_field_count(D: int, p: int) -> int:
    """Closed-form number of solutions of x_1^2 + ... + x_{D+1}^2 = 1 over F_p."""
    if D % 2:
        return p ** D - p ** ((D - 1) // 2) * quadratic_character((-1) ** ((D + 1) // 2), p)
    return p ** D + p ** (D // 2) * quadratic_character((-1) ** (D // 2), p)


@dataclass(frozen=True)
class FiniteFieldSphere:
    points: np.ndarray
    lifted: np.ndarray
    count: int
    formula_count: int


def finite_field_sphere(D: int, p: int, budget: int = 10 ** 7) -> FiniteFieldSphere:
    """All solutions over F_p, center-lifted to [-(p-1)/2, (p-1)/2] and normalized onto S^D."""
    if D < 1:
        raise ValueError("D must be at least 1")
    if not is_odd_prime(p):
        raise ValueError(f"{p} is not an odd prime")
    if p ** (D + 1) > budget:
        raise ValueError(f"p^(D+1) = {p ** (D + 1)} exceeds the enumeration budget {budget}")
    residues = np.arange(p)
    squares = residues * residues % p
    total = np.zeros((p,) * (D + 1), dtype=np.int64)
    for axis in range(D + 1):
        shape = [1] * (D + 1)
        shape[axis] = p
        total = total + squares.reshape(shape)
    solutions = np.argwhere(total % p == 1)
    lifted = np.where(solutions > (p - 1) // 2, solutions - p, solutions)
    count = len(lifted)
    formula = finite_field_count(D, p)
    if count != formula:
        raise ConsistencyError(f"enumerated {count} solutions but the closed form gives {formula}")
    points = lifted / np.linalg.norm(lifted, axis=1, keepdims=True)
    return FiniteFieldSphere(points, lifted, count, formula)
