"""Smooth extension of a smooth near-isometry from an admissible compact set.

The complement of E is cut into dyadic cubes whose size tracks the distance to
E. Each cube gets a Euclidean motion fitted to phi on a ball inside E, and a
smooth partition of unity blends phi (near E) with those motions (away from E).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist

from .maps import (
    Box,
    SmoothMap,
    distortion_audit,
    jacobian_defects,
    map_from_dict,
    register_node,
    transition,
    transition_derivative,
)
from .procrustes import EuclideanMotion

# ---------------------------------------------------------------- admissible sets


class AdmissibleSet:
    """Compact set given by membership, distance d(x) and interior depth."""

    kind = "abstract"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def contains(self, X) -> np.ndarray:
        return self.distance(X) <= 0.0

    def distance(self, X) -> np.ndarray:
        """dist(x, E), zero on E."""
        raise NotImplementedError

    def depth(self, X) -> np.ndarray:
        """Radius of a ball centered at x contained in E (zero outside E)."""
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def diam(self) -> float:
        raise NotImplementedError

    def anchor(self) -> np.ndarray:
        """Some point of E."""
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}


def _rows(X):
    X = np.asarray(X, dtype=float)
    return X[None] if X.ndim == 1 else X


class BallSet(AdmissibleSet):
    kind = "ball"

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    def distance(self, X):
        return np.maximum(np.linalg.norm(_rows(X) - self.center, axis=1) - self.radius, 0.0)

    def depth(self, X):
        return np.maximum(self.radius - np.linalg.norm(_rows(X) - self.center, axis=1), 0.0)

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def diam(self):
        return 2.0 * self.radius

    def anchor(self):
        return self.center.copy()

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class BallUnion(AdmissibleSet):
    """Finite union of closed balls; depth is the best single-ball depth."""

    kind = "balls"

    def __init__(self, centers, radii):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        if len(self.radii) != len(self.centers) or np.any(self.radii <= 0):
            raise ValueError("need one positive radius per center")

    @property
    def dim(self):
        return self.centers.shape[1]

    def _gaps(self, X):
        X = _rows(X)
        return np.linalg.norm(X[:, None, :] - self.centers[None], axis=2) - self.radii

    def distance(self, X):
        return np.maximum(np.min(self._gaps(X), axis=1), 0.0)

    def depth(self, X):
        return np.maximum(-np.min(self._gaps(X), axis=1), 0.0)

    def bounds(self):
        return (np.min(self.centers - self.radii[:, None], axis=0),
                np.max(self.centers + self.radii[:, None], axis=0))

    @property
    def diam(self):
        best = float(2 * self.radii.max())
        for i, j in itertools.combinations(range(len(self.radii)), 2):
            best = max(best, float(np.linalg.norm(self.centers[i] - self.centers[j]) + self.radii[i] + self.radii[j]))
        return best

    def anchor(self):
        return self.centers[int(np.argmax(self.radii))].copy()

    def params(self):
        return {"centers": self.centers.tolist(), "radii": self.radii.tolist()}


class BoxSet(AdmissibleSet):
    kind = "box"

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.asarray(upper, dtype=float).reshape(-1)
        if np.any(self.upper <= self.lower):
            raise ValueError("box must have positive extent on every axis")

    @property
    def dim(self):
        return len(self.lower)

    def distance(self, X):
        X = _rows(X)
        gap = np.maximum(np.maximum(self.lower - X, X - self.upper), 0.0)
        return np.linalg.norm(gap, axis=1)

    def depth(self, X):
        X = _rows(X)
        return np.maximum(np.min(np.minimum(X - self.lower, self.upper - X), axis=1), 0.0)

    def bounds(self):
        return self.lower.copy(), self.upper.copy()

    @property
    def diam(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def params(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


class SegmentSet(AdmissibleSet):
    """Closed segment: a zero-thickness rod with no interior."""

    kind = "segment"

    def __init__(self, start, end):
        self.start = np.asarray(start, dtype=float).reshape(-1)
        self.end = np.asarray(end, dtype=float).reshape(-1)

    @property
    def dim(self):
        return len(self.start)

    def distance(self, X):
        X = _rows(X)
        v = self.end - self.start
        s = np.clip((X - self.start) @ v / max(float(v @ v), 1e-300), 0.0, 1.0)
        return np.linalg.norm(X - (self.start + s[:, None] * v), axis=1)

    def depth(self, X):
        return np.zeros(len(_rows(X)))

    def bounds(self):
        return np.minimum(self.start, self.end), np.maximum(self.start, self.end)

    @property
    def diam(self):
        return float(np.linalg.norm(self.end - self.start))

    def params(self):
        return {"start": self.start.tolist(), "end": self.end.tolist()}


class OracleSet(AdmissibleSet):
    """Set known only through a membership test, resolved on a lattice.

    Distances and depths are measured to lattice points and are accurate to the
    lattice spacing ``resolution``.
    """

    kind = "oracle"

    def __init__(self, membership: Callable, lower, upper, resolution: float):
        self.membership = membership
        self.lower = np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.asarray(upper, dtype=float).reshape(-1)
        self.resolution = float(resolution)
        axes = [np.arange(lo, hi + 0.5 * self.resolution, self.resolution) for lo, hi in zip(self.lower, self.upper)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        inside = np.asarray(membership(grid), dtype=bool)
        if not inside.any() or inside.all():
            raise ValueError("lattice must contain points both inside and outside the set")
        self._inside = grid[inside]
        self._in_tree = cKDTree(self._inside)
        self._out_tree = cKDTree(grid[~inside])

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, X):
        return np.asarray(self.membership(_rows(X)), dtype=bool)

    def distance(self, X):
        X = _rows(X)
        d, _ = self._in_tree.query(X)
        return np.where(self.contains(X), 0.0, d)

    def depth(self, X):
        X = _rows(X)
        d, _ = self._out_tree.query(X)
        slack = self.resolution * math.sqrt(self.dim)
        return np.where(self.contains(X), np.maximum(d - slack, 0.0), 0.0)

    def bounds(self):
        return self._inside.min(axis=0), self._inside.max(axis=0)

    @property
    def diam(self):
        pts = self._inside
        if len(pts) > self.dim + 1:
            try:
                pts = pts[ConvexHull(pts).vertices]
            except Exception:  # flat lattice sets fall back to all points
                pass
        return float(pdist(pts).max()) if len(pts) > 1 else 0.0

    def params(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "resolution": self.resolution}


_SET_KINDS = {"ball": BallSet, "balls": BallUnion, "box": BoxSet, "segment": SegmentSet}


def set_from_dict(data: dict) -> AdmissibleSet:
    data = dict(data)
    data.pop("schemaVersion", None)
    kind = data.pop("kind")
    if kind not in _SET_KINDS:
        raise ValueError(f"unknown set kind {kind!r}")
    return _SET_KINDS[kind](**data)


# ---------------------------------------------------------------- admissibility


def unit_ball_lattice(dim: int, per_axis: int = 9) -> np.ndarray:
    """Lattice points of [-1, 1]^D inside the closed unit ball, in lexicographic order."""
    axis = np.linspace(-1.0, 1.0, per_axis)
    g = np.array(list(itertools.product(axis, repeat=dim)))
    return g[np.linalg.norm(g, axis=1) <= 1.0 + 1e-12]


def _signed_depth(E, X):
    return E.depth(X) - E.distance(X)


def ball_search(E: AdmissibleSet, X, dist, c1: float, c2: float, per_axis: int = 9,
                prefer: str = "nearest", refine: int = 3, beam: int = 4):
    """Interior balls B(z, r) with |z - x| <= c1 dist and r >= c2 dist.

    Candidates are z = x + c1 dist g over the unit-ball lattice, refined ``refine`` times by
    lattices one cell wide around the deepest candidates so far, with r = depth(z).
    With ``prefer="nearest"`` the valid candidate nearest x wins and ties go to the
    larger r; with ``"largest"`` the largest r wins. Remaining ties go to the first
    candidate in lexicographic order. Returns (centers, radii, found).
    """
    if prefer not in ("nearest", "largest"):
        raise ValueError("prefer must be 'nearest' or 'largest'")
    X = _rows(X)
    dim = X.shape[1]
    dist = np.asarray(dist, dtype=float).reshape(-1)
    lattice = unit_ball_lattice(dim, per_axis)
    fine = lattice * (2.0 / (per_axis - 1))
    m = len(lattice)
    centers = np.empty_like(X)
    radii = np.empty(len(X))
    chunk = max(1, 100_000 // (m * (1 + refine * beam)))
    for start in range(0, len(X), chunk):
        sl = slice(start, start + chunk)
        x, scale = X[sl], c1 * dist[sl]
        coarse = x[:, None, :] + scale[:, None, None] * lattice[None]
        cand = coarse
        signed = _signed_depth(E, coarse.reshape(-1, dim)).reshape(-1, m)
        limit = scale[:, None] * (1 + 1e-12)
        # refinement passes: lattices one cell wide around the ``beam`` deepest allowed
        # candidates so far, where depth outside E counts as minus the distance
        for level in range(1, refine + 1):
            allowed = np.linalg.norm(cand - x[:, None, :], axis=2) <= limit
            ranked = np.argsort(-np.where(allowed, signed, -np.inf), axis=1, kind="stable")[:, :beam]
            seeds = np.take_along_axis(cand, ranked[:, :, None], axis=1)
            step = scale[:, None, None, None] * (fine * (2.0 / (per_axis - 1)) ** (level - 1))[None, None]
            local = (seeds[:, :, None, :] + step).reshape(len(x), -1, dim)
            cand = np.concatenate([cand, local], axis=1)
            signed = np.concatenate([signed, _signed_depth(E, local.reshape(-1, dim)).reshape(len(x), -1)], axis=1)
        offset = np.linalg.norm(cand - x[:, None, :], axis=2)
        inside = offset <= limit
        r = np.where(inside, np.maximum(signed, 0.0), -np.inf)
        valid = r >= (c2 * dist[sl] * (1 - 1e-12))[:, None]
        if prefer == "nearest":
            score = np.where(valid, np.round(offset / np.maximum(scale, 1e-300)[:, None], 12), np.inf)
        else:
            score = np.where(valid, 0.0, np.inf)
        # nearest first, then larger radius; argmax keeps the first of equal candidates
        nearest = score == score.min(axis=1, keepdims=True)
        best = np.argmax(np.where(nearest, r, -np.inf), axis=1)
        rows = np.arange(len(best))
        centers[sl] = cand[rows, best]
        radii[sl] = r[rows, best]
    found = radii >= c2 * dist * (1 - 1e-12)
    return centers, radii, found


@dataclass
class AdmissibilityReport:
    passed: bool
    n_checked: int
    centers: np.ndarray
    radii: np.ndarray
    failed_probe: Optional[np.ndarray] = None
    failed_distance: Optional[float] = None

    def to_dict(self) -> dict:
        return {"passed": self.passed, "nChecked": self.n_checked,
                "failedProbe": None if self.failed_probe is None else self.failed_probe.tolist(),
                "failedDistance": self.failed_distance}


def check_admissible(E: AdmissibleSet, probes, c0: float, c1: float, c2: float,
                     per_axis: int = 9) -> AdmissibilityReport:
    """Verify the interior-ball condition at every probe with 0 < d(x) <= c0 diam(E)."""
    X = _rows(probes)
    d = E.distance(X)
    mask = (d > 0) & (d <= c0 * E.diam)
    Xc, dc = X[mask], d[mask]
    if len(Xc) == 0:
        return AdmissibilityReport(True, 0, np.zeros((0, X.shape[1])), np.zeros(0))
    centers, radii, found = ball_search(E, Xc, dc, c1, c2, per_axis)
    if found.all():
        return AdmissibilityReport(True, len(Xc), centers, radii)
    k = int(np.argmin(found))
    return AdmissibilityReport(False, len(Xc), centers, radii, Xc[k].copy(), float(dc[k]))


# ---------------------------------------------------------------- Whitney cubes


def _bump(t):
    """exp(-1/(1 - t^2)) on |t| < 1 and its log-derivative."""
    inside = np.abs(t) < 1.0
    tt = np.where(inside, t, 0.0)
    den = 1.0 - tt * tt
    g = np.where(inside, np.exp(-1.0 / den), 0.0)
    dlog = np.where(inside, -2.0 * tt / den ** 2, 0.0)
    return g, dlog


@dataclass
class PartitionEval:
    """Partition of unity at a batch of points, as sparse (point, cube) pairs."""

    point: np.ndarray
    cube: np.ndarray
    theta: np.ndarray
    grad_theta: np.ndarray
    covered: np.ndarray
    delta: np.ndarray
    grad_delta: np.ndarray
    overlap: np.ndarray


@dataclass
class WhitneyCover:
    corners: np.ndarray
    sides: np.ndarray
    floor: np.ndarray
    dilation: float
    floor_side: float
    diam: float
    c0: float
    c3: float = 0.0
    small: Optional[np.ndarray] = None
    ball_centers: Optional[np.ndarray] = None
    ball_radii: Optional[np.ndarray] = None
    far_ball: Optional[tuple] = None
    linear: Optional[np.ndarray] = None
    translation: Optional[np.ndarray] = None
    far_motion: Optional[EuclideanMotion] = None
    eta: Optional[float] = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self._levels = []
        for side in np.unique(self.sides):
            idx = np.flatnonzero(self.sides == side)
            self._levels.append((float(side), cKDTree(self.centers[idx]), idx))

    @property
    def centers(self) -> np.ndarray:
        return self.corners + 0.5 * self.sides[:, None]

    @property
    def dim(self) -> int:
        return self.corners.shape[1]

    def __len__(self):
        return len(self.sides)

    def partition(self, X) -> PartitionEval:
        X = _rows(X)
        n, dim = X.shape
        pts, cubes = [], []
        for side, tree, idx in self._levels:
            hits = tree.query_ball_point(X, r=0.5 * self.dilation * side, p=np.inf)
            lens = np.fromiter((len(h) for h in hits), dtype=int, count=n)
            if lens.sum() == 0:
                continue
            pts.append(np.repeat(np.arange(n), lens))
            cubes.append(idx[np.fromiter(itertools.chain.from_iterable(hits), dtype=int, count=int(lens.sum()))])
        pi = np.concatenate(pts) if pts else np.zeros(0, dtype=int)
        ci = np.concatenate(cubes) if cubes else np.zeros(0, dtype=int)
        half = 0.5 * self.dilation * self.sides[ci]
        t = (X[pi] - self.centers[ci]) / half[:, None]
        g, dlog = _bump(t)
        b = np.prod(g, axis=1)
        keep = b > 0
        pi, ci, b, dlog, half = pi[keep], ci[keep], b[keep], dlog[keep], half[keep]
        grad_b = b[:, None] * dlog / half[:, None]
        total = np.bincount(pi, weights=b, minlength=n)
        grad_total = np.zeros((n, dim))
        np.add.at(grad_total, pi, grad_b)
        covered = total > 0
        s = total[pi]
        theta = b / s
        grad_theta = (grad_b - theta[:, None] * grad_total[pi]) / s[:, None]
        beta = self.sides[ci]
        delta = np.bincount(pi, weights=beta * theta, minlength=n)
        grad_delta = np.zeros((n, dim))
        np.add.at(grad_delta, pi, beta[:, None] * grad_theta)
        overlap = np.bincount(pi, minlength=n)
        return PartitionEval(pi, ci, theta, grad_theta, covered, delta, grad_delta, overlap)

    def sample(self, n: int, rng, cubes=None) -> np.ndarray:
        """Uniform points inside randomly chosen cubes; concentrates near E."""
        pool = np.arange(len(self)) if cubes is None else np.asarray(cubes)
        pick = pool[rng.integers(0, len(pool), size=n)]
        return self.corners[pick] + self.sides[pick, None] * rng.random((n, self.dim))

    def cubes_to_dict(self) -> dict:
        out = {"corners": self.corners.tolist(), "sides": self.sides.tolist(),
               "floor": self.floor.astype(int).tolist(), "dilation": self.dilation,
               "floorSide": self.floor_side, "diam": self.diam, "c0": self.c0}
        if self.linear is not None:
            out.update({"c3": self.c3, "small": self.small.astype(int).tolist(),
                        "ballCenters": self.ball_centers.tolist(), "ballRadii": self.ball_radii.tolist(),
                        "farBall": [self.far_ball[0].tolist(), self.far_ball[1]],
                        "linear": self.linear.tolist(), "translation": self.translation.tolist(),
                        "farMotion": self.far_motion.to_dict()})
        if self.eta is not None:
            out["eta"] = self.eta
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WhitneyCover":
        cover = cls(np.array(data["corners"], dtype=float), np.array(data["sides"], dtype=float),
                    np.array(data["floor"], dtype=bool), float(data["dilation"]), float(data["floorSide"]),
                    float(data["diam"]), float(data["c0"]))
        if "linear" in data:
            cover.c3 = float(data["c3"])
            cover.small = np.array(data["small"], dtype=bool)
            cover.ball_centers = np.array(data["ballCenters"], dtype=float)
            cover.ball_radii = np.array(data["ballRadii"], dtype=float)
            cover.far_ball = (np.array(data["farBall"][0], dtype=float), float(data["farBall"][1]))
            cover.linear = np.array(data["linear"], dtype=float)
            cover.translation = np.array(data["translation"], dtype=float)
            cover.far_motion = EuclideanMotion.from_dict(data["farMotion"])
        cover.eta = data.get("eta")
        return cover


def whitney_cubes(E: AdmissibleSet, lower, upper, floor_side: Optional[float] = None,
                  dilation: float = 2.0, c0: float = 1.0, keep_ratio: float = 0.5) -> WhitneyCover:
    """Dyadic cubes covering the box minus E.

    A cube is kept once diam(Q) <= keep_ratio d(center). Cubes inside E are dropped.
    Cubes still unresolved at ``floor_side`` are kept and flagged; they straddle the
    boundary of E and their total width is reported as the coverage gap.
    """
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    dim = len(lower)
    if dim != E.dim:
        raise ValueError("box and set dimensions differ")
    diam = E.diam
    lo, hi = E.bounds()
    reach = c0 * diam
    if np.any(lo - reach < lower) or np.any(hi + reach > upper):
        raise ValueError("box must contain the c0-neighborhood of the set")
    if not dilation > 1.0:
        raise ValueError("dilation must exceed 1 so the dilated cubes cover")
    floor_side = float(floor_side if floor_side is not None else c0 * diam / 3200.0)
    side = float(np.max(upper - lower))
    corners = lower[None].copy()
    offsets = np.array(list(itertools.product((0.0, 1.0), repeat=dim)))
    kept_c, kept_s, kept_f = [], [], []
    root = math.sqrt(dim)
    while len(corners):
        centers = corners + 0.5 * side
        d = E.distance(centers)
        inside = E.depth(centers) >= 0.5 * side * root
        keep = ~inside & (side * root <= keep_ratio * d)
        kept_c.append(corners[keep])
        kept_s.append(np.full(int(keep.sum()), side))
        kept_f.append(np.zeros(int(keep.sum()), dtype=bool))
        rest = corners[~inside & ~keep]
        if 0.5 * side < floor_side:
            kept_c.append(rest)
            kept_s.append(np.full(len(rest), side))
            kept_f.append(np.ones(len(rest), dtype=bool))
            break
        side *= 0.5
        corners = (rest[:, None, :] + side * offsets[None]).reshape(-1, dim)
    cover = WhitneyCover(np.vstack(kept_c), np.concatenate(kept_s), np.concatenate(kept_f),
                         float(dilation), floor_side, diam, float(c0))
    regular = ~cover.floor
    ratio = E.distance(cover.centers[regular]) / (cover.sides[regular] * root)
    cover.stats = {
        "nCubes": len(cover), "nFloor": int(cover.floor.sum()),
        "gapWidth": float(cover.sides[cover.floor].max() * root) if cover.floor.any() else 0.0,
        "centerRatioMin": float(ratio.min()) if len(ratio) else None,
        "centerRatioMax": float(ratio.max()) if len(ratio) else None,
    }
    return cover


def regularized_distance(cover: WhitneyCover, X) -> np.ndarray:
    """delta(x) = sum beta_nu Theta_nu(x); zero where no cube reaches x."""
    return cover.partition(X).delta


def cube_property_check(E: AdmissibleSet, cover: WhitneyCover, n: int = 2000, seed: int = 0) -> dict:
    """Sampled d(x) / beta over dilated regular cubes and the max overlap count."""
    rng = np.random.default_rng(seed)
    regular = np.flatnonzero(~cover.floor)
    pick = regular[rng.integers(0, len(regular), size=n)]
    u = rng.uniform(-0.5, 0.5, size=(n, cover.dim)) * cover.dilation
    X = cover.centers[pick] + u * cover.sides[pick, None]
    ratio = E.distance(X) / cover.sides[pick]
    part = cover.partition(cover.sample(n, rng))
    return {"ratioMin": float(ratio.min()), "ratioMax": float(ratio.max()),
            "maxOverlap": int(part.overlap.max())}


# ---------------------------------------------------------------- motions


def gram_schmidt_motion(phi, center, radius: float) -> EuclideanMotion:
    """Motion x -> phi(z) + M (x - z) with M from Gram-Schmidt on phi(z + r e_i) - phi(z)."""
    return gram_schmidt_motions(phi, np.asarray(center, dtype=float)[None], np.array([radius]))[0]


def _gram_schmidt_frames(phi, Z, R):
    n, dim = Z.shape
    probes = Z[:, None, :] + R[:, None, None] * np.eye(dim)[None]
    base = phi(Z)
    vecs = phi(probes.reshape(-1, dim)).reshape(n, dim, dim) - base[:, None, :]
    frames = np.empty((n, dim, dim))
    for i in range(dim):
        v = vecs[:, i].copy()
        for j in range(i):
            v -= np.sum(v * frames[:, :, j], axis=1)[:, None] * frames[:, :, j]
        frames[:, :, i] = v / np.linalg.norm(v, axis=1)[:, None]
    # one re-orthogonalization pass removes rounding drift
    for i in range(dim):
        v = frames[:, :, i].copy()
        for j in range(i):
            v -= np.sum(v * frames[:, :, j], axis=1)[:, None] * frames[:, :, j]
        frames[:, :, i] = v / np.linalg.norm(v, axis=1)[:, None]
    translations = base - np.einsum("nij,nj->ni", frames, Z)
    return frames, translations


def gram_schmidt_motions(phi, Z, R) -> list:
    frames, translations = _gram_schmidt_frames(phi, _rows(Z), np.asarray(R, dtype=float).reshape(-1))
    return [EuclideanMotion(m, t) for m, t in zip(frames, translations)]


def _far_probe(E: AdmissibleSet, target: float) -> np.ndarray:
    """A point x with d(x) = target, by bisection along the first axis."""
    start = E.anchor()
    direction = np.zeros(E.dim)
    direction[0] = 1.0
    lo, hi = 0.0, 1.0
    while E.distance(start + hi * direction)[0] < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if E.distance(start + mid * direction)[0] < target:
            lo = mid
        else:
            hi = mid
    return start + hi * direction


class AdmissibilityFailure(Exception):
    def __init__(self, message, probe=None):
        super().__init__(message)
        self.probe = probe


def select_cube_motions(cover: WhitneyCover, E: AdmissibleSet, phi, c1: float = 2.0, c2: float = 0.25,
                        per_axis: int = 9) -> WhitneyCover:
    """Attach a Euclidean motion to every cube.

    Cubes with beta < c3 get a motion fitted on an interior ball near the cube;
    the rest share the motion fitted on one large ball. c3 is the smallest side
    among cubes whose dilate reaches d(x) >= c0 diam, so small cubes stay near E.
    """
    centers = cover.centers
    root = math.sqrt(cover.dim)
    reach = E.distance(centers) + 0.5 * cover.dilation * cover.sides * root
    far = reach >= cover.c0 * cover.diam
    cover.c3 = float(cover.sides[far].min()) if far.any() else math.inf
    small = cover.sides < cover.c3
    d = E.distance(centers[small])
    d_eff = np.maximum(d, cover.sides[small] * root)
    z, r, found = ball_search(E, centers[small], d_eff, c1, c2, per_axis)
    if not found.all():
        k = int(np.argmin(found))
        probe = centers[small][k]
        raise AdmissibilityFailure(f"no interior ball for cube centered at {probe.tolist()}", probe)
    x_far = _far_probe(E, 0.5 * cover.c0 * cover.diam)
    zf, rf, ok = ball_search(E, x_far, np.array([0.5 * cover.c0 * cover.diam]), c1, c2, per_axis, "largest")
    if not ok[0]:
        raise AdmissibilityFailure(f"no interior ball for the far probe {x_far.tolist()}", x_far)
    far_motion = gram_schmidt_motion(phi, zf[0], float(rf[0]))
    n, dim = len(cover), cover.dim
    linear = np.broadcast_to(far_motion.linear, (n, dim, dim)).copy()
    translation = np.broadcast_to(far_motion.translation, (n, dim)).copy()
    frames, shifts = _gram_schmidt_frames(phi, z, r)
    linear[small], translation[small] = frames, shifts
    ball_centers = np.broadcast_to(zf[0], (n, dim)).copy()
    ball_radii = np.full(n, float(rf[0]))
    ball_centers[small], ball_radii[small] = z, r
    cover.small = small
    cover.ball_centers, cover.ball_radii = ball_centers, ball_radii
    cover.far_ball = (zf[0].copy(), float(rf[0]))
    cover.linear, cover.translation = linear, translation
    cover.far_motion = far_motion
    return cover


def motion_consistency(cover: WhitneyCover, X, eps: float) -> dict:
    """Measured constants C in |A_mu(x) - A_nu(x)| <= C eps delta(x) and |M_mu - M_nu| <= C eps."""
    part = cover.partition(X)
    X = _rows(X)
    order = np.argsort(part.point, kind="stable")
    pi, ci = part.point[order], part.cube[order]
    starts = np.flatnonzero(np.r_[True, pi[1:] != pi[:-1]])
    value_c, slope_c = 0.0, 0.0
    lin, tr = cover.linear, cover.translation
    for a, b in zip(starts, np.r_[starts[1:], len(pi)]):
        if b - a < 2:
            continue
        p = pi[a]
        cs = ci[a:b]
        imgs = np.einsum("nij,j->ni", lin[cs], X[p]) + tr[cs]
        spread = float(pdist(imgs).max())
        slope = max(float(np.linalg.norm(lin[i] - lin[j], 2)) for i, j in itertools.combinations(cs, 2))
        if part.delta[p] > 0:
            value_c = max(value_c, spread / (eps * part.delta[p]))
        slope_c = max(slope_c, slope / eps)
    return {"valueConstant": value_c, "slopeConstant": slope_c}


# ---------------------------------------------------------------- the blend


def _cutoff_arg(t, eta, ratio):
    t = np.asarray(t, dtype=float)
    safe = np.where(t > eta, t, eta)
    return np.log(safe / eta) / math.log(ratio), safe


def inner_cutoff(t, eta: float, ratio: float = 8.0):
    """chi(t): 1 for t <= eta, 0 for t >= ratio eta, smooth in log t between."""
    s, _ = _cutoff_arg(t, eta, ratio)
    return 1.0 - transition(s)


def inner_cutoff_derivative(t, eta: float, ratio: float = 8.0):
    """chi'(t); bounded by KAPPA / (t log ratio)."""
    s, safe = _cutoff_arg(t, eta, ratio)
    return -transition_derivative(s) / (safe * math.log(ratio))


@register_node
class WhitneyBlend(SmoothMap):
    """chi(delta) phi + (1 - chi(delta)) sum_nu Theta_nu A_nu.

    chi switches from 1 at delta = eta to 0 at delta = cutoff_ratio eta.

    Points reached by no cube are either in E (phi) or beyond the box (the far motion).
    """

    node = "WhitneyBlend"

    def __init__(self, cover: WhitneyCover, phi: SmoothMap, E: AdmissibleSet, eta: float,
                 cutoff_ratio: float = 8.0, claimed_epsilon: float = 0.0):
        if not cutoff_ratio > 1.0:
            raise ValueError("cutoff_ratio must exceed 1")
        if cover.linear is None:
            raise ValueError("cover has no motions; run select_cube_motions first")
        self.cover = cover
        self.phi = phi
        self.E = E
        self.eta = float(eta)
        self.cutoff_ratio = float(cutoff_ratio)
        self.claimed_epsilon = float(claimed_epsilon)

    def weights(self, X):
        """(partition, chi, grad chi) with uncovered points resolved."""
        X = _rows(X)
        part = self.cover.partition(X)
        chi = inner_cutoff(part.delta, self.eta, self.cutoff_ratio)
        grad_chi = inner_cutoff_derivative(part.delta, self.eta, self.cutoff_ratio)[:, None] * part.grad_delta
        if not part.covered.all():
            bare = ~part.covered
            in_set = self.E.distance(X[bare]) <= 0.0
            chi[bare] = np.where(in_set, 1.0, 0.0)
            grad_chi[bare] = 0.0
        return part, chi, grad_chi

    def _motion_blend(self, X, part, with_jacobian):
        """A_far(x) + sum Theta_nu (A_nu(x) - A_far(x)); Case II terms vanish exactly."""
        far = self.cover.far_motion
        cov = self.cover
        pi, ci = part.point, part.cube
        val = far(X)
        diff_lin = cov.linear[ci] - far.linear
        diff_tr = cov.translation[ci] - far.translation
        gap = np.einsum("nij,nj->ni", diff_lin, X[pi]) + diff_tr
        contrib = part.theta[:, None] * gap
        np.add.at(val, pi, contrib)
        if not with_jacobian:
            return val, None
        jac = np.broadcast_to(far.linear, (len(X),) + far.linear.shape).copy()
        terms = part.theta[:, None, None] * diff_lin + gap[:, :, None] * part.grad_theta[:, None, :]
        np.add.at(jac, pi, terms)
        return val, jac

    def _blend(self, X, with_jacobian):
        part, chi, grad_chi = self.weights(X)
        motion_val, motion_jac = self._motion_blend(X, part, with_jacobian)
        out = motion_val.copy()
        jac = motion_jac.copy() if with_jacobian else None
        near = chi > 0
        if near.any():
            Xn = X[near]
            pv = self.phi(Xn)
            c = chi[near][:, None]
            mixed = motion_val[near] + c * (pv - motion_val[near])
            full = chi[near] >= 1.0
            out[near] = np.where(full[:, None], pv, mixed)
            if with_jacobian:
                pj = self.phi.jacobian(Xn)
                mj = motion_jac[near]
                jm = mj + c[:, :, None] * (pj - mj) + (pv - motion_val[near])[:, :, None] * grad_chi[near][:, None, :]
                jac[near] = np.where(full[:, None, None], pj, jm)
        return out, jac

    def _evaluate(self, X):
        return self._blend(X, False)[0]

    def _jacobian(self, X):
        return self._blend(X, True)[1]

    def params(self):
        return {"cover": self.cover.cubes_to_dict(), "phi": self.phi.to_dict(), "set": self.E.to_dict(),
                "eta": self.eta, "cutoffRatio": self.cutoff_ratio}

    @classmethod
    def from_params(cls, cover, phi, set, eta, cutoffRatio=8.0):
        return cls(WhitneyCover.from_dict(cover), map_from_dict(phi), set_from_dict(set), eta, cutoffRatio)


# ---------------------------------------------------------------- driver


@dataclass
class WhitneyReport:
    map: Optional[WhitneyBlend]
    cover: Optional[WhitneyCover]
    eta: Optional[float]
    checks: dict
    diagnostics: list

    @property
    def ok(self) -> bool:
        return self.map is not None

    def to_dict(self) -> dict:
        return {"ok": self.ok, "eta": self.eta, "checks": self.checks, "diagnostics": self.diagnostics,
                "cover": None if self.cover is None else self.cover.stats}


def _near_set_checks(cover, E, phi, X, eta, ratio, eps, domain_radius):
    """Measured constants of the near-E estimates wherever chi is not zero."""
    part = cover.partition(X)
    sel = part.delta[part.point] <= ratio * eta
    sel &= part.covered[part.point]
    pi, ci = part.point[sel], part.cube[sel]
    out = {"nearPairs": int(sel.sum()), "allSmall": bool(np.all(cover.small[ci])) if len(ci) else True,
           "valueConstant": 0.0, "slopeConstant": 0.0, "insideDomain": True}
    if len(pi):
        Xp = X[pi]
        a = np.einsum("nij,nj->ni", cover.linear[ci], Xp) + cover.translation[ci]
        value = np.linalg.norm(phi(Xp) - a, axis=1) / (eps * part.delta[pi])
        slope = np.linalg.norm(phi.jacobian(Xp) - cover.linear[ci], ord=2, axis=(1, 2)) / eps
        out["valueConstant"] = float(value.max())
        out["slopeConstant"] = float(slope.max())
        out["insideDomain"] = bool(np.all(E.distance(Xp) < domain_radius))
    return out


def _floor_check(cover, X, eta):
    """Every sampled point of a dilated floor cube must sit where chi = 1."""
    if not cover.floor.any():
        return 0.0
    part = cover.partition(X)
    touching = np.zeros(len(X), dtype=bool)
    touching[part.point[cover.floor[part.cube]]] = True
    if not touching.any():
        return 0.0
    return float(part.delta[touching].max() / eta)


def whitney_extend(E: AdmissibleSet, phi: SmoothMap, eps: float, eta: Optional[float] = None,
                   lower=None, upper=None, c0: float = 1.0, c1: float = 2.0, c2: float = 0.25,
                   dilation: float = 2.0, cutoff_ratio: float = 8.0, near_set_constant: float = 10.0, defect_constant: float = 10.0,
                   max_halvings: int = 6, domain_radius: float = math.inf, n_probes: int = 4000,
                   seed: int = 0) -> WhitneyReport:
    """Blend phi near E with cube motions away from E and certify the result on probes.

    When ``eta`` is omitted it starts at c0 diam / 100 and halves until the near-E
    checks pass. Any failed check returns a report without a map.
    """
    diagnostics = []
    diam = E.diam
    lo, hi = E.bounds()
    if lower is None or upper is None:
        pad = 2.0 * c0 * diam
        lower, upper = lo - pad, hi + pad
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    pre = distortion_audit(phi, Box(lo - 0.1 * diam, hi + 0.1 * diam), n_samples=1000, seed=seed)
    checks = {"phiDefectNearSet": pre.sup_jacobian_defect}
    if pre.sup_jacobian_defect > eps:
        diagnostics.append(f"phi has Jacobian defect {pre.sup_jacobian_defect:.3e} > eps near E")
        return WhitneyReport(None, None, None, checks, diagnostics)
    etas = [eta] if eta is not None else [c0 * diam / 100.0 * 2.0 ** (-j) for j in range(max_halvings + 1)]
    cover, chosen = None, None
    for candidate in etas:
        floor_side = candidate / 32.0
        if cover is None or cover.floor_side > floor_side:
            try:
                cover = whitney_cubes(E, lower, upper, floor_side, dilation, c0)
                cover = select_cube_motions(cover, E, phi, c1, c2)
            except (AdmissibilityFailure, ValueError) as exc:
                diagnostics.append(str(exc))
                return WhitneyReport(None, cover, None, checks, diagnostics)
        probes = cover.sample(n_probes, rng)
        near = _near_set_checks(cover, E, phi, probes, candidate, cutoff_ratio, eps, domain_radius)
        floor_ratio = _floor_check(cover, probes, candidate)
        passed = (near["allSmall"] and near["insideDomain"] and floor_ratio <= 1.0
                  and near["valueConstant"] <= near_set_constant and near["slopeConstant"] <= near_set_constant)
        checks.setdefault("etaTrials", []).append({"eta": candidate, **near, "floorDeltaOverEta": floor_ratio})
        if passed:
            chosen = candidate
            break
    if chosen is None:
        diagnostics.append("no eta passed the near-set checks")
        return WhitneyReport(None, cover, None, checks, diagnostics)
    cover.eta = chosen
    blend = WhitneyBlend(cover, phi, E, chosen, cutoff_ratio, claimed_epsilon=defect_constant * eps)
    post = _post_checks(blend, E, eps, n_probes, rng, lower, upper)
    checks.update(post)
    checks["consistency"] = motion_consistency(cover, cover.sample(min(n_probes, 2000), rng), eps)
    limit = 4 ** E.dim
    if post["phiMismatch"] > 1e-12:
        diagnostics.append(f"Phi differs from phi by {post['phiMismatch']:.3e} where delta < eta")
    if post["farMismatch"] > 1e-12:
        diagnostics.append(f"Phi differs from the far motion by {post['farMismatch']:.3e} where d >= c0")
    if post["partitionError"] > 1e-9:
        diagnostics.append(f"partition of unity off by {post['partitionError']:.3e}")
    if post["maxOverlap"] > limit:
        diagnostics.append(f"overlap {post['maxOverlap']} exceeds {limit}")
    if post["jacobianDefect"] > defect_constant * eps:
        diagnostics.append(f"Jacobian defect {post['jacobianDefect']:.3e} exceeds {defect_constant} eps")
    if diagnostics:
        return WhitneyReport(None, cover, chosen, checks, diagnostics)
    return WhitneyReport(blend, cover, chosen, checks, diagnostics)


def _post_checks(blend: WhitneyBlend, E, eps, n, rng, lower, upper) -> dict:
    cover = blend.cover
    near = cover.sample(n, rng)
    box = lower + (upper - lower) * rng.random((n, cover.dim))
    wide_lo, wide_hi = lower - 0.5 * (upper - lower), upper + 0.5 * (upper - lower)
    wide = wide_lo + (wide_hi - wide_lo) * rng.random((n // 4, cover.dim))
    X = np.vstack([near, box, wide])
    part, chi, _ = blend.weights(X)
    values = blend(X)
    inner = part.delta < blend.eta
    inner &= part.covered | (E.distance(X) <= 0)
    phi_gap = float(np.max(np.abs(values[inner] - blend.phi(X[inner])))) if inner.any() else 0.0
    far = E.distance(X) >= cover.c0 * cover.diam
    far_gap = float(np.max(np.abs(values[far] - cover.far_motion(X[far])))) if far.any() else 0.0
    sums = chi + (1 - chi) * np.bincount(part.point, weights=part.theta, minlength=len(X))
    pou = float(np.max(np.abs(sums[part.covered] - 1.0)))
    defect = float(np.max(jacobian_defects(blend.jacobian(X))))
    return {"phiMismatch": phi_gap, "nInner": int(inner.sum()), "farMismatch": far_gap, "nFar": int(far.sum()),
            "partitionError": pou, "maxOverlap": int(part.overlap.max()), "jacobianDefect": defect}
