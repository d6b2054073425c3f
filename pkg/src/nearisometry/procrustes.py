"""Alignment of labeled configurations by Euclidean motions, affine
interpolants, near reflections and eta-block classification."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, NotThin, ProperInfeasible
from .geometry import as_points, diameter, max_simplex_volume, simplex_volume


def canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    vectors = np.array(vectors, dtype=float)
    if vectors.ndim == 1:
        return vectors if vectors[np.argmax(np.abs(vectors))] >= 0 else -vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True)
class EuclideanMotion:
    """x -> linear @ x + translation with orthogonal ``linear``."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        m = np.array(self.linear, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != t.shape[0]:
            raise ValueError("linear must be D x D and translation a D-vector")
        if not np.allclose(m.T @ m, np.eye(len(t)), atol=1e-10, rtol=0):
            raise ValueError("linear part is not orthogonal to 1e-10")
        m.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "linear", m)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, dim: int) -> "EuclideanMotion":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def reflection(cls, normal, point) -> "EuclideanMotion":
        """Reflection through the hyperplane {x : normal . (x - point) = 0}."""
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        h = np.eye(len(n)) - 2.0 * np.outer(n, n)
        p = np.asarray(point, dtype=float)
        return cls(h, p - h @ p)

    @property
    def dim(self) -> int:
        return len(self.translation)

    @property
    def proper(self) -> bool:
        return bool(np.linalg.det(self.linear) > 0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.linear.T + self.translation

    def compose(self, inner: "EuclideanMotion") -> "EuclideanMotion":
        """self o inner."""
        return EuclideanMotion(self.linear @ inner.linear, self.linear @ inner.translation + self.translation)

    def inverse(self) -> "EuclideanMotion":
        return EuclideanMotion(self.linear.T, -self.linear.T @ self.translation)

    def to_dict(self) -> dict:
        return {"linear": self.linear.tolist(), "translation": self.translation.tolist(), "proper": self.proper}

    @classmethod
    def from_dict(cls, data: dict) -> "EuclideanMotion":
        return cls(np.array(data["linear"], dtype=float), np.array(data["translation"], dtype=float))


@dataclass(frozen=True)
class AffineMap:
    """x -> linear @ x + translation; the linear part may be singular."""

    linear: np.ndarray
    translation: np.ndarray

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    @property
    def singular(self) -> bool:
        s = np.linalg.svd(self.linear, compute_uv=False)
        return bool(s[-1] <= 1e-12 * max(s[0], 1e-300))

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.linear).T + self.translation


def orthogonal_procrustes(P, Q) -> tuple[EuclideanMotion, float]:
    """Least-squares Euclidean motion (reflections allowed) taking P onto Q."""
    p, q = as_points(P), as_points(Q)
    if len(p) == 0:
        raise ValueError("empty input")
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    if len(p) == 1:
        m = np.eye(p.shape[1])
    else:
        u, _, vt = np.linalg.svd((p - pc).T @ (q - qc))
        m = vt.T @ u.T
        # re-orthogonalize against accumulated rounding
        uu, _, vv = np.linalg.svd(m)
        m = uu @ vv
    motion = EuclideanMotion(m, qc - m @ pc)
    residual = float(np.sqrt(np.sum((motion(p) - q) ** 2)))
    return motion, residual


def hyperplane_normal(points) -> np.ndarray:
    """Unit normal of a hyperplane through the centroid containing the points
    as nearly as possible: the smallest left singular vector of the centered cloud."""
    pts = as_points(points)
    centered = (pts - pts.mean(axis=0)).T
    u, _, _ = np.linalg.svd(centered, full_matrices=True)
    return canonical_sign(u[:, -1])


def fit_euclidean_motion(P, Q, require_proper: bool = False) -> tuple[EuclideanMotion, float]:
    """Least-squares motion, made proper when requested.

    With k <= D points an improper optimum is composed with the reflection through a
    hyperplane containing the fitted images, which leaves every fitted image fixed.
    """
    p, q = as_points(P), as_points(Q)
    motion, _ = orthogonal_procrustes(p, q)
    if require_proper and not motion.proper:
        k, dim = p.shape
        if k > dim:
            raise ProperInfeasible(f"least-squares optimum is improper for {k} > D = {dim} points")
        images = motion(p)
        flip = EuclideanMotion.reflection(hyperplane_normal(images), images.mean(axis=0))
        motion = flip.compose(motion)
    error = float(np.max(np.linalg.norm(motion(p) - q, axis=1)))
    return motion, error


@dataclass(frozen=True)
class NearReflection:
    motion: EuclideanMotion
    order: int
    witness: tuple
    displacement: float
    constant: float


def fit_near_reflection(E, eta: float) -> NearReflection:
    """Reflection through a hyperplane close to every point of a thin set.

    Finds l with V_{l-1} > (eta diam)^{l-1} and V_l <= (eta diam)^l, then takes the
    hyperplane through the maximizing (l-1)-simplex whose normal, inside the
    orthogonal complement of that simplex, is the direction of least spread.
    """
    pts = as_points(E)
    k, dim = pts.shape
    d = diameter(pts)
    if d == 0:
        raise DegenerateError("set has zero diameter")
    if k < 2:
        raise DegenerateError("need at least two points")
    volumes = {1: max_simplex_volume(pts, 1, limit=None)}
    order = None
    for ell in range(2, dim + 1):
        if k < ell + 1:
            order = ell
            break
        volumes[ell] = max_simplex_volume(pts, ell, limit=None)
        if volumes[ell].volume <= (eta * d) ** ell:
            order = ell
            break
    if order is None:
        raise NotThin(f"V_D = {volumes[dim].volume:.3e} exceeds (eta*diam)^D = {(eta * d) ** dim:.3e}")
    witness = volumes[order - 1].witness
    base = pts[witness[0]]
    span = pts[list(witness[1:])] - base
    q, _ = np.linalg.qr(span.T, mode="complete")
    complement = q[:, len(span):]
    # least-spread direction of the cloud inside the complement of the witness span
    coords = (pts - base) @ complement
    _, vecs = np.linalg.eigh(coords.T @ coords)
    normal = canonical_sign(complement @ vecs[:, 0])
    motion = EuclideanMotion.reflection(normal, base)
    displacement = float(np.max(np.linalg.norm(motion(pts) - pts, axis=1)))
    return NearReflection(motion, order, tuple(witness), displacement, displacement / (eta * d))


def affine_interpolant(xs, images) -> AffineMap:
    """Unique affine map sending D+1 affinely independent points onto ``images``."""
    x, y = as_points(xs), as_points(images)
    dim = x.shape[1]
    if x.shape != (dim + 1, dim) or y.shape != x.shape:
        raise ValueError("need D+1 points and D+1 images in R^D")
    d = diameter(x)
    if d == 0 or simplex_volume(x) <= 1e-12 * d ** dim:
        raise DegenerateError("points are affinely dependent")
    # solve relative to the first vertex so far-off tuples stay well conditioned
    try:
        linear = np.linalg.solve(x[1:] - x[0], y[1:] - y[0]).T
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("points are affinely dependent") from exc
    return AffineMap(linear, y[0] - linear @ x[0])


class BlockSign(enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NOT_A_BLOCK = "NotABlock"


def classify_eta_block(tuple_points, images, eta: float) -> BlockSign:
    """Sign of the affine interpolant on a (D+1)-tuple whose volume clears (eta diam)^D."""
    x, y = as_points(tuple_points), as_points(images)
    dim = x.shape[1]
    d = diameter(x)
    if d == 0 or simplex_volume(x) < (eta * d) ** dim:
        return BlockSign.NOT_A_BLOCK
    try:
        amap = affine_interpolant(x, y)
    except DegenerateError:
        return BlockSign.NOT_A_BLOCK
    if amap.singular:
        return BlockSign.NOT_A_BLOCK
    return BlockSign.POSITIVE if amap.det > 0 else BlockSign.NEGATIVE
