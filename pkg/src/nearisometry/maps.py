"""Smooth maps of R^D with small distortion: slow twists, slides, localized
motions, point movers, their Jacobians, composition, JSON trees and audits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import schur

from .errors import (ConditionAViolated, ConditionBViolated, InfeasibleError,
                     RatioInfeasible, TranslationInfeasible)
from .procrustes import EuclideanMotion

# sup of the derivative of the smooth transition below, attained at s = 1/2
KAPPA = 2.0


def transition(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 1.0, 1.0, 0.0)
    inner = (s > 0.0) & (s < 1.0)
    si = s[inner]
    expo = np.clip(1.0 / si - 1.0 / (1.0 - si), -700.0, 700.0)
    out[inner] = 1.0 / (1.0 + np.exp(expo))
    return out


def transition_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inner = (s > 0.0) & (s < 1.0)
    si = s[inner]
    expo = np.clip(1.0 / si - 1.0 / (1.0 - si), -700.0, 700.0)
    psi = 1.0 / (1.0 + np.exp(expo))
    out[inner] = psi * (1.0 - psi) * (1.0 / si ** 2 + 1.0 / (1.0 - si) ** 2)
    return out


def row_norms(Y) -> np.ndarray:
    """Euclidean norms along the last axis without overflow for huge coordinates."""
    Y = np.asarray(Y, dtype=float)
    scale = np.max(np.abs(Y), axis=-1)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(np.sum((Y / safe[..., None]) ** 2, axis=-1))


def twist_defect(a: float) -> float:
    """Exact sup ||J^T J - I|| of a twist whose radial angle rate satisfies t|f'| <= a."""
    return a * a / 2.0 + a * math.sqrt(1.0 + a * a / 4.0)


def slide_defect(p: float) -> float:
    """Bound on ||J^T J - I|| for x + F(x) with ||F'|| <= p."""
    return 2.0 * p + p * p


def builder_eps_for_defect(target: float) -> float:
    """Largest builder eps whose twists and slides stay within the defect ``target``."""
    return min(target / (2.0 * math.sqrt(1.0 + target)), math.sqrt(1.0 + target) - 1.0)


def compose_defects(e1: float, e2: float) -> float:
    return e1 + e2 + e1 * e2


# ---------------------------------------------------------------- angle functions

_ANGLE_KINDS = {}


def _angle_kind(cls):
    _ANGLE_KINDS[cls.kind] = cls
    return cls


class AngleFunction:
    """Radial angle profile f(t) of one 2x2 rotation block."""

    kind = "abstract"
    scale = 1.0

    def value(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def rate_bound(self) -> float:
        """Closed-form sup_t t|f'(t)|."""
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}

    @property
    def is_zero(self) -> bool:
        return False

    def grid_rate(self, n: int = 4001) -> float:
        t = self.scale * np.logspace(-8, 8, n)
        return float(np.max(t * np.abs(self.derivative(t))))

    def check_condition_a(self, bound: float) -> float:
        analytic = self.rate_bound()
        measured = self.grid_rate()
        worst = max(analytic, measured)
        if not worst <= bound * (1.0 + 1e-9):
            raise ConditionAViolated(f"{self.kind}: sup t|f'(t)| = {worst:.6g} exceeds {bound:.6g}")
        return worst

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


def angle_from_dict(data: dict) -> AngleFunction:
    data = dict(data)
    cls = _ANGLE_KINDS[data.pop("kind")]
    return cls(**data)


@_angle_kind
class ZeroAngle(AngleFunction):
    kind = "zero"

    def value(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    derivative = value

    def rate_bound(self):
        return 0.0

    def params(self):
        return {}

    @property
    def is_zero(self):
        return True


@_angle_kind
class ExponentialAngle(AngleFunction):
    """A exp(-c t)."""

    kind = "exponential"

    def __init__(self, amplitude: float, rate: float):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.amplitude, self.rate = float(amplitude), float(rate)
        self.scale = 1.0 / self.rate

    def value(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))

    def derivative(self, t):
        return -self.rate * self.value(t)

    def rate_bound(self):
        return abs(self.amplitude) / math.e

    def params(self):
        return {"amplitude": self.amplitude, "rate": self.rate}


@_angle_kind
class LogTransitionAngle(AngleFunction):
    """Constant ``angle`` for t <= r1, zero for t >= r2, smooth in log t between."""

    kind = "log_transition"

    def __init__(self, angle: float, r1: float, r2: float):
        if not 0 < r1 < r2:
            raise ValueError("need 0 < r1 < r2")
        self.angle, self.r1, self.r2 = float(angle), float(r1), float(r2)
        self.width = math.log(self.r2 / self.r1)
        self.scale = math.sqrt(self.r1) * math.sqrt(self.r2)

    def _s(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return (np.log(t) - math.log(self.r1)) / self.width

    def value(self, t):
        return self.angle * (1.0 - transition(self._s(t)))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = -self.angle * transition_derivative(self._s(t)) / (self.width * t)
        return np.where(t > 0, d, 0.0)

    def rate_bound(self):
        return KAPPA * abs(self.angle) / self.width

    def grid_rate(self, n: int = 4001):
        t = np.exp(np.linspace(math.log(self.r1), math.log(self.r2), n))
        return float(np.max(t * np.abs(self.derivative(t))))

    def params(self):
        return {"angle": self.angle, "r1": self.r1, "r2": self.r2}


@_angle_kind
class ConstantThenDecayAngle(AngleFunction):
    """``angle`` for t <= r, then angle * exp(-rate log(t/r)^2)."""

    kind = "constant_then_decay"

    def __init__(self, angle: float, radius: float, rate: float):
        if radius <= 0 or rate <= 0:
            raise ValueError("radius and rate must be positive")
        self.angle, self.radius, self.rate = float(angle), float(radius), float(rate)
        self.scale = self.radius

    def value(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            u = np.log(np.maximum(t, self.radius) / self.radius)
        return self.angle * np.exp(-self.rate * u * u)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            u = np.log(np.maximum(t, self.radius) / self.radius)
        safe = np.where(t > 0, t, 1.0)
        return np.where(t > self.radius, self.value(t) * (-2.0 * self.rate * u) / safe, 0.0)

    def rate_bound(self):
        return abs(self.angle) * math.sqrt(2.0 * self.rate / math.e)

    def params(self):
        return {"angle": self.angle, "radius": self.radius, "rate": self.rate}


@_angle_kind
class LogAngle(AngleFunction):
    """b log(1 + R/t): unbounded at the origin, with t|f'| <= |b|."""

    kind = "log"

    def __init__(self, amplitude: float, radius: float):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.amplitude, self.radius = float(amplitude), float(radius)
        self.scale = self.radius

    def value(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.amplitude * np.log1p(self.radius / t)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return -self.amplitude * self.radius / (t * (t + self.radius))

    def rate_bound(self):
        return abs(self.amplitude)

    def params(self):
        return {"amplitude": self.amplitude, "radius": self.radius}


@_angle_kind
class LinearAngle(AngleFunction):
    """omega * t: a fast twist, never slow."""

    kind = "linear"

    def __init__(self, omega: float):
        self.omega = float(omega)

    def value(self, t):
        return self.omega * np.asarray(t, dtype=float)

    def derivative(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.omega)

    def rate_bound(self):
        return math.inf if self.omega else 0.0

    def params(self):
        return {"omega": self.omega}


# ---------------------------------------------------------------- displacement fields

_FIELD_KINDS = {}


def _field_kind(cls):
    _FIELD_KINDS[cls.kind] = cls
    return cls


class DisplacementField:
    """Vector field F with an analytic bound on the spectral norm of F'."""

    kind = "abstract"

    def value(self, X):
        raise NotImplementedError

    def jacobian(self, X):
        raise NotImplementedError

    def derivative_bound(self) -> float:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def probe_points(self, dim: int, n: int, rng) -> np.ndarray:
        return rng.normal(size=(n, dim))


def field_from_dict(data: dict) -> DisplacementField:
    data = dict(data)
    cls = _FIELD_KINDS[data.pop("kind")]
    return cls.from_params(**data)


@_field_kind
class ConstantField(DisplacementField):
    kind = "constant"

    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=float).reshape(-1)

    @classmethod
    def from_params(cls, vector):
        return cls(vector)

    def value(self, X):
        return np.broadcast_to(self.vector, X.shape).copy()

    def jacobian(self, X):
        return np.zeros((len(X), X.shape[1], X.shape[1]))

    def derivative_bound(self):
        return 0.0

    def params(self):
        return {"vector": self.vector.tolist()}


@_field_kind
class CutoffBumps(DisplacementField):
    """Sum of v_j chi(|x - c_j|) where chi is 1 on radius a_j and 0 beyond b_j."""

    kind = "cutoff_bumps"

    def __init__(self, centers, vectors, inner, outer):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        self.inner = np.atleast_1d(np.asarray(inner, dtype=float))
        self.outer = np.atleast_1d(np.asarray(outer, dtype=float))
        n = len(self.centers)
        if not (len(self.vectors) == len(self.inner) == len(self.outer) == n):
            raise ValueError("centers, vectors and radii must have equal length")
        if np.any(self.inner < 0) or np.any(self.outer <= self.inner):
            raise ValueError("need 0 <= inner < outer for every bump")
        for i in range(n):
            for j in range(i + 1, n):
                gap = np.linalg.norm(self.centers[i] - self.centers[j])
                if gap < self.outer[i] + self.outer[j]:
                    raise ValueError(f"bump supports {i} and {j} overlap")

    @classmethod
    def from_params(cls, centers, vectors, inner, outer):
        return cls(centers, vectors, inner, outer)

    def _s(self, X):
        r = row_norms(X[:, None, :] - self.centers[None])
        return r, (r - self.inner) / (self.outer - self.inner)

    def value(self, X):
        _, s = self._s(X)
        chi = 1.0 - transition(s)
        return chi @ self.vectors

    def jacobian(self, X):
        r, s = self._s(X)
        dchi = -transition_derivative(s) / (self.outer - self.inner)
        diff = X[:, None, :] - self.centers[None]
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, diff / r[..., None], 0.0)
        grad = dchi[..., None] * unit  # (N, m, D)
        return np.einsum("md,nme->nde", self.vectors, grad)

    def derivative_bound(self):
        norms = np.linalg.norm(self.vectors, axis=1)
        return float(np.max(KAPPA * norms / (self.outer - self.inner)))

    def params(self):
        return {"centers": self.centers.tolist(), "vectors": self.vectors.tolist(),
                "inner": self.inner.tolist(), "outer": self.outer.tolist()}

    def probe_points(self, dim, n, rng):
        k = len(self.centers)
        idx = rng.integers(0, k, size=n)
        direction = rng.normal(size=(n, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = self.inner[idx] + rng.random(n) * (self.outer[idx] - self.inner[idx])
        return self.centers[idx] + radius[:, None] * direction


@_field_kind
class SinusoidField(DisplacementField):
    """F_i(x) = amplitude_i sin(w_i . x + phase_i)."""

    kind = "sinusoid"

    def __init__(self, amplitudes, frequencies, phases):
        self.amplitudes = np.asarray(amplitudes, dtype=float).reshape(-1)
        self.frequencies = np.atleast_2d(np.asarray(frequencies, dtype=float))
        self.phases = np.asarray(phases, dtype=float).reshape(-1)
        d = len(self.amplitudes)
        if self.frequencies.shape != (d, d) or len(self.phases) != d:
            raise ValueError("need D amplitudes, D x D frequencies and D phases")

    @classmethod
    def from_params(cls, amplitudes, frequencies, phases):
        return cls(amplitudes, frequencies, phases)

    def value(self, X):
        return self.amplitudes * np.sin(X @ self.frequencies.T + self.phases)

    def jacobian(self, X):
        c = np.cos(X @ self.frequencies.T + self.phases) * self.amplitudes
        return c[:, :, None] * self.frequencies[None]

    def derivative_bound(self):
        return float(np.sqrt(np.sum(self.amplitudes ** 2 * np.sum(self.frequencies ** 2, axis=1))))

    def params(self):
        return {"amplitudes": self.amplitudes.tolist(), "frequencies": self.frequencies.tolist(),
                "phases": self.phases.tolist()}

    def probe_points(self, dim, n, rng):
        w = max(float(np.max(np.abs(self.frequencies))), 1e-12)
        return rng.uniform(-10.0 / w, 10.0 / w, size=(n, dim))


@_field_kind
class BumpRampField(DisplacementField):
    """scale * (1/(1 + t1^2), exp(-|t2|)/2) in the plane."""

    kind = "bump_ramp"

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    @classmethod
    def from_params(cls, scale):
        return cls(scale)

    def value(self, X):
        if X.shape[1] != 2:
            raise ValueError("bump_ramp is planar")
        return self.scale * np.stack([1.0 / (1.0 + X[:, 0] ** 2), 0.5 * np.exp(-np.abs(X[:, 1]))], axis=1)

    def jacobian(self, X):
        out = np.zeros((len(X), 2, 2))
        out[:, 0, 0] = self.scale * (-2.0 * X[:, 0] / (1.0 + X[:, 0] ** 2) ** 2)
        out[:, 1, 1] = self.scale * (-0.5 * np.sign(X[:, 1]) * np.exp(-np.abs(X[:, 1])))
        return out

    def derivative_bound(self):
        return abs(self.scale) * max(9.0 / (8.0 * math.sqrt(3.0)), 0.5)

    def params(self):
        return {"scale": self.scale}

    def probe_points(self, dim, n, rng):
        return rng.uniform(-5.0, 5.0, size=(n, dim))


# ---------------------------------------------------------------- map nodes

_NODE_TYPES = {}


def register_node(cls):
    _NODE_TYPES[cls.node] = cls
    return cls


class SmoothMap:
    """Immutable smooth map R^D -> R^D with an analytic Jacobian."""

    node = "abstract"
    claimed_epsilon = 0.0

    def _evaluate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _jacobian(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self._evaluate(x[None])[0]
        return self._evaluate(x)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self._jacobian(x[None])[0]
        return self._jacobian(x)

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"node": self.node, "claimedEpsilon": self.claimed_epsilon, **self.params()}

    def __repr__(self):
        return f"{type(self).__name__}(claimed_epsilon={self.claimed_epsilon:.3g})"


def map_from_dict(data: dict) -> SmoothMap:
    data = dict(data)
    node = data.pop("node")
    data.pop("claimedEpsilon", None)
    data.pop("schemaVersion", None)
    if node not in _NODE_TYPES:
        raise ValueError(f"unknown map node {node!r}")
    return _NODE_TYPES[node].from_params(**data)


def jacobian(smooth_map: SmoothMap, x):
    return smooth_map.jacobian(x)


@register_node
class Identity(SmoothMap):
    node = "Identity"

    def _evaluate(self, X):
        return np.array(X, dtype=float)

    def _jacobian(self, X):
        return np.broadcast_to(np.eye(X.shape[1]), (len(X), X.shape[1], X.shape[1])).copy()

    def params(self):
        return {}

    @classmethod
    def from_params(cls):
        return cls()


@register_node
class Motion(SmoothMap):
    node = "Motion"

    def __init__(self, motion: EuclideanMotion):
        self.motion = motion

    def _evaluate(self, X):
        return self.motion(X)

    def _jacobian(self, X):
        return np.broadcast_to(self.motion.linear, (len(X),) + self.motion.linear.shape).copy()

    def params(self):
        return {"motion": self.motion.to_dict()}

    @classmethod
    def from_params(cls, motion):
        return cls(EuclideanMotion.from_dict(motion))


def _rotation_blocks(angles):
    """Per-point block entries cos, sin for angles of shape (N, nb)."""
    return np.cos(angles), np.sin(angles)


@register_node
class SlowTwist(SmoothMap):
    """x -> c + M^T St(|x - c|) M (x - c), St rotating block i by f_i(t)."""

    node = "SlowTwist"

    def __init__(self, frame, angle_fns: Sequence[AngleFunction], center=None, bound: float = 0.5,
                 force: bool = False):
        frame = np.array(frame, dtype=float)
        dim = frame.shape[0]
        if frame.shape != (dim, dim) or not np.allclose(frame.T @ frame, np.eye(dim), atol=1e-10):
            raise ValueError("frame must be an orthogonal D x D matrix")
        if np.linalg.det(frame) < 0:
            raise ValueError("frame must lie in SO(D)")
        if 2 * len(angle_fns) > dim:
            raise ValueError(f"{len(angle_fns)} blocks do not fit in dimension {dim}")
        self.frame = frame
        self.angle_fns = list(angle_fns)
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(-1)
        self.bound = float(bound)
        self.force = bool(force)
        rates = []
        for fn in self.angle_fns:
            if force:
                rates.append(max(fn.rate_bound(), fn.grid_rate()))
            else:
                rates.append(fn.check_condition_a(self.bound))
        self.rate = max(rates, default=0.0)
        self.claimed_epsilon = twist_defect(self.rate) if math.isfinite(self.rate) else math.inf

    @property
    def dim(self):
        return self.frame.shape[0]

    def _angles(self, t):
        nb = len(self.angle_fns)
        ang = np.zeros((len(t), nb))
        dang = np.zeros((len(t), nb))
        pos = t > 0
        for i, fn in enumerate(self.angle_fns):
            ang[pos, i] = fn.value(t[pos])
            dang[pos, i] = fn.derivative(t[pos])
        return ang, dang

    def _evaluate(self, X):
        Y = X - self.center
        t = row_norms(Y)
        ang, _ = self._angles(t)
        Z = Y @ self.frame.T
        c, s = _rotation_blocks(ang)
        W = Z.copy()
        for i in range(ang.shape[1]):
            z1, z2 = Z[:, 2 * i], Z[:, 2 * i + 1]
            W[:, 2 * i] = c[:, i] * z1 + s[:, i] * z2
            W[:, 2 * i + 1] = -s[:, i] * z1 + c[:, i] * z2
        out = self.center + W @ self.frame
        still = np.all(ang == 0.0, axis=1)
        out[still] = X[still]
        return out

    def _jacobian(self, X):
        n, dim = X.shape
        Y = X - self.center
        t = row_norms(Y)
        ang, dang = self._angles(t)
        Z = Y @ self.frame.T
        with np.errstate(invalid="ignore", divide="ignore"):
            Zhat = np.where(t[:, None] > 0, Z / t[:, None], 0.0)
        inner = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
        c, s = _rotation_blocks(ang)
        for i in range(ang.shape[1]):
            a, b = 2 * i, 2 * i + 1
            inner[:, a, a], inner[:, a, b] = c[:, i], s[:, i]
            inner[:, b, a], inner[:, b, b] = -s[:, i], c[:, i]
            # derivative of the block applied to z, times the gradient of t
            dz_a = dang[:, i] * (-s[:, i] * Z[:, a] + c[:, i] * Z[:, b])
            dz_b = dang[:, i] * (-c[:, i] * Z[:, a] - s[:, i] * Z[:, b])
            inner[:, a, :] += dz_a[:, None] * Zhat
            inner[:, b, :] += dz_b[:, None] * Zhat
        J = self.frame.T @ inner @ self.frame
        still = np.all(ang == 0.0, axis=1) & np.all(dang == 0.0, axis=1)
        J[still] = np.eye(dim)
        return J

    def params(self):
        return {"frame": self.frame.tolist(), "angleFns": [f.to_dict() for f in self.angle_fns],
                "center": self.center.tolist(), "bound": self.bound, "force": self.force}

    @classmethod
    def from_params(cls, frame, angleFns, center, bound, force):
        return cls(np.array(frame), [angle_from_dict(a) for a in angleFns], center, bound, force)


def slow_twist(frame, angle_fns, bound: float = 0.5, force: bool = False, center=None) -> SlowTwist:
    """Block rotation whose angles vary slowly with the radius."""
    return SlowTwist(frame, angle_fns, center=center, bound=bound, force=force)


@register_node
class Slide(SmoothMap):
    """x -> x + F(x) with sup ||F'|| < 1."""

    node = "Slide"

    def __init__(self, field: DisplacementField, bound: Optional[float] = None, dim: Optional[int] = None,
                 n_probe: int = 256, seed: int = 0):
        self.field = field
        analytic = field.derivative_bound()
        limit = 1.0 if bound is None else float(bound)
        if bound is not None and not bound < 1.0:
            raise ConditionBViolated(f"slide bound {bound} must be below 1")
        if not analytic < limit:
            raise ConditionBViolated(f"sup ||F'|| <= {analytic:.6g} is not below {limit:.6g}")
        dim = dim or _field_dim(field)
        if dim is not None and n_probe:
            rng = np.random.default_rng(seed)
            probes = field.probe_points(dim, n_probe, rng)
            measured = float(np.max(np.linalg.norm(field.jacobian(probes), ord=2, axis=(1, 2))))
            if measured > limit or measured > analytic * (1 + 1e-9) + 1e-15:
                raise ConditionBViolated(f"probe grid gives ||F'|| = {measured:.6g}")
        self.bound = bound
        self.rate = analytic
        self.claimed_epsilon = slide_defect(analytic)

    def _evaluate(self, X):
        return X + self.field.value(X)

    def _jacobian(self, X):
        return np.eye(X.shape[1]) + self.field.jacobian(X)

    def params(self):
        return {"field": self.field.to_dict(), "bound": self.bound}

    @classmethod
    def from_params(cls, field, bound):
        return cls(field_from_dict(field), bound)


def _field_dim(field):
    for name in ("vector", "centers", "amplitudes"):
        arr = getattr(field, name, None)
        if arr is not None:
            return arr.shape[-1]
    if isinstance(field, BumpRampField):
        return 2
    return None


def slide(field: DisplacementField, bound: Optional[float] = None) -> Slide:
    return Slide(field, bound)


@register_node
class Composite(SmoothMap):
    """maps[0] applied first."""

    node = "Composite"

    def __init__(self, maps: Sequence[SmoothMap], disjoint: bool = False):
        if not maps:
            raise ValueError("empty composite")
        self.maps = list(maps)
        # disjoint: the factors are non-rigid on regions that never meet, so defects do not stack
        self.disjoint = bool(disjoint)
        if self.disjoint:
            self.claimed_epsilon = max(m.claimed_epsilon for m in self.maps)
        else:
            eps = 0.0
            for m in self.maps:
                eps = compose_defects(eps, m.claimed_epsilon)
            self.claimed_epsilon = eps

    def _evaluate(self, X):
        for m in self.maps:
            X = m._evaluate(X)
        return X

    def _jacobian(self, X):
        J = None
        for m in self.maps:
            Jm = m._jacobian(X)
            J = Jm if J is None else Jm @ J
            X = m._evaluate(X)
        return J

    def params(self):
        return {"maps": [m.to_dict() for m in self.maps], "disjoint": self.disjoint}

    @classmethod
    def from_params(cls, maps, disjoint=False):
        return cls([map_from_dict(m) for m in maps], disjoint)


@register_node
class PatchedUnion(SmoothMap):
    """inner_i on the open ball B(c_i, r_i), ``outer`` elsewhere."""

    node = "PatchedUnion"

    def __init__(self, patches, outer: SmoothMap, verify: bool = True, n_boundary: int = 16, seed: int = 0):
        self.centers = np.array([np.asarray(p[0], dtype=float) for p in patches]).reshape(len(patches), -1)
        self.radii = np.array([float(p[1]) for p in patches])
        self.inner = [p[2] for p in patches]
        self.outer = outer
        for i in range(len(self.radii)):
            for j in range(i + 1, len(self.radii)):
                if np.linalg.norm(self.centers[i] - self.centers[j]) <= self.radii[i] + self.radii[j]:
                    raise ValueError(f"patch balls {i} and {j} have intersecting closures")
        self.claimed_epsilon = max([outer.claimed_epsilon] + [m.claimed_epsilon for m in self.inner])
        if verify and len(self.radii):
            self.boundary_mismatch(n_boundary, seed, raise_on=1e-9)

    def boundary_mismatch(self, n: int = 16, seed: int = 0, raise_on: Optional[float] = None) -> float:
        """Largest relative gap between an inner map and the outer map on its sphere."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        dim = self.centers.shape[1]
        for i, (c, r, m) in enumerate(zip(self.centers, self.radii, self.inner)):
            u = rng.normal(size=(n, dim))
            pts = c + r * u / np.linalg.norm(u, axis=1, keepdims=True)
            gap = float(np.max(row_norms(m._evaluate(pts) - self.outer._evaluate(pts)))) / r
            worst = max(worst, gap)
            if raise_on is not None and gap > raise_on:
                raise ValueError(f"patch {i}: inner and outer maps differ by {gap:.3e} (relative) on the boundary")
        return worst

    def _assign(self, X):
        which = np.full(len(X), -1)
        for i, (c, r) in enumerate(zip(self.centers, self.radii)):
            inside = row_norms(X - c) < r
            which[inside] = i
        return which

    def _dispatch(self, X, method):
        which = self._assign(X)
        out = None
        for i in range(-1, len(self.radii)):
            mask = which == i
            if not np.any(mask):
                continue
            m = self.outer if i < 0 else self.inner[i]
            val = getattr(m, method)(X[mask])
            if out is None:
                out = np.empty((len(X),) + val.shape[1:])
            out[mask] = val
        return out

    def _evaluate(self, X):
        return self._dispatch(X, "_evaluate")

    def _jacobian(self, X):
        return self._dispatch(X, "_jacobian")

    def params(self):
        return {"patches": [{"center": c.tolist(), "radius": float(r), "map": m.to_dict()}
                            for c, r, m in zip(self.centers, self.radii, self.inner)],
                "outer": self.outer.to_dict()}

    @classmethod
    def from_params(cls, patches, outer):
        return cls([(p["center"], p["radius"], map_from_dict(p["map"])) for p in patches],
                   map_from_dict(outer), verify=False)


# ---------------------------------------------------------------- localized maps

@dataclass(frozen=True)
class CanonicalForm:
    """rotation = frame^T St(angles) frame with blocks in the leading coordinates."""

    frame: np.ndarray
    angles: np.ndarray


def block_rotation(angles, dim: int) -> np.ndarray:
    S = np.eye(dim)
    for i, a in enumerate(angles):
        c, s = math.cos(a), math.sin(a)
        S[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[c, s], [-s, c]]
    return S


def canonical_form(rotation) -> CanonicalForm:
    """Block-diagonalize a rotation via the real Schur form."""
    R = np.asarray(rotation, dtype=float)
    dim = R.shape[0]
    if not np.allclose(R.T @ R, np.eye(dim), atol=1e-10) or np.linalg.det(R) < 0:
        raise ValueError("expected a matrix in SO(D)")
    T, Z = schur(R, output="real")
    blocks, minus, plus = [], [], []
    i = 0
    while i < dim:
        if i + 1 < dim and abs(T[i + 1, i]) > 1e-13:
            blocks.append((Z[:, i:i + 2], math.atan2(T[i, i + 1], T[i, i])))
            i += 2
        else:
            (minus if T[i, i] < 0 else plus).append(Z[:, i])
            i += 1
    if len(minus) % 2:
        raise ValueError("odd number of -1 eigenvalues in a rotation")
    for j in range(0, len(minus), 2):
        blocks.append((np.stack([minus[j], minus[j + 1]], axis=1), math.pi))
    cols = [b[0] for b in blocks] + [p[:, None] for p in plus]
    basis = np.hstack(cols) if cols else np.eye(dim)
    angles = np.array([b[1] for b in blocks])
    frame = basis.T.copy()
    if np.linalg.det(frame) < 0:
        if plus:
            frame[-1] *= -1.0
        else:
            frame[1] *= -1.0
            angles[0] = -angles[0]
    recon = frame.T @ block_rotation(angles, dim) @ frame
    if not np.allclose(recon, R, atol=1e-12, rtol=0):
        raise ValueError(f"canonical form reconstruction error {np.max(np.abs(recon - R)):.3e}")
    return CanonicalForm(frame, angles)


def _as_center(center, dim):
    return np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(-1)


def rotation_angle(rotation) -> float:
    """Largest canonical angle of a rotation; 0 when it is the identity to rounding."""
    R = np.asarray(rotation, dtype=float)
    if np.array_equal(R, np.eye(R.shape[0])):
        return 0.0
    form = canonical_form(R)
    return float(np.max(np.abs(form.angles))) if len(form.angles) else 0.0


def required_log_ratio(rotation, eps: float) -> float:
    """log(c2/c1) needed to unwind ``rotation`` with twist rate 2 eps."""
    return rotation_angle(rotation) / eps


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def localize_rotation(rotation, c1: float, c2: float, eps: float, center=None) -> SmoothMap:
    """Equals the rotation about ``center`` on |x - c| <= c1 and the identity on |x - c| >= c2."""
    R = np.asarray(rotation, dtype=float)
    dim = R.shape[0]
    if eps <= 0 or not 0 < c1 < c2:
        raise ValueError("need eps > 0 and 0 < c1 < c2")
    form = canonical_form(R)
    if not np.any(form.angles):
        return Identity()
    theta = float(np.max(np.abs(form.angles)))
    need = theta / eps
    have = math.log(c2 / c1)
    if have < need * (1 - 1e-12):
        raise RatioInfeasible(f"c2/c1 = {c2 / c1:.6g} but unwinding angle {theta:.6g} at eps {eps:.3g} "
                              f"needs exp({need:.6g})", required_ratio=_safe_exp(need))
    fns = [LogTransitionAngle(a, c1, c2) if a != 0.0 else ZeroAngle() for a in form.angles]
    return SlowTwist(form.frame, fns, center=_as_center(center, dim), bound=KAPPA * eps * (1 + 1e-12))


def translation_slide(vector, center, plateau: float, outer: float) -> Slide:
    """x -> x + v on B(center, plateau), identity beyond ``outer``."""
    v = np.asarray(vector, dtype=float).reshape(-1)
    field = CutoffBumps([_as_center(center, len(v))], [v], [plateau], [outer])
    return Slide(field)


def minimal_outer_radius(motion: EuclideanMotion, c3: float, eps: float, center=None) -> float:
    """Smallest c4 accepted by localize_motion for these inputs."""
    c = _as_center(center, motion.dim)
    vnorm = float(np.linalg.norm(motion(c) - c))
    b = c3 + KAPPA * vnorm / eps if vnorm > 0 else c3
    if rotation_angle(motion.linear) == 0.0:
        return b * (1 + 1e-9) if vnorm > 0 else c3
    return b * _safe_exp(required_log_ratio(motion.linear, eps)) * (1 + 1e-9)


def localize_motion(motion: EuclideanMotion, c3: float, c4: Optional[float], eps: float, center=None) -> SmoothMap:
    """Equals the proper motion on |x - c| <= c3 and the identity on |x - c| >= c4.

    A translation slide on [c3, b] follows a localized rotation on [b, c4]; the two
    transition shells are disjoint so their defects do not accumulate. ``c4=None``
    picks the smallest feasible outer radius.
    """
    if not motion.proper:
        raise ValueError("localize_motion needs a proper motion")
    if eps <= 0 or c3 <= 0:
        raise ValueError("need eps > 0 and c3 > 0")
    dim = motion.dim
    c = _as_center(center, dim)
    M = motion.linear
    v = motion(c) - c
    vnorm = float(np.linalg.norm(v))
    rotating = rotation_angle(M) > 0.0
    if vnorm == 0 and not rotating:
        return Identity()
    b = c3 + KAPPA * vnorm / eps if vnorm > 0 else c3
    need = required_log_ratio(M, eps) if rotating else 0.0
    if c4 is None:
        c4 = minimal_outer_radius(motion, c3, eps, c)
    if not c3 < c4:
        raise ValueError("need c3 < c4")
    if b >= c4 or (rotating and math.log(c4 / b) < need * (1 - 1e-12)):
        raise TranslationInfeasible(
            f"translation {vnorm:.6g} needs slide shell up to {b:.6g}; rotation then needs outer radius "
            f"{b * _safe_exp(need):.6g} > c4 = {c4:.6g}")
    parts = []
    if rotating:
        parts.append(localize_rotation(M, b, c4, eps, center=c))
    if vnorm > 0:
        parts.append(translation_slide(v, c, c3, b if rotating else c4))
    return parts[0] if len(parts) == 1 else Composite(parts, disjoint=True)


def plane_rotation(u, w) -> np.ndarray:
    """Rotation in span(u, w) taking the direction of u to the direction of w."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    dim = len(u)
    e = u / np.linalg.norm(u)
    wn = w / np.linalg.norm(w)
    perp = wn - (wn @ e) * e
    if np.linalg.norm(perp) < 1e-14:
        if wn @ e > 0:
            return np.eye(dim)
        basis = np.eye(dim)[np.argmin(np.abs(e))]
        perp = basis - (basis @ e) * e
    f = perp / np.linalg.norm(perp)
    ang = math.atan2(wn @ f, wn @ e)
    return (np.eye(dim) + (math.cos(ang) - 1.0) * (np.outer(e, e) + np.outer(f, f))
            + math.sin(ang) * (np.outer(f, e) - np.outer(e, f)))


@register_node
class PointMover(SmoothMap):
    """Sends x to x' exactly and fixes every y with |y - c| >= c7."""

    node = "PointMover"

    def __init__(self, x, x_prime, c6: float, c7: float, eps: float, center=None):
        self.x = np.asarray(x, dtype=float).reshape(-1)
        self.x_prime = np.asarray(x_prime, dtype=float).reshape(-1)
        self.c6, self.c7, self.eps = float(c6), float(c7), float(eps)
        self.center = _as_center(center, len(self.x))
        self.realization = self._build()
        self.claimed_epsilon = self.realization.claimed_epsilon

    def _build(self) -> SmoothMap:
        c, c6, c7, eps = self.center, self.c6, self.c7, self.eps
        if not 0 < c6 < c7 or eps <= 0:
            raise ValueError("need 0 < c6 < c7 and eps > 0")
        u, up = self.x - c, self.x_prime - c
        if np.array_equal(u, up):
            return Identity()
        nu, nup = float(np.linalg.norm(u)), float(np.linalg.norm(up))
        if nu > c6:
            raise InfeasibleError(f"|x - c| = {nu:.6g} exceeds the plateau radius c6 = {c6:.6g}")
        if nu == 0 or abs(nu - nup) > 1e-12 * max(nu, nup):
            R = plane_rotation(u, up) if nu > 0 and nup > 0 else np.eye(len(u))
            v = up - R @ u
            vnorm = float(np.linalg.norm(v))
            if rotation_angle(R) == 0.0:
                if KAPPA * vnorm / (c7 - c6) > eps:
                    raise TranslationInfeasible(
                        f"moving by {vnorm:.6g} needs a shell of width {KAPPA * vnorm / eps:.6g} > {c7 - c6:.6g}")
                return translation_slide(v, c, c6, c7)
            b = c6 + KAPPA * vnorm / eps
            need = required_log_ratio(R, eps)
            if b >= c7 or math.log(c7 / b) < need * (1 - 1e-12):
                raise TranslationInfeasible(
                    f"slide shell ends at {b:.6g}; rotation then needs outer radius {b * _safe_exp(need):.6g} "
                    f"> c7 = {c7:.6g}")
            return Composite([localize_rotation(R, b, c7, eps, center=c), translation_slide(v, c, c6, b)],
                             disjoint=True)
        return localize_rotation(plane_rotation(u, up), c6, c7, eps, center=c)

    def _evaluate(self, X):
        return self.realization._evaluate(X)

    def _jacobian(self, X):
        return self.realization._jacobian(X)

    def params(self):
        return {"x": self.x.tolist(), "xPrime": self.x_prime.tolist(), "c6": self.c6, "c7": self.c7,
                "eps": self.eps, "center": self.center.tolist()}

    @classmethod
    def from_params(cls, x, xPrime, c6, c7, eps, center):
        return cls(x, xPrime, c6, c7, eps, center)


def point_mover(x, x_prime, c6: float, c7: float, eps: float, center=None) -> SmoothMap:
    if np.array_equal(np.asarray(x, dtype=float), np.asarray(x_prime, dtype=float)):
        return Identity()
    return PointMover(x, x_prime, c6, c7, eps, center)


# ---------------------------------------------------------------- audits

@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))

    @property
    def dim(self):
        return len(self.center)

    def sample(self, n, rng, radial="uniform", r_min=None):
        u = rng.normal(size=(n, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        if radial == "log":
            lo = math.log(r_min if r_min else self.radius * 1e-6)
            r = np.exp(rng.uniform(lo, math.log(self.radius), size=n))
        else:
            r = self.radius * rng.random(n) ** (1.0 / self.dim)
        return self.center + r[:, None] * u


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).reshape(-1))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).reshape(-1))

    @property
    def dim(self):
        return len(self.lower)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * float(np.linalg.norm(self.upper - self.lower))

    def sample(self, n, rng, radial="uniform", r_min=None):
        return self.lower + (self.upper - self.lower) * rng.random((n, self.dim))


class AuditResult(NamedTuple):
    sup_jacobian_defect: float
    sup_pair_ratio_defect: float


def jacobian_defects(J: np.ndarray) -> np.ndarray:
    """Spectral norms of J^T J - I for a stack of Jacobians."""
    dim = J.shape[-1]
    G = np.swapaxes(J, -1, -2) @ J - np.eye(dim)
    return np.max(np.abs(np.linalg.eigvalsh(G)), axis=-1)


def audit_samples(region, n_samples: int, seed: int = 0, radial: str = "uniform", r_min=None, focus=()):
    """Samples from the region plus each focus item: a Ball (uniform) or (Ball, r_min) (log-radial)."""
    rng = np.random.default_rng(seed)
    parts = [region.sample(n_samples, rng, radial, r_min)]
    for item in focus:
        n = max(n_samples // 4, 16)
        if isinstance(item, tuple):
            parts.append(item[0].sample(n, rng, "log", item[1]))
        else:
            parts.append(item.sample(n, rng))
    return np.vstack(parts), rng


def distortion_audit(smooth_map: SmoothMap, region, n_samples: int = 2000, seed: int = 0,
                     radial: str = "uniform", r_min: Optional[float] = None, focus=(),
                     n_global: int = 256) -> AuditResult:
    """Sampled sup of ||J^T J - I|| and of |log(|f(x)-f(y)| / |x-y|)|.

    Pairs are every pair among the first ``n_global`` samples plus one short pair at
    each sample, so both global and local stretching are seen.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    X, rng = audit_samples(region, n_samples, seed, radial, r_min, focus)
    jac = float(np.max(jacobian_defects(smooth_map.jacobian(X))))
    fx = smooth_map(X)
    g = min(n_global, len(X))
    i, j = np.triu_indices(g, k=1)
    dx = row_norms(X[i] - X[j])
    dy = row_norms(fx[i] - fx[j])
    keep = dx > 0
    ratios = [np.abs(np.log(dy[keep] / dx[keep]))]
    step = rng.normal(size=X.shape)
    step /= np.linalg.norm(step, axis=1, keepdims=True)
    # keep steps well above the rounding level of the coordinates themselves
    scale = np.maximum(np.maximum(row_norms(X - region.center), 1e-3 * region.radius), 1e-4 * row_norms(X))
    Xn = X + 1e-3 * scale[:, None] * step
    dx = row_norms(Xn - X)
    dy = row_norms(smooth_map(Xn) - fx)
    ratios.append(np.abs(np.log(dy / dx)))
    pair = float(max(np.max(r) if len(r) else 0.0 for r in ratios))
    return AuditResult(jac, pair)


class BMOAudit(NamedTuple):
    rotation: np.ndarray
    mean_residual: float
    tail_fractions: tuple


TAIL_LEVELS = (1.0, 2.0, 4.0, 8.0)


def polar_rotation(A) -> np.ndarray:
    """Nearest orthogonal matrix to A in Frobenius norm."""
    u, _, vt = np.linalg.svd(np.asarray(A, dtype=float))
    return u @ vt


def bmo_rotation_audit(smooth_map: SmoothMap, ball: Ball, grid_resolution: int = 101) -> BMOAudit:
    """Best constant rotation for f' on a ball and the distribution of ||f' - M_B||.

    The grid is a cubic lattice shifted by half a cell so that it misses the center.
    """
    dim = ball.dim
    h = 2.0 * ball.radius / grid_resolution
    axis = -ball.radius + h * (np.arange(grid_resolution) + 0.5)
    mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    mesh = mesh[np.linalg.norm(mesh, axis=1) < ball.radius] + ball.center
    J = smooth_map.jacobian(mesh)
    MB = polar_rotation(J.mean(axis=0))
    residual = np.linalg.norm(J - MB, ord=2, axis=(1, 2))
    mean = float(residual.mean())
    tails = tuple(float(np.mean(residual > lam * mean)) if mean > 0 else 0.0 for lam in TAIL_LEVELS)
    return BMOAudit(MB, mean, tails)
