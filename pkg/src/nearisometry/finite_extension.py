"""Extension of nearly isometric maps on finite sets to global diffeomorphisms
of small distortion: scale-separated clustering, recursive interpolation,
near-reflection extension, gluing, properness logic and path distances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import (DeltaTooLarge, InfeasibleError, KExceeded, KExceedsD, NearIsometryError, NotThin,
                     ProperInfeasible)
from .geometry import as_points, diameter, log_distortion
from .maps import (KAPPA, Ball, Composite, CutoffBumps, Identity, Motion, PatchedUnion, Slide, SmoothMap,
                   builder_eps_for_defect, distortion_audit, localize_motion, minimal_outer_radius, row_norms,
                   slide_defect)
from .procrustes import (BlockSign, EuclideanMotion, classify_eta_block, fit_euclidean_motion,
                         fit_near_reflection, orthogonal_procrustes)

MACHINE_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class ClusterPartition:
    clusters: tuple
    scale_exponent: int
    separation: float
    log_separation: float = math.nan

    def representatives(self) -> list:
        return [min(c) for c in self.clusters]


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        a, b = self.find(i), self.find(j)
        if a != b:
            self.parent[max(a, b)] = min(a, b)


def _link_clusters(k, pairs, linked):
    uf = _UnionFind(k)
    for (i, j), flag in zip(pairs, linked):
        if flag:
            uf.union(i, j)
    groups = {}
    for i in range(k):
        groups.setdefault(uf.find(i), []).append(i)
    return tuple(sorted((tuple(g) for g in groups.values()), key=min))


def _log_distances(pts):
    d = pdist(pts)
    with np.errstate(divide="ignore"):
        return np.log(d)


def pigeonhole_partition(X, eta: float = 0.1) -> ClusterPartition:
    """Clusters of diameter <= eta^l diam, mutually more than eta^(l-1) diam apart.

    l is the smallest exponent in [10, 100 + C(k,2)] whose distance annulus
    (eta^l diam, eta^(l-1) diam] is empty; a candidate is accepted only after
    both inequalities are checked on the actual clusters.
    """
    pts = as_points(X)
    k = len(pts)
    if k < 2:
        raise ValueError("need at least two points")
    if not 0 < eta <= 0.1:
        raise ValueError("need 0 < eta <= 1/10")
    d = diameter(pts)
    logd = _log_distances(pts)
    L0, le = math.log(d), math.log(eta)
    pairs = list(itertools.combinations(range(k), 2))
    dist = squareform(pdist(pts))
    for ell in range(10, 100 + math.comb(k, 2) + 1):
        lo, hi = L0 + ell * le, L0 + (ell - 1) * le
        if np.any((logd > lo) & (logd <= hi)):
            continue
        clusters = _link_clusters(k, pairs, logd <= lo)
        ok = True
        for c in clusters:
            if len(c) > 1 and np.max(dist[np.ix_(c, c)]) > math.exp(lo):
                ok = False
        for a, b in itertools.combinations(clusters, 2):
            if np.min(dist[np.ix_(a, b)]) <= math.exp(hi):
                ok = False
        if ok:
            return ClusterPartition(clusters, ell, math.exp(hi), hi)
    raise NearIsometryError("no empty annulus found")  # unreachable by pigeonhole


def scaled_clustering(S, eps: float, K: int) -> ClusterPartition:
    """Clusters of at most K-1 points, diameter <= exp(-5/eps) tau, mutual distance >= tau.

    Candidate separations are tau_j = exp(-1/eps) (exp(-5/eps)/K)^j diam with linking
    threshold exp(-5/eps) tau_j / K; the windows are disjoint so one of the first
    C(K,2)+1 is free of distances. Work is in log space since tau_j underflows quickly.
    """
    pts = as_points(S)
    k = len(pts)
    if k > K:
        raise KExceeded(f"{k} points exceed K = {K}")
    if k < 2:
        raise ValueError("need at least two points")
    logd = _log_distances(pts)
    L0 = math.log(diameter(pts))
    step = 5.0 / eps + math.log(K)
    pairs = list(itertools.combinations(range(k), 2))
    for j in range(math.comb(k, 2) + 1):
        log_tau = L0 - 1.0 / eps - j * step
        log_link = log_tau - step
        if np.any((logd > log_link) & (logd < log_tau)):
            continue
        clusters = _link_clusters(k, pairs, logd <= log_link)
        dist = squareform(pdist(pts))
        for c in clusters:
            if len(c) > 1 and math.log(np.max(dist[np.ix_(c, c)])) > log_tau - 5.0 / eps:
                break
        else:
            if all(len(c) <= K - 1 for c in clusters):
                return ClusterPartition(clusters, j, math.exp(log_tau), log_tau)
    raise NearIsometryError("no free scale window found")  # unreachable by pigeonhole


def path_distance(X, mode, i: int, j: int) -> float:
    """Least p-length (or least longest leg for mode inf) over chains through X."""
    pts = as_points(X)
    k = len(pts)
    if not (0 <= i < k and 0 <= j < k):
        raise IndexError("index out of range")
    p = float(mode)
    if p < 1:
        raise ValueError("need p >= 1 or inf")
    dist = squareform(pdist(pts)) if k > 1 else np.zeros((1, 1))
    weight = dist if math.isinf(p) else dist ** p
    best = np.full(k, math.inf)
    best[i] = 0.0
    done = np.zeros(k, dtype=bool)
    for _ in range(k):
        u = int(np.argmin(np.where(done, math.inf, best)))
        if done[u] or math.isinf(best[u]):
            break
        done[u] = True
        if u == j:
            break
        cand = np.maximum(best[u], weight[u]) if math.isinf(p) else best[u] + weight[u]
        best = np.where(~done & (cand < best), cand, best)
    return float(best[j] if math.isinf(p) else best[j] ** (1.0 / p))


# ---------------------------------------------------------------- finite interpolation

@dataclass
class ExtensionResult:
    map: Optional[SmoothMap]
    interpolation_error: float = math.nan
    audited_epsilon: float = math.nan
    audited_pair_defect: float = math.nan
    outer_motion: Optional[EuclideanMotion] = None
    refusal: Optional[dict] = None
    far_field_radius: float = math.nan
    lam: float = math.nan
    delta: float = math.nan
    delta_hat: float = math.nan
    diam: float = math.nan
    anchor: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "map": None if self.map is None else self.map.to_dict(),
            "interpolationError": self.interpolation_error,
            "auditedEpsilon": self.audited_epsilon,
            "auditedPairDefect": self.audited_pair_defect,
            "outerMotion": None if self.outer_motion is None else self.outer_motion.to_dict(),
            "refusal": self.refusal,
            "farFieldRadius": self.far_field_radius,
            "lambda": self.lam,
            "delta": self.delta,
            "deltaHat": self.delta_hat,
            "diam": self.diam,
            "anchor": self.anchor,
            "notes": list(self.notes),
        }
        return out


def _check_zones(centers, radii, what):
    for a in range(len(radii)):
        for b in range(a + 1, len(radii)):
            gap = float(np.linalg.norm(centers[a] - centers[b]))
            if gap <= radii[a] + radii[b]:
                raise DeltaTooLarge(f"{what}: zones around points {a} and {b} overlap "
                                    f"({radii[a]:.3g} + {radii[b]:.3g} >= {gap:.3g})")


def _interpolate_anchored(Y, Z, eps_pub, cluster_eta, min_plateau=0.0):
    """Map with g(y_i) = z_i that is the identity beyond the returned radius around y_0 = z_0.

    Outer proper motion A0 fitted on cluster representatives, localized about y_0;
    representatives corrected by translation bumps on disjoint balls; clusters handled
    recursively inside patches.
    """
    k, dim = Y.shape
    if k == 1:
        return Identity(), 0.0
    part = pigeonhole_partition(Y, cluster_eta)
    reps = part.representatives()
    A0, _ = fit_euclidean_motion(Y[reps], Z[reps], require_proper=True)
    AY = A0(Y)
    centers, vectors, inner, outer, zones, patches = [], [], [], [], [], []
    for cluster, r in zip(part.clusters, reps):
        e = Z[r] - AY[r]
        enorm = float(np.linalg.norm(e))
        radius = 0.0
        if len(cluster) > 1:
            idx = [r] + [i for i in cluster if i != r]
            W = AY[idx] + e
            W[0] = Z[r]
            g, R = _interpolate_anchored(W, Z[idx], eps_pub, cluster_eta)
            if not isinstance(g, Identity):
                radius = R * (1 + 1e-6)
                patches.append((Z[r], radius, g))
        plateau = max(radius, min_plateau) + enorm
        zone = plateau
        if enorm > 0:
            zone = max(plateau + KAPPA * enorm / eps_pub, plateau * (1 + 1e-6))
            centers.append(AY[r])
            vectors.append(e)
            inner.append(plateau)
            outer.append(zone)
        zones.append(zone)
    _check_zones(AY[reps], zones, "translation bumps")
    v = AY[0] - Y[0]
    vnorm = float(np.linalg.norm(v))
    extent = max(float(np.linalg.norm(AY[r] - AY[0])) + z for r, z in zip(reps, zones))
    c3 = (extent + 2.0 * vnorm) * (1 + 1e-6)
    psi0 = localize_motion(A0, c3, None, eps_pub, center=Y[0])
    far = c3 if isinstance(psi0, Identity) else minimal_outer_radius(A0, c3, eps_pub, Y[0])
    parts = [] if isinstance(psi0, Identity) else [psi0]
    if centers:
        parts.append(Slide(CutoffBumps(centers, vectors, inner, outer)))
    if patches:
        parts.append(PatchedUnion(patches, Identity()))
    if not parts:
        return Identity(), far
    return (parts[0] if len(parts) == 1 else Composite(parts, disjoint=True)), far


def _interpolation_error(m, Y, Z):
    return float(np.max(row_norms(m(Y) - Z)))


def _focus_balls(Y, radius):
    if len(Y) < 2:
        return [(Ball(Y[0], radius), radius * 1e-9)]
    d = squareform(pdist(Y))
    np.fill_diagonal(d, np.inf)
    return [(Ball(y, radius), max(float(np.min(d[i])) * 1e-4, radius * 1e-300)) for i, y in enumerate(Y)]


def extend_finite(E, images, eps: float, lam: Optional[float] = None, delta: Optional[float] = None,
                  anchor: Optional[int] = None, cluster_eta: float = 0.1, audit: bool = True,
                  n_audit: int = 1000, seed: int = 0) -> ExtensionResult:
    """Diffeomorphism with Phi(y_i) = z_i, audited distortion <= eps, rigid far away.

    The images are translated so the anchor point is fixed, the anchored interpolant is
    built, and the inverse translation is applied; beyond the far-field radius around
    the anchor the map is that translation (the identity for a fixed anchor).
    """
    Y, Z = as_points(E), as_points(images)
    if Y.shape != Z.shape:
        raise ValueError("E and images must have the same shape")
    k, dim = Y.shape
    if k > dim:
        raise KExceedsD(f"{k} points in dimension {dim}: a proper extension need not exist")
    if not 0 < eps < 1:
        raise ValueError("need 0 < eps < 1")
    delta = eps / 64.0 if delta is None else float(delta)
    measured = log_distortion(Y, Z) if k > 1 else 0.0
    if measured > delta:
        raise DeltaTooLarge(f"input distortion {measured:.3e} exceeds delta = {delta:.3e}")
    if anchor is None:
        fixed = np.flatnonzero(np.all(Y == Z, axis=1))
        anchor = int(fixed[0]) if len(fixed) else 0
    order = [anchor] + [i for i in range(k) if i != anchor]
    shift = Y[anchor] - Z[anchor]
    Yo, Zo = Y[order], Z[order] + shift
    Zo[0] = Yo[0]
    target = 0.98 * eps
    core, far = _interpolate_anchored(Yo, Zo, builder_eps_for_defect(target), cluster_eta)
    diam = diameter(Y)
    outer = EuclideanMotion(np.eye(dim), -shift)
    if np.any(shift != 0):
        phi = Composite([core, Motion(outer)]) if not isinstance(core, Identity) else Motion(outer)
    else:
        phi = core
    far = max(far, diam)
    lam_auto = diam / far if far > 0 else 1.0
    if lam is not None and lam > lam_auto:
        raise InfeasibleError(f"lambda = {lam:.3g} would need far-field radius {diam / lam:.3g}, "
                              f"construction needs {far:.3g}")
    result = ExtensionResult(phi, _interpolation_error(phi, Y, Z), outer_motion=outer,
                             far_field_radius=far, lam=lam_auto if lam is None else lam, delta=delta,
                             delta_hat=(diam / far) ** 2 if far > 0 else 1.0, diam=diam, anchor=anchor)
    if audit:
        radius = 2.0 * far if far > 0 else 1.0
        a = distortion_audit(phi, Ball(Y[anchor], radius), n_audit, seed, radial="log",
                             r_min=(diam if diam > 0 else radius) * 1e-6, focus=_focus_balls(Y, radius))
        result.audited_epsilon, result.audited_pair_defect = a
    return result


# ---------------------------------------------------------------- reflections and gluing

def near_reflection_extension(E, tau: float, eta: float, eps: float) -> SmoothMap:
    """Map fixing every point of a thin set and equal to an improper motion away from it.

    f = f1 o A with A the near reflection and f1 the slide adding z - A(z) on B(z, tau/10),
    cut off by tau/5; near z, f is the improper motion x -> A(x) + z - A(z).
    """
    pts = as_points(E)
    k = len(pts)
    if k >= 2:
        sep = float(np.min(pdist(pts)))
        if sep < tau * (1 - 1e-12):
            raise ValueError(f"pairwise separation {sep:.3g} is below tau = {tau:.3g}")
    fit = fit_near_reflection(pts, eta)
    A = fit.motion
    shifts = pts - A(pts)
    p = KAPPA * float(np.max(np.linalg.norm(shifts, axis=1))) / (tau / 10.0)
    if slide_defect(p) > eps:
        raise NotThin(f"reflection displaces points by up to {fit.displacement:.3g}; correcting slide "
                      f"has defect {slide_defect(p):.3g} > eps = {eps:.3g}")
    motion = Motion(A)
    if not np.any(shifts):
        return motion
    bumps = CutoffBumps(pts, shifts, [tau / 10.0] * k, [tau / 5.0] * k)
    return Composite([motion, Slide(bumps)])


def _shell_samples(z, r_lo, r_hi, n, rng):
    u = rng.normal(size=(n, len(z)))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = np.exp(rng.uniform(math.log(r_lo), math.log(r_hi), size=n))
    return z + r[:, None] * u


def _agreeing_motion(m, z, r_lo, r_hi, rng, what, index):
    pts = _shell_samples(z, r_lo, r_hi, 8 * len(z) + 8, rng)
    vals = m(pts)
    motion, _ = orthogonal_procrustes(pts, vals)
    gaps = row_norms(motion(pts) - vals)
    tol = 1e-7 * r_hi + 64 * MACHINE_EPS * (float(np.max(np.abs(z))) + float(np.max(np.abs(vals))))
    worst = int(np.argmax(gaps))
    if gaps[worst] > tol:
        raise InfeasibleError(f"{what} for point {index} is not a motion on its shell: "
                              f"gap {gaps[worst]:.3e} at sample {pts[worst].tolist()}")
    if not motion.proper:
        raise ProperInfeasible(f"{what} for point {index} agrees with an improper motion")
    return motion


def glue_radii(tau: float, eps: float) -> tuple:
    """(r1, r2, r3, r4) with r_i = exp((i-5)/eps) tau."""
    return tuple(math.exp((i - 5) / eps) * tau for i in range(1, 5))


def glue(per_point_maps: Mapping[int, SmoothMap], outer: SmoothMap, E, tau: float, eps: float,
         seed: int = 0, builder_eps: Optional[float] = None) -> SmoothMap:
    """Patch local maps Phi_z near each z into an outer map Psi.

    Phi_z must agree with a proper motion A_z outside B(z, r1), Psi with a proper motion
    A*_z on B(z, r4), and Phi_z(z) = Psi(z). The result is Phi_z on B(z, r2), the
    transition A*_z o L with L localizing (A*_z)^-1 A_z on [r2, r3], and Psi elsewhere.
    """
    pts = as_points(E)
    r1, r2, r3, r4 = glue_radii(tau, eps)
    zs = sorted(per_point_maps)
    _check_zones(pts[zs], [r4] * len(zs), "gluing balls")
    builder_eps = builder_eps_for_defect(eps) if builder_eps is None else builder_eps
    rng = np.random.default_rng(seed)
    patches = []
    for i in zs:
        z, phi = pts[i], per_point_maps[i]
        gap = float(np.linalg.norm(phi(z) - outer(z)))
        if gap > 1e-9 * r1 + 64 * MACHINE_EPS * (1 + float(np.max(np.abs(z)))):
            raise InfeasibleError(f"point {i}: local and outer maps differ by {gap:.3e} at z = {z.tolist()}")
        A = _agreeing_motion(phi, z, r1 * 1.5, r2, rng, "local map", i)
        A_star = _agreeing_motion(outer, z, r4 * 1e-3, r4, rng, "outer map", i)
        relative = A_star.inverse().compose(A)
        L = localize_motion(relative, r2, r3, builder_eps, center=z)
        transition = A_star_map = Motion(A_star)
        if not isinstance(L, Identity):
            transition = Composite([L, A_star_map])
        inner = PatchedUnion([(z, r2, phi)], transition)
        patches.append((z, r3, inner))
    if not patches:
        return outer
    return PatchedUnion(patches, outer)


# ---------------------------------------------------------------- properness

def scan_eta_blocks(Y, Z, eta: float):
    """First positive and first negative eta-block among all (D+1)-tuples."""
    k, dim = Y.shape
    found = {}
    for tup in itertools.combinations(range(k), dim + 1):
        sign = classify_eta_block(Y[list(tup)], Z[list(tup)], eta)
        if sign is not BlockSign.NOT_A_BLOCK and sign not in found:
            found[sign] = tup
            if len(found) == 2:
                break
    return found.get(BlockSign.POSITIVE), found.get(BlockSign.NEGATIVE)


def _bump_slide(centers, vectors, plateau, eps_pub):
    norms = np.linalg.norm(vectors, axis=1)
    keep = norms > 0
    if not np.any(keep):
        return None, np.asarray(plateau)
    plateau = np.asarray(plateau, dtype=float)
    outer = np.maximum(plateau + KAPPA * norms / eps_pub, plateau * (1 + 1e-6))
    _check_zones(centers, outer, "correction bumps")
    return Slide(CutoffBumps(centers[keep], vectors[keep], plateau[keep], outer[keep])), outer


def _proper_pipeline(Y, Z, eps, K, target, cluster_eta, notes, depth=0):
    """Map interpolating Y -> Z that equals a proper motion far away; returns (map, far motion)."""
    k, dim = Y.shape
    if k == 1:
        A = EuclideanMotion(np.eye(dim), Z[0] - Y[0])
        return Motion(A), A
    if k <= dim:
        shift = Z[0] - Y[0]
        Zs = Z - shift
        Zs[0] = Y[0]
        core, _ = _interpolate_anchored(Y, Zs, builder_eps_for_defect(target), cluster_eta)
        A = EuclideanMotion(np.eye(dim), shift)
        return (Motion(A) if isinstance(core, Identity) else Composite([core, Motion(A)])), A
    # two layers (reflection correction and motion correction) may stack at one site
    layer = math.sqrt(1.0 + target) - 1.0
    eps_pub = builder_eps_for_defect(layer)
    part = scaled_clustering(Y, eps, K)
    reps = part.representatives()
    tau = part.separation
    r1, r2, r3, r4 = glue_radii(tau, eps)
    P, Q = Y[reps], Z[reps]
    pre = None
    if len(reps) <= dim:
        A, _ = fit_euclidean_motion(P, Q, require_proper=True)
    else:
        A, _ = fit_euclidean_motion(P, Q)
        if not A.proper:
            # thin representatives: fix them with a near-reflection map, then fit an improper motion
            tau_r = tau if r4 * 1.01 <= tau / 10.0 else 10.1 * r4
            eta_thin = float(np.exp(-1.0 / eps))
            try:
                pre = near_reflection_extension(P, tau_r, eta_thin, layer)
            except NotThin as exc:
                raise ProperInfeasible(f"improper best fit on a set that is not thin: {exc}") from exc
            notes.append(f"depth {depth}: improper fit on thin set, composed with near-reflection extension")
    AP = A(P)
    e = Q - AP
    plateau = np.full(len(reps), r4 * 1.01) + np.linalg.norm(e, axis=1)
    corr, zones = _bump_slide(AP, e, plateau, eps_pub)
    if np.max(zones) * 2 >= tau:
        raise DeltaTooLarge(f"correction bumps of radius {np.max(zones):.3g} do not fit in separation {tau:.3g}")
    parts = ([pre] if pre is not None else []) + [Motion(A)] + ([corr] if corr is not None else [])
    psi = parts[0] if len(parts) == 1 else Composite(parts)
    far = A
    if pre is not None:
        far = A.compose(pre.maps[0].motion if isinstance(pre, Composite) else pre.motion)
    local = {}
    for cluster, r in zip(part.clusters, reps):
        if len(cluster) == 1:
            continue
        idx = [r] + [i for i in cluster if i != r]
        A_star = _local_motion(psi, Y[r], r4)
        sub_map, _ = _proper_pipeline(Y[idx], A_star.inverse()(Z[idx]), eps, K, target, cluster_eta, notes,
                                      depth + 1)
        local[r] = Composite([sub_map, Motion(A_star)])
    if local:
        try:
            psi = glue(local, psi, Y, tau, eps, builder_eps=builder_eps_for_defect(target))
        except InfeasibleError as exc:
            raise InfeasibleError(f"cluster rotation incompatible with the gluing shells: {exc}") from exc
    return psi, far


def _local_motion(m, z, radius):
    rng = np.random.default_rng(1)
    return _agreeing_motion(m, z, radius * 1e-3, radius, rng, "outer map", "representative")


def extend_with_properness(E, images, eps: float, K: int, C_K: Optional[float] = None,
                           C_eta: float = 1.0, cluster_eta: float = 0.1, audit: bool = True,
                           n_audit: int = 1000, seed: int = 0) -> ExtensionResult:
    """Extension that respects orientation, or a refusal with conflicting eta-blocks.

    delta = exp(-C_K/eps) bounds the admissible input distortion and eta = exp(-C_eta/eps)
    is the block threshold. Positive and negative blocks together refuse; only negative
    blocks reflect the domain first.
    """
    Y, Z = as_points(E), as_points(images)
    if Y.shape != Z.shape:
        raise ValueError("E and images must have the same shape")
    k, dim = Y.shape
    if k > K:
        raise KExceeded(f"{k} points exceed K = {K}")
    C_K = 5.0 + K if C_K is None else float(C_K)
    delta = max(math.exp(-C_K / eps), 64 * MACHINE_EPS)
    measured = log_distortion(Y, Z) if k > 1 else 0.0
    if measured > delta:
        raise DeltaTooLarge(f"input distortion {measured:.3e} exceeds delta = {delta:.3e}")
    eta = math.exp(-C_eta / eps)
    diam = diameter(Y)
    positive, negative = scan_eta_blocks(Y, Z, eta) if k >= dim + 1 else (None, None)
    if positive is not None and negative is not None:
        return ExtensionResult(None, refusal={"positiveBlock": list(positive), "negativeBlock": list(negative)},
                               delta=delta, diam=diam)
    notes = []
    target = 0.98 * eps
    if negative is not None:
        normal = np.zeros(dim)
        normal[0] = 1.0
        rho = EuclideanMotion.reflection(normal, Y[0])
        inner, far = _proper_pipeline(rho(Y), Z, eps, K, target, cluster_eta, notes)
        phi = Composite([Motion(rho), inner])
        far = far.compose(rho)
        notes.append("only negative blocks: domain reflected before extension")
    else:
        phi, far = _proper_pipeline(Y, Z, eps, K, target, cluster_eta, notes)
    result = ExtensionResult(phi, _interpolation_error(phi, Y, Z), outer_motion=far, delta=delta, diam=diam,
                             notes=notes)
    if audit:
        radius = 4.0 * max(diam, 1e-300)
        a = distortion_audit(phi, Ball(Y.mean(axis=0), radius), n_audit, seed,
                             focus=_focus_balls(Y, radius))
        result.audited_epsilon, result.audited_pair_defect = a
    return result
