"""Relabeling of unlabeled configurations: distance multisets, triangle and
quadrilateral area tables, the triangle-seeded search, exhaustive
association-graph search and Procrustes alignment of the result."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import BudgetExceeded
from .geometry import as_points, diameter
from .procrustes import EuclideanMotion, orthogonal_procrustes

AREA_TOL = 1e-9
DIST_TOL = 1e-9
QUAD_EDGES = tuple(itertools.combinations(range(4), 2))


# ---------------------------------------------------------------------------
# distance multisets


class MultisetVerdict(enum.Enum):
    EQUAL = "Equal"
    UNEQUAL = "Unequal"


@dataclass(frozen=True)
class MultisetReport:
    verdict: MultisetVerdict
    max_gap: float
    tolerance: float
    mismatches: tuple

    @property
    def equal(self) -> bool:
        return self.verdict is MultisetVerdict.EQUAL

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "maxGap": self.max_gap,
            "tolerance": self.tolerance,
            "mismatches": [
                {"pairP": list(a), "distanceP": dp, "pairQ": list(b), "distanceQ": dq}
                for a, dp, b, dq in self.mismatches
            ],
        }


def distance_multiset_compare(P, Q, tol: float = 1e-9) -> MultisetReport:
    """Compare the sorted pairwise-distance multisets of two equal-size sets."""
    p, q = as_points(P), as_points(Q)
    if len(p) != len(q):
        raise ValueError(f"size mismatch: {len(p)} vs {len(q)} points")
    if len(p) < 2:
        raise ValueError("need at least two points")
    pairs = list(itertools.combinations(range(len(p)), 2))
    dp, dq = pdist(p), pdist(q)
    op, oq = np.argsort(dp, kind="stable"), np.argsort(dq, kind="stable")
    gaps = np.abs(dp[op] - dq[oq])
    scale = tol * max(diameter(p), diameter(q))
    bad = np.flatnonzero(gaps > scale)
    mismatches = tuple((pairs[op[i]], float(dp[op[i]]), pairs[oq[i]], float(dq[oq[i]])) for i in bad)
    verdict = MultisetVerdict.UNEQUAL if len(bad) else MultisetVerdict.EQUAL
    return MultisetReport(verdict, float(gaps.max()), float(scale), mismatches)


# ---------------------------------------------------------------------------
# areas


def heron_area(a, b, c):
    """Triangle area from side lengths, in the cancellation-free sorted form."""
    sides = np.sort(np.stack(np.broadcast_arrays(*map(np.asarray, (a, b, c))), axis=-1), axis=-1)
    z, y, x = sides[..., 0], sides[..., 1], sides[..., 2]
    prod = (x + (y + z)) * (z - (x - y)) * (z + (x - y)) * (x + (y - z))
    out = 0.25 * np.sqrt(np.maximum(prod, 0.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuadRoles:
    """Edge roles in the six-distance area formula; indices into QUAD_EDGES."""

    r: int
    s: int
    a: int
    c: int
    b: int
    d: int
    diagonal: bool


def quad_roles(dists) -> QuadRoles:
    """r, s are the two largest distances (ties by edge order); a, c a
    vertex-disjoint pair of the remaining four."""
    d = np.asarray(dists, dtype=float)
    order = sorted(range(6), key=lambda i: (-d[i], i))
    r, s = order[:2]
    rest = sorted(order[2:])
    diagonal = not set(QUAD_EDGES[r]) & set(QUAD_EDGES[s])
    a = c = None
    for i, j in itertools.combinations(rest, 2):
        if not set(QUAD_EDGES[i]) & set(QUAD_EDGES[j]):
            a, c = i, j
            break
    b, dd = [e for e in rest if e not in (a, c)]
    return QuadRoles(r, s, a, c, b, dd, diagonal)


def quad_terms(dists) -> tuple[float, float, float, QuadRoles]:
    """(r*s, S = a^2+c^2-b^2-d^2, S~ = a^2+b^2+c^2+d^2, roles)."""
    d = np.asarray(dists, dtype=float)
    ro = quad_roles(d)
    sq = d ** 2
    S = sq[ro.a] + sq[ro.c] - sq[ro.b] - sq[ro.d]
    St = sq[ro.a] + sq[ro.c] + sq[ro.b] + sq[ro.d]
    return float(d[ro.r] * d[ro.s]), float(S), float(St), ro


def quad_area(dists) -> float:
    """(1/4) sqrt(4 r^2 s^2 - S^2) for the six distances in QUAD_EDGES order."""
    rs, S, _, _ = quad_terms(dists)
    return 0.25 * float(np.sqrt(max(4.0 * rs * rs - S * S, 0.0)))


def quad_split_area(dists) -> float:
    """Area as two triangles on either side of the largest distance."""
    d = np.asarray(dists, dtype=float)
    ro = quad_roles(d)
    u, w = QUAD_EDGES[ro.r]
    x, y = [v for v in range(4) if v not in (u, w)]

    def dist(i, j):
        return d[QUAD_EDGES.index((min(i, j), max(i, j)))]

    return heron_area(dist(u, w), dist(u, x), dist(w, x)) + heron_area(dist(u, w), dist(u, y), dist(w, y))


# ---------------------------------------------------------------------------
# tolerance model


@dataclass(frozen=True)
class TriangleBounds:
    lower: float
    upper: float
    H1: float
    H2: float
    small_enough: bool


@dataclass(frozen=True)
class QuadBounds:
    lower: float
    upper: float
    H1: float
    H2: float
    diagonal: bool


@dataclass(frozen=True)
class ToleranceModel:
    """Relative pairwise distortion bound E; E = 0 means exact matching."""

    E: float = 0.0

    def __post_init__(self):
        if not (self.E >= 0 and np.isfinite(self.E)):
            raise ValueError(f"E must be finite and >= 0, got {self.E}")

    @property
    def exact(self) -> bool:
        return self.E == 0

    def distances_compatible(self, dp, dq, scale: float):
        """(1-E) dq <= dp <= (1+E) dq, up to DIST_TOL*scale rounding."""
        dp, dq = np.asarray(dp), np.asarray(dq)
        return np.abs(dp - dq) <= self.E * dq + DIST_TOL * scale

    def triangle_bounds(self, dq) -> TriangleBounds:
        """Interval for a triangle area whose sides are EP-close to ``dq``.

        With perimeter s', alpha_i = s' - 2 dq_i and beta_i = (s' + 2 dq_i) E, the
        products s' prod(alpha -+ beta) expand to S' -+ H; the interval is
        sqrt(B^2 -+ H/4). When some alpha_i < beta_i the lower product loses its
        sign and the lower bound falls back to zero.
        """
        dq = np.asarray(dq, dtype=float)
        E = self.E
        sp = float(dq.sum())
        a1, a2, a3 = sp - 2.0 * dq
        b1, b2, b3 = (sp + 2.0 * dq) * E
        H1 = sp * (a3 * b2 * (a1 - b1) + a1 * b3 * (a2 - b2) + a2 * b1 * (a3 - b3) + b1 * b2 * b3)
        H2 = sp * (a3 * b2 * (a1 + b1) + a1 * b3 * (a2 + b2) + a2 * b1 * (a3 + b3) + b1 * b2 * b3)
        B = heron_area(*dq)
        small = bool(min(a1 - b1, a2 - b2, a3 - b3) >= 0)
        lower = float(np.sqrt(max(B * B - 0.25 * H1, 0.0))) if small else 0.0
        upper = float(np.sqrt(max(B * B + 0.25 * H2, 0.0)))
        return TriangleBounds(lower, upper, float(H1), float(H2), small)

    def quad_bounds(self, dq) -> QuadBounds:
        """Interval sqrt(B^2 (1+E^2)^2 -+ H^/16) for a quadrilateral near ``dq``."""
        E = self.E
        rs, S, St, ro = quad_terms(dq)
        B = quad_area(dq)
        g = 1.0 + E * E
        h1 = St * 2.0 * E * (2.0 * E * St + S * g)
        h2 = St * 2.0 * E * (2.0 * E * St - S * g)
        H1 = 16.0 * rs * rs * (E - E * E + E ** 3) + h1
        H2 = 16.0 * rs * rs * (E + E * E + E ** 3) - h2
        centre = B * B * g * g
        lower = float(np.sqrt(max(centre - H1 / 16.0, 0.0)))
        upper = float(np.sqrt(max(centre + H2 / 16.0, 0.0)))
        return QuadBounds(lower, upper, float(H1), float(H2), ro.diagonal)


# ---------------------------------------------------------------------------
# area tables


@dataclass(frozen=True)
class AreaTable:
    """Polygon areas of both configurations and the matches between them.

    ``matches[t]`` lists the Q tuples whose interval (or exact area) admits
    P tuple ``t``. A1/B1 are the matched tuples, A2/B2 the rest.
    """

    tuples: np.ndarray
    areas_p: np.ndarray
    areas_q: np.ndarray
    matches: tuple
    flagged_p: np.ndarray
    flagged_q: np.ndarray

    @property
    def A1(self) -> np.ndarray:
        return np.array([t for t, m in enumerate(self.matches) if len(m)], dtype=int)

    @property
    def A2(self) -> np.ndarray:
        return np.array([t for t, m in enumerate(self.matches) if not len(m)], dtype=int)

    @property
    def B1(self) -> np.ndarray:
        hit = set()
        for m in self.matches:
            hit.update(int(x) for x in m)
        return np.array(sorted(hit), dtype=int)

    @property
    def B2(self) -> np.ndarray:
        return np.setdiff1d(np.arange(len(self.tuples)), self.B1)

    def to_dict(self) -> dict:
        def rows(idx, areas):
            return [{"tuple": self.tuples[i].tolist(), "area": float(areas[i])} for i in idx]

        return {
            "A1": rows(self.A1, self.areas_p),
            "A2": rows(self.A2, self.areas_p),
            "B1": rows(self.B1, self.areas_q),
            "B2": rows(self.B2, self.areas_q),
            "flaggedP": np.flatnonzero(self.flagged_p).tolist(),
            "flaggedQ": np.flatnonzero(self.flagged_q).tolist(),
        }


def _match_areas(areas_p, areas_q, lower, upper, exact: bool, scale2: float) -> tuple:
    order = np.argsort(areas_q, kind="stable")
    sorted_q = areas_q[order]
    out = []
    for a in areas_p:
        if exact:
            lo = np.searchsorted(sorted_q, a - AREA_TOL * scale2, side="left")
            hi = np.searchsorted(sorted_q, a + AREA_TOL * scale2, side="right")
            out.append(np.sort(order[lo:hi]))
        else:
            out.append(np.flatnonzero((lower <= a) & (a <= upper)))
    return tuple(out)


def triangle_area_tables(P, Q, model: ToleranceModel = ToleranceModel()) -> AreaTable:
    """Heron areas of all triples of both sets, matched exactly or by interval."""
    p, q = as_points(P), as_points(Q)
    n = len(p)
    if n < 3 or len(q) != n:
        raise ValueError("need two sets of the same size n >= 3")
    tri = np.array(list(itertools.combinations(range(n), 3)), dtype=int)
    Dp, Dq = squareform(pdist(p)), squareform(pdist(q))

    def sides(D):
        return D[tri[:, 0], tri[:, 1]], D[tri[:, 0], tri[:, 2]], D[tri[:, 1], tri[:, 2]]

    areas_p, areas_q = heron_area(*sides(Dp)), heron_area(*sides(Dq))
    sq = np.stack(sides(Dq), axis=1)
    lower = np.zeros(len(tri))
    upper = np.zeros(len(tri))
    flagged_q = np.zeros(len(tri), dtype=bool)
    if not model.exact:
        for t, dq in enumerate(sq):
            b = model.triangle_bounds(dq)
            lower[t], upper[t], flagged_q[t] = b.lower, b.upper, not b.small_enough
    scale = max(diameter(p), diameter(q))
    matches = _match_areas(areas_p, areas_q, lower, upper, model.exact, scale * scale)
    return AreaTable(tri, areas_p, areas_q, matches, np.zeros(len(tri), dtype=bool), flagged_q)


def quad_area_tables(P, Q, model: ToleranceModel = ToleranceModel()) -> AreaTable:
    """Six-distance areas of all quadruples; tuples whose two largest distances
    share a vertex are flagged as not convex with those distances as diagonals."""
    p, q = as_points(P), as_points(Q)
    n = len(p)
    if n < 4 or len(q) != n:
        raise ValueError("need two sets of the same size n >= 4")
    quads = np.array(list(itertools.combinations(range(n), 4)), dtype=int)
    Dp, Dq = squareform(pdist(p)), squareform(pdist(q))

    def six(D, t):
        return np.array([D[t[i], t[j]] for i, j in QUAD_EDGES])

    areas_p = np.empty(len(quads))
    areas_q = np.empty(len(quads))
    lower = np.zeros(len(quads))
    upper = np.zeros(len(quads))
    flagged_p = np.zeros(len(quads), dtype=bool)
    flagged_q = np.zeros(len(quads), dtype=bool)
    for t, tup in enumerate(quads):
        dp, dq = six(Dp, tup), six(Dq, tup)
        areas_p[t], areas_q[t] = quad_area(dp), quad_area(dq)
        flagged_p[t] = not quad_roles(dp).diagonal
        flagged_q[t] = not quad_roles(dq).diagonal
        if not model.exact:
            b = model.quad_bounds(dq)
            lower[t], upper[t] = b.lower, b.upper
    scale = max(diameter(p), diameter(q))
    matches = _match_areas(areas_p, areas_q, lower, upper, model.exact, scale * scale)
    return AreaTable(quads, areas_p, areas_q, matches, flagged_p, flagged_q)


# ---------------------------------------------------------------------------
# correspondences


@dataclass(frozen=True)
class Correspondence:
    """Injective partial map P -> Q with its supporting evidence."""

    permutation: tuple
    evidence: tuple = ()
    residual: float = float("nan")
    bad_points: tuple = ((), ())
    motion: EuclideanMotion | None = field(default=None, compare=False)

    def __post_init__(self):
        perm = tuple(sorted((int(i), int(j)) for i, j in self.permutation))
        src = [i for i, _ in perm]
        dst = [j for _, j in perm]
        if len(set(src)) != len(src) or len(set(dst)) != len(dst):
            raise ValueError("permutation must be injective")
        object.__setattr__(self, "permutation", perm)

    @property
    def matched_count(self) -> int:
        return len(self.permutation)

    def as_dict(self) -> dict:
        return dict(self.permutation)

    def to_dict(self) -> dict:
        return {
            "permutation": [list(pair) for pair in self.permutation],
            "matchedCount": self.matched_count,
            "evidence": [dict(e) for e in self.evidence],
            "residual": self.residual,
            "badPoints": {"P": list(self.bad_points[0]), "Q": list(self.bad_points[1])},
            "motion": None if self.motion is None else self.motion.to_dict(),
        }


def align_after_match(P, Q, permutation) -> tuple[EuclideanMotion, float]:
    """Least-squares motion on the matched pairs and its max point error there."""
    pairs = sorted(dict(permutation).items()) if not isinstance(permutation, Correspondence) else list(
        permutation.permutation
    )
    if not pairs:
        raise ValueError("empty permutation")
    src = [i for i, _ in pairs]
    dst = [j for _, j in pairs]
    if len(set(dst)) != len(dst):
        raise ValueError("permutation must be injective")
    p, q = as_points(P)[src], as_points(Q)[dst]
    motion, _ = orthogonal_procrustes(p, q)
    return motion, float(np.max(np.linalg.norm(motion(p) - q, axis=1)))


def edge_permutation(permutation, n: int) -> dict:
    """Edge map {i,j} -> {pi(i), pi(j)} induced by a vertex map."""
    pi = dict(permutation)
    return {
        frozenset((i, j)): frozenset((pi[i], pi[j]))
        for i, j in itertools.combinations(range(n), 2)
        if i in pi and j in pi
    }


def relabeling_criterion(edge_map: dict, n: int) -> bool:
    """f{i,j} and f{i,k} share a vertex for all distinct i, j, k."""
    for i in range(n):
        for j, k in itertools.combinations([v for v in range(n) if v != i], 2):
            a, b = edge_map.get(frozenset((i, j))), edge_map.get(frozenset((i, k)))
            if a is None or b is None:
                continue
            if not a & b:
                return False
    return True


def _finish(P, Q, maps, evidence=None) -> list:
    n_p, n_q = len(as_points(P)), len(as_points(Q))
    out = []
    seen = set()
    for idx, m in enumerate(maps):
        key = tuple(sorted(m.items()))
        if key in seen:
            continue
        seen.add(key)
        motion, err = align_after_match(P, Q, m)
        ev = () if evidence is None else tuple(evidence[idx])
        bad = (tuple(sorted(set(range(n_p)) - set(m))), tuple(sorted(set(range(n_q)) - set(m.values()))))
        out.append(Correspondence(key, ev, err, bad, motion))
    out.sort(key=lambda c: (-c.matched_count, c.permutation))
    return out


class GraphBacktrack:
    """All maximal distance-compatible partial maps, as maximal cliques of the
    association graph on pairs (i, j) (Bron-Kerbosch with pivoting)."""

    name = "graph"

    def __init__(self, budget: int = 14, node_budget: int = 2_000_000, min_size: int = 3):
        self.budget = budget
        self.node_budget = node_budget
        self.min_size = min_size

    def cliques(self, P, Q, model: ToleranceModel) -> list:
        p, q = as_points(P), as_points(Q)
        n, m = len(p), len(q)
        if max(n, m) > self.budget:
            raise BudgetExceeded(f"{max(n, m)} points exceeds the search budget {self.budget}")
        Dp, Dq = squareform(pdist(p)), squareform(pdist(q))
        scale = max(diameter(p), diameter(q))
        nodes = [(i, j) for i in range(n) for j in range(m)]
        N = len(nodes)
        I = np.array([a for a, _ in nodes])
        J = np.array([b for _, b in nodes])
        ok = model.distances_compatible(Dp[I][:, I], Dq[J][:, J], scale)
        ok &= (I[:, None] != I[None, :]) & (J[:, None] != J[None, :])
        adj = [frozenset(np.flatnonzero(ok[v]).tolist()) for v in range(N)]
        found = []
        calls = 0

        def expand(R, Pset, X):
            nonlocal calls
            calls += 1
            if calls > self.node_budget:
                raise BudgetExceeded(f"clique search exceeded {self.node_budget} nodes")
            if not Pset and not X:
                if len(R) >= self.min_size:
                    found.append(R)
                return
            if len(R) + len(Pset) < self.min_size:
                return
            pivot = max(Pset | X, key=lambda u: (len(adj[u] & Pset), -u))
            for v in sorted(Pset - adj[pivot]):
                expand(R + [v], Pset & adj[v], X & adj[v])
                Pset = Pset - {v}
                X = X | {v}

        expand([], frozenset(range(N)), frozenset())
        return [{nodes[v][0]: nodes[v][1] for v in clique} for clique in found]

    def search(self, P, Q, model: ToleranceModel = ToleranceModel()) -> list:
        return _finish(P, Q, self.cliques(P, Q, model))


class TenStep:
    """Triangle-seeded relabeling in the plane.

    Drops points seen only in unmatched triangles, visits matched triangles by
    ascending (multiplicity, area), seeds vertex maps from every side-compatible
    ordering of each matched Q triangle (1, 2 or 6 for scalene, isosceles,
    equilateral) and grows live partial maps by union with conflict rejection
    and a full cross-distance check between the merged shapes. Keeps the
    largest maps; overflowing the beam falls back to GraphBacktrack.
    """

    name = "tenstep"

    def __init__(self, beam: int = 10_000, budget: int = 14):
        self.beam = beam
        self.budget = budget
        self.fallbacks = 0

    def search(self, P, Q, model: ToleranceModel = ToleranceModel()) -> list:
        p, q = as_points(P), as_points(Q)
        if p.shape[1] != 2 or q.shape[1] != 2:
            raise ValueError("the triangle-seeded search is planar (D = 2)")
        n = len(p)
        if n < 3 or len(q) != n:
            raise ValueError("need two sets of the same size n >= 3")
        table = triangle_area_tables(p, q, model)
        Dp, Dq = squareform(pdist(p)), squareform(pdist(q))
        scale = max(diameter(p), diameter(q))

        # step 1: points only in unmatched triangles are set aside
        keep_p = {int(v) for t in table.A1 for v in table.tuples[t]}
        keep_q = {int(v) for t in table.B1 for v in table.tuples[t]}

        order = sorted(table.A1.tolist(), key=lambda t: (len(table.matches[t]), table.areas_p[t], t))
        live: list[tuple[dict, list]] = []
        for t in order:
            tp = tuple(int(v) for v in table.tuples[t])
            seeds = []
            for u in table.matches[t]:
                tq = tuple(int(v) for v in table.tuples[u])
                if not (set(tp) <= keep_p and set(tq) <= keep_q):
                    continue
                for perm in itertools.permutations(tq):
                    if all(
                        model.distances_compatible(Dp[tp[a], tp[b]], Dq[perm[a], perm[b]], scale)
                        for a, b in ((0, 1), (0, 2), (1, 2))
                    ):
                        ev = {"P": list(tp), "Q": list(perm), "areaP": float(table.areas_p[t]),
                              "areaQ": float(table.areas_q[u])}
                        seeds.append((dict(zip(tp, perm)), ev))
            if not seeds:
                continue
            nxt = []
            absorbed = [False] * len(seeds)
            for pi, ev_list in live:
                grown = False
                for s_idx, (sigma, ev) in enumerate(seeds):
                    merged = self._merge(pi, sigma, Dp, Dq, model, scale)
                    if merged is not None:
                        absorbed[s_idx] = True
                        grown = True
                        nxt.append((merged, ev_list + [ev]))
                if not grown:
                    nxt.append((pi, ev_list))
            for s_idx, (sigma, ev) in enumerate(seeds):
                if not absorbed[s_idx]:
                    nxt.append((dict(sigma), [ev]))
            live = self._dedupe(nxt)
            if len(live) > self.beam:
                if n > self.budget:
                    raise BudgetExceeded(f"{len(live)} live maps exceed the beam {self.beam}")
                self.fallbacks += 1
                return GraphBacktrack(self.budget).search(p, q, model)
        if not live:
            return []
        best = max(len(pi) for pi, _ in live)
        top = [(pi, ev) for pi, ev in live if len(pi) == best and best >= 3]
        return _finish(p, q, [pi for pi, _ in top], [ev for _, ev in top])

    @staticmethod
    def _merge(pi, sigma, Dp, Dq, model, scale):
        new = {}
        used = set(pi.values())
        for i, j in sigma.items():
            if i in pi:
                if pi[i] != j:
                    return None
            elif j in used:
                return None
            else:
                new[i] = j
        if not new:
            return pi
        old = list(pi.items())
        added = list(new.items())
        for i, j in added:
            for k, l in old:
                if not model.distances_compatible(Dp[i, k], Dq[j, l], scale):
                    return None
        merged = dict(pi)
        merged.update(new)
        return merged

    @staticmethod
    def _dedupe(items):
        seen = {}
        for pi, ev in items:
            key = tuple(sorted(pi.items()))
            if key not in seen:
                seen[key] = (pi, ev)
        # drop maps strictly contained in another live map
        keys = sorted(seen, key=len, reverse=True)
        kept = []
        kept_sets = []
        for key in keys:
            s = set(key)
            if any(s < other for other in kept_sets):
                continue
            kept.append(seen[key])
            kept_sets.append(s)
        return kept


METHODS = {"tenstep": TenStep, "graph": GraphBacktrack}


def correspondence_search(P, Q, model: ToleranceModel = ToleranceModel(), method: str = "tenstep",
                          budget: int = 14, exclusion_fallback: bool = True) -> list:
    """Maximal relabelings of P onto Q, largest first.

    When nothing of size >= n-1 turns up, every single-point exclusion pair
    (i from P, j from Q) is tried and the (n-1)-point matches are reported
    with the excluded points as bad points.
    """
    p, q = as_points(P), as_points(Q)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    n = len(p)
    if n < 3 or len(q) != n:
        raise ValueError("need two sets of the same size n >= 3")
    searcher = METHODS[method](budget=budget)
    found = searcher.search(p, q, model)
    if found and found[0].matched_count >= n - 1 or not exclusion_fallback or n < 4:
        return found
    rescued = []
    for i in range(n):
        for j in range(n):
            keep_p = [v for v in range(n) if v != i]
            keep_q = [v for v in range(n) if v != j]
            sub = searcher.search(p[keep_p], q[keep_q], model)
            for c in sub:
                if c.matched_count < n - 1:
                    continue
                perm = tuple((keep_p[a], keep_q[b]) for a, b in c.permutation)
                rescued.append(Correspondence(perm, c.evidence, c.residual, ((i,), (j,)), c.motion))
    if not rescued:
        return found
    uniq = {}
    for c in rescued:
        uniq.setdefault(c.permutation, c)
    return sorted(uniq.values(), key=lambda c: (-c.matched_count, c.permutation))


def congruent(P, Q, model: ToleranceModel = ToleranceModel(), budget: int = 14) -> bool:
    """True when some full relabeling aligns the sets (exhaustive search)."""
    n = len(as_points(P))
    return any(c.matched_count == n for c in GraphBacktrack(budget).search(P, Q, model))
