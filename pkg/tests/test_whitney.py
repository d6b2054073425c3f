import math

import numpy as np
import pytest

from nearisometry.maps import Box, Motion, SinusoidField, Slide, distortion_audit
from nearisometry.procrustes import EuclideanMotion
from nearisometry.whitney import (
    BallSet,
    BallUnion,
    BoxSet,
    SegmentSet,
    check_admissible,
    cube_property_check,
    gram_schmidt_motion,
    regularized_distance,
    set_from_dict,
    whitney_cubes,
    whitney_extend,
)

from conftest import random_motion

EPS = 1e-2


def small_slide(eps):
    p = 0.99 * (math.sqrt(1 + eps) - 1)
    w = np.array([[1.0, 0.7], [-0.4, 1.1]])
    amp = p / np.linalg.norm(w, axis=1) / math.sqrt(2)
    return Slide(SinusoidField(amp, w, [0.3, 1.2]))


@pytest.fixture(scope="module")
def disk():
    return BallSet([0.0, 0.0], 0.5)


@pytest.fixture(scope="module")
def cover(disk):
    return whitney_cubes(disk, [-3, -3], [3, 3], floor_side=1e-3)


@pytest.fixture(scope="module")
def report(disk):
    return whitney_extend(disk, small_slide(EPS), EPS, lower=[-3, -3], upper=[3, 3])


def test_set_distances():
    B = BallSet([0, 0], 1.0)
    assert np.allclose(B.distance([[2, 0], [0, 0.5]]), [1.0, 0.0])
    S = SegmentSet([0, 0], [1, 0])
    assert np.allclose(S.distance([[0.5, 2], [3, 0], [-1, 0]]), [2.0, 2.0, 1.0])
    U = BallUnion([[0, 0], [3, 0]], [1.0, 1.0])
    assert U.distance([[1.5, 0]])[0] == pytest.approx(0.5)
    assert U.diam == pytest.approx(5.0)
    X = BoxSet([0, 0], [1, 2])
    assert X.distance([[2, 3]])[0] == pytest.approx(math.sqrt(2))


def test_set_round_trip():
    for s in (BallSet([1, 2], 0.3), BallUnion([[0, 0], [3, 0]], [1, 0.5]), SegmentSet([0, 0], [1, 1])):
        back = set_from_dict(s.to_dict())
        X = np.random.default_rng(0).normal(size=(20, 2)) * 3
        assert np.array_equal(back.distance(X), s.distance(X))


def test_ball_is_admissible(disk):
    rng = np.random.default_rng(0)
    probes = rng.uniform(-1.5, 1.5, size=(400, 2))
    rep = check_admissible(disk, probes, c0=1.0, c1=2.0, c2=0.25)
    assert rep.passed and rep.n_checked > 0


def test_segment_is_not_admissible():
    rng = np.random.default_rng(0)
    S = SegmentSet([0, 0], [1, 0])
    rep = check_admissible(S, rng.uniform(-0.5, 1.5, size=(200, 2)), c0=1.0, c1=2.0, c2=0.25)
    assert not rep.passed and rep.failed_probe is not None


def test_cubes_avoid_set_and_scale_with_distance(disk, cover):
    regular = ~cover.floor
    d = disk.distance(cover.centers[regular])
    diag = cover.sides[regular] * math.sqrt(2)
    assert np.all(diag <= 0.5 * d * (1 + 1e-12))
    assert np.all(d > 0)
    stats = cube_property_check(disk, cover, n=2000)
    assert stats["ratioMin"] > 0
    assert stats["maxOverlap"] <= 4 ** 2


def test_dilated_cubes_cover_complement(disk, cover):
    rng = np.random.default_rng(1)
    X = rng.uniform(-2.5, 2.5, size=(4000, 2))
    X = X[disk.distance(X) > 0.01]
    part = cover.partition(X)
    assert part.covered.all()
    sums = np.bincount(part.point, weights=part.theta, minlength=len(X))
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_regularized_distance_comparable(disk, cover):
    rng = np.random.default_rng(2)
    X = rng.uniform(-2.5, 2.5, size=(2000, 2))
    X = X[disk.distance(X) > 0.01]
    ratio = regularized_distance(cover, X) / disk.distance(X)
    assert ratio.min() > 0.1 and ratio.max() < 10


def test_gram_schmidt_recovers_motion(rng):
    A = random_motion(3, rng)
    G = gram_schmidt_motion(Motion(A), np.ones(3), 0.5)
    assert np.allclose(G.linear, A.linear, atol=1e-12)
    assert np.allclose(G.translation, A.translation, atol=1e-12)


def test_rigid_phi_extends_rigidly(disk):
    A = EuclideanMotion(np.array([[0.0, -1.0], [1.0, 0.0]]), [0.3, -0.2])
    r = whitney_extend(disk, Motion(A), EPS, lower=[-3, -3], upper=[3, 3], n_probes=1000)
    assert r.ok
    X = np.random.default_rng(3).uniform(-3, 3, size=(500, 2))
    assert np.allclose(r.map(X), A(X), atol=1e-9)


def test_whitney_extend_passes_checks(report):
    assert report.ok, report.diagnostics
    c = report.checks
    assert c["phiMismatch"] <= 1e-12 and c["farMismatch"] <= 1e-12
    assert c["partitionError"] <= 1e-9
    assert c["maxOverlap"] <= 16
    assert c["jacobianDefect"] <= 10 * EPS


def test_whitney_extension_agrees_near_set(report, disk):
    rng = np.random.default_rng(4)
    X = disk.center + 0.5 * rng.uniform(-1, 1, size=(500, 2)) / math.sqrt(2)
    phi = small_slide(EPS)
    assert np.array_equal(report.map(X), phi(X))


def test_whitney_extension_audit(report):
    audit = distortion_audit(report.map, Box([-3, -3], [3, 3]), n_samples=2000)
    assert audit.sup_jacobian_defect <= 10 * EPS
    assert audit.sup_pair_ratio_defect <= 10 * EPS


def test_whitney_refuses_distorted_phi(disk):
    phi = Slide(SinusoidField([0.3, 0.3], np.eye(2), [0, 0]))
    r = whitney_extend(disk, phi, EPS, lower=[-3, -3], upper=[3, 3])
    assert not r.ok and r.diagnostics


def test_whitney_cubes_rejects_small_box(disk):
    with pytest.raises(ValueError):
        whitney_cubes(disk, [-0.6, -0.6], [0.6, 0.6])
