import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from nearisometry.errors import ConditionAViolated, ConditionBViolated, RatioInfeasible, TranslationInfeasible
from nearisometry.maps import (
    KAPPA,
    Ball,
    Box,
    Composite,
    CutoffBumps,
    ExponentialAngle,
    Identity,
    LinearAngle,
    LogAngle,
    Motion,
    Slide,
    SinusoidField,
    block_rotation,
    bmo_rotation_audit,
    canonical_form,
    distortion_audit,
    localize_motion,
    localize_rotation,
    map_from_dict,
    point_mover,
    slow_twist,
    transition,
    transition_derivative,
    twist_defect,
)
from nearisometry.procrustes import EuclideanMotion

from conftest import central_jacobian, random_rotation


def rotation_with_angle(dim, theta, rng):
    A = rng.normal(size=(dim, dim))
    A = A - A.T
    top = np.max(np.abs(np.linalg.eigvals(A).imag))
    return expm(A * theta / top)


def test_transition_endpoints_and_monotone():
    s = np.linspace(-1, 2, 3001)
    psi = transition(s)
    assert np.all(psi[s <= 0] == 0) and np.all(psi[s >= 1] == 1)
    assert np.all(np.diff(psi) >= 0)
    assert transition(np.array([0.5]))[0] == pytest.approx(0.5)


def test_transition_derivative_matches_differences_and_bound():
    s = np.linspace(0.01, 0.99, 981)
    h = 1e-6
    fd = (transition(s + h) - transition(s - h)) / (2 * h)
    assert np.allclose(transition_derivative(s), fd, atol=1e-6)
    dense = transition_derivative(np.linspace(0, 1, 200001))
    assert np.max(dense) <= KAPPA and np.max(dense) == pytest.approx(KAPPA, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 3.0))
def test_twist_defect_matches_shear_eigenvalues(a):
    # a twist looks like a rotation times the shear I + a e_theta e_r^T
    J = np.array([[1.0, 0.0], [a, 1.0]])
    oracle = np.max(np.abs(np.linalg.eigvalsh(J.T @ J - np.eye(2))))
    assert twist_defect(a) == pytest.approx(oracle, rel=1e-12, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3, 4, 5]))
def test_canonical_form_reconstructs(seed, dim):
    rng = np.random.default_rng(seed)
    R = random_rotation(dim, rng)
    form = canonical_form(R)
    assert np.allclose(form.frame.T @ block_rotation(form.angles, dim) @ form.frame, R, atol=1e-12)
    assert np.linalg.det(form.frame) > 0


def test_canonical_form_half_turn():
    R = np.diag([-1.0, -1.0, 1.0])
    form = canonical_form(R)
    assert np.allclose(np.abs(form.angles), [math.pi])


def test_slow_twist_exponential_within_claim(rng):
    f = slow_twist(np.eye(2), [ExponentialAngle(0.1, 1.0)])
    assert f.rate == pytest.approx(0.1 / math.e, rel=1e-12)
    audit = distortion_audit(f, Ball(np.zeros(2), 20.0), 2000, seed=1)
    assert audit.sup_jacobian_defect <= f.claimed_epsilon * (1 + 1e-9)
    assert audit.sup_jacobian_defect >= 0.5 * f.claimed_epsilon


def test_linear_angle_rejected():
    with pytest.raises(ConditionAViolated):
        slow_twist(np.eye(2), [LinearAngle(1.0)])


def test_log_angle_slow_but_unbounded():
    f = slow_twist(np.eye(2), [LogAngle(0.2, 1.0)])
    assert f.rate == pytest.approx(0.2, rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3, 4]))
def test_twist_jacobian_matches_differences(seed, dim):
    rng = np.random.default_rng(seed)
    frame = random_rotation(dim, rng)
    fns = [ExponentialAngle(rng.uniform(-1, 1), rng.uniform(0.2, 2)) for _ in range(dim // 2)]
    f = slow_twist(frame, fns)
    X = rng.normal(size=(20, dim)) * 2
    assert np.allclose(f.jacobian(X), central_jacobian(f, X, 1e-6), atol=1e-6)


def test_slide_bounds():
    with pytest.raises(ConditionBViolated):
        Slide(SinusoidField([1.0, 1.0], np.eye(2), [0, 0]))
    with pytest.raises(ConditionBViolated):
        Slide(SinusoidField([0.1, 0.1], np.eye(2), [0, 0]), bound=1.0)
    s = Slide(SinusoidField([0.1, 0.0], np.eye(2), [0, 0]))
    audit = distortion_audit(s, Box([-10, -10], [10, 10]), 2000)
    assert audit.sup_jacobian_defect <= s.claimed_epsilon * (1 + 1e-9)


def test_cutoff_bumps_overlap_rejected():
    with pytest.raises(ValueError):
        CutoffBumps([[0, 0], [1, 0]], [[0.1, 0], [0.1, 0]], [0.1, 0.1], [0.6, 0.6])


@pytest.mark.parametrize("eps", [1e-1, 1e-2])
@pytest.mark.parametrize("dim", [2, 3, 5])
def test_localize_rotation_regions(eps, dim, rng):
    R = rotation_with_angle(dim, 0.5, rng)
    c2 = math.exp(0.5 / eps) * 1.0000001
    f = localize_rotation(R, 1.0, c2, eps)
    inner = Ball(np.zeros(dim), 1.0).sample(200, rng)
    outer = inner / np.linalg.norm(inner, axis=1, keepdims=True) * c2 * rng.uniform(1, 3, (200, 1))
    assert np.allclose(f(inner), inner @ R.T, atol=1e-12)
    assert np.array_equal(f(outer), outer)
    audit = distortion_audit(f, Ball(np.zeros(dim), 1.5 * c2), 2000, radial="log", r_min=0.5)
    assert audit.sup_jacobian_defect <= f.claimed_epsilon * (1 + 1e-9)
    assert f.claimed_epsilon == pytest.approx(twist_defect(KAPPA * eps), rel=1e-6)


def test_localize_rotation_ratio_too_small(rng):
    R = rotation_with_angle(3, 0.5, rng)
    with pytest.raises(RatioInfeasible) as info:
        localize_rotation(R, 1.0, 10.0, 0.01)
    assert info.value.required_ratio == pytest.approx(math.exp(50.0))


def test_localize_identity_is_identity():
    assert isinstance(localize_rotation(np.eye(3), 1.0, 2.0, 0.1), Identity)


@pytest.mark.parametrize("dim", [2, 3])
def test_localize_motion_regions(dim, rng):
    eps = 0.05
    A = EuclideanMotion(rotation_with_angle(dim, 0.3, rng), 0.1 * eps * rng.normal(size=dim))
    g = localize_motion(A, 1.0, None, eps)
    X = Ball(np.zeros(dim), 1.0).sample(100, rng)
    assert np.allclose(g(X), A(X), atol=1e-12)
    c4 = max(m.angle_fns[0].r2 for m in g.maps if hasattr(m, "angle_fns"))
    far = X / np.linalg.norm(X, axis=1, keepdims=True) * c4 * 1.01
    assert np.allclose(g(far), far, atol=1e-12)
    audit = distortion_audit(g, Ball(np.zeros(dim), 1.5 * c4), 2000, radial="log", r_min=0.5)
    assert audit.sup_jacobian_defect <= g.claimed_epsilon * (1 + 1e-9)


def test_localize_motion_translation_too_large():
    A = EuclideanMotion(np.eye(2), [5.0, 0.0])
    with pytest.raises(TranslationInfeasible):
        localize_motion(A, 1.0, 2.0, 0.1)


def test_localize_motion_rejects_reflection():
    with pytest.raises(ValueError):
        localize_motion(EuclideanMotion(np.diag([1.0, -1.0]), [0, 0]), 1.0, None, 0.1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3]))
def test_point_mover_moves_exactly(seed, dim):
    rng = np.random.default_rng(seed)
    eps = 0.05
    x = rng.normal(size=dim)
    x /= np.linalg.norm(x)
    xp = x + 0.1 * eps * rng.normal(size=dim)
    m = point_mover(x, xp, 1.5, 1e4, eps)
    assert np.allclose(m(x), xp, atol=1e-12)
    far = rng.normal(size=(10, dim))
    far *= 2e4 / np.linalg.norm(far, axis=1, keepdims=True)
    assert np.allclose(m(far), far)
    assert np.allclose(m.jacobian(x[None] * 1.2), central_jacobian(m, x[None] * 1.2, 1e-6), atol=1e-6)


def test_map_round_trip(rng):
    R = rotation_with_angle(3, 0.4, rng)
    f = Composite([localize_rotation(R, 1.0, math.exp(4.0) * 1.01, 0.1),
                   Motion(EuclideanMotion(np.eye(3), [1.0, 0, 0]))])
    g = map_from_dict(f.to_dict())
    X = rng.normal(size=(50, 3)) * 10
    assert np.array_equal(f(X), g(X))
    assert g.claimed_epsilon == pytest.approx(f.claimed_epsilon)


def test_composite_jacobian_chain_rule(rng):
    f = Composite([slow_twist(np.eye(2), [ExponentialAngle(0.3, 1.0)]),
                   Slide(SinusoidField([0.2, 0.1], np.eye(2), [0.3, 0.0]))])
    X = rng.normal(size=(30, 2))
    assert np.allclose(f.jacobian(X), central_jacobian(f, X, 1e-6), atol=1e-6)


def test_audit_of_rigid_map_is_zero(rng):
    A = Motion(EuclideanMotion(random_rotation(3, rng), [1.0, 2.0, 3.0]))
    audit = distortion_audit(A, Ball(np.zeros(3), 5.0), 500)
    assert audit.sup_jacobian_defect <= 1e-12 and audit.sup_pair_ratio_defect <= 1e-9


def test_bmo_audit_recovers_constant_rotation(rng):
    R = random_rotation(2, rng)
    audit = bmo_rotation_audit(Motion(EuclideanMotion(R, [0, 0])), Ball([0, 0], 1.0), 41)
    assert np.allclose(audit.rotation, R, atol=1e-12) and audit.mean_residual <= 1e-12


def test_bmo_audit_twist_tail_decay():
    f = slow_twist(np.eye(2), [LogAngle(0.1, 1.0)])
    audit = bmo_rotation_audit(f, Ball([0, 0], 1.0), 101)
    assert audit.mean_residual > 0
    assert list(audit.tail_fractions) == sorted(audit.tail_fractions, reverse=True)
