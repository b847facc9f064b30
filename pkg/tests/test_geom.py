import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprloc.geom import (Pose3, Rot3, boxminus, boxminus_jacobians, boxplus, compose, inverse,
                         se3_left_jacobian, se3_left_jacobian_inv, so3_exp, so3_left_jacobian,
                         so3_left_jacobian_inv, so3_log)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def rotvecs(draw, max_angle=np.pi - 0.1):
    v = draw(vec3)
    n = np.linalg.norm(v)
    if n < 1e-12:
        return np.zeros(3)
    return v / n * min(n, max_angle)


@st.composite
def poses(draw):
    return Pose3.exp(np.concatenate([draw(rotvecs()), draw(vec3)]))


def test_compose_hand_computed_chain():
    # translate 1 m along x, then rotate 90 deg about z, then act on (1, 0, 0)
    p = compose(Pose3.from_xyz_yaw(1.0, 0.0), Pose3(Rot3.rz(np.pi / 2)))
    np.testing.assert_allclose(p.act([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)


def test_compose_identity_and_inverse():
    p = Pose3.exp([0.1, -0.2, 0.3, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(compose(Pose3(), p).matrix(), p.matrix(), atol=1e-12)
    np.testing.assert_allclose(compose(p, inverse(p)).matrix(), np.eye(4), atol=1e-12)


def test_boxminus_examples():
    p = Pose3.exp([0.3, 0.2, -0.1, 1.0, 0.0, 2.0])
    np.testing.assert_allclose(boxminus(p, p), np.zeros(6), atol=1e-12)
    np.testing.assert_allclose(boxminus(Pose3.from_xyz_yaw(2, 0), Pose3.from_xyz_yaw(1, 0)),
                               [0, 0, 0, 1, 0, 0], atol=1e-12)


def test_exp_examples():
    np.testing.assert_allclose(Pose3.exp(np.zeros(6)).matrix(), np.eye(4), atol=0)
    R = Pose3.exp([0, 0, np.pi / 2, 0, 0, 0]).rot.matrix()
    np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)
    v = np.array([0.3, 0.0, 0.4, 1.0, -2.0, 0.5])   # |omega| = 0.5 rad
    np.testing.assert_allclose(Pose3.exp(v).log(), v, atol=1e-12)


def test_log_at_pi_positive_scalar_branch():
    r = Rot3(np.array([0.0, 0.0, 0.0, 1.0]))          # pi about z
    np.testing.assert_allclose(r.log(), [0, 0, np.pi], atol=1e-12)
    r = Rot3(np.array([-1e-17, 0.0, 0.0, -1.0]))      # same rotation, sign flipped
    np.testing.assert_allclose(np.abs(r.log()), [0, 0, np.pi], atol=1e-12)


def test_small_angle_branches_are_continuous():
    for theta in (1e-9, 1e-7, 1e-6, 2e-6, 1e-3):
        phi = np.array([theta, 0, 0])
        np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, rtol=1e-9, atol=1e-18)
        np.testing.assert_allclose(so3_left_jacobian(phi) @ so3_left_jacobian_inv(phi), np.eye(3), atol=1e-12)


def test_quaternion_stays_normalized_over_long_chains():
    rng = np.random.default_rng(0)
    r = Rot3()
    for _ in range(10000):
        r = r.compose(Rot3.exp(rng.normal(size=3) * 0.1))
    assert abs(np.linalg.norm(r.q) - 1.0) < 1e-9


def test_rot3_from_matrix_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(100):
        r = Rot3.exp(rng.normal(size=3))
        np.testing.assert_allclose(Rot3.from_matrix(r.matrix()).matrix(), r.matrix(), atol=1e-12)


def _num_jac(f, x, step=1e-6):
    cols = []
    for i in range(6):
        e = np.zeros(6)
        e[i] = step
        cols.append((f(boxplus(x, e)) - f(boxplus(x, -e))) / (2 * step))
    return np.array(cols).T


def test_boxminus_jacobians_match_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = Pose3.exp(np.concatenate([rng.normal(size=3) * 0.7, rng.normal(size=3)]))
        b = Pose3.exp(np.concatenate([rng.normal(size=3) * 0.7, rng.normal(size=3)]))
        _, Ja, Jb = boxminus_jacobians(a, b)
        Na = _num_jac(lambda x: boxminus(x, b), a)
        Nb = _num_jac(lambda x: boxminus(a, x), b)
        assert np.abs(Ja - Na).max() / max(np.abs(Na).max(), 1.0) < 1e-5
        assert np.abs(Jb - Nb).max() / max(np.abs(Nb).max(), 1.0) < 1e-5


@settings(max_examples=200, deadline=None)
@given(poses(), poses(), poses())
def test_group_axioms(a, b, c):
    np.testing.assert_allclose(a.compose(b).compose(c).matrix(), a.compose(b.compose(c)).matrix(), atol=1e-9)
    np.testing.assert_allclose(a.compose(a.inverse()).matrix(), np.eye(4), atol=1e-9)
    assert abs(np.linalg.norm(a.compose(b).rot.q) - 1.0) < 1e-9


@settings(max_examples=200, deadline=None)
@given(rotvecs(), vec3)
def test_exp_log_roundtrip(phi, rho):
    xi = np.concatenate([phi, rho])
    np.testing.assert_allclose(Pose3.exp(xi).log(), xi, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(poses(), poses())
def test_boxplus_boxminus_inverse(a, b):
    np.testing.assert_allclose(boxplus(b, boxminus(a, b)).matrix(), a.matrix(), atol=1e-9)
    np.testing.assert_allclose(boxminus(a, a), np.zeros(6), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(rotvecs(max_angle=2.5), vec3)
def test_se3_jacobian_inverse_pair(phi, rho):
    xi = np.concatenate([phi, rho])
    np.testing.assert_allclose(se3_left_jacobian(xi) @ se3_left_jacobian_inv(xi), np.eye(6), atol=1e-8)


def test_pose_adjoint_identity():
    rng = np.random.default_rng(3)
    p = Pose3.exp(rng.normal(size=6))
    xi = rng.normal(size=6) * 0.1
    lhs = p.compose(Pose3.exp(xi)).compose(p.inverse())
    np.testing.assert_allclose(lhs.matrix(), Pose3.exp(p.adjoint() @ xi).matrix(), atol=1e-12)


def test_rot3_yaw():
    assert Rot3.rz(0.7).yaw() == pytest.approx(0.7)
