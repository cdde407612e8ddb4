import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvslam.errors import InvalidArgument
from mvslam.geometry import (
    AxisAngle,
    Pose,
    Quaternion,
    adjoint,
    chordal_loss,
    compose,
    inverse,
    is_rotation,
    orthonormalize,
    pose_cycle_loss,
    quat_to_rot,
    rot_to_quat,
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
    translation_l1,
)

from .conftest import random_pose, random_rotation

FLIP_Z = np.diag([-1.0, -1.0, 1.0])


def test_quat_identity():
    np.testing.assert_array_equal(quat_to_rot(Quaternion(1, 0, 0, 0)), np.eye(3))


def test_quat_90_about_z():
    s = math.sqrt(0.5)
    R = quat_to_rot(Quaternion(s, 0, 0, s))
    np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


@pytest.mark.parametrize("bad", [(np.nan, 0, 0, 0), (1, np.inf, 0, 0), (0, 0, 0, 0)])
def test_quat_rejects_bad_input(bad):
    with pytest.raises(InvalidArgument):
        quat_to_rot(Quaternion(*bad))


def test_quat_round_trip_1000(rng):
    for _ in range(1000):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quat_to_rot(Quaternion(*q))
        assert is_rotation(R, 1e-9)
        back = rot_to_quat(R).as_array()
        err = min(np.abs(back - q).max(), np.abs(back + q).max())
        assert err < 1e-9


def test_quat_double_cover(rng):
    q = Quaternion(*rng.normal(size=4))
    np.testing.assert_allclose(quat_to_rot(q), quat_to_rot(-q), atol=1e-15)


def test_quaternion_normalized_norm():
    q = Quaternion(3.0, -1.0, 2.0, 0.5).normalized()
    assert abs(q.norm() - 1.0) < 1e-9


# --- composition -----------------------------------------------------------


def test_compose_identity(rng):
    P = random_pose(rng)
    Q = compose(P, Pose.identity())
    np.testing.assert_array_equal(Q.matrix, P.matrix)


def test_compose_inverse(rng):
    for _ in range(100):
        P = random_pose(rng, 10.0)
        np.testing.assert_allclose(compose(P, inverse(P)).matrix, np.eye(4), atol=1e-9)
        np.testing.assert_allclose(compose(inverse(P), P).matrix, np.eye(4), atol=1e-9)


def test_compose_matches_4x4_product(rng):
    for _ in range(100):
        a, b = random_pose(rng, 5.0), random_pose(rng, 5.0)
        np.testing.assert_allclose(compose(a, b).matrix, a.matrix @ b.matrix, atol=1e-9)


def test_inverse_cases():
    I = Pose.identity().inverse()
    np.testing.assert_array_equal(I.matrix, np.eye(4))
    t = np.array([0.3, -2.0, 7.0])
    np.testing.assert_array_equal(Pose(np.eye(3), t).inverse().translation, -t)


def test_compose_associative(rng):
    for _ in range(100):
        a, b, c = (random_pose(rng, 3.0) for _ in range(3))
        np.testing.assert_allclose(((a @ b) @ c).matrix, (a @ (b @ c)).matrix, atol=1e-9)


def test_scaled_flag_propagation(rng):
    s, u = random_pose(rng), random_pose(rng, scaled=False)
    assert (s @ s).scaled
    assert not (s @ u).scaled
    assert not (u @ s).scaled
    assert not u.inverse().scaled


def test_pose_is_immutable(rng):
    P = random_pose(rng)
    with pytest.raises(ValueError):
        P.translation[0] = 1.0


def test_long_chain_stays_orthonormal(rng):
    step = Pose(so3_exp([0.01, 0.02, -0.015]), [0.001, 0, 0])
    P = Pose.identity()
    for _ in range(20000):
        P = P @ step
    assert is_rotation(P.rotation, 1e-9)


def test_orthonormalize_recovers_rotation(rng):
    R = random_rotation(rng)
    R2 = orthonormalize(R + 1e-4 * rng.normal(size=(3, 3)))
    assert is_rotation(R2)
    assert np.abs(R2 - R).max() < 1e-3


# --- SO(3) log --------------------------------------------------------------


def test_so3_log_identity():
    aa = so3_log(np.eye(3))
    assert aa.angle == 0.0
    np.testing.assert_array_equal(aa.axis, [1, 0, 0])


def test_so3_log_90_z():
    aa = so3_log([[0, -1, 0], [1, 0, 0], [0, 0, 1]])
    assert abs(aa.angle - math.pi / 2) < 1e-15
    np.testing.assert_allclose(aa.axis, [0, 0, 1], atol=1e-15)


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


@pytest.mark.parametrize(
    "lo,hi",
    [(1e-12, 1e-6), (1e-6, 1e-2), (1e-2, math.pi - 1e-2), (math.pi - 0.2, math.pi - 1e-3), (math.pi - 1e-3, math.pi)],
)
def test_so3_log_exp_round_trip(rng, lo, hi):
    for _ in range(300):
        axis, angle = _unit(rng), rng.uniform(lo, hi)
        aa = so3_log(so3_exp(axis * angle))
        assert abs(aa.angle - angle) < 1e-7
        np.testing.assert_allclose(aa.rotvec, axis * angle, atol=1e-7)


def test_so3_log_exactly_pi():
    axis = np.array([1.0, 2.0, 2.0]) / 3.0
    aa = so3_log(so3_exp(axis * math.pi))
    assert abs(aa.angle - math.pi) < 1e-12
    assert min(np.abs(aa.axis - axis).max(), np.abs(aa.axis + axis).max()) < 1e-9


def test_se3_exp_log_round_trip(rng):
    for _ in range(200):
        xi = np.concatenate([_unit(rng) * rng.uniform(0, 3.0), rng.normal(size=3)])
        np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)


def test_adjoint_identity(rng):
    T = random_pose(rng)
    xi = rng.normal(size=6) * 0.3
    lhs = se3_exp(adjoint(T) @ xi)
    rhs = T @ se3_exp(xi) @ T.inverse()
    np.testing.assert_allclose(lhs.matrix, rhs.matrix, atol=1e-9)


# --- losses -----------------------------------------------------------------


def test_chordal_cases():
    assert chordal_loss(np.eye(3), np.eye(3)) == 0.0
    assert abs(chordal_loss(np.eye(3), FLIP_Z) - 2 * math.sqrt(2)) < 1e-12


def test_chordal_vs_direct_sum(rng):
    for _ in range(100):
        A, B = random_rotation(rng), random_rotation(rng)
        s = 0.0
        for i in range(3):
            for j in range(3):
                s += (A[i, j] - B[i, j]) ** 2
        assert abs(chordal_loss(A, B) - math.sqrt(s)) < 1e-12


def test_chordal_symmetry_and_triangle(rng):
    for _ in range(200):
        A, B, C = (random_rotation(rng) for _ in range(3))
        assert chordal_loss(A, B) == pytest.approx(chordal_loss(B, A), abs=1e-15)
        assert chordal_loss(A, C) <= chordal_loss(A, B) + chordal_loss(B, C) + 1e-12


def test_chordal_angle_law(rng):
    for theta in np.linspace(0.0, math.pi, 100):
        A = random_rotation(rng)
        B = A @ so3_exp(_unit(rng) * theta)
        assert abs(chordal_loss(A, B) - 2 * math.sqrt(2) * math.sin(theta / 2)) < 1e-9


def test_translation_l1_cases(rng):
    t = rng.normal(size=3)
    assert translation_l1(t, t) == 0.0
    assert translation_l1([1, 2, 3], [0, 0, 0]) == 6.0
    for _ in range(100):
        a, b = rng.normal(size=3), rng.normal(size=3)
        expected = 0.0
        for i in range(3):
            expected += abs(a[i] - b[i])
        assert translation_l1(a, b) == expected


def test_pose_cycle_loss(rng):
    P = random_pose(rng)
    assert pose_cycle_loss(P, P, P, P) == 0.0
    t = rng.normal(size=3)
    fwd = Pose(np.eye(3), t)
    assert abs(pose_cycle_loss(fwd, fwd, Pose(np.eye(3), t), Pose(FLIP_Z, t)) - 2 * math.sqrt(2)) < 1e-12
    for _ in range(50):
        a, b, c, d = (random_pose(rng) for _ in range(4))
        expected = (
            chordal_loss(a.rotation, b.rotation)
            + translation_l1(a.translation, b.translation)
            + chordal_loss(c.rotation, d.rotation)
            + translation_l1(c.translation, d.translation)
        )
        assert pose_cycle_loss(a, b, c, d) == expected


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3))
def test_quat_round_trip_property(q):
    q = np.array(q) / np.linalg.norm(q)
    back = rot_to_quat(quat_to_rot(Quaternion(*q))).as_array()
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9


def test_axis_angle_rotvec():
    aa = AxisAngle([0, 0, 1], 0.5)
    np.testing.assert_array_equal(aa.rotvec, [0, 0, 0.5])
