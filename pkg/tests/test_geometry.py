import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radcal.errors import DegenerateProjection
from radcal.geometry import (
    RadialPose,
    RigidPose,
    Rotation,
    matrix_from_quat,
    quat_from_matrix,
    radial_distance,
    radial_from_full,
    radial_residual,
    so3_exp,
    so3_log,
)

from conftest import random_pose

seeds = st.integers(min_value=0, max_value=2**32 - 1)


# --- Rotation ---------------------------------------------------------------


@given(seeds)
def test_rotation_is_unit_and_proper(seed):
    rng = np.random.default_rng(seed)
    a, b = Rotation.random(rng), Rotation.random(rng)
    for r in (a, b, a.compose(b), a.inverse()):
        assert abs(np.linalg.norm(r.quat) - 1) < 1e-9
        R = r.matrix()
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(R) - 1) < 1e-9


@given(seeds)
def test_quaternion_matrix_round_trip(seed):
    rng = np.random.default_rng(seed)
    r = Rotation.random(rng)
    q = quat_from_matrix(r.matrix())
    assert np.allclose(matrix_from_quat(q), r.matrix(), atol=1e-12)


@given(seeds)
def test_so3_exp_log_round_trip(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=3)
    w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)


def test_so3_log_near_pi():
    w = np.array([0.0, 0.0, np.pi - 1e-9])
    assert np.allclose(np.abs(so3_log(so3_exp(w))), np.abs(w), atol=1e-6)


def test_rotation_compose_matches_matrix_product(rng):
    a, b = Rotation.random(rng), Rotation.random(rng)
    assert np.allclose(a.compose(b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_perturbed_is_left_update(rng):
    r = Rotation.random(rng)
    w = rng.normal(size=3) * 0.1
    assert np.allclose(r.perturbed(w).matrix(), so3_exp(w) @ r.matrix(), atol=1e-12)


def test_rotation_rejects_zero_quaternion():
    with pytest.raises(ValueError):
        Rotation(np.zeros(4))


# --- RigidPose --------------------------------------------------------------


@given(seeds)
def test_pose_compose_inverse_is_identity(seed):
    rng = np.random.default_rng(seed)
    P = random_pose(rng, 5.0)
    I = P.compose(P.inverse())
    assert np.allclose(I.matrix(), np.eye(4), atol=1e-9)
    I = P.inverse().compose(P)
    assert np.allclose(I.matrix(), np.eye(4), atol=1e-9)


def test_compose_applies_argument_first(rng):
    a, b = random_pose(rng), random_pose(rng)
    X = rng.normal(size=(7, 3))
    assert np.allclose(a.compose(b).apply(X), a.apply(b.apply(X)), atol=1e-12)
    assert np.allclose(a.compose(b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_center_maps_to_origin(rng):
    P = random_pose(rng, 3.0)
    assert np.allclose(P.apply(P.center()), 0, atol=1e-12)


# --- RadialPose -------------------------------------------------------------


def test_radial_from_identity():
    rp = radial_from_full(RigidPose.identity())
    assert np.array_equal(rp.A, [[1, 0, 0], [0, 1, 0]])
    assert np.array_equal(rp.b, [0, 0])


def test_radial_from_full_drops_forward_translation():
    rp = radial_from_full(RigidPose(Rotation.identity(), [0.3, -1.5, 7.0]))
    assert np.array_equal(rp.b, [0.3, -1.5])


@given(seeds)
def test_radial_pose_rows_orthonormal(seed):
    rng = np.random.default_rng(seed)
    rp = RadialPose.from_matrix(rng.uniform(0.1, 10) * radial_from_full(random_pose(rng)).matrix())
    A = rp.A
    assert np.allclose(A @ A.T, np.eye(2), atol=1e-9)


def test_from_matrix_recovers_scaled_pose(rng):
    rp = radial_from_full(random_pose(rng))
    back = RadialPose.from_matrix(-3.5 * rp.matrix())
    assert np.allclose(back.matrix(), -rp.matrix(), atol=1e-12)
    assert np.allclose(back.flipped().matrix(), rp.matrix(), atol=1e-12)


def test_from_matrix_rejects_rank_deficient():
    with pytest.raises(DegenerateProjection):
        RadialPose.from_matrix(np.array([[1.0, 0, 0, 0], [2.0, 0, 0, 1]]))


def test_oriented_picks_majority_sign(rng):
    P = random_pose(rng)
    X = P.inverse().apply(np.column_stack([rng.normal(size=(20, 2)), rng.uniform(2, 5, 20)]))
    rp = radial_from_full(P)
    v = rp.apply(X) * 10
    assert rp.flipped().oriented(X, v).matrix() == pytest.approx(rp.matrix())
    assert rp.oriented(X, v) is rp


def test_radial_compose_matches_full(rng):
    a, b = random_pose(rng), random_pose(rng)
    lhs = radial_from_full(a).compose(b)
    assert np.allclose(lhs.matrix(), radial_from_full(a.compose(b)).matrix(), atol=1e-12)


# --- radial residual ----------------------------------------------------------


def test_radial_residual_drops_perpendicular_component():
    rp = RadialPose.identity()
    r = radial_residual(rp, [0, 0], [1.0, 0.0, 4.2], [2.0, 3.0])
    assert np.allclose(r, [0.0, -3.0], atol=1e-15)


def test_radial_residual_zero_on_line():
    rp = RadialPose.identity()
    assert np.allclose(radial_residual(rp, [0, 0], [1.0, 2.0, 1.0], [3.0, 6.0]), 0)


def test_radial_residual_matches_brute_force_line_distance(rng):
    # Oracle: scan t over a fine grid, then refine the best cell.
    for _ in range(20):
        rp = radial_from_full(random_pose(rng))
        X = rng.normal(size=3) * 3
        pp = rng.normal(size=2) * 10
        x = rng.normal(size=2) * 50 + pp
        u = rp.apply(X)
        v = x - pp
        ts = np.linspace(-200, 200, 400001)
        d = np.linalg.norm(ts[:, None] * u - v, axis=1)
        k = int(np.argmin(d))
        fine = np.linspace(ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)], 20001)
        best = np.min(np.linalg.norm(fine[:, None] * u - v, axis=1))
        assert np.linalg.norm(radial_residual(rp, pp, X, x)) == pytest.approx(best, rel=1e-7, abs=1e-9)


def test_radial_residual_not_larger_than_full_residual(rng):
    for _ in range(50):
        P = random_pose(rng)
        X = P.inverse().apply(np.array([*rng.normal(size=2), rng.uniform(1, 4)]))
        Xc = P.apply(X)
        f = rng.uniform(100, 800)
        pp = rng.uniform(200, 400, 2)
        x_obs = f * Xc[:2] / Xc[2] + pp + rng.normal(size=2) * 2
        full = np.linalg.norm(f * Xc[:2] / Xc[2] + pp - x_obs)
        radial = np.linalg.norm(radial_residual(radial_from_full(P), pp, X, x_obs))
        assert radial <= full + 1e-12


def test_radial_residual_vectorized(rng):
    rp = radial_from_full(random_pose(rng))
    X = rng.normal(size=(10, 3))
    x = rng.normal(size=(10, 2))
    batch = radial_residual(rp, [1, 2], X, x)
    for k in range(10):
        assert np.allclose(batch[k], radial_residual(rp, [1, 2], X[k], x[k]))


def test_radial_residual_at_center_raises():
    rp = RadialPose.identity()
    with pytest.raises(DegenerateProjection):
        radial_residual(rp, [0, 0], [0.0, 0.0, 3.0], [1.0, 1.0])


def test_radial_distance_is_signed_line_distance():
    assert radial_distance(np.array([1.0, 0.0]), np.array([5.0, 2.0])) == pytest.approx(2.0)
    assert radial_distance(np.array([1.0, 0.0]), np.array([5.0, -2.0])) == pytest.approx(-2.0)


# --- invariances of the radial model ------------------------------------------


def _observed_pixel(P, X, f, pp, radial_scale=lambda r: 1.0):
    Xc = P.apply(X)
    xn = Xc[:2] / Xc[2]
    return f * xn * radial_scale(np.linalg.norm(xn)) + pp


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_radial_residual_invariant_to_focal(seed):
    rng = np.random.default_rng(seed)
    P = random_pose(rng)
    X = P.inverse().apply(np.array([*rng.normal(size=2), rng.uniform(1, 5)]))
    pp = rng.uniform(100, 500, 2)
    for f in rng.uniform(50, 2000, 3):
        r = radial_residual(radial_from_full(P), pp, X, _observed_pixel(P, X, f, pp))
        assert np.linalg.norm(r) < 1e-9


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_radial_residual_invariant_to_radial_distortion(seed):
    rng = np.random.default_rng(seed)
    P = random_pose(rng)
    X = P.inverse().apply(np.array([*rng.normal(size=2), rng.uniform(1, 5)]))
    pp = rng.uniform(100, 500, 2)
    k1, k2 = rng.uniform(-0.3, 0.3, 2)
    x = _observed_pixel(P, X, 500.0, pp, lambda r: 1 + k1 * r**2 + k2 * r**4)
    assert np.linalg.norm(radial_residual(radial_from_full(P), pp, X, x)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_radial_residual_invariant_to_forward_translation(seed):
    rng = np.random.default_rng(seed)
    P = random_pose(rng)
    X = rng.normal(size=3) * 3
    x = rng.normal(size=2) * 100
    pp = rng.normal(size=2)
    Q = RigidPose(P.rotation, P.translation + [0, 0, rng.normal() * 10])
    a = radial_residual(radial_from_full(P), pp, X, x)
    b = radial_residual(radial_from_full(Q), pp, X, x)
    assert np.allclose(a, b, atol=1e-9)
