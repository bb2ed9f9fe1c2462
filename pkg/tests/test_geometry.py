"""Tests for the SE(3) geometry core.

Expected values come from three independent sources: a truncated matrix
power series for the exponential map, hand-computed closed forms for
quarter-turn rotations, and a nested grid search over elementary axis
rotations for Euler angle extraction.
"""

import math

import numpy as np
import pytest

from crosscal.exceptions import AngleNearPi, GimbalLock, ParseError, ShapeMismatch
from crosscal.geometry import (
    PerturbRange,
    RigidTransform,
    Se3Tangent,
    compose,
    euler_zyx,
    exp_se3,
    format_transform,
    hat,
    invert,
    load_transform,
    log_se3,
    parse_transform,
    rotation_from_euler_zyx,
    sample_perturbation,
    save_transform,
)

# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def series_exp(M, terms=20):
    """Truncated power series sum_{k<terms} M^k / k!.

    For ||M|| <= 2 the truncation error after 20 terms is below 1e-11,
    comfortably inside the comparison tolerances used here.
    """
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def grid_invert_zyx(R, levels=10, n=15):
    """Brute-force Euler extraction: nested grid search minimizing the
    elementwise distance between Rz(yaw) Ry(pitch) Rx(roll) and ``R``.

    Grid spacing shrinks by (n-1)/2 per level; ten levels resolve the
    angles to well under 1e-7 radians.
    """
    center = np.array([0.0, 0.0, 0.0])
    half = np.array([math.pi, math.pi / 2, math.pi])
    best = center
    for _ in range(levels):
        rolls = np.linspace(center[0] - half[0], center[0] + half[0], n)
        pitches = np.linspace(center[1] - half[1], center[1] + half[1], n)
        yaws = np.linspace(center[2] - half[2], center[2] + half[2], n)
        Rxs = np.stack([rx(a) for a in rolls])
        Rys = np.stack([ry(b) for b in pitches])
        Rzs = np.stack([rz(c) for c in yaws])
        zy = np.einsum("cij,bjk->cbik", Rzs, Rys)
        cand = np.einsum("cbij,ajk->cbaik", zy, Rxs)
        err = np.abs(cand - R).reshape(n, n, n, 9).max(axis=-1)
        ci, bi, ai = np.unravel_index(np.argmin(err), err.shape)
        best = np.array([rolls[ai], pitches[bi], yaws[ci]])
        spacing = 2.0 * half / (n - 1)
        center = best
        half = spacing  # true optimum is within one spacing of the best node
    return best


def random_twists(rng, n, max_angle, max_tsl):
    out = []
    for _ in range(n):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        phi = direction * rng.uniform(0.0, max_angle)
        rho = rng.uniform(-max_tsl, max_tsl, size=3)
        out.append(Se3Tangent(phi, rho))
    return out


# ---------------------------------------------------------------------------
# Exponential map
# ---------------------------------------------------------------------------


class TestExp:
    def test_rotation_matches_power_series(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for xi in random_twists(rng, 200, max_angle=2.0, max_tsl=0.0):
            R = exp_se3(xi).rotation
            R_ref = series_exp(hat(xi.xi_rot))
            worst = max(worst, np.abs(R - R_ref).max())
        assert worst < 1e-10

    def test_full_transform_matches_power_series(self):
        # the 4x4 twist matrix [[hat(phi), rho], [0, 0]] exponentiates to
        # the homogeneous transform; keep its norm small enough that the
        # 20-term truncation tail stays below 1e-12
        rng = np.random.default_rng(12)
        worst = 0.0
        for xi in random_twists(rng, 200, max_angle=1.2, max_tsl=0.4):
            M = np.zeros((4, 4))
            M[:3, :3] = hat(xi.xi_rot)
            M[:3, 3] = xi.xi_tsl
            worst = max(worst, np.abs(exp_se3(xi).as_matrix() - series_exp(M)).max())
        assert worst < 1e-10

    def test_quarter_turn_about_z(self):
        T = exp_se3(Se3Tangent([0.0, 0.0, math.pi / 2], [0.0, 0.0, 0.0]))
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(T.rotation, expected, atol=1e-15)
        np.testing.assert_allclose(T.translation, 0.0, atol=1e-15)

    def test_sixty_degrees_about_x(self):
        T = exp_se3(Se3Tangent([math.pi / 3, 0.0, 0.0], [0.0, 0.0, 0.0]))
        h = math.sqrt(3.0) / 2.0
        expected = np.array([[1.0, 0.0, 0.0], [0.0, 0.5, -h], [0.0, h, 0.5]])
        np.testing.assert_allclose(T.rotation, expected, atol=1e-15)

    def test_zero_twist_is_identity(self):
        T = exp_se3(Se3Tangent.zero())
        np.testing.assert_array_equal(T.rotation, np.eye(3))
        np.testing.assert_array_equal(T.translation, np.zeros(3))

    def test_pure_translation(self):
        T = exp_se3(Se3Tangent([0.0, 0.0, 0.0], [1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(T.rotation, np.eye(3))
        np.testing.assert_allclose(T.translation, [1.0, -2.0, 3.0], rtol=0, atol=0)

    def test_small_angle_branch_agrees_with_series(self):
        for scale in (1e-9, 1e-10, 1e-12):
            xi = Se3Tangent(np.array([1.0, -2.0, 0.5]) * scale, [0.1, 0.2, -0.3])
            M = np.zeros((4, 4))
            M[:3, :3] = hat(xi.xi_rot)
            M[:3, 3] = xi.xi_tsl
            np.testing.assert_allclose(exp_se3(xi).as_matrix(), series_exp(M), atol=1e-14)


class TestLog:
    def test_roundtrip_thousand_twists(self):
        rng = np.random.default_rng(13)
        worst = 0.0
        for xi in random_twists(rng, 1000, max_angle=3.0, max_tsl=2.0):
            back = log_se3(exp_se3(xi))
            worst = max(worst, np.abs(back.as_vector() - xi.as_vector()).max())
        assert worst < 1e-8

    def test_roundtrip_tiny_angles(self):
        for scale in (1e-7, 1e-9, 1e-11, 0.0):
            xi = Se3Tangent(np.array([0.3, -0.4, 0.5]) * scale, [0.7, -0.1, 0.2])
            back = log_se3(exp_se3(xi))
            np.testing.assert_allclose(back.as_vector(), xi.as_vector(), atol=1e-12)

    def test_transform_roundtrip(self):
        rng = np.random.default_rng(14)
        for xi in random_twists(rng, 100, max_angle=3.0, max_tsl=2.0):
            T = exp_se3(xi)
            T2 = exp_se3(log_se3(T))
            np.testing.assert_allclose(T2.as_matrix(), T.as_matrix(), atol=1e-10)

    def test_rejects_angle_near_pi(self):
        T = exp_se3(Se3Tangent([0.0, 0.0, math.pi - 1e-7], [0.0, 0.0, 0.0]))
        with pytest.raises(AngleNearPi):
            log_se3(T)

    def test_accepts_angle_close_but_not_too_close_to_pi(self):
        xi = Se3Tangent([0.0, 0.0, math.pi - 1e-3], [1.0, 0.0, 0.0])
        back = log_se3(exp_se3(xi))
        np.testing.assert_allclose(back.as_vector(), xi.as_vector(), atol=1e-8)


# ---------------------------------------------------------------------------
# Group operations
# ---------------------------------------------------------------------------


class TestGroupOps:
    def _random_transforms(self, seed, n):
        rng = np.random.default_rng(seed)
        return [exp_se3(xi) for xi in random_twists(rng, n, max_angle=2.5, max_tsl=1.5)]

    def test_compose_with_inverse_is_identity(self):
        for T in self._random_transforms(21, 50):
            I = compose(T, invert(T))
            np.testing.assert_allclose(I.as_matrix(), np.eye(4), atol=1e-10)
            I2 = compose(invert(T), T)
            np.testing.assert_allclose(I2.as_matrix(), np.eye(4), atol=1e-10)

    def test_compose_matches_matrix_product(self):
        Ts = self._random_transforms(22, 20)
        for A, B in zip(Ts[::2], Ts[1::2]):
            np.testing.assert_allclose(
                compose(A, B).as_matrix(), A.as_matrix() @ B.as_matrix(), atol=1e-12
            )

    def test_compose_is_associative(self):
        A, B, C = self._random_transforms(23, 3)
        left = compose(compose(A, B), C)
        right = compose(A, compose(B, C))
        np.testing.assert_allclose(left.as_matrix(), right.as_matrix(), atol=1e-12)

    def test_double_inverse(self):
        for T in self._random_transforms(24, 10):
            np.testing.assert_allclose(
                invert(invert(T)).as_matrix(), T.as_matrix(), atol=1e-12
            )

    def test_closure_passes_validation(self):
        # compose() constructs a RigidTransform, which validates
        # orthonormality on entry; a long chain must stay valid
        T = RigidTransform.identity()
        for step in self._random_transforms(25, 200):
            T = compose(T, step)
        assert isinstance(T, RigidTransform)

    def test_apply_matches_homogeneous_product(self):
        (T,) = self._random_transforms(26, 1)
        rng = np.random.default_rng(27)
        pts = rng.normal(size=(40, 3))
        hom = np.c_[pts, np.ones(40)] @ T.as_matrix().T
        np.testing.assert_allclose(T.apply(pts), hom[:, :3], atol=1e-12)


class TestRigidTransformValidation:
    def test_rejects_non_orthonormal(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-6
        with pytest.raises(ValueError):
            RigidTransform(bad, np.zeros(3))

    def test_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(flip, np.zeros(3))

    def test_rejects_bad_shapes(self):
        with pytest.raises(ShapeMismatch):
            RigidTransform(np.eye(4), np.zeros(3))
        with pytest.raises(ShapeMismatch):
            RigidTransform(np.eye(3), np.zeros(4))

    def test_arrays_are_immutable(self):
        T = RigidTransform.identity()
        with pytest.raises(ValueError):
            T.rotation[0, 0] = 2.0

    def test_matrix_roundtrip(self):
        T = exp_se3(Se3Tangent([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]))
        T2 = RigidTransform.from_matrix(T.as_matrix())
        np.testing.assert_array_equal(T2.rotation, T.rotation)
        np.testing.assert_array_equal(T2.translation, T.translation)

    def test_from_matrix_rejects_bad_last_row(self):
        m = np.eye(4)
        m[3, 0] = 0.5
        with pytest.raises(ValueError):
            RigidTransform.from_matrix(m)

    def test_tangent_vector_roundtrip(self):
        xi = Se3Tangent.from_vector([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        np.testing.assert_array_equal(xi.xi_rot, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(xi.xi_tsl, [4.0, 5.0, 6.0])
        np.testing.assert_array_equal(
            xi.as_vector(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        )

    def test_tangent_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Se3Tangent([np.nan, 0.0, 0.0], [0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Euler angles
# ---------------------------------------------------------------------------


class TestEuler:
    def test_builder_matches_elementary_product(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            a, b, c = rng.uniform(-math.pi, math.pi, size=3)
            R = rotation_from_euler_zyx(a, b, c)
            np.testing.assert_allclose(R, rz(c) @ ry(b) @ rx(a), atol=1e-14)

    def test_extraction_rebuilds_rotation(self):
        rng = np.random.default_rng(32)
        for _ in range(300):
            a = rng.uniform(-math.pi + 0.05, math.pi - 0.05)
            b = rng.uniform(-math.pi / 2 + 0.05, math.pi / 2 - 0.05)
            c = rng.uniform(-math.pi + 0.05, math.pi - 0.05)
            T = RigidTransform(rotation_from_euler_zyx(a, b, c), np.zeros(3))
            ra, rb, rc = euler_zyx(T)
            np.testing.assert_allclose([ra, rb, rc], [a, b, c], atol=1e-10)

    def test_extraction_matches_grid_search(self):
        rng = np.random.default_rng(33)
        cases = [
            (0.4, -0.7, 2.1),
            (-2.0, 1.2, -0.3),
            (0.0, 0.0, 0.0),
        ]
        for _ in range(4):
            cases.append(
                (
                    rng.uniform(-2.8, 2.8),
                    rng.uniform(-1.3, 1.3),
                    rng.uniform(-2.8, 2.8),
                )
            )
        for a, b, c in cases:
            T = RigidTransform(rotation_from_euler_zyx(a, b, c), np.zeros(3))
            got = np.array(euler_zyx(T))
            ref = grid_invert_zyx(T.rotation)
            np.testing.assert_allclose(got, ref, atol=1e-6)

    def test_gimbal_lock_raises(self):
        for pitch in (math.pi / 2 - 1e-9, -(math.pi / 2 - 1e-9)):
            T = RigidTransform(rotation_from_euler_zyx(0.3, pitch, -0.2), np.zeros(3))
            with pytest.raises(GimbalLock):
                euler_zyx(T)

    def test_near_gimbal_but_outside_guard(self):
        pitch = math.pi / 2 - 1e-3
        T = RigidTransform(rotation_from_euler_zyx(0.3, pitch, -0.2), np.zeros(3))
        ra, rb, rc = euler_zyx(T)
        np.testing.assert_allclose([ra, rb, rc], [0.3, pitch, -0.2], atol=1e-9)


# ---------------------------------------------------------------------------
# Perturbation sampling
# ---------------------------------------------------------------------------


class TestSamplePerturbation:
    def test_deterministic_under_fixed_seed(self):
        r = PerturbRange(15.0, 15.0)
        A = sample_perturbation(r, 123)
        B = sample_perturbation(r, 123)
        np.testing.assert_array_equal(A.rotation, B.rotation)
        np.testing.assert_array_equal(A.translation, B.translation)
        C = sample_perturbation(r, 124)
        assert np.abs(C.as_matrix() - A.as_matrix()).max() > 1e-3

    def test_generator_advances_between_calls(self):
        rng = np.random.default_rng(5)
        A = sample_perturbation(PerturbRange(10.0, 25.0), rng)
        B = sample_perturbation(PerturbRange(10.0, 25.0), rng)
        assert np.abs(A.as_matrix() - B.as_matrix()).max() > 1e-6

    def test_respects_budget(self):
        r = PerturbRange(15.0, 15.0)
        max_angle = 0.0
        max_norm = 0.0
        for i in range(500):
            T = sample_perturbation(r, 1000 + i)
            roll, pitch, yaw = euler_zyx(T)
            angles_deg = np.degrees(np.abs([roll, pitch, yaw]))
            assert angles_deg.max() <= 15.0 + 1e-9
            norm = float(np.linalg.norm(T.translation))
            assert norm <= 0.15 + 1e-12
            assert np.abs(T.translation).max() <= 0.15 + 1e-12
            max_angle = max(max_angle, angles_deg.max())
            max_norm = max(max_norm, norm)
        # coverage: the sampler should actually reach out toward the budget
        assert max_angle > 13.0
        assert max_norm > 0.14

    def test_zero_budget_gives_identity(self):
        T = sample_perturbation(PerturbRange(0.0, 0.0), 7)
        np.testing.assert_array_equal(T.rotation, np.eye(3))
        np.testing.assert_array_equal(T.translation, np.zeros(3))

    def test_negative_budget_rejected(self):
        with pytest.raises(ValueError):
            PerturbRange(-1.0, 5.0)


# ---------------------------------------------------------------------------
# Transform file format
# ---------------------------------------------------------------------------


class TestTransformIO:
    def test_roundtrip_is_exact(self, tmp_path):
        rng = np.random.default_rng(41)
        for i, xi in enumerate(random_twists(rng, 10, max_angle=2.5, max_tsl=3.0)):
            T = exp_se3(xi)
            path = tmp_path / f"t{i}.txt"
            save_transform(T, path)
            back = load_transform(path)
            np.testing.assert_array_equal(back.rotation, T.rotation)
            np.testing.assert_array_equal(back.translation, T.translation)

    def test_format_shape(self):
        text = format_transform(RigidTransform.identity())
        lines = text.strip().split("\n")
        assert len(lines) == 4
        assert lines[3].split() == ["0", "0", "0", "1"]

    def test_wrong_token_count_reports_line(self):
        text = "1 0 0 0\n0 1 0\n0 0 1 0\n0 0 0 1\n"
        with pytest.raises(ParseError) as exc:
            parse_transform(text)
        assert exc.value.line == 2

    def test_non_numeric_token_reports_line(self):
        text = "1 0 0 0\n0 1 0 0\n0 0 x 0\n0 0 0 1\n"
        with pytest.raises(ParseError) as exc:
            parse_transform(text)
        assert exc.value.line == 3
        assert "line 3" in str(exc.value)

    def test_too_few_rows(self):
        with pytest.raises(ParseError):
            parse_transform("1 0 0 0\n0 1 0 0\n")

    def test_too_many_rows(self):
        text = "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n0 0 0 1\n"
        with pytest.raises(ParseError) as exc:
            parse_transform(text)
        assert exc.value.line == 5

    def test_bad_last_row(self):
        text = "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n"
        with pytest.raises(ParseError) as exc:
            parse_transform(text)
        assert exc.value.line == 4

    def test_non_orthonormal_rotation_rejected(self):
        text = "1 0.5 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"
        with pytest.raises(ParseError):
            parse_transform(text)

    def test_blank_lines_tolerated(self):
        text = "\n1 0 0 0\n\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\n"
        T = parse_transform(text)
        np.testing.assert_array_equal(T.as_matrix(), np.eye(4))
