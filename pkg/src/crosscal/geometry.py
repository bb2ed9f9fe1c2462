"""SE(3)/so(3) algebra: rigid transforms, exponential and log maps, Euler
extraction, and random perturbation sampling.

Conventions
-----------
* A :class:`RigidTransform` ``(R, t)`` maps a point ``p`` to ``R @ p + t``.
* Twists are split into an axis-angle rotation part (radians) and a
  translation part (meters); the exponential map applies the V-matrix to the
  translation part, so ``exp`` and ``log`` are exact group inverses.
* Euler angles use the Z.Y.X composition: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.

All functions are pure and all types are immutable values, so everything here
is safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import AngleNearPi, GimbalLock
from .seeding import as_rng
from .validation import check_matrix, check_vector

# Below this rotation angle, exp/log switch to their second-order Taylor
# branches to avoid catastrophic cancellation in sin/cos quotients.
SMALL_ANGLE = 1e-8

# Orthonormality / determinant tolerance for rotation matrices.
ROTATION_TOL = 1e-9

_GIMBAL_TOL = 1e-6
_PI_TOL = 1e-6


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An SE(3) element: 3x3 rotation matrix plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = check_matrix(self.rotation, 3, 3, "rotation")
        tsl = check_vector(self.translation, 3, "translation")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err >= ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal: max |R'R - I| = {err:.3e}")
        det = float(np.linalg.det(rot))
        if abs(det - 1.0) >= ROTATION_TOL:
            raise ValueError(f"rotation determinant is {det:.12f}, expected 1")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(tsl))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = check_matrix(matrix, 4, 4, "matrix")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise ValueError("homogeneous matrix must have last row 0 0 0 1")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply the transform to an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class Se3Tangent:
    """A twist: axis-angle rotation part (radians) and translation part
    (meters)."""

    xi_rot: np.ndarray
    xi_tsl: np.ndarray

    def __post_init__(self):
        rot = check_vector(self.xi_rot, 3, "xi_rot")
        tsl = check_vector(self.xi_tsl, 3, "xi_tsl")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tsl))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "xi_rot", _frozen(rot))
        object.__setattr__(self, "xi_tsl", _frozen(tsl))

    @classmethod
    def zero(cls) -> "Se3Tangent":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, xi) -> "Se3Tangent":
        v = check_vector(xi, 6, "xi")
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.xi_rot, self.xi_tsl])

    def scaled(self, factor: float) -> "Se3Tangent":
        return Se3Tangent(self.xi_rot * factor, self.xi_tsl * factor)


@dataclass(frozen=True)
class PerturbRange:
    """Magnitude budget for random perturbations: rotation in degrees,
    translation in centimeters."""

    max_rot: float
    max_tsl: float

    def __post_init__(self):
        if self.max_rot < 0 or self.max_tsl < 0:
            raise ValueError("perturbation budgets must be non-negative")


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _rodrigues(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    s, c = math.sin(theta), math.cos(theta)
    return np.eye(3) + (s / theta) * K + ((1.0 - c) / theta**2) * (K @ K)


def _v_matrix(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    # (1 - cos t)/t^2 rewritten through the half angle; the naive form
    # loses most of its digits to cancellation for t below ~1e-4
    half = 0.5 * theta
    a = 0.5 * (math.sin(half) / half) ** 2
    b = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + a * K + b * (K @ K)


def _v_matrix_inv(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    # this arrangement keeps the roundoff of the two large terms
    # proportional to 1/t^2, which the K@K factor then scales away
    coeff = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (
        2.0 * theta * math.sin(theta)
    )
    return np.eye(3) - 0.5 * K + coeff * (K @ K)


def exp_se3(xi: Se3Tangent) -> RigidTransform:
    """Exponential map from a twist to a rigid transform."""
    rotation = _rodrigues(xi.xi_rot)
    translation = _v_matrix(xi.xi_rot) @ xi.xi_tsl
    return RigidTransform(rotation, translation)


def log_se3(T: RigidTransform) -> Se3Tangent:
    """Inverse of :func:`exp_se3`.

    Raises :class:`AngleNearPi` when the rotation angle is within 1e-6 of pi,
    where the axis extraction is ill-conditioned.
    """
    R = T.rotation
    cos_theta = min(1.0, max(-1.0, 0.5 * (float(np.trace(R)) - 1.0)))
    theta = math.acos(cos_theta)
    if theta > math.pi - _PI_TOL:
        raise AngleNearPi(f"rotation angle {theta:.9f} is within {_PI_TOL} of pi")
    axis_part = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        phi = axis_part
    else:
        phi = (theta / math.sin(theta)) * axis_part
    rho = _v_matrix_inv(phi) @ T.translation
    return Se3Tangent(phi, rho)


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Return the transform applying ``B`` first, then ``A``."""
    return RigidTransform(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def rotation_from_euler_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Build ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``. Angles in radians."""
    ca, sa = math.cos(roll), math.sin(roll)
    cb, sb = math.cos(pitch), math.sin(pitch)
    cc, sc = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cb * cc, cc * sa * sb - ca * sc, sa * sc + ca * cc * sb],
            [cb * sc, ca * cc + sa * sb * sc, ca * sb * sc - cc * sa],
            [-sb, cb * sa, ca * cb],
        ]
    )


def euler_zyx(T: RigidTransform) -> tuple[float, float, float]:
    """Extract (roll, pitch, yaw) in radians under the Z.Y.X composition.

    Raises :class:`GimbalLock` when |pitch| is within 1e-6 of pi/2.
    """
    R = T.rotation
    sin_pitch = min(1.0, max(-1.0, -float(R[2, 0])))
    pitch = math.asin(sin_pitch)
    if math.pi / 2 - abs(pitch) < _GIMBAL_TOL:
        raise GimbalLock(f"pitch {pitch:.9f} is within {_GIMBAL_TOL} of +-pi/2")
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw


def sample_perturbation(range: PerturbRange, seed) -> RigidTransform:
    """Draw a random perturbation transform within the given budget.

    Deterministic given ``seed`` (an integer or a ``numpy.random.Generator``).
    Draw order: the three Euler angles (roll, pitch, yaw), each uniform in
    ``[-max_rot, max_rot]`` degrees, then the translation, drawn uniformly
    over the ball of radius ``max_tsl`` centimeters so the perturbation
    magnitude as a whole respects the stated budget. Every translation
    component therefore also lies within ``[-max_tsl, max_tsl]``.
    """
    rng = as_rng(seed)
    angles = np.radians(rng.uniform(-range.max_rot, range.max_rot, size=3))
    direction = rng.normal(size=3)
    norm = float(np.linalg.norm(direction))
    if norm < 1e-12:
        direction = np.array([1.0, 0.0, 0.0])
        norm = 1.0
    radius_m = (range.max_tsl / 100.0) * float(rng.uniform(0.0, 1.0)) ** (1.0 / 3.0)
    translation = direction / norm * radius_m
    rotation = rotation_from_euler_zyx(*angles)
    return RigidTransform(rotation, translation)


# ---------------------------------------------------------------------------
# Transform file format: 4 rows of 4 whitespace-separated decimals,
# row-major, last row `0 0 0 1`.
# ---------------------------------------------------------------------------


def format_transform(T: RigidTransform) -> str:
    m = T.as_matrix()
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in m) + "\n"


def save_transform(T: RigidTransform, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_transform(T))


def parse_transform(text: str) -> RigidTransform:
    from .exceptions import ParseError

    rows = []
    row_lines = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != 4:
            raise ParseError(f"expected 4 values, got {len(tokens)}", line=lineno)
        try:
            rows.append([float(tok) for tok in tokens])
        except ValueError:
            raise ParseError(f"invalid number in {stripped!r}", line=lineno) from None
        row_lines.append(lineno)
        if len(rows) > 4:
            raise ParseError("more than 4 matrix rows", line=lineno)
    if len(rows) != 4:
        raise ParseError(f"expected 4 matrix rows, got {len(rows)}")
    m = np.array(rows)
    if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
        raise ParseError("last row must be `0 0 0 1`", line=row_lines[3])
    try:
        return RigidTransform(m[:3, :3], m[:3, 3])
    except ValueError as exc:
        raise ParseError(str(exc), line=row_lines[0]) from None


def load_transform(path) -> RigidTransform:
    with open(path) as fh:
        return parse_transform(fh.read())
