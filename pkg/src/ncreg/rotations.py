"""Rotations of the sphere: quaternions, parametrizations, sampling and distances.

Conventions
-----------
* Quaternions are stored as ``(w, x, y, z)`` and canonicalized to ``w >= 0``.
* Euler angles are intrinsic Z-Y-X: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``,
  stored as the vector ``(yaw, pitch, roll)`` in radians.
* The 6D parametrization holds the first two columns of the rotation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateParameterError

_EPS = 1e-12


def _canonical(q):
    q = np.asarray(q, dtype=np.float64)
    return -q if q[0] < 0 else q


def quat_multiply(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    cands = [tr, m[0, 0], m[1, 1], m[2, 2]]
    k = int(np.argmax(cands))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return _canonical(q / np.linalg.norm(q))


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SO(3) stored as a canonical unit quaternion ``(w, x, y, z)``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < _EPS:
            raise DegenerateParameterError("quaternion norm below 1e-12")
        q = _canonical(q / norm)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m):
        return cls(matrix_to_quat(m))

    @classmethod
    def from_axis_angle(cls, axis, angle):
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        return cls(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))

    @classmethod
    def from_rotvec(cls, rotvec):
        return cls(exp_map(rotvec))

    @classmethod
    def from_euler(cls, yaw, pitch, roll):
        """Intrinsic Z-Y-X composition ``Rz(yaw) Ry(pitch) Rx(roll)``."""
        return cls(euler_to_quat(np.array([yaw, pitch, roll], dtype=np.float64)))

    def as_matrix(self):
        return quat_to_matrix(self.q)

    def as_rotvec(self):
        """Rotation vector with angle in [0, pi]."""
        w = np.clip(self.q[0], -1.0, 1.0)
        v = self.q[1:]
        s = np.linalg.norm(v)
        if s < 1e-15:
            return 2.0 * v
        angle = 2.0 * np.arctan2(s, w)
        return v / s * angle

    def as_euler(self):
        """``(yaw, pitch, roll)`` with pitch in [-pi/2, pi/2]."""
        m = self.as_matrix()
        pitch = np.arcsin(np.clip(-m[2, 0], -1.0, 1.0))
        if abs(m[2, 0]) < 1.0 - 1e-12:
            yaw = np.arctan2(m[1, 0], m[0, 0])
            roll = np.arctan2(m[2, 1], m[2, 2])
        else:
            yaw = np.arctan2(-m[0, 1], m[1, 1])
            roll = 0.0
        return np.array([yaw, pitch, roll])

    @property
    def angle(self):
        """Rotation angle in [0, pi]."""
        return 2.0 * np.arccos(np.clip(abs(self.q[0]), 0.0, 1.0))

    def inv(self):
        return Rotation(self.q * np.array([1.0, -1.0, -1.0, -1.0]))

    def __mul__(self, other):
        if not isinstance(other, Rotation):
            return NotImplemented
        return Rotation(quat_multiply(self.q, other.q))

    def apply(self, points):
        """Rotate point(s) of shape (3,) or (n, 3) and renormalize."""
        p = np.asarray(points, dtype=np.float64)
        out = p @ self.as_matrix().T
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def __repr__(self):
        w, x, y, z = self.q
        return f"Rotation(q=[{w:.6f}, {x:.6f}, {y:.6f}, {z:.6f}])"

    def to_list(self):
        return [float(c) for c in self.q]


def dist_R(r1, r2):
    """Quaternion distance ``arccos(|q1 . q2|)`` in radians, in [0, pi/2]."""
    q1 = r1.q if isinstance(r1, Rotation) else np.asarray(r1, dtype=np.float64)
    q2 = r2.q if isinstance(r2, Rotation) else np.asarray(r2, dtype=np.float64)
    if np.dot(q1, q2) < 0:
        q2 = -q2
    # 2 atan2(|q1 - q2|, |q1 + q2|) equals arccos(|q1 . q2|) without the
    # loss of precision arccos has near 1
    return float(2.0 * np.arctan2(np.linalg.norm(q1 - q2), np.linalg.norm(q1 + q2)))


def dist_R_deg(r1, r2):
    return np.degrees(dist_R(r1, r2))


# -- axis-angle ---------------------------------------------------------------


def exp_map(rotvec):
    v = np.asarray(rotvec, dtype=np.float64)
    a = np.linalg.norm(v)
    if a < 1e-8:
        # sin(a/2)/a series
        half = 0.5 - a * a / 48.0
        return np.concatenate([[np.cos(a / 2)], half * v])
    return np.concatenate([[np.cos(a / 2)], np.sin(a / 2) / a * v])


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _right_jacobian(v):
    a = np.linalg.norm(v)
    k = _skew(v)
    if a < 1e-5:
        c1 = 0.5 - a * a / 24.0
        c2 = 1.0 / 6.0 - a * a / 120.0
    else:
        c1 = (1.0 - np.cos(a)) / (a * a)
        c2 = (a - np.sin(a)) / (a ** 3)
    return np.eye(3) - c1 * k + c2 * (k @ k)


# -- euler ----------------------------------------------------------------------


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_to_matrix(angles):
    yaw, pitch, roll = angles
    return _rz(yaw) @ _ry(pitch) @ _rx(roll)


def euler_to_quat(angles):
    yaw, pitch, roll = angles
    qz = np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)])
    qy = np.array([np.cos(pitch / 2), 0.0, np.sin(pitch / 2), 0.0])
    qx = np.array([np.cos(roll / 2), np.sin(roll / 2), 0.0, 0.0])
    return quat_multiply(quat_multiply(qz, qy), qx)


# -- parametrizations -------------------------------------------------------------


class Parametrization:
    """Maps a real parameter vector to a rotation, with analytic derivatives.

    Subclasses implement ``matrix``, ``from_rotation`` and ``point_jacobian``.
    """

    name = ""
    dim = 0

    def check(self, theta):
        theta = np.asarray(theta, dtype=np.float64).reshape(self.dim)
        if not np.all(np.isfinite(theta)):
            raise DegenerateParameterError(f"non-finite {self.name} parameters")
        return theta

    def to_rotation(self, theta):
        return Rotation.from_matrix(self.matrix(theta))

    def apply(self, theta, points):
        return np.asarray(points, dtype=np.float64) @ self.matrix(theta).T

    def project(self, theta):
        """Map parameters back onto their constraint set after an update."""
        return theta


class QuaternionParam(Parametrization):
    name = "quaternion"
    dim = 4

    def _unit(self, theta):
        theta = self.check(theta)
        n = np.linalg.norm(theta)
        if n < _EPS:
            raise DegenerateParameterError("quaternion norm below 1e-12")
        return theta / n, n

    def matrix(self, theta):
        return quat_to_matrix(self._unit(theta)[0])

    def to_rotation(self, theta):
        return Rotation(self._unit(theta)[0])

    def from_rotation(self, rot):
        return rot.q.copy()

    def project(self, theta):
        return self._unit(theta)[0]

    def point_jacobian(self, theta, points):
        """d(R p)/d theta, shape (n, 3, 4)."""
        u, n = self._unit(theta)
        p = np.atleast_2d(points)
        w, v = u[0], u[1:]
        # f(u) = (w^2 - v.v) p + 2 (v.p) v + 2 w (v x p) equals R p for unit u
        vp = p @ v
        vxp = np.cross(v, p)
        d_w = 2.0 * w * p + 2.0 * vxp
        d_v = np.empty((len(p), 3, 3))
        eye = np.eye(3)
        for k in range(3):
            d_v[:, :, k] = (
                -2.0 * v[k] * p
                + 2.0 * p[:, [k]] * v[None, :]
                + 2.0 * vp[:, None] * eye[k][None, :]
                + 2.0 * w * np.cross(eye[k], p)
            )
        d_u = np.concatenate([d_w[:, :, None], d_v], axis=2)
        proj = (np.eye(4) - np.outer(u, u)) / n
        return d_u @ proj


class AxisAngleParam(Parametrization):
    name = "axis_angle"
    dim = 3

    def matrix(self, theta):
        return quat_to_matrix(exp_map(self.check(theta)))

    def to_rotation(self, theta):
        return Rotation(exp_map(self.check(theta)))

    def from_rotation(self, rot):
        return rot.as_rotvec()

    def point_jacobian(self, theta, points):
        """d(R p)/d theta = -R [p]x J_r(theta), shape (n, 3, 3)."""
        theta = self.check(theta)
        r = quat_to_matrix(exp_map(theta))
        jr = _right_jacobian(theta)
        p = np.atleast_2d(points)
        # [p]x J_r applied column-wise: cross(p, J_r[:, j])
        cols = np.stack([np.cross(p, jr[:, j]) for j in range(3)], axis=2)
        return -np.einsum("ab,nbj->naj", r, cols)


class EulerParam(Parametrization):
    name = "euler"
    dim = 3

    def matrix(self, theta):
        return euler_to_matrix(self.check(theta))

    def to_rotation(self, theta):
        return Rotation(euler_to_quat(self.check(theta)))

    def from_rotation(self, rot):
        return rot.as_euler()

    def point_jacobian(self, theta, points):
        yaw, pitch, roll = self.check(theta)
        p = np.atleast_2d(points)
        rz, ry, rx = _rz(yaw), _ry(pitch), _rx(roll)
        ez, ey, ex = np.eye(3)[2], np.eye(3)[1], np.eye(3)[0]
        xp = p @ rx.T
        yxp = xp @ ry.T
        d_yaw = np.cross(ez, yxp @ rz.T)
        d_pitch = np.cross(ey, yxp) @ rz.T
        d_roll = np.cross(ex, xp) @ (rz @ ry).T
        return np.stack([d_yaw, d_pitch, d_roll], axis=2)


class SixDParam(Parametrization):
    name = "six_d"
    dim = 6

    def _frame(self, theta):
        theta = self.check(theta)
        a1, a2 = theta[:3], theta[3:]
        n1 = np.linalg.norm(a1)
        if n1 < _EPS:
            raise DegenerateParameterError("first 6D vector has norm below 1e-12")
        b1 = a1 / n1
        u2 = a2 - (b1 @ a2) * b1
        n2 = np.linalg.norm(u2)
        if n2 < _EPS:
            raise DegenerateParameterError("6D vectors are parallel")
        b2 = u2 / n2
        return a1, a2, b1, b2, np.cross(b1, b2), n1, n2

    def matrix(self, theta):
        _, _, b1, b2, b3, _, _ = self._frame(theta)
        return np.column_stack([b1, b2, b3])

    def from_rotation(self, rot):
        m = rot.as_matrix()
        return np.concatenate([m[:, 0], m[:, 1]])

    def point_jacobian(self, theta, points):
        a1, a2, b1, b2, b3, n1, n2 = self._frame(theta)
        p = np.atleast_2d(points)
        eye = np.eye(3)
        db1_da1 = (eye - np.outer(b1, b1)) / n1
        db2_du2 = (eye - np.outer(b2, b2)) / n2
        du2_db1 = -(b1 @ a2) * eye - np.outer(b1, a2)
        du2_da2 = eye - np.outer(b1, b1)
        db2_da1 = db2_du2 @ du2_db1 @ db1_da1
        db2_da2 = db2_du2 @ du2_da2

        def cross_cols(a, m):
            return np.stack([np.cross(a, m[:, j]) for j in range(3)], axis=1)

        def cols_cross(m, b):
            return np.stack([np.cross(m[:, j], b) for j in range(3)], axis=1)

        db3_da1 = cols_cross(db1_da1, b2) + cross_cols(b1, db2_da1)
        db3_da2 = cross_cols(b1, db2_da2)
        # R p = p_x b1 + p_y b2 + p_z b3
        j1 = (p[:, 0, None, None] * db1_da1 + p[:, 1, None, None] * db2_da1
              + p[:, 2, None, None] * db3_da1)
        j2 = p[:, 1, None, None] * db2_da2 + p[:, 2, None, None] * db3_da2
        return np.concatenate([j1, j2], axis=2)


PARAMETRIZATIONS = {
    cls.name: cls() for cls in (QuaternionParam, AxisAngleParam, EulerParam, SixDParam)
}


def get_parametrization(name):
    try:
        return PARAMETRIZATIONS[name]
    except KeyError:
        raise ValueError(f"unknown parametrization {name!r}; choose from {sorted(PARAMETRIZATIONS)}") from None


def to_rotation(variant, theta):
    return get_parametrization(variant).to_rotation(theta)


def rotate_point_jacobian(variant, theta, points):
    """Jacobian of ``R(theta) p`` w.r.t. ``theta``: shape (n, 3, dim)."""
    return get_parametrization(variant).point_jacobian(theta, points)


# -- sampling ----------------------------------------------------------------------


def sample_axis_angle(rng):
    """Axis from a normalized Gaussian vector, angle uniform on [0, 2 pi]."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return axis, angle


def sample_rotation(rng, mode="uniform_angle"):
    """Random rotation.

    ``uniform_angle`` draws a uniform angle in [0, 2 pi] about a random
    axis (not Haar-distributed); ``haar`` normalizes a 4-D Gaussian.
    """
    if mode == "uniform_angle":
        axis, angle = sample_axis_angle(rng)
        return Rotation.from_axis_angle(axis, angle)
    if mode == "haar":
        return Rotation(rng.standard_normal(4))
    raise ValueError(f"unknown sampler mode {mode!r}")


def make_perturbation(seed, max_deg=36.0):
    """Random Z-Y-X Euler rotation with each angle uniform in [-max_deg, max_deg].

    Returns ``(rotation, angles_deg)`` with angles ordered ``(yaw, pitch, roll)``.
    """
    rng = np.random.default_rng(seed)
    roll, yaw, pitch = rng.uniform(-max_deg, max_deg, size=3)
    angles = np.array([yaw, pitch, roll])
    return Rotation.from_euler(*np.radians(angles)), angles
