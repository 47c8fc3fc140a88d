"""Quaternion and SO(3) utilities.

Conventions used throughout the package:

* quaternions are numpy arrays of shape (..., 4), scalar-first (w, x, y, z),
  Hamilton product convention;
* unit quaternions double-cover SO(3); helpers that promise a canonical
  representative flip the sign so that w >= 0, everything else preserves the
  sign it was given (continuity matters for integration and observations);
* angular velocities are arrays of shape (..., 3) in rad/s, world frame.

All functions broadcast over leading axes.
"""

import numpy as np

UNIT_TOL = 1e-6


def quat_normalize(q):
    """Return q scaled to unit norm. Raises ValueError on zero or non-finite input."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite quaternion")
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_canonical(q):
    """Flip sign so the scalar part is non-negative (canonical double-cover rep)."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def _check_unit(q, name):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ValueError(f"{name}: expected (..., 4) quaternion, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError(f"{name}: non-finite quaternion")
    n = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise ValueError(f"{name}: quaternion not unit norm (max dev {np.max(np.abs(n - 1.0)):.3e})")
    return q


def quat_mul(a, b):
    """Hamilton product a*b of unit quaternions.

    Both operands must be finite and unit within 1e-6; the product is
    renormalized before returning so error does not accumulate across chains.
    """
    a = _check_unit(a, "quat_mul lhs")
    b = _check_unit(b, "quat_mul rhs")
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def quat_conj(q):
    """Conjugate (= inverse for unit quaternions)."""
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_angle_diff(a, b):
    """Geodesic angle in [0, pi] between two orientations.

    Computed from the relative quaternion via atan2(|vec|, |w|), which is
    numerically stable near both 0 and pi and invariant to the sign of either
    argument.
    """
    r = quat_mul(a, quat_conj(quat_normalize(b)))
    vec = np.linalg.norm(r[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec, np.abs(r[..., 0]))


def quat_rotate(q, v):
    """Rotate vectors v (..., 3) by unit quaternions q (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q):
    """Rotation matrix (..., 3, 3) for unit quaternion q."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def sample_uniform_so3(rng, n=None):
    """Draw orientation(s) uniformly from SO(3).

    Normalizes 4d standard Gaussians (the Haar measure construction) and
    canonicalizes to w >= 0. Returns shape (4,) when n is None, else (n, 4).
    """
    shape = (4,) if n is None else (int(n), 4)
    g = rng.standard_normal(shape)
    return quat_canonical(quat_normalize(g))


def integrate_orientation(q, omega, dt):
    """First-order orientation update q' = normalize(q + 0.5 * omega_quat * q * dt).

    omega is a world-frame angular velocity (..., 3). dt must be positive.
    The result is renormalized but NOT sign-canonicalized, so orientation
    trajectories stay continuous across steps.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    q = np.asarray(q, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(omega))):
        raise ValueError("non-finite input to integrate_orientation")
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    ox, oy, oz = omega[..., 0], omega[..., 1], omega[..., 2]
    # 0.5 * (0, omega) * q, expanded
    dq = 0.5 * np.stack(
        [
            -ox * x - oy * y - oz * z,
            ox * w + oy * z - oz * y,
            -ox * z + oy * w + oz * x,
            ox * y - oy * x + oz * w,
        ],
        axis=-1,
    )
    out = q + dq * dt
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
