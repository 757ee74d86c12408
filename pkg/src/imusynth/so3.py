"""Rotation-group primitives: skew operator, exp/log maps, quaternion helpers.

Conventions used package-wide:
  * rotation matrices act on column vectors and are kept internal;
  * quaternions are scalar-first (w, x, y, z) and appear only at I/O
    boundaries;
  * axis-angle vectors point along the rotation axis, norm = angle [rad].

All functions broadcast over leading axes: vectors are (..., 3), matrices
(..., 3, 3).
"""

import numpy as np

# Below this rotation angle the Rodrigues coefficients switch to their
# 2nd-order Taylor series to avoid 0/0.
SMALL_ANGLE = 1e-8

# Angles closer to pi than this use diagonal axis extraction in log_so3.
_NEAR_PI = 1e-6


def skew(v):
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def exp_so3(phi):
    """Axis-angle vector -> rotation matrix (Rodrigues)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1)
    small = angle < SMALL_ANGLE
    t2 = angle * angle
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = skew(phi)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def log_so3(rot):
    """Rotation matrix -> axis-angle vector with norm in [0, pi].

    At exactly pi the axis sign is ambiguous; a valid representative is
    returned (axis from the largest diagonal entry, first index on ties).
    """
    rot = np.asarray(rot, dtype=float)
    tr = rot[..., 0, 0] + rot[..., 1, 1] + rot[..., 2, 2]
    angle = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
    w = np.stack(
        [
            rot[..., 2, 1] - rot[..., 1, 2],
            rot[..., 0, 2] - rot[..., 2, 0],
            rot[..., 1, 0] - rot[..., 0, 1],
        ],
        axis=-1,
    )

    small = angle < SMALL_ANGLE
    near_pi = (np.pi - angle) < _NEAR_PI
    general = ~(small | near_pi)

    t2 = angle * angle
    scale = np.where(small, 0.5 * (1.0 + t2 / 12.0), 0.5)
    safe_sin = np.where(general, np.sin(np.where(general, angle, 0.5)), 1.0)
    scale = np.where(general, angle / (2.0 * safe_sin), scale)
    out = scale[..., None] * w

    if np.any(near_pi):
        shape = rot.shape[:-2]
        flat_out = out.reshape((-1, 3))
        flat_rot = rot.reshape((-1, 3, 3))
        flat_angle = np.atleast_1d(angle).reshape(-1)
        flat_w = w.reshape((-1, 3))
        for i in np.nonzero(np.atleast_1d(near_pi).reshape(-1))[0]:
            flat_out[i] = _log_near_pi(flat_rot[i], flat_angle[i], flat_w[i])
        out = flat_out.reshape(shape + (3,))
    return out


def _log_near_pi(rot, angle, w):
    # R = I + sin(t)[u]x + (1-cos(t))[u]x^2; near pi extract u u^T from the
    # symmetric part, taking the largest diagonal for stability.
    sym = 0.5 * (rot + rot.T)
    c = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    d = np.diag(sym)
    k = int(np.argmax(d))
    denom = 1.0 - c
    uk = np.sqrt(max((d[k] - c) / denom, 0.0))
    if uk < 1e-12:
        # cannot happen for a proper rotation near pi, but stay finite
        return np.zeros(3)
    u = sym[k] / (denom * uk)
    u[k] = uk
    u = u / np.linalg.norm(u)
    # align with the antisymmetric part when it still carries sign info
    if np.dot(u, w) < 0.0:
        u = -u
    return angle * u


def geodesic_angle(r1, r2):
    """Angle of the relative rotation between two rotation matrices [rad]."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    # trace(R1^T R2) without forming the product
    tr = np.einsum("...ij,...ij->...", r1, r2)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def is_rotation(rot, tol=1e-9):
    rot = np.asarray(rot, dtype=float)
    if rot.shape[-2:] != (3, 3):
        return False
    eye = np.eye(3)
    ortho = np.abs(rot @ np.swapaxes(rot, -1, -2) - eye).max() <= tol
    det = np.abs(np.linalg.det(rot) - 1.0).max() <= tol
    return bool(ortho and det)


def check_rotation(rot, tol=1e-6, name="rotation"):
    if not is_rotation(rot, tol):
        raise ValueError(f"{name} is not a rotation matrix (tol={tol})")
    return np.asarray(rot, dtype=float)


# -- quaternion helpers (scalar-first w, x, y, z) ---------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q):
    """Unit quaternion -> rotation matrix.

    I/O gate: norms in [0.99, 1.01] are normalized, anything else rejected.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1)
    if np.any(norm < 0.99) or np.any(norm > 1.01):
        bad = float(norm.min()) if norm.min() < 0.99 else float(norm.max())
        raise ValueError(f"quaternion norm {bad:.6g} outside [0.99, 1.01]")
    q = q / norm[..., None]
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def matrix_to_quat(rot):
    """Rotation matrix -> unit quaternion with w >= 0 (Shepperd's method)."""
    rot = np.asarray(rot, dtype=float)
    shape = rot.shape[:-2]
    r = rot.reshape((-1, 3, 3))
    n = r.shape[0]
    q = np.empty((n, 4))

    tr = r[:, 0, 0] + r[:, 1, 1] + r[:, 2, 2]
    # candidate discriminants for the four Shepperd branches
    cand = np.stack([tr, r[:, 0, 0], r[:, 1, 1], r[:, 2, 2]], axis=1)
    branch = np.argmax(cand, axis=1)

    m = branch == 0
    if np.any(m):
        s = np.sqrt(tr[m] + 1.0) * 2.0
        q[m, 0] = 0.25 * s
        q[m, 1] = (r[m, 2, 1] - r[m, 1, 2]) / s
        q[m, 2] = (r[m, 0, 2] - r[m, 2, 0]) / s
        q[m, 3] = (r[m, 1, 0] - r[m, 0, 1]) / s
    m = branch == 1
    if np.any(m):
        s = np.sqrt(1.0 + r[m, 0, 0] - r[m, 1, 1] - r[m, 2, 2]) * 2.0
        q[m, 0] = (r[m, 2, 1] - r[m, 1, 2]) / s
        q[m, 1] = 0.25 * s
        q[m, 2] = (r[m, 0, 1] + r[m, 1, 0]) / s
        q[m, 3] = (r[m, 0, 2] + r[m, 2, 0]) / s
    m = branch == 2
    if np.any(m):
        s = np.sqrt(1.0 + r[m, 1, 1] - r[m, 0, 0] - r[m, 2, 2]) * 2.0
        q[m, 0] = (r[m, 0, 2] - r[m, 2, 0]) / s
        q[m, 1] = (r[m, 0, 1] + r[m, 1, 0]) / s
        q[m, 2] = 0.25 * s
        q[m, 3] = (r[m, 1, 2] + r[m, 2, 1]) / s
    m = branch == 3
    if np.any(m):
        s = np.sqrt(1.0 + r[m, 2, 2] - r[m, 0, 0] - r[m, 1, 1]) * 2.0
        q[m, 0] = (r[m, 1, 0] - r[m, 0, 1]) / s
        q[m, 1] = (r[m, 0, 2] + r[m, 2, 0]) / s
        q[m, 2] = (r[m, 1, 2] + r[m, 2, 1]) / s
        q[m, 3] = 0.25 * s

    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    flip = q[:, 0] < 0.0
    q[flip] = -q[flip]
    return q.reshape(shape + (4,))


def quat_multiply(q1, q2):
    """Hamilton product q1 * q2."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    w2, x2, y2, z2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_exp(phi):
    """Axis-angle vector -> unit quaternion (the quaternion exp map)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1)
    half = 0.5 * angle
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    # sin(a/2)/a with series fallback
    s = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / safe)
    out = np.empty(phi.shape[:-1] + (4,))
    out[..., 0] = np.cos(half)
    out[..., 1:] = s[..., None] * phi
    return out


def random_rotation(rng, size=None):
    """Uniform random rotation matrix (via normalized 4-normal quaternion)."""
    shape = (4,) if size is None else (size, 4)
    q = rng.normal(size=shape)
    return quat_to_matrix(quat_normalize(q))
