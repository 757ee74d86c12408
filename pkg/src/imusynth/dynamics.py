"""Leaf-joint kinematics in the accelerating, rotating body-root frame.

The root frame is non-inertial, so the second time derivative of a leaf
position expressed in it differs from the rotated world acceleration by
linear-inertial, centrifugal, Coriolis, and Euler terms.  Everything here is
per unit mass; the mass of the actual limb divides out and never appears.

Conventions: R_WR maps root-frame vectors into the world frame, and the body
angular velocity w satisfies dR_WR/dt = R_WR [w]x.  With

    p = R_WR^T (p_WL - p_WR)

two differentiations give

    p'' = R_WR^T p_WL'' - (a_RR + [w]x [w]x p + 2 [w]x p' + [w']x p)

where a_RR = R_WR^T p_WR''.  The bracketed sum, negated, is the fictitious
acceleration; adding it to the rotated leaf world acceleration recovers the
true root-frame acceleration.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .so3 import log_so3
from .trajectory import BonePoseSequence

__all__ = [
    "RootDynamics",
    "LeafState",
    "fictitious_acceleration",
    "corrected_leaf_acceleration",
    "root_frame_quantities",
]

# sanity bound on the root-to-leaf distance, generous for human skeletons
LEAF_RADIUS_BOUND = 2.0


def _finite_vec3(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"{name} must have trailing dimension 3")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass
class RootDynamics:
    """Root-joint motion expressed in the root frame itself.

    Fields are (..., 3) arrays so a whole sequence can travel as one object:
    linear acceleration a_rr [m/s^2], angular velocity omega [rad/s], and
    angular acceleration omega_dot [rad/s^2].
    """

    a_rr: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray

    def __post_init__(self):
        self.a_rr = _finite_vec3(self.a_rr, "a_rr")
        self.omega = _finite_vec3(self.omega, "omega")
        self.omega_dot = _finite_vec3(self.omega_dot, "omega_dot")


@dataclass
class LeafState:
    """Leaf-joint state in the root frame.

    p_rl / pdot_rl are root-frame position and velocity; a_rl is the leaf's
    world acceleration rotated into root axes (R_WR^T p_WL''), not the
    root-frame second derivative.  r_rl is the leaf orientation relative to
    the root.
    """

    p_rl: np.ndarray
    pdot_rl: np.ndarray
    a_rl: np.ndarray
    r_rl: np.ndarray

    def __post_init__(self):
        self.p_rl = _finite_vec3(self.p_rl, "p_rl")
        self.pdot_rl = _finite_vec3(self.pdot_rl, "pdot_rl")
        self.a_rl = _finite_vec3(self.a_rl, "a_rl")
        self.r_rl = np.asarray(self.r_rl, dtype=float)
        if not np.isfinite(self.r_rl).all():
            raise ValueError("r_rl contains non-finite values")
        radius = np.linalg.norm(self.p_rl, axis=-1)
        if np.any(radius >= LEAF_RADIUS_BOUND):
            raise ValueError(
                f"leaf position {radius.max():.3f} m from root exceeds the "
                f"{LEAF_RADIUS_BOUND} m sanity bound"
            )


def fictitious_acceleration(root, p_rl, pdot_rl):
    """Per-unit-mass fictitious acceleration acting on a leaf point.

    Sum of the linear-inertial, centrifugal, Coriolis, and Euler terms,
    negated so that adding it to the rotated world acceleration yields the
    root-frame acceleration.  Broadcasts over leading dimensions.
    """
    p = _finite_vec3(p_rl, "p_rl")
    pdot = _finite_vec3(pdot_rl, "pdot_rl")
    w = root.omega
    centrifugal = np.cross(w, np.cross(w, p))
    coriolis = 2.0 * np.cross(w, pdot)
    euler = np.cross(root.omega_dot, p)
    return -(root.a_rr + centrifugal + coriolis + euler)


def corrected_leaf_acceleration(root, leaf):
    """True second time derivative of the root-frame leaf position."""
    return leaf.a_rl + fictitious_acceleration(root, leaf.p_rl, leaf.pdot_rl)


def _body_rates(rotations, dt):
    """Per-frame body angular velocity from sampled rotations.

    log(R_i^T R_{i+1})/dt is the average rate over segment i and is assigned
    to its midpoint; frame values average the two adjacent midpoints, with
    linear extrapolation at the ends (all second order in dt).
    """
    mid = log_so3(np.swapaxes(rotations[:-1], -1, -2) @ rotations[1:]) / dt
    omega = np.empty((rotations.shape[0], 3))
    omega[1:-1] = 0.5 * (mid[:-1] + mid[1:])
    omega[0] = 1.5 * mid[0] - 0.5 * mid[1]
    omega[-1] = 1.5 * mid[-1] - 0.5 * mid[-2]
    return omega


def root_frame_quantities(root, leaf):
    """Per-frame (RootDynamics, LeafState) from world-frame bone tracks.

    World-quantity derivatives use central differences (second-order
    one-sided at the ends); the root-frame velocity uses the analytic
    transport form -[w]x p + R_WR^T (p_WL' - p_WR') rather than differencing
    p_rl, so it stays consistent with the fictitious-force terms.
    """
    if not isinstance(root, BonePoseSequence) or not isinstance(leaf, BonePoseSequence):
        raise TypeError("root and leaf must be BonePoseSequence")
    if root.frame_rate != leaf.frame_rate:
        raise ConfigError("root and leaf frame rates differ")
    if len(root) != len(leaf):
        raise ConfigError("root and leaf lengths differ")
    if len(root) < 5:
        raise ConfigError("need at least 5 frames for stable differentiation")

    dt = 1.0 / root.frame_rate
    rot_t = np.swapaxes(root.rotations, -1, -2)

    v_wr = np.gradient(root.positions, dt, axis=0, edge_order=2)
    a_wr = np.gradient(v_wr, dt, axis=0, edge_order=2)
    v_wl = np.gradient(leaf.positions, dt, axis=0, edge_order=2)
    a_wl = np.gradient(v_wl, dt, axis=0, edge_order=2)

    omega = _body_rates(root.rotations, dt)
    omega_dot = np.gradient(omega, dt, axis=0, edge_order=2)

    dynamics = RootDynamics(
        a_rr=(rot_t @ a_wr[..., None])[..., 0],
        omega=omega,
        omega_dot=omega_dot,
    )

    p_rl = (rot_t @ (leaf.positions - root.positions)[..., None])[..., 0]
    pdot_rl = -np.cross(omega, p_rl) + (rot_t @ (v_wl - v_wr)[..., None])[..., 0]
    state = LeafState(
        p_rl=p_rl,
        pdot_rl=pdot_rl,
        a_rl=(rot_t @ a_wl[..., None])[..., 0],
        r_rl=rot_t @ leaf.rotations,
    )
    return dynamics, state
