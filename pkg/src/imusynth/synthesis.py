"""Substep inertial synthesis: raw accel/gyro/mag streams from keyframe poses.

Each keyframe interval is subdivided into `substeps` segments of length dt.
Substep accelerations are solved as one sparse linear least-squares problem
balancing position reproduction, keyframe velocity consistency, and
acceleration smoothness; the free variables are the substep accelerations
*plus* the keyframe velocities (the velocities are not finite-differenced
from positions, they are solved jointly). Substep body rates are solved by
Gauss-Newton on orientation-closure residuals with a smoothness penalty.

Discretization notes: with v_{i,j} = v_{i,j-1} + a_{i,j} dt and
p_{i+1} = p_i + dt * sum_j v_{i,j}, the solved acceleration at global substep
s best approximates a(s*dt) (left endpoint of its segment; the position
update is then a composite midpoint rule), while the keyframe velocity
variable for keyframe i sits half a substep early, at t_i - dt/2. Sample
timestamps are t = s*dt.

Unit note: the three energy terms compare residuals of different physical
units, so before weighting, the position-closure residual is divided by T^2
and the velocity-closure residual by T (T = substeps*dt, the keyframe
interval); the orientation-closure residual of the rate solve is divided by
T likewise. All residuals are then accelerations / rates and the default
weights give a smoothing cutoff near 10 Hz; without this scaling the
smoothness term dominates and anything above ~0.2 Hz is flattened.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import lsmr

from .errors import ConfigError, SolverError
from .so3 import exp_so3, log_so3, skew
from .trajectory import SensorTrajectory

GRAVITY_W = np.array([0.0, 0.0, -9.81])
MAG_NORTH_W = np.array([1.0, 0.0, 0.0])


@dataclass
class AccelSolveConfig:
    """Weights and grid for the acceleration least-squares solve."""

    lambda_p: float = 1.0
    lambda_v: float = 0.5
    lambda_a: float = 1.3
    substeps: int = 3
    dt: float = 1.0 / 180.0
    solver_tol: float = 1e-8
    max_iters: int = 20000

    def __post_init__(self):
        if min(self.lambda_p, self.lambda_v, self.lambda_a) < 0:
            raise ConfigError("accel solve weights must be >= 0")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")


@dataclass
class GyroSolveConfig:
    """Weights and Gauss-Newton controls for the body-rate solve."""

    lambda_r: float = 1.0
    lambda_w: float = 1.0
    substeps: int = 3
    dt: float = 1.0 / 180.0
    gn_max_iters: int = 20
    gn_tol: float = 1e-8

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_w) < 0:
            raise ConfigError("gyro solve weights must be >= 0")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.gn_max_iters < 1:
            raise ConfigError("gn_max_iters must be >= 1")


@dataclass
class RawImuStream:
    """Synthesized raw measurements.

    accel: specific force [m/s^2] in the sensor frame at the substep rate;
    gyro: body rates [rad/s] at the substep rate; mag: unit field direction
    in the sensor frame at the keyframe rate. Sample s covers the segment
    (s*dt, (s+1)*dt]; its timestamp is s*dt. Magnetometer sample i is taken
    at keyframe time i/keyframe_rate.
    """

    accel: np.ndarray
    gyro: np.ndarray
    mag: np.ndarray
    sample_rate: float
    keyframe_rate: float
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())

    def __post_init__(self):
        self.accel = np.asarray(self.accel, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        self.mag = np.asarray(self.mag, dtype=float)
        self.gravity = np.asarray(self.gravity, dtype=float)
        n = self.sample_rate / self.keyframe_rate
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigError("sample_rate must be an integer multiple of keyframe_rate")
        n = int(round(n))
        m = self.mag.shape[0]
        if self.accel.shape != (n * (m - 1), 3) or self.gyro.shape != self.accel.shape:
            raise ConfigError(
                "stream length contract violated: expected "
                f"{n * (m - 1)} accel/gyro samples for {m} keyframes"
            )

    @property
    def substeps(self):
        return int(round(self.sample_rate / self.keyframe_rate))

    @property
    def times(self):
        return np.arange(self.accel.shape[0]) / self.sample_rate

    @property
    def mag_times(self):
        return np.arange(self.mag.shape[0]) / self.keyframe_rate


def _check_grid(traj, substeps, dt):
    if abs(substeps * dt - 1.0 / traj.frame_rate) > 1e-9:
        raise ConfigError(
            f"substeps*dt = {substeps * dt:.6g} does not match the keyframe "
            f"interval {1.0 / traj.frame_rate:.6g}"
        )


def _accel_system(m, n, dt, cfg):
    """Sparse design matrix over x = [a_(0,1..n), ..., a_(m-2,n), v_0..v_(m-1)]
    for one axis."""
    n_a = n * (m - 1)
    n_x = n_a + m
    rows, cols, vals = [], [], []
    r = 0
    interval = n * dt

    # residuals are rescaled to acceleration units (see module docstring)
    sqp = np.sqrt(cfg.lambda_p) / (interval * interval)
    if cfg.lambda_p > 0:
        # chained position closure: n*dt*v_i + dt^2 * sum_j (n-j+1) a_ij
        for i in range(m - 1):
            for j in range(n):
                rows.append(r)
                cols.append(i * n + j)
                vals.append(sqp * dt * dt * (n - j))
            rows.append(r)
            cols.append(n_a + i)
            vals.append(sqp * n * dt)
            r += 1

    sqv = np.sqrt(cfg.lambda_v) / interval
    if cfg.lambda_v > 0:
        # velocity closure: v_i + dt * sum_j a_ij - v_{i+1}
        for i in range(m - 1):
            for j in range(n):
                rows.append(r)
                cols.append(i * n + j)
                vals.append(sqv * dt)
            rows.append(r)
            cols.append(n_a + i)
            vals.append(sqv)
            rows.append(r)
            cols.append(n_a + i + 1)
            vals.append(-sqv)
            r += 1

    sqa = np.sqrt(cfg.lambda_a)
    if cfg.lambda_a > 0:
        # smoothness on consecutive substeps; the first substep has no
        # predecessor and is deliberately unconstrained
        for s in range(1, n_a):
            rows.extend([r, r])
            cols.extend([s, s - 1])
            vals.extend([sqa, -sqa])
            r += 1

    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(r, n_x))
    return mat, n_a


def solve_accelerations(traj: SensorTrajectory, cfg: AccelSolveConfig):
    """Solve world-frame substep accelerations (gravity-free) and keyframe
    velocities from a (possibly perturbed) sensor trajectory.

    Returns (accels (N,3), velocities (m,3)) with N = substeps*(m-1).
    """
    n = cfg.substeps
    dt = cfg.dt
    _check_grid(traj, n, dt)
    m = len(traj)
    mat, n_a = _accel_system(m, n, dt, cfg)

    # diagonal column scaling: dt^2 entries otherwise starve lsmr convergence
    col_norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=0)).ravel())
    col_norms[col_norms == 0.0] = 1.0
    scaled = mat @ sparse.diags(1.0 / col_norms)

    n_rows_p = m - 1 if cfg.lambda_p > 0 else 0
    accels = np.empty((n_a, 3))
    velocities = np.empty((m, 3))
    interval = n * dt
    for axis in range(3):
        rhs = np.zeros(mat.shape[0])
        if cfg.lambda_p > 0:
            dp = np.diff(traj.positions[:, axis])
            rhs[:n_rows_p] = np.sqrt(cfg.lambda_p) / (interval * interval) * dp
        result = lsmr(
            scaled,
            rhs,
            atol=cfg.solver_tol,
            btol=cfg.solver_tol,
            maxiter=cfg.max_iters,
        )
        x, istop, itn = result[0], result[1], result[2]
        if istop not in (0, 1, 2):
            raise SolverError(
                f"acceleration solve did not converge on axis {axis} "
                f"(istop={istop}, iterations={itn}, residual={result[3]:.3e})",
                trace={"istop": istop, "iterations": itn, "residual": result[3]},
            )
        x = x / col_norms
        accels[:, axis] = x[:n_a]
        velocities[:, axis] = x[n_a:]
    return accels, velocities


def accel_objective(traj, accels, velocities, cfg):
    """Objective of the acceleration solve at a candidate point."""
    n = cfg.substeps
    dt = cfg.dt
    m = len(traj)
    interval = n * dt
    a = accels.reshape(m - 1, n, 3)
    # velocity at each substep endpoint via the backward-Euler chain
    v_sub = velocities[:-1, None, :] + dt * np.cumsum(a, axis=1)
    pos_res = velocities[:-1] * n * dt + dt * dt * np.einsum(
        "inx,n->ix", a, np.arange(n, 0, -1, dtype=float)
    ) - np.diff(traj.positions, axis=0)
    vel_res = v_sub[:, -1, :] - velocities[1:]
    flat = accels.reshape(-1, 3)
    smooth = np.diff(flat, axis=0)
    return (
        cfg.lambda_p * np.sum(pos_res**2) / interval**4
        + cfg.lambda_v * np.sum(vel_res**2) / interval**2
        + cfg.lambda_a * np.sum(smooth**2)
    )


def _interval_products(exps, n):
    """Suffix products Q_{i,j} = E_{i,j+1} ... E_{i,n} and the full product."""
    m1 = exps.shape[0]
    suffix = np.empty((m1, n, 3, 3))
    suffix[:, n - 1] = np.eye(3)
    for j in range(n - 2, -1, -1):
        suffix[:, j] = exps[:, j + 1] @ suffix[:, j + 1]
    full = exps[:, 0] @ suffix[:, 0]
    return suffix, full


def _gyro_residuals(rel_t, rates, n, dt, cfg):
    """Weighted residual vector and objective for the current rates."""
    m1 = rel_t.shape[0]
    exps = exp_so3(rates.reshape(m1, n, 3) * dt)
    suffix, full = _interval_products(exps, n)
    closure = log_so3(rel_t @ full)
    smooth = np.diff(rates, axis=0)
    # closure rescaled to rate units by the keyframe interval (module docstring)
    interval = n * dt
    objective = (
        cfg.lambda_r * np.sum(closure**2) / interval**2
        + cfg.lambda_w * np.sum(smooth**2)
    )
    return closure, smooth, suffix, objective


def _gyro_jacobian(rel_t, rates, closure, suffix, n, dt, cfg, pattern):
    """Sparse weighted Jacobian of [closure rows; smoothness rows]."""
    m1 = rel_t.shape[0]
    w = rates.reshape(m1, n, 3) * dt
    # first-order right-Jacobian approximations
    jr = np.eye(3) - 0.5 * skew(w)
    jr_inv = np.eye(3) + 0.5 * skew(closure)
    blocks = np.einsum(
        "iab,ijbc,ijcd->ijad", jr_inv, np.swapaxes(suffix, -1, -2), jr
    ) * (dt * np.sqrt(cfg.lambda_r) / (n * dt))
    rows_c, cols_c, rows_s, cols_s, vals_s, shape = pattern
    vals = np.concatenate([blocks.ravel(), vals_s])
    return sparse.csr_matrix(
        (vals, (np.concatenate([rows_c, rows_s]), np.concatenate([cols_c, cols_s]))),
        shape=shape,
    )


def _gyro_pattern(m1, n, cfg):
    """Fixed sparsity pattern of the gyro Jacobian (values change per iter)."""
    n_rates = m1 * n
    # closure blocks: residual row block i, variable block (i, j)
    i_idx, j_idx, a_idx, b_idx = np.meshgrid(
        np.arange(m1), np.arange(n), np.arange(3), np.arange(3), indexing="ij"
    )
    rows_c = (3 * i_idx + a_idx).ravel()
    cols_c = (3 * (i_idx * n + j_idx) + b_idx).ravel()
    # smoothness rows: sqrt(lambda_w) * (w_s - w_{s-1}) per component
    sl = np.sqrt(cfg.lambda_w)
    s_idx, c_idx = np.meshgrid(np.arange(1, n_rates), np.arange(3), indexing="ij")
    base = 3 * m1 + 3 * (s_idx - 1) + c_idx
    rows_s = np.concatenate([base.ravel(), base.ravel()])
    cols_s = np.concatenate([(3 * s_idx + c_idx).ravel(), (3 * (s_idx - 1) + c_idx).ravel()])
    vals_s = np.concatenate([np.full(base.size, sl), np.full(base.size, -sl)])
    shape = (3 * m1 + 3 * (n_rates - 1), 3 * n_rates)
    return rows_c, cols_c, rows_s, cols_s, vals_s, shape


def solve_angular_velocities(traj: SensorTrajectory, cfg: GyroSolveConfig):
    """Solve substep body rates by Gauss-Newton on orientation closure.

    Returns rates (N,3) with N = substeps*(m-1); sample s is the constant
    body rate over segment (s*dt, (s+1)*dt].
    """
    n = cfg.substeps
    dt = cfg.dt
    _check_grid(traj, n, dt)
    m = len(traj)
    m1 = m - 1

    rel = np.einsum("nji,njk->nik", traj.rotations[:-1], traj.rotations[1:])
    rel_t = np.swapaxes(rel, -1, -2)
    # init: constant rate reproducing each keyframe-to-keyframe rotation
    rates = np.repeat(log_so3(rel) / (n * dt), n, axis=0)

    pattern = _gyro_pattern(m1, n, cfg)
    sqr = np.sqrt(cfg.lambda_r) / (n * dt)
    sqw = np.sqrt(cfg.lambda_w)
    trace = []

    closure, smooth, suffix, objective = _gyro_residuals(rel_t, rates, n, dt, cfg)
    for _ in range(cfg.gn_max_iters):
        res_w = np.concatenate([sqr * closure.ravel(), sqw * smooth.ravel()])
        jac = _gyro_jacobian(rel_t, rates, closure, suffix, n, dt, cfg, pattern)
        grad = 2.0 * (jac.T @ res_w)
        trace.append({"objective": objective, "grad_max": float(np.abs(grad).max())})
        if np.abs(grad).max() < cfg.gn_tol:
            break
        step = lsmr(jac, -res_w, atol=1e-12, btol=1e-12, maxiter=5000)[0]
        step = step.reshape(-1, 3)

        alpha = 1.0
        accepted = False
        for _ in range(10):
            cand = rates + alpha * step
            c_closure, c_smooth, c_suffix, c_obj = _gyro_residuals(
                rel_t, cand, n, dt, cfg
            )
            if c_obj <= objective:
                rates = cand
                closure, smooth, suffix, objective = c_closure, c_smooth, c_suffix, c_obj
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # stalled: fine if already at the optimum, otherwise a failure
            if np.abs(grad).max() < cfg.gn_tol:
                break
            raise SolverError(
                "gyro Gauss-Newton stalled with gradient "
                f"{np.abs(grad).max():.3e} > {cfg.gn_tol:.1e}",
                trace=trace,
            )
    else:
        res_w = np.concatenate([sqr * closure.ravel(), sqw * smooth.ravel()])
        jac = _gyro_jacobian(rel_t, rates, closure, suffix, n, dt, cfg, pattern)
        grad = 2.0 * (jac.T @ res_w)
        if np.abs(grad).max() >= cfg.gn_tol:
            raise SolverError(
                f"gyro Gauss-Newton did not converge in {cfg.gn_max_iters} "
                f"iterations (gradient {np.abs(grad).max():.3e})",
                trace=trace,
            )
    return rates


def gyro_objective(traj, rates, cfg):
    """Objective of the body-rate solve at a candidate point."""
    n = cfg.substeps
    m1 = len(traj) - 1
    rel = np.einsum("nji,njk->nik", traj.rotations[:-1], traj.rotations[1:])
    _, _, _, objective = _gyro_residuals(
        np.swapaxes(rel, -1, -2), rates.reshape(m1 * n, 3), n, cfg.dt, cfg
    )
    return objective


def substep_orientations(traj: SensorTrajectory, rates, substeps, dt):
    """Orientation at each substep tick, replaying solved rates from the
    interval's keyframe orientation (restarted every keyframe)."""
    m1 = len(traj) - 1
    exps = exp_so3(rates.reshape(m1, substeps, 3) * dt)
    out = np.empty((m1, substeps, 3, 3))
    out[:, 0] = traj.rotations[:-1]
    for j in range(1, substeps):
        out[:, j] = out[:, j - 1] @ exps[:, j - 1]
    return out.reshape(m1 * substeps, 3, 3)


def specific_force(world_accels, traj, rates, substeps, dt, gravity=None):
    """Sensor-frame specific force f = R_WS^T (a_W - g_W) at each substep."""
    gravity = GRAVITY_W if gravity is None else np.asarray(gravity, dtype=float)
    rots = substep_orientations(traj, rates, substeps, dt)
    return np.einsum("nji,nj->ni", rots, world_accels - gravity)


def synth_magnetometer(traj: SensorTrajectory):
    """Unit magnetic field direction in the sensor frame at each keyframe.

    The world field is horizontal north = world x-axis.
    """
    field_s = np.einsum("nji,j->ni", traj.rotations, MAG_NORTH_W)
    return field_s / np.linalg.norm(field_s, axis=1, keepdims=True)


def synthesize_stream(
    traj: SensorTrajectory,
    accel_cfg: AccelSolveConfig | None = None,
    gyro_cfg: GyroSolveConfig | None = None,
    gravity=None,
):
    """Full clean-stream synthesis for one sensor trajectory."""
    accel_cfg = accel_cfg or AccelSolveConfig()
    gyro_cfg = gyro_cfg or GyroSolveConfig()
    if accel_cfg.substeps != gyro_cfg.substeps or accel_cfg.dt != gyro_cfg.dt:
        raise ConfigError("accel and gyro solves must share the substep grid")
    gravity = GRAVITY_W if gravity is None else np.asarray(gravity, dtype=float)
    accels, _ = solve_accelerations(traj, accel_cfg)
    rates = solve_angular_velocities(traj, gyro_cfg)
    force = specific_force(
        accels, traj, rates, accel_cfg.substeps, accel_cfg.dt, gravity
    )
    mag = synth_magnetometer(traj)
    return RawImuStream(
        accel=force,
        gyro=rates,
        mag=mag,
        sample_rate=1.0 / accel_cfg.dt,
        keyframe_rate=traj.frame_rate,
        gravity=gravity,
    )
