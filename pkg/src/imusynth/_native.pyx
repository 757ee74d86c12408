# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of the pure-Python ESKF loop in fusion.py.

Same operation order, same formulas, fixed-size C arrays instead of numpy
temporaries. State layout: q (w,x,y,z), bias (3), P row-major 6x6.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, fabs, sin, sqrt

cnp.import_array()

cdef double SMALL_ANGLE = 1e-8


cdef void quat_exp_c(const double* phi, double* q) noexcept nogil:
    cdef double angle = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    cdef double half = 0.5 * angle
    cdef double s
    if angle < SMALL_ANGLE:
        s = 0.5 - angle * angle / 48.0
    else:
        s = sin(half) / angle
    q[0] = cos(half)
    q[1] = s * phi[0]
    q[2] = s * phi[1]
    q[3] = s * phi[2]


cdef void quat_mul_c(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


cdef void quat_normalize_c(double* q) noexcept nogil:
    cdef double n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    q[0] /= n
    q[1] /= n
    q[2] /= n
    q[3] /= n


cdef void quat_to_mat_c(const double* q, double* r) noexcept nogil:
    cdef double n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    cdef double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n
    r[0] = 1.0 - 2.0 * (y * y + z * z)
    r[1] = 2.0 * (x * y - w * z)
    r[2] = 2.0 * (x * z + w * y)
    r[3] = 2.0 * (x * y + w * z)
    r[4] = 1.0 - 2.0 * (x * x + z * z)
    r[5] = 2.0 * (y * z - w * x)
    r[6] = 2.0 * (x * z - w * y)
    r[7] = 2.0 * (y * z + w * x)
    r[8] = 1.0 - 2.0 * (x * x + y * y)


cdef void exp_so3_c(const double* phi, double* r) noexcept nogil:
    """Rodrigues with the same small-angle series as the Python twin."""
    cdef double t = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    cdef double a, b
    if t < SMALL_ANGLE:
        a = 1.0 - t * t / 6.0
        b = 0.5 - t * t / 24.0
    else:
        a = sin(t) / t
        b = (1.0 - cos(t)) / (t * t)
    cdef double kx = phi[0], ky = phi[1], kz = phi[2]
    # I + a*K + b*K^2 with K = skew(phi)
    r[0] = 1.0 + b * (-ky * ky - kz * kz)
    r[1] = -a * kz + b * kx * ky
    r[2] = a * ky + b * kx * kz
    r[3] = a * kz + b * kx * ky
    r[4] = 1.0 + b * (-kx * kx - kz * kz)
    r[5] = -a * kx + b * ky * kz
    r[6] = -a * ky + b * kx * kz
    r[7] = a * kx + b * ky * kz
    r[8] = 1.0 + b * (-kx * kx - ky * ky)


cdef void mat66_mul(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(6):
        for j in range(6):
            acc = 0.0
            for k in range(6):
                acc += a[6 * i + k] * b[6 * k + j]
            out[6 * i + j] = acc


cdef void mat66_mul_bt(const double* a, const double* b, double* out) noexcept nogil:
    """out = a @ b.T"""
    cdef int i, j, k
    cdef double acc
    for i in range(6):
        for j in range(6):
            acc = 0.0
            for k in range(6):
                acc += a[6 * i + k] * b[6 * j + k]
            out[6 * i + j] = acc


cdef void symmetrize6(double* p) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(6):
        for j in range(i + 1, 6):
            v = 0.5 * (p[6 * i + j] + p[6 * j + i])
            p[6 * i + j] = v
            p[6 * j + i] = v


cdef int solve3(const double* s, const double* rhs, double* x) noexcept nogil:
    """Gaussian elimination with partial pivoting for a 3x3 system, three
    right-hand sides (rhs and x are 3x3, column c is one rhs)."""
    cdef double a[9]
    cdef double b[9]
    cdef int i, j, k, piv
    cdef double mx, f, tmp
    for i in range(9):
        a[i] = s[i]
        b[i] = rhs[i]
    for k in range(3):
        piv = k
        mx = fabs(a[3 * k + k])
        for i in range(k + 1, 3):
            if fabs(a[3 * i + k]) > mx:
                mx = fabs(a[3 * i + k])
                piv = i
        if mx == 0.0:
            return 1
        if piv != k:
            for j in range(3):
                tmp = a[3 * k + j]; a[3 * k + j] = a[3 * piv + j]; a[3 * piv + j] = tmp
                tmp = b[3 * k + j]; b[3 * k + j] = b[3 * piv + j]; b[3 * piv + j] = tmp
        for i in range(k + 1, 3):
            f = a[3 * i + k] / a[3 * k + k]
            for j in range(k, 3):
                a[3 * i + j] -= f * a[3 * k + j]
            for j in range(3):
                b[3 * i + j] -= f * b[3 * k + j]
    for k in range(2, -1, -1):
        for j in range(3):
            f = b[3 * k + j]
            for i in range(k + 1, 3):
                f -= a[3 * k + i] * x[3 * i + j]
            x[3 * k + j] = f / a[3 * k + k]
    return 0


cdef void apply_update(double* q, double* bias, double* p,
                       const double* h, int mdim, const double* nu,
                       double r_scalar) noexcept nogil:
    """Kalman step with Joseph covariance and error injection; h is mdim x 6,
    measurement covariance r_scalar * I."""
    cdef double pht[18]      # 6 x mdim
    cdef double s_mat[9]
    cdef double k_gain[18]   # 6 x mdim
    cdef double dx[6]
    cdef double ikh[36]
    cdef double tmp[36]
    cdef double newp[36]
    cdef double dq[4]
    cdef double qout[4]
    cdef int i, j, k2

    for i in range(6):
        for j in range(mdim):
            pht[mdim * i + j] = 0.0
            for k2 in range(6):
                pht[mdim * i + j] += p[6 * i + k2] * h[6 * j + k2]
    for i in range(mdim):
        for j in range(mdim):
            s_mat[mdim * i + j] = (r_scalar if i == j else 0.0)
            for k2 in range(6):
                s_mat[mdim * i + j] += h[6 * i + k2] * pht[mdim * k2 + j]
    if mdim == 1:
        for i in range(6):
            k_gain[i] = pht[i] / s_mat[0]
    else:
        # K = PHt S^-1 via S K^T = (PHt)^T, split into two 3-column solves
        _solve_k(s_mat, pht, k_gain)

    for i in range(6):
        dx[i] = 0.0
        for j in range(mdim):
            dx[i] += k_gain[mdim * i + j] * nu[j]

    for i in range(6):
        for j in range(6):
            ikh[6 * i + j] = (1.0 if i == j else 0.0)
            for k2 in range(mdim):
                ikh[6 * i + j] -= k_gain[mdim * i + k2] * h[6 * k2 + j]
    mat66_mul(ikh, p, tmp)
    mat66_mul_bt(tmp, ikh, newp)
    for i in range(6):
        for j in range(6):
            for k2 in range(mdim):
                newp[6 * i + j] += k_gain[mdim * i + k2] * r_scalar * k_gain[mdim * j + k2]
    for i in range(36):
        p[i] = newp[i]
    symmetrize6(p)

    quat_exp_c(dx, dq)
    quat_mul_c(q, dq, qout)
    quat_normalize_c(qout)
    for i in range(4):
        q[i] = qout[i]
    for i in range(3):
        bias[i] += dx[3 + i]


cdef void _solve_k(const double* s_mat, const double* pht, double* k_gain) noexcept nogil:
    """K (6x3) from S (3x3) and PHt (6x3): solve S X = PHt_row_block^T twice."""
    cdef double rhs[9]
    cdef double x[9]
    cdef int blk, i, j
    for blk in range(2):
        for i in range(3):
            for j in range(3):
                rhs[3 * i + j] = pht[3 * (3 * blk + j) + i]
        solve3(s_mat, rhs, x)
        for i in range(3):
            for j in range(3):
                k_gain[3 * (3 * blk + j) + i] = x[3 * i + j]


def fuse_loop(double[:, ::1] accel, double[:, ::1] gyro, double[:, ::1] mag,
              double[::1] q0, double[:, ::1] p0,
              int n_ratio, double dt,
              double gyro_white, double gyro_walk,
              double accel_white_ps, double mag_white,
              double accel_dev_thresh, double g,
              int use_mag,
              double z_gyro_thresh, double z_accel_thresh, int z_window):
    cdef int n = accel.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] quats = np.empty((n, 4))
    cdef double[:, ::1] qv = quats

    cdef double q[4]
    cdef double bias[3]
    cdef double p[36]
    cdef double omega[3]
    cdef double dq[4]
    cdef double qn[4]
    cdef double a_mat[9]
    cdef double f_mat[36]
    cdef double tmp66[36]
    cdef double rot[9]
    cdef double h[18]
    cdef double nu[3]
    cdef double h_pred[3]
    cdef double u[3]
    cdef double m_vec[3]
    cdef double z_mean[3]
    cdef double norm_a, dev, rho, psi, r_meas
    cdef double du0, du1, bx, by, bz
    cdef int s, i, j, kk, n_grav = 0, n_mag = 0, n_zupt = 0
    cdef int gyro_run = 0, accel_run = 0
    cdef double q_g = gyro_white * gyro_white * dt
    cdef double q_b = gyro_walk * gyro_walk * dt
    cdef double mphi[3]

    for i in range(4):
        q[i] = q0[i]
    for i in range(3):
        bias[i] = 0.0
    for i in range(6):
        for j in range(6):
            p[6 * i + j] = p0[i, j]

    # accel sample 0 feeds the gate run length like the Python twin's windows
    dev = fabs(sqrt(accel[0, 0] ** 2 + accel[0, 1] ** 2 + accel[0, 2] ** 2) - g)
    accel_run = 1 if dev < z_accel_thresh else 0

    for i in range(4):
        qv[0, i] = q[i]

    for s in range(1, n):
        # ---- predict with gyro[s-1]
        for i in range(3):
            omega[i] = gyro[s - 1, i] - bias[i]
            mphi[i] = omega[i] * dt
        quat_exp_c(mphi, dq)
        quat_mul_c(q, dq, qn)
        quat_normalize_c(qn)
        for i in range(4):
            q[i] = qn[i]
        for i in range(3):
            mphi[i] = -omega[i] * dt
        exp_so3_c(mphi, a_mat)
        for i in range(36):
            f_mat[i] = 0.0
        for i in range(3):
            for j in range(3):
                f_mat[6 * i + j] = a_mat[3 * i + j]
            f_mat[6 * i + (3 + i)] = -dt
            f_mat[6 * (3 + i) + (3 + i)] = 1.0
        mat66_mul(f_mat, p, tmp66)
        mat66_mul_bt(tmp66, f_mat, p)
        for i in range(3):
            p[6 * i + i] += q_g
            p[6 * (3 + i) + (3 + i)] += q_b

        # ---- ZUPT run lengths (gyro sample s-1, accel sample s)
        norm_a = sqrt(gyro[s - 1, 0] ** 2 + gyro[s - 1, 1] ** 2 + gyro[s - 1, 2] ** 2)
        gyro_run = gyro_run + 1 if norm_a < z_gyro_thresh else 0
        norm_a = sqrt(accel[s, 0] ** 2 + accel[s, 1] ** 2 + accel[s, 2] ** 2)
        dev = fabs(norm_a - g)
        accel_run = accel_run + 1 if dev < z_accel_thresh else 0

        # ---- gravity update, gated on |''f'' - g|
        if dev < accel_dev_thresh:
            quat_to_mat_c(q, rot)
            for i in range(3):
                h_pred[i] = rot[3 * 2 + i] * g
                nu[i] = accel[s, i] - h_pred[i]
            for i in range(18):
                h[i] = 0.0
            # H[:, :3] = skew(h_pred)
            h[1] = -h_pred[2]; h[2] = h_pred[1]
            h[6] = h_pred[2]; h[8] = -h_pred[0]
            h[12] = -h_pred[1]; h[13] = h_pred[0]
            r_meas = (5.0 * accel_white_ps) * (5.0 * accel_white_ps)
            apply_update(q, bias, p, h, 3, nu, r_meas)
            n_grav += 1

        # ---- magnetometer update at keyframe samples
        if use_mag and s % n_ratio == 0:
            kk = s // n_ratio
            for i in range(3):
                m_vec[i] = mag[kk, i]
            quat_to_mat_c(q, rot)
            for i in range(3):
                u[i] = rot[3 * i + 0] * m_vec[0] + rot[3 * i + 1] * m_vec[1] + rot[3 * i + 2] * m_vec[2]
            rho = sqrt(u[0] * u[0] + u[1] * u[1])
            if rho >= 0.1:
                psi = atan2(u[1], u[0])
                du0 = -u[1] / (rho * rho)
                du1 = u[0] / (rho * rho)
                # B = rot @ skew(m); H row = -(du0, du1, 0) @ B
                bx = m_vec[0]; by = m_vec[1]; bz = m_vec[2]
                for i in range(18):
                    h[i] = 0.0
                h[0] = -(du0 * (rot[1] * bz - rot[2] * by) + du1 * (rot[4] * bz - rot[5] * by))
                h[1] = -(du0 * (rot[2] * bx - rot[0] * bz) + du1 * (rot[5] * bx - rot[3] * bz))
                h[2] = -(du0 * (rot[0] * by - rot[1] * bx) + du1 * (rot[3] * by - rot[4] * bx))
                nu[0] = -psi
                r_meas = (3.0 * mag_white) * (3.0 * mag_white)
                apply_update(q, bias, p, h, 1, nu, r_meas)
                n_mag += 1

        # ---- ZUPT bias refinement
        if s >= z_window and gyro_run >= z_window and accel_run >= z_window:
            for i in range(3):
                z_mean[i] = 0.0
            for j in range(s - z_window, s):
                for i in range(3):
                    z_mean[i] += gyro[j, i]
            for i in range(3):
                z_mean[i] /= z_window
                nu[i] = z_mean[i] - bias[i]
            for i in range(18):
                h[i] = 0.0
            h[3] = 1.0
            h[6 + 4] = 1.0
            h[12 + 5] = 1.0
            r_meas = (gyro_white * gyro_white * (1.0 / dt)) / z_window
            apply_update(q, bias, p, h, 3, nu, r_meas)
            n_zupt += 1

        for i in range(4):
            qv[s, i] = q[i]

    return quats, n_grav, n_mag, n_zupt
