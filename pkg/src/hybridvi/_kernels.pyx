# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled serial-chain kinematics and dynamics kernels.

Mirrors ``_kernels_py`` exactly (modified DH frames, body Jacobian,
analytic inertia partials).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    cdef double x = a[1] * b[2] - a[2] * b[1]
    cdef double y = a[2] * b[0] - a[0] * b[2]
    cdef double z = a[0] * b[1] - a[1] * b[0]
    out[0] = x
    out[1] = y
    out[2] = z


cdef void frames(const double[::1] alpha, const double[::1] a, const double[::1] d,
                 const double[::1] theta0, const double[::1] q,
                 double[:, :, ::1] Rs, double[:, ::1] os) noexcept nogil:
    cdef int n = q.shape[0]
    cdef double R[3][3]
    cdef double Rt[3][3]
    cdef double o[3]
    cdef int i, r, c
    cdef double ca, sa, ct, st, c1, c2
    for r in range(3):
        o[r] = 0.0
        for c in range(3):
            R[r][c] = 1.0 if r == c else 0.0
    for i in range(n):
        ca = cos(alpha[i]); sa = sin(alpha[i])
        ct = cos(theta0[i] + q[i]); st = sin(theta0[i] + q[i])
        # o += R * (a, 0, 0)
        for r in range(3):
            o[r] += R[r][0] * a[i]
        # R = R * Rx
        for r in range(3):
            c1 = R[r][1]; c2 = R[r][2]
            R[r][1] = c1 * ca + c2 * sa
            R[r][2] = -c1 * sa + c2 * ca
        for r in range(3):
            o[r] += R[r][2] * d[i]
        # R = R * Rz
        for r in range(3):
            c1 = R[r][0]; c2 = R[r][1]
            R[r][0] = c1 * ct + c2 * st
            R[r][1] = -c1 * st + c2 * ct
        for r in range(3):
            os[i, r] = o[r]
            for c in range(3):
                Rs[i, r, c] = R[r][c]


def link_frames(alpha, a, d, theta0, q):
    cdef int n = q.shape[0]
    Rs = np.empty((n, 3, 3))
    os_ = np.empty((n, 3))
    frames(alpha, a, d, theta0, q, Rs, os_)
    return Rs, os_


def kinematics(const double[::1] alpha, const double[::1] a, const double[::1] d,
               const double[::1] theta0, const double[:, ::1] tool,
               const double[::1] q, const double[::1] qd):
    cdef int n = q.shape[0]
    cdef double[:, :, ::1] Rs = np.empty((n, 3, 3))
    cdef double[:, ::1] os = np.empty((n, 3))
    T_arr = np.eye(4)
    Jb_arr = np.zeros((6, n))
    Jbd_arr = np.zeros((6, n))
    cdef double[:, ::1] T = T_arr
    cdef double[:, ::1] Jb = Jb_arr
    cdef double[:, ::1] Jbd = Jbd_arr
    cdef double[:, ::1] Jw = np.zeros((6, n))
    cdef double[:, ::1] Jwd = np.zeros((6, n))
    cdef double z[3]
    cdef double zk[3]
    cdef double pe[3]
    cdef double lever[3]
    cdef double levk[3]
    cdef double lev_dot[3]
    cdef double zd[3]
    cdef double tmp[3]
    cdef double tmp2[3]
    cdef double wpre[3]
    cdef double w[3]
    cdef double Re[3][3]
    cdef int i, j, k, r, c
    with nogil:
        frames(alpha, a, d, theta0, q, Rs, os)
        for r in range(3):
            pe[r] = os[n - 1, r]
            for c in range(3):
                pe[r] += Rs[n - 1, r, c] * tool[c, 3]
                Re[r][c] = 0.0
                for k in range(3):
                    Re[r][c] += Rs[n - 1, r, k] * tool[k, c]
            T[r, 3] = pe[r]
            for c in range(3):
                T[r, c] = Re[r][c]
        for r in range(3):
            w[r] = 0.0
            wpre[r] = 0.0
        for j in range(n):
            for r in range(3):
                z[r] = Rs[j, r, 2]
                lever[r] = pe[r] - os[j, r]
            cross3(z, lever, tmp)
            for r in range(3):
                Jw[r, j] = z[r]
                Jw[3 + r, j] = tmp[r]
                w[r] += z[r] * qd[j]
        for j in range(n):
            for r in range(3):
                z[r] = Rs[j, r, 2]
                lever[r] = pe[r] - os[j, r]
            cross3(wpre, z, zd)
            cross3(wpre, lever, lev_dot)
            for k in range(j, n):
                for r in range(3):
                    zk[r] = Rs[k, r, 2]
                    levk[r] = pe[r] - os[k, r]
                cross3(zk, levk, tmp)
                for r in range(3):
                    lev_dot[r] += qd[k] * tmp[r]
            cross3(zd, lever, tmp)
            cross3(z, lev_dot, tmp2)
            for r in range(3):
                Jwd[r, j] = zd[r]
                Jwd[3 + r, j] = tmp[r] + tmp2[r]
                wpre[r] += qd[j] * z[r]
        # subtract hat(w) J, then rotate into the body frame
        for j in range(n):
            for c in range(2):
                for r in range(3):
                    tmp[r] = Jw[3 * c + r, j]
                cross3(w, tmp, tmp2)
                for r in range(3):
                    Jwd[3 * c + r, j] -= tmp2[r]
            for c in range(2):
                for r in range(3):
                    Jb[3 * c + r, j] = 0.0
                    Jbd[3 * c + r, j] = 0.0
                    for k in range(3):
                        Jb[3 * c + r, j] += Re[k][r] * Jw[3 * c + k, j]
                        Jbd[3 * c + r, j] += Re[k][r] * Jwd[3 * c + k, j]
    return T_arr, Jb_arr, Jbd_arr


def dynamics(const double[::1] alpha, const double[::1] a, const double[::1] d,
             const double[::1] theta0, const double[::1] mass,
             const double[:, ::1] com, const double[:, :, ::1] inertia,
             const double[::1] gravity, const double[::1] q):
    cdef int n = q.shape[0]
    cdef double[:, :, ::1] Rs = np.empty((n, 3, 3))
    cdef double[:, ::1] os = np.empty((n, 3))
    M_arr = np.zeros((n, n))
    dM_arr = np.zeros((n, n, n))
    G_arr = np.zeros(n)
    cdef double[:, ::1] M = M_arr
    cdef double[:, :, ::1] dM = dM_arr
    cdef double[::1] G = G_arr
    cdef double[:, ::1] Jv = np.zeros((3, n))
    cdef double[:, ::1] Jr = np.zeros((3, n))
    cdef double[:, ::1] dJv = np.zeros((3, n))
    cdef double[:, ::1] dJr = np.zeros((3, n))
    cdef double[:, ::1] IJr = np.zeros((3, n))
    cdef double[:, ::1] dIJr = np.zeros((3, n))
    cdef double Iw[3][3]
    cdef double dIw[3][3]
    cdef double tmpm[3][3]
    cdef double cpt[3]
    cdef double zj[3]
    cdef double zk[3]
    cdef double lev[3]
    cdef double dz[3]
    cdef double t1[3]
    cdef double t2[3]
    cdef double m, s, A_jl
    cdef int i, j, k, l, r, c, e
    with nogil:
        frames(alpha, a, d, theta0, q, Rs, os)
        for i in range(n):
            m = mass[i]
            for r in range(3):
                cpt[r] = os[i, r]
                for c in range(3):
                    cpt[r] += Rs[i, r, c] * com[i, c]
            # Iw = R I R^T
            for r in range(3):
                for c in range(3):
                    s = 0.0
                    for e in range(3):
                        s += inertia[i, r, e] * Rs[i, c, e]
                    tmpm[r][c] = s
            for r in range(3):
                for c in range(3):
                    s = 0.0
                    for e in range(3):
                        s += Rs[i, r, e] * tmpm[e][c]
                    Iw[r][c] = s
            for j in range(n):
                for r in range(3):
                    Jv[r, j] = 0.0
                    Jr[r, j] = 0.0
            for j in range(i + 1):
                for r in range(3):
                    zj[r] = Rs[j, r, 2]
                    lev[r] = cpt[r] - os[j, r]
                cross3(zj, lev, t1)
                for r in range(3):
                    Jv[r, j] = t1[r]
                    Jr[r, j] = zj[r]
            for j in range(i + 1):
                for r in range(3):
                    IJr[r, j] = Iw[r][0] * Jr[0, j] + Iw[r][1] * Jr[1, j] + Iw[r][2] * Jr[2, j]
            for j in range(i + 1):
                G[j] -= m * (gravity[0] * Jv[0, j] + gravity[1] * Jv[1, j] + gravity[2] * Jv[2, j])
                for l in range(i + 1):
                    M[j, l] += m * (Jv[0, j] * Jv[0, l] + Jv[1, j] * Jv[1, l] + Jv[2, j] * Jv[2, l]) \
                        + Jr[0, j] * IJr[0, l] + Jr[1, j] * IJr[1, l] + Jr[2, j] * IJr[2, l]
            for k in range(i + 1):
                for r in range(3):
                    zk[r] = Rs[k, r, 2]
                for j in range(i + 1):
                    for r in range(3):
                        zj[r] = Rs[j, r, 2]
                    if k <= j:
                        for r in range(3):
                            lev[r] = cpt[r] - os[j, r]
                        cross3(zk, zj, dz)
                        cross3(dz, lev, t1)
                        cross3(zk, lev, t2)
                        cross3(zj, t2, lev)
                        for r in range(3):
                            dJv[r, j] = t1[r] + lev[r]
                            dJr[r, j] = dz[r]
                    else:
                        for r in range(3):
                            lev[r] = cpt[r] - os[k, r]
                        cross3(zk, lev, t1)
                        cross3(zj, t1, t2)
                        for r in range(3):
                            dJv[r, j] = t2[r]
                            dJr[r, j] = 0.0
                # dIw = hat(zk) Iw - Iw hat(zk)
                for c in range(3):
                    for r in range(3):
                        t1[r] = Iw[r][c]
                    cross3(zk, t1, t2)
                    for r in range(3):
                        tmpm[r][c] = t2[r]
                for r in range(3):
                    for c in range(3):
                        t1[c] = Iw[r][c]
                    # row r of Iw hat(zk) = -(hat(zk) Iw^T row)... Iw symmetric
                    cross3(zk, t1, t2)
                    for c in range(3):
                        dIw[r][c] = tmpm[r][c] + t2[c]
                for j in range(i + 1):
                    for r in range(3):
                        dIJr[r, j] = dIw[r][0] * Jr[0, j] + dIw[r][1] * Jr[1, j] + dIw[r][2] * Jr[2, j]
                for j in range(i + 1):
                    for l in range(i + 1):
                        A_jl = m * (dJv[0, j] * Jv[0, l] + dJv[1, j] * Jv[1, l] + dJv[2, j] * Jv[2, l]) \
                            + dJr[0, j] * IJr[0, l] + dJr[1, j] * IJr[1, l] + dJr[2, j] * IJr[2, l]
                        dM[k, j, l] += A_jl + Jr[0, j] * dIJr[0, l] + Jr[1, j] * dIJr[1, l] + Jr[2, j] * dIJr[2, l]
                        dM[k, l, j] += A_jl
    return M_arr, dM_arr, G_arr
