"""Pure-NumPy reference kernels for serial-chain kinematics and dynamics.

Same signatures and outputs as the compiled ``_kernels`` extension. Frames
follow modified DH: ``T_i = T_{i-1} RotX(alpha_i) TransX(a_i)
RotZ(theta0_i + q_i) TransZ(d_i)``; joint i turns about z_i.
"""
import numpy as np


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def link_frames(alpha, a, d, theta0, q):
    """World rotations (n,3,3) and origins (n,3) of the joint frames."""
    n = q.shape[0]
    Rs = np.empty((n, 3, 3))
    os_ = np.empty((n, 3))
    R = np.eye(3)
    o = np.zeros(3)
    for i in range(n):
        ca, sa = np.cos(alpha[i]), np.sin(alpha[i])
        th = theta0[i] + q[i]
        ct, st = np.cos(th), np.sin(th)
        Rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
        Rz = np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])
        o = o + R @ np.array([a[i], 0.0, 0.0])
        R = R @ Rx
        o = o + R @ np.array([0.0, 0.0, d[i]])
        R = R @ Rz
        Rs[i] = R
        os_[i] = o
    return Rs, os_


def kinematics(alpha, a, d, theta0, tool, q, qd):
    """End-effector pose (4x4), body Jacobian (6,n) and its time derivative."""
    n = q.shape[0]
    Rs, os_ = link_frames(alpha, a, d, theta0, q)
    z = Rs[:, :, 2]
    Re = Rs[-1] @ tool[:3, :3]
    pe = os_[-1] + Rs[-1] @ tool[:3, 3]
    T = np.eye(4)
    T[:3, :3] = Re
    T[:3, 3] = pe

    Jw = np.zeros((6, n))
    Jwd = np.zeros((6, n))
    w_prefix = np.zeros(3)
    for j in range(n):
        lever = pe - os_[j]
        Jw[:3, j] = z[j]
        Jw[3:, j] = _cross(z[j], lever)
    w = Jw[:3] @ qd
    for j in range(n):
        lever = pe - os_[j]
        zd = _cross(w_prefix, z[j])
        # d/dt (p_e - o_j): upstream joints rotate the whole lever, the rest
        # only move p_e
        lever_dot = _cross(w_prefix, lever)
        for k in range(j, n):
            lever_dot = lever_dot + qd[k] * _cross(z[k], pe - os_[k])
        Jwd[:3, j] = zd
        Jwd[3:, j] = _cross(zd, lever) + _cross(z[j], lever_dot)
        w_prefix = w_prefix + qd[j] * z[j]
    W = _hat(w)
    Jwd[:3] -= W @ Jw[:3]
    Jwd[3:] -= W @ Jw[3:]
    Jb = np.vstack([Re.T @ Jw[:3], Re.T @ Jw[3:]])
    Jbd = np.vstack([Re.T @ Jwd[:3], Re.T @ Jwd[3:]])
    return T, Jb, Jbd


def dynamics(alpha, a, d, theta0, mass, com, inertia, gravity, q):
    """Inertia matrix M, its partials dM[k] = dM/dq_k, and gravity torque G."""
    n = q.shape[0]
    Rs, os_ = link_frames(alpha, a, d, theta0, q)
    z = Rs[:, :, 2]
    M = np.zeros((n, n))
    dM = np.zeros((n, n, n))
    G = np.zeros(n)
    for i in range(n):
        c = os_[i] + Rs[i] @ com[i]
        Iw = Rs[i] @ inertia[i] @ Rs[i].T
        Jv = np.zeros((3, n))
        Jr = np.zeros((3, n))
        for j in range(i + 1):
            Jv[:, j] = _cross(z[j], c - os_[j])
            Jr[:, j] = z[j]
        m = mass[i]
        M += m * Jv.T @ Jv + Jr.T @ Iw @ Jr
        G -= m * (gravity @ Jv)
        for k in range(i + 1):
            dJv = np.zeros((3, n))
            dJr = np.zeros((3, n))
            for j in range(i + 1):
                if k <= j:
                    dlev = c - os_[j]
                    dz = _cross(z[k], z[j])
                    dJv[:, j] = _cross(dz, dlev) + _cross(z[j], _cross(z[k], dlev))
                    dJr[:, j] = dz
                else:
                    dJv[:, j] = _cross(z[j], _cross(z[k], c - os_[k]))
            Zk = _hat(z[k])
            dIw = Zk @ Iw - Iw @ Zk
            A = m * dJv.T @ Jv + dJr.T @ Iw @ Jr
            dM[k] += A + A.T + Jr.T @ dIw @ Jr
    return M, dM, G
