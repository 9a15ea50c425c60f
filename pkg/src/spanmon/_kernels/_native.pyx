# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Newmark modal time stepping and FIR convolution."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"


def newmark_modal_core(double[:, ::1] force, double[::1] omega, double[::1] zeta,
                       double[::1] mass, double dt, double[::1] q0, double[::1] v0):
    cdef Py_ssize_t m = force.shape[0]
    cdef Py_ssize_t n = force.shape[1]
    q_arr = np.zeros((m, n))
    v_arr = np.zeros((m, n))
    a_arr = np.zeros((m, n))
    if n == 0:
        return q_arr, v_arr, a_arr

    cdef double[:, ::1] q = q_arr
    cdef double[:, ::1] v = v_arr
    cdef double[:, ::1] a = a_arr

    cdef double beta = 0.25
    cdef double gamma = 0.5
    cdef double k, c, a1, a2, a3, k_eff, c1, c2, c3, d1, d2, d3
    cdef double qp, vp, ap, qi
    cdef Py_ssize_t j, i

    for j in range(m):
        k = mass[j] * omega[j] * omega[j]
        c = 2.0 * zeta[j] * omega[j] * mass[j]
        q[j, 0] = q0[j]
        v[j, 0] = v0[j]
        a[j, 0] = (force[j, 0] - c * v0[j] - k * q0[j]) / mass[j]

        a1 = mass[j] / (beta * dt * dt) + c * gamma / (beta * dt)
        a2 = mass[j] / (beta * dt) + c * (gamma / beta - 1.0)
        a3 = mass[j] * (0.5 / beta - 1.0) + c * dt * (0.5 * gamma / beta - 1.0)
        k_eff = k + a1
        c1 = gamma / (beta * dt)
        c2 = 1.0 - gamma / beta
        c3 = dt * (1.0 - 0.5 * gamma / beta)
        d1 = 1.0 / (beta * dt * dt)
        d2 = 1.0 / (beta * dt)
        d3 = 0.5 / beta - 1.0

        for i in range(1, n):
            qp = q[j, i - 1]
            vp = v[j, i - 1]
            ap = a[j, i - 1]
            qi = (force[j, i] + a1 * qp + a2 * vp + a3 * ap) / k_eff
            q[j, i] = qi
            v[j, i] = c1 * (qi - qp) + c2 * vp + c3 * ap
            a[j, i] = d1 * (qi - qp) - d2 * vp - d3 * ap

    return q_arr, v_arr, a_arr


