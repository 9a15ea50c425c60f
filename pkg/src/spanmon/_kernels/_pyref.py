"""Pure-NumPy reference implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced off via
SPANMON_PURE_PYTHON=1). Semantically identical to ``_native``; the Newmark
recurrence is vectorized across modes but necessarily sequential in time.
"""

import numpy as np

BACKEND = "python"


def newmark_modal_core(force, omega, zeta, mass, dt, q0, v0):
    m, n = force.shape
    q = np.zeros((m, n))
    v = np.zeros((m, n))
    a = np.zeros((m, n))
    if n == 0:
        return q, v, a

    k = mass * omega * omega
    c = 2.0 * zeta * omega * mass

    q[:, 0] = q0
    v[:, 0] = v0
    a[:, 0] = (force[:, 0] - c * v0 - k * q0) / mass

    # Constant-average-acceleration Newmark (gamma = 1/2, beta = 1/4).
    beta = 0.25
    gamma = 0.5
    a1 = mass / (beta * dt * dt) + c * gamma / (beta * dt)
    a2 = mass / (beta * dt) + c * (gamma / beta - 1.0)
    a3 = mass * (0.5 / beta - 1.0) + c * dt * (0.5 * gamma / beta - 1.0)
    k_eff = k + a1

    c1 = gamma / (beta * dt)
    c2 = 1.0 - gamma / beta
    c3 = dt * (1.0 - 0.5 * gamma / beta)
    d1 = 1.0 / (beta * dt * dt)
    d2 = 1.0 / (beta * dt)
    d3 = 0.5 / beta - 1.0

    for i in range(1, n):
        qp = q[:, i - 1]
        vp = v[:, i - 1]
        ap = a[:, i - 1]
        qi = (force[:, i] + a1 * qp + a2 * vp + a3 * ap) / k_eff
        q[:, i] = qi
        v[:, i] = c1 * (qi - qp) + c2 * vp + c3 * ap
        a[:, i] = d1 * (qi - qp) - d2 * vp - d3 * ap
    return q, v, a
