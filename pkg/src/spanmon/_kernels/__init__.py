"""Numerical hot kernels with a compiled core and a pure-Python fallback.

The compiled extension (``spanmon._kernels._native``, Cython) is preferred;
if it is missing, or ``SPANMON_PURE_PYTHON=1`` is set, the NumPy reference
implementation is used instead. ``BACKEND`` reports which one is active.
Both backends are exercised against each other in the test suite and timed
against each other by ``benchmarks/bench_kernels.py``.
"""

import os

import numpy as np

if os.environ.get("SPANMON_PURE_PYTHON", "") not in ("", "0"):
    from spanmon._kernels import _pyref as _impl
else:
    try:
        from spanmon._kernels import _native as _impl
    except ImportError:
        from spanmon._kernels import _pyref as _impl

BACKEND = _impl.BACKEND


def _vec(x, m, name):
    out = np.ascontiguousarray(x, dtype=np.float64)
    if out.shape != (m,):
        raise ValueError(f"{name} must have shape ({m},), got {out.shape}")
    return out


def newmark_modal(force, omega, zeta, mass, dt, q0=None, v0=None):
    """Integrate decoupled modal oscillators under sampled forcing.

    Solves, per mode j::

        mass[j] q'' + 2 zeta[j] omega[j] mass[j] q' + mass[j] omega[j]^2 q = force[j, i]

    with the unconditionally stable constant-average-acceleration Newmark
    scheme (gamma = 1/2, beta = 1/4) at fixed step ``dt``.

    Parameters
    ----------
    force : (modes, samples) array of modal forces, one column per time step.
    omega : (modes,) circular natural frequencies, rad/s.
    zeta : (modes,) damping ratios.
    mass : (modes,) modal masses.
    dt : time step, s.
    q0, v0 : optional (modes,) initial displacement and velocity.

    Returns
    -------
    (q, v, a) : displacement, velocity, and acceleration, each (modes, samples).
    """
    f = np.ascontiguousarray(force, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError("force must be a (modes, samples) array")
    m = f.shape[0]
    w = _vec(omega, m, "omega")
    z = _vec(zeta, m, "zeta")
    mm = _vec(mass, m, "mass")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if np.any(mm <= 0.0):
        raise ValueError("modal masses must be positive")
    q0 = np.zeros(m) if q0 is None else _vec(q0, m, "q0")
    v0 = np.zeros(m) if v0 is None else _vec(v0, m, "v0")
    return _impl.newmark_modal_core(f, w, z, mm, dt, q0, v0)


def fir_convolve(x, taps):
    """'valid'-mode convolution of a padded series with FIR taps.

    Delegates to numpy's compiled convolution on every backend; a scalar
    Cython loop measured slower than numpy's SIMD path, so the extension
    only carries the Newmark recurrence (see benchmarks/bench_kernels.py).
    """
    xx = np.ascontiguousarray(x, dtype=np.float64)
    tt = np.ascontiguousarray(taps, dtype=np.float64)
    if xx.size < tt.size:
        raise ValueError("series shorter than the tap vector")
    return np.convolve(xx, tt, mode="valid")
