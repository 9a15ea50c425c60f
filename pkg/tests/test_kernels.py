"""Kernel backends: closed-form oracles and native/python parity."""

import numpy as np
import pytest

from spanmon import _kernels
from spanmon._kernels import _pyref

try:
    from spanmon._kernels import _native
except ImportError:
    _native = None


def damped_free_decay(omega, zeta, t, q0=1.0):
    wd = omega * np.sqrt(1.0 - zeta**2)
    return np.exp(-zeta * omega * t) * (
        q0 * np.cos(wd * t) + q0 * zeta * omega / wd * np.sin(wd * t)
    )


def test_free_decay_matches_closed_form():
    fs, n = 1000.0, 8000
    omega = 2.0 * np.pi * 4.78
    zeta = 0.01
    force = np.zeros((1, n))
    q, v, a = _kernels.newmark_modal(force, [omega], [zeta], [1.0], 1.0 / fs, q0=[1.0])
    t = np.arange(n) / fs
    exact = damped_free_decay(omega, zeta, t)
    # Newmark period distortion ~ (omega*dt)^2/12 accumulates slowly.
    assert np.max(np.abs(q[0] - exact)) < 5e-3
    # log decrement over one period recovers the damping ratio within 1%
    peaks = [i for i in range(1, n - 1) if q[0, i] > q[0, i - 1] and q[0, i] >= q[0, i + 1]]
    delta = np.log(q[0, peaks[0]] / q[0, peaks[1]])
    zeta_hat = delta / np.sqrt(4.0 * np.pi**2 + delta**2)
    assert abs(zeta_hat - zeta) / zeta < 0.01


def test_steady_state_harmonic_amplitude():
    # Drive one oscillator at 0.5x resonance; compare to |H| closed form.
    fs, n = 1000.0, 40000
    f0, zeta, m = 4.78, 0.02, 2.0
    omega = 2.0 * np.pi * f0
    w_drive = 0.5 * omega
    t = np.arange(n) / fs
    force = np.sin(w_drive * t)[None, :]
    q, _, _ = _kernels.newmark_modal(force, [omega], [zeta], [m], 1.0 / fs)
    r = w_drive / omega
    h = 1.0 / (m * omega**2 * np.sqrt((1 - r**2) ** 2 + (2 * zeta * r) ** 2))
    tail = q[0, n // 2 :]
    assert np.max(np.abs(tail)) == pytest.approx(h, rel=2e-3)


def test_zero_force_zero_state_stays_zero():
    q, v, a = _kernels.newmark_modal(np.zeros((2, 100)), [1.0, 2.0], [0.1, 0.1], [1.0, 1.0], 0.01)
    assert not q.any() and not v.any() and not a.any()


def test_input_validation():
    with pytest.raises(ValueError):
        _kernels.newmark_modal(np.zeros((2, 10)), [1.0], [0.1, 0.1], [1.0, 1.0], 0.01)
    with pytest.raises(ValueError):
        _kernels.newmark_modal(np.zeros((1, 10)), [1.0], [0.1], [1.0], -1.0)
    with pytest.raises(ValueError):
        _kernels.newmark_modal(np.zeros((1, 10)), [1.0], [0.1], [0.0], 0.01)
    with pytest.raises(ValueError):
        _kernels.fir_convolve(np.zeros(3), np.zeros(5))


@pytest.mark.skipif(_native is None, reason="compiled extension not built")
def test_backend_parity_bitexact():
    rng = np.random.default_rng(0)
    m, n = 3, 5001
    force = np.ascontiguousarray(rng.normal(0, 1e3, size=(m, n)))
    omega = 2 * np.pi * np.array([4.78, 19.12, 43.02])
    zeta = np.full(m, 0.013)
    mass = np.full(m, 1.05e5)
    q0 = rng.normal(size=m)
    v0 = rng.normal(size=m)
    out_py = _pyref.newmark_modal_core(force, omega, zeta, mass, 1e-3, q0, v0)
    out_nat = _native.newmark_modal_core(force, omega, zeta, mass, 1e-3, q0, v0)
    for a, b in zip(out_py, out_nat):
        assert np.array_equal(a, b)


def test_fir_convolve_matches_definition():
    rng = np.random.default_rng(2)
    x = rng.normal(size=200)
    h = rng.normal(size=9)
    got = _kernels.fir_convolve(x, h)
    want = [np.dot(h[::-1], x[i : i + 9]) for i in range(192)]
    assert np.allclose(got, want, atol=1e-12)
