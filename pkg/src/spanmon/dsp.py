"""Shared signal-processing kernels.

FIR low-pass design and zero-delay application, decimation, Welch power
spectral density, spectral peak picking with parabolic refinement, and
frequency-domain double integration of acceleration to displacement.
All routines are pure functions and safe for concurrent use.
"""

from dataclasses import dataclass

import numpy as np

from spanmon import _kernels
from spanmon.errors import DomainError

G_M_S2 = 9.80665  # standard gravity, m/s^2


@dataclass(frozen=True)
class FirSpec:
    """Linear-phase FIR low-pass: symmetric taps with unity DC gain."""

    taps: np.ndarray
    group_delay: int

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        object.__setattr__(self, "taps", taps)
        if taps.ndim != 1 or taps.size < 3 or taps.size % 2 == 0:
            raise DomainError("taps must be a 1-D odd-length vector")
        if abs(taps.sum() - 1.0) > 1e-9:
            raise DomainError("taps must sum to 1 (unity DC gain)")
        if not np.allclose(taps, taps[::-1], rtol=0.0, atol=1e-12):
            raise DomainError("taps must be symmetric (linear phase)")
        if self.group_delay != (taps.size - 1) // 2:
            raise DomainError("group_delay must equal (len(taps)-1)/2")


@dataclass(frozen=True)
class Psd:
    """One-sided Welch power spectral density, units amplitude^2/Hz."""

    freqs: np.ndarray
    power: np.ndarray
    df: float
    window: str
    segment_len: int
    overlap: float


def _windowed_sinc(fs, edge_hz, ntaps):
    # Hamming-windowed sinc, normalized to unity DC gain.
    mid = (ntaps - 1) / 2.0
    k = np.arange(ntaps) - mid
    h = 2.0 * edge_hz / fs * np.sinc(2.0 * edge_hz / fs * k)
    w = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(ntaps) / (ntaps - 1))
    h *= w
    return h / h.sum()


def _magnitude(taps, fs, freq_hz):
    k = np.arange(taps.size)
    ph = np.exp(-2j * np.pi * np.atleast_1d(freq_hz)[:, None] * k / fs)
    return np.abs(ph @ taps)


def fir_lowpass_design(fs, cutoff, order=100, stopband_ratio=1.125, stopband_db=40.0):
    """Design a linear-phase low-pass FIR.

    The sinc edge frequency is bisected downward from ``cutoff`` until the
    magnitude response at ``stopband_ratio * cutoff`` falls below
    ``-stopband_db`` dB (a fixed-order windowed sinc centred exactly at the
    cutoff cannot reach that attenuation so close to the edge). DC gain is
    exactly unity by normalization.
    """
    if not (0.0 < cutoff < fs / 2.0):
        raise DomainError(f"cutoff must lie in (0, fs/2), got {cutoff} at fs {fs}")
    order = int(order)
    if order < 2 or order % 2 != 0:
        raise DomainError("order must be a positive even integer")
    ntaps = order + 1
    f_stop = min(stopband_ratio * cutoff, 0.98 * fs / 2.0)
    # 1 dB margin so the delivered attenuation clears the target strictly.
    target = 10.0 ** (-(stopband_db + 1.0) / 20.0)

    lo, hi = cutoff / 4.0, cutoff
    taps = _windowed_sinc(fs, hi, ntaps)
    if _magnitude(taps, fs, f_stop)[0] > target:
        # Shrink the edge until the attenuation target is met at f_stop;
        # keep the widest passband that still meets it.
        if _magnitude(_windowed_sinc(fs, lo, ntaps), fs, f_stop)[0] > target:
            raise DomainError(
                f"order {order} cannot reach -{stopband_db:.0f} dB at {f_stop:g} Hz"
            )
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _magnitude(_windowed_sinc(fs, mid, ntaps), fs, f_stop)[0] > target:
                hi = mid
            else:
                lo = mid
        taps = _windowed_sinc(fs, lo, ntaps)
    return FirSpec(taps=taps, group_delay=order // 2)


def filter_apply(spec, series):
    """Apply a linear-phase FIR with zero net delay.

    Edges are reflection-padded by the group delay so the output has the
    input's length and peaks stay time-aligned with the raw series.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("series must be 1-D")
    if x.size <= spec.taps.size:
        raise DomainError("series must be longer than the filter")
    gd = spec.group_delay
    padded = np.pad(x, gd, mode="reflect")
    return _kernels.fir_convolve(padded, spec.taps)


def decimate(series, factor):
    """Keep every ``factor``-th sample starting at index 0.

    The caller is responsible for low-pass filtering below the new Nyquist
    frequency first.
    """
    factor = int(factor)
    if factor < 1:
        raise DomainError("decimation factor must be >= 1")
    return np.asarray(series)[::factor]


_WINDOWS = {
    "hann": lambda n: 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n),
    "hamming": lambda n: 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n),
    "boxcar": lambda n: np.ones(n),
}


def welch_psd(series, fs, segment_len=1024, overlap=0.5, window="hann"):
    """Welch one-sided PSD estimate (density scaling).

    Segments are mean-detrended, windowed (periodic window), and averaged;
    the integral of the result over frequency approximates the variance of
    the detrended series.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("series must be 1-D")
    segment_len = int(segment_len)
    if segment_len < 2:
        raise DomainError("segment_len must be >= 2")
    if segment_len > x.size:
        raise DomainError("segment longer than series")
    if not (0.0 <= overlap < 1.0):
        raise DomainError("overlap must lie in [0, 1)")
    try:
        win = _WINDOWS[window](segment_len)
    except KeyError:
        raise DomainError(f"unknown window {window!r}") from None

    step = max(1, int(round(segment_len * (1.0 - overlap))))
    scale = 1.0 / (fs * float(np.sum(win * win)))
    acc = np.zeros(segment_len // 2 + 1)
    nseg = 0
    for start in range(0, x.size - segment_len + 1, step):
        seg = x[start : start + segment_len]
        seg = seg - seg.mean()
        spec = np.fft.rfft(seg * win)
        acc += (spec.real * spec.real + spec.imag * spec.imag) * scale
        nseg += 1
    acc /= nseg
    # One-sided: double all bins except DC (and Nyquist for even lengths).
    if segment_len % 2 == 0:
        acc[1:-1] *= 2.0
    else:
        acc[1:] *= 2.0
    freqs = np.fft.rfftfreq(segment_len, d=1.0 / fs)
    return Psd(
        freqs=freqs,
        power=acc,
        df=fs / segment_len,
        window=window,
        segment_len=segment_len,
        overlap=overlap,
    )


def interpolated_peak(psd, band_lo=1.0, band_hi=20.0):
    """Locate the dominant peak in a band, parabolic-refined.

    Returns ``(frequency_hz, power)`` at the vertex of a 3-point parabola
    through the maximum bin and its neighbours, which resolves the peak well
    below the Welch bin width.
    """
    mask = (psd.freqs >= band_lo) & (psd.freqs <= band_hi)
    idx = np.nonzero(mask)[0]
    if idx.size == 0 or band_lo >= band_hi:
        raise DomainError(f"empty frequency band [{band_lo}, {band_hi}]")
    i = idx[np.argmax(psd.power[idx])]
    f, p = psd.freqs[i], psd.power[i]
    if 0 < i < psd.power.size - 1:
        pm, pp = psd.power[i - 1], psd.power[i + 1]
        denom = pm - 2.0 * p + pp
        if denom < 0.0:
            delta = 0.5 * (pm - pp) / denom
            delta = float(np.clip(delta, -0.5, 0.5))
            f = f + delta * psd.df
            p = p - 0.25 * (pm - pp) * delta
    return float(f), float(p)


def peak_frequency(psd, band_lo=1.0, band_hi=20.0):
    """Frequency of maximal spectral power within a band, in Hz."""
    return interpolated_peak(psd, band_lo, band_hi)[0]


def tukey(n, alpha=0.1):
    """Tukey (tapered cosine) window: flat centre, cosine ramps."""
    if n <= 1:
        return np.ones(max(n, 0))
    if alpha <= 0.0:
        return np.ones(n)
    w = np.ones(n)
    edge = int(np.floor(alpha * (n - 1) / 2.0))
    if edge > 0:
        k = np.arange(edge + 1)
        ramp = 0.5 * (1.0 + np.cos(np.pi * (2.0 * k / (alpha * (n - 1)) - 1.0)))
        w[: edge + 1] = ramp
        w[-(edge + 1) :] = ramp[::-1]
    return w


def accel_to_disp(accel_g, fs, hp_cutoff=1.0):
    """Dual integration of acceleration to displacement in the frequency domain.

    Converts g to mm/s^2, Tukey(0.1)-tapers the record against leakage from
    the non-periodic ends, zeroes all spectral content below ``hp_cutoff``
    (drift suppression), divides by -(2 pi f)^2, inverse transforms, tapers
    the residual wrap-around at the edges, and removes the mean. Output is
    in mm and zero-mean; the central part of the record is unaffected by the
    tapers.
    """
    if hp_cutoff <= 0.0 or hp_cutoff >= fs / 2.0:
        raise DomainError("hp_cutoff must lie in (0, fs/2)")
    a = np.asarray(accel_g, dtype=np.float64) * (G_M_S2 * 1e3)
    n = a.size
    if n == 0:
        return np.zeros(0)
    # Remove the mean before tapering: a constant offset must not bleed into
    # the kept band through the taper's edge ramps.
    spec = np.fft.rfft((a - a.mean()) * tukey(n, 0.1))
    f = np.fft.rfftfreq(n, d=1.0 / fs)
    keep = f >= hp_cutoff
    u = np.zeros_like(spec)
    u[keep] = spec[keep] / (-((2.0 * np.pi * f[keep]) ** 2))
    disp = np.fft.irfft(u, n=n)
    disp *= tukey(n, 0.1)
    return disp - disp.mean()
