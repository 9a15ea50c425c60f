"""Reference-free displacement estimation by strain/acceleration fusion.

The strain channels are projected through the pseudo-inverse of a curvature
mode-shape matrix into modal coordinates, giving a displacement-shaped
series whose amplitude is off by the (unknown) neutral-axis depth. The
vertical acceleration channel is double-integrated in the frequency domain
to a displacement that is amplitude-true near the dominant natural
frequency but misses the quasi-static content. Matching the two spectra at
the dominant frequency yields the scaling factor that calibrates the
strain-shaped series to physical units, and its reciprocal is the
equivalent neutral axis in mm, a load-path health indicator comparable
across girders.
"""

from dataclasses import dataclass, field

import numpy as np

from spanmon import dsp
from spanmon.beam import curvature_mode_shapes, mode_shapes
from spanmon.errors import (
    BasisError,
    ConfigError,
    DegenerateScalingError,
    DomainError,
    NoPeakError,
)


@dataclass(frozen=True)
class ModeBasis:
    """Displacement and strain mode shapes evaluated at the sensor layout.

    ``disp_modes`` rows follow the output positions (unit-normalized
    columns); ``strain_modes`` rows follow the gauges and are built as pure
    curvature shapes (unit neutral-axis depth, span in m), so the fusion
    scaling factor absorbs the physical depth.
    """

    disp_modes: np.ndarray  # (outputs, modes)
    strain_modes: np.ndarray  # (gauges, modes)
    output_positions_m: tuple = ()
    gauge_positions_m: tuple = ()

    def __post_init__(self):
        disp = np.atleast_2d(np.asarray(self.disp_modes, dtype=np.float64))
        strain = np.atleast_2d(np.asarray(self.strain_modes, dtype=np.float64))
        object.__setattr__(self, "disp_modes", disp)
        object.__setattr__(self, "strain_modes", strain)
        if disp.shape[1] != strain.shape[1]:
            raise BasisError("displacement and strain bases disagree on mode count")
        norms = np.max(np.abs(disp), axis=0)
        if np.any(norms <= 0):
            raise BasisError("displacement basis has a null column")

    @property
    def mode_count(self):
        return self.disp_modes.shape[1]

    @classmethod
    def from_beam(cls, beam, output_positions=None):
        outputs = tuple(output_positions or beam.accel_positions_m)
        return cls(
            disp_modes=mode_shapes(beam, outputs),
            strain_modes=curvature_mode_shapes(beam, beam.gauge_positions_m),
            output_positions_m=outputs,
            gauge_positions_m=tuple(beam.gauge_positions_m),
        )

    def to_dict(self):
        return {
            "disp_modes": self.disp_modes.tolist(),
            "strain_modes": self.strain_modes.tolist(),
            "output_positions_m": list(self.output_positions_m),
            "gauge_positions_m": list(self.gauge_positions_m),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class FusionConfig:
    """Channel designation and spectral settings for the fusion pipeline."""

    accel_channel: str = "az"
    strain_channels: tuple = ("s1", "s2", "s3")
    target_output: int = 0
    hp_cutoff_hz: float = 1.0
    band_lo_hz: float = 1.0
    band_hi_hz: float = 20.0
    welch_segment: int = 1024
    welch_overlap: float = 0.5
    welch_window: str = "hann"
    min_peak_prominence: float = 3.0
    detrend: str = "median"  # baseline estimator for strain: median or mean
    alpha_direction: str = "match"  # "match" or "printed" (reported alpha only)

    def __post_init__(self):
        object.__setattr__(self, "strain_channels", tuple(self.strain_channels))
        if self.detrend not in ("median", "mean"):
            raise ConfigError("detrend must be 'median' or 'mean'")
        if self.alpha_direction not in ("match", "printed"):
            raise ConfigError("alpha_direction must be 'match' or 'printed'")


@dataclass
class FusionResult:
    """Fused displacement plus every intermediate the pipeline produced."""

    u_fused_mm: np.ndarray
    alpha: float
    f_n_hz: float
    u_acc_mm: np.ndarray
    u_strain_shape: np.ndarray
    ena_mm: float
    quality: dict = field(default_factory=dict)

    def summary(self):
        return {
            "f_n_hz": self.f_n_hz,
            "alpha": self.alpha,
            "ena_mm": self.ena_mm,
            "peak_mm": float(np.max(np.abs(self.u_fused_mm))),
            **{k: v for k, v in self.quality.items()},
        }


def strain_to_shape(strain_ue, basis, target_output=0):
    """Strain-driven displacement shape at one output position.

    Modal coordinates come from the least-squares inverse of the strain
    mode-shape matrix; the result has the true displacement's shape but an
    amplitude scaled by the (unknown) neutral-axis depth, which the fusion
    scaling factor later removes. No scaling is applied here.
    """
    eps = np.atleast_2d(np.asarray(strain_ue, dtype=np.float64))
    gauges, modes = basis.strain_modes.shape
    if eps.shape[0] != gauges:
        raise BasisError(f"strain has {eps.shape[0]} rows, basis expects {gauges}")
    if gauges < modes:
        raise BasisError("fewer gauges than modes: projection underdetermined")
    if np.linalg.matrix_rank(basis.strain_modes) < modes:
        raise BasisError("strain mode matrix is rank deficient")
    if not (0 <= target_output < basis.disp_modes.shape[0]):
        raise BasisError(f"target output {target_output} outside the basis")
    q = np.linalg.pinv(basis.strain_modes) @ eps
    return basis.disp_modes[target_output] @ q


def _peak_power_near(series, fs, f_n, cfg):
    psd = dsp.welch_psd(
        series, fs, segment_len=cfg.welch_segment, overlap=cfg.welch_overlap,
        window=cfg.welch_window,
    )
    half = 2.0 * psd.df
    lo = max(f_n - half, psd.df / 2.0)
    _, power = dsp.interpolated_peak(psd, lo, f_n + half)
    return power


def scaling_factor(u_strain_shape, u_acc, fs, f_n, cfg=None):
    """Amplitude calibration from the two displacement spectra at f_n.

    Returns sqrt(PSD_acc(f_n) / PSD_shape(f_n)): the factor that equalizes
    the spectra when multiplied onto the strain-based shape. Each PSD is
    evaluated at its parabolic peak in a +-2-bin window around f_n.
    """
    cfg = cfg or FusionConfig()
    u1 = np.asarray(u_strain_shape, dtype=np.float64)
    u2 = np.asarray(u_acc, dtype=np.float64)
    if u1.shape != u2.shape:
        raise DomainError("series must share length and rate")
    if not (0.0 < f_n < fs / 2.0):
        raise DomainError(f"f_n {f_n} outside the spectral band")
    p_shape = _peak_power_near(u1, fs, f_n, cfg)
    p_acc = _peak_power_near(u2, fs, f_n, cfg)
    if p_shape <= 0.0 or not np.isfinite(p_shape):
        raise DegenerateScalingError("strain-shape spectrum vanishes at f_n")
    return float(np.sqrt(p_acc / p_shape))


def equivalent_neutral_axis(alpha, direction="match"):
    """Physical reading of the scaling factor as a neutral-axis depth (mm).

    With pure-curvature strain modes (span in m, strain in micro-strain,
    displacement in mm), the strain shape is neutral-axis-depth times the
    true displacement, so the matching-direction alpha is 1/depth and the
    printed-direction alpha is the depth itself.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    return 1.0 / alpha if direction == "match" else float(alpha)


def fuse(session, basis, cfg=None):
    """Run the full fusion pipeline over a conditioned session.

    Steps: baseline-remove strain, double-integrate the vertical
    acceleration, locate the dominant frequency in the acceleration
    spectrum, project strain to a displacement shape, match the spectra at
    f_n, and scale. The fused series always uses the matching-direction
    factor; ``cfg.alpha_direction`` only selects which reading of the
    scaling factor is reported.
    """
    cfg = cfg or FusionConfig()
    channels = tuple(session.channels)
    samples = np.asarray(session.conditioned, dtype=np.float64)
    fs = float(session.fs_out_hz)
    try:
        az = samples[channels.index(cfg.accel_channel)]
        strain = np.vstack([samples[channels.index(c)] for c in cfg.strain_channels])
    except ValueError as exc:
        raise ConfigError(f"session lacks a configured channel: {exc}") from exc

    baseline = np.median(strain, axis=1) if cfg.detrend == "median" else strain.mean(axis=1)
    strain = strain - baseline[:, None]

    u_acc = dsp.accel_to_disp(az, fs, cfg.hp_cutoff_hz)

    psd_az = dsp.welch_psd(
        az, fs, segment_len=cfg.welch_segment, overlap=cfg.welch_overlap,
        window=cfg.welch_window,
    )
    f_n, peak_power = dsp.interpolated_peak(psd_az, cfg.band_lo_hz, cfg.band_hi_hz)
    band = (psd_az.freqs >= cfg.band_lo_hz) & (psd_az.freqs <= cfg.band_hi_hz)
    floor = float(np.median(psd_az.power[band]))
    prominence = float(peak_power / floor) if floor > 0 else float("inf")
    if peak_power <= 0.0:
        raise NoPeakError("spectrum is empty")
    if prominence < cfg.min_peak_prominence:
        raise NoPeakError(
            f"no dominant peak: prominence {prominence:.2f} < {cfg.min_peak_prominence}"
        )

    u_shape = strain_to_shape(strain, basis, cfg.target_output)
    alpha_match = scaling_factor(u_shape, u_acc, fs, f_n, cfg)
    u_fused = alpha_match * u_shape
    p_fused = _peak_power_near(u_fused, fs, f_n, cfg)
    p_acc = _peak_power_near(u_acc, fs, f_n, cfg)
    alpha = alpha_match if cfg.alpha_direction == "match" else 1.0 / alpha_match
    return FusionResult(
        u_fused_mm=u_fused,
        alpha=alpha,
        f_n_hz=f_n,
        u_acc_mm=u_acc,
        u_strain_shape=u_shape,
        ena_mm=equivalent_neutral_axis(alpha, cfg.alpha_direction),
        quality={
            "peak_prominence": prominence,
            "psd_match_rel_err": abs(p_fused - p_acc) / p_acc if p_acc > 0 else None,
            "welch_df_hz": psd_az.df,
            "alpha_match": alpha_match,
            "alpha_printed": 1.0 / alpha_match,
        },
    )


def make_pipeline(basis, cfg=None):
    """Analysis hook for the ingestion service: SessionData -> info-row fields."""
    cfg = cfg or FusionConfig()

    def pipeline(session_data):
        result = fuse(session_data, basis, cfg)
        return {
            "f_n_hz": round(result.f_n_hz, 6),
            "alpha": result.alpha,
            "ena_mm": round(result.ena_mm, 6),
            "peak_mm": round(float(np.max(np.abs(result.u_fused_mm))), 6),
            "error": None,
        }

    return pipeline
