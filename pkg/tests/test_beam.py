"""Beam oracle: closed-form mode shapes, modal dynamics, noise injection."""

import json

import numpy as np
import pytest

from spanmon import beam, dsp
from spanmon.errors import ConfigError, DomainError


@pytest.fixture(scope="module")
def plain_beam():
    return beam.BeamModel()


class TestModeShapes:
    def test_midspan_mode1_is_unity(self, plain_beam):
        phi = beam.mode_shapes(plain_beam, [15.0])
        assert phi[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_midspan_is_mode2_node(self, plain_beam):
        phi = beam.mode_shapes(plain_beam, [15.0])
        assert abs(phi[0, 1]) < 1e-12

    def test_third_span_value(self, plain_beam):
        # sin(pi/3) by hand: 0.866025...
        phi = beam.mode_shapes(plain_beam, [10.0])
        assert phi[0, 0] == pytest.approx(0.8660254037844386, abs=1e-12)

    @pytest.mark.parametrize("x", [-1.0, 0.0, 30.0, 31.0])
    def test_positions_outside_span(self, plain_beam, x):
        with pytest.raises(DomainError):
            beam.mode_shapes(plain_beam, [x])
        with pytest.raises(DomainError):
            beam.curvature_mode_shapes(plain_beam, [x])

    def test_strain_modes_scale_with_curvature(self, plain_beam):
        x = [7.5, 22.5]
        curv = beam.curvature_mode_shapes(plain_beam, x)
        strain = beam.strain_mode_shapes(plain_beam, x)
        assert np.allclose(strain, plain_beam.neutral_axis_mm * curv)
        k1 = (np.pi / plain_beam.length_m) ** 2
        assert curv[0, 0] == pytest.approx(k1 * np.sin(np.pi * 7.5 / 30.0), rel=1e-12)


class TestBeamValidation:
    def test_decreasing_frequencies_rejected(self):
        with pytest.raises(ConfigError):
            beam.BeamModel(natural_freqs_hz=(4.78, 4.0, 43.0))

    def test_damping_bounds(self):
        with pytest.raises(ConfigError):
            beam.BeamModel(damping_ratios=(1.2, 0.01, 0.01))

    def test_sensor_outside_span(self):
        with pytest.raises(ConfigError):
            beam.BeamModel(gauge_positions_m=(7.5, 31.0, 22.5))


class TestSimulateCrossing:
    def test_zero_axle_weights_give_zero_truth(self, plain_beam):
        load = beam.CrossingLoad(arrival_s=0.5, axle_weights_kn=(0.0, 0.0))
        gt = beam.simulate_crossing(plain_beam, load, 5.0, 1000.0)
        assert not gt.disp_mm.any() and not gt.strain_ue.any() and not gt.accel_g.any()

    def test_at_rest_before_arrival(self, plain_beam):
        load = beam.CrossingLoad(arrival_s=2.0)
        gt = beam.simulate_crossing(plain_beam, load, 6.0, 1000.0)
        pre = gt.time_s < 2.0
        assert not gt.disp_mm[:, pre].any()

    def test_fs_too_low_for_modes(self, plain_beam):
        with pytest.raises(ConfigError):
            beam.simulate_crossing(plain_beam, beam.CrossingLoad(), 5.0, 200.0)

    def test_free_decay_log_decrement(self):
        # Single-mode beam released from a unit modal displacement: the
        # closed-form damped oscillator is the oracle.
        bm = beam.BeamModel(natural_freqs_hz=(4.78,), damping_ratios=(0.02,))
        gt = beam.simulate_crossing(
            bm, [], 5.0, 1000.0, initial_modal_disp_m=[1e-3]
        )
        u = gt.disp_mm[0]
        peaks = [
            i
            for i in range(1, u.size - 1)
            if u[i] > u[i - 1] and u[i] >= u[i + 1] and u[i] > 0
        ]
        delta = np.log(u[peaks[0]] / u[peaks[1]])
        zeta_hat = delta / np.sqrt(4 * np.pi**2 + delta**2)
        assert zeta_hat == pytest.approx(0.02, rel=0.01)

    def test_fft_peak_at_tuned_frequency(self, plain_beam):
        # One fast crossing early in a 20 s record: the free decay dominates
        # the spectrum, whose argmax must land on f1 within a bin.
        load = beam.CrossingLoad(arrival_s=0.5, speed_mps=25.0, axle_weights_kn=(120.0,),
                                 axle_spacings_m=())
        gt = beam.simulate_crossing(plain_beam, load, 20.0, 1000.0)
        az = gt.accel_g[0]
        spec = np.abs(np.fft.rfft(az))
        freqs = np.fft.rfftfreq(az.size, 1e-3)
        df = freqs[1] - freqs[0]
        band = (freqs > 1.0) & (freqs < 10.0)
        f_peak = freqs[band][np.argmax(spec[band])]
        assert abs(f_peak - 4.78) <= df

    def test_linearity_in_axle_weights(self, plain_beam):
        load1 = beam.CrossingLoad(arrival_s=0.2, axle_weights_kn=(80.0, 90.0))
        load2 = beam.CrossingLoad(arrival_s=0.2, axle_weights_kn=(160.0, 180.0))
        gt1 = beam.simulate_crossing(plain_beam, load1, 4.0, 1000.0)
        gt2 = beam.simulate_crossing(plain_beam, load2, 4.0, 1000.0)
        scale = np.max(np.abs(gt1.disp_mm))
        assert np.max(np.abs(gt2.disp_mm - 2 * gt1.disp_mm)) < 1e-9 * scale
        assert np.max(np.abs(gt2.strain_ue - 2 * gt1.strain_ue)) < 1e-9 * np.max(
            np.abs(gt1.strain_ue)
        )
        assert np.max(np.abs(gt2.accel_g - 2 * gt1.accel_g)) < 1e-9 * np.max(
            np.abs(gt1.accel_g)
        )

    def test_strain_equals_depth_times_curvature(self, demo_truth):
        bm = demo_truth.beam
        curv = beam.curvature_mode_shapes(bm, bm.gauge_positions_m)
        expected = bm.neutral_axis_mm * (curv @ demo_truth.modal_disp_mm)
        scale = np.max(np.abs(expected))
        assert np.max(np.abs(demo_truth.strain_ue - expected)) < 1e-9 * scale

    def test_acceleration_is_second_derivative(self, plain_beam):
        load = beam.CrossingLoad(arrival_s=0.3)
        gt = beam.simulate_crossing(plain_beam, load, 4.0, 1000.0)
        u = gt.disp_mm[0]
        a_mm = gt.accel_g[0] * beam.G_MM_S2
        dt = 1.0 / gt.fs_hz
        a_fd = (u[2:] - 2 * u[1:-1] + u[:-2]) / dt**2
        err = a_fd - a_mm[1:-1]
        assert np.sqrt(np.mean(err**2)) < 0.02 * np.sqrt(np.mean(a_mm**2))

    def test_decay_envelope_non_increasing(self, plain_beam):
        load = beam.CrossingLoad(arrival_s=0.2, speed_mps=25.0)
        gt = beam.simulate_crossing(plain_beam, load, 12.0, 1000.0)
        u = gt.disp_mm[0]
        after = gt.time_s > (0.2 + 35.0 / 25.0)
        tail = np.abs(u[after])
        peaks = [
            tail[i]
            for i in range(1, tail.size - 1)
            if tail[i] >= tail[i - 1] and tail[i] >= tail[i + 1] and tail[i] > 1e-9
        ]
        diffs = np.diff(peaks)
        assert np.all(diffs <= 1e-9)


class TestNoise:
    def test_zero_length(self):
        out = beam.add_noise(np.zeros(0), "accel", seed=1)
        assert out.size == 0

    def test_accel_rms_level(self):
        out = beam.add_noise(np.zeros(10**6), "accel", seed=2)
        rms_mg = np.sqrt(np.mean(out**2)) * 1e3
        assert rms_mg == pytest.approx(0.45, rel=0.01)

    def test_strain_rms_level(self):
        out = beam.add_noise(np.zeros(10**6), "strain", seed=3)
        assert np.sqrt(np.mean(out**2)) == pytest.approx(1.52, rel=0.01)

    def test_deterministic_for_seed(self):
        a = beam.add_noise(np.ones(1000), "strain", seed=9)
        b = beam.add_noise(np.ones(1000), "strain", seed=9)
        assert np.array_equal(a, b)
        c = beam.add_noise(np.ones(1000), "strain", seed=10)
        assert not np.array_equal(a, c)

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            beam.add_noise(np.zeros(3), "torque", seed=0)


class TestScenario:
    def test_round_trip_through_json(self, tmp_path, demo_scenario):
        path = tmp_path / "sc.json"
        beam.save_scenario(demo_scenario, path)
        loaded = beam.load_scenario(path)
        assert loaded == demo_scenario

    def test_duration_must_cover_crossings(self):
        with pytest.raises(ConfigError):
            beam.Scenario(loads=(beam.CrossingLoad(arrival_s=50.0),), duration_s=40.0)

    def test_bad_document(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"beam": {"length_m": -1}}))
        with pytest.raises(ConfigError):
            beam.load_scenario(path)

    def test_demo_peaks_are_calibrated(self, demo_scenario, demo_truth):
        from conftest import vehicle_windows

        u = demo_truth.disp_mm[0]
        t = demo_truth.time_s
        targets = [2.08, 1.01, 1.26]
        for k, lo, hi in vehicle_windows(demo_scenario):
            window = (t >= lo) & (t <= hi)
            peak = np.max(np.abs(u[window]))
            assert peak == pytest.approx(targets[k], abs=1e-4)

    def test_demo_determinism(self, demo_scenario):
        gt1 = demo_scenario.simulate()
        gt2 = demo_scenario.simulate()
        assert np.array_equal(gt1.disp_mm, gt2.disp_mm)
        assert np.array_equal(gt1.accel_g, gt2.accel_g)
