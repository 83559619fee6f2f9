import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pem.errors import PemError
from pem.physio import (
    PhysioRecording,
    butterworth,
    decompose_eda,
    eda_features,
    hrv_features,
    ppg_nn_intervals,
    read_segments_csv,
    read_sensor_csv,
)


def sine_amplitude(y, t, freq):
    """Amplitude of the freq component via complex projection."""
    ph = np.exp(-2j * np.pi * freq * t)
    return 2 * abs(np.mean(y * ph))


class TestButterworth:
    def test_dc_gain(self):
        x = np.full(500, 3.3)
        y = butterworth(x, 100.0, "lowpass", 3.0, 4)
        fs = 100
        np.testing.assert_allclose(y[fs:-fs], 3.3, atol=1e-9)

    def test_passband_flat_at_1hz(self):
        fs = 100.0
        t = np.arange(0, 30, 1 / fs)
        y = butterworth(np.sin(2 * np.pi * 1.0 * t), fs, "lowpass", 3.0, 4)
        mid = slice(int(fs), len(t) - int(fs))
        assert sine_amplitude(y[mid], t[mid], 1.0) >= 0.99

    def test_half_power_at_cutoff_two_pass(self):
        fs = 100.0
        t = np.arange(0, 30, 1 / fs)
        y = butterworth(np.sin(2 * np.pi * 3.0 * t), fs, "lowpass", 3.0, 4)
        mid = slice(int(fs), len(t) - int(fs))
        # two zero-phase passes square the -3 dB magnitude: 0.5
        assert sine_amplitude(y[mid], t[mid], 3.0) == pytest.approx(0.5, rel=0.02)

    def test_time_reversal_symmetry(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=2000)
        fwd = butterworth(x, 100.0, "lowpass", 3.0, 4)
        rev = butterworth(x[::-1], 100.0, "lowpass", 3.0, 4)[::-1]
        np.testing.assert_allclose(fwd, rev, atol=1e-9)

    def test_bandpass_rejects_out_of_band(self):
        fs = 64.0
        t = np.arange(0, 40, 1 / fs)
        x = np.sin(2 * np.pi * 1.25 * t) + 2.0 + np.sin(2 * np.pi * 20.0 * t)
        y = butterworth(x, fs, "bandpass", (0.5, 8.0), 4)
        mid = slice(int(4 * fs), len(t) - int(4 * fs))
        assert sine_amplitude(y[mid], t[mid], 1.25) == pytest.approx(1.0, rel=0.05)
        assert abs(np.mean(y[mid])) < 0.05
        assert sine_amplitude(y[mid], t[mid], 20.0) < 0.05

    def test_cutoff_above_nyquist(self):
        with pytest.raises(PemError, match="Nyquist"):
            butterworth(np.zeros(100), 100.0, "lowpass", 60.0, 4)

    def test_bandpass_odd_order(self):
        with pytest.raises(PemError, match="even"):
            butterworth(np.zeros(100), 100.0, "bandpass", (0.5, 8.0), 3)


def eda_recording(signal, fs=32.0, segments=None):
    if segments is None:
        duration_ms = 1000 * len(signal) / fs
        segments = [("1", 0.0, duration_ms)]
    return PhysioRecording(signal, fs, "EDA", segments)


class TestEda:
    def test_constant_signal(self):
        rec = eda_recording(np.full(32 * 20, 2.5))
        feats = eda_features(rec, "1")
        np.testing.assert_allclose(feats.scl, 2.5, atol=1e-9)
        assert feats.scr_peak_count == 0
        assert feats.scr_mean_amplitude == 0.0

    def test_three_injected_bumps(self):
        fs = 32.0
        t = np.arange(0, 60, 1 / fs)
        ramp = 2.0 + 0.01 * t
        signal = ramp.copy()
        for center in (15.0, 30.0, 45.0):
            signal += 0.05 * np.exp(-((t - center) ** 2) / (2 * 0.8**2))
        rec = eda_recording(signal, fs)
        feats = eda_features(rec, "1")
        assert feats.scr_peak_count == 3
        assert feats.scr_mean_amplitude > 0.0

    def test_tonic_plus_phasic_is_denoised(self):
        rng = np.random.default_rng(1)
        rec = eda_recording(2.0 + 0.1 * rng.normal(size=32 * 30))
        denoised, tonic, phasic = decompose_eda(rec)
        np.testing.assert_array_equal(tonic + phasic, denoised)

    def test_session_wide_normalization_user8_shape(self):
        # plateaus at the User 8 EDA segment means; session min-max over
        # settled extremes reproduces the L1 > L2 > L3 ordering
        fs = 32.0
        seg_n = int(60 * fs)
        hold_n = int(20 * fs)
        sig = np.concatenate(
            [
                np.full(hold_n, 1.0),
                np.full(seg_n, 0.87),
                np.full(seg_n, 0.64),
                np.full(seg_n, 0.39),
                np.full(hold_n, 0.0),
            ]
        )
        o = 20_000.0
        segments = [
            ("1", o, o + 60_000),
            ("2", o + 60_000, o + 120_000),
            ("3", o + 120_000, o + 180_000),
        ]
        rec = PhysioRecording(2.0 + 3.0 * sig, fs, "EDA", segments)
        means = {}
        for label, target in zip("123", (0.87, 0.64, 0.39)):
            feats = eda_features(rec, label)
            means[label] = feats.normalized_scl.mean()
            assert means[label] == pytest.approx(target, abs=0.08)
        assert means["1"] > means["2"] > means["3"]

    def test_wrong_kind(self):
        rec = PhysioRecording(np.zeros(3200), 32.0, "PPG", [("1", 0, 100_000)])
        with pytest.raises(PemError, match="EDA"):
            eda_features(rec, "1")

    def test_segment_too_short(self):
        rec = eda_recording(np.zeros(32 * 10), segments=[("1", 0, 1500)])
        with pytest.raises(PemError, match="segment too short"):
            eda_features(rec, "1")


class TestPpg:
    def _pulse_train(self, period_s, fs=64.0, duration_s=30.0):
        t = np.arange(0, duration_s, 1 / fs)
        signal = np.zeros_like(t)
        for k in range(1, int(duration_s / period_s)):
            signal += np.exp(-((t - k * period_s) ** 2) / (2 * 0.05**2))
        return PhysioRecording(signal, fs, "PPG", [("1", 0, duration_s * 1000)])

    def test_one_hz_pulse_train(self):
        fs = 64.0
        rec = self._pulse_train(1.0, fs)
        nn = ppg_nn_intervals(rec, "1")
        assert np.all(np.abs(nn - 1000.0) <= 1000.0 / fs + 1e-9)

    def test_75_bpm(self):
        rec = self._pulse_train(0.8)
        nn = ppg_nn_intervals(rec, "1")
        assert np.median(nn) == pytest.approx(800.0, abs=20.0)

    def test_flatline(self):
        rec = PhysioRecording(np.zeros(64 * 30), 64.0, "PPG", [("1", 0, 30_000)])
        with pytest.raises(PemError, match="insufficient beats"):
            ppg_nn_intervals(rec, "1")

    def test_artifact_intervals_discarded(self):
        # 0.8 s spacing with one long 2.4 s gap: the 2400 ms interval is
        # outside [300, 2000] and must be dropped
        fs, duration = 64.0, 30.0
        t = np.arange(0, duration, 1 / fs)
        signal = np.zeros_like(t)
        beats = [b for b in np.arange(0.8, duration - 0.4, 0.8) if not 10.0 < b < 12.3]
        for b in beats:
            signal += np.exp(-((t - b) ** 2) / (2 * 0.05**2))
        rec = PhysioRecording(signal, fs, "PPG", [("1", 0, duration * 1000)])
        nn = ppg_nn_intervals(rec, "1")
        assert np.all(nn <= 2000.0)


class TestHrv:
    def test_hand_computed_reference(self):
        feats = hrv_features([800, 810, 790, 805])
        assert feats.rmssd == pytest.approx(np.sqrt((100 + 400 + 225) / 3), abs=1e-9)
        assert feats.rmssd == pytest.approx(15.546, abs=1e-3)
        assert feats.sdnn == pytest.approx(8.539, abs=1e-3)
        assert feats.sdsd == pytest.approx(np.std([10, -20, 15], ddof=1), abs=1e-9)
        assert feats.pnn20 == 0.0
        assert feats.pnn50 == 0.0

    def test_constant_intervals(self):
        feats = hrv_features([800.0] * 6)
        assert feats.sdnn == 0.0 and feats.sdsd == 0.0 and feats.rmssd == 0.0
        assert feats.pnn20 == 0.0 and feats.pnn50 == 0.0

    def test_strict_thresholds(self):
        feats = hrv_features([800, 860, 800, 860])
        assert feats.pnn20 == 1.0 and feats.pnn50 == 1.0
        exactly20 = hrv_features([800, 820, 800])
        assert exactly20.pnn20 == 0.0

    def test_too_few(self):
        with pytest.raises(PemError, match="too few"):
            hrv_features([800])

    def test_two_intervals_no_sdsd(self):
        feats = hrv_features([800, 850])
        assert feats.sdsd is None
        assert feats.rmssd == pytest.approx(50.0)

    @given(
        nn=st.lists(st.floats(300, 2000), min_size=3, max_size=30),
        c=st.floats(0.1, 10.0),
    )
    @settings(max_examples=150, deadline=None)
    def test_scale_equivariance_and_pnn_order(self, nn, c):
        base = hrv_features(nn)
        scaled = hrv_features([c * v for v in nn])
        assert scaled.sdnn == pytest.approx(c * base.sdnn, rel=1e-9, abs=1e-9)
        assert scaled.sdsd == pytest.approx(c * base.sdsd, rel=1e-9, abs=1e-9)
        assert scaled.rmssd == pytest.approx(c * base.rmssd, rel=1e-9, abs=1e-9)
        assert base.pnn20 >= base.pnn50


class TestSensorCsv:
    def test_rate_inference(self, tmp_path):
        path = tmp_path / "s.csv"
        lines = ["t_ms,value"] + [f"{i * 31.25:.2f},{i * 0.1:.3f}" for i in range(64)]
        path.write_text("\n".join(lines) + "\n")
        rec = read_sensor_csv(path, "EDA")
        assert rec.sample_rate == pytest.approx(32.0)

    def test_nonuniform_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        ts = [0, 10, 20, 35, 40, 50]
        lines = ["t_ms,value"] + [f"{t},{0.1}" for t in ts]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(PemError, match="uniform"):
            read_sensor_csv(path, "EDA")

    def test_segments_roundtrip(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("label,start_ms,end_ms\nL1,0,60000\nL2,60000,120000\n")
        assert read_segments_csv(path) == [("L1", 0.0, 60000.0), ("L2", 60000.0, 120000.0)]

    def test_overlapping_segments_rejected(self):
        with pytest.raises(PemError, match="overlaps"):
            PhysioRecording(np.zeros(3200), 32.0, "EDA", [("a", 0, 50_000), ("b", 40_000, 90_000)])
