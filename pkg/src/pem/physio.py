"""EDA and PPG processing into the evaluation features.

EDA: 3 Hz order-4 low-pass denoise, 0.05 Hz order-2 low-pass tonic (SCL),
phasic = denoised - tonic, SCR peaks by prominence. PPG: 0.5-8 Hz band-pass,
systolic peaks with a physiologic refractory distance, NN intervals with
artifact bounds, then the time-domain HRV features.

All filtering is zero-phase: the average of forward-backward and
backward-forward Butterworth passes, which is symmetric under time reversal
by construction and keeps the squared magnitude response.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as _signal

from pem.errors import PemError

DENOISE_HZ = 3.0
DENOISE_ORDER = 4
TONIC_HZ = 0.05
TONIC_ORDER = 2
PPG_BAND_HZ = (0.5, 8.0)
PPG_ORDER = 4
SCR_PROMINENCE = 0.01  # signal units
SCR_SEPARATION_S = 1.0
PPG_REFRACTORY_MS = 333.0  # HR <= 180 bpm
NN_BOUNDS_MS = (300.0, 2000.0)


@dataclass
class PhysioRecording:
    signal: np.ndarray
    sample_rate: float
    kind: str  # "EDA" or "PPG"
    segments: list[tuple[str, float, float]]

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.sample_rate <= 0:
            raise PemError("sample rate must be positive")
        if self.kind not in ("EDA", "PPG"):
            raise PemError(f"kind must be EDA or PPG, got {self.kind!r}")
        duration_ms = 1000.0 * len(self.signal) / self.sample_rate
        spans = sorted((s, e, lab) for lab, s, e in self.segments)
        for i, (s, e, lab) in enumerate(spans):
            if not 0 <= s < e <= duration_ms:
                raise PemError(f"segment {lab} [{s}, {e}] outside recording")
            if i and s < spans[i - 1][1]:
                raise PemError(f"segment {lab} overlaps {spans[i - 1][2]}")

    def segment_bounds(self, segment) -> tuple[str, float, float]:
        if isinstance(segment, str):
            for lab, s, e in self.segments:
                if lab == segment:
                    return lab, s, e
            raise PemError(f"unknown segment {segment!r}")
        s, e = segment
        return f"[{s},{e})", float(s), float(e)

    def segment_slice(self, segment) -> slice:
        _, s, e = self.segment_bounds(segment)
        lo = int(round(s * self.sample_rate / 1000.0))
        hi = int(round(e * self.sample_rate / 1000.0))
        return slice(lo, hi)


@dataclass
class EdaFeatures:
    scl: np.ndarray
    scr_peak_count: int
    scr_mean_amplitude: float
    normalized_scl: np.ndarray


@dataclass
class HrvFeatures:
    nn_intervals_ms: np.ndarray
    sdnn: float
    sdsd: float | None  # None with fewer than 3 intervals
    rmssd: float
    pnn20: float
    pnn50: float


def butterworth(signal, sample_rate, kind, cutoffs, order) -> np.ndarray:
    """Zero-phase Butterworth filter (see module docstring).

    ``order`` is the overall filter order; band-pass composition needs it
    even (each edge contributes order/2).
    """
    x = np.asarray(signal, dtype=np.float64)
    nyquist = sample_rate / 2.0
    if kind == "lowpass":
        cutoff = float(np.atleast_1d(cutoffs)[0])
        if not 0 < cutoff < nyquist:
            raise PemError(f"cutoff {cutoff} Hz must be below Nyquist {nyquist} Hz")
        sos = _signal.butter(order, cutoff, btype="lowpass", fs=sample_rate, output="sos")
    elif kind == "bandpass":
        lo, hi = (float(c) for c in cutoffs)
        if not 0 < lo < hi < nyquist:
            raise PemError(f"band [{lo}, {hi}] Hz must sit below Nyquist {nyquist} Hz")
        if order % 2:
            raise PemError("band-pass order must be even")
        sos = _signal.butter(order // 2, (lo, hi), btype="bandpass", fs=sample_rate, output="sos")
    else:
        raise PemError(f"unknown filter kind {kind!r}")
    fb = _signal.sosfiltfilt(sos, x)
    bf = _signal.sosfiltfilt(sos, x[::-1])[::-1]
    return 0.5 * (fb + bf)


def decompose_eda(rec: PhysioRecording) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(denoised, tonic, phasic) over the full session; phasic is exactly
    denoised - tonic."""
    if rec.kind != "EDA":
        raise PemError(f"EDA processing needs an EDA recording, got {rec.kind}")
    denoised = butterworth(rec.signal, rec.sample_rate, "lowpass", DENOISE_HZ, DENOISE_ORDER)
    tonic = butterworth(denoised, rec.sample_rate, "lowpass", TONIC_HZ, TONIC_ORDER)
    return denoised, tonic, denoised - tonic


def session_normalized_scl(rec: PhysioRecording) -> np.ndarray:
    """Tonic SCL min-maxed over the participant's full session."""
    _, tonic, _ = decompose_eda(rec)
    lo, hi = tonic.min(), tonic.max()
    return np.zeros_like(tonic) if hi == lo else (tonic - lo) / (hi - lo)


def eda_features(
    rec: PhysioRecording,
    segment,
    scr_prominence: float = SCR_PROMINENCE,
    scr_separation_s: float = SCR_SEPARATION_S,
) -> EdaFeatures:
    """Tonic/phasic decomposition and SCR peak statistics for one segment.

    normalized_scl is min-maxed over the participant's full session, not the
    segment, so level means stay comparable within a participant.
    """
    label, s_ms, e_ms = rec.segment_bounds(segment)
    if e_ms - s_ms < 2000.0:
        raise PemError(f"segment too short: {label} is {e_ms - s_ms:.0f} ms")
    _, tonic, phasic = decompose_eda(rec)
    lo, hi = tonic.min(), tonic.max()
    normalized = np.zeros_like(tonic) if hi == lo else (tonic - lo) / (hi - lo)

    sl = rec.segment_slice(segment)
    distance = max(1, int(round(scr_separation_s * rec.sample_rate)))
    peaks, props = _signal.find_peaks(
        phasic[sl], prominence=scr_prominence, distance=distance
    )
    amplitudes = props["prominences"]
    return EdaFeatures(
        scl=tonic[sl],
        scr_peak_count=len(peaks),
        scr_mean_amplitude=float(amplitudes.mean()) if len(peaks) else 0.0,
        normalized_scl=normalized[sl],
    )


def ppg_nn_intervals(rec: PhysioRecording, segment) -> np.ndarray:
    """NN intervals (ms) from band-passed systolic peaks in one segment.

    Peaks must be positive local maxima at least 333 ms apart; intervals
    outside [300, 2000] ms are discarded as artifacts.
    """
    if rec.kind != "PPG":
        raise PemError(f"ppg_nn_intervals needs a PPG recording, got {rec.kind}")
    filtered = butterworth(rec.signal, rec.sample_rate, "bandpass", PPG_BAND_HZ, PPG_ORDER)
    sl = rec.segment_slice(segment)
    distance = max(1, int(round(PPG_REFRACTORY_MS * rec.sample_rate / 1000.0)))
    peaks, _ = _signal.find_peaks(filtered[sl], distance=distance)
    peaks = peaks[filtered[sl][peaks] > 0]
    if len(peaks) < 2:
        raise PemError("insufficient beats")
    times_ms = (sl.start + peaks) * 1000.0 / rec.sample_rate
    nn = np.diff(times_ms)
    nn = nn[(nn >= NN_BOUNDS_MS[0]) & (nn <= NN_BOUNDS_MS[1])]
    if len(nn) == 0:
        raise PemError("insufficient beats")
    return nn


def hrv_features(nn_intervals_ms) -> HrvFeatures:
    """Time-domain HRV features from NN intervals.

    SDNN/SDSD are sample standard deviations (n-1); pNN20/pNN50 count
    successive differences strictly larger than the threshold.
    """
    nn = np.asarray(nn_intervals_ms, dtype=np.float64)
    if len(nn) < 2:
        raise PemError("too few intervals (need at least 2)")
    if np.any(nn <= 0):
        raise PemError("NN intervals must be positive")
    d = np.diff(nn)
    return HrvFeatures(
        nn_intervals_ms=nn,
        sdnn=float(np.std(nn, ddof=1)),
        sdsd=float(np.std(d, ddof=1)) if len(d) >= 2 else None,
        rmssd=float(np.sqrt(np.mean(d**2))),
        pnn20=float(np.mean(np.abs(d) > 20.0)),
        pnn50=float(np.mean(np.abs(d) > 50.0)),
    )


def read_sensor_csv(path: str | Path, kind: str, segments=()) -> PhysioRecording:
    """Read a `t_ms,value` CSV; the sample rate is inferred from the median
    timestep, which must be uniform within 1%."""
    from pem.ingest import _read_csv_rows

    rows = _read_csv_rows(path, ("t_ms", "value"))
    if len(rows) < 2:
        raise PemError(f"{path}: need at least 2 samples")
    t = np.array([float(r[0]) for r in rows])
    v = np.array([float(r[1]) for r in rows])
    dt = np.diff(t)
    med = float(np.median(dt))
    if med <= 0:
        raise PemError(f"{path}: timestamps not increasing")
    if np.any(np.abs(dt - med) > 0.01 * med):
        raise PemError(f"{path}: timestamps deviate more than 1% from uniform")
    return PhysioRecording(v, 1000.0 / med, kind, list(segments))


def read_segments_csv(path: str | Path) -> list[tuple[str, float, float]]:
    """Read a `label,start_ms,end_ms` CSV."""
    from pem.ingest import _read_csv_rows

    rows = _read_csv_rows(path, ("label", "start_ms", "end_ms"))
    return [(r[0], float(r[1]), float(r[2])) for r in rows]
