"""Convert normalized voice amplitudes into smoothed affect labels.

The conversion cos(pi*x)^2 maps both silence (0) and shouting (1) to high
affect and mid-level commentary to low affect; a centered moving average
then keeps the general trend.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pem.errors import PemError
from pem.ingest import AmplitudeSeries, _read_csv_rows

DEFAULT_WINDOW = 8  # chunks; 2 s at 250 ms chunks


@dataclass
class AffectLabelSeries:
    """Frame-aligned affect labels in [0, 1]."""

    values: np.ndarray
    window: int
    chunk_ms: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise PemError("labels outside [0, 1]")


def convert(x):
    """cos(pi*x)^2 for x in [0, 1]; accepts scalars or arrays."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise PemError("unnormalized input")
    out = np.cos(np.pi * arr) ** 2
    return float(out) if np.isscalar(x) else out


def smooth(values, window: int) -> np.ndarray:
    """Centered moving average with a shrinking window at the boundaries.

    Index i averages indices [i - window//2, i + window//2] clipped to the
    valid range, so output length equals input length.
    """
    arr = np.asarray(values, dtype=np.float64)
    n = len(arr)
    if window < 1 or window > n:
        raise PemError(f"window must be in [1, {n}], got {window}")
    half = window // 2
    out = np.empty(n)
    for i in range(n):
        lo = max(i - half, 0)
        hi = min(i + half, n - 1) + 1
        out[i] = arr[lo:hi].mean()
    return out


def synthesize_labels(amps: AmplitudeSeries, window: int = DEFAULT_WINDOW) -> AffectLabelSeries:
    """Full label synthesis: convert each amplitude, then smooth."""
    converted = convert(amps.values)
    smoothed = smooth(converted, window)
    return AffectLabelSeries(smoothed, window, amps.chunk_ms)


def write_labels_csv(labels: AffectLabelSeries, path: str | Path) -> None:
    """Write `frame_index,label` rows, 6 decimal places, LF."""
    with open(path, "w", newline="\n") as fh:
        fh.write("frame_index,label\n")
        for i, v in enumerate(labels.values):
            fh.write(f"{i},{v:.6f}\n")


def read_labels_csv(path: str | Path) -> np.ndarray:
    rows = _read_csv_rows(path, ("frame_index", "label"))
    return np.array([float(r[1]) for r in rows])
