"""Decode audio and frame inputs into time-aligned amplitude chunks and frames.

Audio comes in as PCM WAV (8/16/24-bit int or 32-bit float, mono or stereo,
stereo downmixed by channel averaging). Frames come in as a directory of PNG
images whose lexicographic filename order defines time.

Pinned conventions: chunk amplitude is the mean of absolute sample values,
normalization is min-max over the whole series, resize is Pillow bilinear,
grayscale uses BT.601 luma weights (0.299, 0.587, 0.114).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from pem.errors import PemError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

DEFAULT_CHUNK_MS = 250
DEFAULT_FPS = 4.0
DEFAULT_SIDE = 256


@dataclass
class AudioTrack:
    """Mono PCM signal with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    duration_ms: int = field(init=False)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise PemError("sample rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise PemError("AudioTrack holds mono samples; downmix first")
        self.duration_ms = round(1000 * len(self.samples) / self.sample_rate)

    @classmethod
    def from_pcm(cls, samples: np.ndarray, sample_rate: int) -> "AudioTrack":
        """Build a track from 1-D mono or 2-D (n, channels) PCM, averaging channels."""
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr.mean(axis=1)
        return cls(arr, sample_rate)


@dataclass
class AmplitudeSeries:
    """Per-chunk normalized voice amplitude.

    ``source_duration_ms`` counts milliseconds up to and including the start
    of the last source sample, so ``ceil(source_duration_ms / chunk_ms)``
    always equals ``len(values)`` (a rounded duration can undercount by one
    chunk when the signal barely crosses a chunk boundary).
    """

    chunk_ms: int
    values: np.ndarray
    source_duration_ms: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.values) == 0:
            raise PemError("empty amplitude series")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise PemError("amplitude values outside [0, 1]")
        expected = -(-self.source_duration_ms // self.chunk_ms)
        if len(self.values) != expected:
            raise PemError(
                f"series length {len(self.values)} inconsistent with "
                f"duration {self.source_duration_ms} ms at {self.chunk_ms} ms chunks"
            )


@dataclass
class Frame:
    """Square grayscale frame with intensities in [0, 1]."""

    pixels: np.ndarray
    timestamp_ms: float

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


def read_wav(path: str | Path) -> AudioTrack:
    """Read a PCM WAV file into a mono AudioTrack scaled to [-1, 1].

    Supports 8-bit unsigned, 16/24-bit signed, and 32-bit float sample
    formats; stereo is downmixed by channel averaging.
    """
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise PemError(f"audio file not found: {path}")
    except ValueError as exc:
        raise PemError(f"unreadable WAV file {path}: {exc}")
    if data.dtype == np.uint8:
        scaled = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        scaled = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-aligns 24-bit PCM into int32
        scaled = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        scaled = data.astype(np.float64)
    else:
        raise PemError(f"unsupported WAV sample format: {data.dtype}")
    return AudioTrack.from_pcm(scaled, int(rate))


def chunk_audio(track: AudioTrack, chunk_ms: int = DEFAULT_CHUNK_MS) -> np.ndarray:
    """Mean absolute amplitude per fixed-duration chunk.

    Chunk i covers sample times [i*chunk_ms, (i+1)*chunk_ms); the final
    partial chunk is kept. Chunks shorter than one sample period are
    rejected, which guarantees every chunk is non-empty.
    """
    if chunk_ms <= 0:
        raise PemError("invalid chunk size")
    if len(track.samples) == 0:
        raise PemError("empty audio")
    sr = track.sample_rate
    if chunk_ms * sr < 1000:
        raise PemError("invalid chunk size: shorter than one sample period")
    n = len(track.samples)
    n_chunks = (n - 1) * 1000 // (sr * chunk_ms) + 1
    absx = np.abs(track.samples)
    bounds = [(i * chunk_ms * sr + 999) // 1000 for i in range(n_chunks + 1)]
    bounds[-1] = n
    return np.array(
        [absx[bounds[i] : bounds[i + 1]].mean() for i in range(n_chunks)]
    )


def normalize_amplitudes(
    raw: Sequence[float] | np.ndarray,
    chunk_ms: int = DEFAULT_CHUNK_MS,
    source_duration_ms: int | None = None,
) -> AmplitudeSeries:
    """Min-max normalize raw chunk means over the whole series.

    A constant series maps to all zeros (documented convention). When
    ``source_duration_ms`` is omitted it is reconstructed from the chunk
    count.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        raise PemError("empty amplitude input")
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        values = np.zeros_like(arr)
    else:
        values = (arr - lo) / (hi - lo)
    if source_duration_ms is None:
        source_duration_ms = len(arr) * chunk_ms
    return AmplitudeSeries(chunk_ms, values, source_duration_ms)


def amplitude_series(track: AudioTrack, chunk_ms: int = DEFAULT_CHUNK_MS) -> AmplitudeSeries:
    """chunk_audio + normalize_amplitudes for one track."""
    raw = chunk_audio(track, chunk_ms)
    n = len(track.samples)
    duration = (n - 1) * 1000 // track.sample_rate + 1
    return normalize_amplitudes(raw, chunk_ms, duration)


def noise_gate(track: AudioTrack, threshold: float) -> AudioTrack:
    """Zero all samples below ``threshold`` times the track's peak amplitude.

    Optional stand-in for external noise reduction; threshold 0 is the
    identity.
    """
    if not 0.0 <= threshold < 1.0:
        raise PemError("noise gate threshold must be in [0, 1)")
    samples = track.samples
    peak = np.abs(samples).max() if len(samples) else 0.0
    gated = np.where(np.abs(samples) < threshold * peak, 0.0, samples)
    return AudioTrack(gated, track.sample_rate)


def image_to_pixels(img: Image.Image, side: int = DEFAULT_SIDE) -> np.ndarray:
    """Resize to side x side (bilinear), grayscale by luma, scale to [0, 1].

    Shared by offline frame loading and the streaming service so both paths
    preprocess identically.
    """
    rgb = img.convert("RGB").resize((side, side), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float64)
    luma = arr @ LUMA_WEIGHTS
    return (luma / 255.0).astype(np.float32)


def load_frames(
    source: str | Path | Iterable[str | Path],
    fps: float = DEFAULT_FPS,
    side: int = DEFAULT_SIDE,
) -> list[Frame]:
    """Load an ordered PNG sequence as standardized grayscale frames.

    ``source`` is a directory (PNG files taken in lexicographic name order)
    or an explicit ordered iterable of image paths. Frame i is stamped
    ``i * 1000 / fps`` ms.
    """
    if fps <= 0:
        raise PemError("fps must be positive")
    if side <= 0:
        raise PemError("frame side must be positive")
    if isinstance(source, (str, Path)) and os.path.isdir(source):
        paths = sorted(
            Path(source) / name
            for name in os.listdir(source)
            if name.lower().endswith(".png")
        )
    elif isinstance(source, (str, Path)):
        raise PemError(f"frame directory not found: {source}")
    else:
        paths = [Path(p) for p in source]
    if not paths:
        raise PemError("no frames found")
    frames = []
    for i, path in enumerate(paths):
        try:
            with Image.open(path) as img:
                pixels = image_to_pixels(img, side)
        except (OSError, ValueError) as exc:
            raise PemError(f"unreadable image {path}: {exc}")
        frames.append(Frame(pixels, i * 1000.0 / fps))
    return frames


def write_amplitude_csv(series: AmplitudeSeries, path: str | Path) -> None:
    """Write `chunk_index,start_ms,amplitude` rows, 6 decimal places, LF."""
    with open(path, "w", newline="\n") as fh:
        fh.write("chunk_index,start_ms,amplitude\n")
        for i, v in enumerate(series.values):
            fh.write(f"{i},{i * series.chunk_ms},{v:.6f}\n")


def read_amplitude_csv(path: str | Path) -> AmplitudeSeries:
    """Read back an amplitude CSV written by write_amplitude_csv."""
    rows = _read_csv_rows(path, ("chunk_index", "start_ms", "amplitude"))
    if len(rows) >= 2:
        chunk_ms = int(rows[1][1]) - int(rows[0][1])
    else:
        chunk_ms = DEFAULT_CHUNK_MS
    values = np.array([float(r[2]) for r in rows])
    return AmplitudeSeries(chunk_ms, values, len(values) * chunk_ms)


def _read_csv_rows(path: str | Path, header: tuple[str, ...]) -> list[list[str]]:
    import csv

    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            first = next(reader, None)
            if first != list(header):
                raise PemError(
                    f"{path}: expected header {','.join(header)}, got {first}"
                )
            return [row for row in reader if row]
    except FileNotFoundError:
        raise PemError(f"file not found: {path}")
