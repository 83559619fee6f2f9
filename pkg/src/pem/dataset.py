"""Assemble frame windows and aligned labels into serialized training samples.

Each sample is a stack of 4 consecutive grayscale frames of one video
(stride-1 sliding window) labeled with the last frame's affect label.

Binary format (all integers little-endian): magic ``PEMD``, u32 version=1,
u32 side, u64 sample count, then per sample u32 id length + UTF-8 video id,
u32 end frame index, 4*side*side f32 pixels, f32 label.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from pem.errors import DataFormatError, PemError
from pem.ingest import Frame

MAGIC = b"PEMD"
VERSION = 1
STACK_DEPTH = 4


@dataclass
class FrameStackSample:
    stack: np.ndarray  # (4, side, side) float32
    label: float
    video_id: str
    end_frame_index: int


@dataclass
class Manifest:
    """Per-video sample counts plus build warnings (skips, truncations)."""

    counts: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class Dataset:
    """Ordered collection of frame-stack samples, stored as flat arrays."""

    def __init__(
        self,
        side: int,
        stacks: np.ndarray,
        labels: np.ndarray,
        video_ids: Sequence[str],
        end_frames: Sequence[int],
        manifest: Manifest | None = None,
    ):
        self.side = side
        self.stacks = np.asarray(stacks, dtype=np.float32).reshape(
            (-1, STACK_DEPTH, side, side)
        )
        self.labels = np.asarray(labels, dtype=np.float32).reshape(-1)
        self.video_ids = list(video_ids)
        self.end_frames = np.asarray(end_frames, dtype=np.uint32).reshape(-1)
        if not (
            len(self.stacks) == len(self.labels) == len(self.video_ids) == len(self.end_frames)
        ):
            raise PemError("dataset arrays have mismatched lengths")
        if manifest is None:
            manifest = Manifest()
            for vid in self.video_ids:
                manifest.counts[vid] = manifest.counts.get(vid, 0) + 1
        self.manifest = manifest

    def __len__(self) -> int:
        return len(self.stacks)

    def sample(self, i: int) -> FrameStackSample:
        return FrameStackSample(
            self.stacks[i], float(self.labels[i]), self.video_ids[i], int(self.end_frames[i])
        )

    def samples(self) -> Iterator[FrameStackSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.side == other.side
            and np.array_equal(self.stacks, other.stacks)
            and np.array_equal(self.labels, other.labels)
            and self.video_ids == other.video_ids
            and np.array_equal(self.end_frames, other.end_frames)
            and self.manifest.counts == other.manifest.counts
        )


def _frames_to_array(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return np.asarray(frames, dtype=np.float32)
    return np.stack([f.pixels for f in frames]).astype(np.float32)


LABEL_ALIGNMENTS = ("last", "first", "mean")


def build(
    frames_by_video: Mapping[str, Sequence[Frame] | np.ndarray],
    labels_by_video: Mapping[str, np.ndarray],
    label_alignment: str = "last",
) -> Dataset:
    """Build the sliding-window dataset, video order then frame order.

    Per video, frame and label counts must match (error naming the video);
    videos with fewer than 4 frames are skipped with a manifest warning.
    A window's label is its last frame's label by default;
    ``label_alignment`` switches to the first frame's or the window mean.
    """
    if label_alignment not in LABEL_ALIGNMENTS:
        raise PemError(f"label_alignment must be one of {LABEL_ALIGNMENTS}")
    manifest = Manifest()
    all_stacks, all_labels, all_ids, all_ends = [], [], [], []
    side = None
    for vid, frames in frames_by_video.items():
        if vid not in labels_by_video:
            raise PemError(f"video {vid}: no labels supplied")
        arr = _frames_to_array(frames)
        labels = np.asarray(labels_by_video[vid], dtype=np.float64)
        if len(arr) != len(labels):
            raise PemError(
                f"video {vid}: {len(arr)} frames but {len(labels)} labels"
            )
        if side is None:
            side = arr.shape[1] if arr.ndim == 3 else 0
        if arr.ndim != 3 or arr.shape[1] != side or arr.shape[2] != side:
            raise PemError(f"video {vid}: frame shape differs from {side}x{side}")
        if len(arr) < STACK_DEPTH:
            manifest.warnings.append(
                f"video {vid}: skipped ({len(arr)} frames < {STACK_DEPTH})"
            )
            continue
        count = len(arr) - (STACK_DEPTH - 1)
        for i in range(STACK_DEPTH - 1, len(arr)):
            lo = i - (STACK_DEPTH - 1)
            all_stacks.append(arr[lo : i + 1])
            if label_alignment == "last":
                all_labels.append(labels[i])
            elif label_alignment == "first":
                all_labels.append(labels[lo])
            else:
                all_labels.append(labels[lo : i + 1].mean())
            all_ids.append(vid)
            all_ends.append(i)
        manifest.counts[vid] = count
    if side is None:
        raise PemError("no videos supplied")
    n = len(all_stacks)
    stacks = (
        np.stack(all_stacks) if n else np.empty((0, STACK_DEPTH, side, side), np.float32)
    )
    return Dataset(side, stacks, np.array(all_labels, np.float32), all_ids, all_ends, manifest)


def split(ds: Dataset, holdout_videos: set[str]) -> tuple[Dataset, Dataset]:
    """Split whole videos into (train, eval); holdout ids must exist."""
    unknown = set(holdout_videos) - set(ds.manifest.counts)
    if unknown:
        raise PemError(f"unknown video ids in holdout: {sorted(unknown)}")
    mask = np.array([vid in holdout_videos for vid in ds.video_ids], dtype=bool)

    def _take(keep: np.ndarray) -> Dataset:
        idx = np.nonzero(keep)[0]
        return Dataset(
            ds.side,
            ds.stacks[idx],
            ds.labels[idx],
            [ds.video_ids[i] for i in idx],
            ds.end_frames[idx],
        )

    return _take(~mask), _take(mask)


def align_lengths(frames: Sequence, labels: np.ndarray) -> tuple[Sequence, np.ndarray, str | None]:
    """Truncate frames/labels to the shorter length (4 fps frames pair with
    250 ms chunks index-for-index; stray trailing entries are dropped)."""
    nf, nl = len(frames), len(labels)
    if nf == nl:
        return frames, labels, None
    n = min(nf, nl)
    note = f"truncated to {n} ({nf} frames vs {nl} labels)"
    return frames[:n], labels[:n], note


def save(ds: Dataset, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, ds.side, len(ds)))
        for i in range(len(ds)):
            vid = ds.video_ids[i].encode("utf-8")
            fh.write(struct.pack("<I", len(vid)))
            fh.write(vid)
            fh.write(struct.pack("<I", int(ds.end_frames[i])))
            fh.write(ds.stacks[i].astype("<f4").tobytes())
            fh.write(struct.pack("<f", float(ds.labels[i])))


def load(path: str | Path) -> Dataset:
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise DataFormatError("bad path", str(path))
    with fh:
        data = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise DataFormatError("truncated dataset", str(path))
        chunk = data[off : off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise DataFormatError("bad magic", str(path))
    version, side, count = struct.unpack("<IIQ", take(16))
    if version != VERSION:
        raise DataFormatError("version mismatch", f"{path}: version {version}")
    pixels_per_stack = STACK_DEPTH * side * side
    stacks = np.empty((count, STACK_DEPTH, side, side), dtype=np.float32)
    labels = np.empty(count, dtype=np.float32)
    video_ids, end_frames = [], []
    for i in range(count):
        (id_len,) = struct.unpack("<I", take(4))
        video_ids.append(take(id_len).decode("utf-8"))
        (end,) = struct.unpack("<I", take(4))
        end_frames.append(end)
        stacks[i] = np.frombuffer(take(4 * pixels_per_stack), dtype="<f4").reshape(
            (STACK_DEPTH, side, side)
        )
        (labels[i],) = struct.unpack("<f", take(4))
    if off != len(data):
        raise DataFormatError("trailing bytes", f"{path}: {len(data) - off} extra bytes")
    return Dataset(side, stacks, labels, video_ids, end_frames)
