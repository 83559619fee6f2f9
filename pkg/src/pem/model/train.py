"""Training loop, single-sample inference, and whole-video prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pem.dataset import Dataset
from pem.errors import PemError, TrainingDivergedError
from pem.ingest import Frame
from pem.model import kernels
from pem.model.config import ModelConfig
from pem.model.network import Network

STACK_DEPTH = 4


@dataclass
class ModelBundle:
    """Trained network: config, flat float32 weights, per-epoch mean loss."""

    config: ModelConfig
    weights: np.ndarray
    train_log: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32).reshape(-1)
        expected = self.config.param_count()
        if len(self.weights) != expected:
            raise PemError(
                f"weight vector has {len(self.weights)} values, config needs {expected}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise PemError("weights contain non-finite values")
        self._network = Network(self.config)

    @property
    def network(self) -> Network:
        return self._network


@dataclass
class AffectTrace:
    """Per-window affect predictions, stamped with the last frame's time."""

    values: np.ndarray
    timestamps_ms: np.ndarray
    end_frame_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _check_stack(bundle: ModelBundle, stack: np.ndarray) -> np.ndarray:
    arr = np.asarray(stack)
    expected = (STACK_DEPTH, bundle.config.side, bundle.config.side)
    if arr.shape != expected:
        raise PemError(f"stack shape mismatch: expected {expected}, got {arr.shape}")
    return arr


def forward(bundle: ModelBundle, stack: np.ndarray, dtype=np.float32) -> float:
    """Affect prediction in (0, 1) for one 4-frame stack.

    ``dtype=np.float64`` runs the whole pass in double precision (used by
    the finite-difference gradient verification).
    """
    arr = _check_stack(bundle, stack)
    params = bundle.weights.astype(dtype, copy=False)
    preds = bundle.network.forward_batch(params, arr[None].astype(dtype, copy=False))
    return float(preds[0])


def loss(pred: float, target: float) -> float:
    """Squared error for one prediction."""
    return (pred - target) ** 2


def batch_loss(preds: Sequence[float], targets: Sequence[float]) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return float(np.mean((p - t) ** 2))


def backward(
    bundle: ModelBundle,
    stack: np.ndarray,
    target: float,
    dtype=np.float32,
    loss_scale: float = 1.0,
) -> np.ndarray:
    """Gradient of the (optionally scaled) MSE loss w.r.t. every parameter."""
    arr = _check_stack(bundle, stack)
    params = bundle.weights.astype(dtype, copy=False)
    _, grad, _ = bundle.network.loss_and_grad(
        params, arr[None].astype(dtype, copy=False), [target], loss_scale=loss_scale
    )
    return grad


def train(ds: Dataset, config: ModelConfig) -> ModelBundle:
    """Mini-batch SGD with momentum; deterministic for a fixed seed.

    Per-epoch shuffling draws from a PCG64 stream seeded with config.seed;
    train_log records the mean MSE of each epoch (batch losses are taken
    before the batch's update, weighted by batch size).
    """
    if len(ds) == 0:
        raise PemError("empty dataset")
    if ds.side != config.side:
        raise PemError(f"dataset side {ds.side} does not match config side {config.side}")
    net = Network(config)
    params = net.init_params()
    velocity = np.zeros_like(params)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = len(ds)
    train_log: list[float] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            x = ds.stacks[idx]
            t = ds.labels[idx]
            loss_value, grad, _ = net.loss_and_grad(params, x, t)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(epoch)
            velocity = config.momentum * velocity - config.lr * grad
            params = params + velocity
            total += loss_value * len(idx)
        train_log.append(total / n)
    meta = {
        "backend": kernels.BACKEND,
        "threads": 1 if kernels.BACKEND == "cython" else None,
    }
    return ModelBundle(config, params, train_log, meta)


def predict_video(bundle: ModelBundle, frames: Sequence[Frame] | np.ndarray) -> AffectTrace:
    """Stride-1 sliding-window predictions over a frame sequence.

    Windows are evaluated one at a time so the result is bit-identical to
    the streaming service, which necessarily sees frames one by one.
    """
    if isinstance(frames, np.ndarray):
        pixels = np.asarray(frames, dtype=np.float32)
        timestamps = np.arange(len(pixels)) * 250.0
    else:
        pixels = np.stack([f.pixels for f in frames]).astype(np.float32)
        timestamps = np.array([f.timestamp_ms for f in frames])
    if len(pixels) < STACK_DEPTH:
        raise PemError(f"need at least {STACK_DEPTH} frames, got {len(pixels)}")
    values, stamps, ends = [], [], []
    for i in range(STACK_DEPTH - 1, len(pixels)):
        stack = pixels[i - (STACK_DEPTH - 1) : i + 1]
        values.append(forward(bundle, stack))
        stamps.append(timestamps[i])
        ends.append(i)
    return AffectTrace(np.array(values), np.array(stamps), np.array(ends, dtype=np.int64))
