import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from pem.dataset import Dataset
from pem.model.config import tiny_config
from pem.model.network import Network
from pem.model.train import ModelBundle


def brightness_dataset(n: int, side: int, seed: int) -> Dataset:
    """Synthetic set where the label is the mean intensity of the last frame."""
    rng = np.random.default_rng(seed)
    stacks = np.empty((n, 4, side, side), dtype=np.float32)
    labels = np.empty(n, dtype=np.float32)
    for i in range(n):
        for j in range(4):
            m = rng.uniform(0.15, 0.85)
            pattern = rng.uniform(-1, 1, (side, side))
            pattern -= pattern.mean()
            amp = 0.9 * min(m, 1 - m) / np.abs(pattern).max()
            stacks[i, j] = m + amp * pattern
        labels[i] = stacks[i, 3].mean()
    return Dataset(side, stacks, labels, ["synth"] * n, list(range(n)))


def smoothness_margins(net: Network, params: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """(min |ReLU pre-activation|, min positive pool top-2 gap) at a point.

    Central differences need the loss to be smooth in the perturbation
    neighborhood; these margins certify no ReLU or pool-argmax kink is
    within reach of the step size.
    """
    _, cache = net.forward_batch(params, x, want_cache=True)
    zmin = np.inf
    gapmin = np.inf
    for spec, entry in zip(net.config.conv_spec, cache["conv"]):
        zmin = min(zmin, float(np.abs(entry["z"]).min()))
        if spec.pool_size:
            r = np.maximum(entry["z"], 0)
            stride = spec.pool_stride or spec.pool_size
            win = sliding_window_view(r, (spec.pool_size, spec.pool_size), axis=(2, 3))[
                :, :, ::stride, ::stride
            ]
            flat = np.sort(win.reshape(*win.shape[:4], -1), axis=-1)
            top1, top2 = flat[..., -1], flat[..., -2]
            pos = (top1 > 0) & (top2 > 0)
            if pos.any():
                gapmin = min(gapmin, float((top1[pos] - top2[pos]).min()))
    for entry in cache["fc"][:-1]:
        zmin = min(zmin, float(np.abs(entry["z"]).min()))
    return zmin, gapmin


def find_smooth_point(margin: float = 1e-2, max_tries: int = 200):
    """Deterministically search (param seed, input seed) pairs until the
    evaluation point clears the kink margins; returns (net, params, x)."""
    for pseed in range(max_tries):
        cfg = tiny_config(seed=pseed)
        net = Network(cfg)
        params = net.init_params().astype(np.float64)
        for xseed in range(40):
            rng = np.random.default_rng(xseed)
            x = rng.uniform(0, 1, size=(1, 4, cfg.side, cfg.side))
            zmin, gapmin = smoothness_margins(net, params, x)
            if zmin > margin and gapmin > margin:
                return net, params, x
    raise AssertionError("no smooth evaluation point found")


@pytest.fixture(scope="session")
def tiny_bundle() -> ModelBundle:
    cfg = tiny_config(seed=3)
    net = Network(cfg)
    return ModelBundle(cfg, net.init_params())


def write_png(path, array_u8):
    from PIL import Image

    Image.fromarray(array_u8).save(path)
