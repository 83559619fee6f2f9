"""Forward/backward passes over a flat parameter vector.

The network is conv(+ReLU, optional maxpool) blocks, then fully connected
ReLU layers, then a single sigmoid output. Gradients are exact MSE
derivatives w.r.t. every parameter; everything runs in the dtype of the
parameter vector (float32 for training, float64 for finite-difference
verification).
"""

from __future__ import annotations

import numpy as np

from pem.errors import PemError
from pem.model import kernels
from pem.model.config import ModelConfig


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the output in the open interval even when exp saturates
    tiny = np.nextafter(z.dtype.type(0), z.dtype.type(1))
    top = np.nextafter(z.dtype.type(1), z.dtype.type(0))
    return np.clip(out, tiny, top)


class Network:
    """Stateless compute graph for one ModelConfig."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.layout = config.param_layout()
        self.n_params = config.param_count()

    def init_params(self) -> np.ndarray:
        """Kaiming-uniform weights (fan-in, ReLU gain), zero biases, seeded."""
        rng = np.random.Generator(np.random.PCG64(self.config.seed))
        params = np.zeros(self.n_params, dtype=np.float32)
        for name, shape, offset in self.layout:
            if name.endswith(".b"):
                continue
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            size = int(np.prod(shape))
            params[offset : offset + size] = rng.uniform(-bound, bound, size).astype(
                np.float32
            )
        return params

    def views(self, params: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for name, shape, offset in self.layout:
            size = int(np.prod(shape))
            out[name] = params[offset : offset + size].reshape(shape)
        return out

    def forward_batch(self, params, x, want_cache=False):
        """Predictions in (0, 1) for a (N, 4, side, side) batch."""
        v = self.views(params)
        cache = {"conv": [], "fc": []}
        a = np.ascontiguousarray(x, dtype=params.dtype)
        for i, spec in enumerate(self.config.conv_spec):
            z = kernels.conv2d_forward(
                a, v[f"conv{i}.w"], v[f"conv{i}.b"], spec.stride, spec.padding
            )
            r = np.maximum(z, 0)
            entry = {"x": a, "z": z}
            if spec.pool_size:
                stride = spec.pool_stride or spec.pool_size
                pooled, arg = kernels.maxpool_forward(r, spec.pool_size, stride)
                entry["arg"] = arg
                entry["r_shape"] = r.shape
                a = pooled
            else:
                a = r
            cache["conv"].append(entry)
        feat_shape = a.shape
        a = a.reshape(a.shape[0], -1)
        n_fc = len(self.config.fc_spec) + 1
        for i in range(n_fc):
            w, b = v[f"fc{i}.w"], v[f"fc{i}.b"]
            z = a @ w.T + b
            cache["fc"].append({"x": a, "z": z})
            a = np.maximum(z, 0) if i < n_fc - 1 else z
        preds = _sigmoid(a[:, 0])
        if want_cache:
            cache["feat_shape"] = feat_shape
            cache["preds"] = preds
            return preds, cache
        return preds

    def loss_and_grad(self, params, x, targets, loss_scale=1.0):
        """Mean-squared-error loss and its gradient w.r.t. params."""
        targets = np.asarray(targets, dtype=params.dtype).reshape(-1)
        preds, cache = self.forward_batch(params, x, want_cache=True)
        n = len(targets)
        diff = preds - targets
        loss = loss_scale * float(diff @ diff) / n
        dpred = loss_scale * 2.0 * diff / n
        grad = np.zeros_like(params)
        gv = self.views(grad)
        v = self.views(params)

        dz = (dpred * cache["preds"] * (1 - cache["preds"]))[:, None]
        n_fc = len(self.config.fc_spec) + 1
        for i in reversed(range(n_fc)):
            entry = cache["fc"][i]
            gv[f"fc{i}.w"] += dz.T @ entry["x"]
            gv[f"fc{i}.b"] += dz.sum(axis=0)
            da = dz @ v[f"fc{i}.w"]
            if i > 0:
                dz = da * (cache["fc"][i - 1]["z"] > 0)
        da = da.reshape(cache["feat_shape"])
        for i in reversed(range(len(self.config.conv_spec))):
            spec = self.config.conv_spec[i]
            entry = cache["conv"][i]
            if spec.pool_size:
                da = kernels.maxpool_backward(da, entry["arg"], entry["r_shape"])
            dzc = da * (entry["z"] > 0)
            da, dwc, dbc = kernels.conv2d_backward(
                entry["x"], v[f"conv{i}.w"], spec.stride, spec.padding, dzc
            )
            gv[f"conv{i}.w"] += dwc
            gv[f"conv{i}.b"] += dbc
        # a non-finite loss is a divergence for the caller to classify; a
        # non-finite gradient under a finite loss is a backward overflow
        if np.isfinite(loss) and not np.all(np.isfinite(grad)):
            raise PemError("numerical overflow")
        return loss, grad, preds
