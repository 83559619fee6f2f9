"""CNN affect regressor: config, kernels, network, training, persistence."""

from pem.model.config import ConvLayerSpec, ModelConfig, alexnet_config, small_config, tiny_config
from pem.model.io import load_model, save_model
from pem.model.network import Network
from pem.model.train import AffectTrace, ModelBundle, forward, loss, predict_video, train

__all__ = [
    "AffectTrace",
    "ConvLayerSpec",
    "ModelBundle",
    "ModelConfig",
    "Network",
    "alexnet_config",
    "forward",
    "load_model",
    "loss",
    "predict_video",
    "save_model",
    "small_config",
    "tiny_config",
    "train",
]
