"""Latent-diffusion backend server for the newline-JSON tensor protocol."""

from .model import LatentModel, build_reference_model, load_model, save_checkpoint
from .server import BackendServer, ServerConfig, serve

__version__ = "0.1.0"

__all__ = [
    "LatentModel",
    "build_reference_model",
    "load_model",
    "save_checkpoint",
    "BackendServer",
    "ServerConfig",
    "serve",
    "__version__",
]
