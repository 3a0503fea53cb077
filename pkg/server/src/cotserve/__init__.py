"""HTTP service exposing generation, classification, and embedding models
behind a small JSON wire protocol, plus a health endpoint."""

from .config import ConfigError, ServerConfig
from .models import (
    CheckpointError,
    ClassifierModel,
    EmbedderModel,
    GeneratorModel,
    ModelHandle,
    load_all,
    load_finetuned,
)
from .app import BodyRecorder, ServiceError, build_app, serve_in_thread

__all__ = [
    "BodyRecorder",
    "CheckpointError",
    "ClassifierModel",
    "ConfigError",
    "EmbedderModel",
    "GeneratorModel",
    "ModelHandle",
    "ServerConfig",
    "ServiceError",
    "build_app",
    "load_all",
    "load_finetuned",
    "serve_in_thread",
]
