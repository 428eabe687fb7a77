"""Inference sidecar: subplot detection and document-figure classification."""

from .backends import (
    DetectedBox,
    ResNetClassifier,
    StubClassifier,
    StubDetector,
    TorchScriptDetector,
    image_digest,
    load_stub,
)
from .classes import CLASS_NAMES
from .service import create_app

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "DetectedBox",
    "ResNetClassifier",
    "StubClassifier",
    "StubDetector",
    "TorchScriptDetector",
    "create_app",
    "image_digest",
    "load_stub",
    "__version__",
]
