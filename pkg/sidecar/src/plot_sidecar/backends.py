"""Model backends behind the service endpoints.

Two families: deterministic stub backends driven by a JSON fixture table
(keyed on the SHA-256 of the raw image bytes), and torch-backed inference
for real weights. The stub family is the one the test suites use; it needs
no model downloads and always answers the same way for the same bytes.

Stub fixture layout::

    {
      "segment":  {"<sha256 hex>": [{"x": 1, "y": 2, "w": 3, "h": 4, "confidence": 0.9}, ...]},
      "classify": {"<sha256 hex>": {"label": "line chart", "confidence": 0.97}}
    }

Either section may be omitted; a missing entry means "nothing detected"
for the detector and a hash-derived fallback label for the classifier, so
stub mode is total over arbitrary images.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .classes import CLASS_NAMES


def image_digest(image: bytes) -> str:
    return hashlib.sha256(image).hexdigest()


@dataclass(frozen=True)
class DetectedBox:
    x: float
    y: float
    w: float
    h: float
    confidence: float


class StubDetector:
    """Fixture-table detector; unknown images detect nothing."""

    def __init__(self, table: dict[str, list[DetectedBox]], fixture_digest: str = ""):
        self._table = table
        self.model_id = f"stub-detector:{fixture_digest[:12]}" if fixture_digest else "stub-detector"

    def segment(self, image: bytes, text_threshold: float, box_threshold: float) -> list[DetectedBox]:
        # one stored confidence stands in for both detector scores
        floor = max(text_threshold, box_threshold)
        return [b for b in self._table.get(image_digest(image), []) if b.confidence >= floor]


class StubClassifier:
    """Fixture-table classifier.

    Unknown images fall back to a label picked deterministically from the
    image hash, keeping the stub total without any randomness.
    """

    def __init__(self, table: dict[str, tuple[str, float]], fixture_digest: str = ""):
        for digest, (label, confidence) in table.items():
            if label not in CLASS_NAMES:
                raise ValueError(f"stub classify entry {digest[:12]}...: unknown label {label!r}")
            if not (0.0 <= confidence <= 1.0):
                raise ValueError(f"stub classify entry {digest[:12]}...: confidence {confidence} outside [0, 1]")
        self._table = table
        self.model_id = f"stub-classifier:{fixture_digest[:12]}" if fixture_digest else "stub-classifier"

    def classify(self, image: bytes) -> tuple[str, float]:
        key = image_digest(image)
        hit = self._table.get(key)
        if hit is not None:
            return hit
        return CLASS_NAMES[int(key[:8], 16) % len(CLASS_NAMES)], 0.5


def load_stub(path: str | Path) -> tuple[StubDetector, StubClassifier]:
    """Build both stub backends from one fixture file."""
    raw = Path(path).read_bytes()
    fixture_digest = hashlib.sha256(raw).hexdigest()
    obj = json.loads(raw.decode("utf-8"))
    if not isinstance(obj, dict):
        raise ValueError("stub fixture must be a JSON object")

    segment_table: dict[str, list[DetectedBox]] = {}
    for digest, boxes in obj.get("segment", {}).items():
        parsed = [DetectedBox(**{k: float(b[k]) for k in ("x", "y", "w", "h", "confidence")}) for b in boxes]
        for box in parsed:
            if not all(math.isfinite(v) for v in (box.x, box.y, box.w, box.h, box.confidence)):
                raise ValueError(f"stub segment entry {digest[:12]}...: non-finite box field")
        segment_table[digest] = parsed

    classify_table = {
        digest: (entry["label"], float(entry["confidence"]))
        for digest, entry in obj.get("classify", {}).items()
    }
    return StubDetector(segment_table, fixture_digest), StubClassifier(classify_table, fixture_digest)


class TorchScriptDetector:
    """Zero-shot subplot detector from a traced torch module.

    The module contract: called with a (1, 3, H, W) float tensor in [0, 1]
    it returns a dict with "boxes" (N, 4) in absolute pixel x0/y0/x1/y1 and
    "scores" (N,); an optional "text_scores" (N,) carries the prompt-match
    score, otherwise "scores" gates both thresholds.
    """

    def __init__(self, weights_path: str | Path, device: str = "cpu"):
        import torch

        self._torch = torch
        self._device = device
        self._module = torch.jit.load(str(weights_path), map_location=device).eval()
        self.model_id = f"torchscript-detector:{Path(weights_path).name}"

    def segment(self, image: bytes, text_threshold: float, box_threshold: float) -> list[DetectedBox]:
        tensor = _image_tensor(self._torch, image, self._device)
        with self._torch.no_grad():
            out = self._module(tensor)
        boxes = out["boxes"].cpu().tolist()
        scores = out["scores"].cpu().tolist()
        text_scores = out["text_scores"].cpu().tolist() if "text_scores" in out else scores
        kept = []
        for (x0, y0, x1, y1), score, text_score in zip(boxes, scores, text_scores):
            if score >= box_threshold and text_score >= text_threshold:
                kept.append(DetectedBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0, confidence=float(score)))
        return kept


class ResNetClassifier:
    """ResNet-152 with a taxonomy-sized head, loaded from a state dict."""

    def __init__(self, weights_path: str | Path, device: str = "cpu"):
        import torch
        from torchvision import models

        self._torch = torch
        self._device = device
        model = models.resnet152()
        model.fc = torch.nn.Linear(model.fc.in_features, len(CLASS_NAMES))
        state = torch.load(str(weights_path), map_location=device)
        model.load_state_dict(state)
        self._model = model.to(device).eval()
        self.model_id = f"resnet152-classifier:{Path(weights_path).name}"

    def classify(self, image: bytes) -> tuple[str, float]:
        tensor = _classifier_tensor(self._torch, image, self._device)
        with self._torch.no_grad():
            probs = self._torch.softmax(self._model(tensor)[0], dim=0)
        index = int(probs.argmax())
        return CLASS_NAMES[index], float(probs[index])


def _pil_rgb(image: bytes):
    import io

    from PIL import Image

    return Image.open(io.BytesIO(image)).convert("RGB")


def _image_tensor(torch, image: bytes, device: str):
    import numpy as np

    array = np.asarray(_pil_rgb(image), dtype="float32") / 255.0
    return torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0).to(device)


# ImageNet statistics, matching the fine-tuning preprocessing.
_NORM_MEAN = (0.485, 0.456, 0.406)
_NORM_STD = (0.229, 0.224, 0.225)


def _classifier_tensor(torch, image: bytes, device: str):
    from torchvision import transforms

    pipeline = transforms.Compose(
        [
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
            transforms.Normalize(_NORM_MEAN, _NORM_STD),
        ]
    )
    return pipeline(_pil_rgb(image)).unsqueeze(0).to(device)
