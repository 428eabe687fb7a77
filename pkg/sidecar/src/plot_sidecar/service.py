"""HTTP surface of the sidecar.

Three endpoints over self-describing JSON:

- ``POST /segment``  {image, text_threshold, box_threshold} -> {boxes}
- ``POST /classify`` {image} -> {label, confidence}
- ``GET /health``    -> {status, model_ids, classes}

Images travel as base64. Client errors (bad thresholds, undecodable
payloads, malformed bodies) answer 400; endpoints whose model is not
loaded answer 503; when the bounded admission queue is full the service
answers 429 instead of stacking work.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading
from contextlib import contextmanager

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .classes import CLASS_NAMES

DEFAULT_THRESHOLD = 0.3
DEFAULT_QUEUE_SIZE = 16


class SegmentRequest(BaseModel):
    image: str
    text_threshold: float = DEFAULT_THRESHOLD
    box_threshold: float = DEFAULT_THRESHOLD


class ClassifyRequest(BaseModel):
    image: str


class AdmissionGate:
    """At most `limit` requests inside inference at once; 429 beyond that."""

    def __init__(self, limit: int):
        if limit < 1:
            raise ValueError("queue size must be at least 1")
        self._slots = threading.Semaphore(limit)

    @contextmanager
    def slot(self):
        if not self._slots.acquire(blocking=False):
            raise HTTPException(status_code=429, detail="request queue full; retry later")
        try:
            yield
        finally:
            self._slots.release()


def _check_threshold(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        raise HTTPException(status_code=400, detail=f"{name} must be in (0, 1], got {value}")


def _decode_image(encoded: str) -> tuple[bytes, tuple[int, int]]:
    from PIL import Image

    try:
        raw = base64.b64decode(encoded, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(status_code=400, detail=f"image is not valid base64: {exc}") from exc
    try:
        with Image.open(io.BytesIO(raw)) as im:
            size = im.size
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"image payload is not a decodable raster: {exc}") from exc
    return raw, size


def _clamp_box(box, width: int, height: int) -> dict | None:
    """Intersect with the image rectangle; degenerate leftovers are dropped."""
    x0 = min(max(box.x, 0.0), float(width))
    y0 = min(max(box.y, 0.0), float(height))
    x1 = min(max(box.x + box.w, 0.0), float(width))
    y1 = min(max(box.y + box.h, 0.0), float(height))
    if x1 - x0 <= 0.0 or y1 - y0 <= 0.0:
        return None
    return {
        "x": x0,
        "y": y0,
        "w": x1 - x0,
        "h": y1 - y0,
        "confidence": min(max(box.confidence, 0.0), 1.0),
    }


def create_app(detector=None, classifier=None, queue_size: int = DEFAULT_QUEUE_SIZE) -> FastAPI:
    """Assemble the service around already-loaded backends.

    Either backend may be None, in which case its endpoint answers 503 and
    /health reports "loading": readiness is simply "both models present".
    """
    app = FastAPI(title="plot-sidecar")
    gate = AdmissionGate(queue_size)
    # inference is serialized per model; the two models never block each other
    detector_lock = threading.Lock()
    classifier_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    def malformed_body(_request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health")
    def health() -> dict:
        loaded = [backend.model_id for backend in (detector, classifier) if backend is not None]
        ready = detector is not None and classifier is not None
        return {
            "status": "ok" if ready else "loading",
            "model_ids": loaded,
            "classes": list(CLASS_NAMES),
        }

    @app.post("/segment")
    def segment(body: SegmentRequest) -> dict:
        if detector is None:
            raise HTTPException(status_code=503, detail="detector model not loaded")
        _check_threshold("text_threshold", body.text_threshold)
        _check_threshold("box_threshold", body.box_threshold)
        image, (width, height) = _decode_image(body.image)
        with gate.slot(), detector_lock:
            detected = detector.segment(image, body.text_threshold, body.box_threshold)
        boxes = []
        for raw in detected:
            clamped = _clamp_box(raw, width, height)
            if clamped is not None:
                boxes.append(clamped)
        return {"boxes": boxes}

    @app.post("/classify")
    def classify(body: ClassifyRequest) -> dict:
        if classifier is None:
            raise HTTPException(status_code=503, detail="classifier model not loaded")
        image, _size = _decode_image(body.image)
        with gate.slot(), classifier_lock:
            label, confidence = classifier.classify(image)
        if label not in CLASS_NAMES:
            raise HTTPException(status_code=500, detail=f"backend produced unpublished label {label!r}")
        return {"label": label, "confidence": min(max(float(confidence), 0.0), 1.0)}

    return app
