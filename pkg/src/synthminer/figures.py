"""Figure handling: subplot selection, plot-type gating, line-chart digitizing.

Subplot boxes and figure classes come from the vision sidecar over HTTP;
the actual reading of data points out of a line chart is done by a vision
model through the gateway, answering in a small plain-text grammar that
parse_line_plot_response inverts. A dead sidecar never fails the pipeline;
the affected figure is skipped.
"""

from __future__ import annotations

import base64
import io
import math
import re
from dataclasses import dataclass

from . import prompts
from .gateway import LlmGateway, ModelRequest
from .ontology import ParseError

DEFAULT_CONFIDENCE_THRESHOLD = 0.3
DEFAULT_TEXT_THRESHOLD = 0.3
DEFAULT_BOX_THRESHOLD = 0.3
DEFAULT_MAX_AREA_RATIO = 0.5
DEFAULT_EXPAND_MARGIN = 0.05

# Plot types that carry digitizable quantitative data.
ALLOWED_PLOT_CLASSES = ("line chart", "bar plot", "scatter plot")

LINE_CHART_CLASS = "line chart"


class SidecarUnavailable(Exception):
    """The vision sidecar cannot be reached or is not serving."""


class ImageDecodeError(Exception):
    """The figure payload is not a decodable image."""


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float
    confidence: float

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class PlotClass:
    label: str
    confidence: float


@dataclass(frozen=True)
class LinePlotSeries:
    name: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))


@dataclass(frozen=True)
class ExtractedLinePlotData:
    series: tuple[LinePlotSeries, ...]
    title: str | None = None
    x_axis_label: str | None = None
    x_axis_unit: str | None = None
    y_left_axis_label: str | None = None
    y_left_axis_unit: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "series", tuple(self.series))


@dataclass
class PlotParseResult:
    data: ExtractedLinePlotData
    warnings: list[str]


def image_size(image: bytes) -> tuple[int, int]:
    from PIL import Image

    try:
        with Image.open(io.BytesIO(image)) as im:
            return im.size
    except Exception as exc:
        raise ImageDecodeError(f"not a decodable image: {exc}") from exc


def crop_image(image: bytes, box: BoundingBox) -> bytes:
    """Cut a box out of the figure; returns PNG bytes, input untouched."""
    from PIL import Image

    with Image.open(io.BytesIO(image)) as im:
        region = im.crop((round(box.x), round(box.y), round(box.x + box.w), round(box.y + box.h)))
        buf = io.BytesIO()
        region.save(buf, format="PNG")
        return buf.getvalue()


class HttpSidecarClient:
    """Talks the sidecar wire protocol; all errors fold into the two above."""

    def __init__(self, base_url: str, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _post(self, path: str, body: dict) -> dict:
        import requests

        try:
            resp = requests.post(f"{self.base_url}{path}", json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise SidecarUnavailable(f"sidecar unreachable: {exc}") from exc
        if resp.status_code == 400:
            raise ImageDecodeError(f"sidecar rejected the request: {resp.text[:200]}")
        if resp.status_code != 200:
            raise SidecarUnavailable(f"sidecar returned {resp.status_code}")
        return resp.json()

    def segment(
        self,
        image: bytes,
        text_threshold: float = DEFAULT_TEXT_THRESHOLD,
        box_threshold: float = DEFAULT_BOX_THRESHOLD,
    ) -> list[BoundingBox]:
        payload = self._post(
            "/segment",
            {
                "image": base64.b64encode(image).decode("ascii"),
                "text_threshold": text_threshold,
                "box_threshold": box_threshold,
            },
        )
        return [
            BoundingBox(x=b["x"], y=b["y"], w=b["w"], h=b["h"], confidence=b["confidence"])
            for b in payload.get("boxes", [])
        ]

    def classify(self, image: bytes) -> PlotClass:
        payload = self._post("/classify", {"image": base64.b64encode(image).decode("ascii")})
        return PlotClass(label=payload["label"], confidence=payload["confidence"])

    def health(self) -> dict:
        import requests

        try:
            resp = requests.get(f"{self.base_url}/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise SidecarUnavailable(f"sidecar unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise SidecarUnavailable(f"sidecar returned {resp.status_code}")
        return resp.json()


def select_subfigures(
    image: bytes,
    sidecar,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    max_area_ratio: float = DEFAULT_MAX_AREA_RATIO,
    margin: float = DEFAULT_EXPAND_MARGIN,
    text_threshold: float = DEFAULT_TEXT_THRESHOLD,
    box_threshold: float = DEFAULT_BOX_THRESHOLD,
) -> list[BoundingBox]:
    """Pick the subplot boxes worth digitizing.

    Detector boxes below the confidence threshold or covering at least
    `max_area_ratio` of the figure are discarded; survivors are expanded by
    `margin` of their own width/height per side (clamped to the image) so
    axis labels and tick marks stay inside the crop. When nothing survives
    the figure is treated as one single plot: a full-image box is returned.
    """
    width, height = image_size(image)
    image_area = float(width * height)
    kept: list[BoundingBox] = []
    for box in sidecar.segment(image, text_threshold=text_threshold, box_threshold=box_threshold):
        if box.confidence < confidence_threshold:
            continue
        if box.area >= max_area_ratio * image_area:
            continue
        x0 = max(0.0, box.x - margin * box.w)
        y0 = max(0.0, box.y - margin * box.h)
        x1 = min(float(width), box.x + box.w * (1 + margin))
        y1 = min(float(height), box.y + box.h * (1 + margin))
        expanded = BoundingBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0, confidence=box.confidence)
        if expanded.w <= 0 or expanded.h <= 0:
            continue
        if expanded.area >= max_area_ratio * image_area:
            continue
        kept.append(expanded)
    if not kept:
        return [BoundingBox(x=0.0, y=0.0, w=float(width), h=float(height), confidence=1.0)]
    return kept


def classify_figure(image: bytes, sidecar) -> PlotClass:
    image_size(image)  # fail early on broken payloads
    return sidecar.classify(image)


def is_digitizable(plot_class: PlotClass) -> bool:
    return plot_class.label in ALLOWED_PLOT_CLASSES


_METADATA_KEYS = ("title", "x_axis_label", "x_axis_unit", "y_left_axis_label", "y_left_axis_unit")
_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_PAIR_RE = re.compile(rf"^\[\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\]$")
_SERIES_LINE_RE = re.compile(r"^(.+?):\s*(\[.*\])\s*$")
_METADATA_LINE_RE = re.compile(rf"^({'|'.join(_METADATA_KEYS)})\s*:\s*(.*)$", re.IGNORECASE)


def _split_point_groups(blob: str, series_name: str) -> list[str]:
    inner = blob.strip()[1:-1]  # outer brackets guaranteed by the line regex
    groups: list[str] = []
    depth = 0
    current: list[str] = []
    for ch in inner:
        if ch == "[":
            depth += 1
            current.append(ch)
        elif ch == "]":
            depth -= 1
            current.append(ch)
            if depth < 0:
                raise ParseError("bad_coordinates", "unbalanced brackets", f"{series_name}[{len(groups)}]")
        elif depth == 0:
            if ch == ",":
                groups.append("".join(current).strip())
                current = []
            elif not ch.isspace():
                raise ParseError(
                    "bad_coordinates", f"unexpected character {ch!r}", f"{series_name}[{len(groups)}]"
                )
        else:
            current.append(ch)
    tail = "".join(current).strip()
    if tail or not groups:
        groups.append(tail)
    if depth != 0:
        raise ParseError("bad_coordinates", "unbalanced brackets", f"{series_name}[{len(groups) - 1}]")
    return groups


def parse_line_plot_response(text: str) -> PlotParseResult:
    """Invert the digitizer answer grammar.

    Series lines look like ``Name: [[x, y], [x, y], ...]``; the five
    metadata lines are ``title:``, ``x_axis_label:``, ``x_axis_unit:``,
    ``y_left_axis_label:``, ``y_left_axis_unit:`` (empty value means
    absent). Anything else is ignored with a warning. Raises ParseError
    with code no_series, bad_coordinates (path names the series and point
    index), or duplicate_series.
    """
    series: list[LinePlotSeries] = []
    names: set[str] = set()
    metadata: dict[str, str | None] = {key: None for key in _METADATA_KEYS}
    warnings: list[str] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("```"):
            continue
        meta_match = _METADATA_LINE_RE.match(line)
        if meta_match:
            value = meta_match.group(2).strip()
            if value:
                metadata[meta_match.group(1).lower()] = value
            continue
        series_match = _SERIES_LINE_RE.match(line)
        if series_match:
            name = series_match.group(1).strip()
            if not name:
                warnings.append(f"line {lineno}: series with empty name ignored")
                continue
            if name in names:
                raise ParseError("duplicate_series", f"series {name!r} appears twice", name)
            points: list[tuple[float, float]] = []
            for idx, group in enumerate(_split_point_groups(series_match.group(2), name)):
                pair = _PAIR_RE.match(group)
                if not pair:
                    raise ParseError("bad_coordinates", f"malformed point {group!r}", f"{name}[{idx}]")
                points.append((float(pair.group(1)), float(pair.group(2))))
            if not points:
                raise ParseError("bad_coordinates", "series has no points", name)
            names.add(name)
            series.append(LinePlotSeries(name=name, points=tuple(points)))
            continue
        warnings.append(f"line {lineno}: ignored {line[:60]!r}")
    if not series:
        raise ParseError("no_series", "no series line found in digitizer answer")
    data = ExtractedLinePlotData(
        series=tuple(series),
        title=metadata["title"],
        x_axis_label=metadata["x_axis_label"],
        x_axis_unit=metadata["x_axis_unit"],
        y_left_axis_label=metadata["y_left_axis_label"],
        y_left_axis_unit=metadata["y_left_axis_unit"],
    )
    return PlotParseResult(data=data, warnings=warnings)


def render_line_plot_response(data: ExtractedLinePlotData) -> str:
    """Write plot data back into the answer grammar (parse's right inverse).

    Raises ValueError for values the grammar cannot carry: series names
    that are empty once trimmed, contain a newline, or collide with a
    metadata key.
    """
    lines: list[str] = []
    for s in data.series:
        name = s.name.strip()
        if not name or name != s.name:
            raise ValueError(f"series name {s.name!r} is not renderable (must be trimmed, non-empty)")
        if "\n" in name or name.lower() in _METADATA_KEYS:
            raise ValueError(f"series name {s.name!r} collides with the answer grammar")
        if not s.points:
            raise ValueError(f"series {name!r} has no points")
        if any(not (math.isfinite(x) and math.isfinite(y)) for x, y in s.points):
            raise ValueError(f"series {name!r} has non-finite coordinates")
        rendered = ", ".join(f"[{x!r}, {y!r}]" for x, y in s.points)
        lines.append(f"{name}: [{rendered}]")
    for key in _METADATA_KEYS:
        value = getattr(data, key)
        if value is not None:
            lines.append(f"{key}: {value}")
    return "\n".join(lines)


def digitize_line_plot(
    image: bytes,
    gateway: LlmGateway,
    max_tokens: int = 1024,
    temperature: float = 0.0,
    max_retries: int = 3,
) -> PlotParseResult:
    response = gateway.complete_vision(
        ModelRequest(
            kind="vision",
            user_prompt=prompts.LINE_CHART_PROMPT,
            image=image,
            temperature=temperature,
            max_tokens=max_tokens,
            max_retries=max_retries,
        )
    )
    return parse_line_plot_response(response.text)


def plot_data_to_obj(data: ExtractedLinePlotData) -> dict:
    """JSON-ready layout used for figures/<figure_id>.lineplot.json."""
    return {
        "series": [{"name": s.name, "points": [[x, y] for x, y in s.points]} for s in data.series],
        "title": data.title,
        "x_axis_label": data.x_axis_label,
        "x_axis_unit": data.x_axis_unit,
        "y_left_axis_label": data.y_left_axis_label,
        "y_left_axis_unit": data.y_left_axis_unit,
    }


def plot_data_from_obj(obj: dict) -> ExtractedLinePlotData:
    return ExtractedLinePlotData(
        series=tuple(
            LinePlotSeries(name=s["name"], points=tuple((p[0], p[1]) for p in s["points"]))
            for s in obj.get("series", [])
        ),
        title=obj.get("title"),
        x_axis_label=obj.get("x_axis_label"),
        x_axis_unit=obj.get("x_axis_unit"),
        y_left_axis_label=obj.get("y_left_axis_label"),
        y_left_axis_unit=obj.get("y_left_axis_unit"),
    )
