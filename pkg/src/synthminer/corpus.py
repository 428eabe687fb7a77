"""Paper ingestion and text preparation.

A paper arrives as a bundle directory (paper.md + figures/ + meta.json)
produced by an upstream OCR step. Ingestion cleans the markdown, copies
everything into a content store, and appends a manifest line; the manifest
is append-only and the last line per id wins, so re-ingesting is safe.
"""

from __future__ import annotations

import json
import math
import os
import re
import shutil
import tempfile
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

SOURCES = ("arxiv", "chemrxiv", "omg24")

DEFAULT_REFERENCES_WINDOW = 50

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".bmp": "image/bmp",
    ".webp": "image/webp",
    ".tif": "image/tiff",
    ".tiff": "image/tiff",
    ".svg": "image/svg+xml",
}


class IngestError(ValueError):
    """A bundle directory is malformed (missing files, bad meta, dup figures)."""


@dataclass(frozen=True)
class FigureAsset:
    figure_id: str
    payload: bytes
    media_type: str
    caption: str | None = None


@dataclass(frozen=True)
class PaperDoc:
    id: str
    source: str
    markdown: str
    figures: tuple[FigureAsset, ...] = ()
    meta: dict = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "figures", tuple(self.figures))


@dataclass(frozen=True)
class Chunk:
    text: str
    index: int
    approx_tokens: int


_IMAGE_MARKER = re.compile(r"!\[[^\]]*\]\([^)]*\)")
_REFS_HEADING = re.compile(r"^\s{0,3}#{1,6}\s+references\s*#*\s*$", re.IGNORECASE)


def strip_image_markers(markdown: str) -> str:
    # run to fixpoint so the operation is idempotent even on pathological input
    prev = None
    while prev != markdown:
        prev = markdown
        markdown = _IMAGE_MARKER.sub("", markdown)
    return markdown


def remove_references_section(markdown: str, window: int = DEFAULT_REFERENCES_WINDOW) -> str:
    """Drop every References heading plus the `window` lines after it.

    All occurrences are removed in one pass, which makes the function
    idempotent: the output never contains a References heading line.
    """
    lines = markdown.split("\n")
    out: list[str] = []
    idx = 0
    while idx < len(lines):
        if _REFS_HEADING.match(lines[idx]):
            idx += 1 + window
        else:
            out.append(lines[idx])
            idx += 1
    return "\n".join(out)


def postprocess_markdown(markdown: str, references_window: int = DEFAULT_REFERENCES_WINDOW) -> str:
    """Clean OCR markdown: image markers out, References section out."""
    return remove_references_section(strip_image_markers(markdown), references_window)


def approx_token_count(text: str) -> int:
    """Cheap token estimate: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


def _split_keep(text: str, sep: str) -> list[str]:
    """Split while keeping separators attached, so the pieces concatenate back."""
    parts = text.split(sep)
    out = []
    for i, part in enumerate(parts):
        if i < len(parts) - 1:
            out.append(part + sep)
        elif part:
            out.append(part)
    return out


def chunk_text(text: str, limit: int) -> list[Chunk]:
    """Partition text into chunks of at most `limit` approximate tokens.

    Prefers paragraph boundaries, falls back to line boundaries, and only
    hard-splits when a single line is still too long. Concatenating the
    chunk texts reproduces the input byte for byte.
    """
    if limit < 1:
        raise ValueError("chunk limit must be >= 1")
    if not text:
        return []
    max_chars = 4 * limit
    pieces: list[str] = []
    for para in _split_keep(text, "\n\n"):
        if len(para) <= max_chars:
            pieces.append(para)
            continue
        for line in _split_keep(para, "\n"):
            if len(line) <= max_chars:
                pieces.append(line)
            else:
                pieces.extend(line[i : i + max_chars] for i in range(0, len(line), max_chars))
    chunks: list[str] = []
    current = ""
    for piece in pieces:
        if current and len(current) + len(piece) > max_chars:
            chunks.append(current)
            current = piece
        else:
            current += piece
    if current:
        chunks.append(current)
    return [Chunk(text=c, index=i, approx_tokens=approx_token_count(c)) for i, c in enumerate(chunks)]


class DocumentStore:
    """On-disk content directory plus an append-safe NDJSON manifest.

    Layout:
        <root>/manifest.jsonl
        <root>/<paper_id>/paper.md
        <root>/<paper_id>/meta.json
        <root>/<paper_id>/figures/<figure_id>.<ext>

    Stage outputs (verdicts, extractions, digitized figures) live in the
    same per-paper directory, so re-ingesting a paper clears its artifacts.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.jsonl"

    def paper_dir(self, paper_id: str) -> Path:
        return self.root / paper_id

    def manifest_entries(self) -> dict[str, dict]:
        """Manifest keyed by paper id; later lines supersede earlier ones."""
        entries: dict[str, dict] = {}
        if not self.manifest_path.exists():
            return entries
        for line in self.manifest_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            entries[entry["id"]] = entry
        return entries

    def ids(self) -> list[str]:
        return sorted(self.manifest_entries())

    def ingest(self, bundle_dir: str | Path, references_window: int = DEFAULT_REFERENCES_WINDOW) -> PaperDoc:
        bundle = Path(bundle_dir)
        md_path = bundle / "paper.md"
        meta_path = bundle / "meta.json"
        if not md_path.is_file():
            raise IngestError(f"bundle {bundle} has no paper.md")
        if not meta_path.is_file():
            raise IngestError(f"bundle {bundle} has no meta.json")
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestError(f"bundle {bundle} meta.json is not valid JSON: {exc}") from exc
        if not isinstance(meta, dict) or "id" not in meta or "source" not in meta:
            raise IngestError(f"bundle {bundle} meta.json must provide id and source")
        paper_id = str(meta["id"]).strip()
        source = str(meta["source"]).strip()
        if not paper_id:
            raise IngestError(f"bundle {bundle} has an empty paper id")
        if source not in SOURCES:
            raise IngestError(f"bundle {bundle} has unknown source {source!r} (expected one of {SOURCES})")
        if paper_id in (".", "..") or "/" in paper_id or "\\" in paper_id:
            raise IngestError(f"paper id {paper_id!r} is not usable as a directory name")

        markdown = postprocess_markdown(md_path.read_text(encoding="utf-8"), references_window)
        captions = meta.get("captions") or {}
        figures: list[FigureAsset] = []
        seen: set[str] = set()
        fig_dir = bundle / "figures"
        if fig_dir.is_dir():
            for path in sorted(fig_dir.iterdir()):
                if not path.is_file():
                    continue
                figure_id = path.stem
                if figure_id in seen:
                    raise IngestError(f"bundle {bundle} has duplicate figure id {figure_id!r}")
                seen.add(figure_id)
                figures.append(
                    FigureAsset(
                        figure_id=figure_id,
                        payload=path.read_bytes(),
                        media_type=_MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream"),
                        caption=captions.get(figure_id),
                    )
                )
        doc = PaperDoc(id=paper_id, source=source, markdown=markdown, figures=tuple(figures), meta=meta)
        self._persist(doc, fig_dir)
        return doc

    def _persist(self, doc: PaperDoc, fig_dir: Path) -> None:
        # Build the new directory next to the target, then swap it in, so a
        # concurrent reader sees either the old version or the new one.
        tmp = Path(tempfile.mkdtemp(prefix=f".ingest-{uuid.uuid4().hex[:8]}-", dir=self.root))
        try:
            (tmp / "paper.md").write_text(doc.markdown, encoding="utf-8")
            (tmp / "meta.json").write_text(
                json.dumps(doc.meta, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            out_figs = tmp / "figures"
            out_figs.mkdir()
            if fig_dir.is_dir():
                for path in sorted(fig_dir.iterdir()):
                    if path.is_file():
                        shutil.copy2(path, out_figs / path.name)
            target = self.paper_dir(doc.id)
            if target.exists():
                trash = self.root / f".trash-{uuid.uuid4().hex[:8]}"
                os.rename(target, trash)
                os.rename(tmp, target)
                shutil.rmtree(trash, ignore_errors=True)
            else:
                os.rename(tmp, target)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        entry = {
            "id": doc.id,
            "source": doc.source,
            "path": doc.id,
            "n_figures": len(doc.figures),
            "ingested_at": datetime.now(timezone.utc).isoformat(),
        }
        with open(self.manifest_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def load(self, paper_id: str) -> PaperDoc:
        entry = self.manifest_entries().get(paper_id)
        if entry is None:
            raise KeyError(paper_id)
        doc_dir = self.root / entry["path"]
        meta = json.loads((doc_dir / "meta.json").read_text(encoding="utf-8"))
        captions = meta.get("captions") or {}
        figures = []
        fig_dir = doc_dir / "figures"
        if fig_dir.is_dir():
            for path in sorted(fig_dir.iterdir()):
                if path.is_file():
                    figures.append(
                        FigureAsset(
                            figure_id=path.stem,
                            payload=path.read_bytes(),
                            media_type=_MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream"),
                            caption=captions.get(path.stem),
                        )
                    )
        return PaperDoc(
            id=paper_id,
            source=entry["source"],
            markdown=(doc_dir / "paper.md").read_text(encoding="utf-8"),
            figures=tuple(figures),
            meta=meta,
        )


def ingest_paper(bundle_dir: str | Path, store: DocumentStore | str | Path) -> PaperDoc:
    if not isinstance(store, DocumentStore):
        store = DocumentStore(store)
    return store.ingest(bundle_dir)


def load_paper(store: DocumentStore | str | Path, paper_id: str) -> PaperDoc:
    if not isinstance(store, DocumentStore):
        store = DocumentStore(store)
    return store.load(paper_id)
