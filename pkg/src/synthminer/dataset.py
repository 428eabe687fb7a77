"""Dataset assembly, export, and summary statistics.

Stage outputs join into DatasetEntry values keyed by (paper id, material).
Exports are deterministic: kept entries are written one per line in
canonical serialization sorted by (paper_id, material_name), dropped
entries go to a sibling ``<name>.drops`` audit file, and identical entry
sets always produce byte-identical files regardless of input order.
"""

from __future__ import annotations

import json
import random
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .corpus import PaperDoc
from .evaluation import CRITERIA, JudgeScores, judge_report_obj
from .extraction import DropDecision
from .ontology import SynthesisRecord, record_to_obj

GROUP_KEYS = ("synthesis_method", "material_category", "source")


class KeyMismatch(ValueError):
    """Stage outputs being joined disagree on which paper they belong to."""


_SLUG_RUN = re.compile(r"[^a-z0-9]+")


def material_slug(name: str) -> str:
    """Stable file key for a material name: lowercase, punctuation to '-'."""
    slug = _SLUG_RUN.sub("-", name.lower()).strip("-")
    return slug or "unnamed"


@dataclass(frozen=True)
class Stamped:
    """A stage output bound to the paper it was computed from."""

    paper_id: str
    value: Any


@dataclass(frozen=True)
class DatasetEntry:
    paper_id: str
    source: str
    material_name: str
    synthesis: SynthesisRecord
    judge: JudgeScores | None
    figure_refs: tuple[str, ...]
    drop: DropDecision
    provenance: dict = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "figure_refs", tuple(self.figure_refs))


def _unstamp(value, paper_id: str, what: str):
    if isinstance(value, Stamped):
        if value.paper_id != paper_id:
            raise KeyMismatch(f"{what} belongs to paper {value.paper_id!r}, expected {paper_id!r}")
        return value.value
    return value


def assemble_entry(
    paper: PaperDoc,
    material: str,
    record: SynthesisRecord | Stamped,
    judge: JudgeScores | Stamped | None,
    figures: Iterable[str | Stamped],
    drop: DropDecision,
    provenance: dict | None = None,
) -> DatasetEntry:
    """Join one material's stage outputs into an entry.

    Inputs may be wrapped in Stamped to assert which paper they came from;
    a mismatch raises KeyMismatch instead of silently mixing papers.
    """
    rec = _unstamp(record, paper.id, "synthesis record")
    jdg = _unstamp(judge, paper.id, "judge report") if judge is not None else None
    refs = sorted(_unstamp(f, paper.id, "figure reference") for f in figures)
    return DatasetEntry(
        paper_id=paper.id,
        source=paper.source,
        material_name=material,
        synthesis=rec,
        judge=jdg,
        figure_refs=tuple(refs),
        drop=drop,
        provenance=provenance or {},
    )


def _sorted_deep(value):
    if isinstance(value, dict):
        return {k: _sorted_deep(value[k]) for k in sorted(value)}
    if isinstance(value, list):
        return [_sorted_deep(v) for v in value]
    return value


def entry_to_obj(entry: DatasetEntry) -> dict:
    return {
        "paper_id": entry.paper_id,
        "source": entry.source,
        "material_name": entry.material_name,
        "synthesis": record_to_obj(entry.synthesis),
        "judge": judge_report_obj(entry.judge) if entry.judge is not None else None,
        "figure_refs": list(entry.figure_refs),
        "drop": {"kept": entry.drop.kept, "reason": entry.drop.reason},
        "provenance": _sorted_deep(entry.provenance),
    }


def serialize_entry(entry: DatasetEntry) -> str:
    return json.dumps(entry_to_obj(entry), ensure_ascii=False, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class ExportReport:
    path: str
    audit_path: str
    kept: int
    dropped: int
    drops_by_reason: dict[str, int] = field(hash=False, default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "path": self.path,
            "audit_path": self.audit_path,
            "kept": self.kept,
            "dropped": self.dropped,
            "drops_by_reason": dict(sorted(self.drops_by_reason.items())),
        }


def export_dataset(entries: Iterable[DatasetEntry], path: str | Path) -> ExportReport:
    """Write the dataset file and its .drops audit sibling."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    audit_path = path.with_name(path.name + ".drops")
    kept_lines: list[tuple[str, str, str]] = []
    drop_lines: list[tuple[str, str, str]] = []
    reasons: dict[str, int] = {}
    for entry in entries:
        line = serialize_entry(entry)
        key = (entry.paper_id, entry.material_name, line)
        if entry.drop.kept:
            kept_lines.append(key)
        else:
            drop_lines.append(key)
            reasons[entry.drop.reason] = reasons.get(entry.drop.reason, 0) + 1
    kept_lines.sort()
    drop_lines.sort()
    with open(path, "w", encoding="utf-8") as fh:
        for _, _, line in kept_lines:
            fh.write(line + "\n")
    with open(audit_path, "w", encoding="utf-8") as fh:
        for _, _, line in drop_lines:
            fh.write(line + "\n")
    return ExportReport(
        path=str(path),
        audit_path=str(audit_path),
        kept=len(kept_lines),
        dropped=len(drop_lines),
        drops_by_reason=reasons,
    )


@dataclass(frozen=True)
class SummaryRow:
    group_key: str
    count: int
    means: dict[str, float] = field(hash=False, default_factory=dict)
    sds: dict[str, float | None] = field(hash=False, default_factory=dict)


@dataclass
class DatasetSummary:
    group_by: str
    rows: list[SummaryRow]
    steps_per_record: dict[int, int]
    action_counts: dict[str, int]
    materials_per_record: dict[int, int]
    starting_material_counts: dict[str, int]
    notes: list[str]


def _group_key(entry: DatasetEntry, group_by: str) -> str:
    if group_by == "synthesis_method":
        return entry.synthesis.synthesis_method
    if group_by == "material_category":
        return entry.synthesis.target_compound_type
    if group_by == "source":
        return entry.source
    raise ValueError(f"unknown group_by {group_by!r} (expected one of {GROUP_KEYS})")


def summarize(entries: Iterable[DatasetEntry], group_by: str) -> DatasetSummary:
    """Per-group score means/sds plus the step and material distributions.

    Only kept entries contribute; rows need judge scores, histograms do
    not. Rows come back sorted by count descending (group key breaks
    ties); sd is None for single-entry groups.
    """
    if group_by not in GROUP_KEYS:
        raise ValueError(f"unknown group_by {group_by!r} (expected one of {GROUP_KEYS})")
    notes: list[str] = []
    scored: dict[str, list[JudgeScores]] = {}
    steps_hist: dict[int, int] = {}
    action_counts: dict[str, int] = {}
    materials_hist: dict[int, int] = {}
    material_counts: dict[str, int] = {}
    for entry in entries:
        if not entry.drop.kept:
            continue
        steps_hist[len(entry.synthesis.steps)] = steps_hist.get(len(entry.synthesis.steps), 0) + 1
        for step in entry.synthesis.steps:
            action = step.action.strip().lower()
            action_counts[action] = action_counts.get(action, 0) + 1
        n_mats = len(entry.synthesis.starting_materials)
        materials_hist[n_mats] = materials_hist.get(n_mats, 0) + 1
        for m in entry.synthesis.starting_materials:
            material_counts[m.name.strip()] = material_counts.get(m.name.strip(), 0) + 1
        if entry.judge is None:
            notes.append(f"{entry.paper_id}/{entry.material_name}: no judge scores, excluded from rows")
            continue
        scored.setdefault(_group_key(entry, group_by), []).append(entry.judge)
    rows: list[SummaryRow] = []
    for key, scores in scored.items():
        means: dict[str, float] = {}
        sds: dict[str, float | None] = {}
        for name in CRITERIA + ("overall",):
            values = [getattr(s, name) for s in scores]
            means[name] = sum(values) / len(values)
            sds[name] = float(statistics.stdev(values)) if len(values) > 1 else None
        rows.append(SummaryRow(group_key=key, count=len(scores), means=means, sds=sds))
    rows.sort(key=lambda r: (-r.count, r.group_key))
    return DatasetSummary(
        group_by=group_by,
        rows=rows,
        steps_per_record=dict(sorted(steps_hist.items())),
        action_counts=_by_frequency(action_counts),
        materials_per_record=dict(sorted(materials_hist.items())),
        starting_material_counts=_by_frequency(material_counts),
        notes=notes,
    )


def _by_frequency(counts: dict[str, int]) -> dict[str, int]:
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def format_summary_table(summary: DatasetSummary) -> str:
    """Aligned text table: one row per group, overall plus the seven criteria."""
    headers = [summary.group_by, "n", "overall"] + [c for c in CRITERIA]
    rows = []
    for row in summary.rows:
        cells = [row.group_key, str(row.count)]
        for name in ("overall",) + CRITERIA:
            mean = row.means[name]
            sd = row.sds[name]
            cells.append(f"{mean:.2f}" if sd is None else f"{mean:.2f}±{sd:.2f}")
        rows.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    for cells in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
    return "\n".join(lines)


def summary_to_obj(summary: DatasetSummary) -> dict:
    return {
        "group_by": summary.group_by,
        "rows": [
            {"group_key": r.group_key, "count": r.count, "means": r.means, "sds": r.sds} for r in summary.rows
        ],
        "steps_per_record": {str(k): v for k, v in summary.steps_per_record.items()},
        "action_counts": summary.action_counts,
        "materials_per_record": {str(k): v for k, v in summary.materials_per_record.items()},
        "starting_material_counts": summary.starting_material_counts,
        "notes": summary.notes,
    }


def sample_entries(entries: list[DatasetEntry], k: int, seed: int = 0) -> list[DatasetEntry]:
    """Uniform random sample without replacement (not stratified)."""
    if k >= len(entries):
        return list(entries)
    return random.Random(seed).sample(entries, k)
