"""The three text-extraction stages and the dataset gate.

Stage 1 decides whether a paper contains a synthesis recipe at all, stage 2
names the final synthesized materials, stage 3 pulls a full structured
record per material. After extraction (and optionally judging), the
post-filter rules decide which records enter the dataset; everything
dropped keeps its reason for the audit trail.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import prompts
from .corpus import PaperDoc, chunk_text
from .gateway import LlmGateway, ModelRequest
from .ontology import (
    EMPTY_SYNTHESIS,
    ParseError,
    ParseResult,
    SynthesisRecord,
    ValidationReport,
    find_json_object,
    parse_record,
    validate_record,
)

NOT_APPLICABLE = "N/A"
NO_MATERIALS_SENTINEL = "No materials synthesized"

FILTER_CATEGORIES = (
    "Metals",
    "Ceramics",
    "Semiconductors",
    "Superconductors",
    "Composites",
    "Biomaterials",
    "Nanomaterials",
    "Polymers",
    "Magnetic",
    "Textiles",
    "Chemicals",
    "Other",
)

# Drop reasons, in the order the rules are applied.
REASON_NO_MATERIAL = "no_material"
REASON_TRIVIAL_NAME = "trivial_name"
REASON_UNCLEAR_IDENTIFIER = "unclear_identifier"
REASON_JUDGE_SCORE_ONE = "judge_material_score_one"

DROP_REASONS = (
    REASON_NO_MATERIAL,
    REASON_TRIVIAL_NAME,
    REASON_UNCLEAR_IDENTIFIER,
    REASON_JUDGE_SCORE_ONE,
)

# Placeholder names that identify a compound only within the paper's own
# numbering ("Intermediate 1", "Compound B", "8a"). Configurable because
# these are pattern examples, not a closed grammar.
DEFAULT_UNCLEAR_PATTERNS: tuple[str, ...] = (
    r"^intermediate\s+\S+$",
    r"^compound\s+\S+$",
    r"^[0-9a-z]{1,2}$",
)

DEFAULT_FILTER_CHUNK_TOKENS = 2000


@dataclass(frozen=True)
class FilterVerdict:
    contains_recipe: bool
    material_name: str = NOT_APPLICABLE
    material_category: str = NOT_APPLICABLE

    def __post_init__(self) -> None:
        if not self.contains_recipe:
            object.__setattr__(self, "material_name", NOT_APPLICABLE)
            object.__setattr__(self, "material_category", NOT_APPLICABLE)


@dataclass(frozen=True)
class DropDecision:
    kept: bool
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.kept == (self.reason is not None):
            raise ValueError("kept entries carry no reason; dropped entries carry exactly one")
        if self.reason is not None and self.reason not in DROP_REASONS:
            raise ValueError(f"unknown drop reason {self.reason!r}")


def parse_filter_response(text: str) -> FilterVerdict:
    """Parse the three-field filter answer out of arbitrary model output."""
    obj = find_json_object(text)
    if "contains_recipe" not in obj:
        raise ParseError("schema", "missing required field", "contains_recipe")
    raw = obj["contains_recipe"]
    if isinstance(raw, bool):
        contains = raw
    elif isinstance(raw, str) and raw.strip().lower() in ("true", "false"):
        contains = raw.strip().lower() == "true"
    else:
        raise ParseError("schema", f"expected boolean, got {raw!r}", "contains_recipe")
    if not contains:
        return FilterVerdict(contains_recipe=False)
    name = obj.get("material_name")
    category = obj.get("material_category")
    return FilterVerdict(
        contains_recipe=True,
        material_name=str(name).strip() if name is not None else NOT_APPLICABLE,
        material_category=str(category).strip() if category is not None else NOT_APPLICABLE,
    )


def filter_paper(doc: PaperDoc, gateway: LlmGateway, limit: int = DEFAULT_FILTER_CHUNK_TOKENS) -> FilterVerdict:
    """Ask the model, chunk by chunk, whether the paper contains a recipe.

    Verdicts are combined by OR on contains_recipe; the material fields come
    from the first positive chunk. An empty document is a negative verdict
    with no model call. Raises ParseError only when no chunk parses.
    """
    chunks = chunk_text(doc.markdown, limit)
    if not chunks:
        return FilterVerdict(contains_recipe=False)
    first_positive: FilterVerdict | None = None
    parsed_any = False
    for chunk in chunks:
        response = gateway.complete_text(
            ModelRequest(kind="text", user_prompt=prompts.build_filter_prompt(chunk.text))
        )
        try:
            verdict = parse_filter_response(response.text)
        except ParseError:
            continue
        parsed_any = True
        if verdict.contains_recipe and first_positive is None:
            first_positive = verdict
    if not parsed_any:
        raise ParseError("no_object", "no chunk produced a well-formed filter verdict")
    return first_positive if first_positive is not None else FilterVerdict(contains_recipe=False)


def split_material_list(response_text: str) -> list[str]:
    """Comma-split, trim, drop empties, dedupe exact strings, keep order."""
    cleaned = response_text.strip()
    if cleaned.rstrip(".").strip().lower() == NO_MATERIALS_SENTINEL.lower():
        return []
    seen: set[str] = set()
    names: list[str] = []
    for part in cleaned.split(","):
        name = part.strip()
        if not name or name in seen:
            continue
        seen.add(name)
        names.append(name)
    return names


def extract_material_names(doc: PaperDoc, gateway: LlmGateway) -> list[str]:
    response = gateway.complete_text(
        ModelRequest(
            kind="text",
            system_prompt=prompts.MATERIAL_EXTRACTION_SYSTEM,
            user_prompt=doc.markdown,
        )
    )
    return split_material_list(response.text)


def synthesis_request(doc: PaperDoc, material: str, max_tokens: int = 8000) -> ModelRequest:
    return ModelRequest(
        kind="text",
        system_prompt=prompts.SYNTHESIS_EXTRACTION_SYSTEM,
        user_prompt=prompts.build_synthesis_prompt(doc.markdown, material),
        max_tokens=max_tokens,
    )


def extract_synthesis(
    doc: PaperDoc, material: str, gateway: LlmGateway, max_tokens: int = 8000
) -> tuple[ParseResult, ValidationReport]:
    """Extract the structured procedure for one material from the paper.

    Returns the parse result (record + parser warnings) together with the
    validation report; a record with zero steps gets the EMPTY_SYNTHESIS
    flag so downstream consumers can tell "nothing found" from "extracted".
    """
    if not material.strip():
        raise ValueError("material name must be non-empty")
    response = gateway.complete_text(synthesis_request(doc, material, max_tokens))
    result = parse_record(response.text)
    report = validate_record(result.record)
    if not result.record.steps:
        report.warn(EMPTY_SYNTHESIS, "steps", "record has no process steps")
    return result, report


def postfilter_record(
    material: str,
    record: SynthesisRecord | None,
    judge=None,
    unclear_patterns: tuple[str, ...] = DEFAULT_UNCLEAR_PATTERNS,
) -> DropDecision:
    """Apply the dataset gate rules, first matching reason wins.

    Order: no_material, trivial_name, unclear_identifier,
    judge_material_score_one. `judge` is either a judge report (anything
    with a material_extraction attribute) or the bare criterion score.
    """
    name = material.strip()
    if not name or name.upper() == NOT_APPLICABLE:
        return DropDecision(kept=False, reason=REASON_NO_MATERIAL)
    if len(name) == 1 or not any(ch.isalnum() for ch in name):
        return DropDecision(kept=False, reason=REASON_TRIVIAL_NAME)
    for pattern in unclear_patterns:
        if re.fullmatch(pattern, name, flags=re.IGNORECASE):
            return DropDecision(kept=False, reason=REASON_UNCLEAR_IDENTIFIER)
    if judge is not None:
        score = judge if isinstance(judge, (int, float)) else getattr(judge, "material_extraction", None)
        if score == 1.0:
            return DropDecision(kept=False, reason=REASON_JUDGE_SCORE_ONE)
    return DropDecision(kept=True)
