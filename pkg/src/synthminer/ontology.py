"""Typed model of a materials synthesis procedure.

A record is a target compound plus an ordered list of process steps; each
step carries the materials it consumes, the equipment it uses, and the
conditions it runs under. Parsing is tolerant of the noise language models
wrap around JSON (prose, code fences, a ``structured_synthesis`` envelope),
while validation reports every problem as data instead of raising.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

# Canonical label sets. Comparison is case-insensitive; canonical form is
# trimmed, lowercased, single-spaced.
MATERIAL_CATEGORIES: tuple[str, ...] = (
    "metals & alloys",
    "ceramics & glasses",
    "polymers & soft matter",
    "composites",
    "semiconductors & electronic",
    "nanomaterials",
    "two-dimensional materials",
    "framework & porous materials",
    "biomaterials & biological",
    "liquid materials",
    "hybrid & organic-inorganic",
    "functional materials & catalysts",
    "energy & sustainability",
    "smart & responsive materials",
    "emerging & quantum materials",
    "other",
)

SYNTHESIS_METHODS: tuple[str, ...] = (
    "pvd",
    "cvd",
    "arc discharge",
    "ball milling",
    "spray pyrolysis",
    "electrospinning",
    "sol-gel",
    "hydrothermal",
    "solvothermal",
    "precipitation",
    "coprecipitation",
    "combustion",
    "microwave-assisted",
    "sonochemical",
    "template-directed",
    "solid-state",
    "flux growth",
    "float zone & bridgman",
    "arc melting & induction melting",
    "spark plasma sintering",
    "electrochemical deposition",
    "chemical bath deposition",
    "liquid-phase epitaxy",
    "self-assembly",
    "atomic layer deposition",
    "molecular beam epitaxy",
    "pulsed laser deposition",
    "ion implantation",
    "lithographic patterning",
    "wet impregnation",
    "incipient wetness impregnation",
    "mechanical mixing",
    "solution-based",
    "mechanochemical",
    "other",
)

# Violation codes (validation failures).
STEP_ORDER = "STEP_ORDER"
ENUM_UNKNOWN = "ENUM_UNKNOWN"
AMOUNT_NEGATIVE = "AMOUNT_NEGATIVE"
UNIT_MISSING = "UNIT_MISSING"
PH_RANGE = "PH_RANGE"
NAME_EMPTY = "NAME_EMPTY"
ACTION_EMPTY = "ACTION_EMPTY"
NUMBER_NOT_FINITE = "NUMBER_NOT_FINITE"

VIOLATION_CODES: frozenset[str] = frozenset(
    {
        STEP_ORDER,
        ENUM_UNKNOWN,
        AMOUNT_NEGATIVE,
        UNIT_MISSING,
        PH_RANGE,
        NAME_EMPTY,
        ACTION_EMPTY,
        NUMBER_NOT_FINITE,
    }
)

# Warning codes (suspicious but not invalid).
EMPTY_SYNTHESIS = "EMPTY_SYNTHESIS"
STIRRING_SPEED_WITHOUT_STIRRING = "STIRRING_SPEED_WITHOUT_STIRRING"
UNIT_WITHOUT_VALUE = "UNIT_WITHOUT_VALUE"

_WS_RUN = re.compile(r"\s+")


def canon_label(label: str) -> str:
    """Canonical form of an enum-ish label: trim, lowercase, collapse spaces."""
    return _WS_RUN.sub(" ", label.strip()).lower()


class ParseError(ValueError):
    """Raised when model output cannot be turned into a record.

    ``code`` is "no_object" (no balanced JSON object in the text) or
    "schema" (object found, but a field is missing or the wrong kind);
    schema errors carry the offending ``path``.
    """

    def __init__(self, code: str, message: str, path: str | None = None):
        self.code = code
        self.path = path
        if path:
            message = f"{message} (at {path})"
        super().__init__(message)


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str


@dataclass
class ValidationReport:
    """Outcome of validate_record: problems as data, never an exception."""

    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def add(self, code: str, path: str, message: str) -> None:
        self.violations.append(Violation(code, path, message))

    def warn(self, code: str, path: str, message: str) -> None:
        self.warnings.append(Violation(code, path, message))


def _freeze(items: Iterable[Any]) -> tuple:
    return tuple(items)


@dataclass(frozen=True)
class MaterialUse:
    """One material consumed by a step (or listed as a starting material)."""

    name: str
    amount: float | None = None
    unit: str | None = None
    purity: str | None = None
    vendor: str | None = None


@dataclass(frozen=True)
class EquipmentItem:
    name: str
    instrument_vendor: str | None = None
    settings: str | None = None


@dataclass(frozen=True)
class StepConditions:
    temperature: float | None = None
    temp_unit: str | None = None
    duration: float | None = None
    time_unit: str | None = None
    pressure: float | None = None
    pressure_unit: str | None = None
    atmosphere: str | None = None
    stirring: bool | None = None
    stirring_speed: float | None = None
    ph: float | None = None


@dataclass(frozen=True)
class ProcessStep:
    step_number: int
    action: str
    description: str | None = None
    materials: tuple[MaterialUse, ...] = ()
    equipment: tuple[EquipmentItem, ...] = ()
    conditions: StepConditions = StepConditions()

    def __post_init__(self) -> None:
        object.__setattr__(self, "materials", _freeze(self.materials))
        object.__setattr__(self, "equipment", _freeze(self.equipment))


@dataclass(frozen=True)
class SynthesisRecord:
    """A complete synthesis procedure for one target compound.

    The two classification fields are stored canonically (lowercase,
    single-spaced); membership in the label sets is checked by
    validate_record, not here, so unknown labels survive parsing.
    """

    target_compound: str
    target_compound_type: str
    synthesis_method: str
    starting_materials: tuple[MaterialUse, ...] = ()
    steps: tuple[ProcessStep, ...] = ()
    equipment: tuple[EquipmentItem, ...] = ()
    notes: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_compound_type", canon_label(self.target_compound_type))
        object.__setattr__(self, "synthesis_method", canon_label(self.synthesis_method))
        object.__setattr__(self, "starting_materials", _freeze(self.starting_materials))
        object.__setattr__(self, "steps", _freeze(self.steps))
        object.__setattr__(self, "equipment", _freeze(self.equipment))


@dataclass
class ParseResult:
    record: SynthesisRecord
    warnings: list[str] = field(default_factory=list)


def find_json_object(text: str) -> dict:
    """Return the first balanced JSON object embedded anywhere in text.

    Scans for '{', tracks string/escape state to find the matching '}',
    and keeps trying later candidates when a balanced span fails to load.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : i + 1]
                    try:
                        loaded = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(loaded, dict):
                        return loaded
                    break
        start = text.find("{", start + 1)
    raise ParseError("no_object", "no balanced JSON object found in model output")


class _Builder:
    """Walks raw JSON into the dataclass tree, collecting warnings."""

    def __init__(self) -> None:
        self.warnings: list[str] = []

    def unknown_keys(self, obj: dict, known: Sequence[str], path: str) -> None:
        for key in obj:
            if key not in known:
                self.warnings.append(f"unknown key ignored: {path}.{key}" if path else f"unknown key ignored: {key}")

    def string(self, obj: dict, key: str, path: str, required: bool = False) -> str | None:
        if key not in obj or obj[key] is None:
            if required:
                raise ParseError("schema", "missing required field", _join(path, key))
            return None
        value = obj[key]
        if not isinstance(value, str):
            raise ParseError("schema", f"expected string, got {type(value).__name__}", _join(path, key))
        if not required and not value.strip():
            return None
        return value

    def number(self, obj: dict, key: str, path: str) -> float | None:
        if key not in obj or obj[key] is None:
            return None
        value = obj[key]
        if isinstance(value, bool):
            raise ParseError("schema", "expected number, got bool", _join(path, key))
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                coerced = float(value.strip())
            except ValueError:
                raise ParseError("schema", f"expected number, got {value!r}", _join(path, key)) from None
            self.warnings.append(f"coerced quoted number at {_join(path, key)}")
            return coerced
        raise ParseError("schema", f"expected number, got {type(value).__name__}", _join(path, key))

    def boolean(self, obj: dict, key: str, path: str) -> bool | None:
        if key not in obj or obj[key] is None:
            return None
        value = obj[key]
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in ("true", "false"):
            self.warnings.append(f"coerced quoted boolean at {_join(path, key)}")
            return value.strip().lower() == "true"
        raise ParseError("schema", f"expected boolean, got {type(value).__name__}", _join(path, key))

    def integer(self, obj: dict, key: str, path: str) -> int:
        if key not in obj or obj[key] is None:
            raise ParseError("schema", "missing required field", _join(path, key))
        value = obj[key]
        if isinstance(value, bool):
            raise ParseError("schema", "expected integer, got bool", _join(path, key))
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            self.warnings.append(f"coerced integral float at {_join(path, key)}")
            return int(value)
        raise ParseError("schema", f"expected integer, got {value!r}", _join(path, key))

    def array(self, obj: dict, key: str, path: str) -> list:
        if key not in obj or obj[key] is None:
            return []
        value = obj[key]
        if not isinstance(value, list):
            raise ParseError("schema", f"expected array, got {type(value).__name__}", _join(path, key))
        return value

    def mapping(self, value: Any, path: str) -> dict:
        if not isinstance(value, dict):
            raise ParseError("schema", f"expected object, got {type(value).__name__}", path)
        return value


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


_MATERIAL_KEYS = ("name", "amount", "unit", "purity", "vendor")
_EQUIPMENT_KEYS = ("name", "instrument_vendor", "settings")
_CONDITION_KEYS = (
    "temperature",
    "temp_unit",
    "duration",
    "time_unit",
    "pressure",
    "pressure_unit",
    "atmosphere",
    "stirring",
    "stirring_speed",
    "ph",
)
_STEP_KEYS = ("step_number", "action", "description", "materials", "equipment", "conditions")
_RECORD_KEYS = (
    "target_compound",
    "target_compound_type",
    "synthesis_method",
    "starting_materials",
    "steps",
    "equipment",
    "notes",
)


def _build_material(b: _Builder, raw: Any, path: str) -> MaterialUse:
    obj = b.mapping(raw, path)
    b.unknown_keys(obj, _MATERIAL_KEYS, path)
    return MaterialUse(
        name=b.string(obj, "name", path, required=True) or "",
        amount=b.number(obj, "amount", path),
        unit=b.string(obj, "unit", path),
        purity=b.string(obj, "purity", path),
        vendor=b.string(obj, "vendor", path),
    )


def _build_equipment(b: _Builder, raw: Any, path: str) -> EquipmentItem:
    obj = b.mapping(raw, path)
    b.unknown_keys(obj, _EQUIPMENT_KEYS, path)
    return EquipmentItem(
        name=b.string(obj, "name", path, required=True) or "",
        instrument_vendor=b.string(obj, "instrument_vendor", path),
        settings=b.string(obj, "settings", path),
    )


def _build_conditions(b: _Builder, raw: Any, path: str) -> StepConditions:
    if raw is None:
        return StepConditions()
    obj = b.mapping(raw, path)
    b.unknown_keys(obj, _CONDITION_KEYS, path)
    return StepConditions(
        temperature=b.number(obj, "temperature", path),
        temp_unit=b.string(obj, "temp_unit", path),
        duration=b.number(obj, "duration", path),
        time_unit=b.string(obj, "time_unit", path),
        pressure=b.number(obj, "pressure", path),
        pressure_unit=b.string(obj, "pressure_unit", path),
        atmosphere=b.string(obj, "atmosphere", path),
        stirring=b.boolean(obj, "stirring", path),
        stirring_speed=b.number(obj, "stirring_speed", path),
        ph=b.number(obj, "ph", path),
    )


def _build_step(b: _Builder, raw: Any, path: str) -> ProcessStep:
    obj = b.mapping(raw, path)
    b.unknown_keys(obj, _STEP_KEYS, path)
    return ProcessStep(
        step_number=b.integer(obj, "step_number", path),
        action=b.string(obj, "action", path, required=True) or "",
        description=b.string(obj, "description", path),
        materials=tuple(
            _build_material(b, m, f"{path}.materials[{i}]") for i, m in enumerate(b.array(obj, "materials", path))
        ),
        equipment=tuple(
            _build_equipment(b, e, f"{path}.equipment[{i}]") for i, e in enumerate(b.array(obj, "equipment", path))
        ),
        conditions=_build_conditions(b, obj.get("conditions"), f"{path}.conditions"),
    )


def parse_record(text: str) -> ParseResult:
    """Extract a SynthesisRecord from arbitrary model output.

    Finds the first balanced JSON object, unwraps a "structured_synthesis"
    envelope when present, maps fields into the dataclass tree, and records
    a warning for every unknown key instead of failing on it.
    """
    obj = find_json_object(text)
    b = _Builder()
    if "structured_synthesis" in obj:
        inner = obj["structured_synthesis"]
        b.unknown_keys(obj, ("structured_synthesis",), "")
        obj = b.mapping(inner, "structured_synthesis")
    b.unknown_keys(obj, _RECORD_KEYS, "")
    record = SynthesisRecord(
        target_compound=b.string(obj, "target_compound", "", required=True) or "",
        target_compound_type=b.string(obj, "target_compound_type", "", required=True) or "",
        synthesis_method=b.string(obj, "synthesis_method", "", required=True) or "",
        starting_materials=tuple(
            _build_material(b, m, f"starting_materials[{i}]")
            for i, m in enumerate(b.array(obj, "starting_materials", ""))
        ),
        steps=tuple(_build_step(b, s, f"steps[{i}]") for i, s in enumerate(b.array(obj, "steps", ""))),
        equipment=tuple(
            _build_equipment(b, e, f"equipment[{i}]") for i, e in enumerate(b.array(obj, "equipment", ""))
        ),
        notes=b.string(obj, "notes", ""),
    )
    return ParseResult(record=record, warnings=b.warnings)


def _check_number(report: ValidationReport, value: float | None, path: str, nonnegative: bool = False) -> None:
    if value is None:
        return
    if not math.isfinite(value):
        report.add(NUMBER_NOT_FINITE, path, f"value {value!r} is not finite")
    elif nonnegative and value < 0:
        report.add(AMOUNT_NEGATIVE, path, f"value {value!r} must be >= 0")


def _check_material(report: ValidationReport, m: MaterialUse, path: str) -> None:
    if not m.name.strip():
        report.add(NAME_EMPTY, f"{path}.name", "material name is empty")
    _check_number(report, m.amount, f"{path}.amount", nonnegative=True)
    if m.amount is not None and m.unit is None:
        report.add(UNIT_MISSING, f"{path}.unit", "amount given without a unit")
    elif m.amount is None and m.unit is not None:
        report.warn(UNIT_WITHOUT_VALUE, f"{path}.unit", "unit given without an amount")


def _check_equipment(report: ValidationReport, e: EquipmentItem, path: str) -> None:
    if not e.name.strip():
        report.add(NAME_EMPTY, f"{path}.name", "equipment name is empty")


def _check_conditions(report: ValidationReport, c: StepConditions, path: str) -> None:
    pairs = (
        ("temperature", c.temperature, "temp_unit", c.temp_unit),
        ("duration", c.duration, "time_unit", c.time_unit),
        ("pressure", c.pressure, "pressure_unit", c.pressure_unit),
    )
    for value_key, value, unit_key, unit in pairs:
        _check_number(report, value, f"{path}.{value_key}", nonnegative=(value_key == "duration"))
        if value is not None and unit is None:
            report.add(UNIT_MISSING, f"{path}.{unit_key}", f"{value_key} given without {unit_key}")
        elif value is None and unit is not None:
            report.warn(UNIT_WITHOUT_VALUE, f"{path}.{unit_key}", f"{unit_key} given without {value_key}")
    _check_number(report, c.stirring_speed, f"{path}.stirring_speed", nonnegative=True)
    if c.stirring_speed is not None and c.stirring is not True:
        report.warn(
            STIRRING_SPEED_WITHOUT_STIRRING,
            f"{path}.stirring_speed",
            "stirring_speed given but stirring is not true",
        )
    if c.ph is not None:
        if not math.isfinite(c.ph):
            report.add(NUMBER_NOT_FINITE, f"{path}.ph", f"ph {c.ph!r} is not finite")
        elif not 0.0 <= c.ph <= 14.0:
            report.add(PH_RANGE, f"{path}.ph", f"ph {c.ph!r} outside [0, 14]")


def validate_record(record: SynthesisRecord) -> ValidationReport:
    """Check every invariant; total over all parseable records."""
    report = ValidationReport()
    if not record.target_compound.strip():
        report.add(NAME_EMPTY, "target_compound", "target compound is empty")
    if record.target_compound_type not in MATERIAL_CATEGORIES:
        report.add(
            ENUM_UNKNOWN,
            "target_compound_type",
            f"unknown material category {record.target_compound_type!r}",
        )
    if record.synthesis_method not in SYNTHESIS_METHODS:
        report.add(ENUM_UNKNOWN, "synthesis_method", f"unknown synthesis method {record.synthesis_method!r}")
    for i, m in enumerate(record.starting_materials):
        _check_material(report, m, f"starting_materials[{i}]")
    for i, e in enumerate(record.equipment):
        _check_equipment(report, e, f"equipment[{i}]")
    expected = 1
    for i, step in enumerate(record.steps):
        path = f"steps[{i}]"
        if step.step_number != expected:
            report.add(
                STEP_ORDER,
                f"{path}.step_number",
                f"expected step {expected}, got {step.step_number}",
            )
        expected += 1
        if not step.action.strip():
            report.add(ACTION_EMPTY, f"{path}.action", "step action is empty")
        for j, m in enumerate(step.materials):
            _check_material(report, m, f"{path}.materials[{j}]")
        for j, e in enumerate(step.equipment):
            _check_equipment(report, e, f"{path}.equipment[{j}]")
        _check_conditions(report, step.conditions, f"{path}.conditions")
    return report


def _material_obj(m: MaterialUse) -> dict:
    return {"name": m.name, "amount": m.amount, "unit": m.unit, "purity": m.purity, "vendor": m.vendor}


def _equipment_obj(e: EquipmentItem) -> dict:
    return {"name": e.name, "instrument_vendor": e.instrument_vendor, "settings": e.settings}


def _conditions_obj(c: StepConditions) -> dict:
    return {
        "temperature": c.temperature,
        "temp_unit": c.temp_unit,
        "duration": c.duration,
        "time_unit": c.time_unit,
        "pressure": c.pressure,
        "pressure_unit": c.pressure_unit,
        "atmosphere": c.atmosphere,
        "stirring": c.stirring,
        "stirring_speed": c.stirring_speed,
        "ph": c.ph,
    }


def record_to_obj(record: SynthesisRecord) -> dict:
    """Plain-dict form with the fixed key order used everywhere downstream."""
    return {
        "target_compound": record.target_compound,
        "target_compound_type": record.target_compound_type,
        "synthesis_method": record.synthesis_method,
        "starting_materials": [_material_obj(m) for m in record.starting_materials],
        "steps": [
            {
                "step_number": s.step_number,
                "action": s.action,
                "description": s.description,
                "materials": [_material_obj(m) for m in s.materials],
                "equipment": [_equipment_obj(e) for e in s.equipment],
                "conditions": _conditions_obj(s.conditions),
            }
            for s in record.steps
        ],
        "equipment": [_equipment_obj(e) for e in record.equipment],
        "notes": record.notes,
    }


def canonical_serialize(record: SynthesisRecord) -> str:
    """Byte-stable single-line JSON for a record.

    Key order is fixed, every field is emitted (absent values as null), and
    floats use Python's shortest round-trip repr, so equal records always
    produce identical bytes and parse_record inverts the output exactly.
    """
    return json.dumps(record_to_obj(record), ensure_ascii=False, separators=(",", ":"), allow_nan=False)
