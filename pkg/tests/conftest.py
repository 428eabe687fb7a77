import random
from pathlib import Path

import pytest

from synthminer.corpus import PaperDoc
from synthminer.gateway import LlmGateway, MockProvider, MockRule, ProviderConfig
from synthminer.ontology import (
    MATERIAL_CATEGORIES,
    SYNTHESIS_METHODS,
    EquipmentItem,
    MaterialUse,
    ProcessStep,
    StepConditions,
    SynthesisRecord,
)

FIXTURES = Path(__file__).parent / "fixtures"


def make_doc(markdown: str, paper_id: str = "paper-x", source: str = "arxiv", figures=()) -> PaperDoc:
    return PaperDoc(id=paper_id, source=source, markdown=markdown, figures=tuple(figures), meta={"id": paper_id})


def make_gateway(rules, default=None, config=None, **kwargs) -> LlmGateway:
    """Gateway over a mock provider with no real sleeping or randomness."""
    provider = MockProvider([r if isinstance(r, MockRule) else MockRule(**r) for r in rules], default)
    cfg = config or ProviderConfig(name="test", model="mock-model")
    kwargs.setdefault("sleeper", lambda _s: None)
    kwargs.setdefault("rng", random.Random(0))
    return LlmGateway(provider, cfg, **kwargs)


def make_step(number: int = 1, action: str = "mix", **conditions) -> ProcessStep:
    return ProcessStep(
        step_number=number,
        action=action,
        description=None,
        materials=(),
        equipment=(),
        conditions=StepConditions(**conditions),
    )


def make_record(
    compound: str = "Test Compound",
    category: str = "ceramics & glasses",
    method: str = "solid-state",
    steps=None,
    starting_materials=(),
    equipment=(),
    notes=None,
) -> SynthesisRecord:
    return SynthesisRecord(
        target_compound=compound,
        target_compound_type=category,
        synthesis_method=method,
        starting_materials=tuple(starting_materials),
        steps=tuple(steps if steps is not None else [make_step()]),
        equipment=tuple(equipment),
        notes=notes,
    )


_NAME_POOL = (
    "lithium carbonate",
    "TiO2",
    "poly(vinyl alcohol)",
    "Ba(OH)2 · 8H2O",
    "α-Fe2O3",
    'precursor "X"',
    "salt\\solvent blend",
    "石墨烯前驱体",
)
_ACTION_POOL = ("mix", "heat", "stir", "calcine", "wash", "dry", "anneal", "quench")
_UNIT_POOL = ("g", "mg", "mL", "mol", "wt%")


def random_valid_record(rng: random.Random) -> SynthesisRecord:
    """A record that validates clean; content varied enough to stress serialization."""

    def maybe(value):
        return value if rng.random() < 0.6 else None

    def material():
        amount = maybe(round(rng.uniform(0, 500), rng.randrange(4)))
        return MaterialUse(
            name=rng.choice(_NAME_POOL),
            amount=amount,
            unit=rng.choice(_UNIT_POOL) if amount is not None else maybe(rng.choice(_UNIT_POOL)),
            purity=maybe(f"{rng.randrange(90, 100)}.{rng.randrange(10)}%"),
            vendor=maybe("Vendor GmbH"),
        )

    def equipment():
        return EquipmentItem(
            name=rng.choice(("furnace", "autoclave", "ball mill", "spin coater")),
            instrument_vendor=maybe("Acme"),
            settings=maybe("program 7"),
        )

    def conditions():
        temperature = maybe(round(rng.uniform(-50, 1500), 1))
        duration = maybe(round(rng.uniform(0, 96), 2))
        pressure = maybe(round(rng.uniform(0.01, 200), 3))
        stirring = maybe(rng.random() < 0.5)
        return StepConditions(
            temperature=temperature,
            temp_unit="C" if temperature is not None else None,
            duration=duration,
            time_unit="h" if duration is not None else None,
            pressure=pressure,
            pressure_unit="bar" if pressure is not None else None,
            atmosphere=maybe(rng.choice(("air", "argon", "N2/H2"))),
            stirring=stirring,
            stirring_speed=round(rng.uniform(50, 900), 1) if stirring else None,
            ph=maybe(round(rng.uniform(0, 14), 2)),
        )

    steps = tuple(
        ProcessStep(
            step_number=i + 1,
            action=rng.choice(_ACTION_POOL),
            description=maybe("as described"),
            materials=tuple(material() for _ in range(rng.randrange(3))),
            equipment=tuple(equipment() for _ in range(rng.randrange(2))),
            conditions=conditions(),
        )
        for i in range(rng.randrange(5))
    )
    return SynthesisRecord(
        target_compound=rng.choice(_NAME_POOL),
        target_compound_type=rng.choice(MATERIAL_CATEGORIES),
        synthesis_method=rng.choice(SYNTHESIS_METHODS),
        starting_materials=tuple(material() for _ in range(rng.randrange(4))),
        steps=steps,
        equipment=tuple(equipment() for _ in range(rng.randrange(2))),
        notes=maybe("see supplementary information"),
    )


@pytest.fixture
def tmp_store_dir(tmp_path):
    return tmp_path / "store"
