"""Entry assembly, deterministic export, and dataset summary statistics."""

import json
import math
import random
import statistics

import pytest

from synthminer.dataset import (
    GROUP_KEYS,
    DatasetEntry,
    KeyMismatch,
    Stamped,
    assemble_entry,
    entry_to_obj,
    export_dataset,
    format_summary_table,
    material_slug,
    sample_entries,
    serialize_entry,
    summarize,
    summary_to_obj,
)
from synthminer.evaluation import CRITERIA, JudgeScores
from synthminer.extraction import DropDecision
from synthminer.ontology import MaterialUse

from conftest import make_doc, make_record, make_step


def make_judge(values, **extra):
    values = [float(v) for v in values]
    return JudgeScores(**dict(zip(CRITERIA, values)), overall=sum(values) / len(values), **extra)


def make_entry(
    paper_id="p1",
    source="arxiv",
    material="Test Compound",
    method="solid-state",
    judge=None,
    kept=True,
    reason=None,
    steps=None,
    starting=(),
    figures=(),
    provenance=None,
):
    record = make_record(compound=material, method=method, steps=steps, starting_materials=starting)
    return assemble_entry(
        make_doc("body", paper_id=paper_id, source=source),
        material,
        record,
        judge,
        figures,
        DropDecision(kept=kept, reason=reason),
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# slugs and stamping


@pytest.mark.parametrize(
    "name,slug",
    [
        ("Lithium Cobalt Oxide", "lithium-cobalt-oxide"),
        ("BaTiO3", "batio3"),
        ("  ZnO (thin film)  ", "zno-thin-film"),
        ("α-Fe2O3", "fe2o3"),
        ("???", "unnamed"),
        ("8a", "8a"),
    ],
)
def test_material_slug(name, slug):
    assert material_slug(name) == slug


def test_assemble_entry_accepts_matching_stamps():
    doc = make_doc("x", paper_id="p9", source="chemrxiv")
    record = make_record(compound="M")
    entry = assemble_entry(
        doc,
        "M",
        Stamped("p9", record),
        Stamped("p9", make_judge([4] * 7)),
        [Stamped("p9", "fig2"), "fig1"],
        DropDecision(kept=True),
    )
    assert entry.synthesis == record
    assert entry.source == "chemrxiv"
    assert entry.figure_refs == ("fig1", "fig2")  # sorted


@pytest.mark.parametrize("field", ["record", "judge", "figure"])
def test_assemble_entry_rejects_cross_paper_stamps(field):
    doc = make_doc("x", paper_id="p1")
    record = make_record(compound="M")
    kwargs = {
        "record": Stamped("p1", record),
        "judge": None,
        "figures": [],
    }
    if field == "record":
        kwargs["record"] = Stamped("other", record)
    elif field == "judge":
        kwargs["judge"] = Stamped("other", make_judge([4] * 7))
    else:
        kwargs["figures"] = [Stamped("other", "fig1")]
    with pytest.raises(KeyMismatch):
        assemble_entry(doc, "M", kwargs["record"], kwargs["judge"], kwargs["figures"], DropDecision(kept=True))


def test_entry_figure_refs_always_tuple():
    entry = make_entry(figures=["b", "a"])
    assert entry.figure_refs == ("a", "b")
    direct = DatasetEntry(
        paper_id="p",
        source="arxiv",
        material_name="M",
        synthesis=make_record(),
        judge=None,
        figure_refs=["x"],
        drop=DropDecision(kept=True),
    )
    assert direct.figure_refs == ("x",)


# ---------------------------------------------------------------------------
# serialization


def test_entry_serialization_is_compact_and_unicode():
    entry = make_entry(material="石墨烯", judge=make_judge([4] * 7), provenance={"b": 1, "a": {"z": 2, "y": 3}})
    line = serialize_entry(entry)
    assert "石墨烯" in line
    assert ": " not in line.replace('": "', "")  # compact separators
    obj = json.loads(line)
    assert list(obj["provenance"]) == ["a", "b"]
    assert list(obj["provenance"]["a"]) == ["y", "z"]
    assert obj["drop"] == {"kept": True, "reason": None}


def test_entry_obj_layout():
    entry = make_entry(judge=None, kept=False, reason="trivial_name")
    obj = entry_to_obj(entry)
    assert set(obj) == {
        "paper_id",
        "source",
        "material_name",
        "synthesis",
        "judge",
        "figure_refs",
        "drop",
        "provenance",
    }
    assert obj["judge"] is None
    assert obj["drop"] == {"kept": False, "reason": "trivial_name"}


def test_serialize_rejects_nan_scores():
    entry = make_entry(judge=make_judge([4] * 7))
    object.__setattr__(entry.judge, "overall", math.nan)
    with pytest.raises(ValueError):
        serialize_entry(entry)


# ---------------------------------------------------------------------------
# export


def sample_corpus():
    return [
        make_entry(paper_id="p2", material="Zinc Oxide", judge=make_judge([4] * 7)),
        make_entry(paper_id="p1", material="Barium Titanate", judge=make_judge([5, 4.5, 5, 4, 4, 5, 4.5])),
        make_entry(paper_id="p1", material="8a", kept=False, reason="unclear_identifier"),
        make_entry(paper_id="p3", material="N/A", kept=False, reason="no_material"),
        make_entry(paper_id="p2", material="x", kept=False, reason="trivial_name"),
    ]


def test_export_writes_sorted_dataset_and_audit(tmp_path):
    report = export_dataset(sample_corpus(), tmp_path / "out" / "data.jsonl")
    lines = (tmp_path / "out" / "data.jsonl").read_text(encoding="utf-8").splitlines()
    keys = [(json.loads(l)["paper_id"], json.loads(l)["material_name"]) for l in lines]
    assert keys == [("p1", "Barium Titanate"), ("p2", "Zinc Oxide")]
    drops = (tmp_path / "out" / "data.jsonl.drops").read_text(encoding="utf-8").splitlines()
    assert [json.loads(l)["material_name"] for l in drops] == ["8a", "x", "N/A"]
    assert report.kept == 2
    assert report.dropped == 3
    assert report.drops_by_reason == {"unclear_identifier": 1, "no_material": 1, "trivial_name": 1}


def test_export_is_order_independent(tmp_path):
    entries = sample_corpus()
    export_dataset(entries, tmp_path / "a.jsonl")
    shuffled = list(entries)
    random.Random(99).shuffle(shuffled)
    export_dataset(shuffled, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl.drops").read_bytes() == (tmp_path / "b.jsonl.drops").read_bytes()


def test_export_report_obj_sorts_reasons(tmp_path):
    report = export_dataset(sample_corpus(), tmp_path / "d.jsonl")
    obj = report.to_obj()
    assert list(obj["drops_by_reason"]) == ["no_material", "trivial_name", "unclear_identifier"]
    assert obj["kept"] + obj["dropped"] == 5


def test_export_empty_corpus(tmp_path):
    report = export_dataset([], tmp_path / "empty.jsonl")
    assert (tmp_path / "empty.jsonl").read_text(encoding="utf-8") == ""
    assert report.kept == 0 and report.dropped == 0


# ---------------------------------------------------------------------------
# summary statistics; expected values frozen from exact-fraction arithmetic


HYDRO_SCORES = [
    [4, 3.5, 4, 4.5, 5, 4, 4],
    [3, 3, 3.5, 4, 4, 3.5, 4],
    [5, 4.5, 5, 5, 4.5, 4, 4.5],
]
SOLGEL_SCORES = [
    [2, 2.5, 2, 3, 3, 2.5, 3],
    [4, 4, 4, 4, 4, 4, 4],
]


def summary_fixture():
    entries = [
        make_entry(
            paper_id=f"h{i}",
            material=f"Hydro Material {i}",
            method="hydrothermal",
            judge=make_judge(values),
            steps=[make_step(1, "mix"), make_step(2, "heat")],
            starting=(MaterialUse(name="water"), MaterialUse(name="KOH")),
        )
        for i, values in enumerate(HYDRO_SCORES)
    ]
    entries += [
        make_entry(
            paper_id=f"s{i}",
            source="chemrxiv" if i == 0 else "arxiv",
            material=f"Solgel Material {i}",
            method="sol-gel",
            judge=make_judge(values),
            steps=[make_step(1, "Stir ")],
            starting=(MaterialUse(name="water"),),
        )
        for i, values in enumerate(SOLGEL_SCORES)
    ]
    return entries


def test_summarize_group_means_match_frozen_values():
    summary = summarize(summary_fixture(), "synthesis_method")
    assert [(r.group_key, r.count) for r in summary.rows] == [("hydrothermal", 3), ("sol-gel", 2)]
    hydro, solgel = summary.rows
    assert hydro.means["overall"] == pytest.approx(4.119047619047619, abs=1e-12)
    assert hydro.sds["overall"] == pytest.approx(0.5361109642475096, abs=1e-12)
    assert solgel.means["overall"] == pytest.approx(3.2857142857142856, abs=1e-12)
    assert solgel.sds["overall"] == pytest.approx(1.0101525445522108, abs=1e-12)
    # spot checks straight from the criterion columns
    assert hydro.means["structural_completeness"] == 4.0
    assert hydro.sds["structural_completeness"] == 1.0
    assert solgel.means["format_compliance"] == 3.5
    assert solgel.sds["format_compliance"] == pytest.approx(statistics.stdev([3.0, 4.0]))


def test_summarize_histograms():
    summary = summarize(summary_fixture(), "synthesis_method")
    assert summary.steps_per_record == {1: 2, 2: 3}
    assert summary.materials_per_record == {1: 2, 2: 3}
    # actions normalized to lowercase and trimmed; sorted by frequency then name
    assert summary.action_counts == {"heat": 3, "mix": 3, "stir": 2}
    assert summary.starting_material_counts == {"water": 5, "KOH": 3}


def test_summarize_sd_none_for_single_entry_groups():
    summary = summarize(summary_fixture(), "source")
    by_key = {r.group_key: r for r in summary.rows}
    assert by_key["chemrxiv"].count == 1
    assert all(sd is None for sd in by_key["chemrxiv"].sds.values())
    assert by_key["arxiv"].count == 4


def test_summarize_skips_dropped_and_notes_unjudged():
    entries = summary_fixture()
    entries.append(make_entry(paper_id="drop", material="8a", kept=False, reason="unclear_identifier", judge=make_judge([5] * 7)))
    entries.append(make_entry(paper_id="uj", material="Unjudged", method="hydrothermal", judge=None))
    summary = summarize(entries, "synthesis_method")
    hydro = summary.rows[0]
    assert hydro.count == 3  # unjudged entry stays out of the score rows
    assert any("uj/Unjudged" in note for note in summary.notes)
    # but histograms do count it, and the dropped entry stays out entirely
    assert sum(summary.steps_per_record.values()) == 6


def test_summarize_rejects_unknown_group():
    with pytest.raises(ValueError):
        summarize([], "paper_id")
    assert set(GROUP_KEYS) == {"synthesis_method", "material_category", "source"}


def test_format_summary_table():
    table = format_summary_table(summarize(summary_fixture(), "synthesis_method"))
    lines = table.splitlines()
    assert lines[0].startswith("synthesis_method")
    assert "overall" in lines[0] and "semantic_accuracy" in lines[0]
    assert lines[1].startswith("hydrothermal")
    assert "4.12±0.54" in lines[1]
    assert lines[2].startswith("sol-gel")
    assert "3.29±1.01" in lines[2]


def test_format_summary_table_single_entry_group_has_no_spread():
    entries = [make_entry(material="Solo", judge=make_judge([4, 3, 4, 4, 4.5, 3.5, 5]))]
    table = format_summary_table(summarize(entries, "synthesis_method"))
    assert "4.00" in table
    assert "±" not in table


def test_format_summary_table_empty():
    table = format_summary_table(summarize([], "source"))
    assert table.splitlines()[0].startswith("source")
    assert len(table.splitlines()) == 1


def test_summary_to_obj_is_json_ready():
    obj = summary_to_obj(summarize(summary_fixture(), "material_category"))
    text = json.dumps(obj)
    parsed = json.loads(text)
    assert parsed["group_by"] == "material_category"
    assert parsed["steps_per_record"] == {"1": 2, "2": 3}
    assert parsed["rows"][0]["count"] == 5  # all records share the default category


# ---------------------------------------------------------------------------
# sampling


def test_sample_entries_small_k_deterministic():
    entries = sample_corpus()
    picked = sample_entries(entries, 2, seed=4)
    assert len(picked) == 2
    assert picked == sample_entries(entries, 2, seed=4)
    for entry in picked:
        assert entry in entries


def test_sample_entries_k_at_least_n_returns_all_in_order():
    entries = sample_corpus()
    assert sample_entries(entries, len(entries)) == entries
    assert sample_entries(entries, 100) == entries
    copy = sample_entries(entries, 100)
    copy.append("sentinel")
    assert len(entries) == 5  # returned list is a copy
