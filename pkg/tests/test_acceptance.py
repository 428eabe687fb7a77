"""Release gate.

One test per core guarantee. Every numeric check runs against an
independent pure-Python oracle or a frozen hand-computed value; nothing
here trusts the implementation it is testing.
"""

import io
import itertools
import json
import math
import random
import socket
import time
from fractions import Fraction

import pytest
from PIL import Image

from synthminer.cli import main as cli_main
from synthminer.corpus import DocumentStore, postprocess_markdown, remove_references_section
from synthminer.evaluation import (
    ICC_TWO_WAY_MIXED_SINGLE,
    ICC_TWO_WAY_RANDOM_SINGLE,
    GroundTruthSeries,
    cohen_kappa,
    display_score,
    icc,
    overall_score,
    series_metrics,
    spearman_permutation,
)
from synthminer.extraction import (
    REASON_JUDGE_SCORE_ONE,
    REASON_NO_MATERIAL,
    REASON_TRIVIAL_NAME,
    REASON_UNCLEAR_IDENTIFIER,
    postfilter_record,
)
from synthminer.figures import BoundingBox, select_subfigures
from synthminer.ontology import VIOLATION_CODES, canonical_serialize, parse_record, validate_record

from conftest import FIXTURES, random_valid_record

E2E = FIXTURES / "e2e"


# ---------------------------------------------------------------------------
# oracles (pure Python, no numpy)


def _oracle_metrics(extracted, gt_points):
    """Brute-force O(N*M) nearest-neighbor metrics in plain loops."""
    xs = [p[0] for p in gt_points]
    ys = [p[1] for p in gt_points]
    sx = (max(xs) - min(xs)) or 1.0
    sy = (max(ys) - min(ys)) or 1.0
    distances = []
    for ex, ey in extracted:
        best = math.inf
        for gx, gy in gt_points:
            dx = (ex - gx) / sx
            dy = (ey - gy) / sy
            d = math.sqrt(dx * dx + dy * dy)
            if d < best:
                best = d
        distances.append(best)
    n = len(distances)
    return math.sqrt(sum(d * d for d in distances) / n), sum(distances) / n


def _rank_avg(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def _rho_of_ranks(ra, rb):
    n = len(ra)
    ma = sum(ra) / n
    mb = sum(rb) / n
    da = [v - ma for v in ra]
    db = [v - mb for v in rb]
    num = sum(x * y for x, y in zip(da, db))
    den = math.sqrt(sum(x * x for x in da) * sum(y * y for y in db))
    return num / den


def _exact_permutation_p(a, b):
    """Two-sided permutation p by full enumeration of rank orderings."""
    ra, rb = _rank_avg(a), _rank_avg(b)
    observed = abs(_rho_of_ranks(ra, rb))
    hits = 0
    total = 0
    for perm in itertools.permutations(rb):
        total += 1
        if abs(_rho_of_ranks(ra, perm)) >= observed - 1e-12:
            hits += 1
    return hits / total


def _icc_anova_oracle(matrix, form):
    """Single-rater ICC from exact-rational ANOVA mean squares."""
    n = len(matrix)
    k = len(matrix[0])
    cells = [[Fraction(v) for v in row] for row in matrix]
    grand = sum(sum(row) for row in cells) / (n * k)
    row_means = [sum(row) / k for row in cells]
    col_means = [sum(cells[i][j] for i in range(n)) / n for j in range(k)]
    ss_rows = k * sum((m - grand) ** 2 for m in row_means)
    ss_cols = n * sum((m - grand) ** 2 for m in col_means)
    ss_total = sum((v - grand) ** 2 for row in cells for v in row)
    ms_r = ss_rows / (n - 1)
    ms_c = ss_cols / (k - 1)
    ms_e = (ss_total - ss_rows - ss_cols) / ((n - 1) * (k - 1))
    if form == ICC_TWO_WAY_RANDOM_SINGLE:
        denom = ms_r + (k - 1) * ms_e + k * (ms_c - ms_e) / n
    else:
        denom = ms_r + (k - 1) * ms_e
    return float((ms_r - ms_e) / denom)


# ---------------------------------------------------------------------------
# plot digitization metrics


def test_distance_metrics_match_bruteforce_oracle():
    rng = random.Random(20260825)
    started = time.monotonic()
    for _ in range(500):
        gt = [(rng.uniform(-50, 50), rng.uniform(-50, 50)) for _ in range(rng.randint(1, 20))]
        ex = [(rng.uniform(-50, 50), rng.uniform(-50, 50)) for _ in range(rng.randint(1, 20))]
        got = series_metrics(ex, GroundTruthSeries(name="s", points=tuple(gt)))
        want_rmse, want_mae = _oracle_metrics(ex, gt)
        assert got.rel_rmse == pytest.approx(want_rmse, abs=1e-12)
        assert got.rel_mae == pytest.approx(want_mae, abs=1e-12)
    assert time.monotonic() - started < 5.0


def test_distance_metrics_hand_values():
    gt = GroundTruthSeries(name="curve", points=((0.0, 0.0), (1.0, 1.0)))
    got = series_metrics([(0.0, 0.0), (1.0, 0.5)], gt)
    # distances are 0 and 0.5 on unit spans
    assert got.rel_rmse == pytest.approx(math.sqrt(0.125), abs=1e-12)
    assert got.rel_mae == pytest.approx(0.25, abs=1e-12)


def test_zero_error_on_identical_series():
    rng = random.Random(31)
    for _ in range(100):
        pts = [(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3)) for _ in range(rng.randint(2, 15))]
        got = series_metrics(pts, GroundTruthSeries(name="s", points=tuple(pts)))
        assert got.rel_rmse == 0.0
        assert got.rel_mae == 0.0


def test_metrics_affine_invariance():
    rng = random.Random(48112)
    for _ in range(40):
        gt = [(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(rng.randint(2, 12))]
        ex = [(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(rng.randint(1, 12))]
        base = series_metrics(ex, GroundTruthSeries(name="s", points=tuple(gt)))
        c = rng.uniform(0.1, 10.0)
        axis = rng.choice((0, 1))

        def warp(p):
            return (p[0] * c, p[1]) if axis == 0 else (p[0], p[1] * c)

        warped = series_metrics(
            [warp(p) for p in ex],
            GroundTruthSeries(name="s", points=tuple(warp(p) for p in gt)),
        )
        assert warped.rel_rmse == pytest.approx(base.rel_rmse, rel=1e-9)
        assert warped.rel_mae == pytest.approx(base.rel_mae, rel=1e-9)


# ---------------------------------------------------------------------------
# agreement statistics


def test_permutation_p_value_exactness():
    rng = random.Random(555)
    checked = 0
    while checked < 50:
        n = rng.randint(3, 6)
        a = [rng.randint(1, 6) for _ in range(n)]
        b = [rng.randint(1, 6) for _ in range(n)]
        if len(set(a)) == 1 or len(set(b)) == 1:
            continue
        _, p = spearman_permutation(a, b, resamples=10_000, seed=checked)
        p_exact = _exact_permutation_p(a, b)
        sd = math.sqrt(p_exact * (1 - p_exact) / 10_000)
        assert abs(p - p_exact) <= 4 * sd + 1e-9
        checked += 1

    rho, p = spearman_permutation([1, 2, 3], [3, 2, 1], resamples=10_000, seed=0)
    assert rho == -1.0
    assert p == 1 / 3


def test_agreement_statistics_hand_values():
    assert cohen_kappa([1, 1, 2, 2], [1, 2, 2, 2]) == 0.5

    matrix = [[4, 4.5], [3, 3], [5, 4.5], [2, 2.5]]
    for form, frozen in ((ICC_TWO_WAY_RANDOM_SINGLE, 40 / 43), (ICC_TWO_WAY_MIXED_SINGLE, 120 / 131)):
        value = icc(matrix, form)
        assert value == pytest.approx(_icc_anova_oracle(matrix, form), abs=1e-9)
        assert value == pytest.approx(frozen, abs=1e-9)

    scores = [1.0, 2.0, 3.0, 4.0, 5.0]
    rho, _ = spearman_permutation(scores, scores, resamples=1000, seed=0)
    assert rho == 1.0
    assert cohen_kappa(scores, scores) == 1.0
    pairs = [[v, v] for v in scores]
    assert icc(pairs, ICC_TWO_WAY_RANDOM_SINGLE) == 1.0
    assert icc(pairs, ICC_TWO_WAY_MIXED_SINGLE) == 1.0


def test_judge_score_arithmetic():
    overall = overall_score([2, 2, 2, 5, 5, 2, 4])
    assert overall == 22 / 7
    assert display_score(overall) == "3.1"

    flat = overall_score([4, 3, 4, 4, 4.5, 3.5, 5])
    assert flat == 4.0
    assert display_score(flat) == "4.0"


# ---------------------------------------------------------------------------
# record schema


def test_ontology_round_trip_and_violation_codes():
    rng = random.Random(8)
    for _ in range(50):
        record = random_valid_record(rng)
        assert validate_record(record).ok
        text = canonical_serialize(record)
        assert canonical_serialize(parse_record(text).record) == text

    triggered = set()
    for path in sorted((FIXTURES / "ontology" / "invalid").glob("*.json")):
        report = validate_record(parse_record(path.read_text(encoding="utf-8")).record)
        assert not report.ok
        assert path.stem.upper() in report.codes()
        triggered |= report.codes()
    assert triggered == set(VIOLATION_CODES)
    assert {"ENUM_UNKNOWN", "STEP_ORDER", "UNIT_MISSING"} <= triggered


# ---------------------------------------------------------------------------
# dataset gate


GATE_FIXTURE = (
    ("", None, REASON_NO_MATERIAL),
    ("   ", None, REASON_NO_MATERIAL),
    ("N/A", None, REASON_NO_MATERIAL),
    ("C", None, REASON_TRIVIAL_NAME),
    ("--", None, REASON_TRIVIAL_NAME),
    ("8a", None, REASON_UNCLEAR_IDENTIFIER),
    ("Ni", None, REASON_UNCLEAR_IDENTIFIER),
    ("Intermediate 3", None, REASON_UNCLEAR_IDENTIFIER),
    ("Compound B", None, REASON_UNCLEAR_IDENTIFIER),
    ("Zinc Oxide Film", 1.0, REASON_JUDGE_SCORE_ONE),
    ("Barium Titanate", 4.5, None),
    ("Lithium Cobalt Oxide", None, None),
)


def test_postfilter_drop_reasons():
    decisions = [postfilter_record(name, None, judge=score) for name, score, _ in GATE_FIXTURE]
    assert [d.reason for d in decisions] == [want for _, _, want in GATE_FIXTURE]
    assert sum(d.kept for d in decisions) == 2


# ---------------------------------------------------------------------------
# markdown cleanup


def test_reference_stripping_and_idempotence():
    citations = [f"[{i}] Author {i}, Some Journal {i}." for i in range(1, 61)]
    doc = "Intro paragraph.\n\n## References\n" + "\n".join(citations)
    cleaned = remove_references_section(doc)
    assert cleaned == "Intro paragraph.\n\n" + "\n".join(citations[50:])
    assert cleaned.splitlines()[-10:] == citations[50:]

    vocab = (
        "A plain sentence about synthesis.",
        "",
        "## References",
        "# Methods",
        "### RESULTS",
        "![fig](img/a.png)",
        "before ![x](y.png) after",
        "![outer ![inner](i.png)](o.png)",
        "| T (C) | yield |",
        "[12] someone et al.",
    )
    rng = random.Random(1010)
    for _ in range(20):
        doc = "\n".join(rng.choice(vocab) for _ in range(rng.randint(5, 80)))
        once = postprocess_markdown(doc)
        assert postprocess_markdown(once) == once


# ---------------------------------------------------------------------------
# figure box gating


class _CannedDetector:
    def __init__(self, boxes):
        self.boxes = boxes

    def segment(self, image, text_threshold, box_threshold):
        return list(self.boxes)


def _png(width, height):
    buf = io.BytesIO()
    Image.new("RGB", (width, height), (250, 250, 250)).save(buf, format="PNG")
    return buf.getvalue()


def test_subfigure_gating_invariants():
    rng = random.Random(1103)
    for _ in range(60):
        width, height = rng.randint(40, 400), rng.randint(40, 400)
        image = _png(width, height)
        boxes = [
            BoundingBox(
                x=rng.uniform(-20, width),
                y=rng.uniform(-20, height),
                w=rng.uniform(1, width * 1.2),
                h=rng.uniform(1, height * 1.2),
                confidence=rng.uniform(0, 1),
            )
            for _ in range(rng.randint(0, 6))
        ]
        kept = select_subfigures(image, _CannedDetector(boxes))
        assert kept
        if kept == [BoundingBox(0.0, 0.0, float(width), float(height), 1.0)]:
            continue  # nothing survived: whole figure treated as one plot
        for box in kept:
            assert box.confidence >= 0.3
            assert box.x >= 0 and box.y >= 0
            assert box.x + box.w <= width and box.y + box.h <= height
            assert box.w > 0 and box.h > 0
            assert box.area < 0.5 * width * height


# ---------------------------------------------------------------------------
# end to end


def test_end_to_end_mock_run_deterministic(tmp_path, monkeypatch, capsys):
    def _no_network(*_args, **_kwargs):
        raise AssertionError("network call attempted during a mock run")

    monkeypatch.setattr(socket.socket, "connect", _no_network)

    bundles = {name: str(E2E / "bundles" / name) for name in ("paper-a", "paper-b", "paper-c")}
    base = ["--provider-config", str(E2E / "provider.json"), "--mock"]

    started = time.monotonic()
    exports = {}
    for label, order in (
        ("abc", ("paper-a", "paper-b", "paper-c")),
        ("cab", ("paper-c", "paper-a", "paper-b")),
    ):
        store = str(tmp_path / f"store-{label}")
        assert cli_main(["--store", store, "ingest", *[bundles[n] for n in order]]) == 0
        out = tmp_path / f"{label}.jsonl"
        assert cli_main(["--store", store, *base, "run-all", "--out", str(out)]) == 0
        exports[label] = (out.read_bytes(), (tmp_path / f"{label}.jsonl.drops").read_bytes())
    elapsed = time.monotonic() - started
    capsys.readouterr()

    assert elapsed < 10.0
    assert exports["abc"] == exports["cab"]

    again = tmp_path / "again.jsonl"
    assert cli_main(["--store", str(tmp_path / "store-abc"), *base, "run-all", "--out", str(again)]) == 0
    capsys.readouterr()
    assert again.read_bytes() == exports["abc"][0]
    assert (tmp_path / "again.jsonl.drops").read_bytes() == exports["abc"][1]

    kept_rows = [json.loads(line) for line in exports["abc"][0].decode("utf-8").splitlines()]
    assert [row["material_name"] for row in kept_rows] == ["Lithium Cobalt Oxide", "Barium Titanate"]
    drop_rows = [json.loads(line) for line in exports["abc"][1].decode("utf-8").splitlines()]
    assert sorted(row["drop"]["reason"] for row in drop_rows) == [
        "judge_material_score_one",
        "unclear_identifier",
    ]

    store = DocumentStore(tmp_path / "store-abc")
    for paper, expected in (("paper-a", True), ("paper-b", True), ("paper-c", False)):
        verdict = json.loads((store.paper_dir(paper) / "verdict.json").read_text(encoding="utf-8"))
        assert verdict["contains_recipe"] is expected
    materials_a = json.loads((store.paper_dir("paper-a") / "materials.json").read_text(encoding="utf-8"))
    assert materials_a["materials"] == ["Lithium Cobalt Oxide", "8a"]
    assert not (store.paper_dir("paper-c") / "materials.json").exists()
    for paper, slug in (
        ("paper-a", "lithium-cobalt-oxide"),
        ("paper-a", "8a"),
        ("paper-b", "barium-titanate"),
        ("paper-b", "zinc-oxide-film"),
    ):
        assert (store.paper_dir(paper) / "synthesis" / f"{slug}.json").exists()
        assert (store.paper_dir(paper) / "judge" / f"{slug}.json").exists()
