"""Quality measurement: figure metrics, LLM judging, rater agreement.

Figure accuracy works on axis-normalized nearest-neighbor distances from
extracted points to ground truth. Extraction quality is scored by a judge
model on seven criteria over a half-point grid from 1 to 5, with the
overall score defined as the exact arithmetic mean. Agreement between two
raters is summarized by Spearman rho with a permutation p-value, unweighted
Cohen's kappa over the exact grid categories, and two single-rater ICC
forms computed from the two-way ANOVA mean squares.
"""

from __future__ import annotations

import itertools
import math
import statistics
from dataclasses import dataclass

import numpy as np

from . import prompts
from .gateway import LlmGateway, ModelRequest, request_fingerprint
from .ontology import ParseError, SynthesisRecord, canonical_serialize, find_json_object

CRITERIA = (
    "structural_completeness",
    "material_extraction",
    "process_steps",
    "equipment_extraction",
    "conditions_extraction",
    "semantic_accuracy",
    "format_compliance",
)

ICC_TWO_WAY_RANDOM_SINGLE = "two_way_random_single"
ICC_TWO_WAY_MIXED_SINGLE = "two_way_mixed_single"

JUDGE_TEMPERATURE = 0.1
JUDGE_MAX_TOKENS = 4096


class ScoreError(ValueError):
    """A criterion score is off the half-point grid or out of [1, 5]."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


# ---------------------------------------------------------------------------
# Figure metrics


@dataclass(frozen=True)
class GroundTruthSeries:
    name: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))


@dataclass(frozen=True)
class AxisScales:
    x: float
    y: float
    degenerate_x: bool = False
    degenerate_y: bool = False

    @property
    def degenerate(self) -> bool:
        return self.degenerate_x or self.degenerate_y


@dataclass(frozen=True)
class SeriesMetrics:
    rel_rmse: float
    rel_mae: float
    n_extracted: int
    n_ground_truth: int
    scale_x: float
    scale_y: float


def normalization_scales(gt: GroundTruthSeries) -> AxisScales:
    """Per-axis spans of the ground truth; zero spans become 1.0, flagged."""
    if not gt.points:
        raise ValueError("ground truth series has no points")
    xs = [p[0] for p in gt.points]
    ys = [p[1] for p in gt.points]
    span_x = max(xs) - min(xs)
    span_y = max(ys) - min(ys)
    return AxisScales(
        x=span_x if span_x > 0 else 1.0,
        y=span_y if span_y > 0 else 1.0,
        degenerate_x=span_x == 0,
        degenerate_y=span_y == 0,
    )


def matched_distances(
    extracted: list[tuple[float, float]] | tuple[tuple[float, float], ...],
    gt: GroundTruthSeries,
    scales: AxisScales,
) -> list[float]:
    """Nearest-neighbor distance from each extracted point to the ground truth.

    Matching runs one way only (extracted to ground truth); unmatched
    ground-truth points are not penalized here.
    """
    if not extracted:
        raise ValueError("no extracted points")
    if not gt.points:
        raise ValueError("ground truth series has no points")
    ex = np.asarray(extracted, dtype=float)
    gx = np.asarray(gt.points, dtype=float)
    dx = (ex[:, 0][:, None] - gx[:, 0][None, :]) / scales.x
    dy = (ex[:, 1][:, None] - gx[:, 1][None, :]) / scales.y
    return np.sqrt(dx * dx + dy * dy).min(axis=1).tolist()


def series_metrics(
    extracted: list[tuple[float, float]] | tuple[tuple[float, float], ...],
    gt: GroundTruthSeries,
) -> SeriesMetrics:
    scales = normalization_scales(gt)
    distances = matched_distances(extracted, gt, scales)
    n = len(distances)
    return SeriesMetrics(
        rel_rmse=math.sqrt(sum(d * d for d in distances) / n),
        rel_mae=sum(distances) / n,
        n_extracted=n,
        n_ground_truth=len(gt.points),
        scale_x=scales.x,
        scale_y=scales.y,
    )


@dataclass(frozen=True)
class AggregateMetrics:
    rel_rmse: float
    rel_mae: float
    n: int


def aggregate_metrics(parts: list[SeriesMetrics] | list[AggregateMetrics]) -> AggregateMetrics:
    """Unweighted mean, used both per figure (over series) and per corpus."""
    if not parts:
        raise ValueError("nothing to aggregate")
    return AggregateMetrics(
        rel_rmse=sum(p.rel_rmse for p in parts) / len(parts),
        rel_mae=sum(p.rel_mae for p in parts) / len(parts),
        n=len(parts),
    )


def evaluate_figure(extracted_series, gt_series: list[GroundTruthSeries]) -> dict[str, SeriesMetrics]:
    """Pair extracted and ground-truth series by exact name and score each."""
    gt_by_name = {g.name: g for g in gt_series}
    out: dict[str, SeriesMetrics] = {}
    for s in extracted_series:
        gt = gt_by_name.get(s.name)
        if gt is not None:
            out[s.name] = series_metrics(s.points, gt)
    return out


# ---------------------------------------------------------------------------
# Judge


@dataclass(frozen=True)
class JudgeScores:
    structural_completeness: float
    material_extraction: float
    process_steps: float
    equipment_extraction: float
    conditions_extraction: float
    semantic_accuracy: float
    format_compliance: float
    overall: float
    reasoning: str = ""
    model: str = ""
    prompt_fingerprint: str = ""

    def criteria(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in CRITERIA)


def check_score(value: float, name: str = "score") -> float:
    value = float(value)
    if not math.isfinite(value) or not 1.0 <= value <= 5.0:
        raise ScoreError("out_of_range", f"{name} must lie in [1, 5], got {value!r}")
    if value * 2 != round(value * 2):
        raise ScoreError("off_grid", f"{name} must be a multiple of 0.5, got {value!r}")
    return value


def overall_score(criteria) -> float:
    """Exact arithmetic mean of the seven criteria; rounding is display-only."""
    values = list(criteria)
    if len(values) != len(CRITERIA):
        raise ScoreError("out_of_range", f"expected {len(CRITERIA)} criteria, got {len(values)}")
    values = [check_score(v, name) for name, v in zip(CRITERIA, values)]
    return sum(values) / len(values)


def display_score(value: float) -> str:
    return f"{value:.1f}"


def parse_judge_response(text: str, model: str = "", prompt_fingerprint: str = "") -> JudgeScores:
    try:
        obj = find_json_object(text)
    except ParseError as exc:
        raise ParseError("judge_format", f"judge answer held no JSON object: {exc}") from exc
    values = []
    for name in CRITERIA:
        if name not in obj:
            raise ParseError("judge_format", "missing criterion", name)
        raw = obj[name]
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ParseError("judge_format", f"criterion is not a number: {raw!r}", name)
        values.append(check_score(raw, name))
    reasoning = obj.get("reasoning")
    return JudgeScores(
        **dict(zip(CRITERIA, values)),
        overall=sum(values) / len(values),
        reasoning=reasoning if isinstance(reasoning, str) else "",
        model=model,
        prompt_fingerprint=prompt_fingerprint,
    )


def judge_extraction(
    paper_text: str,
    record: SynthesisRecord,
    gateway: LlmGateway,
    temperature: float = JUDGE_TEMPERATURE,
    max_tokens: int = JUDGE_MAX_TOKENS,
) -> JudgeScores:
    """Score one extraction against its source text with the judge model."""
    request = ModelRequest(
        kind="text",
        system_prompt=prompts.JUDGE_SYSTEM,
        user_prompt=prompts.build_judge_prompt(paper_text, canonical_serialize(record)),
        temperature=temperature,
        max_tokens=max_tokens,
    )
    response = gateway.complete_text(request)
    return parse_judge_response(response.text, model=response.model, prompt_fingerprint=request_fingerprint(request))


def judge_report_obj(scores: JudgeScores) -> dict:
    """Persisted judge report layout."""
    return {
        "scores": {name: getattr(scores, name) for name in CRITERIA},
        "overall": scores.overall,
        "reasoning": scores.reasoning,
        "model": scores.model,
        "prompt_fingerprint": scores.prompt_fingerprint,
    }


def judge_scores_from_obj(obj: dict) -> JudgeScores:
    raw = obj.get("scores", {})
    values = {name: float(raw[name]) for name in CRITERIA}
    return JudgeScores(
        **values,
        overall=float(obj.get("overall", sum(values.values()) / len(values))),
        reasoning=obj.get("reasoning", ""),
        model=obj.get("model", ""),
        prompt_fingerprint=obj.get("prompt_fingerprint", ""),
    )


# ---------------------------------------------------------------------------
# Agreement statistics


@dataclass(frozen=True)
class AgreementStats:
    spearman_rho: float
    p_value: float
    cohen_kappa: float
    icc_2_1: float
    icc_3_1: float
    mean_a: float
    median_a: float
    sd_a: float
    mean_b: float
    median_b: float
    sd_b: float


def average_ranks(values) -> list[float]:
    """Ranks starting at 1; tied values share the average of their ranks."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    # sqrt of the product, not product of sqrts: rank sums are exact dyadic
    # rationals, so perfectly (anti)correlated input yields exactly +-1.0
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0:
        return math.nan
    return max(-1.0, min(1.0, float(xc @ yc) / denom))


def spearman_permutation(a, b, resamples: int = 10000, seed: int = 0) -> tuple[float, float]:
    """Spearman rho plus a two-sided permutation p-value.

    Only `a` is permuted. When the full permutation space fits in the
    resample budget (n! <= resamples) every permutation is enumerated and
    the p-value is exact; otherwise `resamples` shuffles are drawn with the
    seed and the +1-corrected fraction is returned. Constant input yields
    rho = nan and p = 1.0.
    """
    if len(a) != len(b):
        raise ValueError("score vectors differ in length")
    n = len(a)
    if n < 3:
        raise ValueError("need at least 3 paired scores")
    ra = np.asarray(average_ranks(list(a)), dtype=float)
    rb = np.asarray(average_ranks(list(b)), dtype=float)
    rho = _pearson(ra, rb)
    if math.isnan(rho):
        return rho, 1.0
    threshold = abs(rho) - 1e-12
    rb_c = rb - rb.mean()
    rb_ssq = float(rb_c @ rb_c)

    def batch_rhos(perms: np.ndarray) -> np.ndarray:
        centered = perms - perms.mean(axis=1, keepdims=True)
        norms = np.sqrt((centered * centered).sum(axis=1) * rb_ssq)
        return (centered @ rb_c) / norms

    if math.factorial(n) <= resamples:
        perms = np.array(list(itertools.permutations(ra)), dtype=float)
        rhos = batch_rhos(perms)
        p = float(np.count_nonzero(np.abs(rhos) >= threshold)) / len(perms)
    else:
        rng = np.random.default_rng(seed)
        perms = rng.permuted(np.tile(ra, (resamples, 1)), axis=1)
        rhos = batch_rhos(perms)
        hits = int(np.count_nonzero(np.abs(rhos) >= threshold))
        p = (1 + hits) / (1 + resamples)
    return rho, p


def cohen_kappa(a, b) -> float:
    """Unweighted kappa over exact categories.

    Both raters constant and identical is perfect agreement by definition
    (kappa = 1) even though chance agreement is then also 1.
    """
    if len(a) != len(b):
        raise ValueError("score vectors differ in length")
    if not a:
        raise ValueError("empty score vectors")
    n = len(a)
    po = sum(1 for x, y in zip(a, b) if x == y) / n
    categories = set(a) | set(b)
    pe = sum((list(a).count(c) / n) * (list(b).count(c) / n) for c in categories)
    if pe == 1.0:
        return 1.0 if po == 1.0 else 0.0
    return (po - pe) / (1 - pe)


def _mean_squares(ratings: np.ndarray) -> tuple[float, float, float, int, int]:
    n, k = ratings.shape
    grand = ratings.mean()
    row_means = ratings.mean(axis=1)
    col_means = ratings.mean(axis=0)
    ms_r = k * float(((row_means - grand) ** 2).sum()) / (n - 1)
    ms_c = n * float(((col_means - grand) ** 2).sum()) / (k - 1)
    residual = ratings - row_means[:, None] - col_means[None, :] + grand
    ms_e = float((residual**2).sum()) / ((n - 1) * (k - 1))
    return ms_r, ms_c, ms_e, n, k


def icc_result(ratings, form: str) -> tuple[float, bool]:
    """Single-rater ICC from the two-way ANOVA mean squares.

    Returns (value, degenerate). Zero-variance input (all ratings
    identical) is defined as perfect agreement: (1.0, True). Other
    zero-denominator cases (no subject variance and no residual) carry no
    subject signal and are reported as (0.0, True).
    """
    matrix = np.asarray(ratings, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] < 2 or matrix.shape[1] < 2:
        raise ValueError("ratings must be a subjects x raters matrix with at least 2 of each")
    ms_r, ms_c, ms_e, n, k = _mean_squares(matrix)
    if form == ICC_TWO_WAY_RANDOM_SINGLE:
        denom = ms_r + (k - 1) * ms_e + k * (ms_c - ms_e) / n
    elif form == ICC_TWO_WAY_MIXED_SINGLE:
        denom = ms_r + (k - 1) * ms_e
    else:
        raise ValueError(f"unknown ICC form {form!r}")
    numer = ms_r - ms_e
    if denom == 0:
        if np.all(matrix == matrix.flat[0]):
            return 1.0, True
        return 0.0, True
    return numer / denom, False


def icc(ratings, form: str) -> float:
    return icc_result(ratings, form)[0]


def compute_agreement(a, b, resamples: int = 10000, seed: int = 0) -> AgreementStats:
    """Everything the rater-comparison table needs, for two score vectors."""
    rho, p = spearman_permutation(a, b, resamples=resamples, seed=seed)
    matrix = np.column_stack([np.asarray(a, dtype=float), np.asarray(b, dtype=float)])
    return AgreementStats(
        spearman_rho=rho,
        p_value=p,
        cohen_kappa=cohen_kappa(list(a), list(b)),
        icc_2_1=icc(matrix, ICC_TWO_WAY_RANDOM_SINGLE),
        icc_3_1=icc(matrix, ICC_TWO_WAY_MIXED_SINGLE),
        mean_a=sum(a) / len(a),
        median_a=float(statistics.median(a)),
        sd_a=float(statistics.stdev(a)) if len(a) > 1 else 0.0,
        mean_b=sum(b) / len(b),
        median_b=float(statistics.median(b)),
        sd_b=float(statistics.stdev(b)) if len(b) > 1 else 0.0,
    )


def agreement_to_obj(stats: AgreementStats) -> dict:
    # rho is nan for constant input; JSON gets null there
    rho = None if math.isnan(stats.spearman_rho) else stats.spearman_rho
    return {
        "spearman_rho": rho,
        "p_value": stats.p_value,
        "cohen_kappa": stats.cohen_kappa,
        "icc_2_1": stats.icc_2_1,
        "icc_3_1": stats.icc_3_1,
        "a": {"mean": stats.mean_a, "median": stats.median_a, "sd": stats.sd_a},
        "b": {"mean": stats.mean_b, "median": stats.median_b, "sd": stats.sd_b},
    }
