"""Stage orchestration over a document store.

Each stage reads its predecessor's artifact from the per-paper directory
and writes its own, so stages can be re-run independently and a crashed
run resumes from what is on disk. Artifact files per paper:

    verdict.json                     recipe filter outcome
    materials.json                   final synthesized material names
    synthesis/<material-slug>.json   structured record + validation output
    judge/<material-slug>.json       judge report
    digitized/<figure_id>.lineplot.json  digitized line plots
    drops.json                       gate decisions for the audit trail

(Digitized plots deliberately do not live under figures/, which holds the
ingested image assets themselves.)

Stages fan out over papers (and over (paper, material) pairs) with a
bounded thread pool; workers write disjoint paths only.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import evaluation, extraction, figures
from .corpus import DocumentStore
from .dataset import DatasetEntry, ExportReport, Stamped, assemble_entry, export_dataset, material_slug
from .evaluation import judge_report_obj, judge_scores_from_obj
from .gateway import LlmGateway, request_fingerprint
from .ontology import ParseError, parse_record, record_to_obj

DEFAULT_CONCURRENCY = 4


@dataclass(frozen=True)
class StageFailure:
    stage: str
    paper_id: str
    detail: str
    material: str | None = None
    figure_id: str | None = None


@dataclass
class RunReport:
    failures: list[StageFailure] = field(default_factory=list)
    skipped_figures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def merge(self, other: "RunReport") -> "RunReport":
        self.failures.extend(other.failures)
        self.skipped_figures.extend(other.skipped_figures)
        return self


def _read_json(path: Path) -> dict | None:
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Pipeline:
    def __init__(
        self,
        store: DocumentStore,
        text_gateway: LlmGateway | None = None,
        judge_gateway: LlmGateway | None = None,
        vision_gateway: LlmGateway | None = None,
        sidecar=None,
        concurrency: int = DEFAULT_CONCURRENCY,
        filter_chunk_tokens: int = extraction.DEFAULT_FILTER_CHUNK_TOKENS,
        synthesis_max_tokens: int = 8000,
    ):
        self.store = store
        self.text_gateway = text_gateway
        self.judge_gateway = judge_gateway or text_gateway
        self.vision_gateway = vision_gateway
        self.sidecar = sidecar
        self.concurrency = max(1, concurrency)
        self.filter_chunk_tokens = filter_chunk_tokens
        self.synthesis_max_tokens = synthesis_max_tokens

    # -- helpers ------------------------------------------------------------

    def _ids(self, ids: Iterable[str] | None) -> list[str]:
        return sorted(ids) if ids is not None else self.store.ids()

    def _fan_out(self, jobs: list, worker: Callable, report: RunReport) -> None:
        if not jobs:
            return
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            for outcome in pool.map(worker, jobs):
                if outcome is not None:
                    report.failures.append(outcome)

    def _require_text_gateway(self) -> LlmGateway:
        if self.text_gateway is None:
            raise RuntimeError("no text gateway configured")
        return self.text_gateway

    # -- stages -------------------------------------------------------------

    def run_filter(self, ids: Iterable[str] | None = None) -> RunReport:
        report = RunReport()
        gateway = self._require_text_gateway()

        def work(paper_id: str) -> StageFailure | None:
            try:
                doc = self.store.load(paper_id)
                verdict = extraction.filter_paper(doc, gateway, limit=self.filter_chunk_tokens)
            except Exception as exc:
                return StageFailure("filter", paper_id, f"{type(exc).__name__}: {exc}")
            _write_json(
                self.store.paper_dir(paper_id) / "verdict.json",
                {
                    "paper_id": paper_id,
                    "contains_recipe": verdict.contains_recipe,
                    "material_name": verdict.material_name,
                    "material_category": verdict.material_category,
                },
            )
            return None

        self._fan_out(self._ids(ids), work, report)
        return report

    def run_materials(self, ids: Iterable[str] | None = None) -> RunReport:
        report = RunReport()
        gateway = self._require_text_gateway()
        positive = []
        for paper_id in self._ids(ids):
            verdict = _read_json(self.store.paper_dir(paper_id) / "verdict.json")
            if verdict is not None and verdict.get("contains_recipe"):
                positive.append(paper_id)

        def work(paper_id: str) -> StageFailure | None:
            try:
                doc = self.store.load(paper_id)
                names = extraction.extract_material_names(doc, gateway)
            except Exception as exc:
                return StageFailure("extract-materials", paper_id, f"{type(exc).__name__}: {exc}")
            _write_json(
                self.store.paper_dir(paper_id) / "materials.json",
                {"paper_id": paper_id, "materials": names},
            )
            return None

        self._fan_out(positive, work, report)
        return report

    def _materials_of(self, paper_id: str) -> list[str]:
        artifact = _read_json(self.store.paper_dir(paper_id) / "materials.json")
        if artifact is None:
            return []
        return list(artifact.get("materials", []))

    def run_synthesis(self, ids: Iterable[str] | None = None) -> RunReport:
        report = RunReport()
        gateway = self._require_text_gateway()
        jobs: list[tuple[str, str]] = []
        for paper_id in self._ids(ids):
            for material in self._materials_of(paper_id):
                jobs.append((paper_id, material))

        def work(job: tuple[str, str]) -> StageFailure | None:
            paper_id, material = job
            path = self.store.paper_dir(paper_id) / "synthesis" / f"{material_slug(material)}.json"
            doc = self.store.load(paper_id)
            fingerprint = request_fingerprint(
                extraction.synthesis_request(doc, material, self.synthesis_max_tokens)
            )
            base = {"paper_id": paper_id, "material": material, "prompt_fingerprint": fingerprint}
            try:
                result, validation = extraction.extract_synthesis(
                    doc, material, gateway, max_tokens=self.synthesis_max_tokens
                )
            except ParseError as exc:
                _write_json(path, {**base, "record": None, "error": str(exc)})
                return StageFailure("extract-synthesis", paper_id, f"ParseError: {exc}", material=material)
            except Exception as exc:
                return StageFailure(
                    "extract-synthesis", paper_id, f"{type(exc).__name__}: {exc}", material=material
                )
            _write_json(
                path,
                {
                    **base,
                    "record": record_to_obj(result.record),
                    "parser_warnings": result.warnings,
                    "violations": [
                        {"code": v.code, "path": v.path, "message": v.message} for v in validation.violations
                    ],
                    "warnings": [
                        {"code": v.code, "path": v.path, "message": v.message} for v in validation.warnings
                    ],
                    "provider": self._require_text_gateway().config.name,
                    "model": self._require_text_gateway().config.model,
                },
            )
            return None

        self._fan_out(jobs, work, report)
        return report

    def _synthesis_artifacts(self, paper_id: str) -> list[dict]:
        syn_dir = self.store.paper_dir(paper_id) / "synthesis"
        if not syn_dir.is_dir():
            return []
        artifacts = []
        for path in sorted(syn_dir.glob("*.json")):
            artifacts.append(json.loads(path.read_text(encoding="utf-8")))
        return artifacts

    def run_judge(self, ids: Iterable[str] | None = None) -> RunReport:
        report = RunReport()
        if self.judge_gateway is None:
            raise RuntimeError("no judge gateway configured")
        jobs: list[tuple[str, dict]] = []
        for paper_id in self._ids(ids):
            for artifact in self._synthesis_artifacts(paper_id):
                if artifact.get("record") is not None:
                    jobs.append((paper_id, artifact))

        def work(job: tuple[str, dict]) -> StageFailure | None:
            paper_id, artifact = job
            material = artifact["material"]
            try:
                doc = self.store.load(paper_id)
                record = parse_record(json.dumps(artifact["record"])).record
                scores = evaluation.judge_extraction(doc.markdown, record, self.judge_gateway)
            except Exception as exc:
                return StageFailure("judge", paper_id, f"{type(exc).__name__}: {exc}", material=material)
            _write_json(
                self.store.paper_dir(paper_id) / "judge" / f"{material_slug(material)}.json",
                {"paper_id": paper_id, "material": material, **judge_report_obj(scores)},
            )
            return None

        self._fan_out(jobs, work, report)
        return report

    def run_digitize(self, ids: Iterable[str] | None = None) -> RunReport:
        """Digitize line-chart figures; a missing sidecar skips, never fails."""
        report = RunReport()
        for paper_id in self._ids(ids):
            doc = self.store.load(paper_id)
            for asset in doc.figures:
                tag = f"{paper_id}/{asset.figure_id}"
                if self.sidecar is None or self.vision_gateway is None:
                    report.skipped_figures.append(tag)
                    continue
                try:
                    boxes = figures.select_subfigures(asset.payload, self.sidecar)
                except (figures.SidecarUnavailable, figures.ImageDecodeError) as exc:
                    report.skipped_figures.append(f"{tag} ({type(exc).__name__})")
                    continue
                plots = []
                skipped = False
                for box in boxes:
                    crop = figures.crop_image(asset.payload, box)
                    try:
                        plot_class = figures.classify_figure(crop, self.sidecar)
                    except (figures.SidecarUnavailable, figures.ImageDecodeError):
                        skipped = True
                        break
                    if plot_class.label != figures.LINE_CHART_CLASS:
                        continue
                    try:
                        parsed = figures.digitize_line_plot(crop, self.vision_gateway)
                    except ParseError as exc:
                        report.failures.append(
                            StageFailure("digitize", paper_id, f"ParseError: {exc}", figure_id=asset.figure_id)
                        )
                        continue
                    plots.append(figures.plot_data_to_obj(parsed.data))
                if skipped:
                    report.skipped_figures.append(f"{tag} (sidecar lost mid-figure)")
                    continue
                if plots:
                    _write_json(
                        self.store.paper_dir(paper_id) / "digitized" / f"{asset.figure_id}.lineplot.json",
                        {"paper_id": paper_id, "figure_id": asset.figure_id, "plots": plots},
                    )
        return report

    # -- assembly -----------------------------------------------------------

    def _digitized_figure_ids(self, paper_id: str) -> list[str]:
        dig_dir = self.store.paper_dir(paper_id) / "digitized"
        if not dig_dir.is_dir():
            return []
        return sorted(p.name[: -len(".lineplot.json")] for p in dig_dir.glob("*.lineplot.json"))

    def assemble(self, ids: Iterable[str] | None = None) -> tuple[list[DatasetEntry], RunReport]:
        """Join persisted stage outputs into dataset entries + drops.json."""
        report = RunReport()
        entries: list[DatasetEntry] = []
        for paper_id in self._ids(ids):
            paper_dir = self.store.paper_dir(paper_id)
            materials_artifact = _read_json(paper_dir / "materials.json")
            if materials_artifact is None:
                continue  # paper never passed the filter
            doc = self.store.load(paper_id)
            drops: list[dict] = []
            materials = list(materials_artifact.get("materials", []))
            if not materials:
                drops.append({"material": None, "kept": False, "reason": extraction.REASON_NO_MATERIAL})
            figure_refs = self._digitized_figure_ids(paper_id)
            for artifact in self._synthesis_artifacts(paper_id):
                material = artifact["material"]
                if artifact.get("record") is None:
                    report.failures.append(
                        StageFailure(
                            "assemble", paper_id, artifact.get("error", "no record"), material=material
                        )
                    )
                    continue
                record = parse_record(json.dumps(artifact["record"])).record
                judge_artifact = _read_json(paper_dir / "judge" / f"{material_slug(material)}.json")
                judge = judge_scores_from_obj(judge_artifact) if judge_artifact else None
                drop = extraction.postfilter_record(material, record, judge)
                provenance = {
                    "provider": artifact.get("provider", ""),
                    "model": artifact.get("model", ""),
                    "prompt_fingerprints": {"synthesis": artifact.get("prompt_fingerprint", "")},
                }
                if judge is not None:
                    provenance["judge_model"] = judge.model
                    provenance["prompt_fingerprints"]["judge"] = judge.prompt_fingerprint
                entries.append(
                    assemble_entry(
                        doc,
                        material,
                        Stamped(artifact["paper_id"], record),
                        Stamped(judge_artifact["paper_id"], judge) if judge_artifact else None,
                        [Stamped(paper_id, ref) for ref in figure_refs],
                        drop,
                        provenance,
                    )
                )
                drops.append({"material": material, "kept": drop.kept, "reason": drop.reason})
            _write_json(paper_dir / "drops.json", {"paper_id": paper_id, "drops": drops})
        return entries, report

    def run_all(
        self, ids: Iterable[str] | None = None, export_path: str | Path | None = None
    ) -> tuple[list[DatasetEntry], ExportReport | None, RunReport]:
        report = self.run_filter(ids)
        report.merge(self.run_materials(ids))
        report.merge(self.run_synthesis(ids))
        if self.judge_gateway is not None:
            report.merge(self.run_judge(ids))
        report.merge(self.run_digitize(ids))
        entries, assemble_report = self.assemble(ids)
        report.merge(assemble_report)
        export_report = export_dataset(entries, export_path) if export_path is not None else None
        return entries, export_report, report
