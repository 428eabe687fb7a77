"""Command-line front end.

Provider configuration is a JSON file:

    {
      "text":   {"name": "...", "endpoint": "...", "model": "...",
                 "credentials_env": "...", "rate_limit": 0,
                 "price_per_input_token": 0, "price_per_output_token": 0},
      "judge":  { ... },          optional, falls back to "text"
      "vision": { ... },          optional, required for digitize
      "mock_fixtures": "dir",     used with --mock; relative to this file
      "sidecar_url": "http://...",
      "filter_chunk_tokens": 2000,
      "synthesis_max_tokens": 8000
    }

Exit codes: 0 success, 1 any stage failure, 2 configuration/usage errors.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import evaluation
from .corpus import DocumentStore, IngestError
from .dataset import export_dataset, format_summary_table, summarize, summary_to_obj
from .figures import HttpSidecarClient
from .gateway import HttpChatProvider, LlmGateway, MockProvider, ProviderConfig
from .pipeline import Pipeline, RunReport

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _load_config(path: str | None) -> tuple[dict, Path | None]:
    if path is None:
        return {}, None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"provider config not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"provider config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("provider config must be a JSON object")
    return cfg, p.parent


def _provider_config(cfg: dict, role: str, fallback: str | None = None) -> ProviderConfig | None:
    section = cfg.get(role)
    if section is None and fallback is not None:
        section = cfg.get(fallback)
    if section is None:
        return None
    if not isinstance(section, dict) or "name" not in section:
        raise ConfigError(f"provider config section {role!r} must be an object with a name")
    known = {f for f in ProviderConfig.__dataclass_fields__}
    return ProviderConfig(**{k: v for k, v in section.items() if k in known})


def _build_gateways(
    cfg: dict, cfg_dir: Path | None, mock: bool, seed: int
) -> dict[str, LlmGateway | None]:
    """One gateway per role; in mock mode all roles share the fixture provider."""
    gateways: dict[str, LlmGateway | None] = {"text": None, "judge": None, "vision": None}
    if mock:
        fixtures = cfg.get("mock_fixtures")
        if fixtures is None:
            raise ConfigError("--mock requires mock_fixtures in the provider config")
        fixture_dir = Path(fixtures)
        if cfg_dir is not None and not fixture_dir.is_absolute():
            fixture_dir = cfg_dir / fixture_dir
        if not fixture_dir.is_dir():
            raise ConfigError(f"mock fixture directory not found: {fixture_dir}")
        provider = MockProvider.from_dir(fixture_dir)
        for role in gateways:
            section = _provider_config(cfg, role, fallback="text") or ProviderConfig(name="mock")
            gateways[role] = LlmGateway(
                provider,
                ProviderConfig(
                    name=f"mock:{section.name}",
                    model=section.model or "fixture",
                    rate_limit=0.0,
                ),
                sleeper=lambda _s: None,
                rng=random.Random(seed),
            )
        return gateways
    for role, fallback in (("text", None), ("judge", "text"), ("vision", None)):
        section = _provider_config(cfg, role, fallback)
        if section is None:
            continue
        gateways[role] = LlmGateway(
            HttpChatProvider(section), section, rng=random.Random(seed)
        )
    return gateways


def _build_pipeline(args) -> Pipeline:
    cfg, cfg_dir = _load_config(args.provider_config)
    gateways = _build_gateways(cfg, cfg_dir, args.mock, args.seed)
    sidecar = None
    if not args.mock and cfg.get("sidecar_url"):
        sidecar = HttpSidecarClient(cfg["sidecar_url"])
    elif args.mock and cfg.get("sidecar_url"):
        # mock runs may still point at a stub sidecar for figure tests
        sidecar = HttpSidecarClient(cfg["sidecar_url"])
    return Pipeline(
        DocumentStore(args.store),
        text_gateway=gateways["text"],
        judge_gateway=gateways["judge"],
        vision_gateway=gateways["vision"],
        sidecar=sidecar,
        concurrency=args.concurrency,
        filter_chunk_tokens=int(cfg.get("filter_chunk_tokens", 2000)),
        synthesis_max_tokens=int(cfg.get("synthesis_max_tokens", 8000)),
    )


def _report_outcome(name: str, report: RunReport) -> int:
    for skip in report.skipped_figures:
        print(f"{name}: skipped {skip}")
    if report.failures:
        for failure in report.failures:
            where = failure.paper_id
            if failure.material:
                where += f"/{failure.material}"
            if failure.figure_id:
                where += f"/{failure.figure_id}"
            print(f"{name}: FAILED {where}: {failure.detail}", file=sys.stderr)
        print(f"{name}: {len(report.failures)} failure(s)", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    print(f"{name}: ok")
    return EXIT_OK


# Global flags are accepted before or after the subcommand. Subparsers parse
# into a fresh namespace and would clobber values set before the subcommand,
# so every shared option suppresses its default and the real defaults are
# filled in after parsing.
_GLOBAL_DEFAULTS = {
    "store": "store",
    "provider_config": None,
    "concurrency": 4,
    "seed": 0,
    "mock": False,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--store", default=argparse.SUPPRESS, help="document store directory")
    common.add_argument("--provider-config", default=argparse.SUPPRESS, help="provider config JSON path")
    common.add_argument("--concurrency", type=int, default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument(
        "--mock", action="store_true", default=argparse.SUPPRESS, help="use the fixture provider, no network"
    )

    parser = argparse.ArgumentParser(prog="synthminer", parents=[common], description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="ingest paper bundles into the store")
    p.add_argument("bundles", nargs="+", help="bundle directories (paper.md + meta.json [+ figures/])")

    for name, help_text in (
        ("filter", "run the recipe filter over stored papers"),
        ("extract-materials", "list synthesized materials for filtered papers"),
        ("extract-synthesis", "extract structured procedures per material"),
        ("digitize", "segment, classify and digitize line-chart figures"),
        ("judge", "score extracted procedures with the judge model"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--ids", nargs="*", default=None, help="restrict to these paper ids")

    p = sub.add_parser("agree", parents=[common], help="rater agreement statistics")
    p.add_argument("scores", help='JSON file {"a": [...], "b": [...]}')
    p.add_argument("--resamples", type=int, default=10000)

    p = sub.add_parser("stats", parents=[common], help="summary table over assembled entries")
    p.add_argument("--group-by", default="synthesis_method", choices=("synthesis_method", "material_category", "source"))
    p.add_argument("--json", action="store_true", help="emit structured records instead of the table")

    p = sub.add_parser("export", parents=[common], help="assemble and export the dataset")
    p.add_argument("--out", required=True, help="output path (one entry per line)")

    p = sub.add_parser("run-all", parents=[common], help="every stage in order, then export")
    p.add_argument("--ids", nargs="*", default=None)
    p.add_argument("--out", required=True)

    return parser


def _cmd_ingest(args) -> int:
    store = DocumentStore(args.store)
    code = EXIT_OK
    for bundle in args.bundles:
        try:
            doc = store.ingest(bundle)
        except IngestError as exc:
            print(f"ingest: FAILED {bundle}: {exc}", file=sys.stderr)
            code = EXIT_STAGE_FAILURE
            continue
        print(f"ingest: {doc.id} ({doc.source}, {len(doc.figures)} figures)")
    return code


def _cmd_agree(args) -> int:
    path = Path(args.scores)
    if not path.is_file():
        raise ConfigError(f"scores file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        a, b = list(payload["a"]), list(payload["b"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"scores file must be JSON with lists 'a' and 'b': {exc}") from exc
    try:
        stats = evaluation.compute_agreement(a, b, resamples=args.resamples, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(json.dumps(evaluation.agreement_to_obj(stats), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_stats(args) -> int:
    pipeline = _build_pipeline(args)
    entries, report = pipeline.assemble()
    summary = summarize([e for e in entries if e.drop.kept], args.group_by)
    if args.json:
        print(json.dumps(summary_to_obj(summary), indent=2, sort_keys=True))
    else:
        print(format_summary_table(summary))
        for note in summary.notes:
            print(f"note: {note}")
    return _report_outcome("stats", report) if report.failures else EXIT_OK


def _cmd_export(args) -> int:
    pipeline = _build_pipeline(args)
    entries, report = pipeline.assemble()
    export_report = export_dataset(entries, args.out)
    print(json.dumps(export_report.to_obj(), indent=2, sort_keys=True))
    return _report_outcome("export", report)


def _cmd_run_all(args) -> int:
    pipeline = _build_pipeline(args)
    _entries, export_report, report = pipeline.run_all(args.ids, export_path=args.out)
    if export_report is not None:
        print(json.dumps(export_report.to_obj(), indent=2, sort_keys=True))
    return _report_outcome("run-all", report)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    try:
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "agree":
            return _cmd_agree(args)
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command == "export":
            return _cmd_export(args)
        if args.command == "run-all":
            return _cmd_run_all(args)
        pipeline = _build_pipeline(args)
        runner = {
            "filter": pipeline.run_filter,
            "extract-materials": pipeline.run_materials,
            "extract-synthesis": pipeline.run_synthesis,
            "digitize": pipeline.run_digitize,
            "judge": pipeline.run_judge,
        }[args.command]
        return _report_outcome(args.command, runner(args.ids))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        # missing gateway for the requested stage is a configuration problem
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
