"""Command line entry points.

Exit codes: 0 success, 1 operational failure (bad corpus, unreachable
provider, failed validation), 2 usage errors (argparse's own convention).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .conversation import ConversationEngine, EngineConfig, LlmComposer, TemplateComposer, trail_to_jsonl
from .errors import EmptyLibrary, IndexFormatError, ProviderError, TriageError
from .evalharness import (
    EvalReport,
    OfflineGenerationProvider,
    STYLE_BRIEF,
    STYLE_DETAILED,
    emit_report,
    eval_navigation,
    eval_retrieval,
    generate_opening_statements,
    generate_responses,
    read_opening_records,
    read_response_records,
    write_records,
)
from .flowcharts import Sex, enumerate_paths, load_library, validate
from .gateway import (
    HashEmbedder,
    HttpTextProvider,
    ProviderConfig,
    ProviderEmbedder,
    provider_configured,
)
from .interpretation import LlmClassifier, RuleBasedClassifier
from .retrieval import (
    ArgmaxSelector,
    Demographics,
    LlmSelector,
    Query,
    build_index,
    load_index,
    save_index,
    search,
)
from .service import FileSessionStore, MemorySessionStore, create_app

PROG = "triageflow"


def _err(message: str) -> None:
    print(f"{PROG}: {message}", file=sys.stderr)


def _load_library_or_die(directory: str):
    try:
        return load_library(directory)
    except (NotADirectoryError, EmptyLibrary, OSError) as exc:
        _err(str(exc))
        raise SystemExit(1)


class _Stack:
    """Everything the engine needs, resolved from CLI flags once."""

    def __init__(self, args: argparse.Namespace, library) -> None:
        self.provider = None
        self.healthcheck = None
        if getattr(args, "provider", False):
            try:
                config = ProviderConfig.from_sources(getattr(args, "config", None))
            except TriageError as exc:
                _err(str(exc))
                raise SystemExit(1)
            self.provider = HttpTextProvider(config)
            self.healthcheck = self.provider.healthcheck
            self.selector = LlmSelector(self.provider)
            self.classifier = LlmClassifier(self.provider)
            self.composer = LlmComposer(self.provider)
        else:
            self.selector = ArgmaxSelector()
            self.classifier = RuleBasedClassifier()
            self.composer = TemplateComposer()
        if getattr(args, "provider_embeddings", False):
            if self.provider is None:
                _err("--provider-embeddings requires --provider")
                raise SystemExit(1)
            self.embedder = ProviderEmbedder(self.provider)
        else:
            self.embedder = HashEmbedder()
        self.library = library

    def index(self, index_path: str | None):
        if index_path:
            try:
                return load_index(index_path, expected_embedder_id=self.embedder.embedder_id)
            except (IndexFormatError, OSError) as exc:
                _err(str(exc))
                raise SystemExit(1)
        return build_index(self.library, self.embedder)

    def engine(self, index_path: str | None = None) -> ConversationEngine:
        return ConversationEngine(
            library=self.library,
            index=self.index(index_path),
            embedder=self.embedder,
            selector=self.selector,
            classifier=self.classifier,
            composer=self.composer,
        )


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_validate(args: argparse.Namespace) -> int:
    library, report = _load_library_or_die(args.charts_dir)
    failures = 0
    for issue in report.excluded:
        failures += 1
        label = issue.chart_id or issue.source
        print(f"{label}: EXCLUDED")
        for problem in issue.problems:
            print(f"  {problem}")
    for chart in library:
        result = validate(chart, library=library)
        status = "ok" if result.ok else "FAIL"
        print(f"{chart.id}: {status} ({chart.name})")
        for finding in result.errors:
            print(f"  error: {finding}")
        for finding in result.warnings:
            print(f"  warning: {finding}")
        if not result.ok:
            failures += 1
    for warning in report.warnings:
        print(f"warning: {warning}")
    print(f"{len(library)} usable charts, {len(report.excluded)} excluded")
    return 1 if failures else 0


def _cmd_paths(args: argparse.Namespace) -> int:
    library, _ = _load_library_or_die(args.charts_dir)
    chart_ids = [args.chart] if args.chart else library.ids()
    total = 0
    for chart_id in chart_ids:
        try:
            chart = library.get(chart_id)
        except KeyError:
            _err(f"unknown flowchart {chart_id!r}")
            return 1
        paths = enumerate_paths(chart)
        total += len(paths)
        print(f"{chart.id}: {len(paths)} paths")
        if args.verbose:
            for trace in paths:
                print(f"  {trace.describe()}")
    print(f"total: {total} paths in {len(chart_ids)} charts")
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    library, _ = _load_library_or_die(args.charts_dir)
    stack = _Stack(args, library)
    index = build_index(library, stack.embedder)
    save_index(index, args.output)
    print(f"indexed {len(index)} charts -> {args.output} ({index.embedder_id})")
    return 0


def _parse_demographics_args(args: argparse.Namespace) -> Demographics | None:
    given = [args.sex, args.age, args.age_unit]
    if not any(v is not None for v in given):
        return None
    if not all(v is not None for v in given):
        _err("--sex, --age and --age-unit must be given together")
        raise SystemExit(2)
    try:
        return Demographics(Sex(args.sex), args.age, args.age_unit)
    except (ValueError, TriageError) as exc:
        _err(str(exc))
        raise SystemExit(2)


def _cmd_retrieve(args: argparse.Namespace) -> int:
    library, _ = _load_library_or_die(args.charts_dir)
    stack = _Stack(args, library)
    demographics = _parse_demographics_args(args)
    if demographics is None:
        _err("retrieve needs --sex, --age and --age-unit")
        raise SystemExit(2)
    index = stack.index(args.index)
    query = Query(demographics, args.text)
    results = search(
        index,
        query,
        args.n,
        stack.embedder,
        library=library,
        applicability_filter=not args.no_filter,
    )
    if not results:
        print("no applicable flowcharts")
        return 0
    for rank, candidate in enumerate(results, 1):
        score = f"{candidate.score:.4f}" if candidate.score is not None else "-"
        print(f"{rank}. {candidate.flowchart_id} ({score}) {candidate.name or ''}".rstrip())
    return 0


def _read_chat_line(prompt: str) -> str | None:
    if sys.stdin.isatty():
        try:
            return input(prompt)
        except EOFError:
            return None
    line = sys.stdin.readline()
    if not line:
        return None
    text = line.rstrip("\n")
    print(f"{prompt}{text}")
    return text


def _cmd_chat(args: argparse.Namespace) -> int:
    library, _ = _load_library_or_die(args.charts_dir)
    stack = _Stack(args, library)
    engine = stack.engine(args.index)
    demographics = _parse_demographics_args(args)
    session = engine.start_session(demographics)
    print(f"nurse> {session.last_reply}")
    while not session.closed:
        text = _read_chat_line("you> ")
        if text is None:
            print("(end of input)")
            break
        if not text.strip():
            continue
        try:
            result = engine.submit_message(session, text)
        except (ProviderError, TriageError) as exc:
            _err(str(exc))
            return 1
        print(f"nurse> {result.reply}")
    print(f"[phase: {session.phase.name}]")
    if args.trail and session.trail:
        sys.stdout.write(trail_to_jsonl(session.trail))
    return 0


def _generation_provider(args: argparse.Namespace):
    if args.stub:
        return OfflineGenerationProvider(), "stub"
    if not provider_configured():
        _err("eval generation needs a configured provider; pass --stub for the offline generator")
        raise SystemExit(1)
    try:
        config = ProviderConfig.from_sources(getattr(args, "config", None))
    except TriageError as exc:
        _err(str(exc))
        raise SystemExit(1)
    return HttpTextProvider(config), config.model


def _cmd_eval_generate(args: argparse.Namespace) -> int:
    library, _ = _load_library_or_die(args.charts_dir)
    provider, default_tag = _generation_provider(args)
    generator = args.generator or default_tag
    charts = args.only or None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []
    openings = []
    for style in (STYLE_BRIEF, STYLE_DETAILED):
        records, warns = generate_opening_statements(
            library, provider, args.per_chart, style, generator, charts=charts
        )
        openings.extend(records)
        warnings.extend(warns)
    responses, warns = generate_responses(
        library, provider, args.per_cell, generator, charts=charts
    )
    warnings.extend(warns)
    write_records(out / "openings.jsonl", openings)
    write_records(out / "responses.jsonl", responses)
    for warning in warnings:
        _err(f"warning: {warning}")
    print(f"wrote {len(openings)} opening statements and {len(responses)} responses to {out}")
    return 0


def _cmd_eval_run(args: argparse.Namespace) -> int:
    library, _ = _load_library_or_die(args.charts_dir)
    stack = _Stack(args, library)
    report = EvalReport(meta={})
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if args.openings:
        records = read_opening_records(args.openings)
        index = stack.index(args.index)
        try:
            report.retrieval = eval_retrieval(
                records, index, stack.embedder, library, selector=stack.selector, modes=modes
            )
        except TriageError as exc:
            _err(str(exc))
            return 1
        report.meta["opening_records"] = len(records)
    if args.responses:
        records = read_response_records(args.responses)
        report.navigation = eval_navigation(records, stack.classifier)
        report.meta["response_records"] = len(records)
    if report.retrieval is None and report.navigation is None:
        _err("nothing to evaluate; pass --openings and/or --responses")
        raise SystemExit(2)
    json_path, csv_path = emit_report(report, args.out)
    if report.retrieval is not None:
        for metric, value in sorted(report.retrieval.pooled.items()):
            if value is not None:
                print(f"retrieval {metric} (pooled): {value:.4f}")
    if report.navigation is not None and report.navigation.pooled_acceptable is not None:
        print(f"navigation acceptable share (pooled): {report.navigation.pooled_acceptable:.4f}")
        if report.navigation.excluded_total:
            print(f"navigation excluded records: {report.navigation.excluded_total}")
    print(f"report written to {json_path} and {csv_path}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    charts_dir = args.charts_dir or os.environ.get("TRIAGE_LIBRARY_DIR")
    if not charts_dir:
        _err("serve needs a charts directory (argument or TRIAGE_LIBRARY_DIR)")
        raise SystemExit(2)
    library, report = _load_library_or_die(charts_dir)
    for issue in report.excluded:
        _err(f"excluded {issue.chart_id or issue.source}: {'; '.join(issue.problems)}")
    stack = _Stack(args, library)
    engine = stack.engine(args.index)
    store = FileSessionStore(args.state_dir) if args.state_dir else MemorySessionStore()
    app = create_app(engine, store=store, healthcheck=stack.healthcheck)
    listen = os.environ.get("TRIAGE_LISTEN_ADDR", "127.0.0.1:8080")
    env_host, _, port_text = listen.rpartition(":")
    host = args.host or env_host or "127.0.0.1"
    if args.port is not None:
        port = args.port
    else:
        try:
            port = int(port_text)
        except ValueError:
            _err(f"TRIAGE_LISTEN_ADDR must look like host:port, got {listen!r}")
            raise SystemExit(2)
    print(f"serving {len(library)} flowcharts on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_stack_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--provider",
        action="store_true",
        help="use the configured text provider for selection, classification and replies",
    )
    parser.add_argument(
        "--provider-embeddings",
        action="store_true",
        help="embed with the provider instead of the built-in hash embedder",
    )
    parser.add_argument("--config", help="provider config file (environment wins)")
    parser.add_argument("--index", help="prebuilt retrieval index file")


def _add_demographic_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sex", choices=["female", "male"])
    parser.add_argument("--age", type=int)
    parser.add_argument("--age-unit", choices=["years", "months"], dest="age_unit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Flowchart-guided self-triage: validation, retrieval, chat, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate every flowchart in a directory")
    p.add_argument("charts_dir")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("paths", help="enumerate root-to-terminal paths")
    p.add_argument("charts_dir")
    p.add_argument("--chart", help="single flowchart id")
    p.add_argument("-v", "--verbose", action="store_true", help="print each path")
    p.set_defaults(func=_cmd_paths)

    p = sub.add_parser("index", help="build and save a retrieval index")
    p.add_argument("charts_dir")
    p.add_argument("-o", "--output", required=True)
    _add_stack_flags(p)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("retrieve", help="rank flowcharts for a concern")
    p.add_argument("charts_dir")
    p.add_argument("--text", required=True, help="the patient's concern")
    p.add_argument("-n", type=int, default=5)
    p.add_argument("--no-filter", action="store_true", help="skip the applicability filter")
    _add_demographic_flags(p)
    _add_stack_flags(p)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("chat", help="interactive triage conversation")
    p.add_argument("charts_dir")
    p.add_argument("--trail", action="store_true", help="print the audit trail at the end")
    _add_demographic_flags(p)
    _add_stack_flags(p)
    p.set_defaults(func=_cmd_chat)

    p = sub.add_parser("eval-generate", help="generate labelled evaluation datasets")
    p.add_argument("charts_dir")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stub", action="store_true", help="use the offline deterministic generator")
    p.add_argument("--per-chart", type=int, default=5, dest="per_chart")
    p.add_argument("--per-cell", type=int, default=5, dest="per_cell")
    p.add_argument("--only", nargs="*", help="restrict to these flowchart ids")
    p.add_argument("--generator", help="generator tag recorded on every record")
    p.add_argument("--config", help="provider config file (environment wins)")
    p.set_defaults(func=_cmd_eval_generate)

    p = sub.add_parser("eval-run", help="score datasets and write a report")
    p.add_argument("charts_dir")
    p.add_argument("--openings", help="opening statements JSONL")
    p.add_argument("--responses", help="patient responses JSONL")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--modes", default="sim,agent", help="retrieval modes (sim,agent,llm_only)")
    _add_stack_flags(p)
    p.set_defaults(func=_cmd_eval_run)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("charts_dir", nargs="?", help="defaults to TRIAGE_LIBRARY_DIR")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--state-dir", dest="state_dir", help="persist session snapshots here")
    _add_stack_flags(p)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except TriageError as exc:
        _err(str(exc))
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
