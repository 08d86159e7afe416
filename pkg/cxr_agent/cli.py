#!/usr/bin/env python3
"""
Command Line Interface for CXRAgent
Runs the extraction, reasoning, verification and evaluation stages over
newline-delimited JSON artifacts, plus the deterministic mock endpoint.
"""

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError
from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.status import Status
from rich.table import Table

from .ablation import (
    DEFAULT_CONFIGURATIONS,
    build_feature_matrix,
    parse_configuration,
    run_ablation,
)
from .agent import ContextVariant, ReasoningAgent, ReasoningTrace
from .config import ConfigManager, LoggingConfig, PipelineConfig, ReasoningMode
from .context import load_vocabulary
from .exceptions import (
    CxrAgentError,
    EndpointUnreachable,
    IngestError,
    MockServerError,
    StudyFailure,
)
from .ingest import EmbeddingTable, load_embeddings, read_chexpert, read_manifest
from .metrics import agentic_metrics, metrics_table, quality_row, step_table
from .mock_server import mock_endpoint
from .raiguard import batch_rai_report, load_packs, verify
from .synthetic import write_openi_fixture, write_script
from .tools import FeatureRecord, extract_dataset

logger = logging.getLogger(__name__)

# Initialize rich console
console = Console()

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2

FEATURES_FILE = "features.jsonl"
VERIFICATION_FILE = "verification.jsonl"
RAI_SUMMARY_FILE = "rai_summary.json"


class CommandOutcome(BaseModel):
    """Result of one subcommand; exit code 0 only when nothing failed."""

    model_config = ConfigDict(frozen=True)

    exit_code: int
    summary: str
    artifacts_written: Tuple[str, ...] = ()


def _fatal(summary: str) -> CommandOutcome:
    return CommandOutcome(exit_code=EXIT_FATAL, summary=summary)


def setup_logging(cfg: LoggingConfig) -> None:
    """Rich console logging, plus a plain file handler when configured."""
    handlers: List[logging.Handler] = [
        RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    ]
    if cfg.file:
        file_handler = logging.FileHandler(cfg.file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(cfg.format))
        handlers.append(file_handler)
    logging.basicConfig(
        level=cfg.level.upper(), format="%(message)s", handlers=handlers, force=True
    )


def write_lines_atomic(path: str, lines: Iterable[str]) -> str:
    """Write lines to a temp file beside path, then rename over it."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            for line in lines:
                f.write(line.rstrip("\n") + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_text_atomic(path: str, text: str) -> str:
    return write_lines_atomic(path, [text])


def _read_jsonl(
    path: str, parse: Callable[[str], BaseModel]
) -> Tuple[List[BaseModel], int]:
    """Parse every non-blank line; malformed lines are counted and logged."""
    items, malformed = [], 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                items.append(parse(line))
            except (ValidationError, ValueError) as e:
                malformed += 1
                logger.warning(f"{path}:{line_no}: malformed line skipped ({e.__class__.__name__})")
    return items, malformed


def read_features(path: str) -> Tuple[List[FeatureRecord], int]:
    return _read_jsonl(path, FeatureRecord.model_validate_json)


def read_traces(path: str) -> Tuple[List[ReasoningTrace], int]:
    return _read_jsonl(path, ReasoningTrace.model_validate_json)


def trace_file_name(mode: ReasoningMode, variant: Optional[ContextVariant]) -> str:
    if variant is not None:
        return f"traces_{variant.value}.jsonl"
    return f"traces_{mode.value}.jsonl"


# Commands --------------------------------------------------------------------


def cmd_extract(
    config: PipelineConfig,
    dataset: str,
    out: str,
    tensor_dir: Optional[str] = None,
    chexpert_csv: Optional[str] = None,
) -> CommandOutcome:
    """Per-study feature records as newline-delimited JSON."""
    try:
        if chexpert_csv:
            manifest = read_chexpert(chexpert_csv, dataset)
        else:
            manifest = read_manifest(dataset)
        vocab = load_vocabulary(config.vocabulary_path)
    except CxrAgentError as e:
        return _fatal(f"Cannot load dataset: {e}")
    if not manifest.entries:
        return _fatal(f"Dataset {dataset} lists no studies")

    if tensor_dir is None and os.path.isdir(os.path.join(dataset, "tensors")):
        tensor_dir = os.path.join(dataset, "tensors")

    records, failures = [], 0
    with Status(f"[bold green]Extracting {len(manifest.entries)} studies...", spinner="dots"):
        for result in extract_dataset(manifest, config, vocab, tensor_dir):
            if isinstance(result, StudyFailure):
                failures += 1
                logger.warning(str(result))
            else:
                records.append(result.to_json())

    path = write_lines_atomic(os.path.join(out, FEATURES_FILE), records)
    return CommandOutcome(
        exit_code=EXIT_PARTIAL if failures else EXIT_OK,
        summary=f"{len(records)} feature records written, {failures} studies failed",
        artifacts_written=(path,),
    )


def cmd_reason(
    config: PipelineConfig,
    features: str,
    out: str,
    mode: Optional[ReasoningMode] = None,
    variant: Optional[ContextVariant] = None,
    limit: Optional[int] = None,
    api_key: Optional[str] = None,
) -> CommandOutcome:
    """Reasoning traces for each feature record."""
    if not os.path.isfile(features):
        return _fatal(f"Feature file not found: {features}")
    if mode is not None:
        config = config.model_copy(update={"mode": mode})
    records, malformed = read_features(features)
    if limit is not None:
        records = records[:limit]
    if not records:
        return _fatal(f"No feature records in {features}")

    items, failures = [], malformed
    for rec in records:
        try:
            items.append((rec.to_study(), rec.feature_card()))
        except CxrAgentError as e:
            failures += 1
            logger.warning(f"Study {rec.study_id} skipped: {e}")

    agent = ReasoningAgent(config, api_key=api_key)
    label = variant.value if variant is not None else config.mode.value
    with Status(f"[bold green]Reasoning over {len(items)} studies ({label})...", spinner="dots"):
        results = agent.run_batch(items, variant)

    traces = [r for r in results if isinstance(r, ReasoningTrace)]
    failed = [r for r in results if isinstance(r, StudyFailure)]
    path = write_lines_atomic(
        os.path.join(out, trace_file_name(config.mode, variant)),
        (t.model_dump_json() for t in traces),
    )
    summary = f"{len(traces)} traces written, {len(failed) + failures} studies failed"
    if any(isinstance(f.cause, EndpointUnreachable) for f in failed):
        return CommandOutcome(
            exit_code=EXIT_FATAL,
            summary=f"Endpoint unreachable at {config.endpoint.base_url}; {summary}",
            artifacts_written=(path,),
        )
    return CommandOutcome(
        exit_code=EXIT_PARTIAL if failed or failures else EXIT_OK,
        summary=summary,
        artifacts_written=(path,),
    )


def cmd_verify(config: PipelineConfig, traces_path: str, out: str) -> CommandOutcome:
    """Verification report per trace plus the batch aggregate."""
    if not os.path.isfile(traces_path):
        return _fatal(f"Trace file not found: {traces_path}")
    try:
        packs = load_packs(config.packs)
    except CxrAgentError as e:
        return _fatal(str(e))
    traces, malformed = read_traces(traces_path)
    if not traces:
        return _fatal(f"No readable traces in {traces_path} ({malformed} malformed)")

    reports = [verify(t.final.response, packs) for t in traces]
    lines = [
        json.dumps({"study_id": t.study_id, "report": r.model_dump(mode="json")}, sort_keys=True)
        for t, r in zip(traces, reports)
    ]
    summary = batch_rai_report(reports)
    report_path = write_lines_atomic(os.path.join(out, VERIFICATION_FILE), lines)
    summary_path = write_text_atomic(
        os.path.join(out, RAI_SUMMARY_FILE),
        json.dumps({**summary.model_dump(), "malformed_lines": malformed}, indent=2, sort_keys=True),
    )

    table = Table(title="Responsible-AI Summary", box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in summary.model_dump().items():
        table.add_row(key, f"{value:.2f}" if isinstance(value, float) else str(value))
    console.print(table)

    passed = sum(1 for r in reports if r.passed)
    return CommandOutcome(
        exit_code=EXIT_PARTIAL if malformed else EXIT_OK,
        summary=f"{passed}/{len(reports)} responses passed; {malformed} malformed lines",
        artifacts_written=(report_path, summary_path),
    )


def cmd_ablate(
    config: PipelineConfig,
    features: str,
    out: str,
    embeddings: Optional[str] = None,
    configurations: Optional[Sequence[str]] = None,
    label_name: str = "label",
    fmt: str = "text",
) -> CommandOutcome:
    """Logistic-regression feature ablation over the extracted records."""
    if not os.path.isfile(features):
        return _fatal(f"Feature file not found: {features}")
    records, malformed = read_features(features)

    table_embeddings: Optional[EmbeddingTable] = None
    if embeddings:
        try:
            table_embeddings = load_embeddings(embeddings)
        except IngestError as e:
            logger.warning(f"Text embeddings unavailable, text configurations will fail: {e}")

    try:
        vocab = load_vocabulary(config.vocabulary_path)
        matrix = build_feature_matrix(records, vocab, table_embeddings, label_name)
    except CxrAgentError as e:
        return _fatal(f"Cannot assemble feature matrix: {e}")

    confs = (
        [parse_configuration(c) for c in configurations]
        if configurations
        else list(DEFAULT_CONFIGURATIONS)
    )
    result = run_ablation(matrix, confs, config.train_config(), config.concurrency)

    text_path = write_text_atomic(os.path.join(out, "ablation.txt"), result.to_text())
    json_path = write_text_atomic(
        os.path.join(out, "ablation.json"), result.model_dump_json(indent=2)
    )
    if fmt == "json":
        console.print_json(result.model_dump_json())
    else:
        console.print(Panel(result.to_text(), title="📊 Feature Ablation (AUC)", border_style="blue"))

    return CommandOutcome(
        exit_code=EXIT_PARTIAL if result.failures or malformed else EXIT_OK,
        summary=f"{len(result.rows) - result.failures}/{len(result.rows)} configurations scored",
        artifacts_written=(text_path, json_path),
    )


def cmd_report(
    config: PipelineConfig,
    features: str,
    trace_files: Sequence[str],
    out: str,
    fmt: str = "text",
) -> CommandOutcome:
    """Agentic statistics and quality rows for one or more trace files."""
    if not os.path.isfile(features):
        return _fatal(f"Feature file not found: {features}")
    missing = [p for p in trace_files if not os.path.isfile(p)]
    if missing:
        return _fatal(f"Trace file(s) not found: {', '.join(missing)}")
    try:
        vocab = load_vocabulary(config.vocabulary_path)
        packs = load_packs(config.packs)
    except CxrAgentError as e:
        return _fatal(str(e))

    records, bad = read_features(features)
    references = {r.study_id: r.report for r in records}

    agentic, rows, sections = {}, [], []
    for path in trace_files:
        traces, malformed = read_traces(path)
        bad += malformed
        if not traces:
            logger.warning(f"No readable traces in {path}")
            continue
        label = (
            traces[0].variant.value
            if traces[0].variant is not None
            else os.path.splitext(os.path.basename(path))[0]
        )
        try:
            metrics = agentic_metrics(traces)
            rows.append(quality_row(label, traces, references, vocab, packs))
        except CxrAgentError as e:
            logger.warning(f"Cannot score {path}: {e}")
            bad += 1
            continue
        agentic[label] = metrics.model_dump(mode="json")
        sections.append(f"== {label} ==\n{step_table(metrics).to_string(index=False)}")

    if not rows:
        return _fatal("No trace file could be scored")

    quality = metrics_table(rows)
    sections.append("== quality ==\n" + quality.to_string(index=False))
    text = "\n\n".join(sections)
    payload = {"agentic": agentic, "quality": [r.model_dump(mode="json") for r in rows]}
    text_path = write_text_atomic(os.path.join(out, "report.txt"), text)
    json_path = write_text_atomic(
        os.path.join(out, "report.json"), json.dumps(payload, indent=2, sort_keys=True)
    )
    if fmt == "json":
        console.print_json(json.dumps(payload))
    else:
        console.print(Panel(text, title="📋 Evaluation Report", border_style="green"))

    return CommandOutcome(
        exit_code=EXIT_PARTIAL if bad else EXIT_OK,
        summary=f"{len(rows)} trace sets scored",
        artifacts_written=(text_path, json_path),
    )


def cmd_synth(out: str, n: int, seed: int) -> CommandOutcome:
    """Deterministic synthetic dataset plus the stepwise mock script."""
    dataset = write_openi_fixture(os.path.join(out, "dataset"), n=n, seed=seed)
    script = write_script(os.path.join(out, "mock_script.json"))
    return CommandOutcome(
        exit_code=EXIT_OK,
        summary=f"Synthetic dataset with {n} studies in {dataset.root}",
        artifacts_written=(dataset.manifest, dataset.embeddings, script),
    )


def cmd_mock_serve(script: str, port: int, duration: Optional[float] = None) -> CommandOutcome:
    """Serve a mock script until interrupted (or for `duration` seconds)."""
    try:
        server = mock_endpoint(script, port)
    except MockServerError as e:
        return _fatal(str(e))
    console.print(
        Panel(
            f"[green]Serving[/green] [blue]{server.base_url}[/blue]\n"
            "[dim]Press Ctrl+C to stop.[/dim]",
            title="🧪 Mock Endpoint",
            border_style="blue",
        )
    )
    try:
        started = time.monotonic()
        while duration is None or time.monotonic() - started < duration:
            time.sleep(0.2)
    except KeyboardInterrupt:
        console.print("[bold yellow]👋 Stopping mock endpoint[/bold yellow]")
    finally:
        server.stop()
    return CommandOutcome(exit_code=EXIT_OK, summary=f"Served {len(server.received)} requests")


def create_sample_config(path: Optional[str] = None) -> CommandOutcome:
    """Create a sample configuration file."""
    path = path or os.path.join(os.getcwd(), "config.toml")
    ConfigManager.create_sample_config(path)
    return CommandOutcome(
        exit_code=EXIT_OK,
        summary=f"Sample configuration created at {path}; set endpoint.base_url",
        artifacts_written=(path,),
    )


def show_config(manager: ConfigManager) -> None:
    config_table = Table(title="⚙️ Current Configuration", box=box.ROUNDED)
    config_table.add_column("Setting", style="cyan", width=20)
    config_table.add_column("Value", style="green")
    for name, value in manager.describe():
        config_table.add_row(name, value)
    console.print(config_table)


def _print_outcome(command: str, outcome: CommandOutcome) -> None:
    if outcome.exit_code == EXIT_FATAL:
        console.print(Panel(f"[red]{outcome.summary}[/red]", title="❌ Error", border_style="red"))
        return
    body = outcome.summary
    if outcome.artifacts_written:
        body += "\n\n" + "\n".join(f"[blue]{p}[/blue]" for p in outcome.artifacts_written)
    title = f"✅ {command}" if outcome.exit_code == EXIT_OK else f"⚠️ {command} (partial)"
    style = "green" if outcome.exit_code == EXIT_OK else "yellow"
    console.print(Panel(body, title=title, border_style=style))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cxr-agent",
        description="CXRAgent - Context-Aligned Chest X-ray Reasoning",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  cxr-agent --out runs synth --n 50                      # Synthetic dataset + mock script
  cxr-agent mock-serve runs/mock_script.json --port 8765
  cxr-agent --out runs extract runs/dataset              # Feature records
  cxr-agent --out runs reason runs/features.jsonl --mode stepwise
  cxr-agent --out runs reason runs/features.jsonl --mode single --variant A1_radiomics
  cxr-agent --out runs verify runs/traces_stepwise.jsonl
  cxr-agent --out runs ablate runs/features.jsonl --embeddings runs/dataset/embeddings.csv
  cxr-agent --out runs report runs/features.jsonl runs/traces_stepwise.jsonl
  cxr-agent create-config                                # Sample config.toml

Configuration:
  CXRAgent reads config.toml (or a .json file) from:
  1. Current directory (./config.toml)
  2. User home directory (~/.cxr_agent/config.toml)
  3. Package directory

  Environment:
  CXR_AGENT_API_KEY   Bearer token for the chat endpoint (name set by endpoint.api_key_env)
  CXR_AGENT_BASE_URL  Endpoint URL when endpoint.base_url is empty or a placeholder

Exit codes: 0 success, 1 some studies failed, 2 fatal error.
        """,
    )
    parser.add_argument("--config", type=str, help="Path to configuration file (default: auto-detect)")
    parser.add_argument("--seed", type=int, help="Seed override (non-negative)")
    parser.add_argument("--out", type=str, default=".", help="Output directory (default: .)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("extract", help="Extract radiomic, XAI and vocabulary features")
    p.add_argument("dataset", help="Dataset root holding manifest.csv (or image root with --chexpert)")
    p.add_argument("--tensors", help="Directory of <study>.acts.xten / <study>.grads.xten files")
    p.add_argument("--chexpert", metavar="CSV", help="Read a CheXpert-style label CSV instead")

    p = sub.add_parser("reason", help="Run the reasoning agent over feature records")
    p.add_argument("features", help="features.jsonl from extract")
    p.add_argument("--mode", choices=["single", "stepwise"], help="Reasoning mode (default: config)")
    p.add_argument(
        "--variant", choices=[v.value for v in ContextVariant], help="Context variant (single mode)"
    )
    p.add_argument("--limit", type=int, help="Only the first N records")
    p.add_argument("--base-url", help="Override endpoint.base_url")

    p = sub.add_parser("verify", help="Verify responsible-AI constraints on traces")
    p.add_argument("traces", help="Trace file from reason")

    p = sub.add_parser("ablate", help="Feature-ablation AUC table")
    p.add_argument("features", help="features.jsonl from extract")
    p.add_argument("--embeddings", help="CSV of study_id,v1,v2,... text embeddings")
    p.add_argument("--configs", nargs="+", help="Configurations such as radiomics+text")
    p.add_argument("--label", default="label", help="Label column (default: label)")
    p.add_argument("--format", choices=["text", "json"], default="text")

    p = sub.add_parser("report", help="Agentic and quality metrics for trace files")
    p.add_argument("features", help="features.jsonl holding the reference reports")
    p.add_argument("traces", nargs="+", help="One or more trace files")
    p.add_argument("--format", choices=["text", "json"], default="text")

    p = sub.add_parser("mock-serve", help="Serve a deterministic mock chat endpoint")
    p.add_argument("script", help="Mock script JSON")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--duration", type=float, help="Stop after this many seconds")

    p = sub.add_parser("synth", help="Write a synthetic dataset and mock script")
    p.add_argument("--n", type=int, default=50, help="Number of studies (default: 50)")

    p = sub.add_parser("create-config", help="Create a sample configuration file")
    p.add_argument("path", nargs="?", help="Target path (default: ./config.toml)")

    sub.add_parser("show-config", help="Show the effective configuration")
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_FATAL

    # Handle config creation first (before loading configuration)
    if args.command == "create-config":
        outcome = create_sample_config(args.path)
        _print_outcome(args.command, outcome)
        return outcome.exit_code

    load_dotenv()
    try:
        manager = ConfigManager(args.config)
        if args.seed is not None and args.seed < 0:
            raise CxrAgentError("--seed must be non-negative")
        config = manager.get_pipeline_config(args.seed)
    except CxrAgentError as e:
        console.print(Panel(f"[red]{e}[/red]", title="❌ Configuration Error", border_style="red"))
        return EXIT_FATAL
    setup_logging(config.logging)

    if args.command == "show-config":
        show_config(manager)
        return EXIT_OK

    try:
        if args.command == "extract":
            outcome = cmd_extract(config, args.dataset, args.out, args.tensors, args.chexpert)
        elif args.command == "reason":
            mode = None
            if args.mode is not None:
                mode = ReasoningMode.STEPWISE if args.mode == "stepwise" else ReasoningMode.SINGLE_SHOT
            variant = ContextVariant(args.variant) if args.variant else None
            if variant is not None and mode is ReasoningMode.STEPWISE:
                parser.error("--variant applies to single mode only")
            if args.base_url:
                endpoint = config.endpoint.model_copy(update={"base_url": args.base_url})
                config = config.model_copy(update={"endpoint": endpoint})
            outcome = cmd_reason(
                config, args.features, args.out, mode, variant, args.limit, manager.get_api_key()
            )
        elif args.command == "verify":
            outcome = cmd_verify(config, args.traces, args.out)
        elif args.command == "ablate":
            outcome = cmd_ablate(
                config, args.features, args.out, args.embeddings, args.configs, args.label, args.format
            )
        elif args.command == "report":
            outcome = cmd_report(config, args.features, args.traces, args.out, args.format)
        elif args.command == "mock-serve":
            outcome = cmd_mock_serve(args.script, args.port, args.duration)
        elif args.command == "synth":
            outcome = cmd_synth(args.out, args.n, config.seed)
        else:
            parser.print_help()
            return EXIT_FATAL
    except CxrAgentError as e:
        outcome = _fatal(str(e))

    _print_outcome(args.command, outcome)
    return outcome.exit_code


def main() -> None:
    """Main CLI entry point."""
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
