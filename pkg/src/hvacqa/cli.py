"""Command-line entry points: ingest, gen-data, ask, eval, serve.

`ask` and `serve` run the exact same Pipeline object built from the same
config loader, so a question asked over HTTP and one asked here produce
identical traces modulo ids and clock readings.
"""

from __future__ import annotations

import csv as csv_mod
import json
import sys
from pathlib import Path

import click
import yaml

from .config import Engine, load_config
from .context import load_metadata
from .dataset import DatasetSpec, generate_dataset
from .errors import HvacQaError
from .gateway import EchoBackend, ScriptedBackend, ScriptedJudgeBackend
from .harness import load_items, render_report, run_suite
from .orchestrator import FULL, configure_ablation
from .store import ReadingStore, parse_ts


def _operational(exc: HvacQaError) -> click.ClickException:
    wrapped = click.ClickException(f"{type(exc).__name__}: {exc}")
    wrapped.exit_code = 1
    return wrapped


@click.group()
def main() -> None:
    """Telemetry question answering over an LLM-planned retrieval pipeline."""


@main.command()
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
def ingest(csv_path: str) -> None:
    """Validate and load a readings CSV, reporting rows and content hash."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        header = next(csv_mod.reader(fh), None)
    if not header or header[:2] != ["room_id", "ts"] or len(header) < 3:
        raise click.ClickException(
            "CSV header must start with room_id, ts and name at least one "
            "modality column")
    try:
        store = ReadingStore(header[2:])
        count = store.ingest_csv(csv_path)
    except HvacQaError as exc:
        raise _operational(exc) from None
    click.echo(f"rows: {count}")
    click.echo(f"rooms: {', '.join(store.rooms())}")
    click.echo(f"content_hash: {store.content_hash()}")


@main.command(name="gen-data")
@click.option("--rooms", default=3, show_default=True, type=int)
@click.option("--days", default=16, show_default=True, type=int)
@click.option("--null-rate", default=0.02, show_default=True, type=float)
@click.option("--seed", default=11, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def gen_data(rooms: int, days: int, null_rate: float, seed: int, out: str) -> None:
    """Write a seeded synthetic dataset: CSV, metadata, QA suite, fixtures."""
    try:
        spec = DatasetSpec(rooms=rooms, days=days, null_rate=null_rate, seed=seed)
        manifest = generate_dataset(spec, out)
    except HvacQaError as exc:
        raise _operational(exc) from None
    _write_demo_config(Path(out), manifest)
    click.echo(f"wrote {manifest['row_count']} rows to {out}/{manifest['csv']}")
    click.echo(f"csv_sha256: {manifest['csv_sha256']}")
    click.echo(f"manifest: {out}/manifest.json")
    click.echo(f"service config: {out}/service_config.yaml")


def _write_demo_config(out: Path, manifest: dict) -> None:
    """Ready-to-serve config next to the generated data, offline backends."""
    doc = {
        "store": {"csv": manifest["csv"],
                  "modalities": list(manifest["modalities"])},
        "metadata": dict(manifest["metadata"]),
        "backends": {
            "planner": {"kind": "scripted", "root": manifest["fixtures"]},
            "responder": {"kind": "echo"},
            "judges": [{"kind": "scripted"}],
        },
        "trace_dir": "traces",
        "listen": "127.0.0.1:8787",
        "in_flight_cap": 4,
        "now": manifest["now"],
    }
    (out / "service_config.yaml").write_text(
        yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


@main.command()
@click.argument("question")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--persona", default="resident", show_default=True)
@click.option("--ablation", default=None,
              help="Degraded pipeline variant, e.g. 'w/o Thinking'.")
@click.option("--trace", "show_trace", is_flag=True,
              help="Print the full trace JSON after the answer.")
def ask(question: str, config_path: str, persona: str, ablation: str | None,
        show_trace: bool) -> None:
    """Answer one question through the configured pipeline."""
    try:
        engine = Engine(load_config(config_path))
        meta = engine.metadata_for(persona)
        ab = configure_ablation(ablation) if ablation else FULL
        answer, trace = engine.pipeline.handle(question, meta, ab)
    except HvacQaError as exc:
        raise _operational(exc) from None
    click.echo(answer.text)
    click.echo(f"[status: {answer.status}  trace: {answer.trace_ref}]", err=True)
    if show_trace:
        click.echo("--- trace ---")
        click.echo(json.dumps(trace.to_dict(), indent=2))


@main.command(name="eval")
@click.option("--suite", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Path to a dataset manifest.json.")
@click.option("--configs", default="full", show_default=True,
              help="Comma-separated configs; combine flags with '+', "
                   "e.g. 'full,w/o Thinking,mt+expect'.")
@click.option("--judge/--no-judge", default=False, show_default=True,
              help="Score answers with the scripted judge.")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False),
              help="Write the machine-readable report JSON here.")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]),
              default="text", show_default=True)
def eval_cmd(suite: str, configs: str, judge: bool, out_path: str | None,
             fmt: str) -> None:
    """Run the QA suite against one or more pipeline configurations."""
    suite_path = Path(suite)
    with open(suite_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = suite_path.parent
    try:
        store = ReadingStore(list(manifest["modalities"]))
        store.ingest_csv(base / manifest["csv"])
        items = load_items(base / manifest["qa_items"])
        now = parse_ts(manifest["now"])
        metadata = {
            persona: load_metadata(base / rel, schema=list(manifest["modalities"]),
                                   rooms=store.rooms()).with_now(now)
            for persona, rel in manifest["metadata"].items()
        }
        config_list = []
        for part in configs.split(","):
            part = part.strip()
            if not part:
                continue
            flags = [p.strip() for p in part.split("+")]
            config_list.append(configure_ablation(flags))
        if not config_list:
            raise click.UsageError("--configs named no configurations")
        report = run_suite(
            items, config_list,
            store=store, metadata_by_persona=metadata,
            planner_backend=ScriptedBackend(base / manifest["fixtures"]),
            responder_backend=EchoBackend(),
            judges=(ScriptedJudgeBackend(),) if judge else (),
        )
    except HvacQaError as exc:
        raise _operational(exc) from None
    if out_path:
        Path(out_path).write_text(json.dumps(report, indent=2) + "\n",
                                  encoding="utf-8")
        click.echo(f"report written to {out_path}", err=True)
    if fmt == "json":
        click.echo(json.dumps(report, indent=2))
    else:
        click.echo(render_report(report))


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def serve(config_path: str) -> None:
    """Serve the HTTP API described by the config file."""
    from .service import serve_from_file

    try:
        serve_from_file(config_path)
    except HvacQaError as exc:
        raise _operational(exc) from None


if __name__ == "__main__":
    sys.exit(main())
