"""Command-line entry points, driven through click's test runner."""

from __future__ import annotations

import json
import socket

import pytest
import yaml
from click.testing import CliRunner

from hvacqa.cli import main

Q_OK = "What is the temperature in my room right now?"


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, runner):
    out = tmp_path_factory.mktemp("cli-data") / "demo"
    result = runner.invoke(main, [
        "gen-data", "--rooms", "2", "--days", "14", "--null-rate", "0.02",
        "--seed", "5", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_gen_data_writes_the_whole_bundle(runner, data_dir):
    for name in ("readings.csv", "manifest.json", "qa_items.json",
                 "metadata_resident.yaml", "metadata_manager.yaml",
                 "service_config.yaml"):
        assert (data_dir / name).exists(), name
    assert (data_dir / "fixtures" / "full" / "q01.key").exists()
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["rooms"] == 2 and manifest["seed"] == 5
    config = yaml.safe_load((data_dir / "service_config.yaml").read_text())
    assert config["backends"]["planner"]["kind"] == "scripted"
    assert config["now"] == manifest["now"]


def test_gen_data_reports_what_it_wrote(runner, tmp_path):
    out = tmp_path / "tiny"
    result = runner.invoke(main, ["gen-data", "--rooms", "2", "--days", "14",
                                  "--out", str(out)])
    assert result.exit_code == 0
    assert "csv_sha256:" in result.output
    assert f"manifest: {out}/manifest.json" in result.output


def test_gen_data_rejects_out_of_range_specs(runner, tmp_path):
    result = runner.invoke(main, ["gen-data", "--days", "3",
                                  "--out", str(tmp_path / "x")])
    assert result.exit_code == 1
    assert "SpecInvalid" in result.output


def test_ingest_reports_rows_and_hash(runner, data_dir):
    result = runner.invoke(main, ["ingest", str(data_dir / "readings.csv")])
    assert result.exit_code == 0
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert f"rows: {manifest['row_count']}" in result.output
    assert "rooms: room101, room102" in result.output
    assert "content_hash: " in result.output


def test_ingest_rejects_malformed_files(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("room_id,ts,roomtemp\nroom101,not-a-time,21\n")
    result = runner.invoke(main, ["ingest", str(bad)])
    assert result.exit_code == 1
    assert "MalformedRow" in result.output

    headerless = tmp_path / "headerless.csv"
    headerless.write_text("a,b\n1,2\n")
    result = runner.invoke(main, ["ingest", str(headerless)])
    assert result.exit_code == 1
    assert "room_id" in result.output

    result = runner.invoke(main, ["ingest", str(tmp_path / "absent.csv")])
    assert result.exit_code == 2


def test_ask_answers_on_stdout_and_status_on_stderr(runner, data_dir):
    config = str(data_dir / "service_config.yaml")
    result = runner.invoke(main, ["ask", Q_OK, "--config", config])
    assert result.exit_code == 0
    assert result.stdout.startswith("Here is the latest temperature reading")
    assert "[status: ok  trace: " in result.stderr


def test_ask_prints_the_trace_when_asked(runner, data_dir):
    config = str(data_dir / "service_config.yaml")
    result = runner.invoke(main, ["ask", Q_OK, "--config", config, "--trace"])
    assert result.exit_code == 0
    _, _, tail = result.stdout.partition("--- trace ---\n")
    trace = json.loads(tail)
    assert [s["name"] for s in trace["stages"]] == ["plan", "query",
                                                    "process", "respond"]


def test_ask_supports_ablations_and_rejects_unknown_ones(runner, data_dir):
    config = str(data_dir / "service_config.yaml")
    ok = runner.invoke(main, ["ask", Q_OK, "--config", config,
                              "--ablation", "w/o Thinking"])
    assert ok.exit_code == 0
    bad = runner.invoke(main, ["ask", Q_OK, "--config", config,
                               "--ablation", "without telepathy"])
    assert bad.exit_code == 1
    assert "UnknownFlag" in bad.output


def test_eval_text_report(runner, data_dir):
    result = runner.invoke(main, [
        "eval", "--suite", str(data_dir / "manifest.json"),
        "--configs", "full,w/o Thinking"])
    assert result.exit_code == 0, result.output
    assert "full" in result.stdout
    assert "w/o Thinking" in result.stdout
    assert "items: 20" in result.stdout


def test_eval_json_report_with_judge_and_composed_flags(runner, data_dir,
                                                        tmp_path):
    out = tmp_path / "report.json"
    result = runner.invoke(main, [
        "eval", "--suite", str(data_dir / "manifest.json"),
        "--configs", "full,mt+expect", "--judge", "--format", "json",
        "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert set(report["configs"]) == {"full", "w/o M&T + w/o Expect"}
    full = report["configs"]["full"]
    assert full["mean_exec_accuracy"] == 1.0
    assert full["mean_truthfulness"] == 5.0
    assert json.loads(out.read_text()) == report


def test_eval_requires_at_least_one_config(runner, data_dir):
    result = runner.invoke(main, [
        "eval", "--suite", str(data_dir / "manifest.json"), "--configs", " , "])
    assert result.exit_code == 2
    assert "no configurations" in result.output


def test_usage_errors_exit_two(runner):
    assert runner.invoke(main, ["gen-data"]).exit_code == 2
    assert runner.invoke(main, ["ask", "hi"]).exit_code == 2
    assert runner.invoke(main, ["eval"]).exit_code == 2


def test_serve_surfaces_bind_failures(runner, data_dir):
    squatter = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    squatter.bind(("127.0.0.1", 0))
    port = squatter.getsockname()[1]
    config_doc = yaml.safe_load(
        (data_dir / "service_config.yaml").read_text())
    config_doc["listen"] = f"127.0.0.1:{port}"
    blocked = data_dir / "blocked_config.yaml"
    blocked.write_text(yaml.safe_dump(config_doc))
    try:
        result = runner.invoke(main, ["serve", "--config", str(blocked)])
    finally:
        squatter.close()
    assert result.exit_code == 1
    assert "BindFailure" in result.output
