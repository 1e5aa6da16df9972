"""Pipeline behavior: ablation flags, statuses, stage records, trace shape."""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone

import pytest

from hvacqa.context import Metadata
from hvacqa.errors import UnknownFlag
from hvacqa.gateway import Completion, EchoBackend
from hvacqa.orchestrator import (
    ABLATION_NAMES,
    FULL,
    STATIC_APOLOGY,
    AblationConfig,
    Pipeline,
    configure_ablation,
    failure_sentence,
)
from hvacqa.errors import (
    BackendUnavailable,
    InternalNull,
    InvalidRange,
    MissingData,
    SqlUnsupported,
    UnknownTaxonomy,
)
from hvacqa.store import ReadingStore, SensorReading

T0 = datetime(2024, 6, 1, tzinfo=timezone.utc)

META = Metadata(
    taxonomy={"my room": "room101", "temperature": "temp"},
    persona="resident",
).with_now(T0 + timedelta(days=1))


def demo_store() -> ReadingStore:
    store = ReadingStore(["temp"])
    for i in range(3):
        store.insert(SensorReading("room101", T0 + timedelta(minutes=i),
                                   {"temp": 20.0 + i}))
    return store


class StubPlanner:
    """Fixed completion sequence; records the params it saw."""

    model = "stub-planner"

    def __init__(self, *texts):
        self.texts = list(texts)
        self.calls = 0
        self.params_seen = []

    def complete(self, prompt, params=None):
        self.params_seen.append(dict(params or {}))
        text = self.texts[min(self.calls, len(self.texts) - 1)]
        self.calls += 1
        if isinstance(text, Exception):
            raise text
        return Completion(text, input_tokens=4, output_tokens=len(text.split()),
                          model=self.model)


class DownBackend:
    model = "down"

    def complete(self, prompt, params=None):
        raise BackendUnavailable("socket closed")


def plan_text(**overrides) -> str:
    doc = {
        "thinking": "read the room window, average it",
        "expectation": {"template": "Average was {avg}.",
                        "auxiliary": [], "format_hints": ""},
        "instructions": [
            {"target": "t", "kind": "query", "spec": {
                "mapping": {},
                "select": ["temperature"],
                "rooms": ["my room"],
                "time_range": {"start": "2024-06-01T00:00:00Z",
                               "end": "2024-06-01T00:05:00Z"},
            }},
            {"target": "avg", "kind": "process", "spec": {
                "op": "mean", "args": [{"var": "t"}],
                "options": {"column": "temperature"},
            }},
        ],
    }
    doc.update(overrides)
    return json.dumps(doc)


def pipeline_with(planner, responder=None, **kwargs) -> Pipeline:
    return Pipeline(demo_store(), planner, responder or EchoBackend(), **kwargs)


# -- ablation flags -------------------------------------------------------------


@pytest.mark.parametrize("raw,name", [
    ("full", "full"),
    ("w/o M&T", "w/o M&T"),
    ("WO mandt", "w/o M&T"),
    ("no-metadata-thinking", "w/o M&T"),
    ("without thinking", "w/o Thinking"),
    ("w/o Expect", "w/o Expect"),
    ("expectation", "w/o Expect"),
    ("w/o QueryExec", "w/o QueryExec"),
    ("no query", "w/o QueryExec"),
    ("w/o Processing", "w/o Processing"),
    ("proc", "w/o Processing"),
    ("w/o Q&P", "w/o Q&P"),
])
def test_configure_ablation_accepts_flag_spellings(raw, name):
    assert configure_ablation([raw]).name == name
    assert configure_ablation(raw).name == name


def test_configure_ablation_switch_effects():
    assert configure_ablation([]) == FULL
    mt = configure_ablation("w/o M&T")
    assert mt.metadata is False and mt.thinking is False
    qp = configure_ablation("w/o Q&P")
    assert qp.query_builder is False and qp.processing is False
    both = configure_ablation("thinking, processing")
    assert both.name == "w/o Thinking + w/o Processing"
    assert both.thinking is False and both.processing is False
    assert both.metadata is True


def test_configure_ablation_rejects_unknown_flags():
    with pytest.raises(UnknownFlag):
        configure_ablation(["w/o Everything"])
    with pytest.raises(UnknownFlag):
        configure_ablation("ablate-the-moon")


def test_fixture_variant_priority():
    assert FULL.fixture_variant == "full"
    assert configure_ablation("w/o QueryExec").fixture_variant == "no-queryexec"
    assert configure_ablation("w/o Q&P").fixture_variant == "no-queryexec"
    assert configure_ablation("w/o M&T").fixture_variant == "no-mt"
    assert configure_ablation("w/o Thinking").fixture_variant == "no-thinking"
    assert configure_ablation("w/o Expect").fixture_variant == "no-expect"
    assert configure_ablation(["mt", "queryexec"]).fixture_variant == "no-queryexec"
    assert configure_ablation(["thinking", "mt"]).fixture_variant == "no-mt"


def test_ablation_names_catalogue():
    assert ABLATION_NAMES == (
        "full", "w/o M&T", "w/o Thinking", "w/o Expect",
        "w/o QueryExec", "w/o Processing", "w/o Q&P")


# -- failure phrasing -----------------------------------------------------------


def test_failure_sentences_name_the_defect_class():
    taxonomy = failure_sentence(UnknownTaxonomy("the pool"))
    assert "'the pool'" in taxonomy and "monitor" in taxonomy
    assert "no recorded data" in failure_sentence(MissingData("x"))
    assert "incomplete" in failure_sentence(InternalNull("x"))
    assert "time range" in failure_sentence(InvalidRange("x"))
    assert "retrieval step" in failure_sentence(SqlUnsupported("x"))
    assert "reliable way" in failure_sentence(BackendUnavailable("x"))


# -- handle: happy path -----------------------------------------------------------


def test_handle_ok_answer_and_stage_records():
    pipeline = pipeline_with(StubPlanner(plan_text()))
    answer, trace = pipeline.handle("average temp?", META)
    assert answer.status == "ok"
    assert answer.text == "Average was 21."
    assert [s.name for s in trace.stages] == ["plan", "query", "process", "respond"]
    assert all(s.ok for s in trace.stages)
    assert trace.stages[1].detail == "1 retrieval instructions"
    assert trace.stages[2].detail == "1 processing instructions"
    assert trace.status == "ok"
    assert trace.answer_text == answer.text
    assert trace.plan["instructions"][0]["target"] == "t"
    assert trace.alignment == {"unbound": [], "unused": []}
    assert trace.residuals == []
    assert trace.failure is None


def test_handle_records_retrieved_cells_sorted():
    pipeline = pipeline_with(StubPlanner(plan_text()))
    _, trace = pipeline.handle("q", META)
    assert trace.retrieved_cells == [
        ["room101", "temp", "2024-06-01T00:00:00Z"],
        ["room101", "temp", "2024-06-01T00:01:00Z"],
        ["room101", "temp", "2024-06-01T00:02:00Z"],
    ]


def test_handle_token_accounting_is_exact():
    pipeline = pipeline_with(StubPlanner(plan_text()))
    _, trace = pipeline.handle("q", META)
    expected = (trace.planner["output_tokens"]
                + trace.responder["input_tokens"]
                + trace.responder["output_tokens"])
    assert trace.total_token_length == expected
    assert trace.tokens_estimated is False


def test_handle_instruction_records_carry_sql_and_rows():
    pipeline = pipeline_with(StubPlanner(plan_text()))
    _, trace = pipeline.handle("q", META)
    query_record = trace.instructions[0]
    assert query_record["kind"] == "query"
    assert query_record["rows"] == 3
    assert query_record["ok"] is True
    assert "temp IS NOT NULL" in query_record["sql"][0]["text"]
    assert query_record["sql"][0]["params"][0] == "room101"
    process_record = trace.instructions[1]
    assert process_record == {
        "target": "avg", "kind": "process", "op": "mean", "ok": True,
        "latency_ms": process_record["latency_ms"]}


def test_handle_env_summary_previews_values():
    pipeline = pipeline_with(StubPlanner(plan_text()))
    _, trace = pipeline.handle("q", META)
    by_name = {entry["name"]: entry for entry in trace.env_summary}
    assert by_name["t"]["kind"] == "table"
    assert by_name["t"]["preview"] == "3 rows (ts, temperature)"
    assert by_name["avg"] == {"name": "avg", "kind": "scalar", "preview": "21"}


# -- handle: refusals -------------------------------------------------------------


def test_handle_planned_refusal_is_refused_verbatim():
    refusal = "I can only answer questions about this building's telemetry."
    planner = StubPlanner(json.dumps({"thinking": "off-domain", "refusal": refusal}))
    answer, trace = pipeline_with(planner).handle("lottery numbers?", META)
    assert answer.status == "refused"
    assert answer.text == refusal
    assert trace.stages[0].detail == "refusal"
    assert trace.stages[1].detail == "skipped (refusal)"
    assert trace.stages[3].detail == "refusal text"


def test_handle_unknown_term_is_refused_with_truthful_sentence():
    doc = json.loads(plan_text())
    doc["instructions"][0]["spec"]["select"] = ["co2 level"]
    answer, trace = pipeline_with(StubPlanner(json.dumps(doc))).handle("co2?", META)
    assert answer.status == "refused"
    assert "'co2 level'" in answer.text
    assert trace.failure.startswith("UnknownTaxonomy")
    assert trace.stages[1].ok is False


# -- handle: partial and failed ----------------------------------------------------


def test_handle_empty_window_yields_partial_with_failure_sentence():
    doc = json.loads(plan_text())
    doc["instructions"][0]["spec"]["time_range"] = {
        "start": "2030-01-01T00:00:00Z", "end": "2030-01-02T00:00:00Z"}
    answer, trace = pipeline_with(StubPlanner(json.dumps(doc))).handle("q", META)
    assert answer.status == "partial"
    assert "What I could retrieve" in answer.text
    assert trace.failure.startswith("MissingData")
    # the query itself succeeded; the mean over zero rows failed
    assert trace.stages[1].ok is True
    assert trace.stages[2].ok is False


def test_handle_planner_transport_failure_degrades_to_partial():
    answer, trace = pipeline_with(DownBackend()).handle("q", META)
    assert answer.status == "partial"
    assert "reliable way" in answer.text
    assert trace.stages[0].ok is False
    assert trace.stages[1].detail == "skipped"
    assert trace.planner is None


def test_handle_unparseable_plan_after_retry_is_partial():
    planner = StubPlanner("garbage ][", "more garbage ][")
    answer, trace = pipeline_with(planner).handle("q", META)
    assert answer.status == "partial"
    assert planner.calls == 2
    assert trace.failure.startswith("PlanUnparseable")


def test_handle_retry_is_recorded_on_the_plan_stage():
    planner = StubPlanner("garbage ][", plan_text())
    answer, trace = pipeline_with(planner).handle("q", META)
    assert answer.status == "ok"
    assert trace.stages[0].retries == 1


def test_handle_responder_down_is_failed_with_static_apology():
    pipeline = pipeline_with(StubPlanner(plan_text()), DownBackend())
    answer, trace = pipeline.handle("q", META)
    assert answer.status == "failed"
    assert answer.text == STATIC_APOLOGY
    assert trace.stages[3].ok is False
    assert trace.stages[3].detail == "static apology"
    assert trace.responder is None


def test_handle_never_raises_even_on_programming_errors():
    pipeline = pipeline_with(StubPlanner(RuntimeError("boom")))
    answer, trace = pipeline.handle("q", META)
    assert answer.status == "failed"
    assert answer.text == STATIC_APOLOGY
    assert trace.failure == "RuntimeError: boom"


def test_handle_unbound_placeholder_is_caught_by_alignment():
    doc = json.loads(plan_text())
    doc["expectation"]["template"] = "Average was {avg} at {unassigned}."
    answer, trace = pipeline_with(StubPlanner(json.dumps(doc))).handle("q", META)
    assert answer.status == "partial"
    assert trace.failure.startswith("PlanInvalid")
    assert trace.alignment["unbound"] == ["unassigned"]


# -- handle: config admission --------------------------------------------------


def sql_plan_text() -> str:
    return json.dumps({
        "thinking": "",
        "expectation": {"template": "{t}", "auxiliary": [], "format_hints": ""},
        "instructions": [{"target": "t", "kind": "sql", "spec": {
            "text": ("SELECT AVG(temp) FROM readings WHERE room_id = ? "
                     "AND temp IS NOT NULL"),
            "params": ["room101"],
        }}],
    })


def test_admission_rejects_raw_sql_under_full_config():
    answer, trace = pipeline_with(StubPlanner(sql_plan_text())).handle("q", META)
    assert answer.status == "partial"
    assert "raw statements are not accepted" in trace.failure


def test_admission_accepts_raw_sql_when_builder_is_off():
    config = configure_ablation("w/o QueryExec")
    answer, trace = pipeline_with(StubPlanner(sql_plan_text())).handle(
        "q", META, config=config)
    assert answer.status == "ok"
    assert answer.text == "21"
    assert trace.config == "w/o QueryExec"


def test_admission_rejects_query_kind_when_builder_is_off():
    config = configure_ablation("w/o QueryExec")
    answer, trace = pipeline_with(StubPlanner(plan_text())).handle(
        "q", META, config=config)
    assert answer.status == "partial"
    assert "query builder is disabled" in trace.failure


def test_admission_rejects_process_kind_when_processing_is_off():
    config = configure_ablation("w/o Processing")
    answer, trace = pipeline_with(StubPlanner(plan_text())).handle(
        "q", META, config=config)
    assert answer.status == "partial"
    assert "processing is disabled" in trace.failure
    # rejection happens before anything executes
    assert trace.stages[1].detail == "skipped"
    assert trace.retrieved_cells == []


def test_no_expect_config_dumps_environment_instead_of_template():
    config = configure_ablation("w/o Expect")
    planner = StubPlanner(plan_text())
    answer, trace = pipeline_with(planner).handle("q", META, config=config)
    assert answer.status == "ok"
    assert answer.text.splitlines()[0] == "t:"
    assert answer.text.splitlines()[-1] == "avg: 21"
    assert planner.params_seen[0]["fixture_variant"] == "no-expect"


def test_fixture_variant_param_reaches_the_planner_backend():
    planner = StubPlanner(plan_text())
    pipeline_with(planner).handle("q", META, config=configure_ablation("w/o M&T"))
    assert planner.params_seen[0]["fixture_variant"] == "no-mt"


# -- traces ----------------------------------------------------------------------


def test_trace_to_dict_and_canonical_dict_shapes():
    pipeline = pipeline_with(StubPlanner(plan_text()))
    _, trace = pipeline.handle("q", META, request_id="fixed-id")
    doc = trace.to_dict()
    assert doc["request_id"] == "fixed-id"
    assert "started_at" in doc and "end_to_end_ms" in doc
    assert doc["stages"][0]["latency_ms"] >= 0

    canonical = trace.canonical_dict()
    assert "request_id" not in canonical
    assert "started_at" not in canonical
    assert "end_to_end_ms" not in canonical
    for stage in canonical["stages"]:
        assert "latency_ms" not in stage
    assert "latency_ms" not in canonical["planner"]
    assert "latency_ms" not in canonical["responder"]
    for record in canonical["instructions"]:
        assert "latency_ms" not in record


def test_canonical_trace_is_identical_across_reruns():
    def run():
        pipeline = pipeline_with(StubPlanner(plan_text()))
        _, trace = pipeline.handle("q", META)
        return json.dumps(trace.canonical_dict(), sort_keys=True)

    assert run() == run()


def test_persist_writes_answer_and_trace_payload(tmp_path):
    pipeline = pipeline_with(StubPlanner(plan_text()), trace_dir=tmp_path / "traces")
    answer, trace = pipeline.handle("q", META)
    path = tmp_path / "traces" / f"{trace.request_id}.json"
    payload = json.loads(path.read_text())
    assert payload["answer"] == {
        "text": answer.text, "status": "ok", "trace_ref": trace.request_id}
    assert payload["trace"]["query"] == "q"
    assert len(payload["trace"]["stages"]) == 4


def test_stage_latencies_sum_close_to_end_to_end():
    pipeline = pipeline_with(StubPlanner(plan_text()))
    _, trace = pipeline.handle("q", META)
    total = sum(s.latency_ms for s in trace.stages)
    assert abs(total - trace.end_to_end_ms) < 5.0
