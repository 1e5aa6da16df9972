"""End-to-end request handling: plan, query, process, respond.

handle() never raises.  Any defect on the way to an answer is converted
into a truthful degraded reply: a refusal when the question names something
the deployment does not monitor, a partial answer grounded in whatever did
execute, or a static apology when even the responder is unreachable.  Every
request leaves behind a Trace with the four stage records in order, the
planner and responder completions, retrieved cell addresses, and the token
total.

Ablation switches strip single pipeline capabilities so their contribution
can be measured; they compose, and each one changes only what it names.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from time import perf_counter

from . import builder, gateway, processor
from .context import Metadata
from .errors import (
    BackendUnavailable,
    HvacQaError,
    InternalNull,
    InvalidRange,
    MissingData,
    PlanInvalid,
    SqlExec,
    SqlUnsupported,
    UnknownFlag,
    UnknownTaxonomy,
)
from .plans import ExecutionPlan, validate_alignment, plan_to_wire
from .store import ReadingStore, format_ts

STATIC_APOLOGY = ("I'm sorry, I can't produce an answer right now because the "
                  "answering model is unavailable.")

STATUS_OK = "ok"
STATUS_PARTIAL = "partial"
STATUS_REFUSED = "refused"
STATUS_FAILED = "failed"


# -- ablation configuration ---------------------------------------------------

_FLAG_CANON = {
    "full": "full",
    "mt": "mt", "mandt": "mt", "metadatathinking": "mt",
    "thinking": "thinking",
    "expect": "expect", "expectation": "expect",
    "queryexec": "queryexec", "queryexecution": "queryexec", "query": "queryexec",
    "processing": "processing", "proc": "processing",
    "qp": "qp", "qandp": "qp",
}

_FLAG_NAMES = {
    "mt": "w/o M&T",
    "thinking": "w/o Thinking",
    "expect": "w/o Expect",
    "queryexec": "w/o QueryExec",
    "processing": "w/o Processing",
    "qp": "w/o Q&P",
}

ABLATION_NAMES = ("full",) + tuple(_FLAG_NAMES.values())


@dataclass(frozen=True)
class AblationConfig:
    name: str = "full"
    metadata: bool = True
    thinking: bool = True
    expectation: bool = True
    query_builder: bool = True
    processing: bool = True

    @property
    def fixture_variant(self) -> str:
        """Scripted-backend variant emulating how a model behaves under this config."""
        if not self.query_builder:
            return "no-queryexec"
        if not self.metadata:
            return "no-mt"
        if not self.thinking:
            return "no-thinking"
        if not self.expectation:
            return "no-expect"
        return "full"


FULL = AblationConfig()


def _canon_flag(flag: str) -> str:
    squeezed = "".join(c for c in flag.casefold() if c.isalnum())
    for prefix in ("without", "wo", "no"):
        if squeezed.startswith(prefix) and squeezed[len(prefix):] in _FLAG_CANON:
            squeezed = squeezed[len(prefix):]
            break
    if squeezed not in _FLAG_CANON:
        raise UnknownFlag(flag)
    return _FLAG_CANON[squeezed]


def configure_ablation(flags) -> AblationConfig:
    """Build a config from flag names; unknown names raise UnknownFlag.

    Accepts one name or a list; "full" alone means no ablation.  Flags
    compose: ["w/o Thinking", "w/o Processing"] switches both off.
    """
    if isinstance(flags, str):
        flags = [part for part in flags.split(",") if part.strip()]
    canon = [_canon_flag(f) for f in flags] or ["full"]
    fields_off = dict(metadata=True, thinking=True, expectation=True,
                      query_builder=True, processing=True)
    parts: list[str] = []
    for flag in canon:
        if flag == "full":
            continue
        if flag == "mt":
            fields_off["metadata"] = False
            fields_off["thinking"] = False
        elif flag == "thinking":
            fields_off["thinking"] = False
        elif flag == "expect":
            fields_off["expectation"] = False
        elif flag == "queryexec":
            fields_off["query_builder"] = False
        elif flag == "processing":
            fields_off["processing"] = False
        elif flag == "qp":
            fields_off["query_builder"] = False
            fields_off["processing"] = False
        if _FLAG_NAMES[flag] not in parts:
            parts.append(_FLAG_NAMES[flag])
    name = " + ".join(parts) if parts else "full"
    return AblationConfig(name=name, **fields_off)


# -- traces -------------------------------------------------------------------


@dataclass
class StageRecord:
    name: str
    latency_ms: float
    ok: bool
    detail: str = ""
    retries: int = 0

    def to_dict(self, timing: bool = True) -> dict:
        doc = {"name": self.name, "ok": self.ok, "detail": self.detail,
               "retries": self.retries}
        if timing:
            doc["latency_ms"] = round(self.latency_ms, 3)
        return doc


@dataclass
class Trace:
    request_id: str
    query: str
    persona: str
    config: str
    started_at: str
    stages: list = field(default_factory=list)
    plan: dict | None = None
    planner: dict | None = None
    responder: dict | None = None
    total_token_length: int = 0
    tokens_estimated: bool = False
    retrieved_cells: list = field(default_factory=list)
    env_summary: list = field(default_factory=list)
    instructions: list = field(default_factory=list)
    alignment: dict | None = None
    residuals: list = field(default_factory=list)
    failure: str | None = None
    status: str = STATUS_OK
    answer_text: str = ""
    end_to_end_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "query": self.query,
            "persona": self.persona,
            "config": self.config,
            "started_at": self.started_at,
            "stages": [s.to_dict() for s in self.stages],
            "plan": self.plan,
            "planner": self.planner,
            "responder": self.responder,
            "total_token_length": self.total_token_length,
            "tokens_estimated": self.tokens_estimated,
            "retrieved_cells": self.retrieved_cells,
            "env_summary": self.env_summary,
            "instructions": self.instructions,
            "alignment": self.alignment,
            "residuals": self.residuals,
            "failure": self.failure,
            "status": self.status,
            "answer_text": self.answer_text,
            "end_to_end_ms": round(self.end_to_end_ms, 3),
        }

    def canonical_dict(self) -> dict:
        """Deterministic content only: no ids, no wall-clock readings."""
        doc = self.to_dict()
        doc.pop("request_id")
        doc.pop("started_at")
        doc.pop("end_to_end_ms")
        doc["stages"] = [s.to_dict(timing=False) for s in self.stages]
        for role in ("planner", "responder"):
            completion = doc.get(role)
            if completion:
                completion = dict(completion)
                completion.pop("latency_ms", None)
                doc[role] = completion
        doc["instructions"] = [
            {k: v for k, v in record.items() if k != "latency_ms"}
            for record in self.instructions
        ]
        return doc


@dataclass(frozen=True)
class Answer:
    text: str
    status: str
    trace_ref: str


def _completion_dict(completion: gateway.Completion | None) -> dict | None:
    if completion is None:
        return None
    return {
        "text": completion.text,
        "input_tokens": completion.input_tokens,
        "output_tokens": completion.output_tokens,
        "latency_ms": round(completion.latency_ms, 3),
        "model": completion.model,
        "estimated": completion.estimated,
    }


def failure_sentence(error: HvacQaError) -> str:
    """Deterministic truthful-failure phrasing for the responder content."""
    if isinstance(error, UnknownTaxonomy):
        return (f"I'm sorry, but '{error.term}' is not something this deployment "
                "monitors, so I can't answer that.")
    if isinstance(error, MissingData):
        return "I'm sorry, but there is no recorded data matching that request."
    if isinstance(error, InternalNull):
        return "I'm sorry, but the stored readings for that request are incomplete."
    if isinstance(error, InvalidRange):
        return "I'm sorry, but that time range is not valid."
    if isinstance(error, (SqlUnsupported, SqlExec)):
        return "I'm sorry, but the retrieval step for that question failed."
    return "I'm sorry, but I could not work out a reliable way to answer that."


def _env_summary(env: processor.Env) -> list:
    summary = []
    for name, value in env.items():
        kind = processor.kind_of(value)
        if kind == processor.KIND_TABLE:
            preview = f"{value.row_count} rows ({', '.join(value.labels())})"
        else:
            preview = processor.render_value(value)
            if len(preview) > 120:
                preview = preview[:117] + "..."
        summary.append({"name": name, "kind": kind, "preview": preview})
    return summary


class Pipeline:
    """Shared entry point behind both the HTTP service and the CLI."""

    def __init__(self, store: ReadingStore, planner_backend, responder_backend,
                 registry: processor.OpRegistry | None = None,
                 trace_dir=None, params: dict | None = None):
        self.store = store
        self.planner_backend = planner_backend
        self.responder_backend = responder_backend
        self.registry = registry
        self.trace_dir = Path(trace_dir) if trace_dir else None
        self.params = dict(params or {})

    def handle(self, query: str, meta: Metadata,
               config: AblationConfig = FULL,
               request_id: str | None = None) -> tuple[Answer, Trace]:
        request_id = request_id or uuid.uuid4().hex
        trace = Trace(
            request_id=request_id,
            query=query,
            persona=meta.persona,
            config=config.name,
            started_at=datetime.now(timezone.utc).isoformat(),
        )
        try:
            answer = self._run(query, meta, config, trace)
        except Exception as exc:  # contract: handle never raises
            trace.failure = f"{type(exc).__name__}: {exc}"
            trace.status = STATUS_FAILED
            trace.answer_text = STATIC_APOLOGY
            answer = Answer(STATIC_APOLOGY, STATUS_FAILED, request_id)
        self._persist(trace)
        return answer, trace

    # -- internals ---------------------------------------------------------

    def _run(self, query: str, meta: Metadata, config: AblationConfig,
             trace: Trace) -> Answer:
        # stage windows are contiguous between the first and last clock
        # readings, so the four latencies sum to end_to_end_ms
        started = perf_counter()
        params = dict(self.params)
        params["fixture_variant"] = config.fixture_variant

        failure: HvacQaError | None = None
        plan_obj: ExecutionPlan | None = None
        planner_completion = None
        retries = 0

        # plan: completion, parse, config admission, alignment
        try:
            plan_obj, planner_completion, retries = gateway.plan(
                query, meta, self.planner_backend,
                include_metadata=config.metadata,
                include_thinking=config.thinking,
                raw_sql=not config.query_builder,
                schema=self.store.schema,
                params=params)
            failure = self._admit(plan_obj, config)
        except HvacQaError as exc:
            failure = exc
        if plan_obj is not None:
            trace.plan = plan_to_wire(plan_obj)
            if config.expectation and failure is None and plan_obj.refusal is None:
                report = validate_alignment(plan_obj)
                trace.alignment = {"unbound": list(report.unbound),
                                   "unused": list(report.unused)}
                if not report.accepted:
                    failure = PlanInvalid(
                        "template placeholders never assigned: "
                        + ", ".join(report.unbound))
        refusing = plan_obj is not None and plan_obj.refusal is not None
        if failure is not None:
            plan_detail = f"{type(failure).__name__}: {failure}"
        else:
            plan_detail = "refusal" if refusing else "parsed"
        trace.planner = _completion_dict(planner_completion)
        plan_end = perf_counter()
        trace.stages.append(StageRecord(
            "plan", (plan_end - started) * 1000.0, ok=failure is None,
            detail=plan_detail, retries=retries))

        # query + process: run assignments in plan order, attribute per kind
        env = processor.Env()
        query_ms = process_ms = 0.0
        query_n = process_n = 0
        retrieved: set = set()

        def executor(assignment):
            record = {"target": assignment.target, "kind": assignment.kind}
            t_ex = perf_counter()
            try:
                if assignment.kind == "query":
                    stmts = builder.statements_for(assignment.spec, meta)
                    record["sql"] = [
                        {"text": s.text,
                         "params": [format_ts(p) if isinstance(p, datetime) else p
                                    for p in s.params]}
                        for s in stmts]
                    table = builder.execute_call(assignment.spec, self.store, meta)
                else:
                    record["sql"] = [{"text": assignment.spec.text,
                                      "params": list(assignment.spec.params)}]
                    table = self.store.execute(assignment.spec)
                record["rows"] = table.row_count
                retrieved.update(table.provenance)
                return table
            finally:
                record["latency_ms"] = round((perf_counter() - t_ex) * 1000.0, 3)
                trace.instructions.append(record)

        def observer(assignment, seconds, error):
            nonlocal query_ms, process_ms, query_n, process_n
            if assignment.kind == "process":
                process_ms += seconds * 1000.0
                process_n += 1
                trace.instructions.append({
                    "target": assignment.target, "kind": "process",
                    "op": assignment.spec.op,
                    "ok": error is None,
                    "latency_ms": round(seconds * 1000.0, 3),
                })
            else:
                query_ms += seconds * 1000.0
                query_n += 1
                if trace.instructions and trace.instructions[-1].get("target") == assignment.target:
                    trace.instructions[-1]["ok"] = error is None

        assignment_failure = None
        if plan_obj is not None and failure is None and not refusing:
            env, assignment_failure = processor.run_assignments(
                plan_obj.instructions, query_executor=executor, env=env,
                meta=meta, registry=self.registry, observer=observer)
            if assignment_failure is not None:
                failure = assignment_failure.error

        if refusing:
            skipped = "skipped (refusal)"
        elif plan_obj is None or (failure is not None and not query_n and not process_n):
            skipped = "skipped"
        else:
            skipped = ""
        query_ok = not any(r.get("kind") != "process" and not r.get("ok", True)
                           for r in trace.instructions)
        process_ok = not any(r.get("kind") == "process" and not r.get("ok", True)
                             for r in trace.instructions)
        trace.retrieved_cells = sorted(
            [room, modality, format_ts(ts)] for room, modality, ts in retrieved)
        trace.env_summary = _env_summary(env)
        retrieval_end = perf_counter()
        # loop and bookkeeping time (provenance sort, env summary) counts as
        # retrieval accounting so the process window stays pure computation
        segment_ms = (retrieval_end - plan_end) * 1000.0
        overhead_ms = max(segment_ms - query_ms - process_ms, 0.0)
        trace.stages.append(StageRecord(
            "query", query_ms + overhead_ms, ok=query_ok,
            detail=skipped or f"{query_n} retrieval instructions"))
        trace.stages.append(StageRecord(
            "process", process_ms, ok=process_ok,
            detail=skipped or f"{process_n} processing instructions"))

        # respond: render content, then one responder completion
        residuals: list[str] = []
        responder_completion = None
        status = STATUS_OK
        if refusing:
            content = plan_obj.refusal
        elif failure is not None:
            parts = [failure_sentence(failure)]
            if env.names():
                parts.append("What I could retrieve before that:\n"
                             + processor.dump_env(env, meta))
            content = "\n".join(parts)
        elif plan_obj is not None and config.expectation:
            filled, residuals = processor.render_values(
                env, plan_obj.expectation.template, meta)
            content = filled
        else:
            content = processor.dump_env(env, meta)

        hints = plan_obj.expectation.format_hints if plan_obj else ""
        auxiliary = plan_obj.expectation.auxiliary if plan_obj else ()
        try:
            responder_completion = gateway.respond(
                query, content, self.responder_backend,
                format_hints=hints, auxiliary=auxiliary, params=params)
            answer_text = responder_completion.text
            respond_ok = True
        except HvacQaError as exc:
            answer_text = STATIC_APOLOGY
            respond_ok = False
            failure = failure or exc
            status = STATUS_FAILED

        if status != STATUS_FAILED:
            if refusing or isinstance(failure, UnknownTaxonomy):
                status = STATUS_REFUSED
            elif failure is not None or residuals:
                status = STATUS_PARTIAL

        trace.responder = _completion_dict(responder_completion)
        trace.total_token_length = (
            (planner_completion.output_tokens if planner_completion else 0)
            + (responder_completion.input_tokens if responder_completion else 0)
            + (responder_completion.output_tokens if responder_completion else 0))
        trace.tokens_estimated = any(
            c is not None and c.estimated
            for c in (planner_completion, responder_completion))
        trace.residuals = residuals
        trace.failure = f"{type(failure).__name__}: {failure}" if failure else None
        trace.status = status
        trace.answer_text = answer_text
        finished = perf_counter()
        trace.stages.append(StageRecord(
            "respond", (finished - retrieval_end) * 1000.0, ok=respond_ok,
            detail="static apology" if not respond_ok else
            ("refusal text" if refusing else f"{len(content)} chars of content")))
        trace.end_to_end_ms = (finished - started) * 1000.0
        return Answer(answer_text, status, trace.request_id)

    @staticmethod
    def _admit(plan_obj: ExecutionPlan, config: AblationConfig) -> HvacQaError | None:
        """Reject instruction kinds the active configuration does not allow."""
        for assignment in plan_obj.instructions:
            if assignment.kind == "process" and not config.processing:
                return PlanInvalid(
                    f"processing is disabled in this configuration "
                    f"(instruction {assignment.target!r})")
            if assignment.kind == "sql" and config.query_builder:
                return PlanInvalid(
                    f"raw statements are not accepted when the query builder "
                    f"is active (instruction {assignment.target!r})")
            if assignment.kind == "query" and not config.query_builder:
                return PlanInvalid(
                    f"the query builder is disabled; retrieval must be raw "
                    f"statements (instruction {assignment.target!r})")
        return None

    def _persist(self, trace: Trace) -> None:
        if self.trace_dir is None:
            return
        self.trace_dir.mkdir(parents=True, exist_ok=True)
        payload = {"answer": {"text": trace.answer_text, "status": trace.status,
                              "trace_ref": trace.request_id},
                   "trace": trace.to_dict()}
        path = self.trace_dir / f"{trace.request_id}.json"
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
