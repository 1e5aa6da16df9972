"""Acceptance gate: one test per required end-to-end property.

Run with -v to get one pass/fail line per criterion. Every check compares
the package against the independent naive implementations in oracles.py or
against exact byte-level expectations; nothing here is tuned to pass.
"""

from __future__ import annotations

import json
import math
import random
import time
from datetime import datetime, timedelta, timezone

import pytest

from hvacqa.builder import QueryCall, TimeRange, execute_call, statements_for
from hvacqa.context import Metadata
from hvacqa.dataset import MODALITIES
from hvacqa.gateway import Completion, EchoBackend
from hvacqa.harness import CellMetrics, score_cells, run_suite
from hvacqa.orchestrator import ABLATION_NAMES, FULL, Pipeline, configure_ablation
from hvacqa.processor import Env, ProcessExpr, Row, VarRef, eval_expr
from hvacqa.sql import NotNullPred, parse_select
from hvacqa.store import (
    Column,
    DataTable,
    ReadingStore,
    SensorReading,
    format_ts,
)

import oracles

T0 = datetime(2024, 6, 1, tzinfo=timezone.utc)


def minute(i: int) -> datetime:
    return T0 + timedelta(minutes=i)


def identity_meta(rooms, modalities, now) -> Metadata:
    taxonomy = {m: m for m in modalities}
    taxonomy.update({r: r for r in rooms})
    return Metadata(taxonomy=taxonomy, persona="manager", preferences={},
                    now=now)


# -- criterion 1: builder vs full-scan oracle over fuzzed calls ---------------


def test_criterion_1_builder_store_oracle_equivalence(fuzz_data):
    store, rooms, ts_list, arrays = fuzz_data
    started = time.perf_counter()

    raw_rows = []
    for room in rooms:
        cols = arrays[room]
        for i, ts in enumerate(ts_list):
            raw_rows.append((room, ts, {m: cols[m][i] for m in MODALITIES}))

    aliases = {"temperature": "roomtemp", "target temperature": "setpoint",
               "moisture": "humidity", "energy draw": "power",
               "my room": rooms[0], "next door": rooms[1]}
    taxonomy = {m: m for m in MODALITIES}
    taxonomy.update({r: r for r in rooms})
    taxonomy.update(aliases)
    meta = Metadata(taxonomy=taxonomy, persona="resident", preferences={},
                    now=ts_list[-1])
    by_db_alias = {}
    for user, db in aliases.items():
        by_db_alias.setdefault(db, user)

    rng = random.Random(2024)
    total = len(ts_list)
    statements_checked = 0
    for trial in range(500):
        mods_db = rng.sample(MODALITIES, rng.choice([1, 1, 2]))
        select = [by_db_alias[m] if m in by_db_alias and rng.random() < 0.5
                  else m for m in mods_db]
        rooms_db = rng.sample(rooms, rng.choice([1, 1, 2, 3]))
        room_terms = [by_db_alias[r] if r in by_db_alias and rng.random() < 0.5
                      else r for r in rooms_db]
        mapping = {}
        if rng.random() < 0.1:
            mapping = {"the zone": rooms_db[0]}
            room_terms = ["the zone"] + room_terms[1:]
        if rng.random() < 0.2:
            time_range, o_range = "latest", "latest"
            aggregate = group_by = "none"
        else:
            # log-uniform window lengths: plenty of tiny windows, some huge
            length = int(math.exp(rng.uniform(0.0, math.log(total))))
            start = rng.randrange(0, total - length + 1)
            time_range = TimeRange(ts_list[start], ts_list[start + length - 1])
            o_range = (time_range.start, time_range.end)
            aggregate = rng.choice(["none", "avg", "min", "max", "sum", "count"])
            group_by = (rng.choice(["none", "day", "hour"])
                        if aggregate != "none" else "none")

        call = QueryCall(mapping=mapping, select=select, rooms=room_terms,
                         time_range=time_range, aggregate=aggregate,
                         group_by=group_by)
        table = execute_call(call, store, meta)

        term_map = dict(taxonomy)
        term_map.update({oracles.norm(k): v for k, v in mapping.items()})
        labels, rows, provenance = oracles.query_call(
            raw_rows, term_map, select=select, rooms=room_terms,
            time_range=o_range, aggregate=aggregate, group_by=group_by)
        assert [c.label for c in table.columns] == labels, f"trial {trial}"
        assert [tuple(r) for r in table.rows] == rows, f"trial {trial}: {call}"
        assert table.provenance == provenance, f"trial {trial}"

        statements = statements_for(call, meta)
        assert len(statements) == len(room_terms)
        for stmt in statements:
            ast = parse_select(stmt.text)  # SqlUnsupported would fail here
            not_null = {p.column for p in ast.where
                        if isinstance(p, NotNullPred)}
            assert set(mods_db) <= not_null, stmt.text
            statements_checked += 1

    elapsed = time.perf_counter() - started
    assert statements_checked >= 500
    assert elapsed < 60.0, f"fuzz run took {elapsed:.1f}s"


# -- criterion 2: injected nulls behave exactly like absent readings ----------


def test_criterion_2_null_injection_never_changes_aggregates():
    rng = random.Random(77)
    rooms = ["room101", "room102"]

    def build(values_by_room, skip=frozenset()):
        store = ReadingStore(["temp"])
        for room, values in values_by_room.items():
            for i, v in enumerate(values):
                if (room, i) in skip:
                    continue
                store.insert(SensorReading(room_id=room, ts=minute(i),
                                           values={"temp": v}))
        return store

    def run(store, call, meta):
        table = execute_call(call, store, meta)
        return ([c.label for c in table.columns], list(table.rows),
                table.provenance)

    for trial in range(200):
        n = rng.randrange(30, 90)
        data = {room: [round(rng.uniform(15, 30), 2) for _ in range(n)]
                for room in rooms}
        w0, w1 = sorted(rng.sample(range(n), 2))
        meta = identity_meta(rooms, ["temp"], minute(n))
        aggregate = rng.choice(["avg", "min", "max", "sum", "count"])
        group_by = rng.choice(["none", "none", "hour"])
        call = QueryCall(mapping={}, select=["temp"], rooms=["room101"],
                         time_range=TimeRange(minute(w0), minute(w1)),
                         aggregate=aggregate, group_by=group_by)

        baseline = run(build(data), call, meta)

        # nulls outside the queried room/window change nothing at all
        out_of_scope = {("room102", i) for i in rng.sample(range(n), n // 4)}
        out_of_scope |= {("room101", i) for i in range(n)
                         if not w0 <= i <= w1 and rng.random() < 0.3}
        noisy = {room: [None if (room, i) in out_of_scope else v
                        for i, v in enumerate(values)]
                 for room, values in data.items()}
        assert run(build(noisy), call, meta) == baseline, f"trial {trial}"

        # nulls inside the window act exactly like absent readings
        hit = {("room101", i) for i in range(w0, w1 + 1)
               if rng.random() < 0.4}
        injected = {room: [None if (room, i) in hit else v
                           for i, v in enumerate(values)]
                    for room, values in noisy.items()}
        with_nulls = run(build(injected), call, meta)
        without_rows = run(build(noisy, skip=hit), call, meta)
        assert with_nulls == without_rows, f"trial {trial}"


# -- criterion 3: processor ops vs naive loop oracles ---------------------------


def _run_op(op: str, table, extra=(), **options):
    env = Env()
    env.bind("t", table)
    args = [VarRef("t"), *extra]
    return eval_expr(ProcessExpr(op, tuple(args), options), env)


def _random_table(rng, *, nulls=False, spread=1) -> DataTable:
    n = rng.randrange(1, 61)
    grid = [k * 0.5 for k in range(-6, 7)]  # coarse grid forces ties
    start = rng.randrange(0, 5000)
    rows = []
    for i in range(n):
        v = None if nulls and rng.random() < 0.2 else rng.choice(grid)
        w = rng.choice(grid)
        rows.append((minute(start + i * spread), v, w))
    columns = [Column("ts", "timestamp"), Column("v", "number"),
               Column("w", "number")]
    return DataTable(columns, rows, provenance=set())


def _permuted(rng, table: DataTable) -> DataTable:
    order = list(range(len(table.rows)))
    rng.shuffle(order)
    return DataTable(list(table.columns), [table.rows[i] for i in order],
                     provenance=set(table.provenance))


def test_criterion_3_processor_oracle_equivalence():
    rng = random.Random(31)
    trials = 200

    for _ in range(trials):
        table = _random_table(rng)
        for func in ("mean", "min", "max", "sum", "count"):
            got = _run_op(func, table, column="v")
            want = oracles.stat(table, "v", func)
            assert abs(got - want) <= 1e-9, func

    for _ in range(trials):
        table = _random_table(rng)
        for op, best in (("argmax", "max"), ("argmin", "min")):
            got = _run_op(op, table, column="v")
            assert isinstance(got, Row)
            assert got.values == oracles.arg_extreme(table, "v", best)
            # stability: permuting rows cannot move the winner (ts is unique)
            shuffled = _permuted(rng, table)
            assert _run_op(op, shuffled, column="v").values == got.values

    for _ in range(trials):
        table = _random_table(rng)
        by_ts = sorted(enumerate(table.rows),
                       key=lambda pair: (pair[1][0], pair[0]))
        assert _run_op("first", table).values == tuple(by_ts[0][1])
        assert _run_op("last", table).values == tuple(by_ts[-1][1])

    for _ in range(trials):
        table = _random_table(rng)
        got = _run_op("select_column", table, column="w")
        assert [c.label for c in got.columns] == ["w"]
        idx = table.labels().index("w")
        assert got.rows == [(row[idx],) for row in table.rows]

    for _ in range(trials):
        table = _random_table(rng, spread=rng.choice([7, 180, 900]))
        unit = rng.choice(["hour", "day"])
        agg = rng.choice(["mean", "min", "max", "sum", "count"])
        got = _run_op("resample", table, unit=unit, agg=agg, column="v")
        want = oracles.resample(table, "v", unit, agg)
        assert [r[0] for r in got.rows] == [r[0] for r in want]
        for (_, g), (_, w) in zip(got.rows, want):
            assert abs(g - w) <= 1e-9

    for _ in range(trials):
        table = _random_table(rng, nulls=True)
        comparator = rng.choice(["<", ">", "<=", ">=", "=", "!="])
        literal = rng.choice([k * 0.5 for k in range(-6, 7)])
        got = _run_op("filter_rows", table,
                      predicate={"column": "v", "comparator": comparator,
                                 "literal": literal})
        assert [tuple(r) for r in got.rows] == oracles.filter_rows(
            table, "v", comparator, literal)

    for _ in range(trials):
        table = _random_table(rng)
        k = rng.randrange(1, len(table.rows) + 3)
        direction = rng.choice(["asc", "desc"])
        got = _run_op("top_k", table, k=k, column="v", direction=direction)
        assert [tuple(r) for r in got.rows] == oracles.top_k(
            table, "v", k, direction)

    for _ in range(trials):
        a, b = rng.uniform(-5, 5), rng.uniform(-5, 5)
        if rng.random() < 0.3:
            b = a  # force the equal branch regularly
        env = Env()
        got = eval_expr(ProcessExpr("compare", (a, b), {}), env)
        diff, relation = oracles.compare(a, b)
        assert abs(got.diff - diff) <= 1e-9
        assert got.relation == relation

    for _ in range(trials):
        x = rng.uniform(-100, 100)
        digits = rng.randrange(0, 4)
        env = Env()
        got = eval_expr(ProcessExpr("round_to", (x,), {"digits": digits}), env)
        assert got == float(round(x, digits))


# -- criterion 4: cell metrics vs independent set arithmetic --------------------


def test_criterion_4_metric_oracle():
    # the three edge conventions, stated explicitly
    assert score_cells(set(), set()) == CellMetrics(1, 1.0, 1.0)
    assert score_cells(set(), {("a", "m", "t")}) == CellMetrics(0, 1.0, 0.0)
    assert score_cells({("a", "m", "t")}, set()) == CellMetrics(0, 0.0, 1.0)

    rng = random.Random(13)
    universe = [(f"room10{r}", m, format_ts(minute(i)))
                for r in range(3) for m in ("roomtemp", "power")
                for i in range(10)]
    for _ in range(1000):
        retrieved = set(rng.sample(universe, rng.randrange(0, len(universe))))
        truth = set(rng.sample(universe, rng.randrange(0, len(universe))))
        got = score_cells(retrieved, truth)
        exact, precision, recall = oracles.cell_metrics(retrieved, truth)
        assert (got.exec_accuracy, got.precision, got.recall) == (
            exact, precision, recall)


# -- criteria 5, 8, 9: scripted end-to-end runs -----------------------------------


@pytest.fixture(scope="module")
def determinism_runs(suite):
    """Two fresh pipelines over the whole item set, plus the wall time."""
    started = time.perf_counter()
    results = []
    for _ in range(2):
        pipeline = Pipeline(suite["store"], suite["planner"],
                            suite["responder"])
        outcomes = []
        for item in suite["items"]:
            answer, trace = pipeline.handle(
                item.question, suite["metadata"][item.persona], config=FULL)
            outcomes.append((item, answer, trace))
        results.append(outcomes)
    elapsed = time.perf_counter() - started
    return results, elapsed


ABLATIONS = tuple(name for name in ABLATION_NAMES if name != "full")


@pytest.fixture(scope="module")
def ablation_report(suite):
    configs = [FULL] + [configure_ablation(name) for name in ABLATIONS]
    return run_suite(
        suite["items"], configs,
        store=suite["store"], metadata_by_persona=suite["metadata"],
        planner_backend=suite["planner"], responder_backend=suite["responder"])


def test_criterion_5_end_to_end_determinism_and_correctness(determinism_runs):
    (first, second), elapsed = determinism_runs

    accuracies = []
    for item, answer, trace in first:
        retrieved = frozenset(tuple(c) for c in trace.retrieved_cells)
        accuracies.append(score_cells(retrieved, item.truth_cells).exec_accuracy)
    assert sum(accuracies) / len(accuracies) == 1.0

    for (_, answer_a, trace_a), (_, answer_b, trace_b) in zip(first, second):
        assert answer_a.text.encode() == answer_b.text.encode()
        canon_a = json.dumps(trace_a.canonical_dict(), sort_keys=True)
        canon_b = json.dumps(trace_b.canonical_dict(), sort_keys=True)
        assert canon_a.encode() == canon_b.encode()

    assert elapsed < 30.0, f"suite double-run took {elapsed:.1f}s"


def test_criterion_6_ablation_ordering(ablation_report):
    sections = ablation_report["configs"]
    full_mean = sections["full"]["mean_exec_accuracy"]
    assert len(ABLATIONS) == 6
    for name in ABLATIONS:
        assert full_mean >= sections[name]["mean_exec_accuracy"], name

    degraded = sections["w/o Processing"]["items"]
    unsupported = [r for r in degraded if r["processing"] == "unsupported"]
    assert unsupported and all(r["exec_accuracy"] == 0 for r in unsupported)

    blind = sections["w/o M&T"]["items"]
    taxonomy_bound = [r for r in blind if r["requires_taxonomy"]]
    assert taxonomy_bound and all(r["exec_accuracy"] == 0
                                  for r in taxonomy_bound)


# -- criterion 7: corrupted plan documents never crash the pipeline ---------------


class _FixedPlanner:
    """Returns the same scripted text for every call, retries included."""

    def __init__(self, text: str):
        self.text = text

    def complete(self, prompt, params=None):
        return Completion(self.text, 40, 60, model="corrupt-fixture")


def test_criterion_7_robustness_corpus(suite):
    doc = {
        "thinking": "average the readings over the named day",
        "expectation": {
            "template": "The average temperature was {average} degrees.",
            "auxiliary": [],
            "format_hints": "one sentence",
        },
        "instructions": [{
            "target": "average",
            "kind": "query",
            "spec": {
                "mapping": {},
                "select": ["temperature"],
                "rooms": ["my room"],
                "time_range": {"start": "2024-06-02T00:00:00Z",
                               "end": "2024-06-02T23:59:00Z"},
                "aggregate": "avg",
                "group_by": "none",
            },
        }],
        "refusal": None,
    }
    base = json.dumps(doc)
    bad_types = dict(doc, instructions="none")
    contradictory = dict(doc, refusal="I cannot help with that.")
    corpus = [
        base[:-1] + ",}",                                  # trailing comma
        base.replace("}]", "},]", 1),                      # comma in array
        base[:-1],                                         # unbalanced brace
        "Sure thing!\n" + base[:-1] + ",}",                # prose + comma
        "```json\n" + base + "\n```",                      # fenced block
        "Here is the plan:\n" + base + "\nHope this helps!",
        base + "}",                                        # stray closer
        json.dumps(bad_types),                             # wrong field type
        json.dumps(contradictory),                         # refusal conflict
        "I am a teapot { ] } [",                           # beyond repair
    ]

    meta = suite["metadata"]["resident"]
    repaired = 0
    for text in corpus:
        pipeline = Pipeline(suite["store"], _FixedPlanner(text),
                            EchoBackend())
        answer, trace = pipeline.handle("What was the average temperature "
                                        "in my room yesterday?", meta)
        plan_stage = trace.stages[0]
        if plan_stage.ok:
            repaired += 1
        else:
            assert answer.status in ("partial", "failed"), text
    assert repaired >= 7, f"only {repaired}/10 documents repaired"


def test_criterion_8_token_and_latency_accounting(determinism_runs):
    (first, _), _ = determinism_runs
    for item, answer, trace in first:
        planner = trace.planner or {}
        responder = trace.responder or {}
        expected = (planner.get("output_tokens", 0)
                    + responder.get("input_tokens", 0)
                    + responder.get("output_tokens", 0))
        assert trace.total_token_length == expected, item.id
        stage_sum = sum(stage.latency_ms for stage in trace.stages)
        assert abs(stage_sum - trace.end_to_end_ms) <= 5.0, item.id


def test_criterion_9_processing_latency_ordering(ablation_report):
    by_processing = ablation_report["configs"]["full"]["latency_by_processing"]
    with_processing = by_processing["processing"]["process"]["mean"]
    without = by_processing["no_processing"]["process"]["mean"]
    assert with_processing >= without
