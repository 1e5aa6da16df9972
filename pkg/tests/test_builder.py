"""QueryCall validation, statement emission, result relabeling and merging."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from hvacqa.builder import (
    LATEST,
    QueryCall,
    TimeRange,
    build_sql,
    execute_call,
    statements_for,
)
from hvacqa.context import Metadata
from hvacqa.errors import InvalidRange, PlanInvalid, UnknownTaxonomy
from hvacqa.sql import parse_select
from hvacqa.store import ReadingStore, SensorReading

T0 = datetime(2024, 6, 1, tzinfo=timezone.utc)

META = Metadata(
    taxonomy={
        "my room": "room101",
        "next door": "room102",
        "temperature": "temp",
        "power use": "power",
    },
    persona="resident")


def minute(i: int) -> datetime:
    return T0 + timedelta(minutes=i)


def demo_store() -> ReadingStore:
    store = ReadingStore(["temp", "power"])
    for i in range(4):
        store.insert(SensorReading("room101", minute(i),
                                   {"temp": 20.0 + i, "power": 1.0 + i}))
        store.insert(SensorReading("room102", minute(i),
                                   {"temp": 18.0 + i, "power": None if i == 3 else 0.5}))
    return store


def call(**overrides) -> QueryCall:
    base = dict(mapping={}, select=("temperature",), rooms=("my room",),
                time_range=TimeRange(minute(0), minute(3)))
    base.update(overrides)
    return QueryCall(**base)


# -- validation -----------------------------------------------------------


def test_query_call_normalizes_mapping_keys_and_freezes_sequences():
    c = QueryCall(mapping={"  My  Room ": "room200"}, select=["temperature"],
                  rooms=["my room"], time_range=LATEST)
    assert c.mapping == {"my room": "room200"}
    assert c.select == ("temperature",)
    assert c.rooms == ("my room",)


@pytest.mark.parametrize("overrides", [
    {"select": ()},
    {"rooms": ()},
    {"aggregate": "median"},
    {"group_by": "week"},
    {"group_by": "day"},  # group without aggregate
    {"time_range": LATEST, "aggregate": "avg"},
    {"time_range": "tomorrow"},
])
def test_query_call_rejects_invalid_shapes(overrides):
    with pytest.raises(PlanInvalid):
        call(**overrides)


def test_time_range_requires_tz_aware_bounds():
    with pytest.raises(PlanInvalid):
        TimeRange(datetime(2024, 6, 1), minute(0))


# -- statement emission ------------------------------------------------------


def test_build_sql_projection_binds_all_literals():
    stmt = build_sql(call(), META)
    assert stmt.text == (
        "SELECT ts, temp FROM readings WHERE room_id = ? "
        "AND ts BETWEEN ? AND ? AND temp IS NOT NULL")
    assert stmt.params == ("room101", minute(0), minute(3))
    parse_select(stmt.text)  # inside the grammar


def test_build_sql_attaches_not_null_per_selected_modality():
    stmt = build_sql(call(select=("temperature", "power use")), META)
    assert "temp IS NOT NULL" in stmt.text
    assert "power IS NOT NULL" in stmt.text


def test_build_sql_latest_shape():
    stmt = build_sql(call(time_range=LATEST), META)
    assert stmt.text.endswith("ORDER BY ts DESC LIMIT 1")
    assert stmt.params == ("room101",)


def test_build_sql_aggregate_and_grouped_shapes():
    agg = build_sql(call(aggregate="avg"), META)
    assert agg.text.startswith("SELECT AVG(temp) FROM readings")
    grouped = build_sql(call(aggregate="max", group_by="day"), META)
    assert grouped.text.startswith("SELECT DATE_TRUNC('day', ts), MAX(temp)")
    assert grouped.text.endswith("GROUP BY DATE_TRUNC('day', ts)")
    parse_select(grouped.text)


def test_build_sql_resolves_through_call_mapping_first():
    c = call(mapping={"temperature": "power"})
    stmt = build_sql(c, META)
    assert "power IS NOT NULL" in stmt.text
    assert "temp" not in stmt.text.replace("power", "")


def test_build_sql_unknown_terms_and_inverted_ranges_fail():
    with pytest.raises(UnknownTaxonomy):
        build_sql(call(select=("co2",)), META)
    with pytest.raises(UnknownTaxonomy):
        build_sql(call(rooms=("the attic",)), META)
    with pytest.raises(InvalidRange):
        build_sql(call(time_range=TimeRange(minute(3), minute(0))), META)


def test_statements_for_emits_one_statement_per_room_in_call_order():
    c = call(rooms=("next door", "my room"))
    stmts = statements_for(c, META)
    assert [s.params[0] for s in stmts] == ["room102", "room101"]
    for s in stmts:
        parse_select(s.text)


# -- execution and relabeling ---------------------------------------------------


def test_execute_call_relabels_to_user_terms():
    store = demo_store()
    table = execute_call(call(select=("temperature", "power use")), store, META)
    assert table.labels() == ["ts", "temperature", "power use"]
    assert table.rows[0] == (minute(0), 20.0, 1.0)


def test_execute_call_relabels_aggregates_with_user_terms():
    store = demo_store()
    table = execute_call(call(select=("power use",), aggregate="sum"), store, META)
    assert table.labels() == ["sum_power use"]
    assert table.rows == [(1.0 + 2.0 + 3.0 + 4.0,)]
    grouped = execute_call(
        call(select=("temperature",), aggregate="avg", group_by="day"), store, META)
    assert grouped.labels() == ["ts", "avg_temperature"]


def test_execute_call_multi_room_prepends_normalized_room_column():
    store = demo_store()
    c = call(rooms=("Next  Door", "my room"), aggregate="avg")
    table = execute_call(c, store, META)
    assert table.labels() == ["room", "avg_temperature"]
    # rows merge in call order, room labels are the user's normalized terms
    assert [row[0] for row in table.rows] == ["next door", "my room"]
    assert table.rows[0][1] == pytest.approx(sum(18.0 + i for i in range(4)) / 4)
    assert table.rows[1][1] == pytest.approx(sum(20.0 + i for i in range(4)) / 4)


def test_execute_call_merges_provenance_across_rooms():
    store = demo_store()
    c = call(select=("power use",), rooms=("my room", "next door"))
    table = execute_call(c, store, META)
    assert {(room, mod) for room, mod, _ in table.provenance} == {
        ("room101", "power"), ("room102", "power")}
    # room102 minute 3 is null so it contributes only three cells
    assert len(table.provenance) == 4 + 3


def test_execute_call_null_filter_excludes_partial_rows():
    store = demo_store()
    c = call(select=("temperature", "power use"), rooms=("next door",))
    table = execute_call(c, store, META)
    # minute 3 has null power, so the whole row is filtered out
    assert [row[0] for row in table.rows] == [minute(0), minute(1), minute(2)]


def test_execute_call_latest_skips_trailing_null():
    store = demo_store()
    c = call(select=("power use",), rooms=("next door",), time_range=LATEST)
    table = execute_call(c, store, META)
    assert table.rows == [(minute(2), 0.5)]
