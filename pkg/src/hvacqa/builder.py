"""Compile high-level retrieval calls into parameterized statements.

A QueryCall names rooms and sensed quantities in the user's own vocabulary;
the builder resolves terms through the call's local mapping and then the
deployment taxonomy, emits exactly one statement per room with every literal
bound as a parameter, and always attaches an IS NOT NULL filter for each
selected modality so downstream math never sees a null.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

from . import sql
from .context import Metadata, normalize_term, resolve_term
from .errors import InvalidRange, PlanInvalid
from .store import Column, DataTable, ReadingStore, SqlStatement

AGGREGATES = ("none", "avg", "min", "max", "sum", "count")
GROUP_UNITS = ("none", "day", "hour")
LATEST = "latest"


@dataclass(frozen=True)
class TimeRange:
    start: datetime
    end: datetime

    def __post_init__(self):
        if self.start.tzinfo is None or self.end.tzinfo is None:
            raise PlanInvalid("time range bounds must be tz-aware")


@dataclass(frozen=True)
class QueryCall:
    mapping: dict  # user term -> database-native term, shadows the taxonomy
    select: tuple
    rooms: tuple
    time_range: object  # TimeRange | "latest"
    aggregate: str = "none"
    group_by: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "select", tuple(self.select))
        object.__setattr__(self, "rooms", tuple(self.rooms))
        object.__setattr__(
            self, "mapping",
            {normalize_term(k): v for k, v in dict(self.mapping).items()})
        if not self.select:
            raise PlanInvalid("query call selects nothing")
        if not self.rooms:
            raise PlanInvalid("query call names no rooms")
        if self.aggregate not in AGGREGATES:
            raise PlanInvalid(f"bad aggregate {self.aggregate!r}")
        if self.group_by not in GROUP_UNITS:
            raise PlanInvalid(f"bad group_by {self.group_by!r}")
        if self.group_by != "none" and self.aggregate == "none":
            raise PlanInvalid("group_by requires an aggregate")
        if self.time_range == LATEST:
            if self.aggregate != "none":
                raise PlanInvalid("latest retrieval cannot aggregate")
        elif not isinstance(self.time_range, TimeRange):
            raise PlanInvalid("time_range must be latest or an absolute range")


def _resolved(call: QueryCall, meta: Metadata) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """(user term, database term) pairs for select and rooms, in call order."""
    mods = [(normalize_term(t), resolve_term(t, call.mapping, meta.taxonomy))
            for t in call.select]
    rooms = [(normalize_term(t), resolve_term(t, call.mapping, meta.taxonomy))
             for t in call.rooms]
    return mods, rooms


def build_sql(call: QueryCall, meta: Metadata, room_term: str | None = None) -> SqlStatement:
    """One complete statement for one room of the call.

    Raises UnknownTaxonomy for unresolvable terms and InvalidRange when the
    absolute range is inverted.  Multi-room calls are expanded by
    execute_call; this emits the statement for room_term (default: first).
    """
    mods, rooms = _resolved(call, meta)
    room_term = call.rooms[0] if room_term is None else room_term
    room_db = dict(rooms)[normalize_term(room_term)]

    params: list = [room_db]
    where = ["room_id = ?"]
    if isinstance(call.time_range, TimeRange):
        if call.time_range.start > call.time_range.end:
            raise InvalidRange(
                f"range starts {call.time_range.start} after end {call.time_range.end}")
        where.append("ts BETWEEN ? AND ?")
        params.append(call.time_range.start.astimezone(timezone.utc))
        params.append(call.time_range.end.astimezone(timezone.utc))
    for _, db in mods:
        where.append(f"{db} IS NOT NULL")

    if call.aggregate == "none":
        items = ["ts"] + [db for _, db in mods]
    elif call.group_by != "none":
        items = [f"DATE_TRUNC('{call.group_by}', ts)"]
        items += [f"{call.aggregate.upper()}({db})" for _, db in mods]
    else:
        items = [f"{call.aggregate.upper()}({db})" for _, db in mods]

    text = f"SELECT {', '.join(items)} FROM readings WHERE {' AND '.join(where)}"
    if call.group_by != "none":
        text += f" GROUP BY DATE_TRUNC('{call.group_by}', ts)"
    if call.time_range == LATEST:
        text += " ORDER BY ts DESC LIMIT 1"
    return SqlStatement(text, tuple(params))


def statements_for(call: QueryCall, meta: Metadata) -> list[SqlStatement]:
    """Every statement the call expands to, one per room, in call order."""
    return [build_sql(call, meta, room_term) for room_term in call.rooms]


def _map_label(label: str, relabel: dict) -> str:
    """Store-side result label back to the user's term for that column."""
    if label in relabel:
        return relabel[label]
    head, _, tail = label.partition("_")
    if head in sql.AGG_FUNCS and tail in relabel:
        return f"{head}_{relabel[tail]}"
    return label


def execute_call(call: QueryCall, store: ReadingStore, meta: Metadata) -> DataTable:
    """Run the call and hand back results labeled in the user's vocabulary.

    Multi-room calls run one statement per room; sub-results keep their
    per-room ordering, gain a leading user-native room column, and merge in
    call order with provenance unioned.
    """
    mods, rooms = _resolved(call, meta)
    relabel = {db: user for user, db in mods}
    multi = len(call.rooms) > 1

    merged_rows: list[tuple] = []
    merged_prov: set = set()
    columns: list[Column] | None = None
    for room_term in call.rooms:
        table = store.execute(build_sql(call, meta, room_term))
        mapped = [Column(_map_label(col.label, relabel), col.kind)
                  for col in table.columns]
        if multi:
            mapped = [Column("room", "string")] + mapped
            room_label = normalize_term(room_term)
            rows = [(room_label, *row) for row in table.rows]
        else:
            rows = table.rows
        if columns is None:
            columns = mapped
        merged_rows.extend(rows)
        merged_prov |= table.provenance
    assert columns is not None
    return DataTable(columns=columns, rows=merged_rows, provenance=merged_prov)
