"""Embedded columnar store for minute-resolution room telemetry.

One wide logical table, readings(room_id, ts, <modality...>), where a missing
sensor value is a real null cell rather than an absent row.  Rows live in
per-room arrays sorted by timestamp so the evaluator can bisect time windows
instead of scanning the world.  Every value that leaves the store carries
provenance: the set of (room_id, modality, ts) cells that produced it.
"""

from __future__ import annotations

import csv
import hashlib
import re
import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import sql
from .errors import InvalidRange, MalformedRow, SqlExec, UnknownModality

MODALITY_RE = r"[a-z][a-z0-9_]*"

CellAddr = tuple[str, str, datetime]  # (room_id, modality, ts)


def parse_ts(text: str) -> datetime:
    """RFC 3339 text to a tz-aware UTC datetime. Raises ValueError."""
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp lacks an offset: {text!r}")
    return dt.astimezone(timezone.utc)


def format_ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def trunc_ts(dt: datetime, unit: str) -> datetime:
    if unit == "day":
        return dt.replace(hour=0, minute=0, second=0, microsecond=0)
    if unit == "hour":
        return dt.replace(minute=0, second=0, microsecond=0)
    raise ValueError(f"bad trunc unit {unit!r}")


@dataclass(frozen=True)
class SensorReading:
    room_id: str
    ts: datetime
    values: dict  # modality -> float | None

    def __post_init__(self):
        if self.ts.tzinfo is None:
            raise ValueError("reading timestamp must be tz-aware")
        if self.ts.second != 0 or self.ts.microsecond != 0:
            raise ValueError("reading timestamps are minute-aligned")


@dataclass(frozen=True)
class SqlStatement:
    text: str
    params: tuple = ()


@dataclass(frozen=True)
class Column:
    label: str
    kind: str  # "timestamp" | "number" | "string"


@dataclass
class DataTable:
    columns: list[Column]
    rows: list[tuple]
    provenance: set = field(default_factory=set)

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column_index(self, label: str) -> int:
        for i, col in enumerate(self.columns):
            if col.label == label:
                return i
        raise KeyError(label)

    def labels(self) -> list[str]:
        return [c.label for c in self.columns]


class ReadingStore:
    """In-memory wide table with a read-only SQL-subset evaluator."""

    def __init__(self, schema: list[str]):
        seen = set()
        for name in schema:
            if not re.fullmatch(MODALITY_RE, name):
                raise UnknownModality(name)
            if name in ("room_id", "ts") or name in seen:
                raise UnknownModality(name)
            seen.add(name)
        self.schema = list(schema)
        self._lock = threading.RLock()
        # room_id -> {ts: datetime -> values: dict}
        self._cells: dict[str, dict[datetime, dict]] = {}
        # room_id -> (ts list asc, {modality: value list}) rebuilt lazily
        self._built: dict[str, tuple[list[datetime], dict[str, list]]] = {}
        self._dirty = False

    # -- writing ---------------------------------------------------------

    def insert(self, reading: SensorReading) -> None:
        bad = set(reading.values) - set(self.schema)
        if bad:
            raise UnknownModality(sorted(bad)[0])
        row = {m: reading.values.get(m) for m in self.schema}
        with self._lock:
            self._cells.setdefault(reading.room_id, {})[reading.ts] = row
            self._dirty = True

    def ingest_csv(self, path) -> int:
        """Load a CSV of readings; re-ingesting replaces matching rows."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise MalformedRow(1, "empty file") from None
            if header[:2] != ["room_id", "ts"]:
                raise MalformedRow(1, "header must start with room_id,ts")
            modalities = header[2:]
            for name in modalities:
                if name not in self.schema:
                    raise UnknownModality(name)
            if len(set(modalities)) != len(modalities):
                raise MalformedRow(1, "duplicate modality column")

            staged: list[tuple[str, datetime, dict]] = []
            for line_no, fields in enumerate(reader, start=2):
                if not fields:
                    continue
                if len(fields) != len(header):
                    raise MalformedRow(line_no, f"expected {len(header)} fields, got {len(fields)}")
                room_id = fields[0].strip()
                if not room_id:
                    raise MalformedRow(line_no, "empty room_id")
                try:
                    ts = parse_ts(fields[1])
                except ValueError as exc:
                    raise MalformedRow(line_no, f"bad timestamp: {exc}") from None
                if ts.second != 0 or ts.microsecond != 0:
                    raise MalformedRow(line_no, "timestamp not minute-aligned")
                values: dict[str, float | None] = {}
                for name, raw in zip(modalities, fields[2:]):
                    raw = raw.strip()
                    if raw == "":
                        values[name] = None
                        continue
                    try:
                        values[name] = float(raw)
                    except ValueError:
                        raise MalformedRow(line_no, f"non-numeric {name}: {raw!r}") from None
                staged.append((room_id, ts, values))

        with self._lock:
            for room_id, ts, values in staged:
                row = {m: values.get(m) for m in self.schema}
                self._cells.setdefault(room_id, {})[ts] = row
            self._dirty = True
        return len(staged)

    # -- introspection ----------------------------------------------------

    def rooms(self) -> list[str]:
        return sorted(self._cells)

    @property
    def row_count(self) -> int:
        return sum(len(by_ts) for by_ts in self._cells.values())

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for room in sorted(self._cells):
            ts_list, cols = self._room_arrays(room)
            for i, ts in enumerate(ts_list):
                cells = ",".join(repr(cols[m][i]) for m in self.schema)
                digest.update(f"{room},{format_ts(ts)},{cells}\n".encode())
        return digest.hexdigest()

    def _room_arrays(self, room: str) -> tuple[list[datetime], dict[str, list]]:
        with self._lock:
            if self._dirty:
                self._built = {}
                for r, by_ts in self._cells.items():
                    ts_list = sorted(by_ts)
                    cols = {m: [by_ts[t][m] for t in ts_list] for m in self.schema}
                    self._built[r] = (ts_list, cols)
                self._dirty = False
            return self._built.get(room, ([], {m: [] for m in self.schema}))

    # -- reading -----------------------------------------------------------

    def range_scan(self, room_id: str, modality: str, t0: datetime, t1: datetime,
                   include_nulls: bool = False) -> DataTable:
        if modality not in self.schema:
            raise UnknownModality(modality)
        if t0 > t1:
            raise InvalidRange(f"{format_ts(t0)} > {format_ts(t1)}")
        ts_list, cols = self._room_arrays(room_id)
        lo = bisect_left(ts_list, t0)
        hi = bisect_right(ts_list, t1)
        values = cols[modality]
        rows: list[tuple] = []
        provenance: set[CellAddr] = set()
        for i in range(lo, hi):
            v = values[i]
            if v is None and not include_nulls:
                continue
            rows.append((ts_list[i], v))
            if v is not None:
                provenance.add((room_id, modality, ts_list[i]))
        return DataTable(
            columns=[Column("ts", "timestamp"), Column(modality, "number")],
            rows=rows,
            provenance=provenance,
        )

    def execute(self, stmt: SqlStatement) -> DataTable:
        """Evaluate one statement of the read-only subset."""
        ast = sql.parse_select(stmt.text)
        expected = ast.placeholder_count()
        if expected != len(stmt.params):
            raise SqlExec(f"statement has {expected} placeholders, got {len(stmt.params)} params")

        known = {"room_id", "ts", *self.schema}
        for item in ast.items:
            col = getattr(item, "column", getattr(item, "name", None))
            if col is not None and col not in known:
                raise SqlExec(f"unknown column {col!r}")
        for pred in ast.where:
            if pred.column not in known:
                raise SqlExec(f"unknown column {pred.column!r} in WHERE")

        if ast.limit is not None and ast.limit < 0:
            raise SqlExec("negative LIMIT")
        bound = self._bind(ast, list(stmt.params))
        matched = self._match_rows(ast, bound)

        if ast.group_by is not None:
            return self._run_grouped(ast, matched)
        if ast.agg_items:
            table = self._run_aggregates(ast, matched)
            if ast.limit is not None:
                table.rows = table.rows[: ast.limit]
            return table
        return self._run_projection(ast, matched)

    # -- evaluation helpers -------------------------------------------------

    def _bind(self, ast: sql.SelectStatement, params: list) -> dict:
        """Attach param values to predicates, in placeholder order."""
        it = iter(params)
        bound: dict[int, tuple] = {}
        for idx, pred in enumerate(ast.where):
            if isinstance(pred, sql.ComparePred):
                bound[idx] = (self._check_param(pred.column, next(it)),)
            elif isinstance(pred, sql.BetweenPred):
                lo = self._check_param(pred.column, next(it))
                hi = self._check_param(pred.column, next(it))
                bound[idx] = (lo, hi)
            else:
                bound[idx] = ()
        return bound

    def _check_param(self, column: str, value):
        if column == "room_id":
            if not isinstance(value, str):
                raise SqlExec(f"room_id param must be a string, got {type(value).__name__}")
            return value
        if column == "ts":
            if isinstance(value, str):
                try:
                    return parse_ts(value)
                except ValueError as exc:
                    raise SqlExec(f"bad ts param: {exc}") from None
            if isinstance(value, datetime):
                if value.tzinfo is None:
                    raise SqlExec("ts param must be tz-aware")
                return value.astimezone(timezone.utc)
            raise SqlExec(f"ts param must be a timestamp, got {type(value).__name__}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SqlExec(f"{column} param must be numeric, got {type(value).__name__}")
        return float(value)

    def _match_rows(self, ast: sql.SelectStatement, bound: dict) -> list[tuple]:
        """Rows satisfying the WHERE conjunction, sorted by (ts, room_id).

        Each entry is (ts, room, index, room column arrays); cell values are
        read straight out of the arrays so matching never copies a row.
        """
        room_eqs: list[str] = []
        ts_lo: datetime | None = None
        ts_hi: datetime | None = None
        ts_lo_open = False
        ts_hi_open = False
        rest: list[tuple] = []  # (pred, values)
        for idx, pred in enumerate(ast.where):
            values = bound[idx]
            if isinstance(pred, sql.ComparePred) and pred.column == "room_id" and pred.op == "=":
                room_eqs.append(values[0])
            elif pred.column == "ts" and isinstance(pred, sql.BetweenPred):
                lo, hi = values
                if ts_lo is None or lo > ts_lo:
                    ts_lo, ts_lo_open = lo, False
                if ts_hi is None or hi < ts_hi:
                    ts_hi, ts_hi_open = hi, False
            elif pred.column == "ts" and isinstance(pred, sql.ComparePred) and pred.op in ("<", ">", "="):
                v = values[0]
                if pred.op == "=":
                    if ts_lo is None or v > ts_lo:
                        ts_lo, ts_lo_open = v, False
                    if ts_hi is None or v < ts_hi:
                        ts_hi, ts_hi_open = v, False
                elif pred.op == ">":
                    if ts_lo is None or v >= ts_lo:
                        ts_lo, ts_lo_open = v, True
                else:
                    if ts_hi is None or v <= ts_hi:
                        ts_hi, ts_hi_open = v, True
            elif isinstance(pred, sql.NotNullPred) and pred.column in ("room_id", "ts"):
                continue  # never null
            else:
                rest.append((pred, values))

        if room_eqs:
            first = room_eqs[0]
            rooms = [first] if all(r == first for r in room_eqs) else []
        else:
            rooms = self.rooms()

        matched: list[tuple] = []
        for room in sorted(rooms):
            ts_list, cols = self._room_arrays(room)
            lo = 0 if ts_lo is None else (
                bisect_right(ts_list, ts_lo) if ts_lo_open else bisect_left(ts_list, ts_lo))
            hi = len(ts_list) if ts_hi is None else (
                bisect_left(ts_list, ts_hi) if ts_hi_open else bisect_right(ts_list, ts_hi))
            for i in range(lo, hi):
                ok = True
                for pred, values in rest:
                    if pred.column == "room_id":
                        cell = room
                    elif pred.column == "ts":
                        cell = ts_list[i]
                    else:
                        cell = cols[pred.column][i]
                    if isinstance(pred, sql.NotNullPred):
                        if cell is None:
                            ok = False
                            break
                        continue
                    if cell is None:
                        ok = False
                        break
                    if isinstance(pred, sql.BetweenPred):
                        lo_v, hi_v = values
                        if not (lo_v <= cell <= hi_v):
                            ok = False
                            break
                    else:
                        v = values[0]
                        if pred.op == "=" and cell != v:
                            ok = False
                            break
                        if pred.op == "<" and not cell < v:
                            ok = False
                            break
                        if pred.op == ">" and not cell > v:
                            ok = False
                            break
                if ok:
                    matched.append((ts_list[i], room, i, cols))
        matched.sort(key=lambda t: (t[0], t[1]))
        return matched

    @staticmethod
    def _cell_at(entry: tuple, column: str):
        ts, room, i, cols = entry
        if column == "ts":
            return ts
        if column == "room_id":
            return room
        return cols[column][i]

    def _run_projection(self, ast: sql.SelectStatement, matched) -> DataTable:
        columns = []
        for item in ast.items:
            name = item.name
            kind = "timestamp" if name == "ts" else ("string" if name == "room_id" else "number")
            columns.append(Column(name, kind))
        if ast.order_column is not None:
            matched = self._order(matched, ast.order_column, ast.order_desc)
        if ast.limit is not None:
            matched = matched[: ast.limit]
        names = [item.name for item in ast.items]
        rows = [tuple(self._cell_at(entry, name) for name in names)
                for entry in matched]
        provenance: set[CellAddr] = set()
        mods = [n for n in names if n in self.schema]
        for ts, room, i, cols in matched:
            for m in mods:
                if cols[m][i] is not None:
                    provenance.add((room, m, ts))
        return DataTable(columns=columns, rows=rows, provenance=provenance)

    def _order(self, matched, column: str, desc: bool):
        if column == "ts":
            key = lambda t: (t[0], t[1])
        elif column == "room_id":
            key = lambda t: (t[1], t[0])
        elif column in self.schema:
            # nulls sort last regardless of direction
            def value(t):
                return t[3][column][t[2]]

            if desc:
                return sorted(
                    matched,
                    key=lambda t: ((value(t) is None),
                                   -(value(t) if value(t) is not None else 0.0),
                                   t[0], t[1]),
                )
            return sorted(
                matched,
                key=lambda t: ((value(t) is None),
                               value(t) if value(t) is not None else 0.0,
                               t[0], t[1]),
            )
        else:
            raise SqlExec(f"unknown column {column!r} in ORDER BY")
        return sorted(matched, key=key, reverse=desc)

    @staticmethod
    def _aggregate(func: str, values: list) -> float | None:
        if func == "count":
            return float(len(values))
        if not values:
            return None
        if func == "avg":
            return sum(values) / len(values)
        if func == "min":
            return min(values)
        if func == "max":
            return max(values)
        if func == "sum":
            return sum(values)
        raise SqlExec(f"unknown aggregate {func!r}")

    def _agg_inputs(self, item: sql.AggItem, matched) -> tuple[list, set]:
        col = item.column
        values = []
        cells: set[CellAddr] = set()
        in_schema = col in self.schema
        for entry in matched:
            ts, room, i, cols = entry
            v = cols[col][i] if in_schema else self._cell_at(entry, col)
            if v is None:
                continue
            values.append(v)
            if in_schema:
                cells.add((room, col, ts))
        return values, cells

    def _run_aggregates(self, ast: sql.SelectStatement, matched) -> DataTable:
        if ast.order_column is not None:
            raise SqlExec("ORDER BY over a single aggregate row")
        columns = []
        out = []
        provenance: set[CellAddr] = set()
        for item in ast.items:
            values, cells = self._agg_inputs(item, matched)
            out.append(self._aggregate(item.func, values))
            provenance |= cells
            columns.append(Column(f"{item.func}_{item.column}", "number"))
        return DataTable(columns=columns, rows=[tuple(out)], provenance=provenance)

    def _run_grouped(self, ast: sql.SelectStatement, matched) -> DataTable:
        unit = ast.group_by.unit
        buckets: dict[datetime, list] = {}
        for entry in matched:
            buckets.setdefault(trunc_ts(entry[0], unit), []).append(entry)
        keys = sorted(buckets)
        if ast.order_column is not None:
            if ast.order_column != "ts":
                raise SqlExec("grouped ORDER BY supports the bucket (ts) only")
            if ast.order_desc:
                keys = list(reversed(keys))
        if ast.limit is not None:
            keys = keys[: ast.limit]
        columns = []
        for item in ast.items:
            if isinstance(item, sql.TruncItem):
                columns.append(Column("ts", "timestamp"))
            else:
                columns.append(Column(f"{item.func}_{item.column}", "number"))
        rows = []
        provenance: set[CellAddr] = set()
        for key in keys:
            group = buckets[key]
            out = []
            for item in ast.items:
                if isinstance(item, sql.TruncItem):
                    out.append(key)
                    continue
                values, cells = self._agg_inputs(item, group)
                out.append(self._aggregate(item.func, values))
                provenance |= cells
            rows.append(tuple(out))
        return DataTable(columns=columns, rows=rows, provenance=provenance)
