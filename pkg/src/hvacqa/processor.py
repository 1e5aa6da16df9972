"""Follow-up computation over retrieved tables.

The planner references these operations by name; each one is typed over a
small set of value kinds (scalar, timestamp, text, table, row, comparison)
and the whole algebra is closed: an unknown name is a plan defect, not a
hook into Python.  Deployments may register extra operations explicitly via
OpRegistry.register.

Null discipline: the builder path never delivers null cells, so a null
encountered here is either the aggregate-over-nothing convention (a single
all-null row, reported as MissingData) or an upstream leak (InternalNull).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from time import perf_counter

from .context import Metadata, display_timestamp, format_number, render_table
from .errors import (
    HvacQaError,
    InternalNull,
    KindMismatch,
    MissingData,
    PlanInvalid,
)
from .store import Column, DataTable, parse_ts, trunc_ts

EQUAL_TOLERANCE = 1e-9

KIND_SCALAR = "scalar"
KIND_TIMESTAMP = "timestamp"
KIND_TEXT = "text"
KIND_TABLE = "table"
KIND_ROW = "row"
KIND_COMPARISON = "comparison"


@dataclass(frozen=True)
class Row:
    columns: tuple
    values: tuple
    provenance: frozenset = frozenset()

    def value(self, label: str):
        for col, v in zip(self.columns, self.values):
            if col.label == label:
                return v
        raise KindMismatch(f"row has no column {label!r}")


@dataclass(frozen=True)
class ComparisonResult:
    diff: float
    relation: str  # "less" | "equal" | "greater"


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class ProcessExpr:
    op: str
    args: tuple = ()
    options: dict = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "options", dict(self.options or {}))
        if not re.fullmatch(r"[a-z][a-z0-9_]*", self.op):
            raise PlanInvalid(f"bad op name {self.op!r}")


def kind_of(value) -> str:
    if isinstance(value, bool):
        raise KindMismatch("boolean is not a value kind")
    if isinstance(value, (int, float)):
        return KIND_SCALAR
    if isinstance(value, datetime):
        return KIND_TIMESTAMP
    if isinstance(value, str):
        return KIND_TEXT
    if isinstance(value, DataTable):
        return KIND_TABLE
    if isinstance(value, Row):
        return KIND_ROW
    if isinstance(value, ComparisonResult):
        return KIND_COMPARISON
    raise KindMismatch(f"unsupported value type {type(value).__name__}")


class Env:
    """Insertion-ordered, write-once variable bindings."""

    def __init__(self):
        self._values: dict[str, object] = {}

    def bind(self, name: str, value) -> None:
        if name in self._values:
            raise PlanInvalid(f"variable {name!r} already bound")
        self._values[name] = value

    def get(self, name: str):
        if name not in self._values:
            raise PlanInvalid(f"unknown variable {name!r}")
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()


# -- op helpers ----------------------------------------------------------


def _named_column(table: DataTable, options: dict, kind: str | None = "number") -> int:
    name = options.get("column")
    if name is not None:
        try:
            idx = table.column_index(name)
        except KeyError:
            raise KindMismatch(f"no column {name!r} in table "
                               f"({', '.join(table.labels())})") from None
        if kind is not None and table.columns[idx].kind != kind:
            raise KindMismatch(f"column {name!r} is {table.columns[idx].kind}, needs {kind}")
        return idx
    candidates = [i for i, c in enumerate(table.columns) if kind is None or c.kind == kind]
    if len(candidates) != 1:
        raise KindMismatch(
            f"column option required: {len(candidates)} {kind} columns present")
    return candidates[0]


def _numeric_values(table: DataTable, idx: int) -> list[float]:
    if not table.rows:
        raise MissingData("operation needs at least one row")
    values = [row[idx] for row in table.rows]
    concrete = [v for v in values if v is not None]
    if not concrete:
        raise MissingData("column holds no values")
    if len(concrete) != len(values):
        raise InternalNull("null cell reached a computation")
    return concrete


def _ts_index(table: DataTable) -> int | None:
    for i, col in enumerate(table.columns):
        if col.label == "ts" and col.kind == "timestamp":
            return i
    for i, col in enumerate(table.columns):
        if col.kind == "timestamp":
            return i
    return None


def _stat(func):
    def op(args, options, meta):
        table = args[0]
        if func == "count" and "column" not in options:
            if not table.rows:
                raise MissingData("operation needs at least one row")
            return float(len(table.rows))
        values = _numeric_values(table, _named_column(table, options))
        if func == "count":
            return float(len(values))
        if func == "mean":
            return sum(values) / len(values)
        if func == "min":
            return min(values)
        if func == "max":
            return max(values)
        return sum(values)

    return op


def _arg_extreme(best):
    def op(args, options, meta):
        table = args[0]
        idx = _named_column(table, options)
        _numeric_values(table, idx)  # null/emptiness discipline
        ts_idx = _ts_index(table)
        chosen = None
        chosen_key = None
        for row_i, row in enumerate(table.rows):
            tie = (row[ts_idx], row_i) if ts_idx is not None else (row_i,)
            key = (row[idx], tie)
            if chosen_key is None:
                chosen, chosen_key = row, key
                continue
            better = key[0] > chosen_key[0] if best == "max" else key[0] < chosen_key[0]
            if better or (key[0] == chosen_key[0] and key[1] < chosen_key[1]):
                chosen, chosen_key = row, key
        return Row(tuple(table.columns), tuple(chosen),
                   frozenset(table.provenance))

    return op


def _select_column(args, options, meta):
    source = args[0]
    if isinstance(source, Row):
        name = options.get("column")
        if name is None:
            raise KindMismatch("select_column over a row needs a column name")
        value = source.value(name)
        if value is None:
            raise InternalNull(f"column {name!r} is null")
        return value
    idx = _named_column(source, options, kind=None)
    col = source.columns[idx]
    return DataTable(
        columns=[Column(col.label, col.kind)],
        rows=[(row[idx],) for row in source.rows],
        provenance=set(source.provenance),
    )


def _resample(args, options, meta):
    table = args[0]
    unit = options.get("unit")
    agg = options.get("agg")
    if unit not in ("day", "hour"):
        raise KindMismatch(f"resample unit must be day or hour, got {unit!r}")
    if agg not in ("mean", "min", "max", "sum", "count"):
        raise KindMismatch(f"resample agg must be a statistic, got {agg!r}")
    ts_idx = _ts_index(table)
    if ts_idx is None:
        raise KindMismatch("resample needs a timestamp column")
    val_idx = _named_column(table, options)
    label = f"{agg}_{table.columns[val_idx].label}"
    buckets: dict[datetime, list[float]] = {}
    for row in table.rows:
        v = row[val_idx]
        if v is None:
            raise InternalNull("null cell reached resample")
        buckets.setdefault(trunc_ts(row[ts_idx], unit), []).append(v)
    rows = []
    for key in sorted(buckets):
        values = buckets[key]
        if agg == "count":
            out = float(len(values))
        elif agg == "mean":
            out = sum(values) / len(values)
        elif agg == "min":
            out = min(values)
        elif agg == "max":
            out = max(values)
        else:
            out = sum(values)
        rows.append((key, out))
    return DataTable(
        columns=[Column("ts", "timestamp"), Column(label, "number")],
        rows=rows,
        provenance=set(table.provenance),
    )


_COMPARATORS = {
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _filter_rows(args, options, meta):
    table = args[0]
    pred = options.get("predicate")
    if not isinstance(pred, dict):
        raise KindMismatch("filter_rows needs a predicate {column, comparator, literal}")
    column = pred.get("column")
    comparator = pred.get("comparator")
    literal = pred.get("literal")
    if comparator not in _COMPARATORS:
        raise KindMismatch(f"unknown comparator {comparator!r}")
    idx = _named_column(table, {"column": column}, kind=None)
    col = table.columns[idx]
    if col.kind == "number":
        if isinstance(literal, bool) or not isinstance(literal, (int, float)):
            raise KindMismatch(f"numeric column {column!r} needs a numeric literal")
        literal = float(literal)
    elif col.kind == "timestamp":
        if isinstance(literal, str):
            try:
                literal = parse_ts(literal)
            except ValueError as exc:
                raise KindMismatch(f"bad timestamp literal: {exc}") from None
        elif not isinstance(literal, datetime):
            raise KindMismatch(f"timestamp column {column!r} needs a timestamp literal")
    else:
        literal = str(literal)
    test = _COMPARATORS[comparator]
    rows = [row for row in table.rows
            if row[idx] is not None and test(row[idx], literal)]
    return DataTable(columns=list(table.columns), rows=rows,
                     provenance=set(table.provenance))


def _compare(args, options, meta):
    a, b = args
    diff = float(a) - float(b)
    if abs(diff) <= EQUAL_TOLERANCE:
        relation = "equal"
    elif diff < 0:
        relation = "less"
    else:
        relation = "greater"
    return ComparisonResult(diff=diff, relation=relation)


def _round_to(args, options, meta):
    digits = options.get("digits", 0)
    if isinstance(digits, bool) or not isinstance(digits, int) or digits < 0:
        raise KindMismatch(f"round_to digits must be a non-negative integer, got {digits!r}")
    return float(round(float(args[0]), digits))


def _edge(which):
    def op(args, options, meta):
        table = args[0]
        if not table.rows:
            raise MissingData("operation needs at least one row")
        ts_idx = _ts_index(table)
        if ts_idx is None:
            row = table.rows[0] if which == "first" else table.rows[-1]
        else:
            indexed = list(enumerate(table.rows))
            key = lambda pair: (pair[1][ts_idx], pair[0])
            row = (min(indexed, key=key) if which == "first" else max(indexed, key=key))[1]
        return Row(tuple(table.columns), tuple(row), frozenset(table.provenance))

    return op


def _top_k(args, options, meta):
    table = args[0]
    k = options.get("k")
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise KindMismatch(f"top_k needs integer k >= 1, got {k!r}")
    direction = options.get("direction", "desc")
    if direction not in ("asc", "desc"):
        raise KindMismatch(f"top_k direction must be asc or desc, got {direction!r}")
    idx = _named_column(table, options)
    if table.rows:
        _numeric_values(table, idx)
    ts_idx = _ts_index(table)
    indexed = list(enumerate(table.rows))
    indexed.sort(key=lambda pair: (pair[1][ts_idx], pair[0]) if ts_idx is not None else pair[0])
    indexed.sort(key=lambda pair: pair[1][idx], reverse=(direction == "desc"))
    return DataTable(columns=list(table.columns),
                     rows=[row for _, row in indexed[:k]],
                     provenance=set(table.provenance))


class OpRegistry:
    """Named operations: name -> (arity, accepted kinds per arg, callback)."""

    def __init__(self):
        self._ops: dict[str, tuple[int, tuple, object]] = {}

    def register(self, name: str, arity: int, kinds: tuple, callback) -> None:
        if name in self._ops:
            raise ValueError(f"op {name!r} already registered")
        if len(kinds) != arity:
            raise ValueError("one kind set per argument")
        self._ops[name] = (arity, tuple(tuple(k) for k in kinds), callback)

    def lookup(self, name: str):
        if name not in self._ops:
            raise PlanInvalid(f"unknown op {name!r}")
        return self._ops[name]

    def names(self) -> list[str]:
        return sorted(self._ops)


def default_registry() -> OpRegistry:
    reg = OpRegistry()
    for stat in ("mean", "min", "max", "sum", "count"):
        reg.register(stat, 1, ((KIND_TABLE,),), _stat(stat))
    reg.register("argmax", 1, ((KIND_TABLE,),), _arg_extreme("max"))
    reg.register("argmin", 1, ((KIND_TABLE,),), _arg_extreme("min"))
    reg.register("select_column", 1, ((KIND_TABLE, KIND_ROW),), _select_column)
    reg.register("resample", 1, ((KIND_TABLE,),), _resample)
    reg.register("filter_rows", 1, ((KIND_TABLE,),), _filter_rows)
    reg.register("compare", 2, ((KIND_SCALAR,), (KIND_SCALAR,)), _compare)
    reg.register("round_to", 1, ((KIND_SCALAR,),), _round_to)
    reg.register("first", 1, ((KIND_TABLE,),), _edge("first"))
    reg.register("last", 1, ((KIND_TABLE,),), _edge("last"))
    reg.register("top_k", 1, ((KIND_TABLE,),), _top_k)
    return reg


DEFAULT_OPS = default_registry()


def eval_expr(expr: ProcessExpr, env: Env, meta: Metadata | None = None,
              registry: OpRegistry | None = None):
    registry = registry or DEFAULT_OPS
    arity, kinds, callback = registry.lookup(expr.op)
    if len(expr.args) != arity:
        raise PlanInvalid(f"op {expr.op!r} takes {arity} args, got {len(expr.args)}")
    resolved = []
    for arg, accepted in zip(expr.args, kinds):
        value = env.get(arg.name) if isinstance(arg, VarRef) else arg
        kind = kind_of(value)
        if kind not in accepted:
            raise KindMismatch(
                f"op {expr.op!r} got {kind}, accepts {'/'.join(accepted)}")
        if kind == KIND_SCALAR:
            value = float(value)
        resolved.append(value)
    return callback(tuple(resolved), expr.options, meta)


@dataclass(frozen=True)
class AssignmentFailure:
    target: str
    error: HvacQaError


def run_assignments(assignments, *, query_executor, env: Env | None = None,
                    meta: Metadata | None = None,
                    registry: OpRegistry | None = None,
                    observer=None):
    """Bind each assignment's value in order; stop at the first failure.

    Query-kind (and raw statement) payloads go through query_executor;
    process payloads evaluate here.  The partial Env comes back alongside
    the failure so the responder can still ground a truthful partial answer.
    The observer, when given, sees (assignment, seconds, error | None).
    """
    env = env if env is not None else Env()
    for assignment in assignments:
        started = perf_counter()
        try:
            if assignment.kind == "process":
                value = eval_expr(assignment.spec, env, meta=meta, registry=registry)
            else:
                value = query_executor(assignment)
            env.bind(assignment.target, value)
        except HvacQaError as exc:
            if observer is not None:
                observer(assignment, perf_counter() - started, exc)
            return env, AssignmentFailure(assignment.target, exc)
        if observer is not None:
            observer(assignment, perf_counter() - started, None)
    return env, None


# -- rendering -----------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


def render_value(value, meta: Metadata | None = None) -> str:
    kind = kind_of(value)
    if kind == KIND_SCALAR:
        return format_number(value)
    if kind == KIND_TIMESTAMP:
        return display_timestamp(value, meta)
    if kind == KIND_TEXT:
        return value
    if kind == KIND_COMPARISON:
        if value.relation == "equal":
            return "the same"
        word = "higher" if value.relation == "greater" else "lower"
        return f"{word} by {format_number(abs(value.diff))}"
    if kind == KIND_ROW:
        return ", ".join(
            f"{col.label}={render_value(v, meta) if v is not None else 'null'}"
            for col, v in zip(value.columns, value.values))
    # table
    if value.row_count == 1 and len(value.columns) == 1:
        cell = value.rows[0][0]
        return "null" if cell is None else render_value(cell, meta)
    if value.row_count == 1:
        return render_value(
            Row(tuple(value.columns), tuple(value.rows[0])), meta)
    return render_table(value, max_rows=20, meta=meta)


def render_values(env: Env, template: str, meta: Metadata | None = None) -> tuple[str, list[str]]:
    """Fill {name} placeholders from the environment.

    Unresolvable placeholders stay literal and come back as residuals; a
    clean answer requires the residual list to be empty.
    """
    residuals: list[str] = []

    def fill(match: re.Match) -> str:
        name = match.group(1)
        if name not in env:
            if name not in residuals:
                residuals.append(name)
            return match.group(0)
        return render_value(env.get(name), meta)

    return _PLACEHOLDER_RE.sub(fill, template), residuals


def dump_env(env: Env, meta: Metadata | None = None) -> str:
    """Raw name-by-name rendering, used when no expectation template applies."""
    lines = []
    for name, value in env.items():
        rendered = render_value(value, meta)
        if "\n" in rendered:
            lines.append(f"{name}:\n{rendered}")
        else:
            lines.append(f"{name}: {rendered}")
    return "\n".join(lines)
