"""Read-only SQL subset over the single wide `readings` table.

The accepted shape is deliberately tiny so every statement the planner can
cause to exist is also a statement the evaluator fully understands:

    SELECT <item, ...> FROM readings
    [WHERE <pred> AND <pred> ...]
    [GROUP BY DATE_TRUNC('day'|'hour', ts)]
    [ORDER BY <column> [ASC|DESC]]
    [LIMIT <n>]

    item ::= column | AVG(col) | MIN(col) | MAX(col) | SUM(col) | COUNT(col)
           | DATE_TRUNC('day'|'hour', ts)
    pred ::= col = ? | col < ? | col > ? | col BETWEEN ? AND ? | col IS NOT NULL

All literals except the LIMIT count and the DATE_TRUNC unit arrive as bound
parameters.  Joins, subqueries, OR, IN, inequality operators beyond < and >,
and writes of any kind are rejected with SqlUnsupported.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import SqlUnsupported

AGG_FUNCS = ("avg", "min", "max", "sum", "count")
TRUNC_UNITS = ("day", "hour")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<string>'[^']*')"
    r"|(?P<int>\d+)"
    r"|(?P<sym>[(),?=<>])"
    r"|(?P<bad>\S))"
)


@dataclass(frozen=True)
class ColumnItem:
    name: str


@dataclass(frozen=True)
class AggItem:
    func: str  # one of AGG_FUNCS
    column: str


@dataclass(frozen=True)
class TruncItem:
    unit: str  # one of TRUNC_UNITS


@dataclass(frozen=True)
class ComparePred:
    column: str
    op: str  # "=", "<", ">"


@dataclass(frozen=True)
class BetweenPred:
    column: str


@dataclass(frozen=True)
class NotNullPred:
    column: str


@dataclass(frozen=True)
class SelectStatement:
    items: tuple
    where: tuple
    group_by: TruncItem | None
    order_column: str | None
    order_desc: bool
    limit: int | None

    @property
    def agg_items(self) -> tuple[AggItem, ...]:
        return tuple(i for i in self.items if isinstance(i, AggItem))

    def placeholder_count(self) -> int:
        n = 0
        for pred in self.where:
            n += 2 if isinstance(pred, BetweenPred) else 0
            n += 1 if isinstance(pred, ComparePred) else 0
        return n


def tokenize(text: str) -> list[tuple[str, str]]:
    tokens: list[tuple[str, str]] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            break
        if m.lastgroup == "bad":
            raise SqlUnsupported(f"unexpected character {m.group('bad')!r}")
        if m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident")))
        elif m.lastgroup == "string":
            tokens.append(("string", m.group("string")[1:-1]))
        elif m.lastgroup == "int":
            tokens.append(("int", m.group("int")))
        elif m.lastgroup == "sym":
            tokens.append(("sym", m.group("sym")))
        pos = m.end()
    return tokens


class _Cursor:
    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise SqlUnsupported("statement ends early")
        self.pos += 1
        return tok

    def keyword(self, *words: str) -> None:
        for word in words:
            kind, value = self.next()
            if kind != "ident" or value.lower() != word:
                raise SqlUnsupported(f"expected {word.upper()}, got {value!r}")

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[0] == "ident" and tok[1].lower() == word

    def symbol(self, sym: str) -> None:
        kind, value = self.next()
        if kind != "sym" or value != sym:
            raise SqlUnsupported(f"expected {sym!r}, got {value!r}")

    def ident(self) -> str:
        kind, value = self.next()
        if kind != "ident":
            raise SqlUnsupported(f"expected identifier, got {value!r}")
        name = value.lower()
        if not re.fullmatch(r"[a-z][a-z0-9_]*", name):
            raise SqlUnsupported(f"bad identifier {value!r}")
        return name


_KEYWORDS = {
    "select", "from", "where", "and", "group", "by", "order", "limit",
    "between", "is", "not", "null", "asc", "desc", "date_trunc", "readings",
} | set(AGG_FUNCS)


def _parse_trunc(cur: _Cursor) -> TruncItem:
    cur.symbol("(")
    kind, unit = cur.next()
    if kind != "string" or unit not in TRUNC_UNITS:
        raise SqlUnsupported(f"DATE_TRUNC unit must be 'day' or 'hour', got {unit!r}")
    cur.symbol(",")
    col = cur.ident()
    if col != "ts":
        raise SqlUnsupported("DATE_TRUNC applies to ts only")
    cur.symbol(")")
    return TruncItem(unit)


def _parse_select_item(cur: _Cursor):
    name = cur.ident()
    if name == "date_trunc":
        return _parse_trunc(cur)
    if name in AGG_FUNCS:
        cur.symbol("(")
        col = cur.ident()
        if col in _KEYWORDS:
            raise SqlUnsupported(f"aggregate over keyword {col!r}")
        cur.symbol(")")
        return AggItem(name, col)
    if name in _KEYWORDS:
        raise SqlUnsupported(f"keyword {name!r} where a column was expected")
    return ColumnItem(name)


def _parse_pred(cur: _Cursor):
    col = cur.ident()
    if col in _KEYWORDS:
        raise SqlUnsupported(f"keyword {col!r} where a column was expected")
    tok = cur.peek()
    if tok is None:
        raise SqlUnsupported("dangling predicate")
    if tok[0] == "sym" and tok[1] in ("=", "<", ">"):
        cur.next()
        cur.symbol("?")
        return ComparePred(col, tok[1])
    if tok[0] == "ident" and tok[1].lower() == "between":
        cur.next()
        cur.symbol("?")
        cur.keyword("and")
        cur.symbol("?")
        return BetweenPred(col)
    if tok[0] == "ident" and tok[1].lower() == "is":
        cur.next()
        cur.keyword("not", "null")
        return NotNullPred(col)
    raise SqlUnsupported(f"unsupported predicate near {tok[1]!r}")


def parse_select(text: str) -> SelectStatement:
    """Parse one statement of the subset; raise SqlUnsupported otherwise."""
    cur = _Cursor(tokenize(text))
    cur.keyword("select")

    items = [_parse_select_item(cur)]
    while cur.peek() == ("sym", ","):
        cur.next()
        items.append(_parse_select_item(cur))

    cur.keyword("from")
    table = cur.ident()
    if table != "readings":
        raise SqlUnsupported(f"only the readings table exists, got {table!r}")

    where: list = []
    if cur.at_keyword("where"):
        cur.next()
        where.append(_parse_pred(cur))
        while cur.at_keyword("and"):
            cur.next()
            where.append(_parse_pred(cur))

    group_by: TruncItem | None = None
    if cur.at_keyword("group"):
        cur.next()
        cur.keyword("by")
        name = cur.ident()
        if name != "date_trunc":
            raise SqlUnsupported("GROUP BY supports DATE_TRUNC only")
        group_by = _parse_trunc(cur)

    order_column: str | None = None
    order_desc = False
    if cur.at_keyword("order"):
        cur.next()
        cur.keyword("by")
        order_column = cur.ident()
        if order_column in _KEYWORDS:
            raise SqlUnsupported(f"keyword {order_column!r} in ORDER BY")
        if cur.at_keyword("asc"):
            cur.next()
        elif cur.at_keyword("desc"):
            cur.next()
            order_desc = True

    limit: int | None = None
    if cur.at_keyword("limit"):
        cur.next()
        kind, value = cur.next()
        if kind != "int":
            raise SqlUnsupported(f"LIMIT takes an integer literal, got {value!r}")
        limit = int(value)

    trailing = cur.peek()
    if trailing is not None:
        raise SqlUnsupported(f"trailing input near {trailing[1]!r}")

    plain = [i for i in items if isinstance(i, ColumnItem)]
    aggs = [i for i in items if isinstance(i, AggItem)]
    truncs = [i for i in items if isinstance(i, TruncItem)]
    if group_by is None:
        if truncs:
            raise SqlUnsupported("DATE_TRUNC in SELECT requires GROUP BY")
        if aggs and plain:
            raise SqlUnsupported("cannot mix plain columns with aggregates")
    else:
        if plain:
            raise SqlUnsupported("plain columns are not allowed under GROUP BY")
        if not aggs:
            raise SqlUnsupported("GROUP BY requires at least one aggregate")
        for t in truncs:
            if t.unit != group_by.unit:
                raise SqlUnsupported("SELECT DATE_TRUNC unit differs from GROUP BY")
    return SelectStatement(
        items=tuple(items),
        where=tuple(where),
        group_by=group_by,
        order_column=order_column,
        order_desc=order_desc,
        limit=limit,
    )
