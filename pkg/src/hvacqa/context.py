"""Deployment context: term taxonomy, persona, preferences, prompt budgeting.

Context comes in three categories and each one has a fixed injection channel:

    hvac_common       -> system_prompt      (static domain guidance)
    deployment_user   -> inference_prompt   (per-request metadata block)
    sensor            -> inference_prompt   when small enough to inline,
                         processed_prompt   when it must be summarized first

The registry owns user-term resolution ("my room" -> "room101") and the
display-timezone conversion for timestamps; everything internal stays UTC.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import yaml

from .errors import BudgetTooSmall, ConfigInvalid, UnknownTaxonomy
from .store import DataTable, format_ts

SMALL_TABLE_ROWS = 64

CHANNEL_SYSTEM = "system_prompt"
CHANNEL_INFERENCE = "inference_prompt"
CHANNEL_PROCESSED = "processed_prompt"

_IDENT_RE = re.compile(r"[a-z][a-z0-9_]*")


def normalize_term(term: str) -> str:
    """Whitespace-collapsed, casefolded key form of a user term."""
    return " ".join(term.split()).casefold()


@dataclass(frozen=True)
class Metadata:
    taxonomy: dict  # normalized user term -> database-native term
    persona: str
    preferences: dict = field(default_factory=dict)
    now: datetime | None = None

    def with_now(self, now: datetime) -> "Metadata":
        if now.tzinfo is None:
            raise ValueError("now must be tz-aware")
        return replace(self, now=now.astimezone(timezone.utc))

    def display_offset(self) -> timedelta:
        raw = str(self.preferences.get("timezone", "+00:00"))
        m = re.fullmatch(r"([+-])(\d{2}):(\d{2})", raw)
        if m is None:
            raise ConfigInvalid(f"bad timezone preference {raw!r}")
        sign = 1 if m.group(1) == "+" else -1
        return sign * timedelta(hours=int(m.group(2)), minutes=int(m.group(3)))


def resolve_term(term: str, *sources: dict) -> str:
    """Resolve a user-native term through mapping layers, in order.

    Sources are consulted first-hit-wins (a plan's local mapping shadows the
    deployment taxonomy).  A miss in every layer raises UnknownTaxonomy.
    """
    key = normalize_term(term)
    for source in sources:
        if source and key in source:
            return source[key]
    raise UnknownTaxonomy(term)


def load_metadata(path, schema: list[str] | None = None,
                  rooms: list[str] | None = None) -> Metadata:
    """Read a metadata document; validate taxonomy targets against the store.

    Every taxonomy value must be either a known modality (when a schema is
    given) or a known room identifier (when the store already holds rooms).
    """
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigInvalid(f"{path}: metadata document must be a mapping")
    persona = doc.get("persona")
    if not isinstance(persona, str) or not persona.strip():
        raise ConfigInvalid(f"{path}: persona must be a non-empty string")
    taxonomy_raw = doc.get("taxonomy", {})
    if not isinstance(taxonomy_raw, dict):
        raise ConfigInvalid(f"{path}: taxonomy must be a mapping")
    taxonomy: dict[str, str] = {}
    for key, value in taxonomy_raw.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise ConfigInvalid(f"{path}: taxonomy entries must map string to string")
        target = value.strip()
        if not _IDENT_RE.fullmatch(target):
            raise ConfigInvalid(f"{path}: taxonomy target {target!r} is not a database identifier")
        taxonomy[normalize_term(key)] = target
    if schema is not None:
        known_rooms = set(rooms or [])
        for key, target in taxonomy.items():
            if target in schema:
                continue
            if known_rooms and target not in known_rooms:
                raise ConfigInvalid(
                    f"{path}: taxonomy target {target!r} ({key!r}) matches no modality or room")
    preferences = doc.get("preferences", {}) or {}
    if not isinstance(preferences, dict):
        raise ConfigInvalid(f"{path}: preferences must be a mapping")
    return Metadata(taxonomy=taxonomy, persona=persona.strip(), preferences=dict(preferences))


@dataclass(frozen=True)
class ContextItem:
    name: str
    category: str  # "hvac_common" | "deployment_user" | "sensor"
    payload: object  # str | DataTable

    def __post_init__(self):
        if self.category not in ("hvac_common", "deployment_user", "sensor"):
            raise ConfigInvalid(f"bad context category {self.category!r}")


def classify(item: ContextItem, small_rows: int = SMALL_TABLE_ROWS) -> str:
    """Injection channel for one context item."""
    if item.category == "hvac_common":
        return CHANNEL_SYSTEM
    if item.category == "deployment_user":
        return CHANNEL_INFERENCE
    if isinstance(item.payload, DataTable) and item.payload.row_count > small_rows:
        return CHANNEL_PROCESSED
    return CHANNEL_INFERENCE


def display_timestamp(dt: datetime, meta: Metadata | None = None) -> str:
    """Compact local-display form; date alone when the time is midnight."""
    offset = meta.display_offset() if meta is not None else timedelta(0)
    local = dt.astimezone(timezone.utc) + offset
    text = local.strftime("%Y-%m-%d")
    if local.hour or local.minute or local.second:
        text += local.strftime(" %H:%M")
    if offset:
        total = int(offset.total_seconds())
        sign = "+" if total >= 0 else "-"
        total = abs(total)
        text += f" ({sign}{total // 3600:02d}:{total % 3600 // 60:02d})"
    return text


def render_table(table: DataTable, max_rows: int | None = None,
                 meta: Metadata | None = None) -> str:
    """Line-oriented table text for prompts; deterministic."""
    header = ", ".join(table.labels())
    lines = [header]
    rows = table.rows if max_rows is None else table.rows[:max_rows]
    for row in rows:
        parts = []
        for value, col in zip(row, table.columns):
            if value is None:
                parts.append("null")
            elif col.kind == "timestamp":
                parts.append(display_timestamp(value, meta))
            elif col.kind == "number":
                parts.append(format_number(value))
            else:
                parts.append(str(value))
        lines.append(", ".join(parts))
    if max_rows is not None and table.row_count > max_rows:
        lines.append(f"... ({table.row_count - max_rows} more rows)")
    return "\n".join(lines)


def summarize_table(table: DataTable, meta: Metadata | None = None) -> str:
    """Compact stand-in for a table too large to inline into a prompt."""
    head = render_table(
        DataTable(table.columns, table.rows[:5], set()), meta=meta)
    parts = [f"{table.row_count} rows of ({', '.join(table.labels())}); first rows:", head]
    if table.row_count > 10:
        tail = render_table(DataTable(table.columns, table.rows[-5:], set()), meta=meta)
        parts.append("last rows:")
        parts.append(tail)
    return "\n".join(parts)


def format_number(value: float) -> str:
    """Shortest decimal with at most two fraction digits."""
    text = f"{round(float(value), 2):.2f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def render_metadata_block(meta: Metadata) -> str:
    lines = [f"persona: {meta.persona}"]
    if meta.now is not None:
        lines.append(f"current time: {format_ts(meta.now)}")
    if meta.taxonomy:
        lines.append("terms:")
        for key in sorted(meta.taxonomy):
            lines.append(f"  {key} -> {meta.taxonomy[key]}")
    prefs = {k: v for k, v in sorted(meta.preferences.items())}
    if prefs:
        lines.append("preferences:")
        for key, value in prefs.items():
            lines.append(f"  {key}: {value}")
    return "\n".join(lines)


_CATEGORY_ORDER = {"deployment_user": 0, "hvac_common": 1, "sensor": 2}


def render_prompt_block(items: list[ContextItem], budget: int,
                        meta: Metadata | None = None,
                        small_rows: int = SMALL_TABLE_ROWS) -> tuple[str, list[str]]:
    """Render context items into one prompt block within a character budget.

    Items render in a fixed order: deployment/user metadata first, then
    inline sensor tables, then summaries of the large ones.  Whole items are
    dropped (and reported) when the budget runs out; the mandatory metadata
    block alone exceeding the budget raises BudgetTooSmall.
    """
    ordered = sorted(
        enumerate(items),
        key=lambda pair: (_CATEGORY_ORDER[pair[1].category],
                          classify(pair[1], small_rows) == CHANNEL_PROCESSED,
                          pair[0]),
    )
    rendered: list[tuple[ContextItem, str]] = []
    for _, item in ordered:
        if isinstance(item.payload, DataTable):
            if classify(item, small_rows) == CHANNEL_PROCESSED:
                body = summarize_table(item.payload, meta)
            else:
                body = render_table(item.payload, meta=meta)
        else:
            body = str(item.payload)
        rendered.append((item, f"[{item.name}]\n{body}"))

    mandatory = [text for item, text in rendered if item.category == "deployment_user"]
    mandatory_size = sum(len(t) + 2 for t in mandatory)
    if mandatory_size > budget:
        raise BudgetTooSmall(f"metadata block needs {mandatory_size} chars, budget {budget}")

    parts: list[str] = []
    dropped: list[str] = []
    used = 0
    for item, text in rendered:
        cost = len(text) + 2
        if item.category != "deployment_user" and used + cost > budget:
            dropped.append(item.name)
            continue
        parts.append(text)
        used += cost
    return "\n\n".join(parts), dropped
