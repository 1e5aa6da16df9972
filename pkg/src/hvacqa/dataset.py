"""Seeded synthetic telemetry plus an oracle-tagged QA suite.

One call to generate_dataset() writes everything an offline evaluation run
needs: a readings CSV, per-persona metadata documents, a manifest, the QA
items with brute-forced truth cells and expected values, and scripted
planner fixtures for the full pipeline and each degraded variant.  The
fixtures are authored against the same generated arrays the truth cells
come from, so a correct pipeline scores exactly 1.0 on the full
configuration, and each degraded variant fails in the specific way its
missing capability implies.

Everything is deterministic per seed: same spec, same bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import yaml

from .context import Metadata, normalize_term
from .errors import SpecInvalid
from .harness import QAItem, save_items
from .processor import ComparisonResult, render_value
from .store import Column, DataTable, ReadingStore, SensorReading, format_ts

MODALITIES = ("roomtemp", "setpoint", "humidity", "power")

DEFAULT_START = datetime(2024, 6, 1, tzinfo=timezone.utc)

# modality -> (base level, within-day amplitude, across-day amplitude,
#              noise sd, per-room step)
_PROFILE = {
    "roomtemp": (23.0, 3.2, 1.6, 0.35, 0.9),
    "setpoint": (22.0, 0.8, 0.4, 0.15, 0.5),
    "humidity": (47.0, 7.5, 3.0, 1.20, -2.0),
    "power": (1.30, 0.85, 0.30, 0.12, 0.35),
}

FIXTURE_VARIANTS = ("full", "no-thinking", "no-mt", "no-queryexec")


@dataclass(frozen=True)
class DatasetSpec:
    rooms: int = 3
    days: int = 16
    null_rate: float = 0.02
    seed: int = 11
    start: datetime = DEFAULT_START

    def __post_init__(self):
        if self.rooms < 2:
            raise SpecInvalid(f"need at least 2 rooms, got {self.rooms}")
        if self.days < 14:
            raise SpecInvalid(f"need at least 14 days, got {self.days}")
        if not (0 <= self.null_rate < 0.5):
            raise SpecInvalid(f"null rate must be in [0, 0.5), got {self.null_rate}")
        if self.start.tzinfo is None:
            raise SpecInvalid("start must be tz-aware")
        if self.start.second or self.start.microsecond:
            raise SpecInvalid("start must be minute-aligned")

    @property
    def total_minutes(self) -> int:
        return self.days * 1440


def room_ids(count: int) -> list[str]:
    return [f"room{101 + i}" for i in range(count)]


def generate_rows(spec: DatasetSpec):
    """Seeded value arrays: (rooms, ts list, {room: {modality: values}}).

    Each modality follows a daily sinusoid plus a slow across-day swing and
    Gaussian noise, rounded to 2 decimals; nulls are injected at the spec
    rate.  The very last minute is forced null everywhere: the newest datum
    is always one minute stale, which is what exposes retrieval paths that
    skip null filtering.
    """
    rng = random.Random(spec.seed)
    rooms = room_ids(spec.rooms)
    total = spec.total_minutes
    ts_list = [spec.start + timedelta(minutes=i) for i in range(total)]
    period = spec.days * 1.7

    day_curve = {
        mod: [amp * math.sin(2 * math.pi * m / 1440.0 - 0.7 * math.pi)
              for m in range(1440)]
        for mod, (_, amp, _, _, _) in _PROFILE.items()
    }
    season = {
        mod: [[amp * math.sin(2 * math.pi * d / period + 0.8 * ri)
               for d in range(spec.days)]
              for ri in range(spec.rooms)]
        for mod, (_, _, amp, _, _) in _PROFILE.items()
    }

    arrays: dict[str, dict[str, list]] = {}
    for ri, room in enumerate(rooms):
        cols: dict[str, list] = {mod: [] for mod in MODALITIES}
        for i in range(total):
            day, minute = divmod(i, 1440)
            for mod in MODALITIES:
                base, _, _, sd, step = _PROFILE[mod]
                value = (base + step * ri + day_curve[mod][minute]
                         + season[mod][ri][day] + rng.gauss(0.0, sd))
                dropped = rng.random() < spec.null_rate
                cols[mod].append(None if dropped else round(value, 2))
        for mod in MODALITIES:
            cols[mod][total - 1] = None
        arrays[room] = cols
    return rooms, ts_list, arrays


def write_csv(path, rooms, ts_list, arrays) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("room_id,ts," + ",".join(MODALITIES) + "\n")
        for i, ts in enumerate(ts_list):
            stamp = format_ts(ts)
            for room in rooms:
                cells = ",".join(
                    "" if arrays[room][mod][i] is None
                    else f"{arrays[room][mod][i]:.2f}"
                    for mod in MODALITIES)
                fh.write(f"{room},{stamp},{cells}\n")


def populate_store(spec: DatasetSpec):
    """In-memory dataset: (store, rooms, ts list, arrays), no files written."""
    rooms, ts_list, arrays = generate_rows(spec)
    store = ReadingStore(list(MODALITIES))
    for room in rooms:
        cols = arrays[room]
        for i, ts in enumerate(ts_list):
            values = {mod: cols[mod][i] for mod in MODALITIES}
            store.insert(SensorReading(room_id=room, ts=ts, values=values))
    return store, rooms, ts_list, arrays


def resident_metadata_doc(rooms) -> dict:
    return {
        "persona": "resident",
        "preferences": {"timezone": "+00:00"},
        "taxonomy": {
            "my room": rooms[0],
            "the room next door": rooms[1],
            "room next door": rooms[1],
            "next door": rooms[1],
            "temperature": "roomtemp",
            "room temperature": "roomtemp",
            "desired temperature": "setpoint",
            "setpoint": "setpoint",
            "humidity": "humidity",
            "power": "power",
            "power use": "power",
        },
    }


def manager_metadata_doc(rooms) -> dict:
    taxonomy = {mod: mod for mod in MODALITIES}
    taxonomy.update({room: room for room in rooms})
    return {
        "persona": "manager",
        "preferences": {"timezone": "+00:00"},
        "taxonomy": taxonomy,
    }


def _metadata_from_doc(doc: dict, now: datetime) -> Metadata:
    taxonomy = {normalize_term(k): v for k, v in doc["taxonomy"].items()}
    return Metadata(taxonomy=taxonomy, persona=doc["persona"],
                    preferences=dict(doc["preferences"]), now=now)


# -- plan document helpers -----------------------------------------------------


def _query_spec(select, rooms, time_range, aggregate="none", group_by="none",
                mapping=None) -> dict:
    return {"mapping": dict(mapping or {}), "select": list(select),
            "rooms": list(rooms), "time_range": time_range,
            "aggregate": aggregate, "group_by": group_by}


def _range(t0: datetime, t1: datetime) -> dict:
    return {"start": format_ts(t0), "end": format_ts(t1)}


def _ins(target: str, kind: str, spec: dict) -> dict:
    return {"target": target, "kind": kind, "spec": spec}


def _proc(op: str, args, options=None) -> dict:
    return {"op": op, "args": list(args), "options": dict(options or {})}


def _var(name: str) -> dict:
    return {"var": name}


def _plan(thinking: str, template: str, instructions, hints: str = "",
          auxiliary=(), refusal=None) -> dict:
    return {
        "thinking": thinking,
        "expectation": {"template": template, "auxiliary": list(auxiliary),
                        "format_hints": hints},
        "instructions": list(instructions),
        "refusal": refusal,
    }


def _refusal_plan(thinking: str, text: str) -> dict:
    return _plan(thinking, "", [], refusal=text)


# -- suite construction ----------------------------------------------------------


@dataclass
class _Bundle:
    item: QAItem
    plans: dict  # variant name -> plan document


class _SuiteBuilder:
    """Brute-forces truth from the generated arrays and authors the plans."""

    def __init__(self, spec: DatasetSpec, rooms, ts_list, arrays):
        self.spec = spec
        self.rooms = rooms
        self.ts_list = ts_list
        self.arrays = arrays
        self.start = spec.start
        self.now = ts_list[-1]
        self.meta_resident = _metadata_from_doc(resident_metadata_doc(rooms), self.now)
        self.meta_manager = _metadata_from_doc(manager_metadata_doc(rooms), self.now)

    # -- time helpers -----------------------------------------------------

    def day(self, index: int, hour: int = 0, minute: int = 0) -> datetime:
        return self.start + timedelta(days=index, hours=hour, minutes=minute)

    def date_str(self, index: int) -> str:
        return self.day(index).strftime("%Y-%m-%d")

    def _index(self, ts: datetime) -> int:
        return int((ts - self.start).total_seconds()) // 60

    def _span(self, t0: datetime, t1: datetime) -> range:
        lo = max(0, self._index(t0))
        hi = min(len(self.ts_list) - 1, self._index(t1))
        return range(lo, hi + 1)

    # -- brute-force readers ------------------------------------------------

    def series(self, room: str, mod: str, t0: datetime, t1: datetime):
        col = self.arrays[room][mod]
        return [(self.ts_list[i], col[i]) for i in self._span(t0, t1)
                if col[i] is not None]

    def values(self, room, mod, t0, t1) -> list:
        return [v for _, v in self.series(room, mod, t0, t1)]

    def cells(self, room, mod, t0, t1) -> set:
        return {(room, mod, format_ts(ts)) for ts, _ in self.series(room, mod, t0, t1)}

    def latest(self, room: str, mod: str):
        col = self.arrays[room][mod]
        for i in range(len(col) - 1, -1, -1):
            if col[i] is not None:
                return self.ts_list[i], col[i]
        raise SpecInvalid(f"{room}/{mod} has no non-null readings")

    def daily(self, room, mod, t0, t1, func) -> list:
        """(day start, aggregate) per day with data, chronological."""
        buckets: dict[datetime, list] = {}
        for ts, v in self.series(room, mod, t0, t1):
            key = ts.replace(hour=0, minute=0)
            buckets.setdefault(key, []).append(v)
        return [(key, _agg(func, buckets[key])) for key in sorted(buckets)]

    # -- item families ------------------------------------------------------

    def build(self) -> list[_Bundle]:
        whole = (self.start, self.now)
        days = self.spec.days
        yesterday = (self.day(days - 2), self.day(days - 2, 23, 59))
        last_night = (self.day(days - 2, 22, 0), self.day(days - 1, 5, 59))
        today = (self.day(days - 1), self.now)
        last_3h = (self.now - timedelta(hours=3), self.now)
        two_weeks = (self.day(days - 14), self.now)
        mgr_week = (self.day(4), self.day(10, 23, 59))
        mgr_power = (self.day(0), self.day(13, 23, 59))

        r1, r2 = self.rooms[0], self.rooms[1]
        r_last = self.rooms[-1]

        bundles = [
            self.latest_item(
                "q01", "resident", "What is the temperature in my room right now?",
                room=r1, room_term="my room", mod="roomtemp", mod_term="temperature",
                template="Here is the latest temperature reading for your room: "
                         "{current}.",
                thinking="\"temperature\" is the roomtemp modality and \"my room\" "
                         "resolves through the deployment taxonomy; the newest "
                         "non-null reading answers the question.",
                target=("value",)),
            self.agg_item(
                "q02", "resident",
                "What was the average temperature in my room yesterday?",
                room=r1, room_term="my room", mod="roomtemp", mod_term="temperature",
                agg="avg", window=yesterday, whole=whole,
                template="The average temperature in your room yesterday was "
                         "{average} degrees.",
                slot="average",
                thinking="\"yesterday\" is the full previous calendar day, "
                         f"{self.date_str(days - 2)} 00:00 through 23:59; average "
                         "the roomtemp readings of the resident's own room over it.",
                ambiguity=("implicit_conditions",), target=("value", "temporal")),
            self.compare_avg_item(
                "q03", yesterday, whole,
                question="Was my room warmer than the room next door yesterday, "
                         "on average?"),
            self.hottest_day_item("q04", two_weeks, whole),
            self.refusal_item(
                "q05", "resident", "What's the humidity level in the kitchen?",
                refusal="I'm sorry, but 'the kitchen' is not a space this "
                        "deployment monitors, so I can't report its humidity.",
                thinking="No taxonomy entry or room id matches \"the kitchen\"; "
                         "the truthful move is to refuse rather than guess.",
                target=("spatial", "value")),
            self.refusal_item(
                "q06", "resident", "What is the CO2 level in my room?",
                refusal="I'm sorry, but carbon dioxide is not a modality this "
                        "deployment measures, so I can't answer that.",
                thinking="The stored modalities are roomtemp, setpoint, humidity "
                         "and power; CO2 is not among them, so refuse truthfully.",
                target=("value",)),
            self.latest_item(
                "q07", "resident", "How humid is my room right now?",
                room=r1, room_term="my room", mod="humidity", mod_term="humidity",
                template="Here is the latest humidity reading for your room: "
                         "{current}.",
                thinking="\"humid\" asks for the humidity modality of the "
                         "resident's own room; take the newest non-null reading.",
                target=("value",)),
            self.agg_item(
                "q08", "resident",
                "What was the lowest temperature in my room last night?",
                room=r1, room_term="my room", mod="roomtemp", mod_term="temperature",
                agg="min", window=last_night, whole=whole,
                template="The lowest temperature in your room last night was "
                         "{low} degrees.",
                slot="low",
                thinking="\"last night\" spans 22:00 of the previous day through "
                         "05:59 today; take the minimum roomtemp over that span.",
                ambiguity=("implicit_conditions",), target=("value",)),
            self.compare_latest_item(
                "q09",
                question="Is it more humid in my room than next door right now?"),
            self.agg_item(
                "q10", "resident",
                "How many temperature readings were recorded in my room today?",
                room=r1, room_term="my room", mod="roomtemp", mod_term="temperature",
                agg="count", window=today, whole=whole,
                template="There are {n} temperature readings recorded for your "
                         "room today.",
                slot="n",
                thinking="\"today\" runs from midnight up to the current minute; "
                         "count the non-null roomtemp readings in it.",
                ambiguity=("implicit_conditions",), target=("value",)),
            self.agg_item(
                "q11", "resident",
                "What was the total power use of my room yesterday?",
                room=r1, room_term="my room", mod="power", mod_term="power",
                agg="sum", window=yesterday, whole=whole,
                template="The total power use recorded for your room yesterday "
                         "was {total}.",
                slot="total",
                thinking="\"yesterday\" is the previous calendar day; sum the "
                         "power readings of the resident's own room over it.",
                ambiguity=("implicit_conditions",), target=("value",)),
            self.window_table_item("q12", last_3h, whole),
            self.per_room_avg_item("q13", mgr_week),
            self.grouped_daily_item("q14", mgr_week, room=r2),
            self.building_power_item("q15", mgr_power),
            self.agg_item(
                "q16", "manager",
                f"How many humidity readings does {r_last} have for "
                f"{self.date_str(6)}?",
                room=r_last, room_term=r_last, mod="humidity", mod_term="humidity",
                agg="count", window=(self.day(6), self.day(6, 23, 59)), whole=whole,
                template=f"{r_last} has {{n}} humidity readings on "
                         f"{self.date_str(6)}.",
                slot="n",
                thinking="Count the non-null humidity readings of that room over "
                         "the named calendar day.",
                ambiguity=(), target=("value",)),
            self.latest_item(
                "q17", "manager", f"What's the latest setpoint in {r2}?",
                room=r2, room_term=r2, mod="setpoint", mod_term="setpoint",
                template=f"Latest setpoint reading for {r2}: {{current}}.",
                thinking="Take the newest non-null setpoint reading of the "
                         "named room.",
                target=("value",)),
            self.top_minutes_item("q18", day_index=9, room=r1, k=3),
            self.agg_item(
                "q19", "manager",
                f"What was the minimum humidity recorded in {r_last} on "
                f"{self.date_str(8)}?",
                room=r_last, room_term=r_last, mod="humidity", mod_term="humidity",
                agg="min", window=(self.day(8), self.day(8, 23, 59)), whole=whole,
                template=f"The minimum humidity in {r_last} on {self.date_str(8)} "
                         "was {low}.",
                slot="low",
                thinking="Take the minimum of that room's humidity readings over "
                         "the named calendar day.",
                ambiguity=(), target=("value",)),
            self.refusal_item(
                "q20", "manager", f"What is the boiler pressure in {r1}?",
                refusal="I'm sorry, but boiler pressure is not a stored modality "
                        "in this deployment, so I can't answer that.",
                thinking="No stored modality corresponds to boiler pressure; "
                         "refuse truthfully.",
                target=("value",)),
        ]
        return bundles

    # individual families ----------------------------------------------------

    def _meta(self, persona: str) -> Metadata:
        return self.meta_resident if persona == "resident" else self.meta_manager

    def _render(self, template: str, slots: dict, persona: str) -> str:
        text = template
        meta = self._meta(persona)
        for name, value in slots.items():
            text = text.replace("{" + name + "}", render_value(value, meta))
        return text

    def _identity_mapping(self, *terms) -> dict:
        return {term: term for term in terms}

    def latest_item(self, item_id, persona, question, *, room, room_term, mod,
                    mod_term, template, thinking, target) -> _Bundle:
        ts, value = self.latest(room, mod)
        table = DataTable(
            columns=[Column("ts", "timestamp"), Column(mod_term, "number")],
            rows=[(ts, value)], provenance={(room, mod, ts)})
        reference = self._render(template, {"current": table}, persona)
        truth = frozenset({(room, mod, format_ts(ts))})
        query = _ins("current", "query",
                     _query_spec([mod_term], [room_term], "latest"))
        full = _plan(thinking, template, [query],
                     hints="one sentence, mention the reading time")
        raw = _ins("current", "sql", {
            "text": f"SELECT ts, {mod} FROM readings WHERE room_id = ? "
                    "ORDER BY ts DESC LIMIT 1",
            "params": [room]})
        plans = {
            "full": full,
            "no-thinking": _plan("", template, [query],
                                 hints="one sentence, mention the reading time"),
            "no-mt": self._no_mt(persona, full, [room_term, mod_term]),
            "no-queryexec": _plan(thinking, template, [raw],
                                  hints="one sentence, mention the reading time"),
        }
        item = QAItem(
            id=item_id, question=question, persona=persona,
            ambiguity=(), processing="none", target=tuple(target),
            truth_cells=truth, reference_answer=reference,
            oracle_values={"ts": format_ts(ts), "value": value},
            requires_taxonomy=persona == "resident")
        return _Bundle(item, plans)

    def agg_item(self, item_id, persona, question, *, room, room_term, mod,
                 mod_term, agg, window, whole, template, slot, thinking,
                 ambiguity, target) -> _Bundle:
        t0, t1 = window
        values = self.values(room, mod, t0, t1)
        result = _agg(agg, values)
        label = f"{agg}_{mod_term}"
        table = DataTable(columns=[Column(label, "number")], rows=[(result,)],
                          provenance=set())
        reference = self._render(template, {slot: table}, persona)
        truth = frozenset(self.cells(room, mod, t0, t1))
        query = _ins(slot, "query",
                     _query_spec([mod_term], [room_term], _range(t0, t1),
                                 aggregate=agg))
        wide = _ins(slot, "query",
                    _query_spec([mod_term], [room_term], _range(*whole),
                                aggregate=agg))
        full = _plan(thinking, template, [query], hints="one sentence")
        raw = _ins(slot, "sql", {
            "text": f"SELECT {_SQL_AGG[agg]}({mod}) FROM readings WHERE "
                    "room_id = ? AND ts BETWEEN ? AND ?",
            "params": [room, format_ts(t0), format_ts(t1)]})
        plans = {
            "full": full,
            "no-thinking": _plan("", template,
                                 [wide if ambiguity else query],
                                 hints="one sentence"),
            "no-mt": self._no_mt(persona, full, [room_term, mod_term]),
            "no-queryexec": _plan(thinking, template, [raw],
                                  hints="one sentence"),
        }
        item = QAItem(
            id=item_id, question=question, persona=persona,
            ambiguity=tuple(ambiguity), processing="supported",
            target=tuple(target), truth_cells=truth, reference_answer=reference,
            oracle_values={agg: result, "window": [format_ts(t0), format_ts(t1)]},
            requires_taxonomy=persona == "resident")
        return _Bundle(item, plans)

    def compare_avg_item(self, item_id, window, whole, question) -> _Bundle:
        t0, t1 = window
        r1, r2 = self.rooms[0], self.rooms[1]
        avg_mine = _agg("avg", self.values(r1, "roomtemp", t0, t1))
        avg_next = _agg("avg", self.values(r2, "roomtemp", t0, t1))
        comparison = _compare(avg_mine, avg_next)
        template = ("On average yesterday, your room's temperature was "
                    "{verdict} compared with the room next door.")
        reference = self._render(template, {"verdict": comparison}, "resident")
        truth = frozenset(self.cells(r1, "roomtemp", t0, t1)
                          | self.cells(r2, "roomtemp", t0, t1))
        thinking = ("\"yesterday\" is the previous calendar day; average each "
                    "room's roomtemp over it, then compare the two averages.")

        def chain(range_wire):
            return [
                _ins("mine", "query",
                     _query_spec(["temperature"], ["my room"], range_wire,
                                 aggregate="avg")),
                _ins("neighbor", "query",
                     _query_spec(["temperature"], ["the room next door"],
                                 range_wire, aggregate="avg")),
                _ins("mine_row", "process", _proc("first", [_var("mine")])),
                _ins("mine_value", "process",
                     _proc("select_column", [_var("mine_row")],
                           {"column": "avg_temperature"})),
                _ins("neighbor_row", "process", _proc("first", [_var("neighbor")])),
                _ins("neighbor_value", "process",
                     _proc("select_column", [_var("neighbor_row")],
                           {"column": "avg_temperature"})),
                _ins("verdict", "process",
                     _proc("compare", [_var("mine_value"), _var("neighbor_value")])),
            ]

        raw_chain = [
            _ins("mine", "sql", {
                "text": "SELECT AVG(roomtemp) FROM readings WHERE room_id = ? "
                        "AND ts BETWEEN ? AND ?",
                "params": [r1, format_ts(t0), format_ts(t1)]}),
            _ins("neighbor", "sql", {
                "text": "SELECT AVG(roomtemp) FROM readings WHERE room_id = ? "
                        "AND ts BETWEEN ? AND ?",
                "params": [r2, format_ts(t0), format_ts(t1)]}),
            _ins("mine_row", "process", _proc("first", [_var("mine")])),
            _ins("mine_value", "process",
                 _proc("select_column", [_var("mine_row")],
                       {"column": "avg_roomtemp"})),
            _ins("neighbor_row", "process", _proc("first", [_var("neighbor")])),
            _ins("neighbor_value", "process",
                 _proc("select_column", [_var("neighbor_row")],
                       {"column": "avg_roomtemp"})),
            _ins("verdict", "process",
                 _proc("compare", [_var("mine_value"), _var("neighbor_value")])),
        ]
        full = _plan(thinking, template, chain(_range(t0, t1)),
                     hints="one sentence verdict")
        plans = {
            "full": full,
            "no-thinking": _plan("", template, chain(_range(*whole)),
                                 hints="one sentence verdict"),
            "no-mt": self._no_mt("resident", full,
                                 ["my room", "the room next door", "temperature"]),
            "no-queryexec": _plan(thinking, template, raw_chain,
                                  hints="one sentence verdict"),
        }
        item = QAItem(
            id=item_id, question=question, persona="resident",
            ambiguity=("implicit_conditions",), processing="unsupported",
            target=("value", "spatial"), truth_cells=truth,
            reference_answer=reference,
            oracle_values={"avg_mine": avg_mine, "avg_next": avg_next,
                           "diff": comparison.diff},
            requires_taxonomy=True)
        return _Bundle(item, plans)

    def compare_latest_item(self, item_id, question) -> _Bundle:
        r1, r2 = self.rooms[0], self.rooms[1]
        ts1, v1 = self.latest(r1, "humidity")
        ts2, v2 = self.latest(r2, "humidity")
        comparison = _compare(v1, v2)
        template = ("Right now, the humidity in your room is {verdict} "
                    "compared with the room next door.")
        reference = self._render(template, {"verdict": comparison}, "resident")
        truth = frozenset({(r1, "humidity", format_ts(ts1)),
                           (r2, "humidity", format_ts(ts2))})
        thinking = ("Compare the newest non-null humidity readings of the "
                    "resident's room and the room next door.")

        def chain():
            return [
                _ins("mine", "query",
                     _query_spec(["humidity"], ["my room"], "latest")),
                _ins("neighbor", "query",
                     _query_spec(["humidity"], ["the room next door"], "latest")),
                _ins("mine_row", "process", _proc("last", [_var("mine")])),
                _ins("mine_value", "process",
                     _proc("select_column", [_var("mine_row")],
                           {"column": "humidity"})),
                _ins("neighbor_row", "process", _proc("last", [_var("neighbor")])),
                _ins("neighbor_value", "process",
                     _proc("select_column", [_var("neighbor_row")],
                           {"column": "humidity"})),
                _ins("verdict", "process",
                     _proc("compare", [_var("mine_value"), _var("neighbor_value")])),
            ]

        raw_chain = [
            _ins("mine", "sql", {
                "text": "SELECT ts, humidity FROM readings WHERE room_id = ? "
                        "ORDER BY ts DESC LIMIT 1",
                "params": [r1]}),
            _ins("neighbor", "sql", {
                "text": "SELECT ts, humidity FROM readings WHERE room_id = ? "
                        "ORDER BY ts DESC LIMIT 1",
                "params": [r2]}),
            _ins("mine_row", "process", _proc("last", [_var("mine")])),
            _ins("mine_value", "process",
                 _proc("select_column", [_var("mine_row")],
                       {"column": "humidity"})),
            _ins("neighbor_row", "process", _proc("last", [_var("neighbor")])),
            _ins("neighbor_value", "process",
                 _proc("select_column", [_var("neighbor_row")],
                       {"column": "humidity"})),
            _ins("verdict", "process",
                 _proc("compare", [_var("mine_value"), _var("neighbor_value")])),
        ]
        full = _plan(thinking, template, chain(), hints="one sentence verdict")
        plans = {
            "full": full,
            "no-thinking": _plan("", template, chain(),
                                 hints="one sentence verdict"),
            "no-mt": self._no_mt("resident", full,
                                 ["my room", "the room next door", "humidity"]),
            "no-queryexec": _plan(thinking, template, raw_chain,
                                  hints="one sentence verdict"),
        }
        item = QAItem(
            id=item_id, question=question, persona="resident",
            ambiguity=(), processing="unsupported",
            target=("value", "spatial"), truth_cells=truth,
            reference_answer=reference,
            oracle_values={"mine": v1, "neighbor": v2, "diff": comparison.diff},
            requires_taxonomy=True)
        return _Bundle(item, plans)

    def hottest_day_item(self, item_id, window, whole) -> _Bundle:
        t0, t1 = window
        room = self.rooms[0]
        per_day = self.daily(room, "roomtemp", t0, t1, "avg")
        hot_day, hot_avg = max(per_day, key=lambda pair: pair[1])
        # max() keeps the earliest day on ties, matching the argmax tie-break
        template = ("The hottest day in your room over the last two weeks was "
                    "{hot_day}, with an average temperature of {hot_avg} degrees.")
        reference = self._render(template,
                                 {"hot_day": hot_day, "hot_avg": hot_avg},
                                 "resident")
        truth = frozenset(self.cells(room, "roomtemp", t0, t1))
        thinking = ("\"hottest\" means the highest daily average roomtemp, and "
                    "with no room named the resident means their own room; "
                    "\"the last two weeks\" is the 14 calendar days ending "
                    "today. Group by day, average, then take the argmax.")

        def chain(range_wire):
            return [
                _ins("daily", "query",
                     _query_spec(["temperature"], ["my room"], range_wire,
                                 aggregate="avg", group_by="day")),
                _ins("peak", "process",
                     _proc("argmax", [_var("daily")],
                           {"column": "avg_temperature"})),
                _ins("hot_day", "process",
                     _proc("select_column", [_var("peak")], {"column": "ts"})),
                _ins("hot_avg", "process",
                     _proc("select_column", [_var("peak")],
                           {"column": "avg_temperature"})),
            ]

        raw_chain = [
            _ins("daily", "sql", {
                "text": "SELECT DATE_TRUNC('day', ts), AVG(roomtemp) FROM "
                        "readings WHERE room_id = ? AND ts BETWEEN ? AND ? "
                        "GROUP BY DATE_TRUNC('day', ts)",
                "params": [room, format_ts(t0), format_ts(t1)]}),
            _ins("peak", "process",
                 _proc("argmax", [_var("daily")], {"column": "avg_roomtemp"})),
            _ins("hot_day", "process",
                 _proc("select_column", [_var("peak")], {"column": "ts"})),
            _ins("hot_avg", "process",
                 _proc("select_column", [_var("peak")],
                       {"column": "avg_roomtemp"})),
        ]
        full = _plan(thinking, template, chain(_range(t0, t1)),
                     hints="name the day and the temperature")
        plans = {
            "full": full,
            "no-thinking": _plan("", template, chain(_range(*whole)),
                                 hints="name the day and the temperature"),
            "no-mt": self._no_mt("resident", full, ["my room", "temperature"]),
            "no-queryexec": _plan(thinking, template, raw_chain,
                                  hints="name the day and the temperature"),
        }
        item = QAItem(
            id=item_id, question="When was the hottest day in my room in the "
                                 "last two weeks?",
            persona="resident",
            ambiguity=("implicit_processing", "implicit_conditions"),
            processing="unsupported", target=("temporal", "value"),
            truth_cells=truth, reference_answer=reference,
            oracle_values={"day": format_ts(hot_day), "avg": hot_avg},
            requires_taxonomy=True)
        return _Bundle(item, plans)

    def window_table_item(self, item_id, window, whole) -> _Bundle:
        t0, t1 = window
        room = self.rooms[0]
        rows = self.series(room, "roomtemp", t0, t1)
        table = DataTable(
            columns=[Column("ts", "timestamp"), Column("temperature", "number")],
            rows=[(ts, v) for ts, v in rows], provenance=set())
        template = "Temperature in your room over the last 3 hours:\n{series}"
        reference = self._render(template, {"series": table}, "resident")
        truth = frozenset(self.cells(room, "roomtemp", t0, t1))
        thinking = ("\"the last 3 hours\" is the 3-hour span ending at the "
                    "current minute; list the roomtemp readings of the "
                    "resident's own room over it.")
        query = _ins("series", "query",
                     _query_spec(["temperature"], ["my room"], _range(t0, t1)))
        wide = _ins("series", "query",
                    _query_spec(["temperature"], ["my room"], _range(*whole)))
        raw = _ins("series", "sql", {
            "text": "SELECT ts, roomtemp FROM readings WHERE room_id = ? AND "
                    "ts BETWEEN ? AND ? AND roomtemp IS NOT NULL",
            "params": [room, format_ts(t0), format_ts(t1)]})
        full = _plan(thinking, template, [query], hints="a short table is fine")
        plans = {
            "full": full,
            "no-thinking": _plan("", template, [wide],
                                 hints="a short table is fine"),
            "no-mt": self._no_mt("resident", full, ["my room", "temperature"]),
            "no-queryexec": _plan(thinking, template, [raw],
                                  hints="a short table is fine"),
        }
        item = QAItem(
            id=item_id,
            question="Show me the temperature in my room over the last 3 hours.",
            persona="resident", ambiguity=("implicit_conditions",),
            processing="none", target=("value", "temporal"),
            truth_cells=truth, reference_answer=reference,
            oracle_values={"rows": len(rows)},
            requires_taxonomy=True)
        return _Bundle(item, plans)

    def per_room_avg_item(self, item_id, window) -> _Bundle:
        t0, t1 = window
        d0, d1 = t0.strftime("%Y-%m-%d"), t1.strftime("%Y-%m-%d")
        question = (f"What was the average roomtemp per room between {d0} "
                    f"and {d1}?")
        averages = [(room, _agg("avg", self.values(room, "roomtemp", t0, t1)))
                    for room in self.rooms]
        table = DataTable(
            columns=[Column("room", "string"), Column("avg_roomtemp", "number")],
            rows=list(averages), provenance=set())
        template = (f"Average roomtemp per room, {d0} through {d1}:\n"
                    "{by_room}")
        reference = self._render(template, {"by_room": table}, "manager")
        truth = frozenset().union(
            *(self.cells(room, "roomtemp", t0, t1) for room in self.rooms))
        thinking = ("Average the roomtemp of every room over the named date "
                    "span, one figure per room.")
        query = _ins("by_room", "query",
                     _query_spec(["roomtemp"], list(self.rooms),
                                 _range(t0, t1), aggregate="avg"))
        full = _plan(thinking, template, [query], hints="one line per room")
        raw_targets = [f"avg_{room}" for room in self.rooms]
        raw_template = (f"Average roomtemp, {d0} through {d1} - "
                        + ", ".join(f"{room}: {{avg_{room}}}"
                                    for room in self.rooms) + ".")
        raw_chain = [
            _ins(target, "sql", {
                "text": "SELECT AVG(roomtemp) FROM readings WHERE room_id = ? "
                        "AND ts BETWEEN ? AND ?",
                "params": [room, format_ts(t0), format_ts(t1)]})
            for target, room in zip(raw_targets, self.rooms)]
        plans = {
            "full": full,
            "no-thinking": _plan("", template, [query],
                                 hints="one line per room"),
            "no-mt": _plan("", template, [query], hints="one line per room"),
            "no-queryexec": _plan(thinking, raw_template, raw_chain,
                                  hints="one line per room"),
        }
        item = QAItem(
            id=item_id, question=question, persona="manager",
            ambiguity=(), processing="supported", target=("value", "spatial"),
            truth_cells=truth, reference_answer=reference,
            oracle_values={room: avg for room, avg in averages},
            requires_taxonomy=False)
        return _Bundle(item, plans)

    def grouped_daily_item(self, item_id, window, room) -> _Bundle:
        t0, t1 = window
        d0, d1 = t0.strftime("%Y-%m-%d"), t1.strftime("%Y-%m-%d")
        question = (f"Give me the daily average setpoint for {room} from {d0} "
                    f"to {d1}.")
        per_day = self.daily(room, "setpoint", t0, t1, "avg")
        table = DataTable(
            columns=[Column("ts", "timestamp"), Column("avg_setpoint", "number")],
            rows=list(per_day), provenance=set())
        template = (f"Daily average setpoint for {room}, {d0} to {d1}:\n"
                    "{daily}")
        reference = self._render(template, {"daily": table}, "manager")
        truth = frozenset(self.cells(room, "setpoint", t0, t1))
        thinking = ("Group that room's setpoint readings by calendar day over "
                    "the named span and average each day.")
        query = _ins("daily", "query",
                     _query_spec(["setpoint"], [room], _range(t0, t1),
                                 aggregate="avg", group_by="day"))
        raw = _ins("daily", "sql", {
            "text": "SELECT DATE_TRUNC('day', ts), AVG(setpoint) FROM readings "
                    "WHERE room_id = ? AND ts BETWEEN ? AND ? "
                    "GROUP BY DATE_TRUNC('day', ts)",
            "params": [room, format_ts(t0), format_ts(t1)]})
        full = _plan(thinking, template, [query], hints="one line per day")
        plans = {
            "full": full,
            "no-thinking": _plan("", template, [query], hints="one line per day"),
            "no-mt": _plan("", template, [query], hints="one line per day"),
            "no-queryexec": _plan(thinking, template, [raw],
                                  hints="one line per day"),
        }
        item = QAItem(
            id=item_id, question=question, persona="manager",
            ambiguity=(), processing="supported", target=("value", "temporal"),
            truth_cells=truth, reference_answer=reference,
            oracle_values={"days": len(per_day)},
            requires_taxonomy=False)
        return _Bundle(item, plans)

    def building_power_item(self, item_id, window) -> _Bundle:
        t0, t1 = window
        d0, d1 = t0.strftime("%Y-%m-%d"), t1.strftime("%Y-%m-%d")
        question = (f"Which day had the highest total power across the "
                    f"building between {d0} and {d1}?")
        # replicate the execution order: per-room daily sums, room-major,
        # then a cross-room resample-sum per day
        per_room = {room: dict(self.daily(room, "power", t0, t1, "sum"))
                    for room in self.rooms}
        day_keys = sorted({key for sums in per_room.values() for key in sums})
        totals = []
        for key in day_keys:
            bucket = [per_room[room][key] for room in self.rooms
                      if key in per_room[room]]
            totals.append((key, _agg("sum", bucket)))
        peak_day, peak_total = max(totals, key=lambda pair: pair[1])
        template = ("Across the whole building, {peak_day} had the highest "
                    "total power use at {peak_total}.")
        reference = self._render(template,
                                 {"peak_day": peak_day, "peak_total": peak_total},
                                 "manager")
        truth = frozenset().union(
            *(self.cells(room, "power", t0, t1) for room in self.rooms))
        thinking = ("\"highest total power\" means the argmax over daily "
                    "building-wide sums; sum power per room per day, add the "
                    "rooms, then pick the top day.")
        chain = [
            _ins("per_room", "query",
                 _query_spec(["power"], list(self.rooms), _range(t0, t1),
                             aggregate="sum", group_by="day")),
            _ins("daily", "process",
                 _proc("resample", [_var("per_room")],
                       {"unit": "day", "agg": "sum", "column": "sum_power"})),
            _ins("peak", "process",
                 _proc("argmax", [_var("daily")], {"column": "sum_sum_power"})),
            _ins("peak_day", "process",
                 _proc("select_column", [_var("peak")], {"column": "ts"})),
            _ins("peak_total", "process",
                 _proc("select_column", [_var("peak")],
                       {"column": "sum_sum_power"})),
        ]
        raw_chain = [
            _ins("daily", "sql", {
                "text": "SELECT DATE_TRUNC('day', ts), SUM(power) FROM readings "
                        "WHERE ts BETWEEN ? AND ? GROUP BY DATE_TRUNC('day', ts)",
                "params": [format_ts(t0), format_ts(t1)]}),
            _ins("peak", "process",
                 _proc("argmax", [_var("daily")], {"column": "sum_power"})),
            _ins("peak_day", "process",
                 _proc("select_column", [_var("peak")], {"column": "ts"})),
            _ins("peak_total", "process",
                 _proc("select_column", [_var("peak")],
                       {"column": "sum_power"})),
        ]
        full = _plan(thinking, template, chain,
                     hints="name the day and the total")
        plans = {
            "full": full,
            "no-thinking": _plan("", template, chain,
                                 hints="name the day and the total"),
            "no-mt": _plan("", template, chain,
                           hints="name the day and the total"),
            "no-queryexec": _plan(thinking, template, raw_chain,
                                  hints="name the day and the total"),
        }
        item = QAItem(
            id=item_id, question=question, persona="manager",
            ambiguity=("implicit_processing",), processing="unsupported",
            target=("temporal", "value", "spatial"), truth_cells=truth,
            reference_answer=reference,
            oracle_values={"day": format_ts(peak_day), "total": peak_total},
            requires_taxonomy=False)
        return _Bundle(item, plans)

    def top_minutes_item(self, item_id, day_index, room, k) -> _Bundle:
        t0, t1 = self.day(day_index), self.day(day_index, 23, 59)
        date = self.date_str(day_index)
        question = (f"List the {k} hottest minutes in {room} on {date} by "
                    "roomtemp.")
        rows = self.series(room, "roomtemp", t0, t1)
        ranked = sorted(enumerate(rows), key=lambda pair: pair[0])
        ranked.sort(key=lambda pair: pair[1][1], reverse=True)
        top = [rows_pair for _, rows_pair in ranked[:k]]
        table = DataTable(
            columns=[Column("ts", "timestamp"), Column("roomtemp", "number")],
            rows=list(top), provenance=set())
        template = f"The {k} hottest minutes in {room} on {date}:\n{{top}}"
        reference = self._render(template, {"top": table}, "manager")
        truth = frozenset(self.cells(room, "roomtemp", t0, t1))
        thinking = ("Retrieve the day's roomtemp readings for that room and "
                    f"keep the {k} largest, newest-data tie going to the "
                    "earlier minute.")
        chain = [
            _ins("day_rows", "query",
                 _query_spec(["roomtemp"], [room], _range(t0, t1))),
            _ins("top", "process",
                 _proc("top_k", [_var("day_rows")],
                       {"k": k, "column": "roomtemp", "direction": "desc"})),
        ]
        raw_chain = [
            _ins("day_rows", "sql", {
                "text": "SELECT ts, roomtemp FROM readings WHERE room_id = ? "
                        "AND ts BETWEEN ? AND ? AND roomtemp IS NOT NULL",
                "params": [room, format_ts(t0), format_ts(t1)]}),
            _ins("top", "process",
                 _proc("top_k", [_var("day_rows")],
                       {"k": k, "column": "roomtemp", "direction": "desc"})),
        ]
        full = _plan(thinking, template, chain, hints="a 3-row table")
        plans = {
            "full": full,
            "no-thinking": _plan("", template, chain, hints="a 3-row table"),
            "no-mt": _plan("", template, chain, hints="a 3-row table"),
            "no-queryexec": _plan(thinking, template, raw_chain,
                                  hints="a 3-row table"),
        }
        item = QAItem(
            id=item_id, question=question, persona="manager",
            ambiguity=(), processing="unsupported",
            target=("value", "temporal"), truth_cells=truth,
            reference_answer=reference,
            oracle_values={"top": [[format_ts(ts), v] for ts, v in top]},
            requires_taxonomy=False)
        return _Bundle(item, plans)

    def refusal_item(self, item_id, persona, question, *, refusal, thinking,
                     target) -> _Bundle:
        plan = _refusal_plan(thinking, refusal)
        plans = {
            "full": plan,
            "no-thinking": _refusal_plan("", refusal),
            "no-mt": _refusal_plan("", refusal),
            "no-queryexec": plan,
        }
        item = QAItem(
            id=item_id, question=question, persona=persona,
            ambiguity=("unknown",), processing="none", target=tuple(target),
            truth_cells=frozenset(), reference_answer=refusal,
            oracle_values={}, requires_taxonomy=False)
        return _Bundle(item, plans)

    def _no_mt(self, persona, full_plan, terms) -> dict:
        """Degraded plan for a planner running without metadata or thinking.

        Resident-persona plans keep the user's own words as if they were
        database identifiers (the mapping pins them so the deployment
        taxonomy cannot rescue the query); manager plans only lose the
        thinking text, since their vocabulary is already database-native.
        """
        doc = json.loads(json.dumps(full_plan))
        doc["thinking"] = ""
        if persona != "resident":
            return doc
        identity = self._identity_mapping(*terms)
        for instruction in doc["instructions"]:
            if instruction["kind"] == "query":
                instruction["spec"]["mapping"] = dict(identity)
        return doc


_SQL_AGG = {"avg": "AVG", "min": "MIN", "max": "MAX", "sum": "SUM",
            "count": "COUNT"}


def _agg(func: str, values: list):
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
    raise SpecInvalid(f"unknown aggregate {func!r}")


def _compare(a: float, b: float) -> ComparisonResult:
    diff = float(a) - float(b)
    if abs(diff) <= 1e-9:
        relation = "equal"
    elif diff < 0:
        relation = "less"
    else:
        relation = "greater"
    return ComparisonResult(diff=diff, relation=relation)


# -- emission --------------------------------------------------------------------


def build_suite(spec: DatasetSpec):
    """(rooms, ts list, arrays, bundles) for the given spec, no files written."""
    rooms, ts_list, arrays = generate_rows(spec)
    builder = _SuiteBuilder(spec, rooms, ts_list, arrays)
    return rooms, ts_list, arrays, builder.build()


def generate_dataset(spec: DatasetSpec, out_dir) -> dict:
    """Write the full dataset under out_dir and return its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rooms, ts_list, arrays, bundles = build_suite(spec)

    csv_path = out / "readings.csv"
    write_csv(csv_path, rooms, ts_list, arrays)

    (out / "metadata_resident.yaml").write_text(
        yaml.safe_dump(resident_metadata_doc(rooms), sort_keys=True),
        encoding="utf-8")
    (out / "metadata_manager.yaml").write_text(
        yaml.safe_dump(manager_metadata_doc(rooms), sort_keys=True),
        encoding="utf-8")

    fixtures = out / "fixtures"
    for bundle in bundles:
        for variant, plan_doc in bundle.plans.items():
            directory = fixtures / variant
            directory.mkdir(parents=True, exist_ok=True)
            (directory / f"{bundle.item.id}.key").write_text(
                "planner\n" + bundle.item.question, encoding="utf-8")
            (directory / f"{bundle.item.id}.completion").write_text(
                json.dumps(plan_doc, indent=2, sort_keys=True), encoding="utf-8")

    save_items([bundle.item for bundle in bundles], out / "qa_items.json")

    manifest = {
        "seed": spec.seed,
        "rooms": spec.rooms,
        "days": spec.days,
        "null_rate": spec.null_rate,
        "room_ids": rooms,
        "modalities": list(MODALITIES),
        "start": format_ts(spec.start),
        "now": format_ts(ts_list[-1]),
        "row_count": len(ts_list) * len(rooms),
        "csv": "readings.csv",
        "csv_sha256": hashlib.sha256(csv_path.read_bytes()).hexdigest(),
        "qa_items": "qa_items.json",
        "fixtures": "fixtures",
        "metadata": {"resident": "metadata_resident.yaml",
                     "manager": "metadata_manager.yaml"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                       encoding="utf-8")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    manifest["_dir"] = str(path.parent)
    return manifest
