"""Independent reference implementations used to check the real ones.

Everything here is written naively on purpose: plain dict lookups, full
scans over raw row data, no shared helpers with the package. If a package
component and its oracle agree over randomized inputs, a shared systematic
bug is the only remaining failure mode, and these implementations are kept
simple enough to audit by eye.
"""

from __future__ import annotations

from datetime import datetime


def norm(term: str) -> str:
    return " ".join(term.split()).casefold()


def trunc(ts: datetime, unit: str) -> datetime:
    if unit == "day":
        return ts.replace(hour=0, minute=0, second=0, microsecond=0)
    return ts.replace(minute=0, second=0, microsecond=0)


def agg(func: str, values: list):
    if func == "count":
        return float(len(values))
    if not values:
        return None
    if func == "avg":
        total = 0.0
        for v in values:
            total = total + v
        return total / len(values)
    if func == "min":
        best = values[0]
        for v in values[1:]:
            if v < best:
                best = v
        return best
    if func == "max":
        best = values[0]
        for v in values[1:]:
            if v > best:
                best = v
        return best
    total = 0.0
    for v in values:
        total = total + v
    return total


def query_call(raw_rows, term_map, *, select, rooms, time_range,
               aggregate="none", group_by="none"):
    """Naive full-scan twin of builder.execute_call.

    raw_rows: list of (room_id, ts, {modality: value|None}); term_map maps
    normalized user terms to database names. Returns (labels, rows,
    provenance) with rows as plain tuples and provenance as a set of
    (room, modality, ts) triples.
    """
    mods = [(norm(t), term_map[norm(t)]) for t in select]
    multi = len(rooms) > 1

    labels: list[str] = []
    if multi:
        labels.append("room")
    if aggregate == "none":
        labels.append("ts")
        labels += [user for user, _ in mods]
    elif group_by != "none":
        labels.append("ts")
        labels += [f"{aggregate}_{user}" for user, _ in mods]
    else:
        labels += [f"{aggregate}_{user}" for user, _ in mods]

    out_rows: list[tuple] = []
    provenance: set = set()
    for room_term in rooms:
        room_db = term_map[norm(room_term)]
        matched = []
        for room_id, ts, values in raw_rows:
            if room_id != room_db:
                continue
            if time_range != "latest":
                t0, t1 = time_range
                if ts < t0 or ts > t1:
                    continue
            if any(values.get(db) is None for _, db in mods):
                continue
            matched.append((ts, values))
        matched.sort(key=lambda pair: pair[0])

        if time_range == "latest":
            matched = matched[-1:]

        prefix = (norm(room_term),) if multi else ()
        if aggregate == "none":
            for ts, values in matched:
                out_rows.append(prefix + (ts,) + tuple(values[db] for _, db in mods))
                for _, db in mods:
                    provenance.add((room_db, db, ts))
        elif group_by != "none":
            buckets: dict[datetime, list] = {}
            for ts, values in matched:
                buckets.setdefault(trunc(ts, group_by), []).append((ts, values))
            for key in sorted(buckets):
                group = buckets[key]
                cells = []
                for _, db in mods:
                    cells.append(agg(aggregate, [v[db] for _, v in group]))
                    for ts, v in group:
                        provenance.add((room_db, db, ts))
                out_rows.append(prefix + (key,) + tuple(cells))
        else:
            cells = []
            for _, db in mods:
                cells.append(agg(aggregate, [v[db] for _, v in matched]))
                for ts, v in matched:
                    provenance.add((room_db, db, ts))
            out_rows.append(prefix + tuple(cells))
    return labels, out_rows, provenance


# -- processor twins -------------------------------------------------------


def _col(table, name: str) -> int:
    return table.labels().index(name)


def _ts_col(table):
    for i, c in enumerate(table.columns):
        if c.label == "ts" and c.kind == "timestamp":
            return i
    for i, c in enumerate(table.columns):
        if c.kind == "timestamp":
            return i
    return None


def stat(table, column: str, func: str):
    values = [row[_col(table, column)] for row in table.rows]
    return agg("avg" if func == "mean" else func, values)


def arg_extreme(table, column: str, best: str):
    """Row holding the extreme value; earliest (ts, index) on ties."""
    idx = _col(table, column)
    values = [row[idx] for row in table.rows]
    target = max(values) if best == "max" else min(values)
    ts_idx = _ts_col(table)
    candidates = [i for i, v in enumerate(values) if v == target]
    if ts_idx is not None:
        candidates.sort(key=lambda i: (table.rows[i][ts_idx], i))
    winner = candidates[0]
    return tuple(table.rows[winner])


def top_k(table, column: str, k: int, direction: str) -> list[tuple]:
    idx = _col(table, column)
    ts_idx = _ts_col(table)
    order = list(range(len(table.rows)))

    def tie(i):
        return (table.rows[i][ts_idx], i) if ts_idx is not None else (i,)

    if direction == "desc":
        order.sort(key=lambda i: (-table.rows[i][idx],) + tie(i))
    else:
        order.sort(key=lambda i: (table.rows[i][idx],) + tie(i))
    return [tuple(table.rows[i]) for i in order[:k]]


def resample(table, column: str, unit: str, func: str) -> list[tuple]:
    idx = _col(table, column)
    ts_idx = _ts_col(table)
    buckets: dict[datetime, list] = {}
    for row in table.rows:
        buckets.setdefault(trunc(row[ts_idx], unit), []).append(row[idx])
    return [(key, agg("avg" if func == "mean" else func, buckets[key]))
            for key in sorted(buckets)]


def filter_rows(table, column: str, comparator: str, literal) -> list[tuple]:
    idx = _col(table, column)
    tests = {
        "<": lambda a: a < literal,
        ">": lambda a: a > literal,
        "<=": lambda a: a <= literal,
        ">=": lambda a: a >= literal,
        "=": lambda a: a == literal,
        "!=": lambda a: a != literal,
    }
    return [tuple(row) for row in table.rows
            if row[idx] is not None and tests[comparator](row[idx])]


def compare(a: float, b: float) -> tuple[float, str]:
    diff = a - b
    if abs(diff) <= 1e-9:
        return diff, "equal"
    return diff, ("less" if diff < 0 else "greater")


# -- metric twin -----------------------------------------------------------


def cell_metrics(retrieved: set, truth: set) -> tuple[float, float, float]:
    exact = 1.0 if retrieved == truth else 0.0
    overlap = len(retrieved & truth)
    precision = overlap / len(retrieved) if retrieved else 1.0
    recall = overlap / len(truth) if truth else 1.0
    return exact, precision, recall
