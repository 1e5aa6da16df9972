"""Structured execution plans and the tolerant parser that accepts them.

A plan is one JSON object:

    {
      "thinking":    free-form reasoning text,
      "expectation": {"template": str, "auxiliary": [str], "format_hints": str},
      "instructions": [{"target": str, "kind": "query"|"process"|"sql", "spec": {...}}],
      "refusal":     truthful refusal text, exclusive with instructions
    }

Targets are write-once variable names; an instruction may only reference
variables assigned by earlier instructions.  Model output is parsed strictly
first; on failure a bounded textual repair runs once (close dangling
brackets, drop trailing commas, strip the prose envelope) and the result is
parsed again.  The "sql" kind carries a raw statement verbatim and only the
no-builder ablation accepts it at run time.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .builder import AGGREGATES, GROUP_UNITS, LATEST, QueryCall, TimeRange
from .errors import PlanInvalid, PlanUnparseable
from .processor import ProcessExpr, VarRef
from .store import SqlStatement, format_ts, parse_ts

TARGET_RE = re.compile(r"[a-z][a-z0-9_]*")
PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")

MAX_APPENDED_CLOSERS = 4


@dataclass(frozen=True)
class ExpectationSpec:
    template: str = ""
    auxiliary: tuple = ()
    format_hints: str = ""

    def placeholders(self) -> list[str]:
        seen: list[str] = []
        for name in PLACEHOLDER_RE.findall(self.template):
            if name not in seen:
                seen.append(name)
        return seen


@dataclass(frozen=True)
class Assignment:
    target: str
    kind: str  # "query" | "process" | "sql"
    spec: object


@dataclass(frozen=True)
class ExecutionPlan:
    thinking: str = ""
    expectation: ExpectationSpec = field(default_factory=ExpectationSpec)
    instructions: tuple = ()
    refusal: str | None = None


@dataclass(frozen=True)
class AlignmentReport:
    unbound: tuple
    unused: tuple

    @property
    def accepted(self) -> bool:
        return not self.unbound


# -- repair ---------------------------------------------------------------

_OPENERS = {"{": "}", "[": "]"}


def _balance(text: str) -> str:
    """Close dangling brackets (up to a small budget) and cut past-balance junk."""
    start = text.find("{")
    if start < 0:
        return text
    stack: list[str] = []
    in_string = False
    escaped = False
    end = None
    i = start
    while i < len(text):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch in _OPENERS:
            stack.append(_OPENERS[ch])
        elif ch in ("}", "]"):
            if not stack or stack[-1] != ch:
                # extraneous closer: drop it and everything after
                text = text[:i]
                break
            stack.pop()
            if not stack:
                end = i
                break
        i += 1
    if stack and not in_string:
        if len(stack) > MAX_APPENDED_CLOSERS:
            return text
        return text + "".join(reversed(stack))
    if end is not None:
        # keep the balanced prefix; trailing text (prose, stray closers) goes
        return text[:end + 1]
    return text


def _strip_trailing_commas(text: str) -> str:
    out: list[str] = []
    in_string = False
    escaped = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            i += 1
            continue
        if ch == '"':
            in_string = True
            out.append(ch)
            i += 1
            continue
        if ch == ",":
            j = i + 1
            while j < len(text) and text[j] in " \t\r\n":
                j += 1
            if j < len(text) and text[j] in "}]":
                i += 1  # drop the comma; whitespace and closer follow normally
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def _strip_envelope(text: str) -> str:
    first = text.find("{")
    last = text.rfind("}")
    if first < 0 or last < first:
        return text
    return text[first:last + 1]


def repair(text: str) -> str:
    """Bounded textual cleanup of almost-JSON plan output.

    Stages run in a fixed order: bracket balancing, trailing-comma removal,
    envelope stripping.  The result of repairing already-clean text is the
    text itself, so the pipeline is idempotent.
    """
    return _strip_envelope(_strip_trailing_commas(_balance(text)))


# -- parsing ---------------------------------------------------------------


def _require_keys(obj: dict, allowed: set, where: str) -> None:
    extra = set(obj) - allowed
    if extra:
        raise PlanInvalid(f"{where}: unexpected keys {sorted(extra)}")


def _parse_expectation(raw) -> ExpectationSpec:
    if raw is None:
        return ExpectationSpec()
    if not isinstance(raw, dict):
        raise PlanInvalid("expectation must be an object")
    _require_keys(raw, {"template", "auxiliary", "format_hints"}, "expectation")
    template = raw.get("template", "")
    if not isinstance(template, str):
        raise PlanInvalid("expectation.template must be a string")
    auxiliary = raw.get("auxiliary", [])
    if not isinstance(auxiliary, list) or any(not isinstance(a, str) for a in auxiliary):
        raise PlanInvalid("expectation.auxiliary must be a list of strings")
    hints = raw.get("format_hints", "")
    if not isinstance(hints, str):
        raise PlanInvalid("expectation.format_hints must be a string")
    return ExpectationSpec(template=template, auxiliary=tuple(auxiliary), format_hints=hints)


def _parse_query_spec(raw: dict, where: str) -> QueryCall:
    _require_keys(raw, {"mapping", "select", "rooms", "time_range", "aggregate", "group_by"}, where)
    mapping = raw.get("mapping", {})
    if not isinstance(mapping, dict) or any(
            not isinstance(k, str) or not isinstance(v, str) for k, v in mapping.items()):
        raise PlanInvalid(f"{where}: mapping must map strings to strings")
    select = raw.get("select")
    rooms = raw.get("rooms")
    for name, value in (("select", select), ("rooms", rooms)):
        if not isinstance(value, list) or not value or any(not isinstance(t, str) for t in value):
            raise PlanInvalid(f"{where}: {name} must be a non-empty list of strings")
    time_range = raw.get("time_range")
    if time_range == LATEST:
        parsed_range: object = LATEST
    elif isinstance(time_range, dict):
        _require_keys(time_range, {"start", "end"}, f"{where}.time_range")
        try:
            parsed_range = TimeRange(parse_ts(str(time_range.get("start"))),
                                     parse_ts(str(time_range.get("end"))))
        except ValueError as exc:
            raise PlanInvalid(f"{where}: bad time_range: {exc}") from None
    else:
        raise PlanInvalid(f"{where}: time_range must be \"latest\" or {{start, end}}")
    aggregate = raw.get("aggregate", "none")
    group_by = raw.get("group_by", "none")
    if aggregate not in AGGREGATES:
        raise PlanInvalid(f"{where}: bad aggregate {aggregate!r}")
    if group_by not in GROUP_UNITS:
        raise PlanInvalid(f"{where}: bad group_by {group_by!r}")
    return QueryCall(mapping=mapping, select=tuple(select), rooms=tuple(rooms),
                     time_range=parsed_range, aggregate=aggregate, group_by=group_by)


def _parse_process_spec(raw: dict, assigned: set, where: str) -> ProcessExpr:
    _require_keys(raw, {"op", "args", "options"}, where)
    op = raw.get("op")
    if not isinstance(op, str):
        raise PlanInvalid(f"{where}: op must be a string")
    args_raw = raw.get("args", [])
    if not isinstance(args_raw, list):
        raise PlanInvalid(f"{where}: args must be a list")
    args = []
    for arg in args_raw:
        if isinstance(arg, dict):
            if set(arg) != {"var"} or not isinstance(arg.get("var"), str):
                raise PlanInvalid(f"{where}: variable reference must be {{\"var\": name}}")
            name = arg["var"]
            if not TARGET_RE.fullmatch(name):
                raise PlanInvalid(f"{where}: bad variable name {name!r}")
            if name not in assigned:
                raise PlanInvalid(f"{where}: forward reference to {name!r}")
            args.append(VarRef(name))
        elif isinstance(arg, bool) or arg is None:
            raise PlanInvalid(f"{where}: literal {arg!r} is not a value")
        elif isinstance(arg, (int, float, str)):
            args.append(float(arg) if isinstance(arg, (int, float)) else arg)
        else:
            raise PlanInvalid(f"{where}: unsupported literal {arg!r}")
    options = raw.get("options", {})
    if not isinstance(options, dict):
        raise PlanInvalid(f"{where}: options must be an object")
    try:
        return ProcessExpr(op=op, args=tuple(args), options=options)
    except PlanInvalid:
        raise
    except Exception as exc:  # defensive: op-name regex raises PlanInvalid already
        raise PlanInvalid(f"{where}: {exc}") from None


def _parse_sql_spec(raw: dict, where: str) -> SqlStatement:
    _require_keys(raw, {"text", "params"}, where)
    text = raw.get("text")
    if not isinstance(text, str) or not text.strip():
        raise PlanInvalid(f"{where}: sql text must be a non-empty string")
    params_raw = raw.get("params", [])
    if not isinstance(params_raw, list):
        raise PlanInvalid(f"{where}: params must be a list")
    params = []
    for p in params_raw:
        if isinstance(p, bool) or p is None:
            raise PlanInvalid(f"{where}: bad param {p!r}")
        if isinstance(p, (int, float, str)):
            params.append(p)
        else:
            raise PlanInvalid(f"{where}: bad param {p!r}")
    return SqlStatement(text.strip(), tuple(params))


def parse_plan(text: str) -> ExecutionPlan:
    """Parse model output into a validated plan.

    Strict JSON first; one repair pass on failure.  Text that still is not
    a JSON object raises PlanUnparseable; a JSON object that violates the
    schema raises PlanInvalid.
    """
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, ValueError):
        try:
            doc = json.loads(repair(text))
        except (json.JSONDecodeError, ValueError) as exc:
            raise PlanUnparseable(f"not a JSON document: {exc}") from None
    if not isinstance(doc, dict):
        raise PlanUnparseable("plan document must be a JSON object")

    _require_keys(doc, {"thinking", "expectation", "instructions", "refusal"}, "plan")
    thinking = doc.get("thinking", "")
    if not isinstance(thinking, str):
        raise PlanInvalid("thinking must be a string")
    expectation = _parse_expectation(doc.get("expectation"))

    refusal = doc.get("refusal")
    if refusal is not None and (not isinstance(refusal, str) or not refusal.strip()):
        raise PlanInvalid("refusal must be a non-empty string")

    raw_instructions = doc.get("instructions", [])
    if not isinstance(raw_instructions, list):
        raise PlanInvalid("instructions must be a list")
    if refusal is not None and raw_instructions:
        raise PlanInvalid("refusal and instructions are mutually exclusive")
    if refusal is None and not raw_instructions:
        raise PlanInvalid("plan needs instructions or a refusal")

    assigned: set[str] = set()
    instructions: list[Assignment] = []
    for i, raw in enumerate(raw_instructions):
        where = f"instructions[{i}]"
        if not isinstance(raw, dict):
            raise PlanInvalid(f"{where}: must be an object")
        _require_keys(raw, {"target", "kind", "spec"}, where)
        target = raw.get("target")
        if not isinstance(target, str) or not TARGET_RE.fullmatch(target):
            raise PlanInvalid(f"{where}: bad target {target!r}")
        if target in assigned:
            raise PlanInvalid(f"{where}: duplicate target {target!r}")
        kind = raw.get("kind")
        spec_raw = raw.get("spec")
        if not isinstance(spec_raw, dict):
            raise PlanInvalid(f"{where}: spec must be an object")
        if kind == "query":
            spec: object = _parse_query_spec(spec_raw, where)
        elif kind == "process":
            spec = _parse_process_spec(spec_raw, assigned, where)
        elif kind == "sql":
            spec = _parse_sql_spec(spec_raw, where)
        else:
            raise PlanInvalid(f"{where}: kind must be query, process, or sql")
        instructions.append(Assignment(target=target, kind=kind, spec=spec))
        assigned.add(target)

    return ExecutionPlan(thinking=thinking, expectation=expectation,
                         instructions=tuple(instructions), refusal=refusal)


def validate_alignment(plan: ExecutionPlan) -> AlignmentReport:
    """Cross-check template placeholders against assigned variables.

    unbound: placeholders no instruction assigns (the plan cannot be filled).
    unused:  targets nothing references (advisory only).
    """
    targets = [a.target for a in plan.instructions]
    placeholders = plan.expectation.placeholders()
    referenced = set(placeholders)
    for assignment in plan.instructions:
        if assignment.kind == "process":
            for arg in assignment.spec.args:
                if isinstance(arg, VarRef):
                    referenced.add(arg.name)
    unbound = tuple(p for p in placeholders if p not in targets)
    unused = tuple(t for t in targets if t not in referenced)
    return AlignmentReport(unbound=unbound, unused=unused)


# -- serialization ----------------------------------------------------------


def plan_to_wire(plan: ExecutionPlan) -> dict:
    """Wire-format dict; parse_plan(json.dumps(...)) round-trips it."""
    doc: dict = {
        "thinking": plan.thinking,
        "expectation": {
            "template": plan.expectation.template,
            "auxiliary": list(plan.expectation.auxiliary),
            "format_hints": plan.expectation.format_hints,
        },
        "instructions": [_assignment_to_wire(a) for a in plan.instructions],
    }
    if plan.refusal is not None:
        doc["refusal"] = plan.refusal
    return doc


def _assignment_to_wire(assignment: Assignment) -> dict:
    spec = assignment.spec
    if assignment.kind == "query":
        time_range = spec.time_range
        wire_range = (LATEST if time_range == LATEST else
                      {"start": format_ts(time_range.start), "end": format_ts(time_range.end)})
        wire = {
            "mapping": dict(spec.mapping),
            "select": list(spec.select),
            "rooms": list(spec.rooms),
            "time_range": wire_range,
            "aggregate": spec.aggregate,
            "group_by": spec.group_by,
        }
    elif assignment.kind == "process":
        wire = {
            "op": spec.op,
            "args": [{"var": a.name} if isinstance(a, VarRef) else a for a in spec.args],
            "options": dict(spec.options),
        }
    else:
        wire = {"text": spec.text, "params": list(spec.params)}
    return {"target": assignment.target, "kind": assignment.kind, "spec": wire}
