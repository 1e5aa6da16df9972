"""Model access: role prompts, backends, token accounting.

Three backend families share one complete() contract:

  ScriptedBackend  fixture directory lookup, bit-deterministic, for tests
                   and offline evaluation;
  EchoBackend      deterministic responder that repeats the marked answer
                   content block, for suites that need no fixture per item;
  HttpBackend      chat-completions style JSON over HTTP for real models.

Token counts come from the provider when available; otherwise a whitespace
token estimate is used and the completion is flagged estimated.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from time import perf_counter

import requests

from .context import Metadata, render_metadata_block
from .errors import BackendUnavailable, FixtureMissing, PlanUnparseable
from .plans import ExecutionPlan, parse_plan

ROLE_PLANNER = "planner"
ROLE_RESPONDER = "responder"
ROLE_JUDGE = "judge"

CONTENT_OPEN = "<<<answer-content"
CONTENT_CLOSE = "answer-content>>>"

DEFAULT_PARAMS = {"temperature": 0.0, "max_tokens": 1024}

RETRY_NOTE = ("The previous reply was not a single valid JSON object. "
              "Reply again with exactly one JSON object and no other text.")


def estimate_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class RolePrompt:
    role: str
    system: str
    user: str


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: float = 0.0
    model: str = ""
    estimated: bool = False


def _normalize_key(text: str) -> str:
    return " ".join(text.split()).casefold()


class ScriptedBackend:
    """Completions served from (key file -> completion file) fixture pairs.

    Layout: <root>/<variant>/<stem>.key + <stem>.completion; pairs directly
    under <root> belong to the default variant.  Lookup is by (role,
    normalized key-file text); a variant falls back to the default set, and
    a miss in both raises FixtureMissing.
    """

    DEFAULT_VARIANT = "full"

    def __init__(self, root):
        self.root = Path(root)
        self.model = f"scripted:{self.root.name}"
        self._fixtures: dict[str, dict[tuple[str, str], str]] = {}
        if self.root.is_dir():
            self._load_dir(self.root, self.DEFAULT_VARIANT)
            for child in sorted(self.root.iterdir()):
                if child.is_dir():
                    self._load_dir(child, child.name)

    def _load_dir(self, directory: Path, variant: str) -> None:
        table = self._fixtures.setdefault(variant, {})
        for key_path in sorted(directory.glob("*.key")):
            completion_path = key_path.with_suffix(".completion")
            if not completion_path.exists():
                continue
            raw = key_path.read_text(encoding="utf-8")
            role, _, key_text = raw.partition("\n")
            table[(role.strip(), _normalize_key(key_text))] = completion_path.read_text(
                encoding="utf-8")

    def complete(self, prompt: RolePrompt, params: dict | None = None) -> Completion:
        params = params or {}
        variant = str(params.get("fixture_variant", self.DEFAULT_VARIANT))
        key = (prompt.role, _normalize_key(prompt.user))
        text = self._fixtures.get(variant, {}).get(key)
        if text is None and variant != self.DEFAULT_VARIANT:
            text = self._fixtures.get(self.DEFAULT_VARIANT, {}).get(key)
        if text is None:
            raise FixtureMissing(prompt.role, _normalize_key(prompt.user))
        return Completion(
            text=text,
            input_tokens=estimate_tokens(prompt.system) + estimate_tokens(prompt.user),
            output_tokens=estimate_tokens(text),
            latency_ms=0.0,
            model=self.model,
        )


class EchoBackend:
    """Responder that returns the marked answer content block verbatim."""

    model = "echo"

    def complete(self, prompt: RolePrompt, params: dict | None = None) -> Completion:
        text = prompt.user
        start = text.find(CONTENT_OPEN)
        end = text.find(CONTENT_CLOSE)
        if start < 0 or end < start:
            raise BackendUnavailable("prompt carries no answer content block")
        body = text[start + len(CONTENT_OPEN):end].strip("\n")
        return Completion(
            text=body,
            input_tokens=estimate_tokens(prompt.system) + estimate_tokens(prompt.user),
            output_tokens=estimate_tokens(body),
            latency_ms=0.0,
            model=self.model,
        )


class ScriptedJudgeBackend:
    """Deterministic judge: scores by comparing the answer to the reference.

    Truthfulness keys on numeric token overlap, the other metrics on plain
    token overlap; identical texts always score 5.
    """

    model = "scripted-judge"

    def complete(self, prompt: RolePrompt, params: dict | None = None) -> Completion:
        fields = {}
        for line in prompt.user.splitlines():
            for name in ("metric", "answer", "reference"):
                if line.startswith(f"{name}: "):
                    fields[name] = line[len(name) + 2:]
        answer = _normalize_key(fields.get("answer", ""))
        reference = _normalize_key(fields.get("reference", ""))
        score = self._score(fields.get("metric", ""), answer, reference)
        text = f"score: {score}"
        return Completion(
            text=text,
            input_tokens=estimate_tokens(prompt.system) + estimate_tokens(prompt.user),
            output_tokens=estimate_tokens(text),
            model=self.model,
        )

    @staticmethod
    def _score(metric: str, answer: str, reference: str) -> int:
        if not answer:
            return 1
        if answer == reference:
            return 5
        answer_tokens = set(answer.replace(",", " ").split())
        reference_tokens = set(reference.replace(",", " ").split())
        if metric == "truthfulness":
            numbers = {t for t in reference_tokens if any(c.isdigit() for c in t)}
            if numbers:
                frac = len(numbers & answer_tokens) / len(numbers)
                return max(1, 1 + round(4 * frac))
        if not reference_tokens:
            return 3
        overlap = len(answer_tokens & reference_tokens) / len(answer_tokens | reference_tokens)
        for floor, score in ((0.75, 4), (0.5, 3), (0.25, 2)):
            if overlap >= floor:
                return score
        return 1


class HttpBackend:
    """Chat-completions JSON over HTTP."""

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 timeout_s: float = 60.0):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s

    def complete(self, prompt: RolePrompt, params: dict | None = None) -> Completion:
        params = {**DEFAULT_PARAMS, **(params or {})}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": params["temperature"],
            "max_tokens": params["max_tokens"],
        }
        started = perf_counter()
        try:
            response = requests.post(self.url, json=body, headers=headers,
                                     timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise BackendUnavailable(f"{self.url}: {exc}") from None
        latency_ms = (perf_counter() - started) * 1000.0
        if response.status_code != 200:
            raise BackendUnavailable(f"{self.url}: HTTP {response.status_code}")
        try:
            doc = response.json()
            text = doc["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise BackendUnavailable(f"{self.url}: malformed completion body: {exc}") from None
        usage = doc.get("usage") or {}
        input_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        estimated = input_tokens is None or output_tokens is None
        if input_tokens is None:
            input_tokens = estimate_tokens(prompt.system) + estimate_tokens(prompt.user)
        if output_tokens is None:
            output_tokens = estimate_tokens(text)
        return Completion(
            text=text,
            input_tokens=int(input_tokens),
            output_tokens=int(output_tokens),
            latency_ms=latency_ms,
            model=self.model,
            estimated=bool(estimated),
        )


class CappedBackend:
    """Wrap a backend with a per-backend in-flight request cap."""

    def __init__(self, backend, max_in_flight: int = 4):
        self._backend = backend
        self._slots = threading.Semaphore(max_in_flight)
        self.model = getattr(backend, "model", "capped")

    def complete(self, prompt: RolePrompt, params: dict | None = None) -> Completion:
        with self._slots:
            return self._backend.complete(prompt, params)


# -- role entry points -------------------------------------------------------

_PROMPT_OVERRIDES: dict[str, str] = {}


def set_prompt_overrides(mapping: dict | None) -> None:
    """Point named role prompts at files on disk; empty/None restores defaults."""
    _PROMPT_OVERRIDES.clear()
    for name, path in (mapping or {}).items():
        _PROMPT_OVERRIDES[str(name)] = str(path)


def load_prompt(name: str) -> str:
    override = _PROMPT_OVERRIDES.get(name)
    if override is not None:
        with open(override, encoding="utf-8") as fh:
            return fh.read()
    return resources.files("hvacqa.prompts").joinpath(f"{name}.txt").read_text(
        encoding="utf-8")


def compose_planner_prompt(query: str, meta: Metadata, *,
                           include_metadata: bool = True,
                           include_thinking: bool = True,
                           raw_sql: bool = False,
                           schema: list[str] | None = None,
                           retry_note: str | None = None) -> RolePrompt:
    parts = [load_prompt("planner_system")]
    if not include_thinking:
        parts.append("For this deployment, set \"thinking\" to the empty string "
                     "and do not explain the mapping.")
    if raw_sql:
        parts.append(
            "This deployment has no query builder. Express retrieval as "
            "{\"kind\": \"sql\", \"spec\": {\"text\": one complete SELECT statement, "
            "\"params\": bound literals}} instead of kind \"query\".")
    if schema:
        parts.append("Stored modalities: " + ", ".join(schema) + ".")
    if include_metadata:
        parts.append("Deployment context:\n" + render_metadata_block(meta))
    user = query if retry_note is None else f"{query}\n\n{retry_note}"
    return RolePrompt(role=ROLE_PLANNER, system="\n\n".join(parts), user=user)


def plan(query: str, meta: Metadata, backend, *,
         include_metadata: bool = True,
         include_thinking: bool = True,
         raw_sql: bool = False,
         schema: list[str] | None = None,
         params: dict | None = None) -> tuple[ExecutionPlan, Completion, int]:
    """Ask the planner for an execution plan; one retry on unparseable text.

    Returns (plan, completion of the attempt that produced it, retries).
    PlanInvalid never retries: the text was JSON, the model simply planned
    something the schema forbids, and a nudge note would not change that.
    """
    prompt = compose_planner_prompt(
        query, meta, include_metadata=include_metadata,
        include_thinking=include_thinking, raw_sql=raw_sql, schema=schema)
    completion = backend.complete(prompt, params)
    try:
        return parse_plan(completion.text), completion, 0
    except PlanUnparseable:
        retry_prompt = replace(prompt, user=f"{query}\n\n{RETRY_NOTE}")
        retry_completion = backend.complete(retry_prompt, params)
        return parse_plan(retry_completion.text), retry_completion, 1


def compose_responder_prompt(query: str, content: str, *,
                             format_hints: str = "",
                             auxiliary: tuple = (),
                             context_block: str = "") -> RolePrompt:
    lines = [f"Question: {query}", ""]
    if context_block:
        lines += [context_block, ""]
    lines += [
        "Answer using exactly the values in this block:",
        CONTENT_OPEN,
        content,
        CONTENT_CLOSE,
    ]
    if auxiliary:
        lines.append("Also worth covering: " + "; ".join(auxiliary))
    if format_hints:
        lines.append(f"Format hints: {format_hints}")
    return RolePrompt(role=ROLE_RESPONDER, system=load_prompt("responder_system"),
                      user="\n".join(lines))


def respond(query: str, content: str, backend, *,
            format_hints: str = "",
            auxiliary: tuple = (),
            context_block: str = "",
            params: dict | None = None) -> Completion:
    prompt = compose_responder_prompt(
        query, content, format_hints=format_hints, auxiliary=auxiliary,
        context_block=context_block)
    return backend.complete(prompt, params)
