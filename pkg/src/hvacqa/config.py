"""Service configuration: one YAML file describing a whole deployment.

Loading is strict and atomic: every referenced file is checked up front and
any problem raises ConfigInvalid naming the offending field, so a service
never comes up half-wired.  Secrets are never written in the file itself;
backends that need a key name an environment variable instead.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import gateway
from .context import Metadata, load_metadata
from .errors import ConfigInvalid
from .orchestrator import Pipeline
from .store import ReadingStore, parse_ts

BACKEND_KINDS = ("scripted", "http", "echo")
PROMPT_NAMES = ("planner_system", "responder_system", "judge_rubric")
PERSONAS = ("resident", "manager")


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    root: str | None = None      # scripted: fixture directory
    endpoint: str | None = None  # http: chat-completions URL
    model: str | None = None
    key_env: str | None = None   # name of the env var holding the API key


@dataclass(frozen=True)
class ServiceConfig:
    store_csv: str
    modalities: tuple
    metadata_paths: dict          # persona -> metadata YAML path
    planner: BackendSpec
    responder: BackendSpec
    judges: tuple = ()
    prompt_paths: dict = field(default_factory=dict)  # prompt name -> path
    trace_dir: str | None = None
    listen_host: str = "127.0.0.1"
    listen_port: int = 8787
    in_flight_cap: int = 4
    bearer_token_env: str | None = None
    now: datetime | None = None   # pinned clock for reproducible replays


def _need(doc: dict, key: str, kind, where: str):
    value = doc.get(key)
    if not isinstance(value, kind) or (kind is str and not value.strip()):
        raise ConfigInvalid(f"{where}.{key}: expected {kind.__name__}, "
                            f"got {value!r}")
    return value


def _resolve(base: Path, value: str) -> str:
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def _existing_file(path: str, where: str) -> str:
    if not Path(path).is_file():
        raise ConfigInvalid(f"{where}: no such file: {path}")
    return path


def _parse_backend(doc, base: Path, where: str, judge: bool = False) -> BackendSpec:
    if not isinstance(doc, dict):
        raise ConfigInvalid(f"{where}: expected a mapping, got {doc!r}")
    kind = doc.get("kind")
    if kind not in BACKEND_KINDS:
        raise ConfigInvalid(f"{where}.kind: must be one of "
                            f"{', '.join(BACKEND_KINDS)}, got {kind!r}")
    spec = BackendSpec(
        kind=kind,
        root=doc.get("root"),
        endpoint=doc.get("endpoint"),
        model=doc.get("model"),
        key_env=doc.get("key_env"),
    )
    if kind == "scripted":
        # the scripted judge scores against references, no fixtures involved
        if judge:
            return BackendSpec(kind=kind)
        if not spec.root:
            raise ConfigInvalid(f"{where}.root: scripted backend needs a "
                                "fixture directory")
        root = _resolve(base, spec.root)
        if not Path(root).is_dir():
            raise ConfigInvalid(f"{where}.root: no such directory: {root}")
        spec = BackendSpec(kind=kind, root=root)
    elif kind == "http":
        if not spec.endpoint:
            raise ConfigInvalid(f"{where}.endpoint: http backend needs a URL")
        if not spec.model:
            raise ConfigInvalid(f"{where}.model: http backend needs a model name")
        if spec.key_env and spec.key_env not in os.environ:
            raise ConfigInvalid(f"{where}.key_env: environment variable "
                                f"{spec.key_env!r} is not set")
    return spec


def load_config(path) -> ServiceConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigInvalid("config document must be a mapping")
    base = path.parent

    store_doc = _need(doc, "store", dict, "store")
    csv = _existing_file(_resolve(base, _need(store_doc, "csv", str, "store")),
                         "store.csv")
    modalities = store_doc.get("modalities")
    if (not isinstance(modalities, list) or not modalities
            or not all(isinstance(m, str) for m in modalities)):
        raise ConfigInvalid("store.modalities: expected a non-empty list of "
                            "column names")

    meta_doc = _need(doc, "metadata", dict, "metadata")
    metadata_paths = {}
    for persona, rel in meta_doc.items():
        if not isinstance(rel, str):
            raise ConfigInvalid(f"metadata.{persona}: expected a path string")
        metadata_paths[str(persona)] = _existing_file(
            _resolve(base, rel), f"metadata.{persona}")
    if not metadata_paths:
        raise ConfigInvalid("metadata: at least one persona file required")

    backends = _need(doc, "backends", dict, "backends")
    planner = _parse_backend(backends.get("planner"), base, "backends.planner")
    responder = _parse_backend(backends.get("responder"), base,
                               "backends.responder")
    judges_doc = backends.get("judges", [])
    if not isinstance(judges_doc, list):
        raise ConfigInvalid("backends.judges: expected a list")
    judges = tuple(_parse_backend(j, base, f"backends.judges[{i}]", judge=True)
                   for i, j in enumerate(judges_doc))

    prompt_paths = {}
    for name, rel in (doc.get("prompts") or {}).items():
        if name not in PROMPT_NAMES:
            raise ConfigInvalid(f"prompts.{name}: unknown prompt; expected one "
                                f"of {', '.join(PROMPT_NAMES)}")
        prompt_paths[name] = _existing_file(_resolve(base, rel),
                                            f"prompts.{name}")

    trace_dir = doc.get("trace_dir")
    if trace_dir is not None:
        if not isinstance(trace_dir, str):
            raise ConfigInvalid("trace_dir: expected a path string")
        trace_dir = _resolve(base, trace_dir)

    listen = doc.get("listen", "127.0.0.1:8787")
    if not isinstance(listen, str) or ":" not in listen:
        raise ConfigInvalid(f"listen: expected host:port, got {listen!r}")
    host, _, port_text = listen.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigInvalid(f"listen: bad port {port_text!r}") from None
    if not host or not (0 < port < 65536):
        raise ConfigInvalid(f"listen: expected host:port, got {listen!r}")

    cap = doc.get("in_flight_cap", 4)
    if isinstance(cap, bool) or not isinstance(cap, int) or cap < 1:
        raise ConfigInvalid(f"in_flight_cap: expected a positive integer, "
                            f"got {cap!r}")

    bearer_env = doc.get("bearer_token_env")
    if bearer_env is not None:
        if not isinstance(bearer_env, str) or not bearer_env:
            raise ConfigInvalid("bearer_token_env: expected an environment "
                                "variable name")
        if bearer_env not in os.environ:
            raise ConfigInvalid(f"bearer_token_env: environment variable "
                                f"{bearer_env!r} is not set")

    now = doc.get("now")
    if now is not None:
        try:
            now = parse_ts(str(now))
        except ValueError as exc:
            raise ConfigInvalid(f"now: {exc}") from None

    return ServiceConfig(
        store_csv=csv,
        modalities=tuple(modalities),
        metadata_paths=metadata_paths,
        planner=planner,
        responder=responder,
        judges=judges,
        prompt_paths=prompt_paths,
        trace_dir=trace_dir,
        listen_host=host,
        listen_port=port,
        in_flight_cap=cap,
        bearer_token_env=bearer_env,
        now=now,
    )


def build_backend(spec: BackendSpec):
    if spec.kind == "scripted":
        return gateway.ScriptedBackend(spec.root)
    if spec.kind == "echo":
        return gateway.EchoBackend()
    api_key = os.environ[spec.key_env] if spec.key_env else None
    return gateway.HttpBackend(spec.endpoint, spec.model, api_key=api_key)


def build_judge(spec: BackendSpec):
    if spec.kind == "scripted":
        return gateway.ScriptedJudgeBackend()
    return build_backend(spec)


class Engine:
    """Configured store + backends + pipeline, shared by service and CLI."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        gateway.set_prompt_overrides(config.prompt_paths)
        self.store = ReadingStore(list(config.modalities))
        self.store.ingest_csv(config.store_csv)
        rooms = self.store.rooms()
        self._metadata: dict[str, Metadata] = {
            persona: load_metadata(path, schema=list(config.modalities),
                                   rooms=rooms)
            for persona, path in config.metadata_paths.items()
        }
        cap = config.in_flight_cap
        self.planner_backend = gateway.CappedBackend(
            build_backend(config.planner), cap)
        self.responder_backend = gateway.CappedBackend(
            build_backend(config.responder), cap)
        self.judges = tuple(build_judge(spec) for spec in config.judges)
        self.pipeline = Pipeline(
            self.store, self.planner_backend, self.responder_backend,
            trace_dir=config.trace_dir)

    def personas(self) -> list[str]:
        return sorted(self._metadata)

    def metadata_for(self, persona: str, now: datetime | None = None) -> Metadata:
        if persona not in self._metadata:
            raise ConfigInvalid(f"unknown persona {persona!r}; configured: "
                                f"{', '.join(self.personas())}")
        if now is None:
            now = self.config.now or datetime.now(tz=timezone.utc)
        return self._metadata[persona].with_now(now)
