"""HTTP surface over the pipeline: ask, traces, health, ingest, streaming.

The service is a thin shell; every question goes through the same
Pipeline.handle used by the command line, so behavior cannot drift between
the two. Traces are kept in a bounded in-memory window and, when a trace
directory is configured, on disk as flat JSON files.
"""

from __future__ import annotations

import collections
import json
import os
import socket
import tempfile
import threading
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .config import Engine, ServiceConfig, load_config
from .errors import BindFailure, HvacQaError, UnknownFlag
from .orchestrator import FULL, configure_ablation

TRACE_WINDOW = 256
STREAM_CHUNK = 48


class AskRequest(BaseModel):
    query: str
    persona: str = "resident"
    ablation: Optional[str] = None


def _chunks(text: str, size: int = STREAM_CHUNK):
    """Word-preserving chunks; every chunk except maybe the last is non-empty."""
    words = text.split(" ")
    piece: list[str] = []
    length = 0
    for word in words:
        extra = len(word) + (1 if piece else 0)
        if piece and length + extra > size:
            yield " ".join(piece) + " "
            piece, length = [], 0
            extra = len(word)
        piece.append(word)
        length += extra
    if piece:
        yield " ".join(piece)


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="hvacqa", docs_url=None, redoc_url=None)
    recent: collections.OrderedDict[str, dict] = collections.OrderedDict()
    recent_lock = threading.Lock()
    ask_slots = threading.Semaphore(engine.config.in_flight_cap)

    token = (os.environ[engine.config.bearer_token_env]
             if engine.config.bearer_token_env else None)

    def require_token(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    def remember(trace_id: str, payload: dict) -> None:
        with recent_lock:
            recent[trace_id] = payload
            while len(recent) > TRACE_WINDOW:
                recent.popitem(last=False)

    def lookup(trace_id: str) -> dict | None:
        with recent_lock:
            if trace_id in recent:
                return recent[trace_id]
        if engine.config.trace_dir:
            path = Path(engine.config.trace_dir) / f"{trace_id}.json"
            if path.is_file():
                return json.loads(path.read_text(encoding="utf-8"))
        return None

    @app.post("/ask", dependencies=[Depends(require_token)])
    def ask(body: AskRequest):
        if not body.query.strip():
            raise HTTPException(status_code=400, detail="query must not be empty")
        try:
            meta = engine.metadata_for(body.persona)
        except HvacQaError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        config = FULL
        if body.ablation:
            try:
                config = configure_ablation(body.ablation)
            except UnknownFlag as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
        with ask_slots:
            answer, trace = engine.pipeline.handle(body.query, meta, config)
        remember(trace.request_id,
                 {"answer": {"text": answer.text, "status": answer.status,
                             "trace_ref": answer.trace_ref},
                  "trace": trace.to_dict()})
        return {"answer": answer.text, "status": answer.status,
                "trace_id": answer.trace_ref}

    @app.get("/trace/{trace_id}", dependencies=[Depends(require_token)])
    def trace(trace_id: str):
        payload = lookup(trace_id)
        if payload is None:
            raise HTTPException(status_code=404, detail="no such trace")
        return JSONResponse(payload["trace"])

    @app.get("/health")
    def health():
        return {
            "ok": True,
            "store_rows": engine.store.row_count,
            "backends": {
                "planner": engine.config.planner.kind,
                "responder": engine.config.responder.kind,
                "judges": [spec.kind for spec in engine.config.judges],
            },
            "personas": engine.personas(),
        }

    @app.post("/ingest", dependencies=[Depends(require_token)])
    async def ingest(request: Request):
        body = await request.body()
        if not body.strip():
            raise HTTPException(status_code=400, detail="empty CSV body")
        with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False,
                                         encoding="utf-8") as fh:
            fh.write(body.decode("utf-8"))
            staged = fh.name
        try:
            count = engine.store.ingest_csv(staged)
        except HvacQaError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        finally:
            Path(staged).unlink(missing_ok=True)
        return {"ingested": count, "store_rows": engine.store.row_count}

    @app.get("/ask/stream/{trace_id}", dependencies=[Depends(require_token)])
    def stream(trace_id: str):
        payload = lookup(trace_id)
        if payload is None:
            raise HTTPException(status_code=404, detail="no such trace")
        text = payload["answer"]["text"]
        status = payload["answer"]["status"]

        def events():
            for chunk in _chunks(text):
                yield f"data: {json.dumps({'text': chunk})}\n\n"
            yield f"event: done\ndata: {json.dumps({'status': status})}\n\n"

        return StreamingResponse(events(), media_type="text/event-stream")

    return app


def serve(config: ServiceConfig) -> None:
    """Build the engine and block serving HTTP until interrupted."""
    import uvicorn

    engine = Engine(config)
    app = create_app(engine)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((config.listen_host, config.listen_port))
    except OSError as exc:
        raise BindFailure(
            f"{config.listen_host}:{config.listen_port}: {exc}") from None
    finally:
        probe.close()
    uvicorn.run(app, host=config.listen_host, port=config.listen_port,
                log_level="warning")


def serve_from_file(path) -> None:
    serve(load_config(path))
