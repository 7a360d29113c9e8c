"""HTTP session service: the line search loop behind a JSON API.

Exposes session creation, choice submission, and export for the browser UI.
Candidate rendering is pluggable: the identity renderer returns bare vectors
(the UI falls back to a visual encoding), an external command or HTTP endpoint
can turn each slider point into a playable asset (e.g. synthesized audio).

Guarantees, in order of the request lifecycle:

* per-session single writer: a second choice arriving while one is in flight
  gets 409, never queued;
* renderer failures leave the session at its prior step (502, retryable);
* every event is flushed to the session's JSONL log before the 2xx response.
"""

import copy
import json
import os
import subprocess
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import httpx
import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .embedding import EmbeddingTable, from_quantile, mean_endpoints
from .session import Session, SessionCompleteError, SessionConfig

DEFAULT_RENDER_TIMEOUT = 30.0
DEFAULT_MAX_CONCURRENT_RENDERS = 4


class RenderError(RuntimeError):
    """One or more candidates failed to render; carries per-candidate detail."""

    def __init__(self, failures):
        self.failures = failures  # list of {"slider_index": ..., "error": ...}
        super().__init__(f"{len(failures)} candidate render(s) failed")


@dataclass(frozen=True)
class RendererBinding:
    """How slider points become presentable assets."""

    kind: str = "identity"  # identity | external_command | http
    command: tuple = ()
    endpoint: str = ""
    timeout: float = DEFAULT_RENDER_TIMEOUT
    cache_dir: str | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "external_command", "http"):
            raise ValueError(f"unknown renderer kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("renderer timeout must be positive")
        if self.kind == "external_command" and not self.command:
            raise ValueError("external_command renderer needs a command")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http renderer needs an endpoint")
        object.__setattr__(self, "command", tuple(self.command))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "command" in d and isinstance(d["command"], str):
            d["command"] = tuple(d["command"].split())
        return cls(**d)


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8940
    renderer: RendererBinding = field(default_factory=RendererBinding)
    table_path: str | None = None
    log_dir: str | None = None
    max_concurrent_renders: int = DEFAULT_MAX_CONCURRENT_RENDERS
    reference_url: str | None = None
    session: SessionConfig = field(default_factory=SessionConfig)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "renderer" in d:
            d["renderer"] = RendererBinding.from_dict(d["renderer"])
        if "session" in d:
            d["session"] = SessionConfig.from_dict(d["session"])
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _validate_annotations(segments):
    """Renderer-supplied playback annotations must be ascending and
    non-overlapping (start, end, label) triples."""
    out = []
    prev_end = -np.inf
    for item in segments:
        start, end, label = float(item[0]), float(item[1]), str(item[2])
        if end <= start:
            raise ValueError(f"annotation ({start}, {end}) has non-positive length")
        if start < prev_end:
            raise ValueError(f"annotation starting at {start} overlaps the previous one")
        prev_end = end
        out.append([start, end, label])
    return out


def _render_one(binding, payload):
    """Invoke the renderer for one candidate; returns asset fields."""
    if binding.kind == "identity":
        return {}
    if binding.kind == "external_command":
        proc = subprocess.run(
            list(binding.command), input=json.dumps(payload).encode(),
            capture_output=True, timeout=binding.timeout)
        if proc.returncode != 0:
            raise RuntimeError(
                f"renderer exited {proc.returncode}: {proc.stderr.decode(errors='replace')[:400]}")
        reply = json.loads(proc.stdout.decode())
    else:  # http
        resp = httpx.post(binding.endpoint, json=payload, timeout=binding.timeout)
        resp.raise_for_status()
        reply = resp.json()
    out = {}
    url = reply.get("asset_url") or reply.get("asset_path")
    if url:
        out["asset_url"] = str(url)
    if "segments" in reply and reply["segments"] is not None:
        out["segments"] = _validate_annotations(reply["segments"])
    return out


class _SessionEntry:
    def __init__(self, session, log_path, table):
        self.session = session
        self.lock = threading.Lock()
        self.log_path = log_path
        self.table = table
        self.persisted = 0  # events already flushed to the log


def _persist_pending(entry):
    """Append any unflushed session events to the log, fsync before return."""
    if entry.log_path is None:
        entry.persisted = len(entry.session.events)
        return
    pending = entry.session.events[entry.persisted:]
    if not pending:
        return
    with open(entry.log_path, "a") as fh:
        for ev in pending:
            fh.write(json.dumps(ev) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    entry.persisted = len(entry.session.events)


def create_app(config=None):
    """Build the FastAPI application serving the session API."""
    config = config or ServiceConfig()
    table = EmbeddingTable.from_csv(config.table_path) if config.table_path else None
    if config.log_dir:
        os.makedirs(config.log_dir, exist_ok=True)

    app = FastAPI(title="slsopt session service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.config = config
    app.state.table = table
    app.state.sessions = {}
    render_pool = ThreadPoolExecutor(max_workers=max(1, config.max_concurrent_renders))

    @app.exception_handler(RequestValidationError)
    def _bad_request(request: Request, exc):  # malformed bodies are client errors
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def _error(status, detail):
        return JSONResponse(status_code=status, content={"detail": detail})

    def _candidates(entry, session_id):
        """Render and serialize the current segment's slider candidates."""
        session = entry.session
        segment = session.segment
        payloads = []
        for i in range(segment.n_points):
            vector = segment.points[i]
            item = {"session": session_id, "step": session.step, "index": i,
                    "vector": vector.tolist()}
            if entry.table is not None:
                item["embedding"] = from_quantile(entry.table, vector).tolist()
            payloads.append(item)
        futures = [render_pool.submit(_render_one, config.renderer, p) for p in payloads]
        candidates, failures = [], []
        for i, fut in enumerate(futures):
            cand = {"slider_index": i, "vector": payloads[i]["vector"]}
            if "embedding" in payloads[i]:
                cand["embedding"] = payloads[i]["embedding"]
            try:
                cand.update(fut.result())
            except Exception as exc:
                failures.append({"slider_index": i, "error": str(exc)})
            candidates.append(cand)
        if failures:
            raise RenderError(failures)
        return candidates

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        dim = body.get("dim")
        if not isinstance(dim, int) or dim < 1:
            return _error(400, f"dim must be a positive integer, got {dim!r}")
        mode = body.get("endpoint_mode", "random")
        if mode not in ("random", "table_means", "explicit"):
            return _error(400, f"unknown endpoint_mode {mode!r}")

        session_config = config.session
        overrides = {}
        for key in ("n_points", "max_steps", "extension_factor", "seed"):
            if key in body:
                overrides[key] = body[key]
        if overrides:
            try:
                session_config = replace(session_config, **overrides)
            except (TypeError, ValueError) as exc:
                return _error(400, f"invalid config override: {exc}")

        endpoints = None
        if mode == "table_means":
            if table is None:
                return _error(404, "no embedding table configured on this service")
            if table.dim != dim:
                return _error(400, f"table dimension {table.dim} != requested dim {dim}")
            labels = body.get("labels")
            if not (isinstance(labels, (list, tuple)) and len(labels) == 2):
                return _error(400, "table_means mode needs labels: [label_a, label_b]")
            try:
                endpoints = mean_endpoints(table, str(labels[0]), str(labels[1]))
            except ValueError as exc:
                return _error(404, str(exc))
        elif mode == "explicit":
            eps = body.get("endpoints")
            if not (isinstance(eps, (list, tuple)) and len(eps) == 2):
                return _error(400, "explicit mode needs endpoints: [a, b]")
            endpoints = (np.asarray(eps[0], dtype=float), np.asarray(eps[1], dtype=float))

        try:
            session = Session(dim, endpoints=endpoints, config=session_config)
        except ValueError as exc:
            return _error(400, str(exc))

        session_id = uuid.uuid4().hex
        log_path = (os.path.join(config.log_dir, f"{session_id}.jsonl")
                    if config.log_dir else None)
        entry = _SessionEntry(session, log_path, table)
        try:
            candidates = _candidates(entry, session_id)
        except RenderError as exc:
            return _error(502, {"message": str(exc), "failures": exc.failures})
        _persist_pending(entry)
        app.state.sessions[session_id] = entry
        return {
            "session_id": session_id,
            "step": session.step,
            "max_steps": session.max_steps,
            "dim": dim,
            "reference_url": config.reference_url,
            "candidates": candidates,
        }

    @app.post("/sessions/{session_id}/choice")
    def submit_choice(session_id: str, body: dict):
        entry = app.state.sessions.get(session_id)
        if entry is None:
            return _error(404, f"unknown session {session_id}")
        index = body.get("slider_index")
        if not isinstance(index, int):
            return _error(400, f"slider_index must be an integer, got {index!r}")
        if not entry.lock.acquire(blocking=False):
            return _error(409, "another choice is already in flight for this session")
        try:
            if entry.session.complete:
                return _error(410, "session complete: step budget exhausted")
            # Advance a copy so a renderer failure leaves the live session
            # at its prior step, retryable.
            trial = copy.deepcopy(entry.session)
            try:
                trial.submit_choice(index)
            except (IndexError, TypeError) as exc:
                return _error(400, str(exc))
            except SessionCompleteError as exc:
                return _error(410, str(exc))
            trial_entry = _SessionEntry(trial, entry.log_path, entry.table)
            trial_entry.persisted = entry.persisted
            try:
                candidates = _candidates(trial_entry, session_id)
            except RenderError as exc:
                return _error(502, {"message": str(exc), "failures": exc.failures})
            _persist_pending(trial_entry)
            entry.session = trial
            entry.persisted = trial_entry.persisted
            chosen = trial.history[-1]
            return {
                "session_id": session_id,
                "step": trial.step,
                "remaining_steps": trial.max_steps - trial.step,
                "chosen_index": chosen.chosen_index,
                "chosen_point": chosen.chosen_point.tolist(),
                "segment": trial.segment.to_dict(),
                "candidates": candidates,
            }
        finally:
            entry.lock.release()

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str, mode: str = "last_chosen"):
        entry = app.state.sessions.get(session_id)
        if entry is None:
            return _error(404, f"unknown session {session_id}")
        session = entry.session
        if session.step < 1:
            return _error(409, "no choices yet: nothing to export")
        if mode not in ("last_chosen", "map_argmax"):
            return _error(400, f"unknown export mode {mode!r}")
        best = session.best_point(mode)
        out = {
            "session_id": session_id,
            "mode": mode,
            "step": session.step,
            "best_point": best.tolist(),
            "history": [
                {"step": h.step, "chosen_index": h.chosen_index,
                 "chosen_point": h.chosen_point.tolist()}
                for h in session.history
            ],
            "events": session.events,
        }
        if entry.table is not None:
            out["embedding"] = from_quantile(entry.table, best).tolist()
        return out

    @app.get("/sessions/{session_id}")
    def session_state(session_id: str):
        entry = app.state.sessions.get(session_id)
        if entry is None:
            return _error(404, f"unknown session {session_id}")
        session = entry.session
        return {
            "session_id": session_id,
            "step": session.step,
            "max_steps": session.max_steps,
            "complete": session.complete,
            "dim": session.dim,
            "reference_url": config.reference_url,
        }

    return app


def run_service(config):
    """Blocking entry point: serve the app with uvicorn."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
