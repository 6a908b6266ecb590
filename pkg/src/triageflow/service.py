"""HTTP face of the engine: a small JSON API over FastAPI.

The service is a thin adapter: every behaviour lives in the engine, and a
session snapshot store plus one lock per session keeps concurrent requests
for the same session serial. Responses never expose provider credentials or
engine internals, only the session view.
"""

from __future__ import annotations

import json
import re
import threading
from pathlib import Path
from typing import Any, Callable, Protocol

from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, ConfigDict

from .conversation import (
    Completed,
    ConversationEngine,
    Navigating,
    Session,
    StalledEscalation,
    trail_to_jsonl,
)
from .errors import (
    ClassifierFailure,
    FlowchartParseError,
    InvalidDemographics,
    ProviderError,
    SessionClosed,
)
from .flowcharts import NodeKind, Sex, parse_flowchart, serialize_flowchart, validate
from .retrieval import Demographics


# ---------------------------------------------------------------------------
# Session stores


class SessionStore(Protocol):
    def save(self, session: Session) -> None: ...

    def load(self, session_id: str) -> Session: ...

    def ids(self) -> list[str]: ...


class MemorySessionStore:
    """Keeps live Session objects in a dict. The default store."""

    def __init__(self) -> None:
        self._sessions: dict[str, Session] = {}

    def save(self, session: Session) -> None:
        self._sessions[session.session_id] = session

    def load(self, session_id: str) -> Session:
        return self._sessions[session_id]

    def ids(self) -> list[str]:
        return sorted(self._sessions)


_SESSION_ID_RE = re.compile(r"[0-9a-f]{32}")


class FileSessionStore:
    """One JSON snapshot per session, written atomically; survives restarts."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        if not _SESSION_ID_RE.fullmatch(session_id):
            raise KeyError(session_id)
        return self.directory / f"{session_id}.json"

    def save(self, session: Session) -> None:
        path = self._path(session.session_id)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(session.to_dict(), sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    def load(self, session_id: str) -> Session:
        path = self._path(session_id)
        if not path.exists():
            raise KeyError(session_id)
        return Session.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))


# ---------------------------------------------------------------------------
# Request bodies


class CreateSessionBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    sex: str | None = None
    age_value: int | None = None
    age_unit: str | None = None


class MessageBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str


class SwitchChartBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    flowchart_id: str


# ---------------------------------------------------------------------------
# Views


def session_view(session: Session, engine: ConversationEngine) -> dict[str, Any]:
    """Public projection of a session: enough to drive a chat client, nothing
    about providers or internal counters."""
    view: dict[str, Any] = {
        "session_id": session.session_id,
        "created_at": session.created_at,
        "phase": session.phase.name,
        "closed": session.closed,
        "turn_count": len(session.trail),
        "demographics": None,
        "opening_statement": session.opening_statement,
        "flowchart_id": None,
        "flowchart_name": None,
        "current_node_id": None,
        "question": None,
        "alternatives": [],
        "recommendation": None,
        "last_reply": session.last_reply,
    }
    if session.demographics is not None:
        view["demographics"] = {
            "sex": session.demographics.sex.value,
            "age_value": session.demographics.age_value,
            "age_unit": session.demographics.age_unit,
        }
    phase = session.phase
    chart_id: str | None = None
    if isinstance(phase, Navigating):
        chart_id = phase.flowchart_id
        view["current_node_id"] = phase.node_id
        chart = engine.library.get(chart_id)
        node = chart.node(phase.node_id)
        if node.kind is NodeKind.QUESTION:
            view["question"] = node.text
    elif isinstance(phase, Completed):
        chart_id = phase.flowchart_id
        view["current_node_id"] = phase.terminal_node_id
        view["recommendation"] = phase.recommendation
    elif isinstance(phase, StalledEscalation):
        chart_id = phase.flowchart_id
        view["current_node_id"] = phase.node_id
    if chart_id is not None:
        view["flowchart_id"] = chart_id
        view["flowchart_name"] = engine.library.get(chart_id).name
    if session.selection is not None:
        view["alternatives"] = [
            {
                "flowchart_id": c.flowchart_id,
                "name": c.name or c.flowchart_id,
            }
            for c in session.selection.candidates_shown
        ]
    return view


def _chart_summary(chart: Any) -> dict[str, Any]:
    return {
        "flowchart_id": chart.id,
        "name": chart.name,
        "specialty": chart.specialty,
        "applicability": chart.applicability.phrase(),
        "description": chart.description,
    }


# ---------------------------------------------------------------------------
# App factory


def create_app(
    engine: ConversationEngine,
    store: SessionStore | None = None,
    healthcheck: Callable[[], bool] | None = None,
) -> FastAPI:
    """Build the API around an engine. ``healthcheck`` is probed by /healthz
    when given (use it to surface provider reachability); without one the
    stack is assumed self-contained and always healthy."""
    sessions: SessionStore = store if store is not None else MemorySessionStore()
    app = FastAPI(title="triageflow", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.engine = engine
    app.state.store = sessions

    locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def lock_for(session_id: str) -> threading.Lock:
        with locks_guard:
            return locks.setdefault(session_id, threading.Lock())

    def load_or_404(session_id: str) -> Session:
        try:
            return sessions.load(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")

    @app.exception_handler(RequestValidationError)
    async def _validation_as_bad_request(request: Request, exc: RequestValidationError):
        errors = [
            {
                "loc": [str(part) for part in error.get("loc", ())],
                "msg": str(error.get("msg", "")),
            }
            for error in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": "invalid request", "errors": errors})

    @app.get("/healthz")
    def healthz() -> Any:
        if healthcheck is not None:
            try:
                healthy = bool(healthcheck())
            except Exception:
                healthy = False
            if not healthy:
                return JSONResponse(status_code=503, content={"status": "unavailable"})
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody) -> dict[str, Any]:
        fields = (body.sex, body.age_value, body.age_unit)
        demographics = None
        if any(f is not None for f in fields):
            if not all(f is not None for f in fields):
                raise HTTPException(
                    status_code=400,
                    detail="sex, age_value and age_unit must be provided together",
                )
            try:
                demographics = Demographics(Sex(body.sex), body.age_value, body.age_unit)
            except (ValueError, InvalidDemographics) as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        session = engine.start_session(demographics)
        sessions.save(session)
        return {"reply": session.last_reply, "session": session_view(session, engine)}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict[str, Any]:
        return {"session": session_view(load_or_404(session_id), engine)}

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody) -> dict[str, Any]:
        if not body.text.strip():
            raise HTTPException(status_code=400, detail="text must be non-empty")
        with lock_for(session_id):
            session = load_or_404(session_id)
            try:
                result = engine.submit_message(session, body.text)
            except SessionClosed as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except (ProviderError, ClassifierFailure) as exc:
                raise HTTPException(status_code=503, detail=str(exc))
            sessions.save(result.session)
        return {"reply": result.reply, "session": session_view(result.session, engine)}

    @app.post("/sessions/{session_id}/chart")
    def switch_chart(session_id: str, body: SwitchChartBody) -> dict[str, Any]:
        with lock_for(session_id):
            session = load_or_404(session_id)
            try:
                result = engine.switch_chart(session, body.flowchart_id)
            except SessionClosed as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except KeyError:
                raise HTTPException(
                    status_code=404, detail=f"unknown flowchart {body.flowchart_id!r}"
                )
            except (ProviderError, ClassifierFailure) as exc:
                raise HTTPException(status_code=503, detail=str(exc))
            sessions.save(result.session)
        return {"reply": result.reply, "session": session_view(result.session, engine)}

    @app.get("/sessions/{session_id}/trail")
    def get_trail(session_id: str) -> Response:
        session = load_or_404(session_id)
        return Response(
            content=trail_to_jsonl(session.trail), media_type="application/x-ndjson"
        )

    @app.get("/flowcharts")
    def list_flowcharts() -> dict[str, Any]:
        return {"flowcharts": [_chart_summary(chart) for chart in engine.library]}

    @app.get("/flowcharts/{chart_id}")
    def get_flowchart(chart_id: str) -> dict[str, Any]:
        try:
            chart = engine.library.get(chart_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown flowchart {chart_id!r}")
        return serialize_flowchart(chart)

    @app.post("/flowcharts:validate")
    def validate_flowchart(payload: Any = Body(...)) -> dict[str, Any]:
        if not isinstance(payload, dict):
            raise HTTPException(status_code=400, detail="body must be a flowchart object")
        try:
            chart = parse_flowchart(payload)
        except FlowchartParseError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        report = validate(chart, library=engine.library)
        return {
            "chart_id": report.chart_id,
            "ok": report.ok,
            "errors": [
                {"code": f.code.value, "where": f.where, "message": f.message}
                for f in report.errors
            ],
            "warnings": [
                {"code": f.code.value, "where": f.where, "message": f.message}
                for f in report.warnings
            ],
        }

    return app
