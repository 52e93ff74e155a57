"""HTTP facade: five JSON endpoints over one AssistantService."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .errors import CorruptSession, SessionNotFound
from .pipeline import AssistantService, session_to_dict


def create_app(service: AssistantService) -> FastAPI:
    app = FastAPI(title="priha", docs_url=None, redoc_url=None)

    @app.post("/v1/sessions")
    def create_session() -> dict:
        session = service.create_session()
        return {"session_id": session.session_id}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, payload: dict) -> dict:
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            raise HTTPException(status_code=400, detail="body must carry non-empty 'text'")
        try:
            reply = service.handle_message(session_id, text)
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except CorruptSession as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return reply.as_dict()

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        try:
            session = service.get_session(session_id)
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except CorruptSession as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return session_to_dict(session)

    @app.get("/v1/traces/{trace_id}")
    def get_trace(trace_id: str) -> dict:
        trace = service.get_trace(trace_id)
        if trace is None:
            raise HTTPException(status_code=404, detail=f"unknown trace {trace_id!r}")
        return trace

    @app.get("/v1/health")
    def health() -> dict:
        return service.health()

    return app
