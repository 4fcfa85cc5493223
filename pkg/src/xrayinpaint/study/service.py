"""HTTP JSON API for the observer study, versioned under /v1.

Blinding is enforced at the serialization boundary: the trial payload
contains only the pair id, position-named image URLs, and progress
counters. Which side is real, and which model altered the other, exists
solely in server-side state. Mutating operations run under one lock, so
each session's flow is serialized and the response log is an orderly
single appender.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .storage import (
    ConflictError,
    NotFoundError,
    SequenceError,
    SessionStateError,
    StudyStore,
)

TRIAL_FIELDS = {"pair_id", "index", "total", "left_image", "right_image"}


class CreateSession(BaseModel):
    observer_id: str = ""


class SubmitResponse(BaseModel):
    pair_id: str
    chosen_position: str


def trial_payload(store: StudyStore, session: dict, index: int) -> dict:
    pair = store.by_pair[session["order"][index]]
    return {
        "pair_id": pair.pair_id,
        "index": index,
        "total": len(session["order"]),
        "left_image": f"/v1/images/{pair.left_image}",
        "right_image": f"/v1/images/{pair.right_image}",
    }


def create_app(store: StudyStore) -> FastAPI:
    app = FastAPI(title="2AFC observer study", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    lock = threading.Lock()

    @app.exception_handler(NotFoundError)
    async def _not_found(request, exc):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(SequenceError)
    async def _sequence(request, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(ConflictError)
    async def _conflict(request, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(SessionStateError)
    async def _state(request, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.post("/v1/sessions")
    def create_session(body: CreateSession):
        with lock:
            session = store.create_session(body.observer_id)
        return {
            "session_id": session["session_id"],
            "n_trials": len(session["order"]),
            "n_responses": 0,
        }

    @app.get("/v1/sessions/{session_id}")
    def session_info(session_id: str):
        session = store.get_session(session_id)
        return {
            "session_id": session_id,
            "n_trials": len(session["order"]),
            "n_responses": len(session["responses"]),
            "state": store.session_state(session),
        }

    @app.get("/v1/sessions/{session_id}/trials/{index}")
    def get_trial(session_id: str, index: int):
        session = store.get_session(session_id)
        store.trial(session_id, index)  # enforces sequence and state
        return trial_payload(store, session, index)

    @app.post("/v1/sessions/{session_id}/responses")
    def post_response(session_id: str, body: SubmitResponse):
        with lock:
            record = store.record_response(session_id, body.pair_id, body.chosen_position)
            session = store.get_session(session_id)
            n = len(session["responses"])
            total = len(session["order"])
        return {
            "recorded": True,
            "replayed": record["replayed"],
            "n_responses": n,
            "next_index": n if n < total else None,
            "completed": n >= total,
        }

    @app.get("/v1/sessions/{session_id}/results")
    def session_results(session_id: str):
        return store.session_results(session_id).to_dict()

    @app.get("/v1/results")
    def results():
        try:
            return store.results().to_dict()
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/v1/results.csv")
    def results_csv():
        lines = ["pair_id,model_id,correct"]
        lines += [",".join(row) for row in store.results_csv_rows()]
        return PlainTextResponse("\n".join(lines) + "\n", media_type="text/csv")

    @app.get("/v1/images/{name}")
    def image(name: str):
        safe = Path(name).name
        path = store.image_dir / safe
        if not path.is_file():
            raise NotFoundError(f"no image {safe}")
        return FileResponse(path, media_type="image/png")

    return app
