"""HTTP session server for the human oddity experiment.

Thin JSON layer over the session engine: creates sessions from a
dataset manifest, serves trials (without revealing kind or answer),
accepts responses with an acknowledgment only (never correctness),
finalizes sessions into score reports, and serves the stimulus images
under ``/assets/``. Session logs go to one JSONL file per session.
"""

from __future__ import annotations

import time
import uuid
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import __version__
from .dataset import DatasetManifest
from .sessions import ProtocolError, ScheduleError, Session, build_schedule


class SessionRequest(BaseModel):
    n_standard: int = Field(gt=0)
    seed: int = 0


class SessionCreated(BaseModel):
    session_id: str
    trial_count: int
    break_after: List[int]
    schedule_hash: str


class SessionStatus(BaseModel):
    session_id: str
    current_trial: int
    trial_count: int
    complete: bool
    finalized: bool


class TrialView(BaseModel):
    index: int
    images: List[str]
    is_break_after: bool


class ResponseBody(BaseModel):
    key: Optional[int] = Field(default=None, ge=1, le=3)
    elapsed_ms: float = Field(ge=0)
    advanced_ms: Optional[float] = None


class ResponseAck(BaseModel):
    ack: bool
    next_trial: Optional[int]


class ScoreReport(BaseModel):
    accuracy: Optional[float]
    catch_accuracy: Optional[float]
    n_standard_valid: int
    n_standard_total: int
    n_catch_total: int
    timeouts: int
    undefined_accuracy: bool


def create_app(manifest_path, assets_root, sessions_dir) -> FastAPI:
    """Build the service around one dataset manifest.

    ``assets_root`` is the directory the manifest's image paths are
    relative to; it is exposed read-only under ``/assets/``.
    ``sessions_dir`` receives one ``<session_id>.jsonl`` log per session.
    """
    manifest = DatasetManifest.load(manifest_path)
    assets_root = Path(assets_root)
    sessions_dir = Path(sessions_dir)
    sessions_dir.mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="structbench session server", version=__version__)
    sessions: Dict[str, Session] = {}
    # monotonic time of the most recent trial fetch, per session, for the
    # server-side sanity window on client-reported timing
    trial_served_at: Dict[str, float] = {}

    for log in sorted(sessions_dir.glob("*.jsonl")):
        try:
            restored = Session.load(log)
        except (ProtocolError, KeyError, ValueError):
            continue
        sessions[restored.session_id] = restored

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown session {session_id}")
        return session

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "version": __version__,
                "triplets": len(manifest.records),
                "catch_assets": len(manifest.catch_records)}

    @app.post("/session", response_model=SessionCreated)
    def create_session(body: SessionRequest) -> SessionCreated:
        try:
            schedule = build_schedule(manifest, body.n_standard, body.seed)
        except ScheduleError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        session_id = uuid.uuid4().hex[:12]
        session = Session(schedule, session_id=session_id,
                          log_path=sessions_dir / f"{session_id}.jsonl")
        sessions[session.session_id] = session
        return SessionCreated(session_id=session.session_id,
                              trial_count=len(schedule.trials),
                              break_after=list(schedule.break_after),
                              schedule_hash=schedule.schedule_hash())

    @app.get("/session/{session_id}", response_model=SessionStatus)
    def session_status(session_id: str) -> SessionStatus:
        session = get_session(session_id)
        return SessionStatus(session_id=session_id,
                             current_trial=session.current_trial_index,
                             trial_count=len(session.schedule.trials),
                             complete=session.complete,
                             finalized=session.finalized)

    @app.get("/session/{session_id}/trial/{k}", response_model=TrialView)
    def get_trial(session_id: str, k: int) -> TrialView:
        session = get_session(session_id)
        try:
            trial = session.trial(k)
        except ProtocolError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if k == session.current_trial_index:
            trial_served_at[session_id] = time.monotonic()
        return TrialView(index=k,
                         images=[f"/assets/{p}" for p in trial.display_paths()],
                         is_break_after=k in session.schedule.break_after)

    @app.post("/session/{session_id}/trial/{k}/response",
              response_model=ResponseAck)
    def submit(session_id: str, k: int, body: ResponseBody) -> ResponseAck:
        session = get_session(session_id)
        served = trial_served_at.get(session_id)
        server_elapsed = None if served is None \
            else (time.monotonic() - served) * 1000.0
        try:
            session.submit_response(k, body.key, body.elapsed_ms,
                                    server_elapsed_ms=server_elapsed,
                                    advanced_ms=body.advanced_ms)
        except ProtocolError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        next_trial = session.current_trial_index
        return ResponseAck(ack=True,
                           next_trial=None if session.complete else next_trial)

    @app.post("/session/{session_id}/finalize", response_model=ScoreReport)
    def finalize(session_id: str) -> ScoreReport:
        session = get_session(session_id)
        score = session.finalize()
        return ScoreReport(**score.to_json_dict())

    app.mount("/assets", StaticFiles(directory=str(assets_root)), name="assets")
    return app
