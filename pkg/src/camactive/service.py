"""HTTP labeling service: exposes a running session to human annotators.

Endpoints (JSON bodies):
  POST /sessions                      create a session from a pool directory
  GET  /sessions/{id}/queue           currently pending, unanswered items
  POST /sessions/{id}/labels          idempotent label submission
  GET  /sessions/{id}/progress        counters, state, learning curve
  GET  /sessions/{id}/classes         ordered class table
  GET  /sessions/{id}/curve.csv       learning-curve export
  GET  /crops/{id}.png                crop image for display

Submissions are idempotent per (batch_id, crop_id); when the final pending
item arrives the orchestrator's commit runs synchronously under the
session's single-writer lock, then the next batch is issued.
"""

from __future__ import annotations

import os
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .loop import (
    LoopConfig,
    SessionState,
    SessionStore,
    commit_batch,
    create_session,
    issue_batch,
)
from .pool import load_pool_dir


class CreateSessionRequest(BaseModel):
    pool_dir: str
    config: dict = {}
    holdout_fraction: float = 0.2


class LabelSubmission(BaseModel):
    crop_id: str
    label: str
    batch_id: int | None = None
    submitter: str | None = None


class SubmitRequest(BaseModel):
    labels: list[LabelSubmission]


@dataclass
class LiveSession:
    state: SessionState
    store: SessionStore | None
    lock: threading.Lock = field(default_factory=threading.Lock)
    # (batch_id, crop_id) -> label name; survives commits for idempotency.
    committed: dict[tuple[int, str], str] = field(default_factory=dict)
    answers: dict[int, int] = field(default_factory=dict)
    phase: str = "awaiting_labels"
    step_started: float = field(default_factory=time.perf_counter)


def _split_holdout(pool, truth, fraction: float, seed: int):
    """Carve a labeled holdout off the pool, disjoint from the query pool."""
    import numpy as np

    from .pool import Pool

    n = len(pool)
    n_hold = max(1, int(n * fraction))
    rng = np.random.default_rng(seed + 104729)
    hold = set(int(i) for i in rng.choice(n, size=n_hold, replace=False))
    keep = [i for i in range(n) if i not in hold]
    hold_idx = sorted(hold)
    hold_feats = pool.features[hold_idx]
    hold_labels = np.array(
        [pool.class_names.index(truth[pool.item_ids[i]]) for i in hold_idx], dtype=int
    )
    sub = Pool(
        item_ids=[pool.item_ids[i] for i in keep],
        features=pool.features[keep],
        class_names=pool.class_names,
        crop_dir=pool.crop_dir,
    )
    return sub, hold_feats, hold_labels


def create_app(session_root: str | None = None) -> FastAPI:
    app = FastAPI(title="camactive labeling service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: dict[str, LiveSession] = {}
    crop_dirs: list[str] = []

    def get_session(session_id: str) -> LiveSession:
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return sessions[session_id]

    @app.post("/sessions")
    def post_session(req: CreateSessionRequest):
        try:
            pool, truth = load_pool_dir(req.pool_dir)
        except (OSError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"cannot load pool: {exc}")
        if truth is None:
            raise HTTPException(
                status_code=400,
                detail="pool directory needs truth.csv to build the evaluation holdout",
            )
        cfg = LoopConfig.from_dict({**_default_config_dict(), **req.config})
        sub_pool, hold_feats, hold_labels = _split_holdout(
            pool, truth, req.holdout_fraction, cfg.seed
        )
        state = create_session(sub_pool, cfg, hold_feats, hold_labels)
        session_id = uuid.uuid4().hex[:12]
        store = None
        if session_root is not None:
            store = SessionStore(os.path.join(session_root, session_id))
            store.init(state)
        sessions[session_id] = LiveSession(state=state, store=store)
        if pool.crop_dir:
            crop_dirs.append(pool.crop_dir)
        return {"session_id": session_id, "pending": len(state.pending)}

    @app.get("/sessions/{session_id}/queue")
    def get_queue(session_id: str):
        live = get_session(session_id)
        with live.lock:
            if live.phase != "awaiting_labels":
                return {"items": []}
            batch_id = live.state.step_count
            items = [
                {
                    "crop_id": live.state.pool.item_ids[i],
                    "image": f"/crops/{live.state.pool.item_ids[i]}.png",
                    "batch_id": batch_id,
                    "issued_at": live.step_started,
                }
                for i in live.state.pending
                if i not in live.answers
            ]
        return {"items": items}

    @app.post("/sessions/{session_id}/labels")
    def post_labels(session_id: str, req: SubmitRequest):
        live = get_session(session_id)
        with live.lock:
            state = live.state
            if state.done:
                raise HTTPException(status_code=409, detail="session is done")
            batch_id = state.step_count
            pending_ids = {state.pool.item_ids[i]: i for i in state.pending}
            accepted = 0
            errors = []
            journal: list[tuple[str, str]] = []
            for sub in req.labels:
                key = (sub.batch_id if sub.batch_id is not None else batch_id, sub.crop_id)
                if key in live.committed:
                    if live.committed[key] != sub.label:
                        raise HTTPException(
                            status_code=409,
                            detail=(
                                f"conflicting resubmission for {sub.crop_id!r}: "
                                f"already labeled {live.committed[key]!r}"
                            ),
                        )
                    continue  # duplicate identical submission: no-op success
                if key[0] != batch_id or sub.crop_id not in pending_ids:
                    errors.append({"crop_id": sub.crop_id, "error": "not in the pending batch"})
                    continue
                if sub.label not in state.pool.class_names:
                    errors.append({"crop_id": sub.crop_id, "error": f"unknown class {sub.label!r}"})
                    continue
                live.committed[key] = sub.label
                live.answers[pending_ids[sub.crop_id]] = state.pool.class_index(sub.label)
                journal.append((sub.crop_id, sub.label))
                accepted += 1
            if journal and live.store is not None:
                live.store.append_labels(batch_id, journal, oracle_kind="human")
            batch_complete = len(live.answers) == len(state.pending) and state.pending
            if batch_complete:
                live.phase = "training"
                commit_batch(state, dict(live.answers), live.step_started)
                live.answers = {}
                if live.store is not None:
                    live.store.write_state(state)
                if state.labels_acquired + state.config.batch_size <= state.config.budget:
                    issue_batch(state)
                    if live.store is not None:
                        live.store.write_state(state)
                    live.step_started = time.perf_counter()
                    live.phase = "awaiting_labels"
                else:
                    live.phase = "done"
        return {"accepted": accepted, "errors": errors, "status": "ok"}

    @app.get("/sessions/{session_id}/progress")
    def get_progress(session_id: str):
        live = get_session(session_id)
        with live.lock:
            state = live.state
            phase = "done" if state.done else live.phase
            return {
                "labels_acquired": state.labels_acquired,
                "step": state.step_count,
                "budget": state.config.budget,
                "state": phase,
                "curve": [
                    {"labels": p.labels_acquired, "accuracy": p.accuracy, "wall_time_s": p.wall_time}
                    for p in state.history.points
                ],
            }

    @app.get("/sessions/{session_id}/classes")
    def get_classes(session_id: str):
        live = get_session(session_id)
        return {"classes": live.state.pool.class_names}

    @app.get("/sessions/{session_id}/curve.csv")
    def get_curve(session_id: str):
        live = get_session(session_id)
        with live.lock:
            return Response(content=live.state.history.to_csv(), media_type="text/csv")

    @app.get("/crops/{crop_id}.png")
    def get_crop(crop_id: str):
        for d in crop_dirs:
            path = os.path.join(d, f"{crop_id}.png")
            if os.path.exists(path):
                with open(path, "rb") as f:
                    return Response(content=f.read(), media_type="image/png")
        raise HTTPException(status_code=404, detail=f"no crop image for {crop_id!r}")

    app.state.sessions = sessions
    return app


def _default_config_dict() -> dict:
    return LoopConfig().to_dict()
