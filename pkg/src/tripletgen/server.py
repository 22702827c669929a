"""HTTP API for the listening studies.

Serves pairwise A/B comparisons and MOS collection to browser clients. The
server hands out canonical clip-A/clip-B assignments and opaque clip tokens;
presentation-order randomization is the client's job, and the submitted
mapping is stored for audit. Verdicts are idempotent per client key.
"""

from __future__ import annotations

import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel, Field

from .elo import DEFAULT_INITIAL_RATING, DEFAULT_K, MOS_INSTRUCTIONS, EloStudy, MosRating
from .errors import ConflictError, NotFoundError


class SampleIn(BaseModel):
    id: str
    input_wav: str
    instruction: str
    outputs: dict[str, str]  # contender id -> wav path


class ContenderIn(BaseModel):
    id: str
    label: str = ""


class StudyIn(BaseModel):
    name: str = ""
    contenders: list[ContenderIn]
    samples: list[SampleIn]
    k_factor: float = DEFAULT_K
    initial_rating: float = DEFAULT_INITIAL_RATING
    allow_ties: bool = True


class VerdictIn(BaseModel):
    verdict: str
    idempotency_key: str = ""
    displayed_order: list[str] = Field(default_factory=list)  # e.g. ["b", "a"]


class MosIn(BaseModel):
    sample_ref: str
    quality: int
    relevance: int
    faithfulness: int


class ServerState:
    def __init__(self, storage_dir=None):
        self.studies: dict[str, EloStudy] = {}
        self.clips: dict[str, str] = {}  # token -> path
        self.sessions: dict[str, dict] = {}  # token -> {study_id, active comparison id}
        self.verdict_acks: dict[tuple, dict] = {}  # (comparison, key) -> response
        self.displayed_orders: dict[str, list[str]] = {}
        self.storage_dir = Path(storage_dir) if storage_dir else None

    def register_clip(self, path: str) -> str:
        token = uuid.uuid4().hex
        self.clips[token] = path
        return token

    def persist(self, study: EloStudy) -> None:
        if self.storage_dir is not None:
            self.storage_dir.mkdir(parents=True, exist_ok=True)
            study.save_log(self.storage_dir / f"{study.id}.jsonl")

    def study(self, study_id: str) -> EloStudy:
        if study_id not in self.studies:
            raise HTTPException(404, f"unknown study {study_id!r}")
        return self.studies[study_id]


def _comparison_payload(state: ServerState, comparison) -> dict:
    return {
        "status": "comparison",
        "comparison_id": comparison.id,
        "sample_id": comparison.sample_id,
        "instruction": comparison.instruction,
        "input_clip": f"/clips/{comparison.input_ref}",
        "clip_a": f"/clips/{comparison.clip_a}",
        "clip_b": f"/clips/{comparison.clip_b}",
    }


def create_app(storage_dir=None) -> FastAPI:
    app = FastAPI(title="listening-study service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    state = ServerState(storage_dir)
    app.state.registry = state

    @app.exception_handler(NotFoundError)
    async def _not_found(request, exc):
        raise HTTPException(404, str(exc))

    @app.exception_handler(ConflictError)
    async def _conflict(request, exc):
        raise HTTPException(409, str(exc))

    @app.exception_handler(ValueError)
    async def _invalid(request, exc):
        raise HTTPException(422, str(exc))

    @app.post("/studies")
    def create_study(body: StudyIn):
        study_id = uuid.uuid4().hex
        study = EloStudy(study_id, body.name, body.k_factor, body.initial_rating, body.allow_ties)
        for contender in body.contenders:
            study.add_contender(contender.id, contender.label)
        for sample in body.samples:
            input_token = state.register_clip(sample.input_wav)
            output_tokens = {
                cid: state.register_clip(path) for cid, path in sample.outputs.items()
            }
            study.add_sample(sample.id, input_token, sample.instruction, output_tokens)
        state.studies[study_id] = study
        state.persist(study)
        return {"study_id": study_id}

    @app.get("/studies/{study_id}/meta")
    def study_meta(study_id: str):
        study = state.study(study_id)
        return {
            "study_id": study.id,
            "name": study.name,
            "instructions": MOS_INSTRUCTIONS,
            "contender_count": len(study.contenders),
            "sample_count": len(study.samples),
            "progress": study.progress(),
            "allow_ties": study.allow_ties,
        }

    @app.post("/studies/{study_id}/sessions")
    def create_session(study_id: str):
        state.study(study_id)
        token = uuid.uuid4().hex
        state.sessions[token] = {"study_id": study_id, "active": None}
        return {"session": token}

    @app.post("/studies/{study_id}/next")
    def next_item(study_id: str, body: dict):
        study = state.study(study_id)
        session_token = body.get("session", "")
        session = state.sessions.get(session_token)
        if session is None or session["study_id"] != study_id:
            raise HTTPException(404, "unknown session")
        active_id = session.get("active")
        if active_id:
            active = study.comparisons.get(active_id)
            if active is not None and active.pending:
                return _comparison_payload(state, active)
        comparison = study.schedule_pair()
        if comparison is None:
            return {"status": "complete", "progress": study.progress()}
        session["active"] = comparison.id
        state.persist(study)
        return _comparison_payload(state, comparison)

    @app.get("/studies/{study_id}/pending")
    def pending(study_id: str):
        study = state.study(study_id)
        return {"pending": [_comparison_payload(state, c) for c in study.pending()]}

    @app.get("/clips/{token}")
    def clip(token: str):
        if token not in state.clips:
            raise HTTPException(404, "unknown clip")
        path = Path(state.clips[token])
        if not path.exists():
            raise HTTPException(404, f"clip file missing: {path.name}")
        return Response(content=path.read_bytes(), media_type="audio/wav")

    @app.post("/comparisons/{comparison_id}/verdict")
    def submit_verdict(comparison_id: str, body: VerdictIn):
        for study in state.studies.values():
            if comparison_id in study.comparisons:
                ack_key = (comparison_id, body.idempotency_key)
                if body.idempotency_key and ack_key in state.verdict_acks:
                    return state.verdict_acks[ack_key]
                ratings = study.submit_verdict(comparison_id, body.verdict)
                if body.displayed_order:
                    state.displayed_orders[comparison_id] = body.displayed_order
                for session in state.sessions.values():
                    if session.get("active") == comparison_id:
                        session["active"] = None
                state.persist(study)
                response = {"ratings": ratings, "comparison_id": comparison_id}
                if body.idempotency_key:
                    state.verdict_acks[ack_key] = response
                return response
        raise HTTPException(404, f"unknown comparison {comparison_id!r}")

    @app.get("/studies/{study_id}/ranking")
    def ranking(study_id: str):
        study = state.study(study_id)
        return {
            "ranking": [
                {"id": c.id, "label": c.label, "rating": c.rating, "games": c.games}
                for c in study.ranking()
            ]
        }

    @app.get("/studies/{study_id}/samples")
    def samples(study_id: str):
        study = state.study(study_id)
        return {
            "samples": [
                {
                    "id": s.id,
                    "instruction": s.instruction,
                    "input_clip": f"/clips/{s.input_ref}",
                    "outputs": {cid: f"/clips/{token}" for cid, token in s.outputs.items()},
                }
                for s in study.samples.values()
            ]
        }

    @app.post("/studies/{study_id}/mos")
    def submit_mos(study_id: str, body: MosIn):
        study = state.study(study_id)
        study.submit_mos(MosRating(body.sample_ref, body.quality, body.relevance, body.faithfulness))
        state.persist(study)
        return {"accepted": True}

    @app.get("/studies/{study_id}/mos/aggregate")
    def aggregate_mos(study_id: str):
        return state.study(study_id).aggregate_mos()

    return app
