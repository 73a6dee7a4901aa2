"""FastAPI application exposing POST /rerank and GET /health.

Request handling is concurrent but inference is serialized behind a lock
and chunked into micro-batches, so memory stays bounded and identical
requests score identically.  Malformed bodies return 400, oversize
batches 413, and both endpoints answer while the model is still loading
(/rerank with 503, /health with status "loading").
"""

from __future__ import annotations

import os
import threading
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, field_validator

from .config import Settings
from .scorers import build_scorer


class DocumentIn(BaseModel):
    id: str = Field(min_length=1)
    text: str


class ScoreRequest(BaseModel):
    query: str
    documents: list[DocumentIn] = Field(min_length=1)
    batch_hint: int | None = Field(default=None, ge=1)

    @field_validator("documents")
    @classmethod
    def ids_unique(cls, documents: list[DocumentIn]) -> list[DocumentIn]:
        ids = [doc.id for doc in documents]
        if len(set(ids)) != len(ids):
            raise ValueError("document ids must be unique")
        return documents


class ScoreOut(BaseModel):
    id: str
    score: float


class ScoreResponse(BaseModel):
    scores: list[ScoreOut]
    model_id: str
    truncated_count: int


def create_app(settings: Settings | None = None, load_on_startup: bool = True) -> FastAPI:
    settings = settings or Settings.from_env()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if load_on_startup:
            _load_model(app)
        yield

    app = FastAPI(title="rerank-service", lifespan=lifespan)
    app.state.settings = settings
    app.state.scorer = None
    app.state.status = "loading"
    app.state.error = None
    app.state.inference_lock = threading.Lock()

    def _load_model(app: FastAPI) -> None:
        try:
            app.state.scorer = build_scorer(
                settings.model, settings.device, settings.max_tokens
            )
            app.state.status = "ready"
        except Exception as exc:  # surfaced via /health, not a crash loop
            app.state.status = "error"
            app.state.error = str(exc)

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request: Request, exc: RequestValidationError):
        detail = [
            {
                "loc": [str(part) for part in err.get("loc", ())],
                "msg": str(err.get("msg", "")),
                "type": str(err.get("type", "")),
            }
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.get("/health")
    async def health():
        payload = {
            "status": app.state.status,
            "model_id": app.state.scorer.model_id if app.state.scorer else settings.model,
            "max_tokens": settings.max_tokens,
        }
        if app.state.error:
            payload["error"] = app.state.error
        return payload

    @app.post("/rerank", response_model=ScoreResponse)
    async def rerank(request: ScoreRequest) -> ScoreResponse:
        if app.state.status != "ready":
            raise HTTPException(
                status_code=503, detail=f"model not ready (status: {app.state.status})"
            )
        if len(request.documents) > settings.max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(request.documents)} exceeds limit {settings.max_batch}",
            )
        scorer = app.state.scorer
        chunk_size = min(request.batch_hint or settings.micro_batch, settings.micro_batch)
        scores: list[float] = []
        truncated = 0
        with app.state.inference_lock:
            for start in range(0, len(request.documents), chunk_size):
                chunk = request.documents[start : start + chunk_size]
                chunk_scores, chunk_truncated = scorer.score_pairs(
                    request.query, [doc.text for doc in chunk]
                )
                scores.extend(chunk_scores)
                truncated += chunk_truncated
        return ScoreResponse(
            scores=[
                ScoreOut(id=doc.id, score=score)
                for doc, score in zip(request.documents, scores)
            ],
            model_id=scorer.model_id,
            truncated_count=truncated,
        )

    return app


def serve() -> None:
    """Console entry point: run under uvicorn with env-based settings."""
    import uvicorn

    uvicorn.run(
        create_app(),
        host=os.environ.get("RERANK_HOST", "127.0.0.1"),
        port=int(os.environ.get("RERANK_PORT", "8400")),
        log_level=os.environ.get("RERANK_LOG_LEVEL", "info"),
    )
