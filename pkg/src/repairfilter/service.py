"""Reference scorer service speaking the ``POST /v1/score`` protocol.

Backed by the deterministic mock scorers, so it doubles as the local stub for
end-to-end tests of the HTTP client. ``fail_first`` makes the first N requests
answer 503 to exercise retry handling.
"""

from __future__ import annotations

import threading
from typing import Literal

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import __version__
from .scoring import FOLDS, mock_embedding, mock_qe_score


class PairIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    source: str
    target: str


class ScoreRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["qe", "embedding"]
    profile: str
    pairs: list[PairIn]


class ScoreOut(BaseModel):
    id: int
    score: float


class EmbeddingOut(BaseModel):
    id: int
    source_vec: list[float]
    target_vec: list[float]


class ScoreResponse(BaseModel):
    scores: list[ScoreOut]


class EmbeddingResponse(BaseModel):
    embeddings: list[EmbeddingOut]


def create_app(dimension: int = 64, seed: int = 0, fold: str = "identity", fail_first: int = 0) -> FastAPI:
    app = FastAPI(title="repairfilter mock scorer", version=__version__)
    lock = threading.Lock()
    state = {"requests": 0, "failures_left": fail_first}
    app.state.counters = state
    fold_fn = FOLDS[fold]

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "requests": state["requests"]}

    @app.post("/v1/score", response_model=ScoreResponse | EmbeddingResponse)
    def score(req: ScoreRequest):
        with lock:
            state["requests"] += 1
            if state["failures_left"] > 0:
                state["failures_left"] -= 1
                return JSONResponse({"detail": "injected failure"}, status_code=503)
        if req.kind == "qe":
            return ScoreResponse(
                scores=[ScoreOut(id=p.id, score=mock_qe_score(p.source, p.target, fold_fn)) for p in req.pairs]
            )
        try:
            out = [
                EmbeddingOut(
                    id=p.id,
                    source_vec=mock_embedding(p.source, dimension, seed).tolist(),
                    target_vec=mock_embedding(p.target, dimension, seed).tolist(),
                )
                for p in req.pairs
            ]
        except ValueError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=422)
        return EmbeddingResponse(embeddings=out)

    return app
