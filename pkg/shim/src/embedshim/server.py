"""HTTP layer. Two routes:

POST /embed  {model, pooling, texts}  ->  {model, dim, embeddings}
GET  /health                          ->  {status, models, dims}

Error bodies are {"error": message} with 400 for bad requests (empty texts,
unknown model or pooling), 413 for an oversized batch, 503 until the models
finish loading, and 500 for an inference failure.
"""

from __future__ import annotations

import argparse
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from embedshim.encoding import POOLINGS
from embedshim.service import ModelRegistry, ServiceSettings


class ShimError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class EmbedRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: str
    pooling: str = "mean"
    texts: list[str]


def create_app(settings: Optional[ServiceSettings] = None) -> FastAPI:
    settings = settings or ServiceSettings.from_env()
    registry = ModelRegistry(settings)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        registry.load_all()
        yield

    app = FastAPI(title="embedshim", version="0.1.0", lifespan=lifespan)
    app.state.registry = registry

    @app.exception_handler(ShimError)
    async def shim_error(request: Request, exc: ShimError) -> JSONResponse:
        return JSONResponse({"error": exc.message}, status_code=exc.status)

    @app.get("/health")
    def health():
        if not registry.ready:
            return JSONResponse(
                {"status": "loading", "models": [], "dims": {}}, status_code=503
            )
        return {"status": "ok", "models": list(registry.models), "dims": registry.dims()}

    @app.post("/embed")
    def embed(req: EmbedRequest):
        if not registry.ready:
            raise ShimError(503, "models are still loading")
        if not req.texts:
            raise ShimError(400, "texts must be a non-empty list")
        if len(req.texts) > settings.max_texts:
            raise ShimError(
                413, f"batch of {len(req.texts)} texts exceeds the limit of {settings.max_texts}"
            )
        if req.model not in registry.models:
            raise ShimError(
                400, f"unknown model {req.model!r}; loaded: {sorted(registry.models)}"
            )
        if req.pooling not in POOLINGS:
            raise ShimError(400, f"unknown pooling {req.pooling!r}; expected one of {POOLINGS}")
        try:
            vectors = registry.embed(req.model, req.pooling, req.texts)
        except Exception as exc:  # noqa: BLE001 - surface as a 500, not a traceback
            raise ShimError(500, f"inference failure: {exc}") from exc
        return {
            "model": req.model,
            "dim": int(vectors.shape[1]),
            "embeddings": [row.tolist() for row in vectors],
        }

    return app


def main(argv: Optional[list[str]] = None) -> int:
    import uvicorn

    settings = ServiceSettings.from_env()
    parser = argparse.ArgumentParser(prog="embedshim", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=settings.port)
    args = parser.parse_args(argv)
    uvicorn.run(create_app(settings), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
