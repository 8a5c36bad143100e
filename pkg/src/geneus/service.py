"""REST surface.

``POST /v1/user-stories`` takes ``{"document": "<text>"}`` and answers with
the generated result envelope; ``GET /v1/runs/{id}`` returns a stored
result; ``GET /healthz`` answers ``ok``. Errors come back as
``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import json
import logging
from typing import Any

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from starlette.concurrency import run_in_threadpool
from starlette.exceptions import HTTPException as StarletteHTTPException

from .config import AppConfig
from .errors import CoverageGap, IngestError, ParseFailed, PipelineError, SchemaInvalid, provider_cause
from .ingest import FormatHint, SourceDocument
from .promptkit import GenerationParams
from .provider import build_provider
from .schema import serialize
from .store import RunNotFound, RunStore
from .storygen import PipelineConfig, run_pipeline

log = logging.getLogger(__name__)


def error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}}, status_code=status)


def pipeline_config(config: AppConfig) -> PipelineConfig:
    return PipelineConfig(
        params=GenerationParams(model_id=config.provider.model_id, temperature=config.temperature, seed=config.seed),
        templates_dir=config.templates_dir,
        chunk_max_chars=config.chunk_max_chars,
    )


def _pipeline_failure(exc: PipelineError) -> JSONResponse:
    if provider_cause(exc) is not None:
        return error_response(502, "provider_error", str(exc))
    if exc.stage == "ingest" or isinstance(exc.cause, IngestError):
        return error_response(400, "unusable_document", str(exc))
    if isinstance(exc.cause, (SchemaInvalid, ParseFailed, CoverageGap)):
        return error_response(422, "schema_validation_failed", str(exc))
    log.exception("pipeline failed", exc_info=exc)
    return error_response(500, "internal_error", str(exc))


def create_app(config: AppConfig, provider: Any = None, store: RunStore | None = None) -> FastAPI:
    provider = provider if provider is not None else build_provider(config.provider)
    store = store if store is not None else RunStore(config.output_dir)
    pcfg = pipeline_config(config)
    limit = config.max_request_bytes

    app = FastAPI(title="GeneUS", version="0.1.0")

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException) -> JSONResponse:
        return error_response(exc.status_code, "http_error", str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        return error_response(400, "bad_request", str(exc))

    @app.get("/healthz", response_class=PlainTextResponse)
    async def healthz() -> str:
        return "ok"

    @app.post("/v1/user-stories")
    async def user_stories(request: Request) -> Response:
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > limit:
            return error_response(400, "document_too_large", f"request body exceeds {limit} bytes")
        body = await request.body()
        if len(body) > limit:
            return error_response(400, "document_too_large", f"request body exceeds {limit} bytes")
        try:
            payload = json.loads(body)
        except (ValueError, UnicodeDecodeError) as exc:
            return error_response(400, "bad_request", f"body is not JSON: {exc}")
        document = payload.get("document") if isinstance(payload, dict) else None
        if not isinstance(document, str) or not document.strip():
            return error_response(400, "empty_document", "field 'document' must be a non-empty string")
        doc = SourceDocument(document.encode("utf-8"), FormatHint.UNKNOWN, "request")
        try:
            result = await run_in_threadpool(run_pipeline, doc, provider, pcfg)
        except PipelineError as exc:
            return _pipeline_failure(exc)
        record = await run_in_threadpool(store.save, result)
        return Response(
            content=serialize(result),
            media_type="application/json",
            headers={"X-Run-Id": record.run_id, "Location": f"/v1/runs/{record.run_id}"},
        )

    @app.get("/v1/runs/{run_id}")
    async def get_run(run_id: str) -> Response:
        try:
            text = store.result_text(run_id)
        except RunNotFound:
            return error_response(404, "not_found", f"no run {run_id}")
        return Response(content=text, media_type="application/json")

    return app


def serve(config: AppConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port)
