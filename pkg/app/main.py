# app/main.py
from __future__ import annotations

import logging
from typing import Any

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app.api.routes import router as correla_router
from app.core import config
from app.core.demos import DEMOS
from app.core.distsys import BUILTINS
from app.core.errors import CorrelaError
from app.core.jsonio import sealed
from app.models.records import ErrorResponse

# ──────────────────────────────────────────────────────────────────────────────
# CORRELA API
#
# Upload finite metric structures, then ask for distances between them:
#   rho  → least distortion over correlations (exact or heuristic)
#   baf  → back-and-forth pseudo-metric and capped Scott rank
#
# The structure registry is process-local unless CORRELA_REGISTRY_PATH is set.
# ──────────────────────────────────────────────────────────────────────────────

SERVICE_NAME = "CORRELA"
VERSION = "1.0.0"

ROUTES = [
    {"path": "/", "method": "GET", "purpose": "Service manifest (JSON)"},
    {"path": "/health", "method": "GET", "purpose": "Liveness check"},
    {"path": "/docs", "method": "GET", "purpose": "Interactive Swagger UI"},
    {"path": "/correla/structures", "method": "POST", "purpose": "Upload structure files (multipart)"},
    {"path": "/correla/structures", "method": "GET", "purpose": "List registered structures"},
    {"path": "/correla/structures/{id}/validate", "method": "GET", "purpose": "Validation record"},
    {"path": "/correla/rho", "method": "POST", "purpose": "Distance between two registered structures"},
    {"path": "/correla/baf", "method": "POST", "purpose": "Back-and-forth pseudo-metric"},
    {"path": "/correla/demo/{name}", "method": "GET", "purpose": "Acceptance scenario"},
    {"path": "/correla/seal", "method": "GET", "purpose": "Registry seal (ETag)"},
]


def build_manifest() -> dict[str, Any]:
    return sealed(
        {
            "name": SERVICE_NAME,
            "version": VERSION,
            "routes": ROUTES,
            "systems": list(BUILTINS),
            "demos": list(DEMOS),
            "docs": {"swagger": "/docs", "redoc": "/redoc", "openapi": "/openapi.json"},
        }
    )


def create_app() -> FastAPI:
    logging.basicConfig(
        level=getattr(logging, config.log_level().upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    app = FastAPI(
        title=SERVICE_NAME,
        version=VERSION,
        docs_url="/docs",
        redoc_url="/redoc",
        openapi_url="/openapi.json",
        description="Distortion systems, correlation search and back-and-forth metrics over finite metric structures.",
    )
    app.add_middleware(CORSMiddleware, **config.cors_settings())
    app.include_router(correla_router, prefix="/correla", tags=["correla"])

    @app.exception_handler(CorrelaError)
    async def correla_error(_request: Request, exc: CorrelaError) -> JSONResponse:
        return JSONResponse(status_code=400, content=ErrorResponse(errors=[str(exc)]).model_dump())

    @app.get("/health", summary="Health check", tags=["system"])
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/", summary="Service manifest", tags=["system"])
    def root() -> JSONResponse:
        return JSONResponse(build_manifest(), headers={"Cache-Control": "no-store"})

    return app


app = create_app()
