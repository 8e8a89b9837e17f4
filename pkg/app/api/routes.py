# app/api/routes.py
from __future__ import annotations

import functools
import logging
from typing import Any

import anyio
from fastapi import APIRouter, Query, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field
from starlette.datastructures import UploadFile

from app.core import config
from app.core.distsys import joint_signature
from app.core.errors import StructureError
from app.core.formula import WeakModulus
from app.core.jobs import baf_record, demo_record, make_system, rho_record, validate_record
from app.core.mstruct import MetricStructure
from app.core.registry import StructureRegistry, get_registry
from app.models.records import (
    BafRequest,
    ErrorResponse,
    RegistryEntry,
    ResultResponse,
    RhoRequest,
    UploadResponse,
)

logger = logging.getLogger(__name__)

router = APIRouter()

# ──────────────────────────────────────────────────────────────────────
# Knobs (env)
# ──────────────────────────────────────────────────────────────────────

_JOB_SEM = anyio.Semaphore(config.max_concurrent_jobs())

_READ_CHUNK_BYTES = 256 * 1024


class SealResponse(BaseModel):
    seal: str = Field(..., description="Registry seal (ETag candidate)")


class StructureList(BaseModel):
    registry_seal: str
    structures: list[RegistryEntry]


# ──────────────────────────────────────────────────────────────────────
# Helpers
# ──────────────────────────────────────────────────────────────────────

def _etag_from_seal(seal: str) -> str:
    return f"\"{seal}\""


def _cache_headers(response: Response, *, etag: str) -> None:
    response.headers["ETag"] = etag
    response.headers["Cache-Control"] = "private, max-age=0, must-revalidate"


def _resp_304(*, etag: str) -> Response:
    return Response(
        status_code=304,
        headers={"ETag": etag, "Cache-Control": "private, max-age=0, must-revalidate"},
    )


def _error(errors: list[str], *, status_code: int = 400) -> JSONResponse:
    return JSONResponse(status_code=status_code, content=ErrorResponse(errors=errors).model_dump())


async def _collect_uploads(request: Request) -> list[UploadFile]:
    """Every UploadFile in the form, whatever its field name."""
    form = await request.form()
    return [v for _k, v in form.multi_items() if isinstance(v, UploadFile)]


async def _read_upload_capped(up: UploadFile, *, max_bytes: int) -> tuple[bytes | None, list[str]]:
    """Stream-read with a hard cap. Returns (bytes or None, notes)."""
    name = up.filename or "structure.json"
    buf = bytearray()
    try:
        while True:
            chunk = await up.read(_READ_CHUNK_BYTES)
            if not chunk:
                break
            buf.extend(chunk)
            if len(buf) > max_bytes:
                return None, [f"{name}: file too large (> {max_bytes} bytes), skipped"]
    finally:
        try:
            await up.close()
        except Exception:
            pass
    if not buf:
        return None, [f"{name}: empty file, skipped"]
    return bytes(buf), []


def _valid(reg: StructureRegistry, sid: str) -> MetricStructure:
    entry = reg.entry(sid)
    if not entry.valid:
        first = entry.violations[0] if entry.violations else {}
        raise StructureError(f"structure {sid} is invalid: {first.get('detail', 'see /validate')}")
    return reg.get(sid)


def _rho_job(req: RhoRequest) -> dict[str, Any]:
    reg = get_registry()
    m, n = _valid(reg, req.left), _valid(reg, req.right)
    sys = make_system(req.system, joint_signature(m, n), req.truncation, req.generators)
    return rho_record(
        sys,
        m,
        n,
        mode=req.mode,
        anchors=req.anchors,
        force=req.force,
        budget=req.budget,
        seed=req.seed,
    )


def _baf_job(req: BafRequest) -> dict[str, Any]:
    reg = get_registry()
    m, n = _valid(reg, req.left), _valid(reg, req.right)
    sys = make_system(req.system, joint_signature(m, n), req.truncation, req.generators)
    omega = WeakModulus(tuple(req.omega), req.shift_increasing)
    return baf_record(sys, omega, m, n, k=req.k, rounds=req.rounds, rows=req.rows)


async def _run(fn: Any, *args: Any) -> dict[str, Any]:
    async with _JOB_SEM:
        return await anyio.to_thread.run_sync(functools.partial(fn, *args))


# ──────────────────────────────────────────────────────────────────────
# Routes
# ──────────────────────────────────────────────────────────────────────

@router.post(
    "/structures",
    summary="Upload structure files (multipart, any field name) into the registry",
    response_model=UploadResponse,
)
async def upload_structures(
    request: Request,
    response: Response,
    max_bytes_per_file: int | None = Query(None, ge=1_000, le=100_000_000),
) -> UploadResponse | JSONResponse:
    cap = max_bytes_per_file or config.max_upload_bytes()
    uploads = await _collect_uploads(request)
    if not uploads:
        return _error(["No files received."])

    reg = get_registry()
    entries: list[RegistryEntry] = []
    errors: list[str] = []
    for up in uploads:
        name = up.filename or "structure.json"
        blob, notes = await _read_upload_capped(up, max_bytes=cap)
        errors.extend(notes)
        if blob is None:
            continue
        try:
            entries.append(await anyio.to_thread.run_sync(functools.partial(reg.add_bytes, blob, name=name)))
        except ValueError as e:
            errors.append(str(e))

    if not entries:
        return _error(errors or ["All uploaded files were rejected."])

    seal = reg.seal()
    _cache_headers(response, etag=_etag_from_seal(seal))
    return UploadResponse(
        files_received=len(uploads),
        structures=entries,
        registry_seal=seal,
        errors=errors,
    )


@router.get(
    "/structures",
    summary="Registered structures",
    response_model=StructureList,
    responses={304: {"description": "Not Modified"}},
)
def list_structures(request: Request, response: Response) -> StructureList | Response:
    reg = get_registry()
    seal = reg.seal()
    etag = _etag_from_seal(seal)
    if (request.headers.get("if-none-match") or "").strip() == etag:
        return _resp_304(etag=etag)
    _cache_headers(response, etag=etag)
    return StructureList(registry_seal=seal, structures=reg.entries())


@router.get("/structures/{sid}", summary="One registered structure", response_model=RegistryEntry)
def get_structure(sid: str) -> RegistryEntry:
    return get_registry().entry(sid)


@router.get(
    "/structures/{sid}/validate",
    summary="Full validation record for a registered structure",
    response_model=ResultResponse,
)
def validate_structure_route(sid: str) -> ResultResponse:
    return ResultResponse(record=validate_record(get_registry().get(sid)))


@router.post("/rho", summary="Distance between two registered structures", response_model=ResultResponse)
async def rho(req: RhoRequest) -> ResultResponse:
    return ResultResponse(record=await _run(_rho_job, req))


@router.post("/baf", summary="Back-and-forth pseudo-metric (finite rounds or capped fixed point)", response_model=ResultResponse)
async def baf(req: BafRequest) -> ResultResponse:
    return ResultResponse(record=await _run(_baf_job, req))


@router.get("/demo/{name}", summary="Run an acceptance scenario", response_model=ResultResponse)
async def demo(name: str) -> ResultResponse:
    return ResultResponse(record=await _run(demo_record, name))


@router.get(
    "/seal",
    summary="Registry seal (ETag candidate)",
    response_model=SealResponse,
    responses={304: {"description": "Not Modified"}},
)
def seal(request: Request, response: Response) -> SealResponse | Response:
    s = get_registry().seal()
    etag = _etag_from_seal(s)
    if (request.headers.get("if-none-match") or "").strip() == etag:
        return _resp_304(etag=etag)
    _cache_headers(response, etag=etag)
    return SealResponse(seal=s)
