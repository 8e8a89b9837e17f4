# app/core/config.py
from __future__ import annotations

import os

# ──────────────────────────────────────────────────────────────────────
# Tolerance (fixed: validation must not drift across platforms)
# ──────────────────────────────────────────────────────────────────────

TOL = 1e-9


# ──────────────────────────────────────────────────────────────────────
# Env knobs
# ──────────────────────────────────────────────────────────────────────

def _safe_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except Exception:
        return default


def _safe_float(name: str, default: float) -> float:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        v = float(raw)
    except Exception:
        return default
    if v != v:  # NaN
        return default
    return v


def max_cells() -> int:
    """rho_exact size guard: cells (left points × right points) per sort."""
    return max(1, _safe_int("CORRELA_MAX_CELLS", 36))


def threads() -> int:
    """Worker threads for search partitioning; 0 means hardware count."""
    n = _safe_int("CORRELA_THREADS", 0)
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)


def heuristic_budget() -> int:
    return max(1, _safe_int("CORRELA_HEURISTIC_BUDGET", 2000))


def seed() -> int:
    return _safe_int("CORRELA_SEED", 0)


def baf_depth() -> int:
    return max(0, _safe_int("CORRELA_BAF_DEPTH", 4))


def baf_max_entries() -> int:
    return max(1, _safe_int("CORRELA_BAF_MAX_ENTRIES", 4_000_000))


def atomic_max_tuples() -> int:
    return max(1, _safe_int("CORRELA_ATOMIC_MAX_TUPLES", 200_000))


def registry_path() -> str | None:
    raw = os.getenv("CORRELA_REGISTRY_PATH", "").strip()
    return raw or None


def max_upload_bytes() -> int:
    return max(1_000, _safe_int("CORRELA_MAX_UPLOAD_BYTES", 10_000_000))


def max_concurrent_jobs() -> int:
    return max(1, _safe_int("CORRELA_MAX_CONCURRENT_JOBS", 8))


def log_level() -> str:
    return (os.getenv("CORRELA_LOG_LEVEL", "") or "WARNING").strip().upper() or "WARNING"


def grid_slack() -> float:
    """Acceptance slack for grid-truncated demos."""
    return max(0.0, _safe_float("CORRELA_GRID_SLACK", TOL))


# ──────────────────────────────────────────────────────────────────────
# CORS (API only)
# ──────────────────────────────────────────────────────────────────────

def _env_list(name: str) -> list[str]:
    return [v.strip() for v in os.getenv(name, "").split(",") if v.strip()]


def cors_settings() -> dict[str, object]:
    """
    Keyword arguments for CORSMiddleware. With no CORRELA_CORS_ORIGINS and no
    CORRELA_CORS_ORIGIN_REGEX every origin matches by regex; a literal "*" is
    dropped when credentials are on.
    """
    credentials = os.getenv("CORRELA_CORS_CREDENTIALS", "").strip().lower() in {"1", "true", "yes", "on"}
    origins = [o for o in _env_list("CORRELA_CORS_ORIGINS") if not (credentials and o == "*")]
    regex = os.getenv("CORRELA_CORS_ORIGIN_REGEX", "").strip() or (None if origins else ".*")
    return {
        "allow_origins": origins,
        "allow_origin_regex": regex,
        "allow_credentials": credentials,
        "allow_methods": ["*"],
        "allow_headers": ["*"],
        "expose_headers": ["ETag", "Cache-Control"],
        "max_age": max(0, _safe_int("CORRELA_CORS_MAX_AGE", 600)),
    }
