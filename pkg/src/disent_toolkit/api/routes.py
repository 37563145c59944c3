"""API routes for the run browser."""

import logging
import os
from pathlib import Path

from fastapi import APIRouter, HTTPException, Query
from fastapi.responses import FileResponse

from disent_toolkit import __version__
from disent_toolkit.models.schemas import (
    HealthResponse,
    MetricReport,
    RunListResponse,
    RunLogResponse,
    TraversalStats,
)
from disent_toolkit.services.run_store import RunStore

router = APIRouter()

RUNS_ROOT_ENV = "DISENT_RUNS_ROOT"

# Global state
_store: RunStore | None = None

# Logger
logger = logging.getLogger(__name__)


def set_runs_root(root: Path) -> None:
    """Point the browser at a runs directory."""
    global _store
    _store = RunStore(root)
    logger.info("Serving runs from %s", root)


def _get_store() -> RunStore:
    """Current store; defaults to $DISENT_RUNS_ROOT or ./runs."""
    global _store
    if _store is None:
        _store = RunStore(Path(os.environ.get(RUNS_ROOT_ENV, "runs")))
    return _store


def _checked(name: str) -> None:
    """Raise 400 for malformed names and 404 for unknown runs."""
    try:
        found = _get_store().run_dir(name)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    if found is None:
        raise HTTPException(status_code=404, detail=f"Run not found: {name}")


@router.get("/api/health", response_model=HealthResponse)
async def health_check() -> HealthResponse:
    """Health check endpoint.

    Returns:
        HealthResponse: Health status and version information.
    """
    return HealthResponse(version=__version__)


@router.get("/api/runs", response_model=RunListResponse)
async def list_runs() -> RunListResponse:
    """List all runs under the runs root.

    Returns:
        RunListResponse: Run summaries sorted by name.
    """
    runs = _get_store().list_runs()
    return RunListResponse(runs=runs, count=len(runs))


@router.get("/api/runs/{name}/log", response_model=RunLogResponse)
async def get_log(name: str, tail: int | None = Query(None, ge=0)) -> RunLogResponse:
    """RunLog records of one run, optionally only the last ``tail``.

    Raises:
        HTTPException: 400 for an invalid name, 404 for an unknown run.
    """
    _checked(name)
    records = _get_store().read_log(name, tail=tail) or []
    return RunLogResponse(name=name, records=records)


@router.get("/api/runs/{name}/report", response_model=MetricReport)
async def get_report(name: str) -> MetricReport:
    """Metric report written by ``evaluate`` into the run directory."""
    _checked(name)
    report = _get_store().read_report(name)
    if report is None:
        raise HTTPException(status_code=404, detail=f"No metric report for run: {name}")
    return report


@router.get("/api/runs/{name}/traversal", response_model=TraversalStats)
async def get_traversal(name: str) -> TraversalStats:
    _checked(name)
    stats = _get_store().read_traversal(name)
    if stats is None:
        raise HTTPException(status_code=404, detail=f"No traversal export for run: {name}")
    return stats


@router.get("/api/runs/{name}/images/{filename}")
async def get_image(name: str, filename: str) -> FileResponse:
    """Serve one exported image from the run's traversal directory.

    Raises:
        HTTPException: 400 for path components or non-image names, 404 if missing.
    """
    _checked(name)
    try:
        path = _get_store().image_path(name, filename)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    if path is None:
        raise HTTPException(status_code=404, detail=f"Image not found: {filename}")
    media_type = "image/png" if path.suffix.lower() == ".png" else "image/x-portable-graymap"
    return FileResponse(path, media_type=media_type)
