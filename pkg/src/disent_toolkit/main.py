"""FastAPI application for browsing training runs."""

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import HTMLResponse

from disent_toolkit import __version__
from disent_toolkit.api.routes import router

app = FastAPI(
    title="Disent Toolkit",
    description="Read-only browser for training logs, metric reports and traversal images",
    version=__version__,
)

# CORS for local dashboards
app.add_middleware(
    CORSMiddleware,
    allow_origins=[
        "http://localhost:8765",
        "http://127.0.0.1:8765",
    ],
    allow_credentials=True,
    allow_methods=["GET"],
    allow_headers=["*"],
)

# Include API routes
app.include_router(router)


@app.get("/", response_class=HTMLResponse)
async def index():
    """Minimal landing page pointing at the JSON endpoints."""
    return HTMLResponse(
        content="""
        <html>
        <head><title>Disent Toolkit</title></head>
        <body style="font-family:system-ui;margin:2rem">
            <h1>Disent Toolkit run browser</h1>
            <p>Runs: <a href="/api/runs">/api/runs</a></p>
            <p>API docs: <a href="/docs">/docs</a></p>
        </body>
        </html>
        """,
        status_code=200,
    )
