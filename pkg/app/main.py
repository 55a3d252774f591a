#main.py
import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import models  # noqa: F401  (registers the ORM tables)
from .api.routes import router as api_router
from .config import settings
from .core.errors import BalanceError
from .core.predictors import ModelKind
from .db import Base, engine

logging.basicConfig(
    level=settings.log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

VERSION = "0.1.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    Base.metadata.create_all(bind=engine)
    logger.info("Report service up (env=%s, reports in %s)", settings.env, settings.reports_dir)
    yield
    logger.info("Report service shutting down")


app = FastAPI(
    title="Match Balance Report Service",
    version=VERSION,
    description=(
        "Offline reports for competitive-balance models: rolling-window "
        "F1 evaluation and feature significance over simulated match logs"
    ),
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix="/api", tags=["reports"])


@app.exception_handler(BalanceError)
async def balance_error_handler(request: Request, exc: BalanceError):
    logger.warning("%s %s rejected: %s", request.method, request.url.path, exc)
    return JSONResponse(status_code=400, content={"detail": str(exc), "error": type(exc).__name__})


@app.get("/")
async def root():
    return {
        "message": "Match Balance Report Service running",
        "version": VERSION,
        "model_kinds": [k.value for k in ModelKind],
        "endpoints": {
            "trigger_report": "/api/trigger_report",
            "get_report": "/api/get_report/{report_id}",
            "docs": "/docs",
        },
    }


@app.get("/health")
async def health_check():
    """Health check"""
    return {"status": "healthy"}
