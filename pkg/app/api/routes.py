# app/api/routes.py
from typing import List, Literal, Optional

import orjson
from fastapi import APIRouter, Depends, HTTPException
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field, field_validator
from sqlalchemy.orm import Session
from app.config import DEFAULT_MODELS
from app.db import get_db
from app.core.errors import ConfigError
from app.core.matchlog import check_header
from app.core.predictors import ModelKind
from app.core.report_generator import generate_report_async
from app.models import Report
import os

router = APIRouter()


class TriggerReportRequest(BaseModel):
    kind: Literal["evaluate", "significance"] = "evaluate"
    log_path: str
    models: List[str] = Field(default_factory=lambda: list(DEFAULT_MODELS))
    theta: float = Field(3.0, gt=0)
    omega: float = Field(0.3, gt=0, le=0.5)
    k_days: int = Field(30, ge=4)
    max_windows: Optional[int] = Field(None, ge=1)
    best_subset: bool = False
    mode: Literal["3v3", "6v6"] = "3v3"

    @field_validator("models")
    @classmethod
    def known_models(cls, models: List[str]) -> List[str]:
        for name in models:
            try:
                ModelKind.parse(name.rstrip("+"))
            except ConfigError as e:
                raise ValueError(str(e)) from e
        return models


@router.post("/trigger_report")
async def trigger_report(request: TriggerReportRequest, db: Session = Depends(get_db)):
    """Trigger report generation"""
    if not os.path.exists(request.log_path):
        raise HTTPException(status_code=404, detail="Match log not found")
    check_header(request.log_path)

    params = request.model_dump()
    report = Report(kind=request.kind, params=orjson.dumps(params).decode())
    db.add(report)
    db.commit()
    db.refresh(report)

    generate_report_async(report.report_id, params)

    return {"report_id": report.report_id}


@router.get("/get_report/{report_id}")
async def get_report(report_id: str, db: Session = Depends(get_db)):
    """Get report status or download"""
    report = db.query(Report).filter(Report.report_id == report_id).first()

    if not report:
        raise HTTPException(status_code=404, detail="Report not found")

    if report.status == "Running":
        return {"status": "Running", "kind": report.kind}

    if report.status == "Complete" and report.file_path:
        if not os.path.exists(report.file_path):
            raise HTTPException(status_code=404, detail="Report file not found")

        return FileResponse(
            path=report.file_path,
            media_type="text/csv",
            filename=f"{report.kind}_{report_id}.csv",
        )

    # Report failed or in unknown state
    return {"status": report.status, "kind": report.kind}
