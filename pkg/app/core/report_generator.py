# app/core/report_generator.py

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import pandas as pd

from app.config import RunConfig, settings
from app.core.analysis import significance_report
from app.core.features import feature_matrix
from app.core.pipeline import (
    best_subset_mask,
    build_specs,
    first_test_day,
    load_features,
    run_evaluation,
    schema_for,
    wants_best_subset,
)
from app.db import SessionLocal
from app.models import Report

logger = logging.getLogger(__name__)


def generate_report_async(report_id: str, params: dict):
    """Generate report asynchronously"""
    logger.info(f"Starting async report generation for {report_id}")
    thread = threading.Thread(target=generate_report, args=(report_id, params))
    thread.daemon = True
    thread.start()
    logger.info(f"Report generation thread started for {report_id}")
    return thread


def run_config_from(params: dict) -> RunConfig:
    return RunConfig.load(
        None,
        models=params.get("models"),
        theta=params.get("theta"),
        omega=params.get("omega"),
        k_days=params.get("k_days"),
        max_windows=params.get("max_windows"),
        best_subset=params.get("best_subset"),
        mode=params.get("mode"),
        seed=params.get("seed"),
    )


def evaluation_frame(params: dict) -> pd.DataFrame:
    """Evaluate each requested model on its own worker; rows keep request order."""
    cfg = run_config_from(params)
    schema = schema_for(cfg)
    features = load_features(params["log_path"], schema)
    mask = None
    if wants_best_subset(cfg.models, cfg):
        mask = best_subset_mask(features, schema, cfg, before_day=first_test_day(features, cfg) - 2)

    def one(name: str) -> pd.DataFrame:
        return run_evaluation(features, schema, replace(cfg, models=[name], best_subset=False), mask).to_frame()

    names = [spec.label for spec in build_specs(cfg.models, cfg, mask)]
    with ThreadPoolExecutor(max_workers=settings.max_parallel_workers) as executor:
        frames = list(executor.map(one, names))
    return pd.concat(frames, ignore_index=True)


def significance_frame_for(params: dict) -> pd.DataFrame:
    cfg = run_config_from(params)
    schema = schema_for(cfg)
    features = load_features(params["log_path"], schema)
    return significance_report(
        feature_matrix(features, schema), features["score_diff"].to_numpy(dtype=float), schema, cfg.r_max
    )


def generate_report(report_id: str, params: dict):
    """Run one report job and record its outcome on the Report row."""
    db = SessionLocal()
    try:
        kind = params.get("kind", "evaluate")
        if kind == "evaluate":
            frame = evaluation_frame(params)
        elif kind == "significance":
            frame = significance_frame_for(params)
        else:
            raise ValueError(f"unknown report kind {kind!r}")

        output_dir = settings.reports_dir
        os.makedirs(output_dir, exist_ok=True)
        file_path = os.path.join(output_dir, f"{report_id}.csv")
        frame.to_csv(file_path, index=False)

        report = db.query(Report).filter(Report.report_id == report_id).first()
        if report:
            report.status = "Complete"
            report.file_path = file_path
            db.commit()
            logger.info(f"Report {report_id} completed successfully ({len(frame)} rows)")

    except Exception as e:
        logger.error(f"Report generation failed: {e}")
        db.rollback()
        report = db.query(Report).filter(Report.report_id == report_id).first()
        if report:
            report.status = f"Failed: {str(e)}"
            db.commit()
    finally:
        db.close()
