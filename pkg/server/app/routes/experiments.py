from fastapi import APIRouter, HTTPException, Depends, Query
from sqlalchemy.orm import Session
from typing import Optional
import logging

from app.models.database import get_db
from app.models.schemas import ExperimentRun
from app.models.pydantic_models import ExperimentConfig, ExperimentRunResponse, APIResponse
from app.services.experiment_service import ExperimentService, config_hash
from app.utils.errors import BeltramiError, SchemaError, OutOfRegimeError

logger = logging.getLogger(__name__)

router = APIRouter()


def status_for(error: BeltramiError) -> int:
    if isinstance(error, SchemaError):
        return 400
    if isinstance(error, OutOfRegimeError):
        return 422
    return 500


@router.get("/", response_model=APIResponse)
async def list_runs(
    command: Optional[str] = None,
    skip: int = Query(0, ge=0),
    limit: int = Query(100, ge=1, le=1000),
    db: Session = Depends(get_db)
):
    """List stored runs, newest first"""
    try:
        query = db.query(ExperimentRun)
        if command:
            query = query.filter(ExperimentRun.command == command)
        runs = query.order_by(ExperimentRun.id.desc()).offset(skip).limit(limit).all()
        return APIResponse(
            success=True,
            data=[ExperimentRunResponse.model_validate(run) for run in runs],
            message=f"Retrieved {len(runs)} runs"
        )

    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error retrieving runs: {str(e)}")


@router.get("/{run_id}", response_model=APIResponse)
async def get_run(
    run_id: int,
    db: Session = Depends(get_db)
):
    try:
        run = db.query(ExperimentRun).filter(ExperimentRun.id == run_id).first()
        if not run:
            raise HTTPException(status_code=404, detail="Run not found")

        return APIResponse(
            success=True,
            data=ExperimentRunResponse.model_validate(run),
            message="Run retrieved successfully"
        )

    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error retrieving run: {str(e)}")


@router.post("/{command}", response_model=APIResponse)
async def run_experiment(
    command: str,
    config: Optional[ExperimentConfig] = None,
    db: Session = Depends(get_db)
):
    """Run one experiment command and store its summary"""
    config = config or ExperimentConfig()
    try:
        outcome = ExperimentService().run(command, config)
    except BeltramiError as e:
        logger.warning("%s failed: %s", command, e.message)
        _store(db, command, config, "failed", e.exit_code, e.to_payload())
        raise HTTPException(status_code=status_for(e), detail=e.to_payload())
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error running {command}: {str(e)}")

    try:
        run = _store(db, command, config, "ok", 0, outcome.summary.model_dump(mode="json"))
        return APIResponse(
            success=True,
            data={
                "run": ExperimentRunResponse.model_validate(run),
                "records": [r.model_dump(mode="json") for r in outcome.records],
            },
            message=f"{command} produced {len(outcome.records)} records"
        )

    except Exception as e:
        db.rollback()
        raise HTTPException(status_code=500, detail=f"Error storing run: {str(e)}")


def _store(db: Session, command: str, config: ExperimentConfig, status: str, exit_code: int, summary) -> ExperimentRun:
    run = ExperimentRun(
        command=command,
        config_hash=config_hash(config),
        status=status,
        exit_code=exit_code,
        summary=summary,
    )
    db.add(run)
    db.commit()
    db.refresh(run)
    return run
