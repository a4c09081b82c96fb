import sys
import os
if '__file__' in globals():
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import json
import logging
from pathlib import Path
from typing import Any, Dict, List

from dotenv import load_dotenv
from fastapi import Depends, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from services.benchmark_service import SUITE_VERSION, BenchmarkReport
from services.errors import ConfigurationError, SchemaError
from services.reporting_service import ReportingService, compare_reports

load_dotenv()

# Configure logging
logging.basicConfig(level=os.getenv("ADVBENCH_LOG_LEVEL", "INFO"))
logger = logging.getLogger(__name__)

app = FastAPI(title="Adversarial Benchmark Reports", version=SUITE_VERSION)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)


class ReportSummary(BaseModel):
    name: str
    mode: str
    target: str
    converged: bool
    episodes: int
    test_mean_regret: float
    test_mean_perturbations: float


class CompareRequest(BaseModel):
    reports: List[str] = Field(min_length=1)


def get_reports_dir() -> Path:
    return Path(os.getenv("ADVBENCH_REPORTS_DIR", "results"))


def _load(reports_dir: Path, name: str) -> BenchmarkReport:
    try:
        return ReportingService(reports_dir).load_report(name)
    except ConfigurationError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except FileNotFoundError:
        raise HTTPException(status_code=404, detail=f"Report '{name}' not found")
    except SchemaError as e:
        logger.warning(f"⚠️ Unreadable report {name}: {e}")
        raise HTTPException(status_code=422, detail=str(e))


@app.get("/")
async def root():
    return {"message": "Adversarial benchmark report API is running"}


@app.get("/health")
async def health_check(reports_dir: Path = Depends(get_reports_dir)):
    return {
        "status": "healthy",
        "suite_version": SUITE_VERSION,
        "reports_dir": str(reports_dir),
        "reports_dir_exists": reports_dir.is_dir(),
    }


@app.get("/reports", response_model=List[ReportSummary])
async def list_reports(reports_dir: Path = Depends(get_reports_dir)):
    return [
        ReportSummary(
            name=name,
            mode=report.mode.value,
            target=report.target.policy_id,
            converged=report.converged,
            episodes=report.episodes,
            test_mean_regret=report.test_mean_regret,
            test_mean_perturbations=report.test_mean_perturbations,
        )
        for name, report in ReportingService(reports_dir).list_reports()
    ]


@app.get("/reports/{name}")
async def get_report(name: str, reports_dir: Path = Depends(get_reports_dir)) -> Dict[str, Any]:
    return _load(reports_dir, name).model_dump(mode="json")


@app.get("/reports/{name}/histogram")
async def get_histogram(name: str, reports_dir: Path = Depends(get_reports_dir)):
    report = _load(reports_dir, name)
    return {
        "timestep": list(range(len(report.histogram))),
        "count": report.histogram,
        "first_quartile_fraction": report.first_quartile_fraction,
    }


@app.post("/compare")
async def compare(request: CompareRequest, reports_dir: Path = Depends(get_reports_dir)):
    reports = [_load(reports_dir, name) for name in request.reports]
    try:
        frame = compare_reports(reports)
    except SchemaError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return {"columns": list(frame.columns), "rows": json.loads(frame.to_json(orient="records"))}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host=os.getenv("ADVBENCH_HOST", "0.0.0.0"), port=int(os.getenv("ADVBENCH_PORT", "8000")))
