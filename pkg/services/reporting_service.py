"""
Reporting Service
Run configuration plus reading and writing of reports, episode and trace
logs, CSV series and the cross-target comparison table
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from agents.target_policies import PolicyKind, save_policy
from environments.adversarial_env import BenchmarkMode, BudgetConfig, OverBudget, TraceRecord, UniformCost
from services.benchmark_service import (
    REPORT_SCHEMA_VERSION,
    SUITE_VERSION,
    AdversaryTrainingResult,
    BenchmarkReport,
    BenchmarkService,
    ConvergenceCriteria,
    EpisodeRecord,
)
from services.errors import ConfigurationError, SchemaError

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"

COMPARISON_COLUMNS = [
    "Target Policy",
    "Max. Regret",
    "Avg. Regret (Training)",
    "Avg. No. Perturbations (Training)",
    "Avg. Regret",
    "Avg. No. Perturbations",
    "resilience_rank",
]


class RunConfig(BaseModel):
    """Every knob of one benchmark run; embedded in the report it produced"""
    command: str = "benchmark"
    mode: BenchmarkMode
    target_artifact: str
    target_kind: Optional[PolicyKind] = None
    delta_max: Optional[int] = Field(default=None, ge=0)
    over_budget: OverBudget = OverBudget.PENALIZE
    episodes: int = Field(default=100, gt=0)
    adversary_seed: int = 0
    eval_seed: int = 0
    cost: float = Field(default=1.0, ge=0.0)
    criteria: ConvergenceCriteria = Field(default_factory=ConvergenceCriteria)
    q_source: str = "auto"
    q_artifact: Optional[str] = None
    adversary_artifact: Optional[str] = None
    workers: int = Field(default=1, gt=0)
    output_dir: str = "results"
    suite_version: str = SUITE_VERSION

    def budget(self) -> BudgetConfig:
        return BudgetConfig(delta_max=self.delta_max, over_budget=self.over_budget)

    def benchmark_service(self) -> BenchmarkService:
        return BenchmarkService(
            self.mode,
            budget=self.budget(),
            cost_fn=UniformCost(self.cost),
            criteria=self.criteria,
            episodes=self.episodes,
            eval_seed=self.eval_seed,
            adversary_seed=self.adversary_seed,
            workers=self.workers,
        )


def _write_json(data: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2))
    return path


# ============================================================================
# Reports
# ============================================================================

def write_report(report: BenchmarkReport, path: Union[str, Path]) -> Path:
    path = _write_json(report.model_dump(mode="json"), Path(path))
    logger.info(f"✅ Report written to {path}")
    return path


def read_report(path: Union[str, Path]) -> BenchmarkReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"Report {path} is not valid JSON: {e}")
    version = data.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise SchemaError(
            f"Report {path} has schema version {version}, expected {REPORT_SCHEMA_VERSION}",
            found=version, expected=REPORT_SCHEMA_VERSION,
        )
    try:
        return BenchmarkReport.model_validate(data)
    except ValidationError as e:
        raise SchemaError(f"Report {path} does not match schema {REPORT_SCHEMA_VERSION}: {e}")


def write_episode_log(records: List[EpisodeRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.model_dump(mode="json"), sort_keys=True) for r in records]
    path.write_text("".join(line + "\n" for line in lines))
    return path


def read_episode_log(path: Union[str, Path]) -> List[EpisodeRecord]:
    records = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(EpisodeRecord.model_validate_json(line))
        except ValidationError as e:
            raise SchemaError(f"{path}:{number} is not an episode record: {e}")
    return records


def write_trace_log(records: List[EpisodeRecord], path: Union[str, Path]) -> Path:
    """Every per-step trace record of every episode, one JSON object per line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(step.model_dump(mode="json"), sort_keys=True) for r in records for step in r.trace]
    path.write_text("".join(line + "\n" for line in lines))
    return path


def read_trace_log(path: Union[str, Path]) -> List[TraceRecord]:
    steps = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            steps.append(TraceRecord.model_validate_json(line))
        except ValidationError as e:
            raise SchemaError(f"{path}:{number} is not a trace record: {e}")
    return steps


# ============================================================================
# CSV series
# ============================================================================

def write_histogram_csv(counts: List[int], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"timestep": range(len(counts)), "count": counts}).to_csv(path, index=False)
    return path


def read_histogram_csv(path: Union[str, Path]) -> List[int]:
    frame = pd.read_csv(path)
    if list(frame.columns) != ["timestep", "count"]:
        raise SchemaError(f"{path} must have columns timestep,count; found {list(frame.columns)}")
    return [int(c) for c in frame["count"]]


def write_curve_csv(curve: List[Dict[str, Any]], path: Union[str, Path]) -> Path:
    """Per-episode training curve; list-valued fields are dropped"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(curve)
    list_columns = [c for c in frame.columns if frame[c].map(lambda v: isinstance(v, list)).any()]
    frame.drop(columns=list_columns).to_csv(path, index=False)
    return path


def read_curve_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


# ============================================================================
# Comparison
# ============================================================================

def compare_reports(reports: List[BenchmarkReport]) -> pd.DataFrame:
    """
    One row per report with the resilience table columns.

    Rows are ordered by mean test-time perturbation count, ties by target
    name; rank 1 is the least resilient target (fewest perturbations needed).
    """
    if not reports:
        raise SchemaError("Nothing to compare")
    versions = {r.schema_version for r in reports}
    if len(versions) > 1:
        raise SchemaError(f"Cannot compare reports with mixed schema versions {sorted(versions)}",
                          found=sorted(versions), expected=REPORT_SCHEMA_VERSION)

    frame = pd.DataFrame([
        {
            "Target Policy": r.target.policy_id,
            "Max. Regret": r.max_adversarial_regret,
            "Avg. Regret (Training)": r.training_avg_regret,
            "Avg. No. Perturbations (Training)": r.training_avg_perturbations,
            "Avg. Regret": r.test_mean_regret,
            "Avg. No. Perturbations": r.test_mean_perturbations,
        }
        for r in reports
    ])
    frame = frame.sort_values(["Avg. No. Perturbations", "Target Policy"], kind="mergesort").reset_index(drop=True)
    frame["resilience_rank"] = range(1, len(frame) + 1)
    return frame[COMPARISON_COLUMNS]


def format_comparison(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f"{v:.2f}")


def write_comparison_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def read_comparison_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


# ============================================================================
# Service
# ============================================================================

class ReportingService:
    """
    Reads and writes the files of one results directory. Each benchmark run
    owns a direct subdirectory holding its report.json.
    """

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)

    def write_benchmark(self, report: BenchmarkReport, records: List[EpisodeRecord],
                        adversary: Optional[AdversaryTrainingResult] = None) -> Dict[str, Path]:
        """Report, episode and trace logs, histogram; plus adversary and training curve when one was trained"""
        paths = {
            "report": write_report(report, self.output_dir / REPORT_FILE),
            "episodes": write_episode_log(records, self.output_dir / "episodes.jsonl"),
            "traces": write_trace_log(records, self.output_dir / "traces.jsonl"),
            "histogram": write_histogram_csv(report.histogram, self.output_dir / "histogram.csv"),
        }
        if adversary is not None:
            paths["adversary"] = save_policy(adversary.adversary, self.output_dir / "adversary.json")
            paths["training_curve"] = write_curve_csv(adversary.training_curve, self.output_dir / "training_curve.csv")
        return paths

    def write_comparison(self, frame: pd.DataFrame) -> Path:
        return write_comparison_csv(frame, self.output_dir / "comparison.csv")

    def report_path(self, name: str) -> Path:
        if name in ("", ".", "..") or Path(name).name != name or "\\" in name:
            raise ConfigurationError(f"'{name}' is not a report directory name")
        return self.output_dir / name / REPORT_FILE

    def load_report(self, name: str) -> BenchmarkReport:
        path = self.report_path(name)
        if not path.is_file():
            raise FileNotFoundError(f"Report '{name}' not found")
        return read_report(path)

    def list_reports(self) -> List[Tuple[str, BenchmarkReport]]:
        """Every readable report under the directory, by name; unreadable ones are logged and skipped"""
        found = []
        if not self.output_dir.is_dir():
            return found
        for path in sorted(self.output_dir.glob(f"*/{REPORT_FILE}")):
            try:
                found.append((path.parent.name, read_report(path)))
            except SchemaError as e:
                logger.warning(f"⚠️ Skipping {path}: {e}")
        return found
