import json
import logging
import os
import uuid
from datetime import datetime
from typing import Dict, List, Optional, Sequence

from src.models.database import Database, RunMetricModel, RunModel
from src.models.metrics import DEPTH_METRIC_NAMES, DepthMetrics, OdometrySummary, RunMetrics
from src.utils.config import get_config_value
from src.utils.errors import EvaluationError

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.json"


class ReportManager:
    """Stores evaluated runs in the run registry, falling back to metrics.json files"""

    def __init__(self, use_database: Optional[bool] = None, db_url: Optional[str] = None):
        if use_database is None:
            use_database = get_config_value("database.enable_persistence", False)
        self.use_database = bool(use_database)
        self.db: Optional[Database] = None
        if self.use_database:
            self.use_database = self._initialize_database(db_url)

    def _initialize_database(self, db_url: Optional[str]) -> bool:
        """Initialize database and create tables"""
        try:
            self.db = Database(db_url)
            self.db.create_tables()
            logger.info("Run registry initialized successfully")
            return True
        except Exception as e:
            logger.error(f"Error initializing run registry, using metrics files only: {e}")
            self.db = None
            return False

    def save_run(self, run: RunMetrics, run_dir: str, command: str = "eval",
                 checkpoint: Optional[str] = None, dataset: Optional[str] = None) -> str:
        """Write ``metrics.json`` into ``run_dir`` and register the run; returns the file path"""
        os.makedirs(run_dir, exist_ok=True)
        path = os.path.join(run_dir, METRICS_FILE)
        with open(path, "w") as f:
            json.dump(run.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        if self.use_database:
            self._save_to_database(run, command, checkpoint, dataset)
        return path

    def _save_to_database(self, run: RunMetrics, command: str,
                          checkpoint: Optional[str], dataset: Optional[str]) -> bool:
        session = self.db.get_session()
        try:
            db_run = RunModel(
                id=str(uuid.uuid4()),
                name=run.name,
                command=command,
                checkpoint=checkpoint,
                dataset=dataset,
                num_samples=run.num_samples,
                config=run.config,
                created_at=datetime.utcnow(),
            )
            session.add(db_run)
            for name, value in _flat_metrics(run).items():
                session.add(RunMetricModel(run_id=db_run.id, name=name, value=value))
            session.commit()
            return True
        except Exception as e:
            session.rollback()
            logger.error(f"Error saving run {run.name} to the registry: {e}")
            return False
        finally:
            session.close()

    def load_runs(self, paths: Sequence[str]) -> List[RunMetrics]:
        """Runs from metrics files or run directories"""
        runs = []
        for path in paths:
            if os.path.isdir(path):
                path = os.path.join(path, METRICS_FILE)
            if not os.path.isfile(path):
                raise EvaluationError(f"no metrics file at {path}")
            try:
                with open(path, "r") as f:
                    runs.append(RunMetrics.from_dict(json.load(f)))
            except (json.JSONDecodeError, ValueError) as e:
                raise EvaluationError(f"cannot read metrics from {path}: {e}") from e
        return runs

    def load_registered_runs(self) -> List[RunMetrics]:
        """Latest registered run per name"""
        if not self.use_database:
            return []
        session = self.db.get_session()
        try:
            latest: Dict[str, RunModel] = {}
            for db_run in session.query(RunModel).order_by(RunModel.created_at).all():
                latest[db_run.name] = db_run
            return [_from_model(db_run) for db_run in latest.values()]
        except Exception as e:
            logger.error(f"Error loading runs from the registry: {e}")
            return []
        finally:
            session.close()

    def close(self) -> None:
        if self.db is not None:
            self.db.close()


def _flat_metrics(run: RunMetrics) -> Dict[str, float]:
    values = dict(run.depth.as_dict())
    if run.odometry is not None:
        values["ate_mean"] = run.odometry.mean
        values["ate_std"] = run.odometry.std
    return values


def _from_model(db_run: RunModel) -> RunMetrics:
    values = db_run.metric_values()
    depth = DepthMetrics.from_row([values[name] for name in DEPTH_METRIC_NAMES])
    odometry = None
    if "ate_mean" in values:
        odometry = OdometrySummary(mean=values["ate_mean"], std=values.get("ate_std", 0.0))
    return RunMetrics(name=db_run.name, depth=depth, odometry=odometry,
                      num_samples=db_run.num_samples or 0, config=db_run.config or {})
