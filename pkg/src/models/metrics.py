from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from src.utils.errors import EvaluationError

DEPTH_METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3")

# True where a lower value is better
LOWER_IS_BETTER: Dict[str, bool] = {
    "abs_rel": True,
    "sq_rel": True,
    "rmse": True,
    "rmse_log": True,
    "d1": False,
    "d2": False,
    "d3": False,
    "ate_mean": True,
    "ate_std": True,
}


class DepthMetrics(BaseModel):
    abs_rel: float = Field(ge=0)
    sq_rel: float = Field(ge=0)
    rmse: float = Field(ge=0)
    rmse_log: float = Field(ge=0)
    delta1: float = Field(ge=0, le=1)
    delta2: float = Field(ge=0, le=1)
    delta3: float = Field(ge=0, le=1)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.delta1 <= self.delta2 <= self.delta3:
            raise EvaluationError(
                f"delta accuracies must be ordered, got {self.delta1}, {self.delta2}, {self.delta3}"
            )
        return self

    def as_row(self) -> List[float]:
        return [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(DEPTH_METRIC_NAMES, self.as_row()))

    @staticmethod
    def mean_of(items: List["DepthMetrics"]) -> "DepthMetrics":
        if not items:
            raise EvaluationError("cannot average an empty list of depth metrics")
        columns = list(zip(*(m.as_row() for m in items)))
        values = [sum(col) / len(col) for col in columns]
        return DepthMetrics.from_row(values)

    @staticmethod
    def from_row(values: List[float]) -> "DepthMetrics":
        return DepthMetrics(
            abs_rel=values[0], sq_rel=values[1], rmse=values[2], rmse_log=values[3],
            delta1=values[4], delta2=values[5], delta3=values[6],
        )


class OdometrySummary(BaseModel):
    mean: float = Field(ge=0)
    std: float = Field(ge=0)
    per_snippet: List[float] = Field(default_factory=list)


class RunMetrics(BaseModel):
    """Everything the report command needs about one evaluated run"""

    name: str
    depth: DepthMetrics
    odometry: Optional[OdometrySummary] = None
    num_samples: int = 0
    config: Dict[str, object] = Field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return self.model_dump(mode="json")

    @staticmethod
    def from_dict(data: Dict[str, object]) -> "RunMetrics":
        return RunMetrics(**data)
