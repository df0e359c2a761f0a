from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.utils.errors import GeometryError

ORTHONORMAL_TOLERANCE = 1e-9


class SE3Params(BaseModel):
    """Rigid motion as (t_x, t_y, t_z, r_x, r_y, r_z); angles in radians"""

    model_config = ConfigDict(frozen=True)

    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator("translation", "rotation")
    @classmethod
    def _finite(cls, value):
        if not np.all(np.isfinite(value)):
            raise GeometryError(f"SE3 parameters must be finite, got {value}")
        return value

    def to_vector(self) -> np.ndarray:
        return np.array(self.translation + self.rotation, dtype=np.float64)

    @staticmethod
    def from_vector(vector) -> "SE3Params":
        values = np.asarray(vector, dtype=np.float64).reshape(-1)
        if values.size != 6:
            raise GeometryError(f"SE3 vector needs 6 entries, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise GeometryError(f"SE3 parameters must be finite, got {values.tolist()}")
        return SE3Params(translation=tuple(values[:3]), rotation=tuple(values[3:]))

    @staticmethod
    def zero() -> "SE3Params":
        return SE3Params()


class Intrinsics(BaseModel):
    """Pinhole intrinsics in pixels; pixel centers sit on integer coordinates"""

    model_config = ConfigDict(frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float

    @field_validator("fx", "fy")
    @classmethod
    def _positive_focal(cls, value):
        if not np.isfinite(value) or value <= 0:
            raise GeometryError(f"focal lengths must be positive, got {value}")
        return value

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.matrix())

    def scaled(self, level: int) -> "Intrinsics":
        """Intrinsics after ``level`` rounds of 2x average pooling"""
        factor = 2.0 ** level
        return Intrinsics(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx + 0.5) / factor - 0.5,
            cy=(self.cy + 0.5) / factor - 0.5,
        )

    def flipped(self, width: int) -> "Intrinsics":
        """Intrinsics of the horizontally mirrored image"""
        return Intrinsics(fx=self.fx, fy=self.fy, cx=(width - 1) - self.cx, cy=self.cy)

    def to_line(self) -> str:
        return " ".join(repr(float(v)) for v in self.matrix().reshape(-1))

    @staticmethod
    def from_line(line: str) -> "Intrinsics":
        values = [float(v) for v in line.split()]
        if len(values) != 9:
            raise GeometryError(f"intrinsics line needs 9 numbers, got {len(values)}")
        K = np.array(values).reshape(3, 3)
        if abs(K[0, 1]) > 0 or abs(K[1, 0]) > 0 or np.any(K[2] != (0.0, 0.0, 1.0)):
            raise GeometryError(f"intrinsics matrix must be upper triangular pinhole, got {values}")
        return Intrinsics(fx=K[0, 0], fy=K[1, 1], cx=K[0, 2], cy=K[1, 2])


class Pose4x4(BaseModel):
    """Homogeneous rigid transform"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def _rigid(cls, value):
        m = np.array(value, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"pose must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("pose contains non-finite entries")
        if np.max(np.abs(m[3] - (0.0, 0.0, 0.0, 1.0))) > ORTHONORMAL_TOLERANCE:
            raise GeometryError(f"pose bottom row must be (0, 0, 0, 1), got {m[3].tolist()}")
        rotation = m[:3, :3]
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise GeometryError("pose rotation block is not orthonormal")
        if np.linalg.det(rotation) <= 0:
            raise GeometryError("pose rotation block has negative determinant")
        m.setflags(write=False)
        return m

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (3, ...) points"""
        flat = points.reshape(3, -1)
        return (self.rotation @ flat + self.translation[:, None]).reshape(points.shape)

    def __matmul__(self, other: "Pose4x4") -> "Pose4x4":
        return Pose4x4(matrix=self.matrix @ other.matrix)

    @staticmethod
    def identity() -> "Pose4x4":
        return Pose4x4(matrix=np.eye(4))

    @staticmethod
    def from_rotation_translation(rotation: np.ndarray, translation) -> "Pose4x4":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = np.asarray(translation, dtype=np.float64).reshape(3)
        return Pose4x4(matrix=m)

    def tolist(self) -> List[List[float]]:
        return self.matrix.tolist()
