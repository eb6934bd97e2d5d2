"""Core data model: point clouds, boxes, scenes, QA and situation records."""

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


def _as_f64(a, shape, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """RGB-colored point cloud: (N, 3) coordinates in meters, (N, 3) colors in [0, 1]."""

    points: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        col = np.asarray(self.colors, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValidationError(f"points must be (N>=1, 3), got {pts.shape}")
        if col.shape != pts.shape:
            raise ValidationError(f"colors shape {col.shape} != points shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValidationError("points contain non-finite coordinates")
        if not np.isfinite(col).all() or col.min() < 0.0 or col.max() > 1.0:
            raise ValidationError("colors must be finite and in [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", col)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class AxisAlignedBox:
    """Axis-aligned box given by center and positive extents, both in meters."""

    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        c = _as_f64(self.center, (3,), "box center")
        s = _as_f64(self.size, (3,), "box size")
        if not (np.isfinite(c).all() and np.isfinite(s).all()):
            raise ValidationError("box has non-finite components")
        if (s <= 0).any():
            raise ValidationError(f"box size must be positive, got {s}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)

    @property
    def min_corner(self) -> np.ndarray:
        return self.center - self.size / 2.0

    @property
    def max_corner(self) -> np.ndarray:
        return self.center + self.size / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        lo, hi = self.min_corner, self.max_corner
        return ((points >= lo) & (points <= hi)).all(axis=1)


@dataclass(frozen=True)
class ObjectAnnotation:
    box: AxisAlignedBox
    class_id: int
    instance_id: int

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"class_id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class SceneSample:
    """A scene: cloud + object annotations + captions + identity labels."""

    cloud: PointCloud
    annotations: tuple
    captions: tuple
    scene_id: str
    scene_type: str

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "captions", tuple(self.captions))
        ids = [a.instance_id for a in self.annotations]
        if len(ids) != len(set(ids)):
            raise ValidationError(f"scene {self.scene_id}: duplicate instance ids")

    def annotation_by_instance(self, instance_id: int) -> ObjectAnnotation:
        for a in self.annotations:
            if a.instance_id == instance_id:
                return a
        raise ValidationError(f"scene {self.scene_id}: unknown instance id {instance_id}")


@dataclass(frozen=True)
class QARecord:
    scene_id: str
    question: str
    answers: tuple
    referred_instance_ids: tuple = ()
    referred_class_ids: tuple = ()
    question_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        object.__setattr__(self, "referred_instance_ids", tuple(self.referred_instance_ids))
        object.__setattr__(self, "referred_class_ids", tuple(self.referred_class_ids))
        if len(self.answers) == 0:
            raise ValidationError(f"QA record {self.question_id!r}: empty answer set")


@dataclass(frozen=True)
class SituationRecord:
    scene_id: str
    situation_text: str
    position: np.ndarray
    rotation: np.ndarray  # quaternion (x, y, z, w), unit norm
    question: str
    answers: tuple
    situation_id: str = ""

    def __post_init__(self):
        pos = _as_f64(self.position, (3,), "situation position")
        rot = _as_f64(self.rotation, (4,), "situation rotation")
        if abs(np.linalg.norm(rot) - 1.0) > 1e-6:
            raise ValidationError(
                f"situation {self.situation_id!r}: quaternion norm {np.linalg.norm(rot)!r} != 1"
            )
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "answers", tuple(self.answers))
        if len(self.answers) == 0:
            raise ValidationError(f"situation {self.situation_id!r}: empty answer set")


def yaw_to_quaternion(yaw: float) -> np.ndarray:
    """Quaternion (x, y, z, w) for a rotation of ``yaw`` radians about +z."""
    return np.array([0.0, 0.0, np.sin(yaw / 2.0), np.cos(yaw / 2.0)])
