from .augment import (
    augment_random_cuboid,
    augment_rotate,
    augment_scene,
    augment_translate,
    rotation_matrix_xyz,
    subsample_points,
)
from .generator import GeneratorConfig, SceneTypeSpec, generate_split, generate_synthetic_scene
from .io import LoadedSplit, load_dataset, read_class_names, read_ply, save_dataset, write_ply
from .types import (
    AxisAlignedBox,
    ObjectAnnotation,
    PointCloud,
    QARecord,
    SceneSample,
    SituationRecord,
    yaw_to_quaternion,
)

__all__ = [
    "AxisAlignedBox",
    "GeneratorConfig",
    "LoadedSplit",
    "ObjectAnnotation",
    "PointCloud",
    "QARecord",
    "SceneSample",
    "SceneTypeSpec",
    "SituationRecord",
    "augment_random_cuboid",
    "augment_rotate",
    "augment_scene",
    "augment_translate",
    "generate_split",
    "generate_synthetic_scene",
    "load_dataset",
    "read_class_names",
    "read_ply",
    "rotation_matrix_xyz",
    "save_dataset",
    "subsample_points",
    "write_ply",
    "yaw_to_quaternion",
]
