"""Point-cloud augmentations: small rotations, translations, random cuboid crops.

All functions are pure: they take a seeded random source and return a new
cloud. ``augment_scene`` applies the same rigid transform to the annotation
boxes so detection supervision stays consistent.
"""

from dataclasses import replace
from typing import Tuple

import numpy as np

from .types import AxisAlignedBox, ObjectAnnotation, PointCloud, SceneSample

MAX_ROTATION_DEG = 5.0
MAX_TRANSLATION_M = 0.5


def rotation_matrix_xyz(angles_rad: np.ndarray) -> np.ndarray:
    """R = Rz @ Ry @ Rx for per-axis angles (ax, ay, az)."""
    ax, ay, az = angles_rad
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def sample_rotation(rng) -> np.ndarray:
    """Random small rotation: independent uniform angles in [-5, 5] degrees per axis."""
    angles = np.deg2rad(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG, size=3))
    return rotation_matrix_xyz(angles)


def sample_translation(rng) -> np.ndarray:
    """Uniform offset per axis within +-0.5 m."""
    return rng.uniform(-MAX_TRANSLATION_M, MAX_TRANSLATION_M, size=3)


def augment_rotate(cloud: PointCloud, rng) -> PointCloud:
    """Rotate the cloud about the origin by a random small rotation."""
    r = sample_rotation(rng)
    return PointCloud(points=cloud.points @ r.T, colors=cloud.colors)


def augment_translate(cloud: PointCloud, rng) -> PointCloud:
    """Translate every point by one random offset vector."""
    t = sample_translation(rng)
    return PointCloud(points=cloud.points + t, colors=cloud.colors)


def augment_random_cuboid(
    cloud: PointCloud,
    rng,
    min_ratio: float = 0.75,
    min_points: int = 1024,
    max_tries: int = 100,
) -> PointCloud:
    """Crop to a random axis-aligned cuboid keeping >= min_ratio of the points.

    Clouds below ``min_points`` are returned unchanged, as is the input after
    ``max_tries`` failed placements, so callers never stall.
    """
    n = cloud.n
    if n < min_points:
        return cloud
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = hi - lo
    for _ in range(max_tries):
        frac = rng.uniform(0.80, 1.0, size=3)
        crop = extent * frac
        start = lo + rng.uniform(0.0, 1.0, size=3) * (extent - crop)
        inside = ((cloud.points >= start) & (cloud.points <= start + crop)).all(axis=1)
        if inside.sum() >= min_ratio * n:
            return PointCloud(points=cloud.points[inside], colors=cloud.colors[inside])
    return cloud


def subsample_points(cloud: PointCloud, target_n: int, rng) -> PointCloud:
    """Exactly ``target_n`` rows; without replacement when the cloud is large enough."""
    idx = rng.choice(cloud.n, size=target_n, replace=cloud.n < target_n)
    return PointCloud(points=cloud.points[idx], colors=cloud.colors[idx])


def transform_annotations(
    annotations: Tuple[ObjectAnnotation, ...], rotation: np.ndarray, translation: np.ndarray
) -> Tuple[ObjectAnnotation, ...]:
    """Move box centers by the rigid transform; extents stay axis-aligned.

    Exact only for the small (<=5 degree) augmentation rotations.
    """
    return tuple(
        replace(a, box=AxisAlignedBox(center=rotation @ a.box.center + translation, size=a.box.size))
        for a in annotations
    )


def augment_scene(sample: SceneSample, rng, use_cuboid: bool = True) -> SceneSample:
    """Rotation + translation applied consistently to cloud and boxes, then an
    optional cuboid crop of the cloud. Annotation boxes are kept even when the
    crop removes their points; matching in the detection loss handles that."""
    r = sample_rotation(rng)
    t = sample_translation(rng)
    cloud = PointCloud(points=sample.cloud.points @ r.T + t, colors=sample.cloud.colors)
    annotations = transform_annotations(sample.annotations, r, t)
    if use_cuboid:
        cloud = augment_random_cuboid(cloud, rng)
    return replace(sample, cloud=cloud, annotations=annotations)
