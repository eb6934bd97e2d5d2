"""Multi-view point-cloud rendering: K cameras spaced equally around the z-axis.

Camera model: perspective projection with a 90-degree horizontal field of
view, camera placed at ``look_at + distance * dir(azimuth, elevation)`` and
aimed at ``look_at``; world up is +z. Azimuth increases clockwise seen from
above, so rotating the cloud counterclockwise by D degrees about the vertical
axis through the scene centroid is equivalent to adding D to the azimuth.
Points splat as fixed-radius discs with a per-pixel z-buffer; background is
white. ``render_multiview`` looks at the scene centroid from 1.5x the
bounding-sphere radius (at least 1 m).
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, ValidationError
from .kernels import splat_zbuffer
from .scene_data.types import PointCloud

DEFAULT_RESOLUTION = (224, 224)
DEFAULT_ELEVATION_DEG = 45.0
TOP_DOWN_ELEVATION_DEG = 90.0
DEFAULT_SPLAT_RADIUS_PX = 2.0
MIN_SCENE_RADIUS_M = 1.0 / 1.5


@dataclass(frozen=True)
class CameraPose:
    azimuth_deg: float
    elevation_deg: float
    distance_m: float
    look_at: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValidationError(f"camera distance must be positive, got {self.distance_m}")


@dataclass(frozen=True)
class ViewImage:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    pose: CameraPose


def make_view_poses(
    num_views: int,
    elevation_deg: float = DEFAULT_ELEVATION_DEG,
    distance_m: float = 1.0,
    look_at: Tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> List[CameraPose]:
    """Poses at azimuths k * (360 / num_views) degrees, shared elevation/distance."""
    if num_views < 1:
        raise ConfigError(f"num_views must be >= 1, got {num_views}")
    step = 360.0 / num_views
    return [
        CameraPose(azimuth_deg=k * step, elevation_deg=elevation_deg, distance_m=distance_m, look_at=look_at)
        for k in range(num_views)
    ]


def camera_basis(pose: CameraPose):
    """Right/up/forward unit vectors and camera position for a pose."""
    az = math.radians(pose.azimuth_deg)
    el = math.radians(pose.elevation_deg)
    look_at = np.asarray(pose.look_at, dtype=np.float64)
    direction = np.array([math.cos(el) * math.cos(az), -math.cos(el) * math.sin(az), math.sin(el)])
    position = look_at + pose.distance_m * direction
    forward = -direction  # unit: from camera toward look_at
    if abs(math.cos(el)) < 1e-9:
        # Straight up/down: limit of the generic formulas as elevation -> +-90.
        right = np.array([math.sin(az), math.cos(az), 0.0])
        up = np.cross(right, forward)
    else:
        up_world = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up_world)
        right = right / np.linalg.norm(right)
        up = np.cross(right, forward)
    return right, up, forward, position


def render_view(
    cloud: PointCloud,
    pose: CameraPose,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
    splat_radius_px: float = DEFAULT_SPLAT_RADIUS_PX,
) -> ViewImage:
    """Project and splat one view; all points behind the camera yield white."""
    h, w = resolution
    right, up, forward, position = camera_basis(pose)
    rel = cloud.points - position
    z = rel @ forward
    in_front = z > 1e-9
    focal = 0.5 * w  # 90-degree horizontal field of view
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    zf = z[in_front]
    u = cx + focal * (rel[in_front] @ right) / zf
    v = cy - focal * (rel[in_front] @ up) / zf
    pixels = splat_zbuffer(
        np.ascontiguousarray(u),
        np.ascontiguousarray(v),
        np.ascontiguousarray(zf),
        np.ascontiguousarray(cloud.colors[in_front]),
        h,
        w,
        float(splat_radius_px),
    )
    return ViewImage(pixels=pixels, pose=pose)


def default_view_geometry(cloud: PointCloud):
    """look_at = centroid; distance = 1.5x bounding-sphere radius (min 1 m)."""
    centroid = cloud.points.mean(axis=0)
    radius = float(np.linalg.norm(cloud.points - centroid, axis=1).max())
    distance = 1.5 * max(radius, MIN_SCENE_RADIUS_M)
    return tuple(centroid.tolist()), distance


def render_multiview(
    cloud: PointCloud,
    num_views: int,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
    elevation_deg: float = DEFAULT_ELEVATION_DEG,
    splat_radius_px: float = DEFAULT_SPLAT_RADIUS_PX,
) -> List[ViewImage]:
    """K equally spaced views; the single-view case is the top-down view."""
    look_at, distance = default_view_geometry(cloud)
    elevation = TOP_DOWN_ELEVATION_DEG if num_views == 1 else elevation_deg
    poses = make_view_poses(num_views, elevation_deg=elevation, distance_m=distance, look_at=look_at)
    return [render_view(cloud, pose, resolution=resolution, splat_radius_px=splat_radius_px) for pose in poses]


def save_view_png(view: ViewImage, path) -> None:
    from PIL import Image

    arr = np.clip(view.pixels * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
