"""Pinhole camera geometry for pixel <-> millimeter conversion.

Predictions live in normalized image coordinates plus a normalized
relative depth; evaluation happens in millimeters.  Relative depth is
encoded over a fixed 2 m range centered on the root joint, so z = 0.5 is
the root plane and z = 0 is one meter nearer the camera.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["CameraModel", "DEPTH_RANGE_MM", "project", "inverse_project"]

DEPTH_RANGE_MM = 2000.0


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the absolute depth of the root joint."""

    fx: float
    fy: float
    cx: float
    cy: float
    image_size: tuple[int, int]  # (width, height) pixels
    root_depth: float = 5000.0   # millimeters

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def with_root_depth(self, root_depth: float) -> "CameraModel":
        return replace(self, root_depth=root_depth)


def project(points_mm: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Camera-frame millimeters (N x 3) -> pixel coordinates (N x 2)."""
    p = np.asarray(points_mm, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected Nx3 points, got {p.shape}")
    z = p[:, 2]
    if np.any(z <= 0):
        raise ValueError("point behind camera (z <= 0)")
    u = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1)


def inverse_project(xy_norm: np.ndarray, z_norm: np.ndarray,
                    cam: CameraModel) -> np.ndarray:
    """Normalized predictions -> camera-frame millimeters (N x 3).

    Z_n = root_depth + (z_norm - 0.5) * 2000; the pixel position is
    xy_norm scaled by the image size, and X/Y follow the pinhole model at
    depth Z_n.
    """
    xy = np.asarray(xy_norm, dtype=np.float64)
    z = np.asarray(z_norm, dtype=np.float64).reshape(-1)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise ValueError(f"expected Nx2 normalized coordinates, got "
                         f"{xy.shape}")
    if z.shape[0] != xy.shape[0]:
        raise ValueError(f"{xy.shape[0]} coordinates but {z.shape[0]} "
                         f"depths")
    width, height = cam.image_size
    depth = cam.root_depth + (z - 0.5) * DEPTH_RANGE_MM
    if np.any(depth <= 0):
        raise ValueError("reconstructed point behind camera (Z <= 0)")
    x_px = xy[:, 0] * width
    y_px = xy[:, 1] * height
    x_mm = (x_px - cam.cx) * depth / cam.fx
    y_mm = (y_px - cam.cy) * depth / cam.fy
    return np.stack([x_mm, y_mm, depth], axis=1)


def normalize_projection(points_mm: np.ndarray, cam: CameraModel
                         ) -> tuple[np.ndarray, np.ndarray]:
    """3D pose -> (normalized xy, normalized relative z) ground truth."""
    px = project(points_mm, cam)
    width, height = cam.image_size
    xy = px / np.array([width, height], dtype=np.float64)
    z = (np.asarray(points_mm, dtype=np.float64)[:, 2] - cam.root_depth) \
        / DEPTH_RANGE_MM + 0.5
    return xy, z
