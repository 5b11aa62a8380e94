"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

__all__ = ["check_image_batch", "check_pose_batch", "check_bool_batch"]


def check_image_batch(X, input_size: tuple[int, int] | None = None,
                      dtype=np.float32) -> np.ndarray:
    """Coerce to a finite (n, H, W, 3) float array.

    A single HxWx3 image is promoted to a batch of one.
    """
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected images shaped (n, H, W, 3), got "
                         f"{np.shape(X)}")
    if input_size is not None and arr.shape[1:3] != tuple(input_size):
        raise ValueError(f"expected {input_size[0]}x{input_size[1]} images, "
                         f"got {arr.shape[1]}x{arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("images contain non-finite values")
    return arr


def check_pose_batch(y, joints: int, n_samples: int | None = None
                     ) -> np.ndarray:
    """Coerce to a finite (n, joints, 3) float64 array."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != joints or arr.shape[2] != 3:
        raise ValueError(f"expected poses shaped (n, {joints}, 3), got "
                         f"{np.shape(y)}")
    if n_samples is not None and arr.shape[0] != n_samples:
        raise ValueError(f"{n_samples} images but {arr.shape[0]} poses")
    if not np.all(np.isfinite(arr)):
        raise ValueError("poses contain non-finite values")
    return arr


def check_bool_batch(flags, shape: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.asarray(flags, dtype=bool)
    if arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got "
                         f"{arr.shape}")
    return arr
