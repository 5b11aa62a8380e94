"""Pose error metrics."""

from __future__ import annotations

import numpy as np

__all__ = ["mpjpe", "pck_auc", "pck_auc_from_errors", "PCK_THRESHOLDS_MM",
           "error_2d"]

PCK_THRESHOLDS_MM = np.arange(0, 151, 5, dtype=np.float64)


def mpjpe(pred_mm: np.ndarray, gt_mm: np.ndarray, align_root: bool = True,
          root: int = 0) -> float:
    """Mean per-joint position error in millimeters.

    With ``align_root`` both poses are translated so the root joint sits
    at the origin and the root is excluded from the mean, so any global
    offset between the poses drops out.
    """
    pred = np.asarray(pred_mm, dtype=np.float64)
    gt = np.asarray(gt_mm, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"expected matching Nx3 poses, got {pred.shape} "
                         f"and {gt.shape}")
    if align_root:
        if pred.shape[0] < 2:
            raise ValueError("root alignment needs at least 2 joints")
        pred = pred - pred[root]
        gt = gt - gt[root]
        keep = np.arange(pred.shape[0]) != root
        pred, gt = pred[keep], gt[keep]
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def pck_auc_from_errors(errors_mm: np.ndarray,
                        thresholds: np.ndarray = PCK_THRESHOLDS_MM
                        ) -> tuple[float, float]:
    """(PCK at the top threshold, AUC over the grid) from joint errors.

    A joint counts as correct under threshold t when its error is
    strictly below t; the AUC is the plain mean of PCK over the grid.
    """
    err = np.asarray(errors_mm, dtype=np.float64).reshape(-1)
    correct = err[None, :] < np.asarray(thresholds)[:, None]
    pck_curve = correct.mean(axis=1)
    return float(pck_curve[-1]), float(pck_curve.mean())


def pck_auc(pred_mm: np.ndarray, gt_mm: np.ndarray,
            thresholds: np.ndarray = PCK_THRESHOLDS_MM
            ) -> tuple[float, float]:
    """PCK@top / AUC for root-aligned pose arrays."""
    pred = np.asarray(pred_mm, dtype=np.float64)
    gt = np.asarray(gt_mm, dtype=np.float64)
    err = np.linalg.norm(pred - gt, axis=-1)
    return pck_auc_from_errors(err, thresholds)


def error_2d(pred_xy: np.ndarray, gt_xy: np.ndarray,
             visible: np.ndarray | None = None) -> float:
    """Mean Euclidean distance in normalized image units.

    Restricted to visible joints when a mask is given; returns NaN when
    nothing is visible.
    """
    pred = np.asarray(pred_xy, dtype=np.float64)
    gt = np.asarray(gt_xy, dtype=np.float64)
    dist = np.linalg.norm(pred - gt, axis=-1).reshape(-1)
    if visible is not None:
        keep = np.asarray(visible, dtype=bool).reshape(-1)
        if not keep.any():
            return float("nan")
        dist = dist[keep]
    return float(dist.mean())
