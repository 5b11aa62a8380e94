"""Scikit-learn style front end.

``PoseRegressor`` wraps the pyramid network behind the familiar
fit/predict surface so it slots into sklearn tooling (clone, grid
search, pipelines).  X is a batch of RGB images, y the normalized
(x, y, z) joint targets; prediction returns the final prediction
block's pose.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .network import (NetworkConfig, entry_channels_from_text, forward_full,
                      init_model, prediction_positions)
from .tensor import Tape, backward
from .training import RmsProp, assemble_batch, build_mask, total_loss
from .validation import check_bool_batch, check_image_batch, check_pose_batch

__all__ = ["PoseRegressor"]


class PoseRegressor(BaseEstimator, RegressorMixin):
    """Multi-scale pyramid regressor for 3D keypoints.

    Parameters mirror the network/training configuration; all are plain
    values so ``get_params`` / ``set_params`` / ``clone`` behave as
    sklearn expects.
    """

    def __init__(self, pyramids=2, levels=1, joints=17, features=32,
                 input_size=64, entry_channels="8,8:16,16:24,24:32",
                 steps=200, batch_size=8, lr=1e-3, seed=0):
        self.pyramids = pyramids
        self.levels = levels
        self.joints = joints
        self.features = features
        self.input_size = input_size
        self.entry_channels = entry_channels
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _config(self) -> NetworkConfig:
        return NetworkConfig(
            pyramids=self.pyramids,
            levels=self.levels,
            joints=self.joints,
            features=self.features,
            input_size=(self.input_size, self.input_size),
            entry_channels=entry_channels_from_text(self.entry_channels),
        )

    def fit(self, X, y, visible=None, has_depth=None):
        """Train on images X (n, H, W, 3) and normalized targets y
        (n, joints, 3).

        ``visible`` (n, joints) masks joints out of the loss entirely;
        ``has_depth`` (n,) masks the depth column of 2D-only samples.
        """
        config = self._config()
        X = check_image_batch(X, config.input_size, dtype=config.dtype)
        y = check_pose_batch(y, config.joints, X.shape[0])
        n = X.shape[0]
        if visible is None:
            visible = np.ones((n, config.joints), dtype=bool)
        visible = check_bool_batch(visible, (n, config.joints), "visible")
        if has_depth is None:
            has_depth = np.ones(n, dtype=bool)
        has_depth = check_bool_batch(has_depth, (n,), "has_depth")
        if n < self.batch_size:
            raise ValueError(f"need at least batch_size={self.batch_size} "
                             f"samples, got {n}")

        mask = build_mask(visible, has_depth)
        conf = visible[..., None].astype(np.float64)
        model = init_model(config, seed=self.seed)
        opt = RmsProp(self.lr)
        rng = np.random.default_rng(self.seed)
        for _ in range(self.steps):
            idx = rng.choice(n, size=self.batch_size, replace=False)
            with Tape() as tape:
                preds = forward_full(X[idx], model, stats="batch",
                                     update_running=True)
                loss = total_loss(preds, y[idx], mask[idx], conf[idx])
            if not np.isfinite(loss.item()):
                raise RuntimeError(f"non-finite loss at step {model.step}")
            grads = backward(tape, loss)
            opt.step(model, grads)
        self.model_ = model
        self.final_position_ = prediction_positions(config)[-1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This PoseRegressor instance is not fitted yet; call "
                "'fit' first.")

    def _forward_batches(self, X):
        config = self.model_.config
        X = check_image_batch(X, config.input_size, dtype=config.dtype)
        poses, confs = [], []
        for i in range(0, X.shape[0], self.batch_size):
            preds = forward_full(X[i:i + self.batch_size], self.model_,
                                 stats="frozen")
            entry = preds[self.final_position_]
            poses.append(entry.pose.data.astype(np.float64))
            confs.append(entry.conf.data[..., 0].astype(np.float64))
        return np.concatenate(poses), np.concatenate(confs)

    def predict(self, X) -> np.ndarray:
        """Normalized (x, y, z) per joint from the final block."""
        self._check_fitted()
        return self._forward_batches(X)[0]

    def predict_confidence(self, X) -> np.ndarray:
        """Per-joint presence probabilities (n, joints)."""
        self._check_fitted()
        return self._forward_batches(X)[1]

    def score(self, X, y, sample_weight=None) -> float:
        """Negative mean 2D keypoint error (higher is better)."""
        self._check_fitted()
        y = check_pose_batch(y, self.model_.config.joints)
        pred = self.predict(X)
        err = np.linalg.norm(pred[..., :2] - y[..., :2], axis=-1)
        return -float(err.mean())
