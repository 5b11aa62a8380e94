"""Losses, optimizer and the training loop.

Supervision is applied at every prediction block: each (pyramid, level)
entry contributes an elastic net penalty on its masked pose residual plus
a binary cross entropy on its joint confidences, and the total loss is
the unweighted mean over entries.  Masking zeroes invisible joints
entirely and the depth column of 2D-only samples, which is what lets 3D
and 2D-only data train the same network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .network import (CutPoint, ModelState, NetworkConfig, forward_full,
                      init_model, prediction_positions)
from .synthetic import (SyntheticSample, default_camera, default_template,
                        draw_augment_params, augment, generate_dataset)
from .tensor import Gradients, Tape, Tensor, backward

__all__ = [
    "elastic_net_loss",
    "bce_loss",
    "total_loss",
    "build_mask",
    "assemble_batch",
    "RmsProp",
    "PlateauScheduler",
    "TrainResult",
    "train",
]

_BCE_CLIP = 1e-7


def elastic_net_loss(pred: Tensor, gt: np.ndarray,
                     mask: np.ndarray) -> Tensor:
    """Masked L1 + squared-L2 penalty, averaged over batch and joints.

    The mask multiplies the residual before either norm, so masked
    components contribute neither loss nor gradient; the L1 subgradient
    at exactly zero is taken as zero.
    """
    gt = np.asarray(gt, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=pred.dtype)
    if gt.shape != pred.data.shape or mask.shape != pred.data.shape:
        raise ValueError(f"prediction {pred.data.shape}, target {gt.shape} "
                         f"and mask {mask.shape} must all match")
    b, n = pred.data.shape[0], pred.data.shape[1]
    r = T.mul(T.sub(pred, Tensor(gt)), Tensor(mask))
    total = T.add(T.sum_all(T.abs_(r)), T.sum_all(T.square(r)))
    return total / float(b * n)


def bce_loss(pred_conf: Tensor, gt_conf: np.ndarray) -> Tensor:
    """Binary cross entropy over joint confidences.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs, so the
    loss is finite for saturated inputs.
    """
    gt = np.asarray(gt_conf, dtype=pred_conf.dtype)
    if gt.shape != pred_conf.data.shape:
        raise ValueError(f"confidence {pred_conf.data.shape} and target "
                         f"{gt.shape} must match")
    b, n = gt.shape[0], gt.shape[1]
    p = T.clamp(pred_conf, _BCE_CLIP, 1.0 - _BCE_CLIP)
    term = T.sub(T.mul(Tensor(gt - 1.0), T.log(1.0 - p)),
                 T.mul(Tensor(gt), T.log(p)))
    return T.sum_all(term) / float(b * n)


def build_mask(visible: np.ndarray, has_depth: np.ndarray) -> np.ndarray:
    """B x N x 3 loss mask from visibility flags and per-sample 3D flags."""
    visible = np.asarray(visible, dtype=bool)
    has_depth = np.asarray(has_depth, dtype=bool)
    mask = np.repeat(visible[..., None].astype(np.float64), 3, axis=-1)
    mask[..., 2] *= has_depth[:, None]
    return mask


def total_loss(preds: dict[CutPoint, object], pose_gt: np.ndarray,
               mask: np.ndarray, conf_gt: np.ndarray) -> Tensor:
    """Unweighted mean over prediction entries of pose + confidence loss."""
    if not preds:
        raise ValueError("no prediction entries")
    terms = []
    for pos in sorted(preds):
        entry = preds[pos]
        terms.append(T.add(elastic_net_loss(entry.pose, pose_gt, mask),
                           bce_loss(entry.conf, conf_gt)))
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return acc / float(len(terms))


def assemble_batch(samples: list[SyntheticSample], dtype=np.float32):
    """Stack samples into (images, pose targets, mask, confidence targets)."""
    images = np.stack([s.image for s in samples]).astype(dtype)
    pose = np.stack([
        np.concatenate([s.gt_xy, s.gt_z[:, None]], axis=1) for s in samples])
    visible = np.stack([s.visible for s in samples])
    has_depth = np.array([s.has_depth for s in samples])
    mask = build_mask(visible, has_depth)
    conf = visible[..., None].astype(np.float64)
    return images, pose, mask, conf


class RmsProp:
    """RMSprop with per-parameter accumulators.

    a <- rho a + (1 - rho) g^2,  theta <- theta - lr g / (sqrt(a) + eps).
    A step containing any non-finite gradient is rejected outright: no
    accumulator or parameter changes and the step counter stays put.
    """

    def __init__(self, lr: float = 1e-3, rho: float = 0.9,
                 eps: float = 1e-8):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self._accum: dict[str, np.ndarray] = {}

    def step(self, model: ModelState, grads: Gradients) -> bool:
        paths = model.parameter_paths()
        gathered = []
        for path in paths:
            g = grads.of(model.params[path])
            if not np.all(np.isfinite(g)):
                return False
            gathered.append(g)
        for path, g in zip(paths, gathered):
            p = model.params[path]
            a = self._accum.get(path)
            if a is None:
                a = self._accum[path] = np.zeros_like(p.data)
            a *= self.rho
            a += (1.0 - self.rho) * (g * g).astype(a.dtype)
            new = p.data - (self.lr * g / (np.sqrt(a) + self.eps)).astype(
                p.data.dtype)
            model.params[path] = Tensor(new)
        model.step += 1
        return True


class PlateauScheduler:
    """Divide the learning rate by 10 when the validation score plateaus.

    A plateau is ``patience`` consecutive validations without a relative
    improvement greater than ``min_improve`` over the best seen value;
    at most ``max_drops`` divisions are applied.
    """

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 5,
                 min_improve: float = 0.005, max_drops: int = 2):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_improve = min_improve
        self.max_drops = max_drops
        self.best: float | None = None
        self.streak = 0
        self.drops = 0

    def observe(self, value: float) -> float:
        if self.best is None or value < self.best * (1.0 - self.min_improve):
            self.best = value
            self.streak = 0
        else:
            self.streak += 1
            if self.streak >= self.patience and self.drops < self.max_drops:
                self.lr *= self.factor
                self.drops += 1
                self.streak = 0
        return self.lr


def _chunks(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def validation_metrics(model: ModelState, samples: list[SyntheticSample],
                       batch_size: int = 8) -> dict[CutPoint, dict]:
    """Per-entry normalized 2D error and depth error on held-out data."""
    positions = prediction_positions(model.config)
    err2d = {pos: [] for pos in positions}
    errz = {pos: [] for pos in positions}
    for chunk in _chunks(samples, batch_size):
        images, pose, mask, _ = assemble_batch(chunk, model.config.dtype)
        preds = forward_full(images, model, stats="frozen")
        vis = mask[..., 0] > 0
        depth_ok = mask[..., 2] > 0
        for pos in positions:
            p = preds[pos].pose.data
            d2 = np.linalg.norm(p[..., :2] - pose[..., :2], axis=-1)
            err2d[pos].extend(d2[vis].tolist())
            dz = np.abs(p[..., 2] - pose[..., 2])
            errz[pos].extend(dz[depth_ok].tolist())
    out = {}
    for pos in positions:
        out[pos] = {
            "err2d": float(np.mean(err2d[pos])) if err2d[pos] else float("nan"),
            "errz": float(np.mean(errz[pos])) if errz[pos] else float("nan"),
        }
    return out


@dataclass
class TrainResult:
    model: ModelState
    metrics: list[dict]   # one row per validation per (k, l) entry
    initial_err2d: float
    final_err2d: float


def train(config: NetworkConfig, steps: int, batch_size: int = 8,
          lr: float = 1e-3, seed: int = 0, train_size: int = 384,
          val_size: int = 48, val_interval: int = 100,
          augment_data: bool = True, depth2d_fraction: float = 0.25,
          rotation_max_deg: float = 30.0,
          scale_range: tuple[float, float] = (0.7, 1.3),
          gain_range: tuple[float, float] = (0.9, 1.1),
          early_stop_err2d: float | None = None,
          model: ModelState | None = None,
          log=None) -> TrainResult:
    """Train on synthetic data with intermediate supervision everywhere.

    Fully deterministic for a fixed seed: data, batch order, augmentation
    draws and parameter updates all derive from it.
    """
    height, width = config.input_size
    cam = default_camera(width)
    if (width, height) != cam.image_size:
        raise ValueError("non-square inputs need an explicit camera")
    template = default_template()
    if template.joints != config.joints:
        raise ValueError(f"figure template has {template.joints} joints, "
                         f"config wants {config.joints}")

    data = generate_dataset(train_size, seed, cam, template,
                            depth2d_fraction=depth2d_fraction)
    val = generate_dataset(val_size, seed + 1, cam, template,
                           depth2d_fraction=0.0)
    if model is None:
        model = init_model(config, seed=seed + 2)
    elif model.config != config:
        raise ValueError("supplied model was built for a different config")
    opt = RmsProp(lr)
    sched = PlateauScheduler(lr)
    batch_rng = np.random.default_rng(seed + 3)
    aug_rng = np.random.default_rng(seed + 4)
    final_pos = prediction_positions(config)[-1]

    rows: list[dict] = []
    initial_err2d = None

    def run_validation(step: int) -> float:
        metrics = validation_metrics(model, val, batch_size)
        for pos in sorted(metrics):
            rows.append({"step": step, "k": pos.k, "l": pos.l,
                         **metrics[pos]})
        score = metrics[final_pos]["err2d"]
        if log is not None:
            log(f"step {step}: final-output val err2d {score:.5f} "
                f"(lr {opt.lr:g})")
        return score

    score = run_validation(0)
    initial_err2d = score
    done = early_stop_err2d is not None and score < early_stop_err2d

    step = 0
    while step < steps and not done:
        step += 1
        idx = batch_rng.choice(train_size, size=batch_size, replace=False)
        chunk = [data[i] for i in idx]
        if augment_data:
            chunk = [augment(s, draw_augment_params(
                aug_rng, rotation_max_deg, scale_range, gain_range))
                for s in chunk]
        images, pose, mask, conf = assemble_batch(chunk, config.dtype)
        with Tape() as tape:
            preds = forward_full(images, model, stats="batch",
                                 update_running=True)
            loss = total_loss(preds, pose, mask, conf)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise RuntimeError(
                f"non-finite loss {loss_value} at step {step} "
                f"(lr {opt.lr:g}, batch indices {idx.tolist()})")
        grads = backward(tape, loss)
        opt.step(model, grads)

        if step % val_interval == 0 or step == steps:
            score = run_validation(step)
            opt.lr = sched.observe(score)
            if early_stop_err2d is not None and score < early_stop_err2d:
                done = True

    return TrainResult(model=model, metrics=rows,
                       initial_err2d=initial_err2d, final_err2d=score)
