"""Synthetic articulated-figure data.

Stands in for motion-capture datasets at desk scale: a 17-joint stick
figure with rigid bones is posed by randomly perturbing each bone
direction within per-articulation angle limits, placed 4-6 m in front of
a pinhole camera, and rendered as anti-aliased colored limbs and joint
disks over a textured random background.  Every sample is reproducible
from its seed alone.

Ground truth follows the training conventions: joint (x, y) normalized
by the canvas so the top-left corner is (0, 0); relative depth mapped
onto [0, 1] over a 2 m range with the root (pelvis) at exactly 0.5;
joints projecting outside the frame are marked invisible.
"""

from __future__ import annotations

import colorsys
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel, DEPTH_RANGE_MM, normalize_projection

__all__ = [
    "FigureTemplate",
    "SyntheticSample",
    "AugmentParams",
    "default_template",
    "default_camera",
    "joint_palette",
    "rest_pose",
    "pose_from_angles",
    "sample_figure",
    "render",
    "draw_augment_params",
    "augment",
    "generate_sample",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class FigureTemplate:
    """Joint tree with rigid bone lengths and per-articulation limits."""

    names: tuple[str, ...]
    parents: tuple[int, ...]          # -1 for the root
    bone_mm: np.ndarray               # length of the bone to the parent
    rest_dir: np.ndarray              # unit direction of that bone at rest
    angle_limit_deg: np.ndarray

    @property
    def joints(self) -> int:
        return len(self.names)

    def __post_init__(self):
        if self.parents[0] != -1 or any(p < 0 for p in self.parents[1:]):
            raise ValueError("single root expected at index 0")
        if any(p >= i for i, p in enumerate(self.parents) if p >= 0):
            raise ValueError("parents must precede children")
        if np.any(self.bone_mm[1:] <= 0):
            raise ValueError("bone lengths must be positive")


def default_template() -> FigureTemplate:
    up = (0.0, -1.0, 0.0)     # camera frame: y grows downward in the image
    down = (0.0, 1.0, 0.0)
    left = (1.0, 0.0, 0.0)
    right = (-1.0, 0.0, 0.0)
    spec = [
        # name, parent, bone mm, rest direction, angle limit deg
        ("pelvis", -1, 0.0, (0.0, 0.0, 0.0), 0.0),
        ("spine", 0, 250.0, up, 15.0),
        ("neck", 1, 250.0, up, 15.0),
        ("head", 2, 120.0, up, 20.0),
        ("head_top", 3, 120.0, up, 15.0),
        ("l_shoulder", 2, 180.0, left, 20.0),
        ("l_elbow", 5, 280.0, (0.35, 0.94, 0.0), 45.0),
        ("l_wrist", 6, 250.0, down, 55.0),
        ("r_shoulder", 2, 180.0, right, 20.0),
        ("r_elbow", 8, 280.0, (-0.35, 0.94, 0.0), 45.0),
        ("r_wrist", 9, 250.0, down, 55.0),
        ("l_hip", 0, 110.0, left, 15.0),
        ("l_knee", 11, 450.0, down, 40.0),
        ("l_ankle", 12, 430.0, down, 50.0),
        ("r_hip", 0, 110.0, right, 15.0),
        ("r_knee", 14, 450.0, down, 40.0),
        ("r_ankle", 15, 430.0, down, 50.0),
    ]
    rest = np.array([s[3] for s in spec], dtype=np.float64)
    norms = np.linalg.norm(rest, axis=1)
    rest[1:] /= norms[1:, None]
    return FigureTemplate(
        names=tuple(s[0] for s in spec),
        parents=tuple(s[1] for s in spec),
        bone_mm=np.array([s[2] for s in spec], dtype=np.float64),
        rest_dir=rest,
        angle_limit_deg=np.array([s[4] for s in spec], dtype=np.float64),
    )


def joint_palette(joints: int) -> np.ndarray:
    """Distinct, saturated RGB color per joint."""
    colors = [colorsys.hsv_to_rgb(i / joints, 0.85, 0.95)
              for i in range(joints)]
    return np.array(colors, dtype=np.float64)


def default_camera(canvas: int = 128) -> CameraModel:
    f = 1.9 * canvas
    return CameraModel(fx=f, fy=f, cx=canvas / 2.0, cy=canvas / 2.0,
                       image_size=(canvas, canvas))


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------


def _rodrigues(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def pose_from_angles(template: FigureTemplate, root_pos: np.ndarray,
                     axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Place each joint at parent + bone * rotated rest direction.

    A zero angle reproduces the rest direction exactly, so all-zero
    angles give the template rest pose; rotations preserve bone lengths
    by construction.
    """
    n = template.joints
    pose = np.empty((n, 3), dtype=np.float64)
    pose[0] = root_pos
    for j in range(1, n):
        d = _rodrigues(template.rest_dir[j], axes[j], angles[j])
        pose[j] = pose[template.parents[j]] + template.bone_mm[j] * d
    return pose


def rest_pose(template: FigureTemplate,
              root_pos=(0.0, 0.0, 5000.0)) -> np.ndarray:
    n = template.joints
    return pose_from_angles(template, np.asarray(root_pos, dtype=np.float64),
                            np.zeros((n, 3)), np.zeros(n))


def sample_figure(template: FigureTemplate, rng: np.random.Generator,
                  depth_range=(4000.0, 6000.0),
                  lateral_range=(350.0, 250.0)) -> np.ndarray:
    """Random pose in camera-frame millimeters, root 4-6 m from the lens."""
    n = template.joints
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    limits = np.deg2rad(template.angle_limit_deg)
    angles = rng.uniform(-limits, limits)
    root = np.array([
        rng.uniform(-lateral_range[0], lateral_range[0]),
        rng.uniform(-lateral_range[1], lateral_range[1]),
        rng.uniform(depth_range[0], depth_range[1]),
    ])
    return pose_from_angles(template, root, axes, angles)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSample:
    """One rendered training sample with its ground truth."""

    image: np.ndarray            # H x W x 3 float32 in [0, 1]
    gt_xy: np.ndarray            # N x 2 normalized, float64
    gt_z: np.ndarray             # N normalized relative depth, float64
    visible: np.ndarray          # N bool
    has_depth: bool              # False emulates 2D-only training data
    camera: CameraModel          # includes this sample's root depth
    seed: int | None = None


def _smooth_background(rng: np.random.Generator, height: int,
                       width: int) -> np.ndarray:
    coarse = rng.uniform(0.15, 0.85, size=(6, 6, 3))
    gy = np.linspace(0, coarse.shape[0] - 1, height)
    gx = np.linspace(0, coarse.shape[1] - 1, width)
    y0 = np.floor(gy).astype(int)
    x0 = np.floor(gx).astype(int)
    y1 = np.minimum(y0 + 1, coarse.shape[0] - 1)
    x1 = np.minimum(x0 + 1, coarse.shape[1] - 1)
    fy = (gy - y0)[:, None, None]
    fx = (gx - x0)[None, :, None]
    img = (coarse[y0][:, x0] * (1 - fy) * (1 - fx)
           + coarse[y0][:, x1] * (1 - fy) * fx
           + coarse[y1][:, x0] * fy * (1 - fx)
           + coarse[y1][:, x1] * fy * fx)
    img += rng.normal(0.0, 0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _paint_disk(img, center, radius, color):
    height, width, _ = img.shape
    cx, cy = center
    x0 = max(int(np.floor(cx - radius - 1.5)), 0)
    x1 = min(int(np.ceil(cx + radius + 1.5)), width)
    y0 = max(int(np.floor(cy - radius - 1.5)), 0)
    y1 = min(int(np.ceil(cy + radius + 1.5)), height)
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    d = np.hypot(xs[None, :] - cx, ys[:, None] - cy)
    alpha = np.clip(radius + 0.5 - d, 0.0, 1.0)[..., None]
    img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1 - alpha) + color * alpha


def _paint_segment(img, a, b, radius, color):
    height, width, _ = img.shape
    x0 = max(int(np.floor(min(a[0], b[0]) - radius - 1.5)), 0)
    x1 = min(int(np.ceil(max(a[0], b[0]) + radius + 1.5)), width)
    y0 = max(int(np.floor(min(a[1], b[1]) - radius - 1.5)), 0)
    y1 = min(int(np.ceil(max(a[1], b[1]) + radius + 1.5)), height)
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    px = np.broadcast_to(xs[None, :], (y1 - y0, x1 - x0))
    py = np.broadcast_to(ys[:, None], (y1 - y0, x1 - x0))
    ab = np.subtract(b, a)
    denom = float(ab @ ab)
    if denom < 1e-12:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom,
                    0.0, 1.0)
    d = np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))
    alpha = np.clip(radius + 0.5 - d, 0.0, 1.0)[..., None]
    img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1 - alpha) + color * alpha


def render(pose3d: np.ndarray, cam: CameraModel,
           rng: np.random.Generator, template: FigureTemplate | None = None,
           has_depth: bool = True, seed: int | None = None
           ) -> SyntheticSample:
    """Draw the figure and compute its normalized ground truth."""
    template = template or default_template()
    pose = np.asarray(pose3d, dtype=np.float64)
    if np.any(pose[:, 2] <= 0):
        raise ValueError("joint behind camera (z <= 0)")
    width, height = cam.image_size
    root_cam = cam.with_root_depth(float(pose[0, 2]))
    xy, z = normalize_projection(pose, root_cam)
    z = np.clip(z, 0.0, 1.0)
    px = xy * np.array([width, height], dtype=np.float64)
    visible = ((px[:, 0] >= 0) & (px[:, 0] < width)
               & (px[:, 1] >= 0) & (px[:, 1] < height))

    img = _smooth_background(rng, height, width)
    palette = joint_palette(template.joints)
    limb_r = max(1.2, 0.012 * min(width, height))
    disk_r = max(1.8, 0.02 * min(width, height))
    for j in range(1, template.joints):
        p = template.parents[j]
        _paint_segment(img, px[p], px[j], limb_r, palette[j] * 0.65)
    for j in range(template.joints):
        _paint_disk(img, px[j], disk_r, palette[j])

    return SyntheticSample(
        image=img.astype(np.float32),
        gt_xy=xy,
        gt_z=z,
        visible=visible,
        has_depth=has_depth,
        camera=root_cam,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    """Sampled augmentation values (validated against the allowed ranges)."""

    rotation_deg: float = 0.0      # in [-30, 30]
    scale: float = 1.0             # in [0.7, 1.3]
    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)  # in [0.9, 1.1]
    seed: int | None = None

    def __post_init__(self):
        if not -30.0 <= self.rotation_deg <= 30.0:
            raise ValueError(f"rotation {self.rotation_deg} outside [-30, 30]")
        if not 0.7 <= self.scale <= 1.3:
            raise ValueError(f"scale {self.scale} outside [0.7, 1.3]")
        for g in self.gains:
            if not 0.9 <= g <= 1.1:
                raise ValueError(f"gain {g} outside [0.9, 1.1]")


def draw_augment_params(rng: np.random.Generator,
                        rotation_max_deg: float = 30.0,
                        scale_range: tuple[float, float] = (0.7, 1.3),
                        gain_range: tuple[float, float] = (0.9, 1.1),
                        seed: int | None = None) -> AugmentParams:
    return AugmentParams(
        rotation_deg=float(rng.uniform(-rotation_max_deg, rotation_max_deg)),
        scale=float(rng.uniform(*scale_range)),
        gains=tuple(float(g) for g in rng.uniform(*gain_range, size=3)),
        seed=seed,
    )


def _bilinear_sample(img: np.ndarray, sx: np.ndarray,
                     sy: np.ndarray) -> np.ndarray:
    """Sample at continuous pixel positions with edge clamping."""
    height, width, _ = img.shape
    ix = np.clip(sx - 0.5, 0.0, width - 1.0)
    iy = np.clip(sy - 0.5, 0.0, height - 1.0)
    x0 = np.floor(ix).astype(int)
    y0 = np.floor(iy).astype(int)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = (ix - x0)[..., None]
    fy = (iy - y0)[..., None]
    return (img[y0, x0] * (1 - fy) * (1 - fx) + img[y0, x1] * (1 - fy) * fx
            + img[y1, x0] * fy * (1 - fx) + img[y1, x1] * fy * fx)


def augment(sample: SyntheticSample, params: AugmentParams
            ) -> SyntheticSample:
    """Rotate/scale about the image center and adjust brightness.

    The exact planar transform applied to the image is applied to the
    ground-truth coordinates, relative depth is untouched, and visibility
    is recomputed from the transformed pixel positions.
    """
    width, height = sample.camera.image_size
    theta = np.deg2rad(params.rotation_deg)
    identity_warp = params.rotation_deg == 0.0 and params.scale == 1.0

    if identity_warp:
        img = sample.image.copy()
        xy = sample.gt_xy.copy()
    else:
        c, s = np.cos(theta), np.sin(theta)
        center = np.array([width / 2.0, height / 2.0])
        rot = np.array([[c, -s], [s, c]])
        # Forward map p -> center + scale * R (p - center) for coordinates;
        # the image is resampled through the inverse of the same map.
        px = sample.gt_xy * np.array([width, height], dtype=np.float64)
        px = (px - center) @ rot.T * params.scale + center
        xy = px / np.array([width, height], dtype=np.float64)

        ys, xs = np.mgrid[0:height, 0:width]
        qx = xs + 0.5 - center[0]
        qy = ys + 0.5 - center[1]
        inv = 1.0 / params.scale
        sx = (c * qx + s * qy) * inv + center[0]
        sy = (-s * qx + c * qy) * inv + center[1]
        img = _bilinear_sample(sample.image.astype(np.float64), sx, sy)

    gains = np.asarray(params.gains, dtype=np.float64)
    if not np.all(gains == 1.0):
        img = np.clip(img * gains, 0.0, 1.0)
    img = img.astype(np.float32)

    px = xy * np.array([width, height], dtype=np.float64)
    visible = ((px[:, 0] >= 0) & (px[:, 0] < width)
               & (px[:, 1] >= 0) & (px[:, 1] < height))
    return SyntheticSample(
        image=img,
        gt_xy=xy,
        gt_z=sample.gt_z.copy(),
        visible=visible,
        has_depth=sample.has_depth,
        camera=sample.camera,
        seed=sample.seed,
    )


# ---------------------------------------------------------------------------
# dataset generation and cache
# ---------------------------------------------------------------------------


def generate_sample(seed: int, cam: CameraModel,
                    template: FigureTemplate | None = None,
                    has_depth: bool = True) -> SyntheticSample:
    """Fully reproducible sample: everything derives from the seed."""
    template = template or default_template()
    rng = np.random.default_rng(seed)
    pose = sample_figure(template, rng)
    return render(pose, cam, rng, template=template, has_depth=has_depth,
                  seed=seed)


def generate_dataset(count: int, seed: int, cam: CameraModel | None = None,
                     template: FigureTemplate | None = None,
                     depth2d_fraction: float = 0.0
                     ) -> list[SyntheticSample]:
    """``count`` samples; a ``depth2d_fraction`` share are 2D-only."""
    cam = cam or default_camera()
    template = template or default_template()
    master = np.random.default_rng(seed)
    seeds = master.integers(0, 2 ** 62, size=count)
    flat2d = master.random(count) < depth2d_fraction
    return [generate_sample(int(s), cam, template, has_depth=not f)
            for s, f in zip(seeds, flat2d)]


_DATASET_HEADER = "pyrapose-dataset v1"


def save_dataset(samples: list[SyntheticSample],
                 path: str | os.PathLike) -> None:
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    height, width, _ = samples[0].image.shape
    joints = samples[0].gt_xy.shape[0]
    buf = io.BytesIO()
    buf.write(f"{_DATASET_HEADER} count={len(samples)} width={width} "
              f"height={height} joints={joints}\n".encode())
    for s in samples:
        cam = s.camera
        buf.write(
            f"seed={s.seed if s.seed is not None else -1} "
            f"fx={cam.fx!r} fy={cam.fy!r} cx={cam.cx!r} cy={cam.cy!r} "
            f"width={cam.image_size[0]} height={cam.image_size[1]} "
            f"root_depth={cam.root_depth!r} "
            f"has_depth={int(s.has_depth)}\n".encode())
        buf.write(s.image.astype("<f4").tobytes())
        buf.write(s.gt_xy.astype("<f8").tobytes())
        buf.write(s.gt_z.astype("<f8").tobytes())
        buf.write(s.visible.astype(np.uint8).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_dataset(path: str | os.PathLike) -> list[SyntheticSample]:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.index(b"\n")
    header = raw[:nl].decode()
    if not header.startswith(_DATASET_HEADER):
        raise ValueError(f"not a dataset cache: {header!r}")
    fields = dict(kv.split("=") for kv in header.split(" ")[2:])
    count = int(fields["count"])
    width, height = int(fields["width"]), int(fields["height"])
    joints = int(fields["joints"])
    pos = nl + 1
    samples = []
    for _ in range(count):
        nl = raw.index(b"\n", pos)
        manifest = dict(kv.split("=") for kv in raw[pos:nl].decode().split())
        pos = nl + 1
        img_n = height * width * 3
        image = np.frombuffer(raw, dtype="<f4", count=img_n,
                              offset=pos).reshape(height, width, 3)
        pos += img_n * 4
        gt_xy = np.frombuffer(raw, dtype="<f8", count=joints * 2,
                              offset=pos).reshape(joints, 2)
        pos += joints * 16
        gt_z = np.frombuffer(raw, dtype="<f8", count=joints, offset=pos)
        pos += joints * 8
        visible = np.frombuffer(raw, dtype=np.uint8, count=joints,
                                offset=pos).astype(bool)
        pos += joints
        cam = CameraModel(
            fx=float(manifest["fx"]), fy=float(manifest["fy"]),
            cx=float(manifest["cx"]), cy=float(manifest["cy"]),
            image_size=(int(manifest["width"]), int(manifest["height"])),
            root_depth=float(manifest["root_depth"]))
        seed = int(manifest["seed"])
        samples.append(SyntheticSample(
            image=image.astype(np.float32),
            gt_xy=gt_xy.astype(np.float64),
            gt_z=gt_z.astype(np.float64),
            visible=visible,
            has_depth=bool(int(manifest["has_depth"])),
            camera=cam,
            seed=None if seed < 0 else seed,
        ))
    return samples
