"""The sequential pyramid network.

An entry flow reduces the input image 8x and feeds a chain of alternating
downscaling / upscaling pyramids.  Every level of every pyramid ends in a
prediction block that emits heatmaps, depth maps, a pose and confidences,
and re-injects its own predictions into the feature stream so that later
blocks refine instead of re-predicting.  Because each block only depends
on the blocks before it in execution order, inference can be cut after
any block and the returned prefix is bit-identical to the corresponding
entries of the full pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .heads import assemble_predictions
from .tensor import NormState, Tensor

__all__ = [
    "NetworkConfig",
    "ModelState",
    "CutPoint",
    "BlockPrediction",
    "PredictionSet",
    "paper_preset",
    "toy_preset",
    "init_model",
    "prediction_positions",
    "valid_cut_points",
    "entry_flow",
    "separable_residual",
    "downscaling_unit",
    "upscaling_unit",
    "prediction_block",
    "forward_full",
    "forward_cut",
    "count_flops",
]

# Table-style entry flow: a strided stem convolution, then three stages of
# dense residual blocks separated by max-pooling.  Stage block counts and
# pool geometry are fixed; channel widths come from the config.
_ENTRY_BLOCKS_PER_STAGE = (1, 2, 2)
_ENTRY_POOLS = ((3, 2), (2, 2))  # (window, stride) between stages


@dataclass(frozen=True)
class NetworkConfig:
    """Structural hyperparameters of the pyramid network.

    ``entry_channels`` is (stem, (mid1, out1), (mid2, out2), (mid3, out3)):
    the stem convolution width followed by the 1x1 / 3x3 widths of the
    three residual stages.  The final stage output must equal ``features``,
    the constant channel width used inside the pyramids.
    """

    pyramids: int = 8
    levels: int = 3
    joints: int = 17
    features: int = 384
    input_size: tuple[int, int] = (256, 256)
    entry_channels: tuple = (64, (64, 128), (128, 256), (192, 384))
    precision: str = "f32"

    def __post_init__(self):
        if self.pyramids < 1 or self.levels < 1 or self.joints < 1:
            raise ValueError("pyramids, levels and joints must be >= 1")
        h, w = self.input_size
        factor = 8 * (2 ** self.levels)
        if h % factor or w % factor:
            raise ValueError(
                f"input size {h}x{w} must be divisible by {factor} "
                f"(entry flow reduces 8x, then {self.levels} halvings)")
        if len(self.entry_channels) != 4:
            raise ValueError("entry_channels must be (stem, s1, s2, s3)")
        if self.entry_channels[3][1] != self.features:
            raise ValueError(
                f"entry flow ends at {self.entry_channels[3][1]} channels "
                f"but pyramids expect {self.features}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def level_resolution(self, level: int) -> tuple[int, int]:
        h, w = self.input_size
        return h // 8 // (2 ** level), w // 8 // (2 ** level)


def paper_preset(**overrides) -> NetworkConfig:
    return NetworkConfig(**overrides)


def toy_preset(**overrides) -> NetworkConfig:
    """Desk-scale preset: everything structural, minutes not days."""
    defaults = dict(
        pyramids=4,
        levels=2,
        joints=17,
        features=64,
        input_size=(128, 128),
        entry_channels=(8, (8, 16), (16, 32), (32, 64)),
    )
    defaults.update(overrides)
    return NetworkConfig(**defaults)


@dataclass(frozen=True, order=True)
class CutPoint:
    """A prediction block address: pyramid k (1-based), level l (0-based)."""

    k: int
    l: int

    def __str__(self):
        return f"(k={self.k}, l={self.l})"


def prediction_positions(config: NetworkConfig) -> list[CutPoint]:
    """All prediction blocks in execution order.

    Downscaling pyramids (odd k) predict at levels 1..L on the way down;
    upscaling pyramids (even k) predict at levels L-1..0 on the way up.
    """
    out = []
    for k in range(1, config.pyramids + 1):
        if k % 2 == 1:
            out.extend(CutPoint(k, l) for l in range(1, config.levels + 1))
        else:
            out.extend(CutPoint(k, l) for l in range(config.levels - 1, -1, -1))
    return out


def valid_cut_points(config: NetworkConfig) -> list[CutPoint]:
    return prediction_positions(config)


@dataclass
class BlockPrediction:
    """Outputs of one prediction block."""

    heatmaps: Tensor   # B x Hs x Ws x N
    depthmaps: Tensor  # B x Hs x Ws x N
    pose: Tensor       # B x N x 3, normalized coordinates
    conf: Tensor       # B x N x 1


PredictionSet = dict[CutPoint, BlockPrediction]


class ModelState:
    """All learnable parameters plus normalization statistics.

    Parameters are keyed by path (e.g. ``pyr03/lvl1/pb/wh``) and enumerate
    in lexicographic order, which fixes the optimizer state alignment.
    """

    def __init__(self, config: NetworkConfig, params: dict[str, Tensor],
                 norms: dict[str, NormState], step: int = 0):
        self.config = config
        self.params = params
        self.norms = norms
        self.step = step

    def parameter_paths(self) -> list[str]:
        return sorted(self.params)

    def replace_param(self, path: str, data: np.ndarray) -> None:
        expected = self.params[path].data.shape
        if tuple(data.shape) != tuple(expected):
            raise ValueError(f"{path}: shape {data.shape} != {expected}")
        self.params[path] = Tensor(np.asarray(data, dtype=self.config.dtype))

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "ModelState":
        params = {k: Tensor(v.data.copy()) for k, v in self.params.items()}
        norms = {}
        for k, v in self.norms.items():
            ns = NormState(v.mean.size, dtype=v.mean.dtype)
            ns.mean[:] = v.mean
            ns.var[:] = v.var
            norms[k] = ns
        return ModelState(self.config, params, norms, self.step)


def _entry_layout(config: NetworkConfig):
    """Yield (path, kind, shape) for every entry-flow parameter."""
    stem, *stages = config.entry_channels
    yield "entry/stem/conv", "conv", (7, 7, 3, stem)
    yield "entry/stem/norm/scale", "scale", (stem,)
    yield "entry/stem/norm/shift", "shift", (stem,)
    cin = stem
    for s, ((mid, cout), count) in enumerate(
            zip(stages, _ENTRY_BLOCKS_PER_STAGE), start=1):
        for t in range(1, count + 1):
            base = f"entry/s{s}b{t}"
            yield f"{base}/conv1", "conv", (1, 1, cin, mid)
            yield f"{base}/norm1/scale", "scale", (mid,)
            yield f"{base}/norm1/shift", "shift", (mid,)
            yield f"{base}/conv2", "conv", (3, 3, mid, cout)
            yield f"{base}/norm2/scale", "scale", (cout,)
            yield f"{base}/norm2/shift", "shift", (cout,)
            if cin != cout:
                yield f"{base}/proj", "conv", (1, 1, cin, cout)
            cin = cout


def _unit_layout(config: NetworkConfig, k: int, l: int):
    nf = config.features
    kind = "du" if k % 2 == 1 else "uu"
    base = f"pyr{k:02d}/lvl{l}/{kind}"
    yield f"{base}/r_dw", "conv_dw", (3, 3, nf)
    yield f"{base}/r_pw", "conv", (1, 1, nf, nf)
    if k >= 2:
        yield f"{base}/skip", "conv", (1, 1, nf, nf)


def _block_layout(config: NetworkConfig, k: int, l: int):
    nf, n = config.features, config.joints
    base = f"pyr{k:02d}/lvl{l}/pb"
    yield f"{base}/sc_dw", "conv_dw", (3, 3, nf)
    yield f"{base}/sc_pw", "conv", (1, 1, nf, nf)
    yield f"{base}/norm/scale", "scale", (nf,)
    yield f"{base}/norm/shift", "shift", (nf,)
    yield f"{base}/wh", "conv", (1, 1, nf, n)
    yield f"{base}/wd", "conv", (1, 1, nf, n)
    yield f"{base}/wr", "reinject", (1, 1, n, nf)
    yield f"{base}/ws", "reinject", (1, 1, n, nf)


def _full_layout(config: NetworkConfig):
    yield from _entry_layout(config)
    for pos in prediction_positions(config):
        yield from _unit_layout(config, pos.k, pos.l)
        yield from _block_layout(config, pos.k, pos.l)


def parameter_layout(config: NetworkConfig) -> list[tuple[str, str, tuple]]:
    """(path, kind, shape) for every parameter, in enumeration order."""
    return sorted(_full_layout(config))


def entry_channels_to_text(entry) -> str:
    """Compact text form: ``stem,mid1:out1,mid2:out2,mid3:out3``."""
    stem, *stages = entry
    return ",".join([str(stem)] + [f"{mid}:{out}" for mid, out in stages])


def entry_channels_from_text(text: str):
    parts = text.split(",")
    try:
        stem = int(parts[0])
        stages = []
        for p in parts[1:]:
            mid, out = p.split(":")
            stages.append((int(mid), int(out)))
    except ValueError as exc:
        raise ValueError(f"bad entry channel schedule {text!r}") from exc
    if len(stages) != 3:
        raise ValueError(f"expected 3 entry stages, got {len(stages)}")
    return (stem, *stages)


def init_model(config: NetworkConfig, seed: int = 0) -> ModelState:
    """Create a model with deterministic, seed-driven initialization.

    Convolutions get fan-in-scaled uniform weights; normalization affines
    start at scale 1 / shift 0; the re-injection projections start at zero
    so that early training behaves like a plain (no re-injection) network
    and refinement is learned.
    """
    layout = sorted(_full_layout(config))  # lexicographic = enumeration order
    rng = np.random.default_rng(seed)
    dtype = config.dtype
    params: dict[str, Tensor] = {}
    norms: dict[str, NormState] = {}
    for path, kind, shape in layout:
        if kind == "conv":
            fan_in = int(np.prod(shape[:-1]))
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "conv_dw":
            fan_in = shape[0] * shape[1]
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "scale":
            data = np.ones(shape)
        elif kind == "shift":
            data = np.zeros(shape)
        elif kind == "reinject":
            data = np.zeros(shape)
        else:  # pragma: no cover - layout kinds are closed
            raise AssertionError(kind)
        params[path] = Tensor(data.astype(dtype))
        if path.endswith("/scale"):
            norms[path[:-len("/scale")]] = NormState(shape[0], dtype=dtype)
    return ModelState(config, params, norms)


# ---------------------------------------------------------------------------
# forward building blocks
# ---------------------------------------------------------------------------


def _norm(model: ModelState, path: str, x: Tensor, stats: str,
          update_running: bool) -> Tensor:
    return T.channel_norm(
        x, model.params[f"{path}/scale"], model.params[f"{path}/shift"],
        stats_mode=stats, running=model.norms[path],
        update_running=update_running)


def _entry_block(model: ModelState, base: str, x: Tensor, stats: str,
                 update: bool) -> Tensor:
    p = model.params
    t = T.relu(_norm(model, f"{base}/norm1", T.conv2d(x, p[f"{base}/conv1"]),
                     stats, update))
    t = _norm(model, f"{base}/norm2", T.conv2d(t, p[f"{base}/conv2"]),
              stats, update)
    proj = p.get(f"{base}/proj")
    skip = x if proj is None else T.conv2d(x, proj)
    return T.relu(T.add(t, skip))


def entry_flow(image: Tensor, model: ModelState, stats: str = "frozen",
               update_running: bool = False) -> Tensor:
    """Image -> level-0 features (spatial extent reduced 8x)."""
    config = model.config
    b, h, w, c = image.data.shape
    if (h, w) != tuple(config.input_size) or c != 3:
        raise ValueError(f"expected Bx{config.input_size[0]}x"
                         f"{config.input_size[1]}x3 input, got "
                         f"{image.data.shape}")
    x = T.conv2d(image, model.params["entry/stem/conv"], stride=2)
    x = T.relu(_norm(model, "entry/stem/norm", x, stats, update_running))
    for s, count in enumerate(_ENTRY_BLOCKS_PER_STAGE, start=1):
        for t in range(1, count + 1):
            x = _entry_block(model, f"entry/s{s}b{t}", x, stats,
                             update_running)
        if s <= len(_ENTRY_POOLS):
            window, stride = _ENTRY_POOLS[s - 1]
            x = T.pool2d(x, "max", window, stride)
    return x


def separable_residual(x: Tensor, depthwise: Tensor, pointwise: Tensor,
                       proj: Tensor | None = None) -> Tensor:
    """x + SC(x); a 1x1 projection replaces the identity skip when the
    channel counts differ."""
    y = T.separable_conv2d(x, depthwise, pointwise)
    cin = x.data.shape[-1]
    cout = pointwise.data.shape[-1]
    if cin == cout:
        skip = x
    else:
        if proj is None:
            raise ValueError(f"channel change {cin}->{cout} requires a "
                             f"projection")
        skip = T.conv2d(x, proj)
    return T.add(skip, y)


def _unit(model: ModelState, k: int, l: int, carrier: Tensor,
          skip: Tensor | None) -> Tensor:
    kind = "du" if k % 2 == 1 else "uu"
    base = f"pyr{k:02d}/lvl{l}/{kind}"
    p = model.params
    if kind == "du":
        x = T.pool2d(carrier, "max", 2, 2)
    else:
        x = T.upsample2x(carrier)
    x = separable_residual(x, p[f"{base}/r_dw"], p[f"{base}/r_pw"])
    if skip is not None:
        if skip.data.shape[1:3] != x.data.shape[1:3]:
            raise ValueError(
                f"skip features {skip.data.shape} do not match level {l} "
                f"extent {x.data.shape}")
        x = T.add(x, T.conv2d(skip, p[f"{base}/skip"]))
    return x


def downscaling_unit(x_above: Tensor, skip_prev_pyramid: Tensor | None,
                     model: ModelState, k: int, l: int) -> Tensor:
    """Halve the spatial extent and merge the previous pyramid's features."""
    if k % 2 != 1:
        raise ValueError(f"pyramid {k} is not a downscaling pyramid")
    return _unit(model, k, l, x_above, skip_prev_pyramid)


def upscaling_unit(x_below: Tensor, skip_prev_pyramid: Tensor | None,
                   model: ModelState, k: int, l: int) -> Tensor:
    """Double the spatial extent and merge the previous pyramid's features."""
    if k % 2 != 0:
        raise ValueError(f"pyramid {k} is not an upscaling pyramid")
    return _unit(model, k, l, x_below, skip_prev_pyramid)


def prediction_block(x: Tensor, model: ModelState, k: int, l: int,
                     stats: str = "frozen", update_running: bool = False
                     ) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    """One prediction block: (heatmaps, depthmaps, features, pose, conf).

    The depth maps pass through a sigmoid so their values stay inside
    [0, 1], the range relative depth is encoded in.  The returned feature
    map adds the 1x1-projected heatmaps and depth maps back onto the
    input, so downstream blocks see what was already predicted.
    """
    base = f"pyr{k:02d}/lvl{l}/pb"
    p = model.params
    y = T.relu(_norm(model, f"{base}/norm",
                     T.separable_conv2d(x, p[f"{base}/sc_dw"],
                                        p[f"{base}/sc_pw"]),
                     stats, update_running))
    h = T.conv2d(y, p[f"{base}/wh"])
    d = T.sigmoid(T.conv2d(y, p[f"{base}/wd"]))
    pose, conf = assemble_predictions(h, d)
    f = T.add(T.add(x, y), T.add(T.conv2d(h, p[f"{base}/wr"]),
                                 T.conv2d(d, p[f"{base}/ws"])))
    return h, d, f, pose, conf


def _as_input(image, model: ModelState) -> Tensor:
    if isinstance(image, Tensor):
        if image.dtype != model.config.dtype:
            raise ValueError(f"image dtype {image.dtype} != model "
                             f"{model.config.dtype}")
        return image
    arr = np.asarray(image, dtype=model.config.dtype)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr)


def _forward(image, model: ModelState, stats: str, update_running: bool,
             stop_at: CutPoint | None) -> PredictionSet:
    config = model.config
    x = _as_input(image, model)
    features = entry_flow(x, model, stats, update_running)
    # Most recent features seen at each level; the entry flow plays the
    # role of level-0 features of the first pyramid.
    latest: dict[int, Tensor] = {0: features}
    preds: PredictionSet = {}
    for k in range(1, config.pyramids + 1):
        down = k % 2 == 1
        if down:
            carrier = latest[0]
            level_order = range(1, config.levels + 1)
        else:
            carrier = latest[config.levels]
            level_order = range(config.levels - 1, -1, -1)
        for l in level_order:
            skip = latest.get(l) if k >= 2 else None
            carrier = _unit(model, k, l, carrier, skip)
            h, d, f, pose, conf = prediction_block(
                carrier, model, k, l, stats, update_running)
            pos = CutPoint(k, l)
            preds[pos] = BlockPrediction(h, d, pose, conf)
            latest[l] = f
            carrier = f
            if stop_at is not None and pos == stop_at:
                return preds
    return preds


def forward_full(image, model: ModelState, stats: str = "frozen",
                 update_running: bool = False) -> PredictionSet:
    """Run the whole network; one entry per prediction block."""
    return _forward(image, model, stats, update_running, None)


def forward_cut(image, model: ModelState, cut: CutPoint,
                stats: str = "frozen",
                update_running: bool = False) -> PredictionSet:
    """Run only the prefix ending at ``cut``.

    Entries are bit-identical to the corresponding entries of
    :func:`forward_full` because the execution order is the same.
    """
    valid = valid_cut_points(model.config)
    if cut not in valid:
        raise ValueError(
            f"invalid cut point {cut}; valid cut points: "
            f"{', '.join(str(c) for c in valid)}")
    return _forward(image, model, stats, update_running, cut)


# ---------------------------------------------------------------------------
# analytic cost model
# ---------------------------------------------------------------------------


def _entry_flops(config: NetworkConfig) -> int:
    h, w = config.input_size
    stem, *stages = config.entry_channels
    h, w = h // 2, w // 2
    total = h * w * 7 * 7 * 3 * stem
    cin = stem
    for s, ((mid, cout), count) in enumerate(
            zip(stages, _ENTRY_BLOCKS_PER_STAGE), start=1):
        for _ in range(count):
            total += h * w * cin * mid          # 1x1
            total += h * w * 9 * mid * cout     # 3x3
            if cin != cout:
                total += h * w * cin * cout     # skip projection
            cin = cout
        if s <= len(_ENTRY_POOLS):
            _, stride = _ENTRY_POOLS[s - 1]
            h, w = -(-h // stride), -(-w // stride)
    return total


def count_flops(config: NetworkConfig, cut: CutPoint | None = None) -> int:
    """Multiply-accumulate count (batch 1) of a forward pass up to ``cut``.

    Only convolution arithmetic is counted; pooling, resampling and
    normalization are negligible by comparison.  The count is strictly
    monotone in the cut position, which is what makes it a useful proxy
    for the accuracy/speed sweep.
    """
    positions = prediction_positions(config)
    if cut is not None and cut not in positions:
        raise ValueError(f"invalid cut point {cut}")
    nf, n = config.features, config.joints
    total = _entry_flops(config)
    for pos in positions:
        h, w = config.level_resolution(pos.l)
        cells = h * w
        unit = cells * (9 * nf + nf * nf)       # separable residual
        if pos.k >= 2:
            unit += cells * nf * nf             # skip projection
        block = cells * (9 * nf + nf * nf)      # SC inside the block
        block += 2 * cells * nf * n             # heatmap / depth projections
        block += 2 * cells * n * nf             # re-injection
        total += unit + block
        if pos == cut:
            break
    return total
