"""Dense float tensors with reverse-mode automatic differentiation.

Everything the network needs is built from the small set of operations in
this module: dense / depthwise convolution, pooling, nearest-neighbor
upsampling, per-channel normalization, elementwise math and spatial softmax.
Each operation records a backward rule on the active :class:`Tape`;
:func:`backward` replays the tape in reverse execution order, which is
deterministic by construction (no topological re-sort, no threading).

Layout convention is batch x height x width x channels throughout.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "GradTape",
    "Gradients",
    "TapeError",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "abs_",
    "square",
    "log",
    "clamp",
    "activation",
    "relu",
    "sigmoid",
    "sum_all",
    "mean_all",
    "concat_last",
    "conv2d",
    "depthwise_conv2d",
    "separable_conv2d",
    "pool2d",
    "upsample2x",
    "channel_norm",
    "NormState",
    "spatial_softmax",
    "plane_dot",
    "finite_diff_check",
]

_uid_counter = itertools.count(1)
_active = threading.local()

FLOAT_DTYPES = (np.float32, np.float64)


class TapeError(ValueError):
    """Raised when a backward pass is requested for a loss not on the tape."""


class Tensor:
    """Immutable n-d float array participating in tape-based autodiff.

    The ``data`` buffer must not be mutated after construction; backward
    rules only ever read it.  ``grad`` is a scratch slot filled by the
    training loop for convenience and is not used by the tape itself.
    """

    __slots__ = ("data", "uid", "grad")

    def __init__(self, data, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype not in FLOAT_DTYPES:
                arr = arr.astype(np.float32)
        self.data = arr
        self.uid = next(_uid_counter)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    # Operator sugar used mostly by the loss code.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("tensor division only supports python scalars")
        return mul(self, _as_tensor(1.0 / other, self.dtype))


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class Tape:
    """Ordered record of executed operations for one forward pass.

    Used as a context manager; operations executed inside the ``with``
    block register their backward rules here.  Distinct tapes may be used
    on distinct threads (the active tape is thread-local).
    """

    def __init__(self):
        self._records: list[tuple[int, Callable]] = []
        self._produced: set[int] = set()
        self._token = None

    def __enter__(self):
        stack = getattr(_active, "stack", None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active.stack.pop()
        return False

    def _append(self, out_uid: int, rule: Callable) -> None:
        self._records.append((out_uid, rule))
        self._produced.add(out_uid)

    def __len__(self):
        return len(self._records)


GradTape = Tape  # descriptive alias


def _tape() -> Tape | None:
    stack = getattr(_active, "stack", None)
    return stack[-1] if stack else None


class Gradients:
    """Gradient buffers keyed by tensor identity.

    Tensors never touched by the loss report a zero gradient, matching the
    contract that unreachable parameters contribute nothing to an update.
    """

    def __init__(self, buffers: dict[int, np.ndarray]):
        self._buffers = buffers

    def of(self, t: Tensor) -> np.ndarray:
        g = self._buffers.get(t.uid)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def has(self, t: Tensor) -> bool:
        return t.uid in self._buffers


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Replay ``tape`` in reverse and return gradients of ``loss``.

    ``loss`` must be a scalar produced on this tape.  Buffers of
    intermediate (tape-produced) tensors are freed as soon as their
    backward rule has consumed them, so the returned gradients are meant
    to be queried for leaves: parameters and inputs.
    """
    if loss.uid not in tape._produced:
        raise TapeError("loss tensor was not produced on this tape")
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
    buffers: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    for out_uid, rule in reversed(tape._records):
        g = buffers.pop(out_uid, None)
        if g is None:
            continue
        rule(g, buffers)
    return Gradients(buffers)


def _accum(buffers: dict[int, np.ndarray], uid: int, grad: np.ndarray) -> None:
    held = buffers.get(uid)
    if held is None:
        buffers[uid] = grad
    else:
        held += grad


def _register(out: Tensor, rule: Callable) -> None:
    tape = _tape()
    if tape is not None:
        tape._append(out.uid, rule)


def _check_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ValueError(f"dtype mismatch: {dt} vs {t.dtype}")


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def _binary_grad(g: np.ndarray, operand: Tensor,
                 donate: bool = False) -> np.ndarray:
    # Only same-shape or scalar broadcasting is supported.  A rule may
    # donate the incoming buffer to at most one recipient; everyone else
    # gets a copy, because accumulation mutates held buffers in place.
    if operand.data.shape == g.shape:
        return g if donate else g.copy()
    if operand.data.size == 1:
        return np.asarray(g.sum(), dtype=g.dtype).reshape(operand.data.shape)
    raise ValueError(
        f"unsupported broadcast in backward: {operand.data.shape} vs {g.shape}"
    )


def _check_binary_shapes(a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_binary_shapes(a, b)
    out = Tensor(a.data + b.data)

    def rule(g, buffers):
        _accum(buffers, b.uid, _binary_grad(g, b))
        _accum(buffers, a.uid, _binary_grad(g, a, donate=True))

    _register(out, rule)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_binary_shapes(a, b)
    out = Tensor(a.data - b.data)

    def rule(g, buffers):
        _accum(buffers, b.uid, _binary_grad(-g, b, donate=True))
        _accum(buffers, a.uid, _binary_grad(g, a, donate=True))

    _register(out, rule)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_binary_shapes(a, b)
    out = Tensor(a.data * b.data)

    def rule(g, buffers):
        _accum(buffers, a.uid, _binary_grad(g * b.data, a))
        _accum(buffers, b.uid, _binary_grad(g * a.data, b))

    _register(out, rule)
    return out


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)

    def rule(g, buffers):
        _accum(buffers, x.uid, -g)

    _register(out, rule)
    return out


def abs_(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at exactly 0."""
    out = Tensor(np.abs(x.data))

    def rule(g, buffers):
        _accum(buffers, x.uid, g * np.sign(x.data))

    _register(out, rule)
    return out


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)

    def rule(g, buffers):
        _accum(buffers, x.uid, g * (2.0 * x.data))

    _register(out, rule)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def rule(g, buffers):
        _accum(buffers, x.uid, g / x.data)

    _register(out, rule)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(x.data, lo, hi))
    passthrough = (x.data >= lo) & (x.data <= hi)

    def rule(g, buffers):
        _accum(buffers, x.uid, g * passthrough)

    _register(out, rule)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise relu or sigmoid. Relu gradient at exactly 0 is 0."""
    if kind == "relu":
        out = Tensor(np.maximum(x.data, 0))
        positive = x.data > 0

        def rule(g, buffers):
            _accum(buffers, x.uid, g * positive)

    elif kind == "sigmoid":
        # Stable in both tails: exp of a non-positive argument only.
        xd = x.data
        y = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                     np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
        y = y.astype(xd.dtype)
        out = Tensor(y)

        def rule(g, buffers):
            _accum(buffers, x.uid, g * (y * (1.0 - y)))

    else:
        raise ValueError(f"unknown activation kind: {kind!r}")
    _register(out, rule)
    return out


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))

    def rule(g, buffers):
        _accum(buffers, x.uid, np.full_like(x.data, g))

    _register(out, rule)
    return out


def mean_all(x: Tensor) -> Tensor:
    return sum_all(x) / float(x.data.size)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis; backward splits the gradient."""
    _check_same_dtype(*parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.data.shape[-1] for p in parts]

    def rule(g, buffers):
        offset = 0
        for p, w in zip(parts, widths):
            _accum(buffers, p.uid, g[..., offset:offset + w].copy())
            offset += w

    _register(out, rule)
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _same_pad(extent: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return out, total // 2, total - total // 2


def _conv_geometry(h, w, kh, kw, stride, padding):
    if padding == "same":
        ho, pt, pb = _same_pad(h, kh, stride)
        wo, pl, pr = _same_pad(w, kw, stride)
    elif padding == "valid":
        if h < kh or w < kw:
            raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding mode: {padding!r}")
    return ho, wo, (pt, pb, pl, pr)


def conv2d(x: Tensor, weights: Tensor, stride: int = 1,
           padding: str = "same") -> Tensor:
    """Dense 2D convolution, x: BxHxWxC, weights: khxkwxCxCo."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    _check_same_dtype(x, weights)
    if x.data.ndim != 4 or weights.data.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-d input and weights, got {x.data.shape} "
            f"and {weights.data.shape}")
    b, h, w, c = x.data.shape
    kh, kw, cin, cout = weights.data.shape
    if cin != c:
        raise ValueError(
            f"input has {c} channels but weights expect {cin} "
            f"(weights shape {weights.data.shape})")
    ho, wo, (pt, pb, pl, pr) = _conv_geometry(h, w, kh, kw, stride, padding)

    if kh == 1 and kw == 1 and stride == 1:
        # Pointwise projection: a plain matrix product, no patch gather.
        wmat = weights.data.reshape(c, cout)
        out = Tensor((x.data.reshape(-1, c) @ wmat).reshape(b, h, w, cout))

        def rule(g, buffers):
            gflat = g.reshape(-1, cout)
            gw = (x.data.reshape(-1, c).T @ gflat).reshape(
                weights.data.shape)
            _accum(buffers, weights.uid, gw)
            _accum(buffers, x.uid,
                   (gflat @ wmat.T).reshape(b, h, w, c))

        _register(out, rule)
        return out

    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = np.empty((b, ho, wo, kh * kw * c), dtype=x.dtype)
    tap = 0
    for ki in range(kh):
        for kj in range(kw):
            cols[..., tap * c:(tap + 1) * c] = xp[
                :, ki:ki + ho * stride:stride, kj:kj + wo * stride:stride, :]
            tap += 1
    wmat = weights.data.reshape(kh * kw * c, cout)
    out_data = (cols.reshape(-1, kh * kw * c) @ wmat).reshape(b, ho, wo, cout)
    out = Tensor(out_data)

    def rule(g, buffers):
        gflat = g.reshape(-1, cout)
        gw = (cols.reshape(-1, kh * kw * c).T @ gflat).reshape(weights.data.shape)
        _accum(buffers, weights.uid, gw)
        gcols = (gflat @ wmat.T).reshape(b, ho, wo, kh * kw * c)
        gxp = np.zeros((b, h + pt + pb, w + pl + pr, c), dtype=g.dtype)
        tap = 0
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, ki:ki + ho * stride:stride,
                    kj:kj + wo * stride:stride, :] += \
                    gcols[..., tap * c:(tap + 1) * c]
                tap += 1
        if pt or pb or pl or pr:
            gxp = gxp[:, pt:pt + h, pl:pl + w, :].copy()
        _accum(buffers, x.uid, gxp)

    _register(out, rule)
    return out


def depthwise_conv2d(x: Tensor, weights: Tensor) -> Tensor:
    """Per-channel 2D convolution (one kxk filter per input channel).

    Stride 1, same padding: this is how it appears inside separable blocks.
    weights: khxkwxC.
    """
    _check_same_dtype(x, weights)
    if weights.data.ndim != 3:
        raise ValueError(f"depthwise weights must be khxkwxC, got "
                         f"{weights.data.shape}")
    b, h, w, c = x.data.shape
    kh, kw, cw = weights.data.shape
    if cw != c:
        raise ValueError(f"input has {c} channels but depthwise weights "
                         f"have {cw}")
    ho, wo, (pt, pb, pl, pr) = _conv_geometry(h, w, kh, kw, 1, "same")
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    out_data = np.zeros((b, ho, wo, c), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            out_data += xp[:, ki:ki + ho, kj:kj + wo, :] * weights.data[ki, kj]
    out = Tensor(out_data)

    def rule(g, buffers):
        gw = np.empty_like(weights.data)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                patch = xp[:, ki:ki + ho, kj:kj + wo, :]
                gw[ki, kj] = (patch * g).sum(axis=(0, 1, 2))
                gxp[:, ki:ki + ho, kj:kj + wo, :] += g * weights.data[ki, kj]
        _accum(buffers, weights.uid, gw)
        _accum(buffers, x.uid, gxp[:, pt:pt + h, pl:pl + w, :].copy())

    _register(out, rule)
    return out


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor) -> Tensor:
    """Depthwise convolution followed by a 1x1 projection."""
    if pointwise.data.ndim != 4 or pointwise.data.shape[:2] != (1, 1):
        raise ValueError(f"pointwise weights must be 1x1xCxCo, got "
                         f"{pointwise.data.shape}")
    if depthwise.data.shape[-1] != pointwise.data.shape[2]:
        raise ValueError(
            f"depthwise outputs {depthwise.data.shape[-1]} channels but "
            f"pointwise expects {pointwise.data.shape[2]}")
    return conv2d(depthwise_conv2d(x, depthwise), pointwise)


# ---------------------------------------------------------------------------
# pooling and resampling
# ---------------------------------------------------------------------------


def pool2d(x: Tensor, kind: str, window: int, stride: int,
           padding: str = "same") -> Tensor:
    """Max or sum pooling over square windows.

    Max pooling routes the gradient to the arg-max position of each window
    (first in row-major order on ties); sum pooling spreads it over every
    window position.
    """
    if kind not in ("max", "sum"):
        raise ValueError(f"unknown pooling kind: {kind!r}")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    b, h, w, c = x.data.shape
    if window > h or window > w:
        raise ValueError(f"window {window} larger than spatial extent "
                         f"{h}x{w}")
    ho, wo, (pt, pb, pl, pr) = _conv_geometry(h, w, window, window, stride,
                                              padding)
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)),
                constant_values=fill)

    if kind == "sum":
        out_data = np.zeros((b, ho, wo, c), dtype=x.dtype)
        for ki in range(window):
            for kj in range(window):
                out_data += xp[:, ki:ki + ho * stride:stride,
                               kj:kj + wo * stride:stride, :]
        out = Tensor(out_data)

        def rule(g, buffers):
            gxp = np.zeros_like(xp)
            for ki in range(window):
                for kj in range(window):
                    gxp[:, ki:ki + ho * stride:stride,
                        kj:kj + wo * stride:stride, :] += g
            _accum(buffers, x.uid, gxp[:, pt:pt + h, pl:pl + w, :].copy())

    else:
        out_data = np.full((b, ho, wo, c), -np.inf, dtype=x.dtype)
        argtap = np.zeros((b, ho, wo, c), dtype=np.int16)
        tap = 0
        for ki in range(window):
            for kj in range(window):
                patch = xp[:, ki:ki + ho * stride:stride,
                           kj:kj + wo * stride:stride, :]
                better = patch > out_data
                out_data = np.where(better, patch, out_data)
                argtap = np.where(better, tap, argtap)
                tap += 1
        out = Tensor(out_data.astype(x.dtype))

        def rule(g, buffers):
            gxp = np.zeros_like(xp)
            tap = 0
            for ki in range(window):
                for kj in range(window):
                    gxp[:, ki:ki + ho * stride:stride,
                        kj:kj + wo * stride:stride, :] += g * (argtap == tap)
                    tap += 1
            _accum(buffers, x.uid, gxp[:, pt:pt + h, pl:pl + w, :].copy())

    _register(out, rule)
    return out


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling; backward sums each 2x2 child block."""
    if x.data.ndim != 4:
        raise ValueError(f"upsample2x expects BxHxWxC, got {x.data.shape}")
    b, h, w, c = x.data.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2))

    def rule(g, buffers):
        _accum(buffers, x.uid,
               g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)))

    _register(out, rule)
    return out


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


class NormState:
    """Running statistics of one normalization layer (not trainable)."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def channel_norm(x: Tensor, scale: Tensor, shift: Tensor, stats_mode: str,
                 running: NormState | None = None, eps: float = 1e-5,
                 momentum: float = 0.99, update_running: bool = False) -> Tensor:
    """Per-channel standardization over batch and spatial positions.

    ``batch`` mode normalizes with the statistics of the current batch and
    optionally folds them into ``running`` (kept fraction ``momentum``);
    ``frozen`` mode uses the stored running statistics.
    """
    _check_same_dtype(x, scale, shift)
    b, h, w, c = x.data.shape
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise ValueError(f"scale/shift must have one entry per channel ({c})")

    if stats_mode == "batch":
        if b * h * w <= 1:
            raise ValueError("batch statistics undefined for a single "
                             "element per channel")
        m = x.data.mean(axis=(0, 1, 2))
        v = x.data.var(axis=(0, 1, 2))
        if update_running:
            if running is None:
                raise ValueError("update_running requires a NormState")
            running.mean[:] = momentum * running.mean + (1 - momentum) * m
            running.var[:] = momentum * running.var + (1 - momentum) * v
    elif stats_mode == "frozen":
        if running is None:
            raise ValueError("frozen mode requires a NormState")
        m = running.mean
        v = running.var
    else:
        raise ValueError(f"unknown stats mode: {stats_mode!r}")

    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m) * inv
    out = Tensor(scale.data * xhat + shift.data)

    def rule(g, buffers):
        _accum(buffers, scale.uid, (g * xhat).sum(axis=(0, 1, 2)))
        _accum(buffers, shift.uid, g.sum(axis=(0, 1, 2)))
        if stats_mode == "frozen":
            _accum(buffers, x.uid, g * (scale.data * inv))
        else:
            gs = g * scale.data
            gmean = gs.mean(axis=(0, 1, 2))
            gdot = (gs * xhat).mean(axis=(0, 1, 2))
            _accum(buffers, x.uid, inv * (gs - gmean - xhat * gdot))

    _register(out, rule)
    return out


# ---------------------------------------------------------------------------
# spatial softmax and plane contraction
# ---------------------------------------------------------------------------


def spatial_softmax(h: Tensor) -> Tensor:
    """Softmax over the HxW plane, independently per (batch, channel).

    Stabilized by subtracting the per-plane maximum, so the result is
    invariant to adding a constant to the whole plane.
    """
    if h.data.ndim != 4:
        raise ValueError(f"spatial_softmax expects BxHxWxN, got "
                         f"{h.data.shape}")
    m = h.data.max(axis=(1, 2), keepdims=True)
    e = np.exp(h.data - m)
    z = e.sum(axis=(1, 2), keepdims=True)
    p = e / z
    out = Tensor(p.astype(h.dtype))

    def rule(g, buffers):
        dot = (g * p).sum(axis=(1, 2), keepdims=True)
        _accum(buffers, h.uid, p * (g - dot))

    _register(out, rule)
    return out


def plane_dot(p: Tensor, weights: np.ndarray) -> Tensor:
    """Contract a BxHxWxN tensor with a fixed HxW plane -> BxN."""
    if p.data.shape[1:3] != weights.shape:
        raise ValueError(f"plane shape {weights.shape} does not match "
                         f"input {p.data.shape}")
    w = np.asarray(weights, dtype=p.dtype)
    out = Tensor(np.einsum("bhwn,hw->bn", p.data, w))

    def rule(g, buffers):
        _accum(buffers, p.uid,
               g[:, None, None, :] * w[None, :, :, None])

    _register(out, rule)
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      step: float = 1e-6,
                      sample: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must map a Tensor to a scalar Tensor, and ``x`` must be 64-bit
    (32-bit differences are noise-dominated).  When ``sample`` is given,
    only that many randomly chosen coordinates are probed, which keeps
    whole-network checks tractable.
    """
    if x.dtype != np.float64:
        raise ValueError("finite_diff_check requires a float64 input")
    with Tape() as tape:
        y = f(x)
    if y.data.size != 1:
        raise ValueError(f"f must return a scalar, got shape {y.data.shape}")
    analytic = backward(tape, y).of(x).reshape(-1)

    flat = x.data.reshape(-1)
    if sample is None or sample >= flat.size:
        coords = np.arange(flat.size)
    else:
        coords = (rng or np.random.default_rng()).choice(
            flat.size, size=sample, replace=False)

    worst = 0.0
    for i in coords:
        probe = flat.copy()
        probe[i] += step
        up = f(Tensor(probe.reshape(x.data.shape), dtype=np.float64)).item()
        probe[i] -= 2 * step
        down = f(Tensor(probe.reshape(x.data.shape), dtype=np.float64)).item()
        numeric = (up - down) / (2 * step)
        denom = max(abs(analytic[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
