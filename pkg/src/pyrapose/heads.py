"""Sub-pixel keypoint readout heads.

Three parameter-free, fully differentiable readouts turn per-joint score
planes into predictions:

* soft-argmax: the 2D expectation of the softmax-normalized plane against
  fixed coordinate ramps, giving sub-pixel (x, y) in [0, 1];
* depth attention: the same softmax weights applied to a depth plane,
  giving the relative depth z;
* confidence: the largest 2x2 sliding-window sum of the normalized plane,
  close to 1 for a single pointy mode and lower for diffuse or multi-modal
  responses.

All three are shift invariant: adding a constant to a score plane changes
nothing, because the softmax normalization absorbs it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _accum, _register, concat_last, spatial_softmax

__all__ = [
    "RampWeights",
    "make_ramps",
    "soft_argmax_2d",
    "soft_argmax_plane",
    "soft_argmax_backward",
    "depth_attention",
    "confidence_score",
    "assemble_predictions",
]


@dataclass(frozen=True)
class RampWeights:
    """Normalized coordinate ramps for one heatmap resolution.

    wx[i][j] = (2j-1)/(2W) and wy[i][j] = (2i-1)/(2H) for 1-based i, j:
    each cell maps to its center in normalized image coordinates, so all
    entries lie strictly inside (0, 1).
    """

    wx: np.ndarray
    wy: np.ndarray
    resolution: tuple[int, int]


_ramp_cache: dict[tuple[int, int, str], RampWeights] = {}


def make_ramps(height: int, width: int, dtype=np.float64) -> RampWeights:
    if height < 1 or width < 1:
        raise ValueError(f"ramp extents must be positive, got "
                         f"{height}x{width}")
    key = (height, width, np.dtype(dtype).name)
    cached = _ramp_cache.get(key)
    if cached is not None:
        return cached
    cols = (2.0 * np.arange(1, width + 1) - 1.0) / (2.0 * width)
    rows = (2.0 * np.arange(1, height + 1) - 1.0) / (2.0 * height)
    wx = np.broadcast_to(cols[None, :], (height, width)).astype(dtype)
    wy = np.broadcast_to(rows[:, None], (height, width)).astype(dtype)
    wx.flags.writeable = False
    wy.flags.writeable = False
    ramps = RampWeights(wx=wx, wy=wy, resolution=(height, width))
    _ramp_cache[key] = ramps
    return ramps


def _normalized_plane_weights(h: np.ndarray) -> np.ndarray:
    m = h.max(axis=(1, 2), keepdims=True)
    e = np.exp(h - m)
    return e / e.sum(axis=(1, 2), keepdims=True)


def soft_argmax_2d(h: Tensor, ramps: RampWeights | None = None) -> Tensor:
    """Sub-pixel (x, y) expectation of each heatmap plane.

    ``h`` is an unnormalized BxHxWxN heatmap stack; the spatial softmax is
    applied internally.  Returns BxNx2 coordinates strictly inside (0, 1).
    The backward rule is the closed form phi * (w - psi) contracted with
    the upstream gradient, where phi is the softmax plane and psi the
    regressed coordinate.
    """
    if h.data.ndim != 4:
        raise ValueError(f"soft_argmax_2d expects BxHxWxN, got "
                         f"{h.data.shape}")
    b, hh, ww, n = h.data.shape
    if ramps is None:
        ramps = make_ramps(hh, ww, dtype=h.dtype)
    if ramps.resolution != (hh, ww):
        raise ValueError(f"ramps built for {ramps.resolution}, heatmap is "
                         f"{(hh, ww)}")
    wx = ramps.wx.astype(h.dtype, copy=False)
    wy = ramps.wy.astype(h.dtype, copy=False)
    phi = _normalized_plane_weights(h.data)
    x = np.einsum("bhwn,hw->bn", phi, wx)
    y = np.einsum("bhwn,hw->bn", phi, wy)
    out = Tensor(np.stack([x, y], axis=-1))

    def rule(g, buffers):
        gx = g[..., 0][:, None, None, :]
        gy = g[..., 1][:, None, None, :]
        dev_x = wx[None, :, :, None] - x[:, None, None, :]
        dev_y = wy[None, :, :, None] - y[:, None, None, :]
        _accum(buffers, h.uid, phi * (dev_x * gx + dev_y * gy))

    _register(out, rule)
    return out


def soft_argmax_plane(plane: np.ndarray) -> tuple[float, float]:
    """Convenience forward pass on a single HxW plane (no tape)."""
    plane = np.asarray(plane, dtype=np.float64)
    h = Tensor(plane[None, :, :, None], dtype=np.float64)
    xy = soft_argmax_2d(h).data[0, 0]
    return float(xy[0]), float(xy[1])


def soft_argmax_backward(plane: np.ndarray,
                         upstream: tuple[float, float]) -> np.ndarray:
    """Closed-form gradient of soft-argmax on a single HxW plane.

    For each component d, d psi_d / d h_ij expands to
    w_ij phi_ij (1 - phi_ij) - sum_{(l,c) != (i,j)} w_lc phi_ij phi_lc,
    which collapses to phi_ij (w_ij - psi_d).  The result is the plane
    gradient contracted with the upstream pair (gx, gy).
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"expected a single HxW plane, got {plane.shape}")
    hh, ww = plane.shape
    ramps = make_ramps(hh, ww, dtype=np.float64)
    e = np.exp(plane - plane.max())
    phi = e / e.sum()
    psi_x = float((ramps.wx * phi).sum())
    psi_y = float((ramps.wy * phi).sum())
    gx, gy = upstream
    return phi * ((ramps.wx - psi_x) * gx + (ramps.wy - psi_y) * gy)


def depth_attention(h: Tensor, d: Tensor) -> Tensor:
    """Relative depth read out of ``d`` wherever ``h`` responds.

    z = sum_ij d_ij e^{h_ij} / sum_ij e^{h_ij}, evaluated with the same
    max-subtraction stabilization as the spatial softmax; identically the
    expectation of d under the normalized heatmap, hence bounded by
    [min(d), max(d)].  Returns BxNx1.
    """
    if h.data.shape != d.data.shape:
        raise ValueError(f"heatmaps {h.data.shape} and depth maps "
                         f"{d.data.shape} must share a shape")
    if h.data.ndim != 4:
        raise ValueError(f"depth_attention expects BxHxWxN, got "
                         f"{h.data.shape}")
    phi = _normalized_plane_weights(h.data)
    z = (d.data * phi).sum(axis=(1, 2))
    out = Tensor(z[..., None])

    def rule(g, buffers):
        gz = g[..., 0][:, None, None, :]
        _accum(buffers, d.uid, phi * gz)
        _accum(buffers, h.uid,
               phi * (d.data - z[:, None, None, :]) * gz)

    _register(out, rule)
    return out


def confidence_score(h_norm: Tensor) -> Tensor:
    """Largest 2x2 sliding-window sum of a normalized heatmap.

    ``h_norm`` must already be softmax-normalized (nonnegative, plane sum
    1), so the score lies in (0, 1].  The gradient flows into the four
    cells of the maximal window only; ties resolve to the first window in
    row-major order.  Returns BxNx1.
    """
    if h_norm.data.ndim != 4:
        raise ValueError(f"confidence_score expects BxHxWxN, got "
                         f"{h_norm.data.shape}")
    b, hh, ww, n = h_norm.data.shape
    if hh < 2 or ww < 2:
        raise ValueError(f"plane {hh}x{ww} too small for a 2x2 window")
    x = h_norm.data
    windows = (x[:, :-1, :-1, :] + x[:, :-1, 1:, :]
               + x[:, 1:, :-1, :] + x[:, 1:, 1:, :])
    flat = windows.reshape(b, -1, n)
    best = flat.argmax(axis=1)  # first max in row-major order
    score = np.take_along_axis(flat, best[:, None, :], axis=1)[:, 0, :]
    out = Tensor(score[..., None])
    wo = ww - 1

    def rule(g, buffers):
        gh = np.zeros_like(x)
        gi, gj = np.divmod(best, wo)
        bb, nn = np.meshgrid(np.arange(b), np.arange(n), indexing="ij")
        gval = g[..., 0]
        for di in (0, 1):
            for dj in (0, 1):
                np.add.at(gh, (bb, gi + di, gj + dj, nn), gval)
        _accum(buffers, h_norm.uid, gh)

    _register(out, rule)
    return out


def assemble_predictions(h: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
    """Per-joint pose (BxNx3) and confidence (BxNx1) from map pairs."""
    if h.data.shape[-1] != d.data.shape[-1]:
        raise ValueError(
            f"joint count mismatch: heatmaps have {h.data.shape[-1]}, "
            f"depth maps have {d.data.shape[-1]}")
    xy = soft_argmax_2d(h)
    z = depth_attention(h, d)
    conf = confidence_score(spatial_softmax(h))
    pose = concat_last([xy, z])
    return pose, conf
