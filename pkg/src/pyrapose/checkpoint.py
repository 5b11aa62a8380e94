"""Checkpoint serialization.

File layout (all integers little-endian):

* 8-byte magic ``SSPNETv1``;
* a uint64 with the byte length of the manifest;
* the manifest: UTF-8 text, ``key=value`` lines for the config and the
  step counter, then one line per stored array with
  ``path dtype shape offset`` (shape comma-separated, offset absolute);
* raw little-endian float blobs, each starting at a 64-byte aligned
  offset.

Running normalization statistics are stored alongside the parameters
under ``stats/...`` paths so a save/load round-trip is bit-identical.
"""

from __future__ import annotations

import io
import os

import numpy as np

from .network import (ModelState, NetworkConfig, entry_channels_from_text,
                      entry_channels_to_text, parameter_layout)
from .tensor import NormState, Tensor

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointTruncatedError",
    "CheckpointShapeError",
]

MAGIC = b"SSPNETv1"
_ALIGN = 64
_DTYPE_CODES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


class CheckpointError(Exception):
    """Base class; ``code`` distinguishes failure families."""

    code = "error"


class CheckpointFormatError(CheckpointError):
    code = "format"


class CheckpointTruncatedError(CheckpointError):
    code = "truncated"


class CheckpointShapeError(CheckpointError):
    code = "shape"


def _config_lines(model: ModelState) -> list[str]:
    c = model.config
    return [
        f"pyramids={c.pyramids}",
        f"levels={c.levels}",
        f"joints={c.joints}",
        f"features={c.features}",
        f"input_h={c.input_size[0]}",
        f"input_w={c.input_size[1]}",
        f"entry_channels={entry_channels_to_text(c.entry_channels)}",
        f"precision={c.precision}",
        f"step={model.step}",
    ]


def _stored_arrays(model: ModelState) -> list[tuple[str, np.ndarray]]:
    out = [(path, model.params[path].data)
           for path in model.parameter_paths()]
    for path in sorted(model.norms):
        out.append((f"stats/{path}/mean", model.norms[path].mean))
        out.append((f"stats/{path}/var", model.norms[path].var))
    return out


def save_checkpoint(model: ModelState, path: str | os.PathLike) -> None:
    arrays = _stored_arrays(model)

    # Lay blobs out first so the manifest can carry absolute offsets; the
    # manifest length shifts offsets, so fix the manifest size iteratively
    # (its digit count stabilizes after at most a few rounds).
    def build_manifest(offsets):
        lines = _config_lines(model)
        for (name, arr), off in zip(arrays, offsets):
            code = "f8" if arr.dtype == np.float64 else "f4"
            shape = ",".join(str(s) for s in arr.shape)
            lines.append(f"{name} {code} {shape} {off}")
        return ("\n".join(lines) + "\n").encode("utf-8")

    offsets = [0] * len(arrays)
    for _ in range(8):
        manifest = build_manifest(offsets)
        pos = len(MAGIC) + 8 + len(manifest)
        new_offsets = []
        for _, arr in arrays:
            pos = (pos + _ALIGN - 1) // _ALIGN * _ALIGN
            new_offsets.append(pos)
            pos += arr.nbytes
        if new_offsets == offsets:
            break
        offsets = new_offsets
    else:  # pragma: no cover - digit growth converges immediately
        raise AssertionError("checkpoint offset layout did not converge")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(len(manifest).to_bytes(8, "little"))
    buf.write(manifest)
    for (_, arr), off in zip(arrays, offsets):
        buf.write(b"\0" * (off - buf.tell()))
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        buf.write(little.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _parse_config(lines: dict[str, str]) -> tuple[NetworkConfig, int]:
    try:
        config = NetworkConfig(
            pyramids=int(lines["pyramids"]),
            levels=int(lines["levels"]),
            joints=int(lines["joints"]),
            features=int(lines["features"]),
            input_size=(int(lines["input_h"]), int(lines["input_w"])),
            entry_channels=entry_channels_from_text(lines["entry_channels"]),
            precision=lines["precision"],
        )
        step = int(lines["step"])
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"bad config in manifest: {exc}") from exc
    return config, step


def load_checkpoint(path: str | os.PathLike,
                    expected_config: NetworkConfig | None = None
                    ) -> ModelState:
    """Load a checkpoint; the reverse of :func:`save_checkpoint`.

    With ``expected_config`` given, the stored arrays are additionally
    validated against that config's parameter layout and the first
    mismatch is reported by path.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointTruncatedError(
            f"file is {len(raw)} bytes, smaller than the fixed header")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(
            f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    mlen = int.from_bytes(raw[len(MAGIC):len(MAGIC) + 8], "little")
    mstart = len(MAGIC) + 8
    if mstart + mlen > len(raw):
        raise CheckpointTruncatedError(
            f"manifest claims {mlen} bytes but file ends early")
    try:
        manifest = raw[mstart:mstart + mlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"manifest is not UTF-8: {exc}") from exc

    config_lines: dict[str, str] = {}
    entries: list[tuple[str, str, tuple[int, ...], int]] = []
    for line in manifest.splitlines():
        if not line.strip():
            continue
        if "=" in line and " " not in line:
            key, value = line.split("=", 1)
            config_lines[key] = value
            continue
        parts = line.split(" ")
        if len(parts) != 4:
            raise CheckpointFormatError(f"malformed manifest line: {line!r}")
        name, code, shape_text, offset_text = parts
        if code not in _DTYPE_CODES:
            raise CheckpointFormatError(f"unknown dtype code {code!r} "
                                        f"for {name}")
        try:
            shape = tuple(int(s) for s in shape_text.split(","))
            offset = int(offset_text)
        except ValueError as exc:
            raise CheckpointFormatError(
                f"malformed manifest line: {line!r}") from exc
        entries.append((name, code, shape, offset))

    config, step = _parse_config(config_lines)

    arrays: dict[str, np.ndarray] = {}
    for name, code, shape, offset in entries:
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointTruncatedError(
                f"{name}: blob [{offset}, {offset + nbytes}) past end of "
                f"file ({len(raw)} bytes)")
        arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)),
                            offset=offset).reshape(shape)
        arrays[name] = arr.astype(dtype.newbyteorder("="), copy=True)

    check_config = expected_config if expected_config is not None else config
    layout = parameter_layout(check_config)
    for path_name, _, expected_shape in layout:
        stored = arrays.get(path_name)
        if stored is None:
            raise CheckpointShapeError(f"missing parameter {path_name}")
        if tuple(stored.shape) != tuple(expected_shape):
            raise CheckpointShapeError(
                f"{path_name}: stored shape {tuple(stored.shape)} does not "
                f"match expected {tuple(expected_shape)}")

    params = {p: Tensor(arrays[p].astype(config.dtype, copy=False))
              for p, _, _ in layout}
    norms: dict[str, NormState] = {}
    for path_name, _, expected_shape in layout:
        if not path_name.endswith("/scale"):
            continue
        norm_path = path_name[:-len("/scale")]
        mean = arrays.get(f"stats/{norm_path}/mean")
        var = arrays.get(f"stats/{norm_path}/var")
        if mean is None or var is None:
            raise CheckpointShapeError(
                f"missing running statistics for {norm_path}")
        ns = NormState(mean.size, dtype=config.dtype)
        ns.mean[:] = mean
        ns.var[:] = var
        norms[norm_path] = ns
    return ModelState(config, params, norms, step)
