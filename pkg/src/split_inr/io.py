"""Netpbm/PFM images, raw float volumes and deterministic JSON/CSV writers."""
from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def _read_tokens(data: bytes, count: int):
    """Parse ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(data, pos)
        if not m:
            raise FormatError("truncated header")
        tokens.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_image(path) -> np.ndarray:
    """Load PGM (P5), PPM (P6) or PFM into float64 in [0, 1] (PFM values are kept as-is).

    Grayscale images come back as ``(H, W)``, colour as ``(H, W, 3)``; row 0 is
    the top row of the file.
    """
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic in (b"P5", b"P6"):
        (m, w, h, maxval), off = _read_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
        ch = 1 if magic == b"P5" else 3
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        raster = np.frombuffer(data, dtype=dtype, count=w * h * ch, offset=off)
        img = raster.astype(np.float64).reshape(h, w, ch) / maxval
        return img[:, :, 0] if ch == 1 else img
    if magic in (b"Pf", b"PF"):
        (m, w, h, scale), off = _read_tokens(data, 4)
        w, h, scale = int(w), int(h), float(scale)
        ch = 1 if magic == b"Pf" else 3
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        raster = np.frombuffer(data, dtype=dtype, count=w * h * ch, offset=off).astype(np.float64)
        # PFM stores the bottom row first
        img = raster.reshape(h, w, ch)[::-1]
        return img[:, :, 0].copy() if ch == 1 else img.copy()
    raise FormatError(f"{path}: unsupported image format {magic!r}")


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ValueError("PGM needs a single-channel image")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + _to_u8(img).tobytes())


def write_ppm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + _to_u8(img).tobytes())


def write_image(path, img) -> None:
    """Pick PGM/PPM from the channel count, or PFM when the suffix is ``.pfm``."""
    img = np.asarray(img, dtype=np.float64)
    if str(path).endswith(".pfm"):
        write_pfm(path, img)
    elif img.ndim == 3 and img.shape[2] == 3:
        write_ppm(path, img)
    else:
        write_pgm(path, img)


def write_pfm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    color = img.ndim == 3
    h, w = img.shape[:2]
    header = f"{'PF' if color else 'Pf'}\n{w} {h}\n-1.0\n".encode()
    body = np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_volume(path):
    """Raw little-endian float32 cube (x fastest) plus its ``.json`` sidecar.

    Returns ``(values[z, y, x], meta)``.
    """
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    r = int(meta["resolution"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != r ** 3:
        raise FormatError(f"{path}: expected {r ** 3} floats, found {raw.size}")
    meta.setdefault("extent", 1.0)
    meta.setdefault("threshold", 0.5)
    return raw.astype(np.float64).reshape(r, r, r), meta


def write_volume(path, values, extent: float = 1.0, threshold: float = 0.5) -> None:
    v = np.asarray(values)
    if v.ndim != 3 or len(set(v.shape)) != 1:
        raise ValueError("volume must be a cube indexed [z, y, x]")
    path = Path(path)
    np.ascontiguousarray(v, dtype="<f4").tofile(path)
    sidecar = {"resolution": v.shape[0], "extent": extent, "threshold": threshold}
    path.with_suffix(".json").write_text(dumps_json(sidecar))


def _fix_floats(obj):
    if isinstance(obj, float):
        return _Float(obj)
    if isinstance(obj, dict):
        return {str(k): _fix_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fix_floats(v) for v in obj]
    if isinstance(obj, np.generic):
        return _fix_floats(obj.item())
    if isinstance(obj, np.ndarray):
        return _fix_floats(obj.tolist())
    if isinstance(obj, os.PathLike):
        return str(obj)
    return obj


class _Float(float):
    def __repr__(self):
        # strict JSON has no inf/nan
        if self != self or self in (float("inf"), float("-inf")):
            return "null"
        return format(float(self), ".17g")


def dumps_json(obj) -> str:
    """Sorted keys, two-space indent, floats at 17 significant digits, non-finite as null."""
    return _encode(_fix_floats(obj), 0) + "\n"


def _encode(obj, level: int) -> str:
    pad = "  " * (level + 1)
    end = "  " * level
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(obj[k], level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _encode(v, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, _Float):
        return repr(obj)
    return json.dumps(obj)


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def write_spectrum_csv(path, eigenvalues) -> None:
    lines = ["index,eigenvalue"] + [f"{i},{float(v):.17g}" for i, v in enumerate(eigenvalues)]
    Path(path).write_text("\n".join(lines) + "\n")
