"""Image and disparity-map file formats.

Supported rasters: binary PGM (P5, maxval 255), 8-bit grayscale PNG, and
PFM (``Pf``, grayscale float32, endianness from the sign of the scale
line). 8-bit sources are divided by 255 on load; PFM values are read as
stored. Disparity maps round-trip through PFM (invalid = +inf) and 16-bit
PNG with the KITTI encoding (value = round(d * 256), 0 = invalid).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError, ImageIOError
from .image import GrayImage

_FORMATS = ("pgm", "png", "pfm")


def _infer_format(path: Path) -> str:
    ext = path.suffix.lower().lstrip(".")
    if ext == "pgm":
        return "pgm"
    if ext == "png":
        return "png"
    if ext == "pfm":
        return "pfm"
    raise FormatError(f"cannot infer image format from extension of {path.name!r}")


def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path: str | Path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def _pnm_tokens(buf: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    """Read whitespace-separated header tokens, skipping # comments."""
    tokens: list[bytes] = []
    i = start
    while len(tokens) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i >= len(buf):
            raise FormatError("truncated PNM header")
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        tokens.append(buf[i:j])
        i = j
    return tokens, i


def _load_pgm(buf: bytes) -> GrayImage:
    if buf[:2] != b"P5":
        raise FormatError("not a binary PGM (missing P5 magic)")
    (w_tok, h_tok, max_tok), i = _pnm_tokens(buf, 3, 2)
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError as exc:
        raise FormatError("malformed PGM header") from exc
    if w < 1 or h < 1:
        raise FormatError(f"bad PGM dimensions {w}x{h}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 PGM supported, got {maxval}")
    i += 1  # single whitespace byte after maxval
    raster = buf[i : i + w * h]
    if len(raster) != w * h:
        raise FormatError(f"PGM raster has {len(raster)} bytes, expected {w * h}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0
    return GrayImage(data)


def _load_pfm(buf: bytes) -> GrayImage:
    magic = buf[:2]
    if magic == b"PF":
        raise FormatError("color PFM (PF) not supported; expected grayscale Pf")
    if magic != b"Pf":
        raise FormatError("not a PFM file (missing Pf magic)")
    (w_tok, h_tok, scale_tok), i = _pnm_tokens(buf, 3, 2)
    try:
        w, h = int(w_tok), int(h_tok)
        scale = float(scale_tok)
    except ValueError as exc:
        raise FormatError("malformed PFM header") from exc
    if w < 1 or h < 1 or scale == 0.0:
        raise FormatError("bad PFM header values")
    i += 1
    n = w * h
    raster = buf[i : i + 4 * n]
    if len(raster) != 4 * n:
        raise FormatError(f"PFM raster has {len(raster)} bytes, expected {4 * n}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raster, dtype=dtype).reshape(h, w).astype(np.float64)
    return GrayImage(np.flipud(data))  # PFM rows are stored bottom-up


def _load_png8(path: Path) -> GrayImage:
    try:
        with PILImage.open(path) as im:
            if im.mode != "L":
                raise FormatError(f"expected 8-bit grayscale PNG, got mode {im.mode!r}")
            data = np.asarray(im, dtype=np.float64) / 255.0
    except FormatError:
        raise
    except OSError as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc
    except Exception as exc:  # PIL decoding errors
        raise FormatError(f"cannot decode PNG {path}: {exc}") from exc
    return GrayImage(data)


def load_image(path: str | Path, format: str | None = None) -> GrayImage:
    """Load a grayscale image; format inferred from the extension if not given."""
    p = Path(path)
    fmt = format.lower() if format is not None else _infer_format(p)
    if fmt not in _FORMATS:
        raise FormatError(f"unknown image format {fmt!r}; expected one of {_FORMATS}")
    if fmt == "png":
        if not p.exists():
            raise ImageIOError(f"no such file: {p}")
        return _load_png8(p)
    buf = _read_bytes(p)
    return _load_pgm(buf) if fmt == "pgm" else _load_pfm(buf)


def save_image(img: GrayImage, path: str | Path, format: str | None = None) -> None:
    """Save an image. 8-bit formats clamp to [0, 1] and quantize; PFM is lossless float32."""
    p = Path(path)
    fmt = format.lower() if format is not None else _infer_format(p)
    if fmt == "pfm":
        _write_bytes(p, _encode_pfm(img.data))
        return
    q = np.clip(img.data, 0.0, 1.0)
    b = np.rint(q * 255.0).astype(np.uint8)
    if fmt == "pgm":
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        _write_bytes(p, header + b.tobytes())
    elif fmt == "png":
        try:
            PILImage.fromarray(b, mode="L").save(p)
        except OSError as exc:
            raise ImageIOError(f"cannot write {p}: {exc}") from exc
    else:
        raise FormatError(f"unknown image format {fmt!r}; expected one of {_FORMATS}")


def _encode_pfm(data: np.ndarray) -> bytes:
    h, w = data.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.flipud(data).astype("<f4").tobytes()
    return header + body


def save_pfm_raw(data: np.ndarray, path: str | Path) -> None:
    """Write a raw float 2-D array as little-endian PFM (no clamping)."""
    _write_bytes(path, _encode_pfm(np.asarray(data, dtype=np.float64)))


def load_pfm_raw(path: str | Path) -> np.ndarray:
    """Read a grayscale PFM as a float array without intensity validation."""
    buf = _read_bytes(path)
    magic = buf[:2]
    if magic != b"Pf":
        raise FormatError("not a grayscale PFM file")
    (w_tok, h_tok, scale_tok), i = _pnm_tokens(buf, 3, 2)
    w, h, scale = int(w_tok), int(h_tok), float(scale_tok)
    i += 1
    n = w * h
    raster = buf[i : i + 4 * n]
    if len(raster) != 4 * n:
        raise FormatError("truncated PFM raster")
    dtype = "<f4" if scale < 0 else ">f4"
    return np.flipud(np.frombuffer(raster, dtype=dtype).reshape(h, w).astype(np.float64))


def save_disparity_pfm(values: np.ndarray, valid: np.ndarray, path: str | Path) -> None:
    """Disparity to PFM with +inf marking invalid pixels."""
    out = np.where(valid, values, np.inf)
    save_pfm_raw(out, path)


def load_disparity_pfm(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Disparity from PFM; non-finite entries are invalid. Returns (values, valid)."""
    raw = load_pfm_raw(path)
    valid = np.isfinite(raw)
    values = np.where(valid, raw, np.nan)
    return values, valid


def save_disparity_png16(values: np.ndarray, valid: np.ndarray, path: str | Path) -> None:
    """Disparity to 16-bit PNG, KITTI encoding: stored = round(d * 256), 0 = invalid."""
    stored = np.rint(np.where(valid, values, 0.0) * 256.0)
    stored = np.clip(stored, 0, 65535).astype(np.uint16)
    stored[~valid] = 0
    try:
        PILImage.fromarray(stored, mode="I;16").save(Path(path))
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def load_disparity_png16(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Disparity from KITTI-encoded 16-bit PNG. Returns (values, valid)."""
    p = Path(path)
    try:
        with PILImage.open(p) as im:
            arr = np.asarray(im)
    except OSError as exc:
        raise ImageIOError(f"cannot read {p}: {exc}") from exc
    if arr.dtype not in (np.uint16, np.int32, np.uint32):
        raise FormatError(f"expected 16-bit PNG disparity, got dtype {arr.dtype}")
    stored = arr.astype(np.float64)
    valid = stored > 0
    values = np.where(valid, stored / 256.0, np.nan)
    return values, valid
