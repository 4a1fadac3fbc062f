"""Image decoding, grayscale conversion, and bilinear resampling.

PGM (binary P5, 8-bit) is the native format and is parsed here directly;
PNG decoding is an optional capability delegated to Pillow.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

PGM_MEDIA_TYPE = "image/x-portable-graymap"
PNG_MEDIA_TYPE = "image/png"

# ITU-R BT.601 luminance weights.
_LUMA = (0.299, 0.587, 0.114)


def read_pgm_bytes(raw: bytes) -> np.ndarray:
    """Decode a binary (P5) 8-bit PGM into a uint8 [H,W] array."""
    if not raw.startswith(b"P5"):
        raise ValueError("not a binary PGM: missing P5 magic")
    # Header tokens: magic, width, height, maxval; '#' comments allowed.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ValueError(f"malformed PGM header tokens {tokens}") from exc
    if width < 1 or height < 1:
        raise ValueError(f"PGM has zero dimension: {width}x{height}")
    if maxval != 255:
        raise ValueError(f"only 8-bit PGM supported, maxval={maxval}")
    pixels = raw[pos : pos + width * height]
    if len(pixels) != width * height:
        raise ValueError(
            f"PGM pixel data truncated: expected {width * height} bytes, got {len(pixels)}"
        )
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def write_pgm_bytes(img: np.ndarray) -> bytes:
    """Encode a uint8 [H,W] array as binary P5 PGM."""
    if img.ndim != 2:
        raise ValueError(f"PGM wants a 2-D image, got shape {img.shape}")
    a = np.ascontiguousarray(img, dtype=np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    return header + a.tobytes()


def read_pgm(path) -> np.ndarray:
    return read_pgm_bytes(Path(path).read_bytes())


def write_pgm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(write_pgm_bytes(img))


def decode_image_bytes(raw: bytes, media_type: str | None = None) -> np.ndarray:
    """Decode raw bytes into uint8 [H,W] or [H,W,3].

    PGM is handled natively. Anything else (PNG in practice) goes through
    Pillow when the content sniffs as such.
    """
    if media_type == PGM_MEDIA_TYPE or raw.startswith(b"P5"):
        return read_pgm_bytes(raw)
    if media_type == PNG_MEDIA_TYPE or raw.startswith(b"\x89PNG"):
        return _decode_png(raw)
    raise ValueError("unsupported image format: expected PGM (P5) or PNG")


def _decode_png(raw: bytes) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(raw)) as im:
        if im.mode in ("L", "I;16"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_image(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    return decode_image_bytes(raw)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """RGB -> 8-bit grayscale via BT.601 luminance, floor(x + 0.5) rounding."""
    if img.ndim == 2:
        return img.astype(np.uint8, copy=False)
    if img.ndim == 3 and img.shape[2] == 3:
        f = (
            _LUMA[0] * img[..., 0].astype(np.float64)
            + _LUMA[1] * img[..., 1].astype(np.float64)
            + _LUMA[2] * img[..., 2].astype(np.float64)
        )
        return np.clip(np.floor(f + 0.5), 0, 255).astype(np.uint8)
    raise ValueError(f"expected [H,W] or [H,W,3] image, got shape {img.shape}")


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers (corner alignment off).

    Sample coordinates are clamped at the edges. Interpolation uses the
    a + t*(b - a) form so a constant image resizes to exactly the same
    constant and outputs stay inside [min, max] of the input.
    """
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize needs positive dimensions")

    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]

    tl = src[np.ix_(y0, x0)]
    tr = src[np.ix_(y0, x1)]
    bl = src[np.ix_(y1, x0)]
    br = src[np.ix_(y1, x1)]
    top = tl + fx * (tr - tl)
    bot = bl + fx * (br - bl)
    return top + fy * (bot - top)
