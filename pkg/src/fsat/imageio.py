"""Lossless image output: binary PPM (P6) written directly, PNG via
Pillow.  Images are (3, H, W) float arrays in [0, 1]; files hold 8-bit
samples quantized round-to-nearest."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "quantize",
    "dequantize",
    "save_image",
    "load_image",
    "save_ppm",
    "load_ppm",
    "difference_map",
]


class ImageIOError(IOError):
    pass


def quantize(img: np.ndarray) -> np.ndarray:
    """[0,1] float (3,H,W) -> uint8, round-to-nearest."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def dequantize(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def save_ppm(path, img: np.ndarray) -> None:
    raw = quantize(img)
    c, h, w = raw.shape
    if c != 3:
        raise ImageIOError(f"PPM requires 3 channels, got {c}")
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raw.transpose(1, 2, 0).tobytes())


def load_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment line
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ImageIOError(f"unsupported PPM header in {path}: {fields}")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return dequantize(pixels.reshape(h, w, 3).transpose(2, 0, 1))


def save_image(path, img: np.ndarray) -> None:
    """Write PPM or PNG depending on the file extension."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        save_ppm(path, img)
    elif path.suffix.lower() == ".png":
        Image.fromarray(quantize(img).transpose(1, 2, 0)).save(path)
    else:
        raise ImageIOError(f"unsupported image extension '{path.suffix}'")


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return load_ppm(path)
    if path.suffix.lower() == ".png":
        arr = np.asarray(Image.open(path).convert("RGB"))
        return dequantize(arr.transpose(2, 0, 1))
    raise ImageIOError(f"unsupported image extension '{path.suffix}'")


def difference_map(a: np.ndarray, b: np.ndarray, amplify: float = 3.0) -> np.ndarray:
    """Amplified absolute difference for visual inspection, clamped to [0,1]."""
    return np.clip(np.abs(np.asarray(a) - np.asarray(b)) * amplify, 0.0, 1.0)
