"""Minimal binary PGM (P5) / PPM (P6) readers and writers, 8-bit, maxval 255."""

from __future__ import annotations

import numpy as np


def _to_u8(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    """Write a (h, w) grayscale image; floats are taken as [0, 1]."""
    if img.ndim != 2:
        raise ValueError(f"PGM wants a 2-d image, got shape {img.shape}")
    u8 = _to_u8(img)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode())
        fh.write(u8.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (3, h, w) color image; floats are taken as [0, 1]."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM wants a (3, h, w) image, got shape {img.shape}")
    u8 = _to_u8(img).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode())
        fh.write(u8.tobytes())


def _read_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated netpbm header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    return w, h


def read_pgm(path) -> np.ndarray:
    """Read a P5 file as (h, w) float64 in [0, 1]."""
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P5")
        raw = fh.read(w * h)
    if len(raw) != w * h:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def read_ppm(path) -> np.ndarray:
    """Read a P6 file as (3, h, w) float64 in [0, 1]."""
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P6")
        raw = fh.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise ValueError("truncated PPM payload")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return arr.astype(np.float64) / 255.0
