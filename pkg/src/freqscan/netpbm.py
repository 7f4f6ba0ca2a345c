"""Minimal PGM/PPM reader and writer (P2, P3, P5, P6; maxval up to 65535)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _tokens(data: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated netpbm header")
        out.append(data[start:pos])
    return out, pos


def read_pnm(path) -> np.ndarray:
    """Read a PGM/PPM file as (H, W) or (H, W, 3) float64 scaled to [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ValueError(f"{path}: not a PGM/PPM file")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    chans = 3 if magic in (b"P3", b"P6") else 1
    n = w * h * chans
    if magic in (b"P5", b"P6"):
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = data[pos + 1:]
        if len(body) < n * dtype.itemsize:
            raise ValueError(f"{path}: truncated pixel data")
        arr = np.frombuffer(body, dtype, n).astype(np.float64)
    else:
        vals, _ = _tokens(data, n, pos)
        arr = np.array([int(v) for v in vals], dtype=np.float64)
    arr = arr.reshape(h, w, chans) / maxval
    return arr[:, :, 0] if chans == 1 else arr


def write_pgm(path, image: np.ndarray) -> None:
    """Write an (H, W) array with values in [0, 1] as 8-bit binary PGM (clamped)."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("PGM needs a single-channel (H, W) image")
    q = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{x.shape[1]} {x.shape[0]}\n255\n".encode())
        f.write(q.tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    q = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{x.shape[1]} {x.shape[0]}\n255\n".encode())
        f.write(q.tobytes())
