"""Minimal PGM (P2/P5) read/write used for depth dumps and label images."""

from __future__ import annotations

import numpy as np

from .errors import LoadError


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-D unsigned image as binary PGM (P5).

    Values above 255 use the 16-bit big-endian sample layout required by the
    format.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        if maxval > 255:
            fh.write(img.astype(">u2").tobytes())
        else:
            fh.write(img.astype("u1").tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 PGM into a 2-D uint array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P2", b"P5"):
        raise LoadError(f"{path}: not a PGM file")
    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.find(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = tokens
    if data[:2] == b"P5":
        dt = ">u2" if maxval > 255 else "u1"
        img = np.frombuffer(data, dtype=dt, count=width * height, offset=pos)
    else:
        img = np.asarray(data[pos - 1 :].split(), dtype=np.int64)[: width * height]
    if img.size != width * height:
        raise LoadError(f"{path}: truncated PGM")
    return img.reshape(height, width).astype(np.int64)
