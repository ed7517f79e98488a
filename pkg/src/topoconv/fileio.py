"""Binary tensor container and PGM image I/O.

The tensor container is deliberately minimal: magic ``TNSR``, a u32 rank,
one u32 per dimension, then the payload as little-endian float64 in C
order.  Images travel as 8-bit binary PGM (P5) so artifacts stay
inspectable with standard tools.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TNSR"
MAX_RANK = 4


def write_tensor_stream(f, array) -> int:
    """Append one tensor record to an open binary stream; returns bytes written."""
    arr = np.asarray(array, dtype=np.float64)
    # validate before ascontiguousarray, which silently promotes 0-d to 1-d
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise ValueError(f"container supports rank 1..{MAX_RANK}, got {arr.ndim}")
    arr = np.ascontiguousarray(arr)
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype("<f8").tobytes(order="C")
    f.write(header)
    f.write(payload)
    return len(header) + len(payload)


def read_tensor_stream(f) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    if rank < 1 or rank > MAX_RANK:
        raise ValueError(f"unsupported rank {rank}")
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
    count = 1
    for d in dims:
        count *= d
    raw = _read_exact(f, 8 * count)
    return np.frombuffer(raw, dtype="<f8").reshape(dims).copy()


def _read_exact(f, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise ValueError(f"truncated container: wanted {n} bytes, got {len(raw)}")
    return raw


def write_tensor(path, array) -> None:
    with open(path, "wb") as f:
        write_tensor_stream(f, array)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor_stream(f)


def write_pgm(path, image, comments=()) -> None:
    """Write an 8-bit binary PGM.

    Accepts uint8 directly, or floats in [0, 1] which are scaled to 0-255
    with round-half-away behaviour via rint.
    """
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"PGM wants a 2-D image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        data = arr
    else:
        arr = arr.astype(np.float64)
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("float image must lie in [0, 1] for PGM export")
        data = np.rint(arr * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n")
        for line in comments:
            if "\n" in line:
                raise ValueError("PGM comments cannot contain newlines")
            f.write(f"# {line}\n".encode("ascii"))
        f.write(f"{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a uint8 array [H, W]; comments are skipped."""
    with open(path, "rb") as f:
        blob = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(blob):
            raise ValueError("truncated PGM header")
        c = blob[i : i + 1]
        if c == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace() and blob[j : j + 1] != b"#":
                j += 1
            tokens.append(blob[i:j])
            i = j
    if tokens[0] != b"P5":
        raise ValueError(f"unsupported PGM flavour {tokens[0]!r} (only binary P5)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ValueError(f"malformed PGM header: {exc}") from None
    if maxval != 255:
        raise ValueError(f"only 8-bit PGM supported, maxval was {maxval}")
    if w <= 0 or h <= 0:
        raise ValueError(f"bad PGM dimensions {w}x{h}")
    i += 1  # single whitespace byte after maxval
    raw = blob[i : i + w * h]
    if len(raw) != w * h:
        raise ValueError(f"truncated PGM payload: wanted {w * h} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()


def pgm_to_unit(image_u8: np.ndarray) -> np.ndarray:
    return image_u8.astype(np.float64) / 255.0
