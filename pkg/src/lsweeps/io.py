"""Binary model and wavefield files.

Both formats start with a magic line and ``key=value`` header lines closed by
a blank line, followed by little-endian float64 data in row-major order
(row = y index).  Model files (``HVM1``) hold squared slowness; wavefield
files (``HWF1``) hold interleaved real/imaginary parts.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

MODEL_MAGIC = b"HVM1\n"
WAVEFIELD_MAGIC = b"HWF1\n"


class FormatError(ValueError):
    pass


def _write(path, magic: bytes, header: dict, payload: np.ndarray) -> None:
    lines = [magic] + [f"{k}={v}\n".encode() for k, v in header.items()] + [b"\n"]
    with open(path, "wb") as fh:
        fh.write(b"".join(lines))
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def _read(path, magic: bytes) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise FormatError(f"{os.fspath(path)}: expected magic {magic!r}")
    pos = len(magic)
    header = {}
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{os.fspath(path)}: unterminated header")
        line = data[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        if not line:
            break
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{os.fspath(path)}: malformed header line {line!r}")
        header[key.strip()] = value.strip()
    for key in ("nx", "ny", "h"):
        if key not in header:
            raise FormatError(f"{os.fspath(path)}: missing header field {key!r}")
    return header, data[pos:]


def _dims(header, path):
    try:
        nx, ny, h = int(header["nx"]), int(header["ny"]), float(header["h"])
    except ValueError as exc:
        raise FormatError(f"{os.fspath(path)}: bad header value ({exc})") from None
    if nx < 1 or ny < 1 or not h > 0:
        raise FormatError(f"{os.fspath(path)}: non-positive dimensions")
    return nx, ny, h


def write_model(path, values: np.ndarray, h: float) -> None:
    values = np.asarray(values, dtype=float)
    ny, nx = values.shape
    _write(path, MODEL_MAGIC, {"nx": nx, "ny": ny, "h": repr(float(h))}, values)


def read_model(path) -> tuple[np.ndarray, float]:
    """Returns ``(values, h)`` with ``values`` shaped ``(ny, nx)``."""
    header, body = _read(path, MODEL_MAGIC)
    nx, ny, h = _dims(header, path)
    if len(body) != 8 * nx * ny:
        raise FormatError(f"{os.fspath(path)}: expected {nx * ny} values, got {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(ny, nx).astype(float), h


def write_wavefield(path, u: np.ndarray, h: float) -> None:
    u = np.asarray(u, dtype=np.complex128)
    ny, nx = u.shape
    inter = np.empty((ny, nx, 2))
    inter[..., 0] = u.real
    inter[..., 1] = u.imag
    _write(path, WAVEFIELD_MAGIC,
           {"nx": nx, "ny": ny, "h": repr(float(h)), "kind": "complex128"}, inter)


def read_wavefield(path) -> tuple[np.ndarray, float]:
    header, body = _read(path, WAVEFIELD_MAGIC)
    nx, ny, h = _dims(header, path)
    if header.get("kind", "complex128") != "complex128":
        raise FormatError(f"{os.fspath(path)}: unsupported kind {header['kind']!r}")
    if len(body) != 16 * nx * ny:
        raise FormatError(f"{os.fspath(path)}: expected {nx * ny} complex values")
    raw = np.frombuffer(body, dtype="<f8").reshape(ny, nx, 2)
    return raw[..., 0] + 1j * raw[..., 1], h
