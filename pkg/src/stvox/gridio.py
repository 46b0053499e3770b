"""File formats: OCG1 binary grids, plain-text pose files, dump manifests.

OCG1 layout (all integers little-endian):

* magic bytes ``O C G 1``
* u32 ``H, W, Z, C, dtype`` where dtype 0 = 32-bit float, 1 = 8-bit unsigned label
* f64 ``origin_x, origin_y, origin_z, voxel_size``
* payload in the canonical linear layout ``((z*H + y)*W + x)*C + c``

Pose files are plain text, one frame per line, 16 whitespace-separated
decimals row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import GridSpec, Pose
from .util import fmt_float

MAGIC = b"OCG1"
DTYPE_F32 = 0
DTYPE_U8 = 1

_HEADER = struct.Struct("<5I4d")


def write_ocg1(path, spec: GridSpec, values: np.ndarray, dtype_code: int | None = None) -> None:
    """Write a dense grid; float arrays map to dtype 0, integer/bool to dtype 1."""
    values = np.asarray(values)
    if values.ndim == 3:
        values = values[..., None]
    if values.shape != spec.shape:
        raise ValueError(f"array shape {values.shape} does not match spec shape {spec.shape}")
    if dtype_code is None:
        dtype_code = DTYPE_U8 if values.dtype.kind in "uib" else DTYPE_F32
    if dtype_code == DTYPE_F32:
        payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    elif dtype_code == DTYPE_U8:
        payload = np.ascontiguousarray(values, dtype=np.uint8).tobytes()
    else:
        raise ValueError(f"unknown dtype code {dtype_code}")
    header = _HEADER.pack(
        spec.h, spec.w, spec.z, spec.channels, dtype_code,
        float(spec.origin[0]), float(spec.origin[1]), float(spec.origin[2]),
        spec.voxel_size,
    )
    Path(path).write_bytes(MAGIC + header + payload)


def read_ocg1(path) -> tuple[GridSpec, np.ndarray, int]:
    """Read an OCG1 file; returns ``(spec, values, dtype_code)``.

    Float payloads come back as float64 arrays of shape ``(Z, H, W, C)``,
    label payloads as uint8.  Truncated or malformed files raise ValueError.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4 + _HEADER.size:
        raise ValueError(f"{path}: truncated OCG1 header")
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic, not an OCG1 file")
    h, w, z, c, dtype_code, ox, oy, oz, vs = _HEADER.unpack_from(raw, 4)
    spec = GridSpec(np.array([ox, oy, oz]), vs, (h, w, z), c)
    count = h * w * z * c
    body = raw[4 + _HEADER.size:]
    if dtype_code == DTYPE_F32:
        expected = count * 4
        if len(body) != expected:
            raise ValueError(f"{path}: payload is {len(body)} bytes, expected {expected}")
        values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    elif dtype_code == DTYPE_U8:
        if len(body) != count:
            raise ValueError(f"{path}: payload is {len(body)} bytes, expected {count}")
        values = np.frombuffer(body, dtype=np.uint8).copy()
    else:
        raise ValueError(f"{path}: unknown dtype code {dtype_code}")
    return spec, values.reshape(spec.shape), dtype_code


def write_pose_file(path, poses: Sequence[Pose]) -> None:
    lines = [" ".join(f"{v:.17g}" for v in pose.matrix.reshape(-1)) for pose in poses]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_file(path) -> list[Pose]:
    poses: list[Pose] = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 16:
            raise ValueError(f"{path}:{i + 1}: expected 16 values per pose, got {len(parts)}")
        matrix = np.array([float(p) for p in parts]).reshape(4, 4)
        poses.append(Pose(matrix, frame_id=len(poses)))
    if not poses:
        raise ValueError(f"{path}: no poses found")
    return poses


def write_manifest(path, entries: dict) -> None:
    """Write a ``key: value`` structured-text manifest with stable ordering."""
    lines = []
    for key, value in entries.items():
        if isinstance(value, float):
            value = fmt_float(value)
        elif isinstance(value, (list, tuple, np.ndarray)):
            value = " ".join(fmt_float(v) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"{key}: {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, value = line.split(":", 1)
        entries[key.strip()] = value.strip()
    return entries
