"""File formats: ROMF matrices, model checkpoints, ensemble manifests.

ROMF block: magic ``ROMF``, u32 version, u32 rows, u32 cols, then
rows*cols little-endian float64 values in row-major order. A checkpoint
is one line of JSON (header) followed by one ROMF block of parameters
and one of buffers. All writes go through a temp file + rename so
readers never observe partial files.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import DataMismatchError, MissingArtifactError, ShapeError

MAGIC = b"ROMF"
VERSION = 1
CHECKPOINT_FORMAT = "romf-checkpoint"
CHECKPOINT_VERSION = 1


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def matrix_to_bytes(matrix: np.ndarray) -> bytes:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2:
        raise ShapeError(f"ROMF stores 2D matrices, got shape {matrix.shape}")
    rows, cols = matrix.shape
    header = MAGIC + struct.pack("<III", VERSION, rows, cols)
    body = np.ascontiguousarray(matrix).astype("<f8").tobytes()
    return header + body


def matrix_from_stream(stream: io.BufferedReader) -> np.ndarray:
    head = stream.read(16)
    if len(head) != 16 or head[:4] != MAGIC:
        raise DataMismatchError("not a ROMF block: bad magic")
    version, rows, cols = struct.unpack("<III", head[4:])
    if version != VERSION:
        raise DataMismatchError(f"unsupported ROMF version {version}")
    body = stream.read(rows * cols * 8)
    if len(body) != rows * cols * 8:
        raise DataMismatchError("truncated ROMF block")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_matrix(path: str | Path, matrix: np.ndarray, meta: dict | None = None) -> None:
    """Write a ROMF file, optionally with a JSON sidecar at <path>.meta.json."""
    atomic_write_bytes(path, matrix_to_bytes(matrix))
    if meta is not None:
        sidecar = Path(str(path) + ".meta.json")
        atomic_write_bytes(sidecar, _json_bytes(meta))


def read_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    with open(path, "rb") as fh:
        return matrix_from_stream(fh)


def read_meta(path: str | Path) -> dict:
    sidecar = Path(str(path) + ".meta.json")
    if not sidecar.exists():
        raise MissingArtifactError(str(sidecar))
    return json.loads(sidecar.read_text())


def _json_bytes(obj: dict) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def spec_hash(spec: dict) -> str:
    """Stable identity of an architecture spec, for checkpoint refusal."""
    canon = json.dumps(spec, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_checkpoint(
    path: str | Path,
    spec: dict,
    params: np.ndarray,
    buffers: np.ndarray,
    *,
    seed: int,
    epoch: int,
    history: dict | None = None,
    extra: dict | None = None,
) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec,
        "spec_hash": spec_hash(spec),
        "seed": int(seed),
        "epoch": int(epoch),
        "history": history or {},
    }
    if extra:
        header.update(extra)
    payload = (
        json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        + b"\n"
        + matrix_to_bytes(params[None, :] if params.ndim == 1 else params)
        + matrix_to_bytes(buffers[None, :] if buffers.ndim == 1 else buffers)
    )
    atomic_write_bytes(path, payload)


def read_checkpoint(path: str | Path, expect_spec: dict | None = None) -> dict:
    """Load header + parameter/buffer arrays; refuse on spec-hash mismatch."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataMismatchError(f"{path}: malformed checkpoint header") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DataMismatchError(f"{path}: not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataMismatchError(f"{path}: unsupported checkpoint version")
        params = matrix_from_stream(fh).ravel()
        buffers = matrix_from_stream(fh).ravel()
    if expect_spec is not None and spec_hash(expect_spec) != header["spec_hash"]:
        raise DataMismatchError(
            f"{path}: checkpoint was trained with a different spec "
            f"({header['spec_hash']} != {spec_hash(expect_spec)})"
        )
    header["params"] = params
    header["buffers"] = buffers
    return header


def write_json(path: str | Path, obj: dict) -> None:
    atomic_write_bytes(path, _json_bytes(obj))


def read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    return json.loads(path.read_text())
