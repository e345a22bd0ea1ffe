"""Binary tensor fixtures, checkpoints, and PGM export.

Tensor record layout ("A2T1"): 8-byte magic ``A2TENSR1``, little-endian u32
rank, rank u64 dims, then the row-major float64 payload. A checkpoint is a
file of concatenated records plus a JSON sidecar index mapping dotted
parameter names to byte offsets.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .params import ParameterStore

MAGIC = b"A2TENSR1"
INDEX_SCHEMA = "a2t-index,v1"


def write_tensor(fh, array: np.ndarray):
    # note: ascontiguousarray would promote rank-0 to rank-1
    arr = np.asarray(array, dtype=np.float64)
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(arr.astype("<f8").tobytes(order="C"))


def read_tensor(fh, offset: int | None = None) -> np.ndarray:
    if offset is not None:
        fh.seek(offset)
    pos = fh.tell()
    magic = fh.read(8)
    if magic != MAGIC:
        raise FormatError(f"bad A2T1 magic at offset {pos}")
    raw = fh.read(4)
    if len(raw) < 4:
        raise FormatError(f"truncated A2T1 rank at offset {pos + 8}")
    (rank,) = struct.unpack("<I", raw)
    if rank > 32:
        raise FormatError(f"implausible A2T1 rank {rank} at offset {pos + 8}")
    dims = []
    for i in range(rank):
        raw = fh.read(8)
        if len(raw) < 8:
            raise FormatError(f"truncated A2T1 dims at offset {pos + 12 + 8 * i}")
        dims.append(struct.unpack("<Q", raw)[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = fh.read(count * 8)
    if len(payload) < count * 8:
        raise FormatError(f"truncated A2T1 payload at offset {pos + 12 + 8 * rank}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_tensor(path, array: np.ndarray):
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_checkpoint(prefix, store: ParameterStore):
    """Write <prefix>.a2t plus <prefix>.index.json. Returns both paths."""
    prefix = Path(prefix)
    data_path = prefix.with_suffix(".a2t")
    index_path = prefix.with_suffix(".index.json")
    entries = []
    with open(data_path, "wb") as fh:
        for name, t in store.items():
            entries.append(
                {"name": name, "offset": fh.tell(), "shape": list(t.data.shape)}
            )
            write_tensor(fh, t.data)
    with open(index_path, "w") as fh:
        json.dump({"format": INDEX_SCHEMA, "entries": entries}, fh, indent=1)
        fh.write("\n")
    return data_path, index_path


def load_checkpoint(prefix, store: ParameterStore):
    """Load parameters saved by save_checkpoint into an existing store."""
    prefix = Path(prefix)
    data_path = prefix.with_suffix(".a2t")
    index_path = prefix.with_suffix(".index.json")
    if not data_path.exists() or not index_path.exists():
        raise FormatError(f"checkpoint '{prefix}' is missing .a2t or .index.json")
    with open(index_path) as fh:
        index = json.load(fh)
    if index.get("format") != INDEX_SCHEMA:
        raise FormatError(f"unknown checkpoint index schema in {index_path}")
    names = {e["name"]: e for e in index["entries"]}
    missing = [n for n, _ in store.items() if n not in names]
    if missing:
        raise FormatError(f"checkpoint lacks parameter '{missing[0]}'")
    with open(data_path, "rb") as fh:
        for name, t in store.items():
            entry = names[name]
            arr = read_tensor(fh, offset=entry["offset"])
            if arr.shape != t.data.shape:
                raise FormatError(
                    f"shape mismatch for '{name}' at offset {entry['offset']}: "
                    f"checkpoint {arr.shape} vs model {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype)


def checkpoint_bytes(store: ParameterStore) -> bytes:
    """Concatenated A2T1 records (used for determinism comparisons)."""
    import io

    buf = io.BytesIO()
    for _, t in store.items():
        write_tensor(buf, t.data)
    return buf.getvalue()


def write_pgm(path, values: np.ndarray):
    """Write a [H, W] array in [0, 1] as an 8-bit binary PGM (P5)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    img = np.round(v * 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes(order="C"))


def write_class_map_pgm(path, logits: np.ndarray):
    """Argmax a [K, H, W] (or [1, K, H, W]) logit map to a viewable PGM."""
    arr = np.asarray(logits)
    if arr.ndim == 4:
        arr = arr[0]
    k = arr.shape[0]
    classes = arr.argmax(axis=0).astype(np.float64)
    write_pgm(path, classes / max(k - 1, 1))


def read_pgm_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise FormatError(f"{path} is not a binary PGM")
        dims = fh.readline().split()
        return int(dims[0]), int(dims[1])
