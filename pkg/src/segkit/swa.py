"""Stochastic weight averaging over checkpoint snapshots.

A checkpoint is a ``dict`` mapping tensor names to float32 numpy arrays.
On disk it uses the SWA1 archive::

    b"SWA1"  u32 count
    per tensor (names in lexicographic order):
        u16 name_len, name (UTF-8), u8 rank, rank x u32 dims, prod(dims) x f32

All integers and floats are little-endian.

Training frameworks export through :func:`checkpoint_from_mapping`, e.g. for
a PyTorch ``state_dict``::

    ck = checkpoint_from_mapping({k: v.detach().cpu().numpy() for k, v in sd.items()})
    write_archive(ck, "snapshot_03.swa1")

Normalization running statistics are averaged like any other tensor; they
are not recomputed with a forward pass.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import EmptyList, FormatError, IoError, SchemaMismatch

MAGIC = b"SWA1"
_F32 = np.dtype("<f4")


def checkpoint_from_mapping(mapping):
    """Normalize a name -> array-like mapping into a canonical checkpoint."""
    out = {}
    for name in sorted(mapping):
        if not isinstance(name, str):
            raise SchemaMismatch(f"tensor names must be strings, got {name!r}", name)
        arr = np.asarray(mapping[name])
        if not np.issubdtype(arr.dtype, np.floating):
            raise SchemaMismatch(f"tensor {name!r} has non-float dtype {arr.dtype}", name)
        if any(d < 1 for d in arr.shape):
            raise SchemaMismatch(f"tensor {name!r} has an empty dimension {arr.shape}", name)
        out[name] = np.ascontiguousarray(arr, dtype=_F32)
    return out


def average_checkpoints(cks):
    """Equal-weight elementwise mean of ``cks``.

    Sums run in float64 over the inputs sorted by content digest, then the
    mean is rounded once to float32, so the result does not depend on the
    order of ``cks``.
    """
    cks = [checkpoint_from_mapping(ck) for ck in cks]
    if not cks:
        raise EmptyList("average_checkpoints needs at least one checkpoint")
    ref = cks[0]
    for k, ck in enumerate(cks[1:], start=1):
        names = sorted(set(ref) ^ set(ck))
        if names:
            raise SchemaMismatch(f"checkpoint {k}: tensor {names[0]!r} not present in all inputs", names[0])
        for name in ref:
            if ck[name].shape != ref[name].shape:
                raise SchemaMismatch(
                    f"checkpoint {k}: tensor {name!r} has dims {ck[name].shape}, expected {ref[name].shape}",
                    name,
                )
    ordered = sorted(cks, key=lambda ck: hashlib.sha256(to_bytes(ck)).digest())
    out = {}
    for name in ref:
        acc = np.zeros(ref[name].shape, dtype=np.float64)
        for ck in ordered:
            acc += ck[name]
        out[name] = (acc / len(ordered)).astype(_F32)
    return out


def to_bytes(ck) -> bytes:
    ck = checkpoint_from_mapping(ck)
    parts = [MAGIC, struct.pack("<I", len(ck))]
    for name, arr in ck.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]!r}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} has rank {arr.ndim} > 255")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype(_F32, copy=False).tobytes(order="C"))
    return b"".join(parts)


def from_bytes(data: bytes):
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"truncated archive at byte {pos}: need {n} more bytes")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("bad magic, not an SWA1 archive")
    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8") from None
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        if any(d == 0 for d in dims):
            raise FormatError(f"tensor {name!r} has a zero dimension")
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(4 * size), dtype=_F32).reshape(dims).copy()
        out[name] = arr
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after last tensor")
    return {name: out[name] for name in sorted(out)}


def write_archive(ck, path):
    data = to_bytes(ck)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_archive(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return from_bytes(data)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
