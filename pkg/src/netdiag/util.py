"""Shared plumbing: deterministic RNG derivation, hashing, checkpoint framing."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash64(*parts: object) -> int:
    """64-bit integer hash of repr(parts), stable across runs and platforms."""
    raw = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(raw).digest()[:8], "little")


def derive_rng(seed: int, *tags: object) -> np.random.Generator:
    """Child generator keyed by (seed, tags); independent streams per tag tuple."""
    entropy = [int(seed) & _MASK64] + [stable_hash64(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *tags: object) -> int:
    return stable_hash64(int(seed), *tags)


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# Binary checkpoint framing shared by embedding and model files:
# magic(4) | uint32 LE header length | canonical JSON header | float64 LE array blobs.


def checkpoint_bytes(magic: bytes, header: dict, arrays: list[np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    header = dict(header)
    header["arrays"] = [list(a.shape) for a in arrays]
    blob = canonical_json(header).encode("utf-8")
    chunks = [magic, struct.pack("<I", len(blob)), blob]
    for a in arrays:
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(chunks)


def parse_checkpoint(data: bytes, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    if data[:4] != magic:
        raise ValueError(f"bad checkpoint magic: {data[:4]!r}")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    arrays = []
    offset = 8 + hlen
    for shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        raw = data[offset : offset + 8 * n]
        if len(raw) != 8 * n:
            raise ValueError("truncated checkpoint blob")
        arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        offset += 8 * n
    if offset != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return header, arrays


def write_checkpoint(path: str | Path, magic: bytes, header: dict, arrays: list[np.ndarray]) -> None:
    Path(path).write_bytes(checkpoint_bytes(magic, header, arrays))


def read_checkpoint(path: str | Path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    return parse_checkpoint(Path(path).read_bytes(), magic)
