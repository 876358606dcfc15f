"""Binary tensor checkpoint format.

Layout: magic b"ODTW", format version u32, entry count u32, then per entry:
name length u16 + UTF-8 name, rank u8, dims (u32 each), float64 values
little-endian, row-major.  All integers little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ODTW"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed checkpoint files."""


def save_tensors(path, entries: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(entries))]
    for name, arr in entries.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"entry name too long: {name[:40]}...")
        # not ascontiguousarray: that would silently promote rank-0 to rank-1
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            chunks.append(struct.pack("<I", d))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<I", buf, off)
    off += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        end = off + 8 * n
        if end > len(buf):
            raise CheckpointError(
                f"{path}: truncated at offset {off}, entry {name!r} needs {8 * n} bytes"
            )
        out[name] = np.frombuffer(buf[off:end], dtype="<f8").reshape(dims).copy()
        off = end
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes after entries")
    return out
