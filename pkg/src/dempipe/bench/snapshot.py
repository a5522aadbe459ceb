"""Binary particle snapshots.

Layout, all little-endian::

    offset  type        content
    0       4 bytes     magic b"DEMS"
    4       u32         version (1)
    8       u64         particle count N
    16      f64[N*3]    position      (row-major x, y, z per particle)
            f64[N*3]    velocity
            f64[N*3]    angular velocity
            f64[N]      radius
            f64[N]      mass
    -- restart section --
            i64[N]      particle id
            i64[N]      material id
            u64         step index
            u64         P, number of particle-pair history entries
            i64[P]      pair keys
            f64[P*3]    pair tangential displacements
            u64         W, number of particle-wall history entries
            i64[W]      wall keys
            f64[W*3]    wall tangential displacements

Particles are stored in their current in-memory order, so a run reloaded
from a snapshot continues bit for bit.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..contact import ContactHistory, TangentialHistory
from ..state import ParticleSet

MAGIC = b"DEMS"
VERSION = 1


class SnapshotError(IOError):
    pass


def encode_snapshot(particles: ParticleSet, history: ContactHistory | None = None, step_index: int = 0) -> bytes:
    history = history if history is not None else ContactHistory.empty()
    n = particles.count
    parts = [MAGIC, struct.pack("<IQ", VERSION, n)]
    for arr in (particles.position, particles.velocity, particles.angular_velocity, particles.radius, particles.mass):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(particles.ids, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(particles.material, dtype="<i8").tobytes())
    parts.append(struct.pack("<Q", step_index))
    for table in (history.pairs, history.walls):
        parts.append(struct.pack("<Q", len(table)))
        parts.append(np.ascontiguousarray(table.keys, dtype="<i8").tobytes())
        parts.append(np.ascontiguousarray(table.values, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.data):
            raise SnapshotError("snapshot truncated")
        out = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def array(self, dtype: str, count: int, shape=None) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        arr = np.frombuffer(self.take(item * count), dtype=dtype).astype(dtype[1:], copy=True)
        return arr.reshape(shape) if shape is not None else arr

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def decode_snapshot(data: bytes) -> tuple[ParticleSet, ContactHistory, int]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    version = struct.unpack("<I", r.take(4))[0]
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    n = r.u64()
    pos = r.array("<f8", 3 * n, (n, 3))
    vel = r.array("<f8", 3 * n, (n, 3))
    omg = r.array("<f8", 3 * n, (n, 3))
    rad = r.array("<f8", n)
    mass = r.array("<f8", n)
    ids = r.array("<i8", n)
    mat = r.array("<i8", n)
    step_index = r.u64()
    tables = []
    for _ in range(2):
        k = r.u64()
        keys = r.array("<i8", k)
        vals = r.array("<f8", 3 * k, (k, 3))
        tables.append(TangentialHistory(keys, vals))
    if r.pos != len(data):
        raise SnapshotError("trailing bytes after snapshot")
    particles = ParticleSet(pos, rad, mass, velocity=vel, angular_velocity=omg, material=mat, ids=ids)
    return particles, ContactHistory(*tables), step_index


def write_snapshot(path, particles: ParticleSet, history: ContactHistory | None = None, step_index: int = 0) -> Path:
    path = Path(path)
    path.write_bytes(encode_snapshot(particles, history, step_index))
    return path


def read_snapshot(path) -> tuple[ParticleSet, ContactHistory, int]:
    return decode_snapshot(Path(path).read_bytes())
