"""Fixed-layout binary checkpoints for mode states; bit-exact round trips.

File layout (little-endian):
    magic     8 bytes   b"VMLCK001"
    header    R float64, n int32, gamma float64, c_phi float64
    records   repeated: k (3 float64), t (float64), fhat (2*n^3 complex128),
              Ehat (3 complex128), Bhat (3 complex128)

Raw array bytes are written verbatim, so a write/read cycle reproduces every
float bit-for-bit and a restart from any record continues the run exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import TwoSpeciesField, VelocityGrid, build_grid
from .mode import ModeState

__all__ = ["CheckpointWriter", "read_checkpoint", "CheckpointFile"]

MAGIC = b"VMLCK001"
_HEADER = struct.Struct("<dIdd")


class CheckpointWriter:
    """Appends mode-state records to one checkpoint file."""

    def __init__(self, path, grid: VelocityGrid, gamma: float, c_phi: float):
        self.path = path
        self.grid = grid
        self._fh = open(path, "wb")
        self._fh.write(MAGIC)
        self._fh.write(_HEADER.pack(grid.R, grid.n, gamma, c_phi))

    def append(self, state: ModeState) -> None:
        fh = self._fh
        fh.write(np.asarray(state.k, dtype="<f8").tobytes())
        fh.write(struct.pack("<d", state.t))
        fh.write(np.ascontiguousarray(state.fhat.values, dtype="<c16").tobytes())
        fh.write(np.asarray(state.Ehat, dtype="<c16").tobytes())
        fh.write(np.asarray(state.Bhat, dtype="<c16").tobytes())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


@dataclass
class CheckpointFile:
    """Parsed checkpoint: grid parameters and the list of stored states."""

    R: float
    n: int
    gamma: float
    c_phi: float
    states: list


def read_checkpoint(path, grid: VelocityGrid | None = None) -> CheckpointFile:
    """Read every record; builds (or validates) the grid from the header."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        R, n, gamma, c_phi = _HEADER.unpack(fh.read(_HEADER.size))
        if grid is None:
            grid = build_grid(R, n)
        elif grid.n != n or grid.R != R:
            raise ValueError(f"{path}: grid mismatch (file has R={R}, n={n})")
        n3 = n ** 3
        rec_bytes = 3 * 8 + 8 + (2 * n3 + 6) * 16
        states = []
        while True:
            blob = fh.read(rec_bytes)
            if not blob:
                break
            if len(blob) != rec_bytes:
                raise ValueError(f"{path}: truncated record")
            k = np.frombuffer(blob, dtype="<f8", count=3, offset=0).copy()
            (t,) = struct.unpack_from("<d", blob, 24)
            fvals = np.frombuffer(blob, dtype="<c16", count=2 * n3, offset=32)
            off = 32 + 2 * n3 * 16
            E = np.frombuffer(blob, dtype="<c16", count=3, offset=off).copy()
            B = np.frombuffer(blob, dtype="<c16", count=3, offset=off + 48).copy()
            f = TwoSpeciesField(fvals.reshape(2, n3).copy(), grid)
            states.append(ModeState(k, f, E, B, t))
    return CheckpointFile(R=R, n=n, gamma=gamma, c_phi=c_phi, states=states)
