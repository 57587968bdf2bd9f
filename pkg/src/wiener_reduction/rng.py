"""Counter-based Gaussian increments.

Every normal deviate is a pure function of ``(master_seed, stream, step,
path_index, component)``.  The Philox key carries the seed, the stream id and
the step index; the Philox counter addresses the path.  A block of paths can
therefore be generated by any worker, in any order, and the bytes are the same
as if the whole ensemble had been generated in one go.
"""
from __future__ import annotations

import zlib

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53

STREAMS = ("total", "reduced", "reduced-original", "reduced-girsanov", "aux")


def stream_id(name: str | int) -> int:
    """Map a stream label to a 24-bit integer."""
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFF
    return zlib.crc32(name.encode()) & 0xFFFFFF


def _words_per_path(dim: int) -> int:
    # numpy's Philox emits 4 x 64-bit words per counter increment
    return 4 * max(1, -(-dim // 4))


def normals(master_seed: int, stream: str | int, step: int, first_path: int,
            n_paths: int, dim: int) -> np.ndarray:
    """Standard normal array of shape (n_paths, dim) for one time step."""
    if dim == 0 or n_paths == 0:
        return np.zeros((n_paths, dim))
    if step < 0 or step >= 1 << 40:
        raise ValueError(f"step index out of range: {step}")
    w = _words_per_path(dim)
    # an explicit uint64 array: a list of Python ints above 2**63 would be
    # routed through float64 and lose the low (step) bits
    key = np.array([int(master_seed) & _MASK64, (stream_id(stream) << 40) | int(step)],
                   dtype=np.uint64)
    ctr = np.array([first_path * w // 4, 0, 0, 0], dtype=np.uint64)
    bg = np.random.Philox(key=key, counter=ctr)
    raw = bg.random_raw(n_paths * w).reshape(n_paths, w)[:, :dim]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


def increments(master_seed: int, stream: str | int, step: int, first_path: int,
               n_paths: int, dim: int, dt: float) -> np.ndarray:
    """Wiener increments with variance ``dt``."""
    return np.sqrt(dt) * normals(master_seed, stream, step, first_path, n_paths, dim)


def derive_seed(master_seed: int, *labels: str | int) -> int:
    """Deterministic 64-bit child seed (used to give the two sides of a
    comparison independent randomness)."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64] +
                                [stream_id(lbl) for lbl in labels])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
