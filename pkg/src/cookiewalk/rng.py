"""Counter-based, splittable uniform streams.

Every stream is a SplitMix64 sequence whose starting key is derived from
``(master_seed, stream_id)``.  The i-th uniform of a stream is a pure function
of ``(key, i)``, so any replica can be regenerated without replaying the
others.  The same arithmetic is compiled into the numba kernels
(see ``_kernels``); the two implementations are tested against each other.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM_SALT = 0xD1B54A32D192ED03
ENV_SALT = 0x8CB92BA72F3D8DD7
PHASE_SALT = 0xA0761D6478BD642F
INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (wraps to 64 bits)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(master_seed: int, stream_id: int) -> int:
    return mix64(mix64(master_seed) ^ mix64((stream_id * STREAM_SALT + GOLDEN) & MASK64))


def site_hash(seed: int, site: int, salt: int = ENV_SALT) -> int:
    """Keyed hash of a lattice site; negative sites wrap as two's complement."""
    return mix64(mix64(seed ^ salt) ^ ((site & MASK64) * GOLDEN & MASK64))


def to_unit(z: int) -> float:
    return (z >> 11) * INV_2_53


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


class RngStream:
    """One reproducible stream of uniforms on [0, 1).

    ``counter`` is the number of uniforms already drawn; it lets callers check
    how many draws an operation consumed.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        if not (0 <= master_seed <= MASK64 and 0 <= stream_id <= MASK64):
            raise ValueError("master_seed and stream_id must be unsigned 64-bit integers")
        self.master_seed = master_seed
        self.stream_id = stream_id
        self.key = stream_key(master_seed, stream_id)
        self.counter = 0

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id}, counter={self.counter})"

    def uniform(self) -> float:
        self.counter += 1
        return to_unit(mix64(self.key + self.counter * GOLDEN))

    def uniforms(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + idx * np.uint64(GOLDEN)
        self.counter += n
        return (_mix64_array(z) >> np.uint64(11)).astype(np.float64) * INV_2_53

    def split(self, stream_id: int) -> "RngStream":
        """Independent sibling stream under the same master seed."""
        return RngStream(self.master_seed, stream_id)


def replica_keys(master_seed: int, n: int, first: int = 0) -> np.ndarray:
    """Stream keys for replicas ``first .. first+n-1`` as uint64."""
    ids = np.arange(first, first + n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix64_array(ids * np.uint64(STREAM_SALT) + np.uint64(GOLDEN))
        z ^= np.uint64(mix64(master_seed))
        return _mix64_array(z)
