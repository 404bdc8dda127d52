"""Counter-based deterministic random streams.

Every draw is a pure function of (seed, stream, counter), so independent
workers and branch ensembles can derive their own streams and replay them
bit-for-bit without shared mutable state.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_TWO_NEG53 = 2.0 ** -53


def _mix64(z: int) -> int:
    """splitmix64 finalizer on a python int (wrapping at 64 bits)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return _fnv1a(key.encode("utf-8"))
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK
    raise TypeError(f"stream keys must be str or int, got {type(key).__name__}")


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps silently, which is exactly what we want
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """A stateful view onto the keyed counter sequence (seed, stream, counter).

    The stream key and seed never change; drawing only advances the counter.
    Two streams with distinct (seed, stream) pairs are statistically
    independent, and re-creating a stream from a saved (seed, stream, counter)
    triple reproduces the remaining sequence exactly.
    """

    __slots__ = ("seed", "stream", "counter", "_key")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK
        self.stream = int(stream) & _MASK
        self.counter = int(counter) & _MASK
        self._key = _mix64(self.seed ^ _mix64(self.stream ^ _GAMMA))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def child(self, *keys) -> "RngStream":
        """Derive an independent stream; same (seed, keys) always gives the same child."""
        s = self.stream
        for key in keys:
            s = _mix64(s ^ _mix64(_key_to_int(key)))
        return RngStream(self.seed, s)

    def state(self) -> tuple:
        return (self.seed, self.stream, self.counter)

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter = (self.counter + n) & _MASK
        return _mix64_array(np.uint64(self._key) + idx * np.uint64(_GAMMA))

    def uniform(self, shape=()) -> np.ndarray:
        """i.i.d. uniforms on [0, 1)."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._words(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        return u.reshape(shape) if shape else u[0]

    def normal(self, shape=()) -> np.ndarray:
        """i.i.d. standard normals via Box-Muller; consumes 2 words per pair."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        w = self._words(2 * pairs)
        # u1 in (0, 1] keeps the log finite; u2 in [0, 1)
        u1 = ((w[:pairs] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _TWO_NEG53
        u2 = (w[pairs:] >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """i.i.d. integers uniform on {low, ..., high-1}.

        Uses modular reduction; the bias is of order (high-low)/2**64 and far
        below anything the statistical contracts can observe.
        """
        if high <= low:
            raise ValueError("integers() requires high > low")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        span = np.uint64(high - low)
        v = (self._words(n) % span).astype(np.int64) + low
        return v.reshape(shape) if shape else int(v[0])

    def choice(self, n: int, size: int) -> np.ndarray:
        """`size` indices drawn uniformly with replacement from range(n)."""
        return self.integers(0, n, (size,))


def gaussian(rng: RngStream, shape) -> np.ndarray:
    """Standard normal tensor; advances the stream counter deterministically."""
    return rng.normal(shape)
