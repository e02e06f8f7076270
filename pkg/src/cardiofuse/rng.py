"""Counter-based deterministic random number generation.

The whole repository draws randomness from one fixed generator so that any
record, weight tensor, or shuffle can be regenerated in isolation, bit for
bit, on any platform:

* Core mixer: the SplitMix64 finalizer (Steele, Lea & Flood's constants),
  applied in pure counter mode.  The i-th raw draw of a stream with key
  ``k`` is ``mix64(k + (i + 1) * GOLDEN)`` where ``GOLDEN`` is the 64-bit
  golden-ratio constant.  There is no sequential state beyond the counter,
  so streams can be skipped, split, and generated out of order.
* Stream splitting: child keys are derived with ``mix64``-based hashes of
  the parent key and an integer or string label (strings are hashed with
  64-bit FNV-1a).  Different labels give statistically independent streams.
* Normal variates: Box-Muller on pairs of 53-bit uniforms.

All integer arithmetic is modulo 2**64.  Vectorized paths use numpy uint64
arrays, whose multiplication wraps silently; scalar paths mask explicitly.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# 2**-53; a 53-bit mantissa draw times this lands in [0, 1).
_U53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a single 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of a UTF-8 string (stable across processes)."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def root_key(seed: int) -> int:
    """Key of the root stream for a 64-bit seed."""
    return mix64((seed & _MASK) + _GOLDEN)


def child_key(key: int, label: int) -> int:
    """Key of the integer-labelled child stream of ``key``."""
    return mix64(key ^ mix64((label & _MASK) + _GOLDEN))


def named_key(key: int, name: str) -> int:
    """Key of the string-labelled child stream of ``key``."""
    return mix64(key ^ fnv1a64(name))


class Stream:
    """One counter-based stream of draws.

    A ``Stream`` owns a key and a counter.  Draw methods advance the
    counter by a documented amount, so two code paths that consume the
    same counts from the same key produce identical values.
    """

    def __init__(self, key: int, counter: int = 0):
        self.key = key & _MASK
        self.counter = counter

    def child(self, label: int) -> "Stream":
        return Stream(child_key(self.key, label))

    def named_child(self, name: str) -> "Stream":
        return Stream(named_key(self.key, name))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit draws (consumes n counter slots)."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64_array(np.uint64(self.key) + idx * np.uint64(_GOLDEN))

    def skip(self, n: int) -> None:
        """Advance the counter without generating values."""
        self.counter += n

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` uniforms in [0, 1) (consumes n slots)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53

    def uniform_range(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.uniforms(n)

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """``n`` integers uniform over {low, ..., high} inclusive."""
        span = high - low + 1
        return low + np.minimum(
            np.floor(self.uniforms(n) * span).astype(np.int64), span - 1
        )

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller.

        Consumes ``2 * ceil(n / 2)`` counter slots regardless of parity,
        so consumption is predictable for skip-based bookkeeping.
        """
        pairs = (n + 1) // 2
        raw = self.raw(2 * pairs)
        # First uniform shifted into (0, 1] so the log never sees zero.
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * _U53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    @staticmethod
    def normals_consumed(n: int) -> int:
        """Counter slots that ``normals(n)`` advances."""
        return 2 * ((n + 1) // 2)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (consumes n slots)."""
        keys = self.raw(n)
        return np.argsort(keys, kind="stable")
