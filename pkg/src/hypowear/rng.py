"""Deterministic random streams shared by every stochastic component.

The generator is fixed by construction, not configuration, so any two runs
(or two implementations in different languages) that follow this recipe
reproduce identical streams:

* Seed derivation uses the SplitMix64 output function: child i of a master
  seed is ``mix64(master + (i + 1) * GOLDEN)``, i.e. the i-th output of the
  published SplitMix64 sequence seeded with ``master``.  String labels are
  folded to integers with FNV-1a (64-bit) first.
* Bulk generation uses xoshiro256** in ``LANES`` independent lanes.  Lane
  ``l`` is seeded with SplitMix64 outputs ``4l .. 4l+3`` of the stream seed,
  and the logical output sequence interleaves lanes step-major:
  ``out[j]`` is the ``(j // LANES)``-th step of lane ``j % LANES``.
* Uniform doubles are ``((u64 >> 11) + 1) * 2**-53`` (in ``(0, 1]``).
* Normals come from Box-Muller pairs: outputs ``2k`` and ``2k+1`` are the
  cosine and sine branches of uniform pair ``(2k, 2k+1)``.
* ``permutation`` sorts uniform keys with a stable sort (ties keep index
  order); ``integers`` maps uniforms by ``floor(u * bound)`` (bias is
  negligible for bounds far below 2**53).

Streams are cheap; derive a fresh child per purpose instead of sharing one.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

# Lane count is part of the stream definition; changing it changes outputs.
LANES = 1024

_U64 = np.uint64


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def fnv1a64(label: str) -> int:
    """64-bit FNV-1a hash of a UTF-8 string."""
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def splitmix64_outputs(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of SplitMix64 seeded with ``seed`` (vectorized)."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = (_U64(seed & MASK64) + idx * _U64(GOLDEN)) & _U64(MASK64)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def derive_seed(master: int, *path: int | str) -> int:
    """Derive a child seed from a master seed and a split path.

    Path elements may be integers (e.g. subject or bootstrap-iteration
    indices) or string labels (e.g. ``"simulate"``).  The derivation is
    associative-free and order-sensitive.
    """
    s = mix64(master)
    for element in path:
        k = element if isinstance(element, int) else fnv1a64(element)
        s = mix64(s ^ mix64((k + GOLDEN) & MASK64))
    return s


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


class Stream:
    """Buffered multi-lane xoshiro256** stream (see module docstring)."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        words = splitmix64_outputs(self.seed, 4 * LANES).reshape(LANES, 4)
        self._s0 = words[:, 0].copy()
        self._s1 = words[:, 1].copy()
        self._s2 = words[:, 2].copy()
        self._s3 = words[:, 3].copy()
        self._buffer = np.empty(0, dtype=np.uint64)

    def _steps(self, n_steps: int) -> np.ndarray:
        out = np.empty((n_steps, LANES), dtype=np.uint64)
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        for i in range(n_steps):
            out[i] = _rotl(s1 * _U64(5), 7) * _U64(9)
            t = s1 << _U64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return out.reshape(-1)

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        if n < 0:
            raise ValueError("n must be non-negative")
        take_buf = min(n, self._buffer.size)
        head = self._buffer[:take_buf]
        self._buffer = self._buffer[take_buf:]
        missing = n - take_buf
        if missing == 0:
            return head.copy()
        n_steps = -(-missing // LANES)
        fresh = self._steps(n_steps)
        out = np.concatenate([head, fresh[:missing]])
        self._buffer = fresh[missing:]
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on (0, 1]."""
        return ((self.u64(n) >> _U64(11)) + _U64(1)).astype(np.float64) * 2.0**-53

    def normal(self, n: int, mean: float = 0.0, sd: float = 1.0) -> np.ndarray:
        """``n`` Gaussian draws via Box-Muller."""
        m = -(-n // 2)
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return mean + sd * z[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """``n`` integers uniform on [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of range(n) by stable argsort of uniform keys."""
        return np.argsort(self.uniform(n), kind="stable")

    def bernoulli(self, p: np.ndarray | float, n: int | None = None) -> np.ndarray:
        """Boolean draws with per-element success probability ``p``."""
        p_arr = np.asarray(p, dtype=np.float64)
        size = p_arr.size if n is None else n
        return self.uniform(size) < p_arr.reshape(-1)

    def poisson(self, lam: float) -> int:
        """One Poisson draw by inversion (one uniform consumed)."""
        if lam < 0:
            raise ValueError("lam must be non-negative")
        if lam == 0:
            return 0
        u = float(self.uniform(1)[0])
        k = 0
        p = math.exp(-lam)
        cdf = p
        while u > cdf and k < 10_000:
            k += 1
            p *= lam / k
            cdf += p
        return k
