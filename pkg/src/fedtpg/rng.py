"""Seeded, portable random streams built on SplitMix64.

Every stochastic choice in the simulator (world synthesis, parameter init,
client sampling, batch sampling) draws from a `Stream`, a counter-based
SplitMix64 generator: output ``i`` of seed ``s`` is ``mix64(s + (i+1)*GOLDEN)``
mod 2^64.  The generator has 64 bits of state, is trivially reproducible from
its seed, and draws never depend on numpy's global RNG.  Gaussians come from
Box-Muller on pairs of 53-bit uniforms; their bit patterns are reproducible
for a fixed libm (same machine, same runs), which is what the determinism
guarantees in this package promise.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def child_seed(*parts: int | str) -> int:
    """Derive an independent 64-bit seed from a tuple of ints/strings.

    Used for per-client, per-round and per-tensor streams so that changing
    one consumer's draw count never perturbs another's.
    """
    h = _GOLDEN
    for part in parts:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                h = mix64(h ^ (b + 0x100))
        else:
            h = mix64(h ^ (int(part) & _MASK))
        h = mix64(h + _GOLDEN)
    return h


def _mix_array(s: np.ndarray) -> np.ndarray:
    z = s
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Stream:
    """Sequential view over the counter-based SplitMix64 output of one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.pos = 0

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        idx = np.arange(self.pos + 1, self.pos + n + 1, dtype=np.uint64)
        self.pos += n
        with np.errstate(over="ignore"):
            s = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
        return _mix_array(s)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) with 53 random bits each."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussians(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller."""
        pairs = (n + 1) // 2
        # u1 in (0, 1] so log is finite; u2 in [0, 1).
        u1 = ((self.u64(pairs) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = (_MASK + 1) - ((_MASK + 1) % bound)
        while True:
            v = int(self.u64(1)[0])
            if v < limit:
                return v % bound

    def shuffled(self, items: list) -> list:
        """Fisher-Yates shuffle; returns a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), in draw order (partial Fisher-Yates)."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
