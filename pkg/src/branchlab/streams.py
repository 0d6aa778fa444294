"""Counter-based random streams keyed by (master seed, particle label, kind).

Every draw is a pure function of its key and an integer counter, so a
particle's randomness does not depend on how many other particles or
replications are simulated alongside it. The mixing function is the
SplitMix64 finalizer; a stream with key ``k`` yields
``mix(k + (counter + 1) * GOLDEN)``.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from branchlab.genealogy import Label

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_TWO53_INV = 1.0 / 9007199254740992.0

KINDS = {"brownian": 1, "poisson": 2, "mark": 3, "action": 4, "clock": 5}

# per candidate event the mark stream hands out a block of this many values:
# slot 0 is the uniform mark, the rest feed randomized policies at the event
MARK_BLOCK = 16
ACTION_BLOCK = 16


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u64(value: int) -> np.ndarray:
    return np.array([int(value) % (1 << 64)], dtype=np.uint64)


def label_hash(path: Iterable[int]) -> int:
    h = mix64(_u64(0x5A17))
    for i in path:
        h = child_hash(h, i)
    return int(h[0])


def child_hash(parent_hash, index) -> np.ndarray:
    """Hash of ``parent·index`` from the parent's hash; vectorised over both arguments."""
    parent = np.asarray(parent_hash, dtype=np.uint64)
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(mix64(parent) + (idx + np.uint64(1)) * GOLDEN)


def stream_key(master_seed, lhash, kind: str | int) -> np.ndarray:
    """Vectorised key derivation: master seeds and label hashes broadcast together."""
    code = KINDS[kind] if isinstance(kind, str) else int(kind)
    seed = np.asarray(master_seed, dtype=np.uint64)
    lh = np.asarray(lhash, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = mix64(seed * GOLDEN + np.uint64(0x1234567))
        k = mix64(k ^ lh)
        return mix64(k + np.uint64(code) * _M2)


def replication_seed(seed: int, index) -> np.ndarray:
    """Master seed of replication ``index`` within an experiment seeded by ``seed``."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = mix64(_u64(seed) + GOLDEN)
        return mix64(base ^ mix64(idx * _M1 + np.uint64(7)))


def raw_bits(key, counter) -> np.ndarray:
    k = np.asarray(key, dtype=np.uint64)
    c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(k + (c + np.uint64(1)) * GOLDEN)


def uniform(key, counter) -> np.ndarray:
    """Uniform on (0, 1]; never returns exactly zero so ``-log`` is safe."""
    bits = raw_bits(key, counter) >> _S11
    return (bits.astype(np.float64) + 1.0) * _TWO53_INV


def normal(key, counter) -> np.ndarray:
    """Standard normal draw via Box-Muller on counters ``2c`` and ``2c + 1``."""
    c = np.asarray(counter, dtype=np.uint64) * np.uint64(2)
    u1 = uniform(key, c)
    u2 = uniform(key, c + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class CounterStream:
    """Random stream of one particle for one purpose.

    Draws are addressed by counter; ``next_*`` methods walk the counter
    sequentially from zero for callers that want an iterator-like stream.
    """

    def __init__(self, key: int):
        self.key = np.uint64(key)
        self._pos = 0

    def uniform(self, counter) -> np.ndarray:
        return uniform(self.key, counter)

    def normal(self, counter) -> np.ndarray:
        return normal(self.key, counter)

    def next_uniform(self, size: int = 1) -> np.ndarray:
        out = uniform(self.key, np.arange(self._pos, self._pos + size, dtype=np.uint64))
        self._pos += size
        return out

    def next_normal(self, size: int = 1) -> np.ndarray:
        out = normal(self.key, np.arange(self._pos, self._pos + size, dtype=np.uint64))
        self._pos += size
        return out


def label_stream(master_seed: int, label: Label, kind: str) -> CounterStream:
    if kind not in KINDS:
        raise ValueError(f"unknown stream kind {kind!r}; expected one of {sorted(KINDS)}")
    key = stream_key(_u64(master_seed), _u64(label_hash(label.path)), kind)
    return CounterStream(int(key[0]))
