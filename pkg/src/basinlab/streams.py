"""Deterministic named random streams.

Every random draw in this package flows from a single 64-bit experiment seed
through named streams:

    key = derive_key(seed, "pipeline-name", index)

A key identifies an unbounded table of 64-bit words, addressed by
(sample index i, word column j). The table is computed on demand by a
counter-based hash (a SplitMix64-style finalizer), so any slice can be
regenerated at any time without storing state. That replayability is load
bearing: the basin bisection replays the same base-orbit digit tape dozens
of times, and parallel workers can consume disjoint index ranges while
producing output identical to a sequential run.

Keys are hashed once more per sample index before use, which keeps streams
for neighbouring indices statistically unrelated (consecutive raw counters
would otherwise share most of their bits).
"""

import hashlib
import os
import struct

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def mix64(z):
    """SplitMix64 finalizer on a uint64 array (or scalar), vectorized.

    All arithmetic is modulo 2^64 on purpose; the errstate guard silences
    numpy's scalar-overflow warning for that intended wraparound.
    """
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def derive_key(seed, *labels):
    """Fold a seed and a sequence of labels into a 64-bit stream key.

    Labels may be strings or integers. Distinct label tuples give
    independent streams; the same tuple always gives the same key.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF))
    for lab in labels:
        h.update(str(lab).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def sample_keys(key, index):
    """Per-sample subkeys for sample indices `index` (uint64 array)."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(_U64(key & 0xFFFFFFFFFFFFFFFF) + _GOLDEN * idx)


def words(key, index, column):
    """64-bit words at (sample index, word column) under the stream `key`."""
    sk = sample_keys(key, index)
    with np.errstate(over="ignore"):
        return mix64(sk + _GOLDEN * _U64(column + 1))


def uniforms(key, index, column):
    """Uniform floats in [0, 1) with 53 random bits, one per sample index."""
    return (words(key, index, column) >> _U64(11)).astype(np.float64) * 2.0**-53


def uniform_block(key, start, count, column=0):
    """Convenience: `count` uniforms for consecutive indices from `start`."""
    return uniforms(key, np.arange(start, start + count, dtype=np.uint64), column)


def thread_count():
    """Worker count for parallel sample loops, from the one environment
    variable this package reads. Results never depend on it."""
    raw = os.environ.get("BASINLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
