"""Vectorized batches of base orbits tracked through expansion windows.

Every base orbit is followed through a sliding 64-bit window of the binary
expansion of its current point: after k steps W holds expansion bits
k..k+63, most significant first, so the float value of the point is
W * 2**-64 and the per-step truncation error is one part in 2**64. The
doubling map is a pure left shift that pulls one fresh expansion bit in
from the right. The tent map folds: when the leading bit is 1 the image's
expansion is the bitwise complement of the shifted window, and every raw
bit supplied later must be complemented too. The complement state is a
single parity bit per orbit, flipped each time the folding branch is
taken, and the XOR with an all-ones mask applies the fold to the whole
window at once.

Raw expansion bits come from a tail callable so the same machinery serves
stream-generated points (replayable Monte-Carlo sampling), float starting
points (grid scans) and symbolic points (digitwise-exact single orbits).
"""

import numpy as np

from . import streams
from .base_maps import tent_itinerary_to_raw_bits

MINUS = np.int8(-1)
PLUS = np.int8(1)
UNDECIDED = np.int8(0)

_U64 = np.uint64
_WINDOW_SCALE = 2.0 ** -64


class DriveBatch:
    """Base orbits advanced in lockstep.

    tail(j, positions) must return raw expansion word j (bits 64j..64j+63
    of the original points, MSB first) for the given original sample
    positions. compact() drops finished rows but keeps the position
    bookkeeping so tail lookups stay aligned.
    """

    __slots__ = ("base", "W", "parity", "t", "positions", "_tail", "_cache",
                 "_folding")

    def __init__(self, base, windows, tail):
        self.base = base
        self.W = np.array(windows, dtype=np.uint64, copy=True).reshape(-1)
        self.parity = np.zeros(self.W.shape, dtype=np.uint64)
        self.t = 0
        self.positions = np.arange(self.W.size)
        self._tail = tail
        self._cache = None
        self._folding = not all(base.branch_increasing)

    def __len__(self):
        return self.W.size

    def omega(self):
        return self.W.astype(np.float64) * _WINDOW_SCALE

    def drive(self):
        return self.base.drive(self.omega())

    def advance(self):
        j, r = divmod(self.t, 64)
        if r == 0:
            self._cache = self._tail(j + 1, self.positions)
        bit = (self._cache >> _U64(63 - r)) & _U64(1)
        if self._folding:
            b = self.W >> _U64(63)
            self.W = ((self.W << _U64(1)) | (bit ^ self.parity)) ^ (_U64(0) - b)
            self.parity = self.parity ^ b
        else:
            self.W = (self.W << _U64(1)) | bit
        self.t += 1

    def compact(self, keep):
        self.W = self.W[keep]
        self.parity = self.parity[keep]
        self.positions = self.positions[keep]
        if self._cache is not None:
            self._cache = self._cache[keep]


def stream_batch(base, key, indices):
    """Orbits of acip-distributed random points, replayable from (key, index)."""
    indices = np.asarray(indices, dtype=np.uint64).reshape(-1)

    def tail(j, sel):
        return streams.words(key, indices[sel], j)

    return DriveBatch(base, streams.words(key, indices, 0), tail)


def float_batch(base, omega, key, indices):
    """Orbits starting at prescribed float base points.

    The float fixes the leading 53 expansion bits; the continuation is
    pseudorandom from the keyed stream, so the orbit is that of a typical
    point within 2**-53 of the request, and replays are exact.
    """
    om = np.clip(np.asarray(omega, dtype=np.float64).reshape(-1),
                 0.0, 1.0 - 2.0 ** -53)
    windows = (om * 2.0 ** 64).astype(np.uint64)
    indices = np.asarray(indices, dtype=np.uint64).reshape(-1)

    def tail(j, sel):
        return streams.words(key, indices[sel], j)

    return DriveBatch(base, windows, tail)


def symbolic_batch(base, point):
    """Single orbit reading expansion bits from a symbolic point.

    Symbolic digits are branch itineraries; for a folding base they are
    converted to expansion bits of the starting point first (running
    parity rule). Digit demand beyond the point's budget raises the
    budget error from the tape.
    """
    folding = not all(base.branch_increasing)

    def raw_bits(n):
        d = np.asarray(point.digit_block(n), dtype=np.uint8)
        return tent_itinerary_to_raw_bits(d) if folding else d

    def word(j):
        bits = raw_bits(64 * (j + 1))[64 * j:]
        return np.array([int.from_bytes(np.packbits(bits).tobytes(), "big")],
                        dtype=np.uint64)

    return DriveBatch(base, word(0), lambda j, sel: word(j))


def advanced(batch, n=1):
    for _ in range(n):
        batch.advance()
    return batch


def classify_batch(batch, fam, x0, delta=1e-8, k_confirm=25, n_max=100000):
    """Basin labels for fibre orbits started at x0 over the batch's drives.

    A row is labelled once its fibre coordinate stays strictly within
    delta of one endpoint for k_confirm consecutive steps; rows still
    unlabelled after n_max steps come back UNDECIDED. Starting exactly on
    an endpoint labels the row immediately (the endpoint graphs are
    invariant). The batch is consumed.
    """
    n = len(batch)
    e_lo, e_hi = fam.interval
    x = np.broadcast_to(np.asarray(x0, dtype=np.float64), (n,)).copy()
    labels = np.zeros(n, dtype=np.int8)
    labels[x == e_lo] = MINUS
    labels[x == e_hi] = PLUS

    alive = labels == UNDECIDED
    if not alive.all():
        batch.compact(alive)
        x = x[alive]
    pos = np.flatnonzero(alive)
    n_alive = pos.size
    cm = np.zeros(n_alive, dtype=np.int32)
    cp = np.zeros(n_alive, dtype=np.int32)

    for _ in range(n_max):
        if pos.size == 0:
            break
        x = fam.eval(batch.drive(), x)
        batch.advance()
        cm = np.where(np.abs(x - e_lo) < delta, cm + 1, 0)
        cp = np.where(np.abs(x - e_hi) < delta, cp + 1, 0)
        done_m = cm >= k_confirm
        done_p = cp >= k_confirm
        if done_m.any() or done_p.any():
            labels[pos[done_m]] = MINUS
            labels[pos[done_p]] = PLUS
            keep = ~(done_m | done_p)
            batch.compact(keep)
            pos = pos[keep]
            x = x[keep]
            cm = cm[keep]
            cp = cp[keep]
    return labels


def critical_graph_batch(make_batch, fam, x_tol=1e-10, delta=1e-8,
                         k_confirm=25, n_max=100000):
    """Bisection for the basin boundary on the fibre, one value per orbit.

    make_batch() must return a fresh DriveBatch replaying the same base
    orbits; every bisection level reruns the classifier from scratch on
    the replay. The bracket starts at the fibre endpoints (trivially
    Minus below, Plus above) and keeps the invariant lower-Minus /
    upper-Plus. An undecided oracle result gets one retry with a tenfold
    step budget; a second one drops the sample. Returns (phi_c, dropped);
    dropped entries hold nan.
    """
    first = make_batch()
    n = len(first)
    e_lo, e_hi = fam.interval
    lo = np.full(n, e_lo)
    hi = np.full(n, e_hi)
    ok = np.ones(n, dtype=bool)
    boosted = np.zeros(n, dtype=bool)
    levels = int(np.ceil(np.log2((e_hi - e_lo) / x_tol)))

    batch = first
    for level in range(levels):
        if batch is None:
            batch = make_batch()
        mid = 0.5 * (lo + hi)
        if not ok.all():
            batch.compact(ok)
        labels = np.zeros(n, dtype=np.int8)
        labels[ok] = classify_batch(batch, fam, mid[ok], delta, k_confirm,
                                    n_max)
        batch = None
        retry = ok & (labels == UNDECIDED) & ~boosted
        if retry.any():
            rb = make_batch()
            rb.compact(retry)
            labels[retry] = classify_batch(rb, fam, mid[retry], delta,
                                           k_confirm, 10 * n_max)
            boosted |= retry
        ok &= labels != UNDECIDED
        lo = np.where(labels == MINUS, mid, lo)
        hi = np.where(labels == PLUS, mid, hi)

    phi = 0.5 * (lo + hi)
    phi[~ok] = np.nan
    return phi, ~ok
