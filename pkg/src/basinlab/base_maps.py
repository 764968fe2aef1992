"""Piecewise expanding Markov interval maps with exact symbolic orbits.

Two full-branch maps ship as built-ins: the doubling map, and the symmetric
tent map presented as the driving system for logistic-coordinate fibres
(the tent map is smoothly conjugate to the full logistic map, and the fibre
coupling reads the logistic coordinate through the `drive` field).

Long base orbits are never produced by repeated floating-point evaluation.
The float doubling map collapses onto 0 after about 53 steps because every
step discards one bit; instead, orbits are represented symbolically as
itineraries (branch index sequences) that can be extended lazily, and the
numeric value of the current point is recovered from the digits when needed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import streams


class DigitBudgetError(Exception):
    """A symbolic orbit ran out of digits and has no way to extend them."""


class InadmissibleWordError(ValueError):
    """An itinerary word is not allowed by the transition structure."""


# ---------------------------------------------------------------------------
# map type and built-ins
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkovBaseMap:
    """A piecewise expanding, piecewise monotone Markov map of an interval.

    branch_maps, branch_inverses and branch_derivs are per-branch callables
    that accept scalars or numpy arrays. `transition[i, j]` says whether the
    image of partition interval i covers partition interval j. `drive` maps
    the base coordinate to the coordinate the fibre family actually sees
    (identity for the doubling map, the tent-to-logistic conjugacy for the
    tent map). `acip_sampler(key, start, count)` draws from the invariant
    measure equivalent to Lebesgue, in the base coordinate.
    """

    name: str
    domain: tuple
    cuts: tuple
    branch_maps: tuple
    branch_inverses: tuple
    branch_derivs: tuple
    branch_increasing: tuple
    transition: np.ndarray = field(repr=False)
    drive: object = field(repr=False)
    acip_sampler: object = field(repr=False)
    min_slope: float = 2.0

    @property
    def n_branches(self):
        return len(self.branch_maps)


def make_doubling():
    """The doubling map on [0, 1]: two full increasing branches, slope 2,
    Lebesgue invariant. The fibre drive coordinate is the point itself."""
    return MarkovBaseMap(
        name="doubling",
        domain=(0.0, 1.0),
        cuts=(0.0, 0.5, 1.0),
        branch_maps=(lambda w: 2.0 * w, lambda w: 2.0 * w - 1.0),
        branch_inverses=(lambda y: 0.5 * y, lambda y: 0.5 * (y + 1.0)),
        branch_derivs=(lambda w: np.full_like(np.asarray(w, float), 2.0),
                       lambda w: np.full_like(np.asarray(w, float), 2.0)),
        branch_increasing=(True, True),
        transition=np.ones((2, 2), dtype=bool),
        drive=lambda w: w,
        acip_sampler=streams.uniform_block,
        min_slope=2.0,
    )


def make_tent_logistic_conjugate():
    """The full symmetric tent map on [0, 1], with the fibre drive given by
    the conjugacy w -> sin^2(pi w / 2) onto the logistic coordinate.

    Lebesgue measure is invariant for the tent map, and its pushforward
    through the conjugacy is the arcsine law, which is the invariant density
    of the full logistic map. Sampling the drive coordinate therefore means
    sampling U uniform and returning sin^2(pi U / 2).
    """
    return MarkovBaseMap(
        name="tent-logistic",
        domain=(0.0, 1.0),
        cuts=(0.0, 0.5, 1.0),
        branch_maps=(lambda w: 2.0 * w, lambda w: 2.0 - 2.0 * w),
        branch_inverses=(lambda y: 0.5 * y, lambda y: 1.0 - 0.5 * y),
        branch_derivs=(lambda w: np.full_like(np.asarray(w, float), 2.0),
                       lambda w: np.full_like(np.asarray(w, float), 2.0)),
        branch_increasing=(True, False),
        transition=np.ones((2, 2), dtype=bool),
        drive=lambda w: np.sin(0.5 * np.pi * np.asarray(w, float)) ** 2,
        acip_sampler=streams.uniform_block,
        min_slope=2.0,
    )


BUILTIN_BASES = {
    "doubling": make_doubling,
    "tent": make_tent_logistic_conjugate,
}


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------

def branch_index(base, w):
    """Branch containing w, boundaries resolved to the right-hand branch."""
    cuts = np.asarray(base.cuts)
    idx = np.searchsorted(cuts, np.asarray(w, float), side="right") - 1
    return np.clip(idx, 0, base.n_branches - 1)


def eval_map(base, w):
    """S(w). Scalar or array. Raises on points outside the domain."""
    w_arr = np.asarray(w, dtype=float)
    lo, hi = base.domain
    if np.any(w_arr < lo) or np.any(w_arr > hi):
        raise ValueError("point outside the base interval [%g, %g]" % (lo, hi))
    idx = branch_index(base, w_arr)
    out = np.empty_like(w_arr)
    for i, bmap in enumerate(base.branch_maps):
        mask = idx == i
        if np.any(mask):
            out[mask] = bmap(w_arr[mask])
    return out if out.ndim else float(out)


def base_deriv(base, w):
    """|S'(w)| with the same boundary convention as eval_map."""
    w_arr = np.asarray(w, dtype=float)
    idx = branch_index(base, w_arr)
    out = np.empty_like(w_arr)
    for i, dfun in enumerate(base.branch_derivs):
        mask = idx == i
        if np.any(mask):
            out[mask] = dfun(w_arr[mask])
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# symbolic points
# ---------------------------------------------------------------------------

class _Tape:
    # grow-only digit buffer shared by a SymbolicPoint and everything
    # derived from it by shifting
    __slots__ = ("digits", "count", "extend")

    def __init__(self, digits, extend):
        arr = np.asarray(digits, dtype=np.uint8).ravel()
        self.digits = arr.copy()
        self.count = arr.size
        self.extend = extend

    def ensure(self, n):
        if n <= self.count:
            return
        if self.extend is None:
            raise DigitBudgetError(
                "need %d digits but only %d are realized and the point "
                "has no extension rule" % (n, self.count))
        while self.count < n:
            fresh = np.asarray(self.extend(self.count, n - self.count),
                               dtype=np.uint8).ravel()
            if fresh.size == 0:
                raise DigitBudgetError("extension rule returned no digits")
            self.digits = np.concatenate([self.digits, fresh])
            self.count = self.digits.size


class SymbolicPoint:
    """A base-interval point carried as its itinerary of branch indices.

    The digit sequence is lazily extendable (an extension rule supplies
    fresh digits on demand, typically from a named random stream). Shifting
    is O(1): derived points share the underlying tape.
    """

    __slots__ = ("base", "_tape", "_pos")

    def __init__(self, base, digits, extend=None, _tape=None, _pos=0):
        self.base = base
        self._tape = _Tape(digits, extend) if _tape is None else _tape
        self._pos = _pos

    @property
    def budget(self):
        """Number of digits currently realized for this point."""
        return self._tape.count - self._pos

    def digit(self, k):
        """k-th digit (branch index) of the itinerary, extending if needed."""
        self._tape.ensure(self._pos + k + 1)
        return int(self._tape.digits[self._pos + k])

    def digit_block(self, k):
        """Digits 0..k-1 as a uint8 array (a view; do not mutate)."""
        self._tape.ensure(self._pos + k)
        return self._tape.digits[self._pos:self._pos + k]

    def shifted(self, n=1):
        return SymbolicPoint(self.base, None, _tape=self._tape,
                             _pos=self._pos + n)


def symbolic_step(p):
    """Drop the leading digit: the symbolic form of applying the base map."""
    return p.shifted(1)


def symbolic_embed(p, k):
    """Left endpoint of the depth-k cylinder of p's itinerary.

    Computed by propagating the whole interval through the inverse branches
    of the word, so it is exact for dyadic arithmetic (doubling) and correct
    for orientation-reversing branches (tent).
    """
    word = p.digit_block(k)
    return _cylinder(p.base, word)[0]


def _cylinder(base, word):
    lo, hi = base.domain
    for b in reversed(np.asarray(word, dtype=int)):
        inv = base.branch_inverses[b]
        a, c = inv(lo), inv(hi)
        if not base.branch_increasing[b]:
            a, c = c, a
        lo, hi = a, c
    return lo, hi


def random_symbolic(base, key, index=0, chunk=64):
    """SymbolicPoint whose itinerary digits come from the named stream
    (key, index). Digit t is bit (t mod 64) of word t//64, most significant
    bit first, which is exactly the convention of the batch orbit engine.

    For both built-in maps, iid fair itinerary digits realize a point
    distributed by the invariant measure (Lebesgue in the base coordinate).
    """
    def extend(have, need):
        j0 = have >> 6
        j1 = (have + max(need, chunk) + 63) >> 6
        cols = [streams.words(key, np.uint64(index), j) for j in range(j0, j1)]
        w = np.asarray(cols, dtype=">u8")
        bits = np.unpackbits(w.view(np.uint8))
        return bits[have - (j0 << 6):]

    return SymbolicPoint(base, np.empty(0, dtype=np.uint8), extend=extend)


def tent_itinerary_to_raw_bits(digits):
    """Convert a tent itinerary to the binary-expansion bits of the point.

    For the tent map the branch sequence is not the binary expansion: each
    pass through the decreasing branch complements all later expansion
    digits. Tracking the cumulative complement parity undoes that:
    raw_k = itin_k xor parity_k with parity_{k+1} = parity_k xor itin_k.
    (Doubling itineraries need no conversion; they are binary expansions.)
    """
    d = np.asarray(digits, dtype=np.uint8)
    parity = np.bitwise_xor.accumulate(d) ^ d  # parity before each digit
    return d ^ parity


def periodic_point(base, itinerary):
    """The unique point with S^p(w) = w realizing the given itinerary word.

    Found by iterating the composition of inverse branches along the word,
    which contracts by at least min_slope^-p per round; iteration stops when
    successive iterates differ by at most 1e-12 (at most 200 rounds).
    """
    word = [int(b) for b in itinerary]
    if len(word) == 0:
        raise InadmissibleWordError("empty itinerary word")
    for b in word:
        if not 0 <= b < base.n_branches:
            raise InadmissibleWordError("branch index %d out of range" % b)
    for a, b in zip(word, word[1:] + word[:1]):
        if not base.transition[a, b]:
            raise InadmissibleWordError(
                "transition %d -> %d not allowed" % (a, b))
    x = 0.5 * (base.domain[0] + base.domain[1])
    for _ in range(200):
        y = x
        for b in reversed(word):
            y = base.branch_inverses[b](y)
        if abs(y - x) <= 1e-12:
            return y
        x = y
    return x
