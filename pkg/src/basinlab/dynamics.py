"""Skew products, invariant-graph exponents, basins, and the critical graph.

The skew product F(w, x) = (Sw, f_w(x)) couples a Markov base map to a
fibre family. The two constant endpoint graphs are invariant; their normal
Lyapunov exponents against ergodic base measures decide the basin
structure. The critical graph phi_c is the fibre-wise boundary between the
two basins, computed pointwise by bisection with the basin classifier as
oracle; nothing here assumes it is continuous.
"""

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import streams
from .base_maps import periodic_point, symbolic_embed
from .fibre_families import validate_family
from . import orbits


class UndecidedBracketError(Exception):
    """Bisection oracle stayed undecided after the one budget increase."""

    def __init__(self, lo, hi, mid):
        super().__init__("classifier undecided at x=%r (bracket [%r, %r])"
                         % (mid, lo, hi))
        self.bracket = (lo, hi)
        self.mid = mid


class BasinLabel(enum.IntEnum):
    MINUS = -1
    UNDECIDED = 0
    PLUS = 1


# classifier defaults; decided labels are empirically invariant under
# enlarging any of these budgets
DELTA_ATTRACT = 1e-8
K_CONFIRM = 25
N_MAX = 100000
BISECT_TOL = 1e-10


class SkewProduct:
    """F(w, x) = (Sw, f_w(x)); the fibre family is validated on entry."""

    def __init__(self, base, fibres):
        report = validate_family(fibres)
        if not report.ok:
            raise ValueError("fibre family rejected: violated invariant(s) "
                             "%s; %s" % (",".join(report.failures), report))
        self.base = base
        self.fibres = fibres
        self.validation = report


@dataclass(frozen=True)
class MeasureSpec:
    """An ergodic base measure: the acip, or a periodic orbit of S."""

    kind: str
    orbit: tuple = None
    word: tuple = None


def acip_measure():
    return MeasureSpec(kind="acip")


def periodic_measure(base, word):
    """Measure equidistributed on the periodic orbit with the given itinerary."""
    w0 = periodic_point(base, word)
    orbit = [w0]
    w = w0
    from .base_maps import eval_map
    for _ in range(len(word) - 1):
        w = eval_map(base, w)
        orbit.append(w)
    residual = abs(eval_map(base, orbit[-1]) - w0)
    if residual > 1e-10:
        raise ValueError("orbit does not close up: |S^p(w) - w| = %g" % residual)
    return MeasureSpec(kind="periodic", orbit=tuple(orbit), word=tuple(word))


def iterate(F, omega, x, n):
    """F^n(omega, x) with the base advanced symbolically.

    x follows the fibre maps with no artificial clamping; it stays in J
    because J is invariant.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    x = float(x)
    p = omega
    for _ in range(n):
        w = symbolic_embed(p, 53)
        x = float(F.fibres.eval(F.base.drive(w), x))
        p = p.shifted(1)
    return p, x


def _side_index(side):
    if side in ("minus", "-", 0):
        return 0
    if side in ("plus", "+", 1):
        return 1
    raise ValueError("side must be 'minus' or 'plus', got %r" % (side,))


def lyapunov_graph(F, nu, side, n_samples=100000, key=None):
    """Normal Lyapunov exponent of an endpoint graph against nu.

    Returns (value, standard_error). Periodic measures give the exact
    orbit average (zero error); the acip is integrated by Monte Carlo over
    the base map's stationary sampler.
    """
    i = _side_index(side)
    if nu.kind == "periodic":
        g = F.fibres.log_deriv_at_endpoints(F.base.drive(np.asarray(nu.orbit)))[i]
        return float(np.mean(g)), 0.0
    if key is None:
        key = streams.derive_key(0, "lyapunov", side)
    w = F.base.acip_sampler(key, 0, n_samples)
    g = F.fibres.log_deriv_at_endpoints(F.base.drive(w))[i]
    return float(np.mean(g)), float(np.std(g) / np.sqrt(n_samples))


def base_expansion_average(F, nu, n_samples=100000, key=None):
    """Integral of log|S'| against nu, same conventions as lyapunov_graph."""
    from .base_maps import base_deriv
    if nu.kind == "periodic":
        vals = np.log(np.abs(base_deriv(F.base, np.asarray(nu.orbit))))
        return float(np.mean(vals)), 0.0
    if key is None:
        key = streams.derive_key(0, "base-expansion")
    w = F.base.acip_sampler(key, 0, n_samples)
    vals = np.log(np.abs(base_deriv(F.base, w)))
    return float(np.mean(vals)), float(np.std(vals) / np.sqrt(n_samples))


@dataclass
class ExponentRow:
    measure: str
    side: str
    value: float
    se: float


@dataclass
class Hypothesis2Report:
    rows: list
    acip_negative: dict
    witness_positive: dict
    sum_rows: list

    @property
    def passed(self):
        return (self.acip_negative["minus"] and self.acip_negative["plus"]
                and self.witness_positive["minus"]
                and self.witness_positive["plus"])

    def __str__(self):
        lines = ["%-12s %-5s %+.6f +- %.6f" % (r.measure, r.side, r.value, r.se)
                 for r in self.rows]
        lines.append("acip negative: %r, positive witnesses: %r"
                     % (self.acip_negative, self.witness_positive))
        return "\n".join(lines)


def check_hypothesis2(F, measures, n_samples=100000, key=None):
    """Sign conditions on the endpoint exponents.

    measures: list of (name, MeasureSpec); must include the acip. The four
    conditions: both acip exponents negative (2 sigma below zero), and for
    each side some non-acip measure with a positive exponent. Also reports
    the per-measure exponent sums, which must all be negative.
    """
    if key is None:
        key = streams.derive_key(0, "hypothesis2")
    rows = []
    acip_negative = {"minus": False, "plus": False}
    witness_positive = {"minus": False, "plus": False}
    sum_rows = []
    for name, nu in measures:
        pair = {}
        for side in ("minus", "plus"):
            v, se = lyapunov_graph(F, nu, side, n_samples,
                                   streams.derive_key(int(key), name, side)
                                   if nu.kind == "acip" else None)
            rows.append(ExponentRow(name, side, v, se))
            pair[side] = (v, se)
            if nu.kind == "acip" and v + 2 * se < 0:
                acip_negative[side] = True
            if nu.kind != "acip" and v - 2 * se > 0:
                witness_positive[side] = True
        s = pair["minus"][0] + pair["plus"][0]
        s_se = np.hypot(pair["minus"][1], pair["plus"][1])
        sum_rows.append((name, s, bool(s + 2 * s_se < 0)))
    return Hypothesis2Report(rows, acip_negative, witness_positive, sum_rows)


def classify_basin(F, omega, x, delta_attract=DELTA_ATTRACT,
                   k_confirm=K_CONFIRM, n_max=N_MAX):
    """Basin label of a single point (omega symbolic, x on the fibre)."""
    batch = orbits.symbolic_batch(F.base, omega)
    lab = orbits.classify_batch(batch, F.fibres, x, delta_attract, k_confirm,
                                n_max)
    return BasinLabel(int(lab[0]))


def critical_graph(F, omega, tol=BISECT_TOL, delta_attract=DELTA_ATTRACT,
                   k_confirm=K_CONFIRM, n_max=N_MAX):
    """phi_c(omega): bisection between the endpoint basins.

    The lower bracket point is always labelled Minus and the upper Plus
    (the endpoints themselves trivially so). One undecided oracle answer
    raises the step budget tenfold; a second one is an error carrying the
    bracket.
    """
    e_lo, e_hi = F.fibres.interval
    lo, hi = e_lo, e_hi
    budget = n_max
    boosted = False
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        batch = orbits.symbolic_batch(F.base, omega)
        lab = int(orbits.classify_batch(batch, F.fibres, mid, delta_attract,
                                        k_confirm, budget)[0])
        if lab == orbits.UNDECIDED:
            if boosted:
                raise UndecidedBracketError(lo, hi, mid)
            boosted = True
            budget = 10 * budget
            continue
        if lab == orbits.MINUS:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def run_chunked(fn, n, chunk=8192):
    """fn(start, stop) over a fixed chunk grid, merged in index order.

    Worker count comes from the environment (streams.thread_count); the
    chunk boundaries never depend on it, so results are identical for any
    thread count.
    """
    spans = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    workers = streams.thread_count()
    if workers <= 1 or len(spans) <= 1:
        return [fn(s, e) for s, e in spans]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda se: fn(se[0], se[1]), spans))


def phi_c_samples(F, n_samples, key, tol=BISECT_TOL,
                  delta_attract=DELTA_ATTRACT, k_confirm=K_CONFIRM,
                  n_max=N_MAX, chunk=8192):
    """phi_c at n_samples acip-random base points; returns (values, dropped)."""
    def work(s, e):
        idx = np.arange(s, e)
        return orbits.critical_graph_batch(
            lambda: orbits.stream_batch(F.base, key, idx), F.fibres,
            x_tol=tol, delta=delta_attract, k_confirm=k_confirm, n_max=n_max)

    parts = run_chunked(work, n_samples, chunk)
    phi = np.concatenate([p for p, _ in parts])
    dropped = np.concatenate([d for _, d in parts])
    return phi, dropped


def phi_c_on_grid(F, omegas, key=None, tol=BISECT_TOL,
                  delta_attract=DELTA_ATTRACT, k_confirm=K_CONFIRM,
                  n_max=N_MAX, chunk=8192):
    """phi_c above prescribed base points, windows continued pseudorandomly.

    Returns (values, dropped) aligned with omegas.
    """
    omegas = np.asarray(omegas, dtype=float)
    if key is None:
        key = streams.derive_key(0, "phi-grid")

    def work(s, e):
        idx = np.arange(s, e)
        return orbits.critical_graph_batch(
            lambda: orbits.float_batch(F.base, omegas[s:e], key, idx),
            F.fibres, x_tol=tol, delta=delta_attract, k_confirm=k_confirm,
            n_max=n_max)

    parts = run_chunked(work, omegas.size, chunk)
    phi = np.concatenate([p for p, _ in parts])
    dropped = np.concatenate([d for _, d in parts])
    return phi, dropped


@dataclass
class ProfileResult:
    side: str
    u: np.ndarray
    fraction: np.ndarray
    se: np.ndarray
    n_used: int
    n_dropped: int


def phi_profile(F, side, u_grid, n_samples, key, **classify_kwargs):
    """Mass of the critical graph within u of an endpoint, per u.

    Minus side: fraction of sampled omega with phi_c(omega) < e- + u.
    Plus side: fraction with phi_c(omega) > e+ - u. Binomial standard
    errors; dropped (undecided-bracket) samples are excluded and counted.
    """
    i = _side_index(side)
    u = np.asarray(u_grid, dtype=float)
    if np.any(u <= 0) or np.any(np.diff(u) <= 0):
        raise ValueError("u_grid must be positive and increasing")
    phi, dropped = phi_c_samples(F, n_samples, key, **classify_kwargs)
    good = phi[~dropped]
    n = good.size
    e_lo, e_hi = F.fibres.interval
    if i == 0:
        counts = np.array([(good < e_lo + uu).sum() for uu in u])
    else:
        counts = np.array([(good > e_hi - uu).sum() for uu in u])
    frac = counts / n
    se = np.sqrt(np.maximum(frac * (1 - frac), 1.0 / n)) / np.sqrt(n)
    return ProfileResult(side=("minus", "plus")[i], u=u, fraction=frac, se=se,
                         n_used=n, n_dropped=int(dropped.sum()))


def basin_grid(F, resolution_w, resolution_x, key,
               delta_attract=DELTA_ATTRACT, k_confirm=K_CONFIRM, n_max=N_MAX,
               chunk=8192):
    """Basin labels on a regular grid over I x J.

    Row r of the result holds fibre level x_r (row 0 at e-, last row at
    e+); column c holds base point w_c. Expansion tails beyond the floats'
    53 bits are drawn deterministically from the keyed stream, so the grid
    is reproducible for a fixed key.
    """
    if resolution_w < 2 or resolution_x < 2:
        raise ValueError("resolutions must be >= 2")
    e_lo, e_hi = F.fibres.interval
    wg = np.linspace(0.0, 1.0, resolution_w)
    xg = np.linspace(e_lo, e_hi, resolution_x)
    n_cells = resolution_w * resolution_x

    def work(s, e):
        cells = np.arange(s, e)
        om = wg[cells % resolution_w]
        x0 = xg[cells // resolution_w]
        batch = orbits.float_batch(F.base, om, key, cells)
        return orbits.classify_batch(batch, F.fibres, x0, delta_attract,
                                     k_confirm, n_max)

    labels = np.concatenate(run_chunked(work, n_cells, chunk))
    return labels.reshape(resolution_x, resolution_w)
