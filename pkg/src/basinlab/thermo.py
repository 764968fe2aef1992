"""Weighted transfer operators on a dyadic Ulam grid and what they yield.

The pressure of a potential is the log spectral radius of a cell-transfer
matrix: cell j sends weight (fraction of j mapped onto cell i) times
exp(potential at the midpoint of j) to cell i. For the full-branch
piecewise-linear bases here the fractions are exactly 1/|S'| = 1/2 per
branch image, which realizes the convention that the zero potential
already carries the -log|S'| normalization; the lam_s coefficient then
counts log|S'| on top of that baseline. Consequences used throughout:
the zero-potential matrix is exactly column-stochastic (pressure 0), and
adding a constant c to the potential scales every entry by e^c exactly.

Everything downstream is located by bracketing and bisection only: the
tail exponents t_*(+/-) as positive zeros of one-parameter pressures, the
root curve h(u) in the lam_s direction, its maximizer u_* by golden
section, and the dimension zero of the critical-graph potential.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .base_maps import base_deriv, branch_index


class PowerIterationError(Exception):
    pass


class NoPositiveZero(Exception):
    pass


class NegativeSlopeViolation(Exception):
    pass


class NoZeroInRange(Exception):
    pass


PRESSURE_TOL = 1e-12
ROOT_TOL = 1e-8
MAX_CELLS = 2 ** 20


@dataclass(frozen=True)
class Potential:
    """Coefficients of the running potential, plus an optional extra term."""

    lam_minus: float = 0.0
    lam_plus: float = 0.0
    lam_s: float = 0.0
    extra: object = None

    def values(self, base, fam, w):
        w = np.asarray(w, dtype=float)
        gm, gp = fam.log_deriv_at_endpoints(base.drive(w))
        out = (self.lam_minus * gm + self.lam_plus * gp
               + self.lam_s * np.log(np.abs(base_deriv(base, w))))
        if self.extra is not None:
            out = out + self.extra(w)
        return out


@dataclass
class UlamOperator:
    k: int
    matrix: object
    midpoints: np.ndarray


def build_ulam(base, fam, pot, k):
    """Weighted cell-transfer matrix on the generation-k dyadic refinement.

    Full branches of constant slope 2 send each cell onto exactly two
    image cells with fraction 1/2 each; the image cells are computed from
    the branch maps on the (exactly representable) dyadic cell edges.
    """
    n = 2 ** k
    if n > MAX_CELLS:
        raise ValueError("resolution overflow: 2^%d cells exceeds the "
                         "%d-cell budget" % (k, MAX_CELLS))
    edges = np.arange(n + 1) / n
    mids = (np.arange(n) + 0.5) / n
    b = branch_index(base, mids)
    lo_img = np.empty(n)
    for bi, bmap in enumerate(base.branch_maps):
        sel = b == bi
        if not sel.any():
            continue
        y0 = bmap(edges[:-1][sel])
        y1 = bmap(edges[1:][sel])
        lo_img[sel] = np.minimum(y0, y1)
    row0 = np.rint(lo_img * n).astype(np.int64)

    vals = 0.5 * np.exp(pot.values(base, fam, mids))
    data = np.repeat(vals, 2)
    indices = np.empty(2 * n, dtype=np.int64)
    indices[0::2] = row0
    indices[1::2] = row0 + 1
    indptr = np.arange(0, 2 * n + 2, 2, dtype=np.int64)
    mat = sparse.csc_matrix((data, indices, indptr), shape=(n, n))
    return UlamOperator(k=k, matrix=mat, midpoints=mids)


def _log_spectral_radius(mat, tol=PRESSURE_TOL, max_iter=10000):
    # the tolerance is relative on the eigenvalue, which makes it an
    # absolute tolerance on its log (the pressure)
    n = mat.shape[0]
    v = np.full(n, 1.0 / n)
    lam = np.inf
    residual = np.inf
    for _ in range(max_iter):
        w = mat @ v
        s = float(w.sum())
        if not np.isfinite(s) or s <= 0.0:
            raise PowerIterationError("iterate left the positive cone "
                                      "(sum %r)" % s)
        new = s  # v is normalized to sum 1, so sum(Mv) is the Rayleigh quotient
        v = w / s
        residual = abs(new - lam)
        if residual <= tol * new:
            return float(np.log(new))
        lam = new
    raise PowerIterationError("no convergence in %d iterations, last "
                              "relative residual %g" % (max_iter, residual / new))


def pressure(base, fam, lam_minus, lam_plus, lam_s, k, extra=None):
    """psi(lam_minus, lam_plus, lam_s): log spectral radius of the Ulam matrix."""
    pot = Potential(lam_minus, lam_plus, lam_s, extra)
    return _log_spectral_radius(build_ulam(base, fam, pot, k).matrix)


def side_pressure(base, fam, side, t, k):
    """One-parameter pressure p_side(t) under the -log|S'| baseline."""
    if side in ("minus", "-", 0):
        return pressure(base, fam, t, 0.0, 0.0, k)
    if side in ("plus", "+", 1):
        return pressure(base, fam, 0.0, t, 0.0, k)
    raise ValueError("side must be 'minus' or 'plus', got %r" % (side,))


def find_t_star(base, fam, side, k, t_max=64.0):
    """Positive zero of the one-parameter pressure, by expansion + bisection.

    p(0) = 0 and p is convex, so p'(0) < 0 (checked; Hypothesis 2) makes
    the positive zero unique when it exists. If p stays negative all the
    way to t_max there is no expanding side measure to find.
    """
    h = 1e-4
    slope = (side_pressure(base, fam, side, h, k)
             - side_pressure(base, fam, side, -h, k)) / (2 * h)
    if slope >= 0:
        raise NegativeSlopeViolation("p'(0) = %g >= 0 on side %s" % (slope, side))

    hi = 1.0
    p_hi = side_pressure(base, fam, side, hi, k)
    grew = False
    while p_hi <= 0.0:
        grew = True
        hi *= 2.0
        if hi > t_max:
            raise NoPositiveZero("pressure still %g at t=%g on side %s"
                                 % (p_hi, hi / 2.0, side))
        p_hi = side_pressure(base, fam, side, hi, k)
    lo = hi / 2.0
    if not grew:
        # p(1) was already positive, so the zero may sit below 1/2; walk
        # the lower edge down until the pressure goes negative
        while side_pressure(base, fam, side, lo, k) > 0.0:
            hi = lo
            lo *= 0.5
            if lo < 2.0 ** -20:
                raise NoPositiveZero("no sign change above t=%g on side %s"
                                     % (lo, side))
    # convexity: any t in (0, t_*) has p < 0, so [lo, hi] brackets
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p_mid = side_pressure(base, fam, side, mid, k)
        if abs(p_mid) <= ROOT_TOL:
            return mid
        if p_mid < 0.0:
            lo = mid
        else:
            hi = mid
    raise NoPositiveZero("bisection stalled on [%g, %g]" % (lo, hi))


def ell_of_u(u, t_star_minus, t_star_plus):
    return 0.5 * (1.0 - u) * t_star_minus, 0.5 * (1.0 + u) * t_star_plus


def h_of_u(base, fam, u, k, t_star_minus=None, t_star_plus=None,
           s_bracket=(-6.0, 6.0)):
    """The unique lam_s with psi(ell(u), lam_s) = 0.

    psi is strictly increasing in lam_s (the log|S'| direction), so a
    sign-change bracket plus bisection settles it; tolerance ROOT_TOL in
    psi itself.
    """
    if t_star_minus is None:
        t_star_minus = find_t_star(base, fam, "minus", k)
    if t_star_plus is None:
        t_star_plus = find_t_star(base, fam, "plus", k)
    lm, lp = ell_of_u(u, t_star_minus, t_star_plus)
    s_lo, s_hi = s_bracket
    p_lo = pressure(base, fam, lm, lp, s_lo, k)
    p_hi = pressure(base, fam, lm, lp, s_hi, k)
    if not (p_lo < 0.0 < p_hi):
        raise ValueError("no sign change for lam_s in [%g, %g]: psi endpoints "
                         "%g, %g" % (s_lo, s_hi, p_lo, p_hi))
    for _ in range(200):
        s_mid = 0.5 * (s_lo + s_hi)
        p_mid = pressure(base, fam, lm, lp, s_mid, k)
        if abs(p_mid) <= ROOT_TOL:
            return s_mid
        if p_mid < 0.0:
            s_lo = s_mid
        else:
            s_hi = s_mid
    raise ValueError("lam_s bisection stalled")


def phi_star(base, fam, k, t_star_minus=None, t_star_plus=None, u_tol=1e-6):
    """Maximum of the concave root curve h on (-1, 1), by golden section.

    Returns (u_*, phi) with phi = h(u_*) > 0.
    """
    if t_star_minus is None:
        t_star_minus = find_t_star(base, fam, "minus", k)
    if t_star_plus is None:
        t_star_plus = find_t_star(base, fam, "plus", k)

    def h(u):
        return h_of_u(base, fam, u, k, t_star_minus, t_star_plus)

    invphi = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = -1.0, 1.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    hc, hd = h(c), h(d)
    while b - a > u_tol:
        if hc >= hd:
            b, d, hd = d, c, hc
            c = b - invphi * (b - a)
            hc = h(c)
        else:
            a, c, hc = c, d, hd
            d = a + invphi * (b - a)
            hd = h(d)
    u_best = 0.5 * (a + b)
    return u_best, h(u_best)


def diffusion_coefficient(base, fam, side, k, step=1e-4):
    """D = p''(0) / 2 by second central difference of the side pressure."""
    p_plus = side_pressure(base, fam, side, step, k)
    p_zero = side_pressure(base, fam, side, 0.0, k)
    p_minus = side_pressure(base, fam, side, -step, k)
    return 0.5 * (p_plus - 2.0 * p_zero + p_minus) / step ** 2


def diffusion_eta(lam, D):
    """|lam|/D: the positive zero of t -> lam*t + D*t^2."""
    if lam >= 0 or D <= 0:
        raise ValueError("need lam < 0 and D > 0, got lam=%g D=%g" % (lam, D))
    return -lam / D


def diffusion_phi(lam, D, c=0.0):
    """Second-order approximation lam^2/(2D) - c*lam^2/(4D^2)."""
    if lam >= 0 or D <= 0:
        raise ValueError("need lam < 0 and D > 0, got lam=%g D=%g" % (lam, D))
    return lam * lam / (2.0 * D) - c * lam * lam / (4.0 * D * D)


@dataclass
class BedfordResult:
    value: float
    valid: bool
    bracket: tuple
    residual: float


def bedford_dimension(base, fam, phi_c_cells, k, t_tol=1e-6):
    """Box-dimension zero for a continuous critical graph.

    phi_c_cells: one critical-graph sample per generation-k cell, aligned
    with the cell midpoints. The graph repels along the fibre (f' > 1 on
    it when both endpoint graphs attract), so the dimension formula uses
    the contracting orientation of the fibre derivative: sanity-checked
    against the constant-derivative case, where fibre expansion e against
    base slope 2 must give 2 - log(e)/log(2). Under the running -log|S'|
    baseline that is lam_s = 2 - t with extra term -log f'_w(phi_c(w)).
    The natural bracket is t in [1, 2]; if the pressure does not change
    sign there the bracket is widened (down to 2^-8, up to 4) before
    giving up, because the zero can drop below 1, in which case the
    result is not a box dimension (flagged).
    """
    phi_c_cells = np.asarray(phi_c_cells, dtype=float)
    n = 2 ** k
    if phi_c_cells.shape != (n,):
        raise ValueError("need exactly one phi_c sample per cell: %d != %d"
                         % (phi_c_cells.size, n))
    mids = (np.arange(n) + 0.5) / n

    def extra(w):
        graph = np.interp(np.asarray(w, dtype=float), mids, phi_c_cells)
        return -np.log(fam.deriv(base.drive(np.asarray(w, float)), graph))

    def p_of_t(t):
        return pressure(base, fam, 0.0, 0.0, 2.0 - t, k, extra=extra)

    t_lo, t_hi = 1.0, 2.0
    p_lo, p_hi = p_of_t(t_lo), p_of_t(t_hi)
    while p_lo * p_hi > 0.0 and t_lo > 2.0 ** -8:
        t_lo /= 2.0
        p_lo = p_of_t(t_lo)
    while p_lo * p_hi > 0.0 and t_hi < 4.0:
        t_hi += 1.0
        p_hi = p_of_t(t_hi)
    if p_lo * p_hi > 0.0:
        raise NoZeroInRange("no sign change for t in [%g, %g] (pressure %g "
                            "to %g)" % (t_lo, t_hi, p_lo, p_hi))
    bracket = (t_lo, t_hi)
    increasing = p_hi > p_lo
    for _ in range(200):
        t_mid = 0.5 * (t_lo + t_hi)
        p_mid = p_of_t(t_mid)
        if abs(p_mid) <= t_tol and t_hi - t_lo <= 1e-4:
            break
        if (p_mid < 0.0) == increasing:
            t_lo = t_mid
        else:
            t_hi = t_mid
    return BedfordResult(value=t_mid, valid=bool(t_mid > 1.0),
                         bracket=bracket, residual=abs(p_mid))


@dataclass
class PressureCurveResult:
    """A sampled pressure curve with whatever features were located on it."""

    grid: np.ndarray
    values: np.ndarray
    zeros: list
    maximizers: list


def side_pressure_curve(base, fam, side, t_grid, k):
    t_grid = np.asarray(t_grid, dtype=float)
    vals = np.array([side_pressure(base, fam, side, t, k) for t in t_grid])
    t_star = find_t_star(base, fam, side, k)
    zero = (t_star, (0.5 * t_star, 2.0 * t_star), ROOT_TOL)
    return PressureCurveResult(grid=t_grid, values=vals, zeros=[zero],
                               maximizers=[])


def h_curve(base, fam, u_grid, k, t_star_minus=None, t_star_plus=None):
    if t_star_minus is None:
        t_star_minus = find_t_star(base, fam, "minus", k)
    if t_star_plus is None:
        t_star_plus = find_t_star(base, fam, "plus", k)
    u_grid = np.asarray(u_grid, dtype=float)
    vals = np.array([h_of_u(base, fam, u, k, t_star_minus, t_star_plus)
                     for u in u_grid])
    u_best, phi = phi_star(base, fam, k, t_star_minus, t_star_plus)
    return PressureCurveResult(grid=u_grid, values=vals, zeros=[],
                               maximizers=[(u_best, phi, 1e-6)])
