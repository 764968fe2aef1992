"""Monte-Carlo exponent estimators and log-log regression plumbing.

Every estimator here reduces to counting labelled samples over a geometric
grid of scales and fitting a line through (log eps, log fraction). The
counting is driven by the deterministic counter-based streams, so each
estimate is a pure function of (key, parameters) regardless of chunking
or thread count. Zero counts are never smoothed over silently: bins are
truncated and the truncation is recorded, or clipped with an explicit
flag where the contract calls for it.
"""

from dataclasses import dataclass

import numpy as np

from . import dynamics, orbits, streams
from .base_maps import SymbolicPoint, symbolic_embed


class UnsupportedCase(Exception):
    """A stability row whose side condition fails has no proven formula."""


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residual: float
    eps_range: tuple
    n_points: int


@dataclass(frozen=True)
class StabilityCase:
    """Inputs for one row of the pointwise stability-index formula."""

    row: int
    lam_minus: float
    lam_plus: float
    log_s_integral: float
    t_star_minus: float
    t_star_plus: float

    @property
    def delta_minus(self):
        return self.log_s_integral - self.lam_minus

    @property
    def delta_plus(self):
        return self.log_s_integral - self.lam_plus


def default_eps_grid():
    # 8 geometric scales from 1e-1 down to 1e-3; below that the counts
    # at desk-scale sample sizes die out
    return np.geomspace(1e-1, 1e-3, 8)


def loglog_fit(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected a list of (eps, value) pairs")
    if pts.shape[0] < 4:
        raise ValueError("need at least 4 points to fit, got %d" % pts.shape[0])
    eps, vals = pts[:, 0], pts[:, 1]
    if (eps <= 0).any():
        raise ValueError("eps values must be positive")
    if (vals <= 0).any():
        raise ValueError("nonpositive value in fit input; enlarge the sample "
                         "or truncate the grid")
    order = np.argsort(eps)[::-1]
    eps, vals = eps[order], vals[order]
    if (np.diff(eps) >= 0).any():
        raise ValueError("eps values must be distinct")
    le = np.log(eps)
    # the slope is computed from value RATIOS so that rescaling all values
    # by a common factor cancels before the log is ever taken (exactly so
    # for power-of-two factors, which scale without rounding)
    lr = np.log(vals / vals[0])
    dle = le - le.mean()
    slope = float(np.dot(dle, lr - lr.mean()) / np.dot(dle, dle))
    intercept = float(lr.mean() + np.log(vals[0]) - slope * le.mean())
    resid = np.log(vals) - (slope * le + intercept)
    return ScalingFit(slope=slope, intercept=intercept,
                      residual=float(np.sqrt(np.mean(resid ** 2))),
                      eps_range=(float(eps[-1]), float(eps[0])),
                      n_points=int(eps.size))


def tail_exponent(F, side, eps_grid=None, n_samples=100000, key=None,
                  t_star_reference=None, **profile_kwargs):
    """Scaling exponent of the critical-graph tail fraction near one endpoint.

    Returns (fit, info); info records per-bin counts, any zero-count bins
    that had to be truncated, and the comparison against a reference value
    when one is supplied.
    """
    if eps_grid is None:
        eps_grid = default_eps_grid()
    eps = np.sort(np.asarray(eps_grid, dtype=float))
    if key is None:
        key = streams.derive_key(0, "tail", side)
    prof = dynamics.phi_profile(F, side, eps, n_samples, key, **profile_kwargs)
    counts = np.rint(prof.fraction * prof.n_used).astype(np.int64)
    keep = counts > 0
    dropped_eps = eps[~keep]
    if keep.sum() < 4:
        raise ValueError("only %d scales have nonzero counts (counts %s); "
                         "enlarge the sample or widen the grid"
                         % (int(keep.sum()), counts.tolist()))
    fit = loglog_fit(np.column_stack([eps[keep], prof.fraction[keep]]))
    info = {"eps": eps, "counts": counts, "fractions": prof.fraction,
            "dropped_eps": dropped_eps, "n_used": prof.n_used,
            "n_dropped": prof.n_dropped}
    if t_star_reference is not None:
        info["t_star_reference"] = float(t_star_reference)
        info["relative_gap"] = abs(fit.slope - t_star_reference) / t_star_reference
    return fit, info


def _classify_points(F, omegas, xs, key, delta_attract=dynamics.DELTA_ATTRACT,
                     k_confirm=dynamics.K_CONFIRM, n_max=dynamics.N_MAX,
                     chunk=8192):
    xs = np.broadcast_to(np.asarray(xs, dtype=float), omegas.shape)

    def work(s, e):
        batch = orbits.float_batch(F.base, omegas[s:e], key, np.arange(s, e))
        return orbits.classify_batch(batch, F.fibres, xs[s:e],
                                     delta=delta_attract,
                                     k_confirm=k_confirm, n_max=n_max)

    return np.concatenate(dynamics.run_chunked(work, omegas.size, chunk))


def stability_empirical(F, omega, x, eps_grid=None, n_samples=10000,
                        key=None, **classify_kwargs):
    """Empirical two-sided basin fractions in shrinking squares at (omega, x).

    Samples uniformly in the square of radius eps around the point,
    intersected with the phase space, and classifies each sample. Returns
    (fit_plus, fit_minus, info). Fractions are over all samples, so
    minus + plus + undecided = 1 exactly at every scale; all-one-basin
    scales are clipped into (0, 1) and flagged rather than dropped.
    """
    if eps_grid is None:
        eps_grid = default_eps_grid()
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    if key is None:
        key = streams.derive_key(0, "stability")
    if isinstance(omega, SymbolicPoint):
        w0 = symbolic_embed(omega, 53)
    else:
        w0 = float(omega)
    e_lo, e_hi = F.fibres.interval
    x = float(x)

    frac_minus = np.empty(eps.size)
    frac_plus = np.empty(eps.size)
    frac_undecided = np.empty(eps.size)
    n_minus = np.empty(eps.size, dtype=np.int64)
    n_plus = np.empty(eps.size, dtype=np.int64)
    clipped = []
    n = int(n_samples)
    for i, e in enumerate(eps):
        pts_key = streams.derive_key(int(key), "square", str(i))
        tail_key = streams.derive_key(int(key), "square-tail", str(i))
        u = streams.uniform_block(pts_key, 0, n, column=0)
        v = streams.uniform_block(pts_key, 0, n, column=1)
        w_lo, w_hi = max(0.0, w0 - e), min(1.0, w0 + e)
        x_lo, x_hi = max(e_lo, x - e), min(e_hi, x + e)
        omegas = w_lo + u * (w_hi - w_lo)
        xs = x_lo + v * (x_hi - x_lo)
        labels = _classify_points(F, omegas, xs, tail_key, **classify_kwargs)
        n_minus[i] = np.count_nonzero(labels == orbits.MINUS)
        n_plus[i] = np.count_nonzero(labels == orbits.PLUS)
        frac_minus[i] = n_minus[i] / n
        frac_plus[i] = n_plus[i] / n
        # closing the third fraction against the other two keeps the
        # three-way sum at exactly 1.0 in floating point
        frac_undecided[i] = 1.0 - (frac_minus[i] + frac_plus[i])

    def clipped_fit(frac, side):
        vals = frac.copy()
        lo_clip = vals <= 0.0
        hi_clip = vals >= 1.0
        vals[lo_clip] = 1.0 / (n + 1)
        vals[hi_clip] = n / (n + 1.0)
        for j in np.flatnonzero(lo_clip | hi_clip):
            clipped.append((side, float(eps[j])))
        return loglog_fit(np.column_stack([eps, vals]))

    fit_plus = clipped_fit(frac_plus, "plus")
    fit_minus = clipped_fit(frac_minus, "minus")
    info = {"eps": eps, "fraction_minus": frac_minus,
            "fraction_plus": frac_plus, "fraction_undecided": frac_undecided,
            "count_minus": n_minus, "count_plus": n_plus,
            "clipped": clipped, "n_samples": n}
    return fit_plus, fit_minus, info


def stability_theoretical(case):
    """sigma from the selected row of the pointwise stability formula."""
    if case.log_s_integral <= 0:
        raise ValueError("base expansion integral must be positive")
    if case.row == 1:
        if case.delta_minus <= 0:
            raise UnsupportedCase("row 1 with delta_minus <= 0 has no proven "
                                  "formula")
        return case.t_star_minus * case.delta_minus / case.log_s_integral
    if case.row == 2:
        if case.lam_minus >= 0:
            raise ValueError("row 2 needs a negative exponent at the lower "
                             "graph")
        return case.t_star_minus * (-case.lam_minus) / case.log_s_integral
    if case.row == 3:
        return 0.0
    if case.row == 4:
        if case.lam_plus >= 0:
            raise ValueError("row 4 needs a negative exponent at the upper "
                             "graph")
        return case.t_star_plus * case.lam_plus / case.log_s_integral
    if case.row == 5:
        if case.delta_plus <= 0:
            raise UnsupportedCase("row 5 with delta_plus <= 0 has no proven "
                                  "formula")
        return -case.t_star_plus * case.delta_plus / case.log_s_integral
    raise ValueError("row must be 1..5, got %r" % (case.row,))


def uncertainty_empirical(F, x, eps_grid=None, n_pairs=10000, key=None,
                          **classify_kwargs):
    """Disagreement probability of basin membership along the line at height x.

    For each scale, draws pairs (omega, omega') with omega uniform and
    omega' uniform in the eps-interval around omega, classifies both ends
    of the pair at fibre height x, and estimates the probability that the
    labels differ. Pairs with an undecided member are dropped from the
    denominator and counted. Scales with zero disagreements are truncated
    from the fit and flagged. Returns (fit, info).
    """
    if eps_grid is None:
        eps_grid = default_eps_grid()
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    if key is None:
        key = streams.derive_key(0, "uncertainty")
    x = float(x)
    n = int(n_pairs)

    prob = np.empty(eps.size)
    n_valid = np.empty(eps.size, dtype=np.int64)
    n_disagree = np.empty(eps.size, dtype=np.int64)
    for i, e in enumerate(eps):
        pts_key = streams.derive_key(int(key), "pair", str(i))
        u0 = streams.uniform_block(pts_key, 0, n, column=0)
        u1 = streams.uniform_block(pts_key, 0, n, column=1)
        w = u0
        lo = np.maximum(0.0, w - e)
        hi = np.minimum(1.0, w + e)
        w2 = lo + u1 * (hi - lo)
        la = _classify_points(F, w, x, streams.derive_key(int(key), "pa", str(i)),
                              **classify_kwargs)
        lb = _classify_points(F, w2, x, streams.derive_key(int(key), "pb", str(i)),
                              **classify_kwargs)
        ok = (la != orbits.UNDECIDED) & (lb != orbits.UNDECIDED)
        n_valid[i] = int(ok.sum())
        n_disagree[i] = int((la[ok] != lb[ok]).sum())
        prob[i] = n_disagree[i] / n_valid[i] if n_valid[i] else 0.0

    keep = n_disagree > 0
    truncated = eps[~keep]
    if keep.sum() < 4:
        raise ValueError("only %d scales have disagreements (counts %s); "
                         "enlarge n_pairs" % (int(keep.sum()),
                                              n_disagree.tolist()))
    fit = loglog_fit(np.column_stack([eps[keep], prob[keep]]))
    info = {"eps": eps, "probability": prob, "n_valid": n_valid,
            "n_disagree": n_disagree, "truncated_eps": truncated,
            "n_pairs": n}
    return fit, info


def box_dimension(phi_samples, box_sizes=None):
    """Box-counting slope for the graph sampled on a uniform base grid.

    phi_samples[i] is the graph height above omega = (i + 0.5) / M. A
    constant graph is perfectly legal input; it comes back with slope
    close to 1 and a degenerate flag. Returns (fit, info).
    """
    phi = np.asarray(phi_samples, dtype=float)
    if phi.ndim != 1 or phi.size < 16:
        raise ValueError("need a 1-d grid of graph samples")
    if np.isnan(phi).any():
        raise ValueError("graph samples contain dropped (nan) entries")
    m = phi.size
    if box_sizes is None:
        box_sizes = 2.0 ** -np.arange(3, 11)
    delta = np.sort(np.asarray(box_sizes, dtype=float))[::-1]
    if delta.size < 4:
        raise ValueError("need at least 4 box sizes")
    w = (np.arange(m) + 0.5) / m
    lo = phi.min()
    counts = np.empty(delta.size, dtype=np.int64)
    for i, d in enumerate(delta):
        bx = np.floor(w / d).astype(np.int64)
        by = np.floor((phi - lo) / d).astype(np.int64)
        counts[i] = np.unique(bx * (by.max() + 2) + by).size
    fit = loglog_fit(np.column_stack([1.0 / delta, counts.astype(float)]))
    degenerate = bool(phi.max() - phi.min() < 1e-12)
    info = {"delta": delta, "counts": counts, "degenerate": degenerate}
    return fit, info
