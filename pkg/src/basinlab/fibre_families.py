"""Families of increasing fibre diffeomorphisms fixing both interval ends.

A family assigns to each drive coordinate w a smooth increasing map f_w of
the fibre interval J onto itself with f_w(e-) = e- and f_w(e+) = e+ enforced
by the algebraic form of the map, not by numerical adjustment. Negative
Schwarzian derivative is the other membership condition; it is an open
condition, checked on a sampling grid by validate_family.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FibreFamily:
    """Callable bundle for one parameterized fibre family.

    eval and deriv accept scalar or array (w, x) with broadcasting.
    log_deriv_at_endpoints(w) returns the pair (log f'_w(e-), log f'_w(e+)).
    second_deriv and third_deriv are closed forms used by the Schwarzian
    when available; families without them fall back to a finite-difference
    stencil.
    """

    name: str
    interval: tuple
    params: dict
    eval: object = field(repr=False)
    deriv: object = field(repr=False)
    log_deriv_at_endpoints: object = field(repr=False)
    second_deriv: object = field(default=None, repr=False)
    third_deriv: object = field(default=None, repr=False)

    @property
    def e_minus(self):
        return self.interval[0]

    @property
    def e_plus(self):
        return self.interval[1]


def arctan_family(a, b, c, d):
    """Fibre maps x -> (arctan(A x + B) - D) / C on J = [-1, 1].

    A(w) = a + b cos(2 pi w) and B(w) = c sin(2 pi w + d); C and D are the
    unique coefficients making both endpoints fixed,

        C = (arctan(A+B) - arctan(B-A)) / 2,
        D = (arctan(A+B) + arctan(B-A)) / 2.

    Requires |b| < |a| (so A never vanishes) and a != 0.
    """
    if a == 0 or abs(b) >= abs(a):
        raise ValueError("arctan family needs |b| < |a| and a != 0, "
                         "got a=%g b=%g" % (a, b))

    def coeffs(w):
        w = np.asarray(w, dtype=float)
        A = a + b * np.cos(2.0 * np.pi * w)
        B = c * np.sin(2.0 * np.pi * w + d)
        P = np.arctan(A + B)
        M = np.arctan(B - A)
        return A, B, 0.5 * (P - M), M

    def feval(w, x):
        # written so both endpoints are exact in floats: at x=-1 the
        # numerator is literally 0, at x=+1 it is literally 2C
        A, B, C, M = coeffs(w)
        return (np.arctan(A * np.asarray(x, float) + B) - M) / C - 1.0

    def fderiv(w, x):
        A, B, C, _ = coeffs(w)
        u = A * np.asarray(x, float) + B
        return A / (C * (1.0 + u * u))

    def f2(w, x):
        A, B, C, _ = coeffs(w)
        u = A * np.asarray(x, float) + B
        return -2.0 * u * A * A / (C * (1.0 + u * u) ** 2)

    def f3(w, x):
        A, B, C, _ = coeffs(w)
        u = A * np.asarray(x, float) + B
        return A ** 3 * (6.0 * u * u - 2.0) / (C * (1.0 + u * u) ** 3)

    def ends(w):
        A, B, C, _ = coeffs(w)
        base_term = np.log(A / C)
        return (base_term - np.log1p((B - A) ** 2),
                base_term - np.log1p((B + A) ** 2))

    return FibreFamily(
        name="arctan",
        interval=(-1.0, 1.0),
        params={"a": a, "b": b, "c": c, "d": d},
        eval=feval,
        deriv=fderiv,
        log_deriv_at_endpoints=ends,
        second_deriv=f2,
        third_deriv=f3,
    )


def species_coupling_family(alpha, check_params=True):
    """Fibre maps x -> x + alpha x (1 - x) cos(3 pi w) on J = [0, 1].

    The derivative is 1 + alpha cos(3 pi w)(1 - 2x), whose minimum over
    (w, x) is 1 - |alpha|, so |alpha| < 1 is required for monotonicity.
    Pass check_params=False to build a degenerate family on purpose (used
    by validation tests, which must see the monotonicity failure).
    """
    if check_params and abs(alpha) >= 1:
        raise ValueError("species coupling needs |alpha| < 1, got %g" % alpha)

    def feval(w, x):
        x = np.asarray(x, dtype=float)
        return x + alpha * x * (1.0 - x) * np.cos(3.0 * np.pi * np.asarray(w, float))

    def fderiv(w, x):
        x = np.asarray(x, dtype=float)
        return 1.0 + alpha * np.cos(3.0 * np.pi * np.asarray(w, float)) * (1.0 - 2.0 * x)

    def f2(w, x):
        w = np.asarray(w, dtype=float)
        return -2.0 * alpha * np.cos(3.0 * np.pi * w) * np.ones_like(np.asarray(x, float))

    def f3(w, x):
        return np.zeros(np.broadcast(np.asarray(w), np.asarray(x)).shape)

    def ends(w):
        g = alpha * np.cos(3.0 * np.pi * np.asarray(w, dtype=float))
        return np.log1p(g), np.log1p(-g)

    return FibreFamily(
        name="species",
        interval=(0.0, 1.0),
        params={"alpha": alpha},
        eval=feval,
        deriv=fderiv,
        log_deriv_at_endpoints=ends,
        second_deriv=f2,
        third_deriv=f3,
    )


BUILTIN_FAMILIES = {
    "arctan": arctan_family,
    "species": species_coupling_family,
}


def schwarzian(fam, w, x, step=1e-4):
    """Sf_w(x) = f''' / f' - 1.5 (f'' / f')^2.

    Uses the family's closed-form derivatives when present, otherwise a
    5-point finite-difference stencil with the given step. The third
    difference amplifies round-off as 1/h^3, so it is taken on a tenfold
    wider spacing than the second one; at the default step that puts both
    truncation and round-off below 1e-6 for maps with O(1) derivatives.
    Raises when the first derivative vanishes.
    """
    fp = np.asarray(fam.deriv(w, x), dtype=float)
    if np.any(np.abs(fp) < 1e-12):
        raise ValueError("Schwarzian undefined: fibre derivative vanishes")
    if fam.second_deriv is not None and fam.third_deriv is not None:
        f2 = np.asarray(fam.second_deriv(w, x), dtype=float)
        f3 = np.asarray(fam.third_deriv(w, x), dtype=float)
    else:
        h = step
        xa = np.asarray(x, dtype=float)
        vm2 = np.asarray(fam.eval(w, xa - 2 * h), float)
        vm1 = np.asarray(fam.eval(w, xa - h), float)
        v0 = np.asarray(fam.eval(w, x), float)
        vp1 = np.asarray(fam.eval(w, xa + h), float)
        vp2 = np.asarray(fam.eval(w, xa + 2 * h), float)
        f2 = (-vp2 + 16 * vp1 - 30 * v0 + 16 * vm1 - vm2) / (12 * h * h)
        s = 10.0 * h
        wm2 = np.asarray(fam.eval(w, xa - 2 * s), float)
        wm1 = np.asarray(fam.eval(w, xa - s), float)
        wp1 = np.asarray(fam.eval(w, xa + s), float)
        wp2 = np.asarray(fam.eval(w, xa + 2 * s), float)
        f3 = (wp2 - 2 * wp1 + 2 * wm1 - wm2) / (2 * s ** 3)
    out = f3 / fp - 1.5 * (f2 / fp) ** 2
    return out if out.ndim else float(out)


@dataclass
class ValidationReport:
    ok: bool
    endpoint_error: float
    min_deriv: float
    max_schwarzian: float
    failures: list

    def __str__(self):
        status = "pass" if self.ok else "FAIL(%s)" % ",".join(self.failures)
        return ("family validation %s: endpoint_error=%.3e min_deriv=%.6f "
                "max_schwarzian=%.6f" % (status, self.endpoint_error,
                                         self.min_deriv, self.max_schwarzian))


def validate_family(fam, n_w=256, n_x=256):
    """Grid check of the family membership invariants.

    Reports the worst endpoint error, the minimum derivative and the
    maximum Schwarzian over an (n_w x n_x) grid; passes only if endpoints
    are fixed to 1e-14, the derivative is positive everywhere on the grid,
    and the Schwarzian is negative at every grid point where the second
    derivative is not numerically zero.
    """
    wg = np.linspace(0.0, 1.0, n_w)
    e_lo, e_hi = fam.interval
    xg = np.linspace(e_lo, e_hi, n_x)
    ww, xx = np.meshgrid(wg, xg, indexing="ij")

    end_err = max(np.max(np.abs(fam.eval(wg, e_lo) - e_lo)),
                  np.max(np.abs(fam.eval(wg, e_hi) - e_hi)))
    dv = np.asarray(fam.deriv(ww, xx), dtype=float)
    min_deriv = float(dv.min())

    failures = []
    if end_err > 1e-14:
        failures.append("endpoint")
    if min_deriv <= 0.0:
        failures.append("monotonicity")

    # Schwarzian only makes sense where the map is a diffeomorphism
    max_sf = -np.inf
    if min_deriv > 0.0:
        sf = np.asarray(schwarzian(fam, ww, xx), dtype=float)
        if fam.second_deriv is not None:
            f2 = np.asarray(fam.second_deriv(ww, xx), dtype=float)
        else:
            h = 1e-4
            f2 = (np.asarray(fam.eval(ww, xx + h), float)
                  - 2 * np.asarray(fam.eval(ww, xx), float)
                  + np.asarray(fam.eval(ww, xx - h), float)) / h ** 2
        relevant = np.abs(f2) > 1e-12
        if np.any(relevant):
            max_sf = float(sf[relevant].max())
            if max_sf >= 0.0:
                failures.append("schwarzian")

    return ValidationReport(ok=not failures,
                            endpoint_error=float(end_err),
                            min_deriv=min_deriv,
                            max_schwarzian=max_sf,
                            failures=failures)
