import numpy as np
import pytest

from basinlab.fibre_families import (
    FibreFamily,
    ValidationReport,
    arctan_family,
    species_coupling_family,
    schwarzian,
    validate_family,
)

# Reference values computed with the math module, independent of the
# numpy implementation under test.
ARCTAN_CASES = [
    # (a, b, c, d, w, x, value, deriv, log f'(e-), log f'(e+))
    (0.9, 0.4, 0.9, 0.8, 0.3, 0.25,
     0.4604335291313355, 0.9374350951523222,
     0.10032463628376276, -0.6307086156995177),
    (0.9, 0.4, 0.9, 0.8, 0.0, -0.5,
     -0.313547668221372, 1.551765043436299,
     0.0829885006990213, -1.1261655773540944),
    (1.2, 0.4, 0.5, 0.3, 0.77, 0.1,
     -0.157244785024302, 1.3167094394448986,
     -0.9845022099319692, -0.11085476257219179),
]

SPECIES_CASES = [
    # (alpha, w, x, value, deriv, log f'(0), log f'(1))
    (0.5, 0.2, 0.7,
     0.6675532155906305, 1.0618033988749895,
     -0.1678371605904824, 0.14367470984377195),
    (0.5, 0.9, 0.3,
     0.23828254850929034, 0.8824429495415054,
     -0.3479879654414802, 0.25765521438716543),
]


@pytest.mark.parametrize("a,b,c,d,w,x,val,drv,gm,gp", ARCTAN_CASES)
def test_arctan_frozen_values(a, b, c, d, w, x, val, drv, gm, gp):
    fam = arctan_family(a, b, c, d)
    assert fam.eval(w, x) == pytest.approx(val, abs=1e-15)
    assert fam.deriv(w, x) == pytest.approx(drv, abs=1e-14)
    lm, lp = fam.log_deriv_at_endpoints(w)
    assert lm == pytest.approx(gm, abs=1e-14)
    assert lp == pytest.approx(gp, abs=1e-14)


@pytest.mark.parametrize("alpha,w,x,val,drv,gm,gp", SPECIES_CASES)
def test_species_frozen_values(alpha, w, x, val, drv, gm, gp):
    fam = species_coupling_family(alpha)
    assert fam.eval(w, x) == pytest.approx(val, abs=1e-15)
    assert fam.deriv(w, x) == pytest.approx(drv, abs=1e-14)
    lm, lp = fam.log_deriv_at_endpoints(w)
    assert lm == pytest.approx(gm, abs=1e-14)
    assert lp == pytest.approx(gp, abs=1e-14)


def test_arctan_parameter_guard():
    with pytest.raises(ValueError):
        arctan_family(0.0, 0.0, 0.5, 0.1)
    with pytest.raises(ValueError):
        arctan_family(0.5, 0.5, 0.1, 0.1)  # |b| == |a|
    with pytest.raises(ValueError):
        arctan_family(0.5, 0.8, 0.1, 0.1)


def test_species_parameter_guard():
    with pytest.raises(ValueError):
        species_coupling_family(1.0)
    with pytest.raises(ValueError):
        species_coupling_family(-1.3)
    # explicit opt-out for building the degenerate case
    fam = species_coupling_family(1.5, check_params=False)
    assert fam.params["alpha"] == 1.5


@pytest.mark.parametrize("fam", [arctan_family(0.9, 0.4, 0.9, 0.8),
                                 arctan_family(1.2, 0.4, 0.5, 0.3),
                                 species_coupling_family(0.5)])
def test_endpoints_fixed_exactly(fam):
    rng = np.random.default_rng(7)
    w = rng.random(1000)
    lo, hi = fam.interval
    assert np.max(np.abs(fam.eval(w, lo) - lo)) <= 1e-14
    assert np.max(np.abs(fam.eval(w, hi) - hi)) <= 1e-14


@pytest.mark.parametrize("fam", [arctan_family(0.9, 0.4, 0.9, 0.8),
                                 species_coupling_family(0.5)])
def test_deriv_matches_finite_difference(fam):
    rng = np.random.default_rng(11)
    w = rng.random(400)
    lo, hi = fam.interval
    x = lo + (hi - lo) * (0.05 + 0.9 * rng.random(400))
    h = 1e-6
    fd = (fam.eval(w, x + h) - fam.eval(w, x - h)) / (2 * h)
    rel = np.abs(fam.deriv(w, x) - fd) / np.abs(fd)
    assert np.max(rel) <= 1e-6


@pytest.mark.parametrize("fam", [arctan_family(0.9, 0.4, 0.9, 0.8),
                                 species_coupling_family(0.5)])
def test_endpoint_log_derivs_match_deriv(fam):
    w = np.linspace(0.0, 1.0, 257)
    lm, lp = fam.log_deriv_at_endpoints(w)
    lo, hi = fam.interval
    assert np.max(np.abs(np.exp(lm) - fam.deriv(w, lo))) <= 1e-12
    assert np.max(np.abs(np.exp(lp) - fam.deriv(w, hi))) <= 1e-12


def test_arctan_coefficients_solve_endpoint_system():
    # C and D must be the unique solution of the 2x2 linear system
    # expressing f(-1) = -1 and f(1) = 1; compare the closed forms
    # against a generic linear solve.
    a, b, c, d = 0.9, 0.4, 0.9, 0.8
    fam = arctan_family(a, b, c, d)
    rng = np.random.default_rng(3)
    for w in rng.random(50):
        A = a + b * np.cos(2 * np.pi * w)
        B = c * np.sin(2 * np.pi * w + d)
        # atan(A x + B) = C x + D at x = +-1
        mat = np.array([[-1.0, 1.0], [1.0, 1.0]])
        rhs = np.array([np.arctan(B - A), np.arctan(B + A)])
        C_ref, D_ref = np.linalg.solve(mat, rhs)
        # recover the implementation's C from its derivative at x with u=0
        x0 = -B / A
        C_impl = A / fam.deriv(w, x0)
        D_impl = np.arctan(A * 0.31 + B) - C_impl * fam.eval(w, 0.31)
        assert C_impl == pytest.approx(C_ref, abs=1e-14)
        assert D_impl == pytest.approx(D_ref, abs=1e-13)


def test_schwarzian_closed_forms_frozen():
    fam = arctan_family(0.9, 0.4, 0.9, 0.8)
    assert schwarzian(fam, 0.3, 0.25) == pytest.approx(-0.6622719087747584,
                                                       abs=1e-13)
    sp = species_coupling_family(0.5)
    assert schwarzian(sp, 0.2, 0.7) == pytest.approx(-0.12704798013198745,
                                                     abs=1e-13)


def test_schwarzian_stencil_agrees_with_closed_form():
    sp = species_coupling_family(0.5)
    bare = FibreFamily(name="species-nostencil", interval=sp.interval,
                       params=sp.params, eval=sp.eval, deriv=sp.deriv,
                       log_deriv_at_endpoints=sp.log_deriv_at_endpoints)
    rng = np.random.default_rng(5)
    w = rng.random(200)
    x = 0.1 + 0.8 * rng.random(200)
    closed = schwarzian(sp, w, x)
    stencil = schwarzian(bare, w, x)
    assert np.max(np.abs(closed - stencil)) <= 1e-6


def test_schwarzian_vanishing_derivative_raises():
    fam = species_coupling_family(1.5, check_params=False)
    # deriv at w=0, x=1 is 1 + 1.5*(-1) = -0.5; pick the actual zero:
    # 1 + 1.5*(1-2x) = 0 at x = (1 + 1/1.5)/2
    x0 = (1.0 + 1.0 / 1.5) / 2.0
    assert abs(fam.deriv(0.0, x0)) < 1e-12
    with pytest.raises(ValueError):
        schwarzian(fam, 0.0, x0)


def test_validate_family_passes_members():
    for fam in (arctan_family(1.2, 0.4, 0.5, 0.3),
                arctan_family(0.9, 0.4, 0.9, 0.8),
                species_coupling_family(0.5)):
        rep = validate_family(fam)
        assert isinstance(rep, ValidationReport)
        assert rep.ok, str(rep)
        assert rep.min_deriv > 0
        assert rep.max_schwarzian < 0
        assert rep.endpoint_error <= 1e-14


def test_validate_family_flags_monotonicity_failure():
    rep = validate_family(species_coupling_family(1.5, check_params=False))
    assert not rep.ok
    assert "monotonicity" in rep.failures
    assert rep.min_deriv == pytest.approx(-0.5, abs=1e-9)


def test_validate_family_flags_broken_endpoint():
    good = species_coupling_family(0.5)

    def bad_eval(w, x):
        return good.eval(w, x) + 1e-6

    broken = FibreFamily(name="broken", interval=good.interval,
                         params=good.params, eval=bad_eval, deriv=good.deriv,
                         log_deriv_at_endpoints=good.log_deriv_at_endpoints,
                         second_deriv=good.second_deriv,
                         third_deriv=good.third_deriv)
    rep = validate_family(broken)
    assert not rep.ok
    assert "endpoint" in rep.failures


def test_species_deriv_min_value():
    # analytic minimum of the derivative is 1 - |alpha|
    fam = species_coupling_family(0.5)
    ww, xx = np.meshgrid(np.linspace(0, 1, 301), np.linspace(0, 1, 301),
                         indexing="ij")
    assert float(np.min(fam.deriv(ww, xx))) == pytest.approx(0.5, abs=1e-3)
