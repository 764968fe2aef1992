"""Experiment runner and persistence layer.

Configures a model from a flat key=value file plus command-line flags,
runs the requested pipeline, and writes CSV tables, PNG figures, and a
manifest with a content hash per output file. All randomness flows from
the single config seed through named stream derivations.
"""

import argparse
import dataclasses
import hashlib
import os
import platform
import sys
import time

import numpy as np

from . import base_maps, dynamics, estimators, fibre_families, figures, streams, thermo


class HypothesisViolation(Exception):
    """Raised by the gate when the transverse-exponent conditions fail."""


@dataclasses.dataclass
class ExperimentConfig:
    model: str = "arctan"
    base: str = "doubling"
    a: float = 0.9
    b: float = 0.4
    c: float = 0.9
    d: float = 0.8
    alpha: float = 0.5
    seed: int = 0
    samples: int = 100000
    resolution: int = 12
    grid: int = 192
    eps_min: float = 0.001
    eps_max: float = 0.1
    eps_count: int = 8
    out: str = "runs"


def config_to_text(cfg):
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        lines.append("%s=%r" % (f.name, v) if isinstance(v, str)
                     else "%s=%s" % (f.name, repr(v)))
    return "\n".join(lines) + "\n"


def config_from_text(text):
    """Parse the flat key=value form; unknown keys are an error."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError("line %d: expected key=value, got %r" % (ln, raw))
        key, val = line.split("=", 1)
        key, val = key.strip(), val.strip()
        if key not in fields:
            raise ValueError("line %d: unknown config key %r" % (ln, key))
        typ = fields[key].type
        if typ == "int" or typ is int:
            parsed = int(val)
        elif typ == "float" or typ is float:
            parsed = float(val)
        else:
            parsed = val.strip("'\"")
        setattr(cfg, key, parsed)
    return cfg


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(config_to_text(cfg))


def load_config(path):
    with open(path) as fh:
        return config_from_text(fh.read())


def eps_grid(cfg):
    if cfg.eps_count < 4:
        raise ValueError("eps_count must be >= 4 for the scaling fits")
    if not 0 < cfg.eps_min < cfg.eps_max:
        raise ValueError("need 0 < eps_min < eps_max")
    return np.geomspace(cfg.eps_max, cfg.eps_min, cfg.eps_count)


def build_system(cfg):
    if cfg.base == "doubling":
        base = base_maps.make_doubling()
    elif cfg.base == "tent":
        base = base_maps.make_tent_logistic_conjugate()
    else:
        raise ValueError("unknown base %r (doubling or tent)" % (cfg.base,))
    if cfg.model == "arctan":
        fam = fibre_families.arctan_family(cfg.a, cfg.b, cfg.c, cfg.d)
    elif cfg.model == "species":
        fam = fibre_families.species_coupling_family(cfg.alpha)
    else:
        raise ValueError("unknown model %r (arctan or species)" % (cfg.model,))
    return dynamics.SkewProduct(base, fam)


# ------------------------------------------------------------------ output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_pgm(path, labels):
    """Portable graymap of a label matrix: 0 Minus, 128 Undecided, 255 Plus.

    Row 0 of the matrix is the lower fibre endpoint and is written last so
    the image shows it at the bottom.
    """
    gray = np.full(labels.shape, 128, dtype=np.int64)
    gray[labels == -1] = 0
    gray[labels == 1] = 255
    h, w = gray.shape
    with open(path, "w") as fh:
        fh.write("P2\n%d %d\n255\n" % (w, h))
        for r in range(h - 1, -1, -1):
            fh.write(" ".join(str(v) for v in gray[r]) + "\n")
    return path


def _versions():
    import matplotlib
    import scipy
    try:
        from importlib.metadata import version
        own = version("basinlab")
    except Exception:
        own = "unknown"
    return [("python", platform.python_version()),
            ("numpy", np.__version__),
            ("scipy", scipy.__version__),
            ("matplotlib", matplotlib.__version__),
            ("basinlab", own)]


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, pipeline, cfg, wall_time, files):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("pipeline=%s\n" % pipeline)
        fh.write("seed=%d\n" % cfg.seed)
        fh.write("wall_time_s=%.6f\n" % wall_time)
        for name, ver in _versions():
            fh.write("version.%s=%s\n" % (name, ver))
        for f in dataclasses.fields(ExperimentConfig):
            fh.write("config.%s=%s\n" % (f.name, _fmt(getattr(cfg, f.name))))
        for fp in sorted(files):
            fh.write("file.%s=sha256:%s\n" % (os.path.basename(fp), _sha256(fp)))
    return path


# ------------------------------------------------------------------ gate


def hypothesis_measures(F):
    if F.base.name == "doubling":
        words = [("w4", (0, 0, 0, 1)), ("w5", (0, 1, 0, 1, 1))]
    else:
        words = [("fix", (0,)), ("w2", (0, 1))]
    ms = [("acip", dynamics.acip_measure())]
    for name, word in words:
        ms.append((name, dynamics.periodic_measure(F.base, word)))
    return ms


def check_gate(F, cfg, n_samples=20000):
    """Transverse-exponent screen for the pipelines that assume it.

    Raises HypothesisViolation naming the first failed condition.
    """
    rep = dynamics.check_hypothesis2(
        F, hypothesis_measures(F), n_samples=n_samples,
        key=streams.derive_key(cfg.seed, "gate"))
    if rep.passed:
        return rep
    for side in ("minus", "plus"):
        if not rep.acip_negative[side]:
            raise HypothesisViolation(
                "transverse-exponent hypothesis violated: the ac invariant "
                "measure does not attract at the %s endpoint graph" % side)
    for side in ("minus", "plus"):
        if not rep.witness_positive[side]:
            raise HypothesisViolation(
                "transverse-exponent hypothesis violated: no tested measure "
                "repels at the %s endpoint graph" % side)
    raise HypothesisViolation("transverse-exponent hypothesis violated")


# ------------------------------------------------------------------ pipelines

# pipelines that only make sense when the basins are intermingled
GATED = ("phi-profile", "pressure", "stability", "uncertainty")


def run_validate(F, cfg, out_dir):
    rep = fibre_families.validate_family(F.fibres)
    hyp = dynamics.check_hypothesis2(
        F, hypothesis_measures(F), n_samples=min(cfg.samples, 100000),
        key=streams.derive_key(cfg.seed, "gate"))
    rows = [("endpoint_error", rep.endpoint_error, 1e-14,
             "pass" if rep.endpoint_error <= 1e-14 else "fail"),
            ("min_deriv", rep.min_deriv, 0.0,
             "pass" if rep.min_deriv > 0 else "fail"),
            ("max_schwarzian", rep.max_schwarzian, 0.0,
             "pass" if rep.max_schwarzian < 0 else "fail")]
    for r in hyp.rows:
        rows.append(("exponent_%s_%s" % (r.measure, r.side), r.value, 0.0,
                     "info"))
    for side in ("minus", "plus"):
        rows.append(("acip_attracts_%s" % side,
                     1.0 if hyp.acip_negative[side] else 0.0, 1.0,
                     "pass" if hyp.acip_negative[side] else "fail"))
        rows.append(("witness_repels_%s" % side,
                     1.0 if hyp.witness_positive[side] else 0.0, 1.0,
                     "pass" if hyp.witness_positive[side] else "fail"))
    for name, s, ok in hyp.sum_rows:
        rows.append(("exponent_sum_%s" % name, s, 0.0,
                     "pass" if ok else "fail"))
    ok = rep.ok and hyp.passed
    rows.append(("overall", 1.0 if ok else 0.0, 1.0, "pass" if ok else "fail"))
    files = [write_csv(os.path.join(out_dir, "validate.csv"),
                       ["check", "value", "threshold", "status"], rows)]
    detail = []
    if not rep.ok:
        detail.append("family invariants violated: %s" % ",".join(rep.failures))
    if not hyp.passed:
        detail.append("transverse-exponent hypothesis not confirmed")
    return files, (0 if ok else 1), "; ".join(detail)


def run_basin_grid(F, cfg, out_dir):
    n = int(cfg.grid)
    labels = dynamics.basin_grid(F, n, n, streams.derive_key(cfg.seed, "grid"))
    files = []
    files.append(write_csv(
        os.path.join(out_dir, "basin_grid.csv"),
        ["col_%03d" % c for c in range(labels.shape[1])],
        [tuple(row) for row in labels]))
    files.append(write_pgm(os.path.join(out_dir, "basin_grid.pgm"), labels))
    files.append(figures.save_basin_grid(
        labels, F.fibres.interval, os.path.join(out_dir, "basin_grid.png")))
    return files, 0, ""


def run_phi_profile(F, cfg, out_dir):
    m = int(min(cfg.samples, 4096))
    grid = (np.arange(m) + 0.5) / m
    phi, mask = dynamics.phi_c_on_grid(
        F, grid, streams.derive_key(cfg.seed, "profile-grid"))
    files = [write_csv(os.path.join(out_dir, "phi_profile.csv"),
                       ["omega", "phi_c"],
                       [(w, p) for w, p, bad in zip(grid, phi, mask) if not bad])]

    eps_asc = np.sort(eps_grid(cfg))
    tail_rows, series, fits = [], {}, {}
    fit_rows, censored = [], []
    nan = float("nan")
    for side in ("minus", "plus"):
        t_ref = thermo.find_t_star(F.base, F.fibres, side, cfg.resolution)
        key = streams.derive_key(cfg.seed, "tail", side)
        try:
            fit, info = estimators.tail_exponent(
                F, side, eps_grid=eps_asc, n_samples=cfg.samples, key=key,
                t_star_reference=t_ref)
            fracs, counts = info["fractions"], info["counts"]
            fit_rows.append((side, fit.slope, fit.intercept, fit.residual,
                             fit.eps_range[0], fit.eps_range[1],
                             fit.n_points, t_ref, info["relative_gap"]))
        except ValueError:
            # too few populated scales for a fit at this sample count;
            # keep the raw fractions and mark the side as censored
            prof = dynamics.phi_profile(F, side, eps_asc, cfg.samples, key)
            fracs = prof.fraction
            counts = np.rint(fracs * prof.n_used).astype(np.int64)
            fit = None
            fit_rows.append((side, nan, nan, nan, nan, nan, 0, t_ref, nan))
            censored.append(side)
        for e, frac, cnt in zip(eps_asc, fracs, counts):
            tail_rows.append((side, e, frac, cnt))
        series[side] = fracs
        fits[side] = fit
    files.append(write_csv(os.path.join(out_dir, "tail_fractions.csv"),
                           ["side", "eps", "fraction", "count"], tail_rows))
    files.append(write_csv(
        os.path.join(out_dir, "tail_fits.csv"),
        ["side", "slope", "intercept", "residual", "eps_min", "eps_max",
         "n_points", "t_star", "relative_gap"], fit_rows))
    files.append(figures.save_graph_profile(
        grid[~mask], phi[~mask], os.path.join(out_dir, "phi_profile.png")))
    files.append(figures.save_loglog(
        eps_asc, series, fits,
        os.path.join(out_dir, "tail_loglog.png"), ylabel="tail fraction"))
    detail = ("tail fit censored on side(s): %s" % ",".join(censored)
              if censored else "")
    return files, 0, detail


def run_pressure(F, cfg, out_dir):
    k = cfg.resolution
    tm = thermo.find_t_star(F.base, F.fibres, "minus", k)
    tp = thermo.find_t_star(F.base, F.fibres, "plus", k)
    u_star, phi = thermo.phi_star(F.base, F.fibres, k,
                                  t_star_minus=tm, t_star_plus=tp)
    psi0 = thermo.pressure(F.base, F.fibres, 0.0, 0.0, 0.0, k)

    lam_m, se_m = dynamics.lyapunov_graph(
        F, dynamics.acip_measure(), "minus", cfg.samples,
        streams.derive_key(cfg.seed, "lam", "minus"))
    d_m = thermo.diffusion_coefficient(F.base, F.fibres, "minus", k)
    d_p = thermo.diffusion_coefficient(F.base, F.fibres, "plus", k)
    summary = [("t_star_minus", tm), ("t_star_plus", tp),
               ("u_star", u_star), ("phi", phi), ("psi_zero", psi0),
               ("lambda_ac_minus", lam_m), ("lambda_ac_minus_se", se_m),
               ("D_minus", d_m), ("D_plus", d_p)]
    if lam_m < 0 and d_m > 0:
        summary.append(("eta_minus", thermo.diffusion_eta(lam_m, d_m)))
        summary.append(("phi_diffusion", thermo.diffusion_phi(lam_m, d_m)))

    files = [write_csv(os.path.join(out_dir, "pressure_summary.csv"),
                       ["name", "value"], summary)]

    curve_rows = []
    for side, t_end in (("minus", tm), ("plus", tp)):
        tg = np.linspace(0.0, 1.3 * t_end, 21)
        res = thermo.side_pressure_curve(F.base, F.fibres, side, tg, k)
        curve_rows += [(side, t, p) for t, p in zip(res.grid, res.values)]
    files.append(write_csv(os.path.join(out_dir, "pressure_curves.csv"),
                           ["side", "t", "p"], curve_rows))

    sweep_rows = []
    for axis in ("lam_minus", "lam_plus", "lam_s"):
        for lam in np.linspace(-2.0, 2.0, 17):
            args = {"lam_minus": 0.0, "lam_plus": 0.0, "lam_s": 0.0}
            args[axis] = lam
            sweep_rows.append((axis, lam, thermo.pressure(
                F.base, F.fibres, args["lam_minus"], args["lam_plus"],
                args["lam_s"], k)))
    files.append(write_csv(os.path.join(out_dir, "psi_sweep.csv"),
                           ["axis", "lam", "psi"], sweep_rows))

    ug = np.linspace(-1.0, 1.0, 21)
    hres = thermo.h_curve(F.base, F.fibres, ug, k, t_star_minus=tm,
                          t_star_plus=tp)
    files.append(write_csv(os.path.join(out_dir, "h_curve.csv"),
                           ["u", "h"], list(zip(hres.grid, hres.values))))

    mg = curve_rows
    files.append(figures.save_curves(
        [{"x": [r[1] for r in mg if r[0] == "minus"],
          "y": [r[2] for r in mg if r[0] == "minus"],
          "xlabel": "t", "ylabel": "p_minus", "marks": [tm]},
         {"x": [r[1] for r in mg if r[0] == "plus"],
          "y": [r[2] for r in mg if r[0] == "plus"],
          "xlabel": "t", "ylabel": "p_plus", "marks": [tp]},
         {"x": hres.grid, "y": hres.values, "xlabel": "u", "ylabel": "h",
          "marks": [u_star]}],
        os.path.join(out_dir, "pressure_curves.png")))
    return files, 0, ""


def run_stability(F, cfg, out_dir):
    om = base_maps.random_symbolic(F.base, streams.derive_key(cfg.seed, "stab-omega"), 0)
    w0 = base_maps.symbolic_embed(om, 53)
    phi_c = dynamics.critical_graph(F, om)
    e_lo, _ = F.fibres.interval
    x = 0.5 * (e_lo + phi_c)

    fit_p, fit_m, info = estimators.stability_empirical(
        F, om, x, eps_grid=eps_grid(cfg), n_samples=cfg.samples,
        key=streams.derive_key(cfg.seed, "stab"))

    tm = thermo.find_t_star(F.base, F.fibres, "minus", cfg.resolution)
    tp = thermo.find_t_star(F.base, F.fibres, "plus", cfg.resolution)
    lam_m, _ = dynamics.lyapunov_graph(
        F, dynamics.acip_measure(), "minus", cfg.samples,
        streams.derive_key(cfg.seed, "stab-lam", "minus"))
    lam_p, _ = dynamics.lyapunov_graph(
        F, dynamics.acip_measure(), "plus", cfg.samples,
        streams.derive_key(cfg.seed, "stab-lam", "plus"))
    logs, _ = dynamics.base_expansion_average(
        F, dynamics.acip_measure(), cfg.samples,
        streams.derive_key(cfg.seed, "stab-logs"))
    sigma = estimators.stability_theoretical(estimators.StabilityCase(
        row=2, lam_minus=lam_m, lam_plus=lam_p, log_s_integral=logs,
        t_star_minus=tm, t_star_plus=tp))

    files = [write_csv(
        os.path.join(out_dir, "stability.csv"),
        ["eps", "fraction_minus", "fraction_plus", "fraction_undecided"],
        zip(info["eps"], info["fraction_minus"], info["fraction_plus"],
            info["fraction_undecided"]))]
    summary = [("omega_embedded", w0), ("phi_c", phi_c), ("x", x),
               ("slope_plus", fit_p.slope), ("slope_minus", fit_m.slope),
               ("sigma_theoretical", sigma),
               ("relative_gap_plus", abs(fit_p.slope - sigma) / abs(sigma)),
               ("t_star_minus", tm), ("lambda_ac_minus", lam_m),
               ("log_s_integral", logs),
               ("n_clipped_scales", len(info["clipped"]))]
    files.append(write_csv(os.path.join(out_dir, "stability_summary.csv"),
                           ["name", "value"], summary))
    files.append(figures.save_loglog(
        info["eps"],
        {"plus": info["fraction_plus"], "minus": info["fraction_minus"]},
        {"plus": fit_p, "minus": fit_m},
        os.path.join(out_dir, "stability_loglog.png"), ylabel="basin fraction"))
    return files, 0, ""


def run_uncertainty(F, cfg, out_dir):
    fit, info = estimators.uncertainty_empirical(
        F, 0.0, eps_grid=eps_grid(cfg), n_pairs=cfg.samples,
        key=streams.derive_key(cfg.seed, "unc"))
    tm = thermo.find_t_star(F.base, F.fibres, "minus", cfg.resolution)
    tp = thermo.find_t_star(F.base, F.fibres, "plus", cfg.resolution)
    u_star, phi = thermo.phi_star(F.base, F.fibres, cfg.resolution,
                                  t_star_minus=tm, t_star_plus=tp)
    files = [write_csv(
        os.path.join(out_dir, "uncertainty.csv"),
        ["eps", "probability", "n_disagree", "n_valid"],
        zip(info["eps"], info["probability"], info["n_disagree"],
            info["n_valid"]))]
    ok = fit.slope <= phi + 0.1
    files.append(write_csv(
        os.path.join(out_dir, "uncertainty_summary.csv"), ["name", "value"],
        [("slope", fit.slope), ("phi", phi), ("u_star", u_star),
         ("bound", phi + 0.1), ("bound_satisfied", 1 if ok else 0)]))
    files.append(figures.save_loglog(
        info["eps"], {"disagree": info["probability"]}, {"disagree": fit},
        os.path.join(out_dir, "uncertainty_loglog.png"),
        ylabel="disagreement probability"))
    return files, 0, ""


def run_dimension(F, cfg, out_dir):
    k = min(cfg.resolution, 10)
    mids = (np.arange(2 ** k) + 0.5) / 2 ** k
    cells, mask = dynamics.phi_c_on_grid(
        F, mids, streams.derive_key(cfg.seed, "dim-cells"))
    if mask.any():
        raise RuntimeError("critical graph undecided on %d of %d cells"
                           % (int(mask.sum()), mids.size))
    summary = []
    try:
        bed = thermo.bedford_dimension(F.base, F.fibres, cells, k)
        summary += [("bedford", bed.value),
                    ("bedford_valid", 1 if bed.valid else 0),
                    ("bedford_residual", bed.residual)]
    except thermo.NoZeroInRange:
        bed = None
        summary += [("bedford", float("nan")), ("bedford_valid", 0),
                    ("bedford_residual", float("nan"))]

    m = 2 ** 15
    grid = (np.arange(m) + 0.5) / m
    prof, pmask = dynamics.phi_c_on_grid(
        F, grid, streams.derive_key(cfg.seed, "dim-profile"))
    sizes = 2.0 ** -np.arange(2, 8)
    fit, info = estimators.box_dimension(prof[~pmask], box_sizes=sizes)
    summary += [("box_slope", fit.slope),
                ("box_degenerate", 1 if info["degenerate"] else 0)]
    if bed is not None and bed.valid:
        summary.append(("relative_gap", abs(fit.slope - bed.value) / bed.value))

    files = [write_csv(os.path.join(out_dir, "dimension.csv"),
                       ["name", "value"], summary)]
    files.append(write_csv(os.path.join(out_dir, "box_counts.csv"),
                           ["box_size", "count"],
                           zip(sizes, info["counts"])))
    files.append(figures.save_loglog(
        sizes, {"boxes": info["counts"]}, {"boxes": None},
        os.path.join(out_dir, "box_counts.png"), ylabel="box count"))
    return files, 0, ""


PIPELINES = {
    "validate": run_validate,
    "basin-grid": run_basin_grid,
    "phi-profile": run_phi_profile,
    "pressure": run_pressure,
    "stability": run_stability,
    "uncertainty": run_uncertainty,
    "dimension": run_dimension,
}


def run(cfg, pipeline):
    """Execute one pipeline; returns (files, exit_code, detail).

    Writes everything under <out>/<pipeline>/ and finishes with a manifest
    naming each output file and its content hash.
    """
    if pipeline not in PIPELINES:
        raise ValueError("unknown pipeline %r" % (pipeline,))
    F = build_system(cfg)
    out_dir = os.path.join(cfg.out, pipeline)
    os.makedirs(out_dir, exist_ok=True)
    start = time.time()
    if pipeline in GATED:
        check_gate(F, cfg)
    files, code, detail = PIPELINES[pipeline](F, cfg, out_dir)
    manifest = write_manifest(out_dir, pipeline, cfg, time.time() - start,
                              files)
    return files + [manifest], code, detail


# ------------------------------------------------------------------ entry


def make_parser():
    ap = argparse.ArgumentParser(
        prog="basinlab",
        description="skew-product basin laboratory: run experiment "
                    "pipelines or the verification suite")
    ap.add_argument("pipeline",
                    choices=sorted(PIPELINES) + ["verify"],
                    help="pipeline to run")
    ap.add_argument("--config", metavar="PATH",
                    help="flat key=value config file")
    ap.add_argument("--seed", type=int, help="experiment seed (flag wins)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--samples", type=int, help="Monte-Carlo sample count")
    ap.add_argument("--resolution", type=int, help="transfer-matrix level k")
    ap.add_argument("--eps-min", type=float, dest="eps_min")
    ap.add_argument("--eps-max", type=float, dest="eps_max")
    ap.add_argument("--eps-count", type=int, dest="eps_count")
    return ap


def config_from_args(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for name in ("seed", "out", "samples", "resolution", "eps_min",
                 "eps_max", "eps_count"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    return cfg


def main(argv=None):
    args = make_parser().parse_args(argv)
    cfg = config_from_args(args)
    if args.pipeline == "verify":
        from . import verify
        return verify.run_verify(cfg)
    try:
        files, code, detail = run(cfg, args.pipeline)
    except HypothesisViolation as exc:
        print("aborted: %s" % exc)
        return 3
    except (ValueError, RuntimeError) as exc:
        print("error: %s" % exc)
        return 2
    for fp in files:
        print(fp)
    if detail:
        print(detail)
    return code


if __name__ == "__main__":
    sys.exit(main())
