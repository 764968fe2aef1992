"""Config handling, pipeline outputs, the manifest, and the gate."""

import os

import numpy as np
import pytest

from basinlab import cli


def read_text(path):
    with open(path) as fh:
        return fh.read()


def read_header(path):
    return read_text(path).splitlines()[0]


def csv_rows(path):
    lines = read_text(path).splitlines()
    return [ln.split(",") for ln in lines[1:]]


def write_config(tmp_path, **overrides):
    cfg = cli.ExperimentConfig(**overrides)
    path = tmp_path / "exp.cfg"
    cli.save_config(cfg, str(path))
    return str(path)


def test_config_roundtrip_lossless(tmp_path):
    cfg = cli.ExperimentConfig(
        model="species", base="tent", a=0.73, b=1.0 / 3.0, c=0.9000000001,
        d=0.8, alpha=0.51, seed=12345, samples=777, resolution=9, grid=64,
        eps_min=0.0012345, eps_max=0.35, eps_count=6, out="some/dir")
    path = tmp_path / "roundtrip.cfg"
    cli.save_config(cfg, str(path))
    back = cli.load_config(str(path))
    assert back == cfg
    for name in ("a", "b", "c", "eps_min"):
        assert getattr(back, name) == getattr(cfg, name)


def test_config_rejects_bad_lines():
    with pytest.raises(ValueError, match="unknown config key"):
        cli.config_from_text("bogus=3\n")
    with pytest.raises(ValueError, match="expected key=value"):
        cli.config_from_text("just-a-token\n")
    # comments and blank lines are fine
    cfg = cli.config_from_text("# comment\n\nseed=4\n")
    assert cfg.seed == 4


def test_flags_override_config_file(tmp_path):
    path = write_config(tmp_path, model="species", seed=3, samples=5000)
    args = cli.make_parser().parse_args(
        ["validate", "--config", path, "--seed", "9", "--samples", "50"])
    cfg = cli.config_from_args(args)
    assert cfg.seed == 9
    assert cfg.samples == 50
    assert cfg.model == "species"  # file survives where no flag was given


def test_eps_grid_guards():
    with pytest.raises(ValueError, match="eps_count"):
        cli.eps_grid(cli.ExperimentConfig(eps_count=3))
    with pytest.raises(ValueError, match="eps_min"):
        cli.eps_grid(cli.ExperimentConfig(eps_min=-0.1))
    with pytest.raises(ValueError, match="eps_min"):
        cli.eps_grid(cli.ExperimentConfig(eps_min=0.2, eps_max=0.1))
    g = cli.eps_grid(cli.ExperimentConfig(eps_min=0.01, eps_max=0.1,
                                          eps_count=5))
    assert g.size == 5
    assert g[0] == 0.1 and abs(g[-1] - 0.01) < 1e-15
    assert (np.diff(g) < 0).all()


def test_unknown_model_or_base():
    with pytest.raises(ValueError, match="unknown model"):
        cli.build_system(cli.ExperimentConfig(model="nope"))
    with pytest.raises(ValueError, match="unknown base"):
        cli.build_system(cli.ExperimentConfig(base="nope"))


def manifest_map(out_dir):
    entries = {}
    for line in read_text(os.path.join(out_dir, "manifest.txt")).splitlines():
        key, val = line.split("=", 1)
        entries[key] = val
    return entries


def check_manifest(out_dir, pipeline, seed):
    """Every written file must be named with its actual content hash."""
    entries = manifest_map(out_dir)
    assert entries["pipeline"] == pipeline
    assert entries["seed"] == str(seed)
    for f in ("model", "base", "a", "alpha", "samples", "eps_count", "out"):
        assert ("config.%s" % f) in entries
    for lib in ("python", "numpy", "scipy", "matplotlib"):
        assert ("version.%s" % lib) in entries
    on_disk = sorted(f for f in os.listdir(out_dir) if f != "manifest.txt")
    listed = sorted(k.split(".", 1)[1] for k in entries if k.startswith("file."))
    assert listed == on_disk
    for name in on_disk:
        digest = cli._sha256(os.path.join(out_dir, name))
        assert entries["file." + name] == "sha256:" + digest


def test_validate_pipeline_writes_report(tmp_path):
    rc = cli.main(["validate", "--seed", "1", "--samples", "2000",
                   "--out", str(tmp_path)])
    assert rc == 0
    out = str(tmp_path / "validate")
    path = os.path.join(out, "validate.csv")
    assert read_header(path) == "check,value,threshold,status"
    rows = csv_rows(path)
    by_name = {r[0]: r for r in rows}
    assert by_name["overall"][3] == "pass"
    assert by_name["endpoint_error"][3] == "pass"
    assert by_name["max_schwarzian"][3] == "pass"
    check_manifest(out, "validate", 1)


def test_basin_grid_small(tmp_path):
    path = write_config(tmp_path, grid=16, samples=2000)
    rc = cli.main(["basin-grid", "--config", path, "--seed", "2",
                   "--out", str(tmp_path)])
    assert rc == 0
    out = str(tmp_path / "basin-grid")
    header = read_header(os.path.join(out, "basin_grid.csv")).split(",")
    assert header == ["col_%03d" % c for c in range(16)]
    rows = csv_rows(os.path.join(out, "basin_grid.csv"))
    assert len(rows) == 16
    vals = {v for row in rows for v in row}
    assert vals <= {"-1", "0", "1"}

    pgm = read_text(os.path.join(out, "basin_grid.pgm")).splitlines()
    assert pgm[0] == "P2"
    assert pgm[1] == "16 16"
    assert pgm[2] == "255"
    assert len(pgm) == 3 + 16
    grays = {v for ln in pgm[3:] for v in ln.split()}
    assert grays <= {"0", "128", "255"}

    assert os.path.getsize(os.path.join(out, "basin_grid.png")) > 0
    check_manifest(out, "basin-grid", 2)


def test_gated_pipeline_aborts_outside_regime(tmp_path, capsys):
    # at a=1.2 the lower endpoint graph stops attracting the ac measure,
    # so pipelines that assume intermingling must refuse to run
    path = write_config(tmp_path, a=1.2, samples=2000, resolution=8)
    rc = cli.main(["stability", "--config", path, "--seed", "0",
                   "--out", str(tmp_path)])
    assert rc == 3
    outp = capsys.readouterr().out
    assert "aborted: transverse-exponent hypothesis violated" in outp


def test_pipeline_error_is_reported_not_raised(tmp_path, capsys):
    rc = cli.main(["stability", "--seed", "0", "--samples", "2000",
                   "--resolution", "8", "--eps-count", "3",
                   "--out", str(tmp_path)])
    assert rc == 2
    assert "error: eps_count must be >= 4" in capsys.readouterr().out


def test_uncertainty_pipeline_deterministic(tmp_path):
    path = write_config(tmp_path, samples=2000, resolution=8)
    for sub in ("runA", "runB"):
        rc = cli.main(["uncertainty", "--config", path, "--seed", "5",
                       "--out", str(tmp_path / sub)])
        assert rc == 0
    out_a = str(tmp_path / "runA" / "uncertainty")
    out_b = str(tmp_path / "runB" / "uncertainty")
    for name in ("uncertainty.csv", "uncertainty_summary.csv"):
        with open(os.path.join(out_a, name), "rb") as fh:
            bytes_a = fh.read()
        with open(os.path.join(out_b, name), "rb") as fh:
            bytes_b = fh.read()
        assert bytes_a == bytes_b
    assert read_header(os.path.join(out_a, "uncertainty.csv")) == \
        "eps,probability,n_disagree,n_valid"
    names = {r[0] for r in csv_rows(os.path.join(out_a,
                                                 "uncertainty_summary.csv"))}
    assert {"slope", "phi", "u_star", "bound", "bound_satisfied"} <= names
    check_manifest(out_a, "uncertainty", 5)


def test_phi_profile_censors_thin_tails(tmp_path, capsys):
    # 3000 samples cannot populate four scales on the slow side; the run
    # still succeeds and says which sides were left as raw fractions
    path = write_config(tmp_path, samples=3000, resolution=8)
    rc = cli.main(["phi-profile", "--config", path, "--seed", "3",
                   "--out", str(tmp_path)])
    assert rc == 0
    assert "tail fit censored on side(s):" in capsys.readouterr().out
    out = str(tmp_path / "phi-profile")
    assert read_header(os.path.join(out, "phi_profile.csv")) == "omega,phi_c"
    assert read_header(os.path.join(out, "tail_fractions.csv")) == \
        "side,eps,fraction,count"
    assert read_header(os.path.join(out, "tail_fits.csv")) == \
        ("side,slope,intercept,residual,eps_min,eps_max,"
         "n_points,t_star,relative_gap")
    sides = [r[0] for r in csv_rows(os.path.join(out, "tail_fits.csv"))]
    assert sides == ["minus", "plus"]
    check_manifest(out, "phi-profile", 3)


def test_pressure_pipeline_tables(tmp_path):
    path = write_config(tmp_path, samples=2000, resolution=8)
    rc = cli.main(["pressure", "--config", path, "--seed", "4",
                   "--out", str(tmp_path)])
    assert rc == 0
    out = str(tmp_path / "pressure")
    names = {r[0] for r in csv_rows(os.path.join(out, "pressure_summary.csv"))}
    assert {"t_star_minus", "t_star_plus", "u_star", "phi",
            "psi_zero", "D_minus"} <= names
    assert read_header(os.path.join(out, "pressure_curves.csv")) == "side,t,p"
    assert len(csv_rows(os.path.join(out, "pressure_curves.csv"))) == 42
    assert read_header(os.path.join(out, "psi_sweep.csv")) == "axis,lam,psi"
    assert len(csv_rows(os.path.join(out, "psi_sweep.csv"))) == 51
    assert read_header(os.path.join(out, "h_curve.csv")) == "u,h"
    assert len(csv_rows(os.path.join(out, "h_curve.csv"))) == 21
    check_manifest(out, "pressure", 4)


def test_stability_pipeline_tables(tmp_path):
    path = write_config(tmp_path, samples=2000, resolution=8)
    rc = cli.main(["stability", "--config", path, "--seed", "6",
                   "--out", str(tmp_path)])
    assert rc == 0
    out = str(tmp_path / "stability")
    assert read_header(os.path.join(out, "stability.csv")) == \
        "eps,fraction_minus,fraction_plus,fraction_undecided"
    rows = csv_rows(os.path.join(out, "stability.csv"))
    assert len(rows) == 8
    eps = [float(r[0]) for r in rows]
    assert eps == sorted(eps, reverse=True)
    names = {r[0] for r in csv_rows(os.path.join(out,
                                                 "stability_summary.csv"))}
    assert {"phi_c", "slope_plus", "slope_minus", "sigma_theoretical",
            "relative_gap_plus", "n_clipped_scales"} <= names
    check_manifest(out, "stability", 6)


def test_dimension_pipeline_tables(tmp_path):
    path = write_config(tmp_path, samples=2000, resolution=8)
    rc = cli.main(["dimension", "--config", path, "--seed", "8",
                   "--out", str(tmp_path)])
    assert rc == 0
    out = str(tmp_path / "dimension")
    names = {r[0] for r in csv_rows(os.path.join(out, "dimension.csv"))}
    assert {"bedford", "bedford_valid", "box_slope", "box_degenerate"} <= names
    assert read_header(os.path.join(out, "box_counts.csv")) == "box_size,count"
    assert len(csv_rows(os.path.join(out, "box_counts.csv"))) == 6
    check_manifest(out, "dimension", 8)
