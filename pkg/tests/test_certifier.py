"""End-to-end runs of the batch front end through main()."""

import csv
import json

import numpy as np
import pytest

from orbitlab.certifier import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_STAGE, main
from orbitlab.density_io import load_density, read_density_csv
from orbitlab.geometry import WarpedManifold
from orbitlab.run_io import MANIFEST, REPORT
from orbitlab.schemas import load_experiment

CYLINDER = """\
seed: 0
manifold:
  profile: constant
  u_min: 0.0
  u_max: 4.0
sampler:
  count: 20
  thetas: [0.1, 0.05]
certify:
  k: 0.0
"""

SPHERE_OVERCLAIM = """\
seed: 0
manifold:
  profile: sin
sampler:
  count: 10
  thetas: [0.05]
  center_window: [0.7853981633974483, 2.356194490192345]
certify:
  k: 1.5
"""


def _config(tmp_path, text, name="experiment.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def _rows(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.reader(f))


# ---------------------------------------------------------------------------
# disintegrate
# ---------------------------------------------------------------------------


def test_disintegrate_annulus(tmp_path, configs_dir):
    out = tmp_path / "annulus"
    assert main(["disintegrate", "--config", str(configs_dir / "annulus.yaml"), "--out", str(out)]) == EXIT_OK
    report = _json(out / REPORT)
    assert report["gluing_residual"] <= 1e-10
    assert report["conditional_mass_defect"] <= 1e-12
    assert report["degenerate_orbits"] == 0
    manifest = _json(out / MANIFEST)
    assert manifest["command"] == "disintegrate"
    assert manifest["files"] == ["conditionals.csv", "density.csv", "density.json", "marginal.csv", "report.json"]
    assert len(_rows(out / "marginal.csv")) == 256 + 1
    assert _rows(out / "density.csv")[0] == ["u", "theta_1", "rho"]
    assert len(_rows(out / "density.csv")) == 256 * 64 + 1


def test_exported_density_reads_back(tmp_path, configs_dir):
    out = tmp_path / "annulus"
    config = str(configs_dir / "annulus.yaml")
    main(["disintegrate", "--config", config, "--out", str(out)])
    cfg = load_experiment(config)
    mf = WarpedManifold.from_spec(cfg.manifold)
    original = load_density(mf, cfg.density, cfg.grid, cfg.seed, configs_dir)
    again = read_density_csv(out / "density.csv", mf)
    assert np.max(np.abs(again.density - original.density)) <= 1e-12


def test_disintegrate_band_outside_manifold(tmp_path, capsys):
    text = "seed: 0\nmanifold:\n  profile: linear\n  u_min: 0.0\n  u_max: 3.0\n"
    text += "density:\n  preset: uniform-band\n  params: {lo: 5.0, hi: 6.0}\n"
    code = main(["disintegrate", "--config", _config(tmp_path, text), "--out", str(tmp_path / "run")])
    assert code == EXIT_STAGE
    assert "::error::stage measures: ConfigError" in capsys.readouterr().err
    assert not (tmp_path / "run" / MANIFEST).exists()


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


def test_transport_translation(tmp_path, configs_dir):
    out = tmp_path / "translation"
    assert main(["transport", "--config", str(configs_dir / "translation.yaml"), "--out", str(out)]) == EXIT_OK
    report = _json(out / REPORT)
    assert report["w2"] == pytest.approx(0.3, abs=1e-9)
    assert report["monotone"] is True
    assert report["geodesic_residual"] <= 1e-6
    assert report["path_mass_defect"] <= 1e-9
    assert report["endpoint_mass_mismatch"] <= 1e-9
    assert report["equivariance_violation"] <= 1e-12
    assert report["lp_gap"] <= 1e-8
    path = _json(out / "path.json")
    assert len(path["t"]) == 9
    assert (out / "plan.csv").exists()
    assert _rows(out / "monge.csv")[0] == ["u", "T", "psi", "grad_psi"]


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def test_certify_flat_cylinder_passes(tmp_path):
    out = tmp_path / "cylinder"
    assert main(["certify", "--config", _config(tmp_path, CYLINDER), "--out", str(out)]) == EXIT_OK
    report = _json(out / REPORT)
    assert report["passed"] is True
    assert abs(report["k_inf"]) <= 0.05
    assert report["riccati_defect"] <= 1e-6
    assert _json(out / MANIFEST)["status"] == "pass"


def test_certify_overclaim_names_witness(tmp_path, capsys):
    out = tmp_path / "sphere"
    code = main(["certify", "--config", _config(tmp_path, SPHERE_OVERCLAIM), "--out", str(out)])
    assert code == EXIT_FAILED
    err = capsys.readouterr().err
    assert "::error::certification failed" in err
    assert "witness geodesic" in err
    report = _json(out / REPORT)
    assert report["passed"] is False
    assert report["witness"]["k"] == report["k_inf"]
    assert _json(out / MANIFEST)["status"] == "fail"


@pytest.mark.parametrize(
    "profile, u_min, u_max, window, k",
    [
        ("constant", 0.0, 4.0, "[0.0, 4.0]", 0.1),
        ("cosh", -1.0, 1.0, "[-1.0, 1.0]", -0.9),
        ("sin", 0.0, 3.141592653589793, "[0.7853981633974483, 2.356194490192345]", 1.1),
    ],
)
def test_certify_true_curvature_plus_margin_fails(tmp_path, capsys, profile, u_min, u_max, window, k):
    text = (
        f"seed: 0\nmanifold:\n  profile: {profile}\n  u_min: {u_min}\n  u_max: {u_max}\n"
        f"sampler:\n  count: 12\n  thetas: [0.05]\n  center_window: {window}\n"
        f"certify:\n  k: {k}\n  riccati: false\n"
    )
    out = tmp_path / profile
    assert main(["certify", "--config", _config(tmp_path, text), "--out", str(out)]) == EXIT_FAILED
    assert "witness geodesic" in capsys.readouterr().err
    report = _json(out / REPORT)
    assert report["k_inf"] < k - 0.05
    assert report["witness"]["geodesic"] in {s["geodesic"] for s in report["samples"]}


def test_certify_with_reference_measure(tmp_path):
    text = CYLINDER + "  reference:\n    amplitude: 1.5\n"
    out = tmp_path / "reference"
    assert main(["certify", "--config", _config(tmp_path, text), "--out", str(out)]) == EXIT_OK
    assert _json(out / MANIFEST)["config"]["certify"]["reference"] == {"amplitude": 1.5, "mode": 1}
    assert abs(_json(out / REPORT)["k_inf"]) <= 0.05


def test_taylor_time_one_is_a_config_error(tmp_path, capsys):
    text = CYLINDER + "  taylor:\n    enabled: true\n    t: 1.0\n"
    assert main(["certify", "--config", _config(tmp_path, text), "--out", str(tmp_path / "run")]) == EXIT_CONFIG
    assert "certify.taylor.t" in capsys.readouterr().err


def test_certify_is_deterministic(tmp_path):
    config = _config(tmp_path, CYLINDER)
    for name in ("a", "b"):
        assert main(["certify", "--config", config, "--out", str(tmp_path / name), "--jobs", "2"]) == EXIT_OK
    for name in (REPORT, "k_samples.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_lands_in_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["certify", "--config", _config(tmp_path, CYLINDER), "--out", str(out), "--seed", "5"]) == EXIT_OK
    assert _json(out / MANIFEST)["config"]["seed"] == 5


# ---------------------------------------------------------------------------
# Failures and report
# ---------------------------------------------------------------------------


def test_malformed_config(tmp_path, capsys):
    config = _config(tmp_path, "seed: 0\ngrid:\n  n_u: 4\n")
    assert main(["disintegrate", "--config", config, "--out", str(tmp_path / "run")]) == EXIT_CONFIG
    assert "experiment.yaml:3 grid.n_u" in capsys.readouterr().err


def test_missing_output_directory(tmp_path, capsys):
    assert main(["disintegrate", "--config", _config(tmp_path, "seed: 0\n")]) == EXIT_CONFIG
    assert "no output directory" in capsys.readouterr().err


def test_report_without_manifest(tmp_path):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG


def test_report_after_certify(tmp_path):
    out = tmp_path / "cylinder"
    main(["certify", "--config", _config(tmp_path, CYLINDER), "--out", str(out)])
    assert main(["report", str(out)]) == EXIT_OK
    samples = _json(out / REPORT)["samples"]
    assert len(_rows(out / "k_histogram.csv")) == len(samples) + 1
    residuals = _rows(out / "residual_vs_t.csv")
    assert residuals[0] == ["t", "min_residual", "mean_residual", "count"]
    assert len(residuals) == 7 + 1


def test_report_after_transport(tmp_path, configs_dir):
    out = tmp_path / "translation"
    main(["transport", "--config", str(configs_dir / "translation.yaml"), "--out", str(out)])
    assert main(["report", str(out)]) == EXIT_OK
    rows = _rows(out / "path_density.csv")
    assert rows[0] == ["t", "u", "q"]
    assert len(rows) > 9
