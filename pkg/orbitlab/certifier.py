"""Batch front end: disintegrate, transport, certify, report.

Usage:
    python -m orbitlab.certifier disintegrate --config configs/annulus.yaml --out runs/annulus
    python -m orbitlab.certifier transport --config configs/translation.yaml --out runs/translation
    python -m orbitlab.certifier certify --config configs/sphere.yaml --out runs/sphere --jobs 4
    python -m orbitlab.certifier report runs/sphere

Exit codes: 0 success, 1 certification failed, 2 malformed config or missing
manifest, 3 a pipeline stage raised (the message names the stage).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import DensitySpec, ExperimentConfig
from .convexity import ConvexityReport, EnergyConfig, estimate_k, taylor_check
from .density_io import (
    conditional_rows,
    density_header,
    density_metadata,
    density_rows,
    load_density,
    marginal_rows,
)
from .errors import LabError, MassError
from .geometry import WarpedManifold, riccati_defect
from .kantorovich import kantorovich_lp, squared_distance_cost
from .measures import (
    QuotientMeasure,
    disintegrate,
    glue,
    make_quotient_measure,
    pushforward_quotient,
    reference_from_spec,
)
from .run_io import MANIFEST, REPORT, RunManifest, RunWriter, config_hash, read_manifest
from .sampler import build_geodesic, sample_geodesics
from .schemas import SchemaError, load_experiment
from .transport import (
    atomize,
    displacement_interpolate,
    endpoint_mismatch,
    geodesic_residual,
    orbit_transport_check,
    quantile_monge,
    w2_atoms,
    w2_distance,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_STAGE = 3

RICCATI_SAMPLES = 65


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"stage {stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class UsageError(Exception):
    pass


@contextmanager
def stage(name: str, writer: RunWriter | None = None, timings: dict[str, float] | None = None) -> Iterator[None]:
    """Run a pipeline stage; LabError escapes as StageError naming the stage."""
    try:
        if writer is not None and timings is not None:
            with writer.stage(name, timings):
                yield
        else:
            yield
    except LabError as e:
        raise StageError(name, e) from e


def _fail(message: str) -> None:
    print(f"::error::{message}", file=sys.stderr)


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.WARNING)
    logging.captureWarnings(True)


def _load(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_experiment(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or cfg.output
    if not out:
        raise UsageError("no output directory: pass --out or set `output` in the config")
    return cfg, Path(out)


def _manifest(command: str, cfg: ExperimentConfig) -> RunManifest:
    config = json.loads(json.dumps(cfg.to_dict()))
    return RunManifest(
        command=command,
        config_hash=config_hash(config),
        config=config,
        tolerances=config["tolerances"],
    )


def _quotient(mf: WarpedManifold, spec: DensitySpec, cfg: ExperimentConfig, seed: int, base: Path) -> QuotientMeasure:
    if spec.csv:
        return pushforward_quotient(load_density(mf, spec, cfg.grid, seed, base)).normalized()
    return make_quotient_measure(mf, spec, cfg.grid.n_u, seed)


# ---------------------------------------------------------------------------
# disintegrate
# ---------------------------------------------------------------------------


def cmd_disintegrate(args) -> int:
    cfg, out = _load(args)
    writer = RunWriter(out)
    manifest = _manifest("disintegrate", cfg)
    timings = manifest.timings

    with stage("geometry", writer, timings):
        mf = WarpedManifold.from_spec(cfg.manifold)
    with stage("measures", writer, timings):
        mu = load_density(mf, cfg.density, cfg.grid, cfg.seed, Path(args.config).parent)
        d = disintegrate(mu)
    with stage("gluing", writer, timings):
        glued = glue(d)
        residual = float(np.max(np.abs(glued.density - mu.density)))
        if residual > cfg.tolerances.gluing:
            raise MassError(f"gluing residual {residual:.3g} exceeds {cfg.tolerances.gluing:g}")
        skip = set(d.degenerate)
        charged = [c for i, c in enumerate(d.conditionals) if i not in skip and d.marginal.density[i] > 0]
        conditional_defect = max((abs(c.mass() - 1.0) for c in charged), default=0.0)

    fiber_header = density_header(mf.fiber_dim)
    writer.write_csv("density.csv", fiber_header, density_rows(mu))
    writer.write_csv("marginal.csv", ["u", "q", "line_density"], marginal_rows(d))
    writer.write_csv("conditionals.csv", [*fiber_header[:-1], "conditional"], conditional_rows(d))
    writer.write_json("density.json", density_metadata(mu, d.degenerate))
    summary = {
        "gluing_residual": residual,
        "conditional_mass_defect": conditional_defect,
        "marginal_mass": d.marginal.mass(),
        "degenerate_orbits": len(d.degenerate),
    }
    writer.write_json(REPORT, summary)
    manifest.summary = summary
    writer.write_manifest(manifest)
    print(f"  {len(d.conditionals)} orbits, gluing residual {residual:.3g} → {out}", file=sys.stderr)
    print("OK: disintegrate", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


def cmd_transport(args) -> int:
    cfg, out = _load(args)
    writer = RunWriter(out)
    manifest = _manifest("transport", cfg)
    timings = manifest.timings
    tc = cfg.transport
    base = Path(args.config).parent

    with stage("geometry", writer, timings):
        mf = WarpedManifold.from_spec(cfg.manifold)
    with stage("measures", writer, timings):
        mu0 = _quotient(mf, tc.source, cfg, cfg.seed, base)
        mu1 = _quotient(mf, tc.target, cfg, cfg.seed + 1, base)
    with stage("transport", writer, timings):
        monge = quantile_monge(mu0, mu1)
        w2 = w2_distance(mu0, mu1)
        path = displacement_interpolate(mu0, monge, np.linspace(0.0, 1.0, tc.n_steps + 1), cfg.tolerances)
        mass_defect = max(abs(m.mass() - 1.0) for m in path.measures)
        if mass_defect > cfg.tolerances.mass:
            raise MassError(f"path mass drifts by {mass_defect:.3g}")
        residual = geodesic_residual(path)
        mismatch = endpoint_mismatch(path, mu1)
    with stage("equivariance", writer, timings):
        orbit = orbit_transport_check(mf, monge, tc.rotations, cfg.grid.n_theta, seed=cfg.seed)

    summary = {
        "w2": w2,
        "geodesic_residual": residual,
        "path_mass_defect": mass_defect,
        "endpoint_mass_mismatch": mismatch.mass,
        "endpoint_density_mismatch": mismatch.density,
        "monotone": monge.is_monotone(),
        "equivariance_violation": orbit.violation,
        "rotations": orbit.rotations,
    }
    if tc.lp_atoms:
        with stage("kantorovich", writer, timings):
            x, a = atomize(mu0, tc.lp_atoms)
            y, b = atomize(mu1, tc.lp_atoms)
            plan, cost = kantorovich_lp(a, b, squared_distance_cost(x, y), cfg.tolerances.lp_marginal)
            quantile = w2_atoms(x, a, y, b) ** 2
        summary.update({"lp_atoms": tc.lp_atoms, "lp_cost": cost, "quantile_cost": quantile,
                        "lp_gap": abs(cost - quantile)})
        writer.write_csv("plan.csv", ["i", "j", "weight"], plan.triplets())

    writer.write_csv(
        "monge.csv",
        ["u", "T", "psi", "grad_psi"],
        zip(monge.nodes.tolist(), monge.image.tolist(), monge.potential.tolist(), monge.gradient.tolist(), strict=True),
    )
    writer.write_json("path.json", path.to_dict())
    writer.write_json(REPORT, summary)
    manifest.summary = summary
    writer.write_manifest(manifest)
    print(f"  W2={w2:.6g}, geodesic residual {residual:.3g} → {out}", file=sys.stderr)
    print("OK: transport", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def _riccati(mf: WarpedManifold, cfg: ExperimentConfig) -> float | None:
    """Riccati defect along the central particle of the first sampled geodesic that stays regular."""
    sampler = replace(cfg.sampler, seed=cfg.seed)
    for spec in sample_geodesics(mf, sampler):
        try:
            path = build_geodesic(mf, spec, np.linspace(0.0, 1.0, RICCATI_SAMPLES), sampler.n_u, cfg.tolerances)
        except LabError as e:
            logger.info("riccati: geodesic %d unusable: %s", spec.id, e)
            continue
        i = int(np.argmin(np.abs(path.monge.nodes - spec.center)))
        deltas = path.deltas()[:, i]
        samples = list(zip(path.times.tolist(), deltas.tolist(), strict=True))
        return riccati_defect(mf, float(path.monge.nodes[i]), float(path.monge.gradient[i]), samples)
    return None


def cmd_certify(args) -> int:
    cfg, out = _load(args)
    writer = RunWriter(out)
    manifest = _manifest("certify", cfg)
    timings = manifest.timings

    with stage("geometry", writer, timings):
        mf = WarpedManifold.from_spec(cfg.manifold)
        reference = reference_from_spec(mf, cfg.certify.reference, cfg.grid.n_theta)
        energy = EnergyConfig.for_manifold(mf, reference)
    with stage("sampling", writer, timings):
        sampler = replace(cfg.sampler, seed=cfg.seed)
        report: ConvexityReport = estimate_k(mf, sampler, energy, cfg.certify.k, cfg.tolerances, args.jobs)
    if cfg.certify.riccati:
        with stage("riccati", writer, timings):
            report = replace(report, riccati=_riccati(mf, cfg))
    taylor = cfg.certify.taylor
    if taylor.enabled:
        with stage("taylor", writer, timings):
            u0 = taylor.base_point if taylor.base_point is not None else 0.5 * sum(mf.principal_bounds)
            diag = taylor_check(mf, u0, taylor.direction, taylor.thetas, taylor, energy, cfg.tolerances)
            report = replace(report, taylor=diag)

    writer.write_csv(
        "k_samples.csv",
        ["geodesic", "theta", "t", "k", "numerator", "denominator", "residual", "center", "ric_min", "ric_max"],
        (tuple(s) for s in report.samples),
    )
    data = report.to_dict()
    writer.write_json(REPORT, data)
    manifest.summary = {k: data[k] for k in ("k_inf", "k_requested", "passed", "ric_min", "ric_max", "skipped")}
    manifest.status = {True: "pass", False: "fail", None: "estimate"}[report.passed]
    writer.write_manifest(manifest)
    print(f"  {len(report.samples)} samples, K_inf={report.k_inf:.6g} → {out}", file=sys.stderr)

    if report.passed is False:
        w = report.witness
        _fail(
            f"certification failed: K_inf={report.k_inf:.6g} < {report.k_requested:g} - {report.tolerance:g}"
            + (f"; witness geodesic {w.geodesic} (u0={w.center:.6g}, theta={w.theta:g}) at t={w.t:g}" if w else "")
        )
        return EXIT_FAILED
    print("OK: certify", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    if not (run / MANIFEST).is_file():
        raise UsageError(f"{run / MANIFEST} not found")
    manifest = read_manifest(run)
    try:
        with open(run / REPORT, encoding="utf-8") as f:
            report = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"{run / REPORT}: cannot read: {e}") from None
    writer = RunWriter(run)
    command = manifest.get("command")

    if command == "certify":
        samples = report["samples"]
        writer.write_csv(
            "k_histogram.csv",
            ["geodesic", "theta", "t", "k"],
            ((s["geodesic"], s["theta"], s["t"], s["k"]) for s in samples),
        )
        by_t: dict[float, list[float]] = defaultdict(list)
        for s in samples:
            by_t[s["t"]].append(s["residual"])
        writer.write_csv(
            "residual_vs_t.csv",
            ["t", "min_residual", "mean_residual", "count"],
            ((t, min(r), sum(r) / len(r), len(r)) for t, r in sorted(by_t.items())),
        )
        taylor = report.get("taylor")
        if taylor:
            writer.write_csv(
                "taylor.csv",
                ["theta", "D", "P", "W"],
                zip(taylor["thetas"], taylor["D"], taylor["P"], taylor["W"], strict=True),
            )
    elif command == "transport":
        with open(run / "path.json", encoding="utf-8") as f:
            path = json.load(f)
        writer.write_csv(
            "path_density.csv",
            ["t", "u", "q"],
            (
                (t, u, q)
                for t, nodes, dens in zip(path["t"], path["nodes"], path["densities"], strict=True)
                for u, q in zip(nodes, dens, strict=True)
            ),
        )
    print(f"  {len(writer.files)} series → {run}", file=sys.stderr)
    print("OK: report", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description="Orbit-curvature laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_text in (
        ("disintegrate", cmd_disintegrate, "Disintegrate a density along orbits and check the gluing identity"),
        ("transport", cmd_transport, "Quotient transport, displacement path and LP cross-check"),
        ("certify", cmd_certify, "Estimate K from displacement convexity and compare with a requested bound"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="Experiment YAML")
        sp.add_argument("--out", help="Run directory (overrides `output`)")
        sp.add_argument("--seed", type=int, help="Overrides the config seed")
        sp.add_argument("--jobs", type=int, default=1, help="Worker threads for sample evaluation")
        sp.add_argument("--verbose", action="store_true")
        sp.set_defaults(func=fn)

    rp = sub.add_parser("report", help="Emit plot-ready CSV series from a finished run")
    rp.add_argument("run_dir")
    rp.add_argument("--verbose", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except (SchemaError, UsageError) as e:
        _fail(str(e))
        return EXIT_CONFIG
    except StageError as e:
        _fail(str(e))
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
