"""Experiment config validation.

Configs are YAML. The file is composed once to remember the line of every
key, then loaded and checked field by field; every violation raises
SchemaError naming `file:line` and the dotted path of the offending value,
e.g. `sphere.yaml:12 sampler.thetas[1]: must lie in (0, 0.5]`.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import yaml

from .config import (
    CertifyConfig,
    DensitySpec,
    ExperimentConfig,
    GridConfig,
    ManifoldSpec,
    ReferenceSpec,
    SamplerConfig,
    TaylorConfig,
    Tolerances,
    TransportConfig,
)
from .measures import DENSITY_PRESETS
from .profiles import PRESETS

MIN_GRID = 16
MAX_THETA = 0.5


class SchemaError(ValueError):
    def __init__(self, source: str, path: str, message: str) -> None:
        super().__init__(f"{source} {path}: {message}")
        self.source = source
        self.path = path
        self.message = message


def _line_index(node: yaml.Node, path: str, out: dict[str, int]) -> None:
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            child = f"{path}.{key.value}" if path else str(key.value)
            out[child] = key.start_mark.line + 1
            _line_index(value, child, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_index(item, f"{path}[{i}]", out)


class _Checker:
    def __init__(self, name: str, lines: dict[str, int]) -> None:
        self.name = name
        self.lines = lines

    def error(self, path: str, message: str) -> SchemaError:
        key = path
        while key and key not in self.lines:
            key = key.rsplit(".", 1)[0] if "." in key else ""
        line = self.lines.get(key, self.lines.get("", 1))
        return SchemaError(f"{self.name}:{line}", path or "<root>", message)

    def mapping(self, obj: Any, path: str, allowed: set[str]) -> dict:
        if obj is None:
            return {}
        if not isinstance(obj, dict):
            raise self.error(path, f"expected mapping, got {type(obj).__name__}")
        for key in obj:
            if key not in allowed:
                raise self.error(f"{path}.{key}" if path else str(key), "unknown field")
        return obj

    def number(
        self, obj: dict, key: str, path: str, default: float, *, lo=None, hi=None, lo_open=False, hi_open=False
    ) -> float:
        p = f"{path}.{key}" if path else key
        value = obj.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int | float):
            raise self.error(p, f"expected number, got {type(value).__name__}")
        value = float(value)
        if not math.isfinite(value):
            raise self.error(p, "must be finite")
        if lo is not None and (value < lo or (lo_open and value == lo)):
            raise self.error(p, f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (value > hi or (hi_open and value == hi)):
            raise self.error(p, f"must be {'<' if hi_open else '<='} {hi}")
        return value

    def integer(self, obj: dict, key: str, path: str, default: int | None, *, lo: int | None = None) -> int:
        p = f"{path}.{key}" if path else key
        if key not in obj and default is None:
            raise self.error(p, f"missing required field '{key}'")
        value = obj.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(p, f"expected integer, got {type(value).__name__}")
        if lo is not None and value < lo:
            raise self.error(p, f"must be >= {lo}")
        return value

    def thetas(self, obj: dict, key: str, path: str, default: tuple[float, ...]) -> tuple[float, ...]:
        p = f"{path}.{key}"
        values = obj.get(key, list(default))
        if not isinstance(values, list) or not values:
            raise self.error(p, "expected a non-empty list")
        out = []
        for i, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, int | float) or not 0 < v <= MAX_THETA:
                raise self.error(f"{p}[{i}]", f"must lie in (0, {MAX_THETA}]")
            out.append(float(v))
        return tuple(out)

    def times(self, obj: dict, key: str, path: str, default: tuple[float, ...]) -> tuple[float, ...]:
        p = f"{path}.{key}"
        values = obj.get(key, list(default))
        if not isinstance(values, list) or not values:
            raise self.error(p, "expected a non-empty list")
        for i, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, int | float) or not 0 < v < 1:
                raise self.error(f"{p}[{i}]", "must lie in (0, 1)")
        return tuple(float(v) for v in values)


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


def _profile(c: _Checker, value: Any, path: str) -> Any:
    if isinstance(value, str):
        if value not in PRESETS:
            raise c.error(path, f"unknown profile preset {value!r} (expected one of {', '.join(PRESETS)})")
        return value
    if isinstance(value, dict) and "spline" in value:
        c.mapping(value, path, {"spline"})
        knots = c.mapping(value["spline"], f"{path}.spline", {"u", "f"})
        u, f = knots.get("u"), knots.get("f")
        if not isinstance(u, list) or not isinstance(f, list) or len(u) != len(f):
            raise c.error(f"{path}.spline", "needs 'u' and 'f' knot lists of equal length")
        if len(u) < 4:
            raise c.error(f"{path}.spline.u", "needs at least 4 knots")
        if any(not isinstance(x, int | float) or isinstance(x, bool) for x in u + f):
            raise c.error(f"{path}.spline", "knots must be numbers")
        if any(b <= a for a, b in zip(u, u[1:], strict=False)):
            raise c.error(f"{path}.spline.u", "knots must be strictly increasing")
        return {"spline": {"u": [float(x) for x in u], "f": [float(x) for x in f]}}
    if isinstance(value, dict) and "preset" in value:
        c.mapping(value, path, {"preset", "scale"})
        name = _profile(c, value["preset"], f"{path}.preset")
        return {"preset": name, "scale": c.number(value, "scale", path, 1.0, lo=0.0, lo_open=True)}
    raise c.error(path, "expected a preset name, {preset, scale} or {spline: {u, f}}")


def _manifold(c: _Checker, raw: Any) -> ManifoldSpec:
    d = ManifoldSpec()
    obj = c.mapping(raw, "manifold", {"profile", "u_min", "u_max", "fiber_dim", "fiber_period", "clamp_fraction"})
    spec = ManifoldSpec(
        profile=_profile(c, obj.get("profile", d.profile), "manifold.profile"),
        u_min=c.number(obj, "u_min", "manifold", d.u_min),
        u_max=c.number(obj, "u_max", "manifold", d.u_max),
        fiber_dim=c.integer(obj, "fiber_dim", "manifold", d.fiber_dim, lo=1),
        fiber_period=c.number(obj, "fiber_period", "manifold", d.fiber_period, lo=0.0, lo_open=True),
        clamp_fraction=c.number(obj, "clamp_fraction", "manifold", d.clamp_fraction, lo=0.0, hi=0.49),
    )
    if not spec.u_min < spec.u_max:
        raise c.error("manifold.u_max", f"must exceed u_min ({spec.u_min})")
    return spec


def _grid(c: _Checker, raw: Any) -> GridConfig:
    d = GridConfig()
    obj = c.mapping(raw, "grid", {"n_u", "n_theta"})
    return GridConfig(
        n_u=c.integer(obj, "n_u", "grid", d.n_u, lo=MIN_GRID),
        n_theta=c.integer(obj, "n_theta", "grid", d.n_theta, lo=MIN_GRID),
    )


def _density(c: _Checker, raw: Any, path: str, default: DensitySpec) -> DensitySpec:
    obj = c.mapping(raw, path, {"preset", "params", "csv"})
    preset = obj.get("preset", default.preset)
    if preset not in DENSITY_PRESETS:
        raise c.error(f"{path}.preset", f"unknown density preset {preset!r} (expected one of {', '.join(DENSITY_PRESETS)})")
    params = obj.get("params", dict(default.params))
    if not isinstance(params, dict):
        raise c.error(f"{path}.params", "expected mapping")
    csv_path = obj.get("csv", default.csv)
    if csv_path is not None and not isinstance(csv_path, str):
        raise c.error(f"{path}.csv", "expected a file path")
    return DensitySpec(preset=preset, params=params, csv=csv_path)


def _transport(c: _Checker, raw: Any) -> TransportConfig:
    d = TransportConfig()
    obj = c.mapping(raw, "transport", {"source", "target", "n_steps", "lp_atoms", "rotations"})
    lp_atoms = obj.get("lp_atoms", d.lp_atoms)
    if lp_atoms is not None:
        lp_atoms = c.integer(obj, "lp_atoms", "transport", d.lp_atoms, lo=1)
        if lp_atoms > 512:
            raise c.error("transport.lp_atoms", "must be <= 512")
    return TransportConfig(
        source=_density(c, obj.get("source"), "transport.source", d.source),
        target=_density(c, obj.get("target"), "transport.target", d.target),
        n_steps=c.integer(obj, "n_steps", "transport", d.n_steps, lo=2),
        lp_atoms=lp_atoms,
        rotations=c.integer(obj, "rotations", "transport", d.rotations, lo=1),
    )


def _sampler(c: _Checker, raw: Any) -> SamplerConfig:
    d = SamplerConfig()
    obj = c.mapping(
        raw,
        "sampler",
        {"count", "support_radius", "max_separation", "thetas", "times", "n_u", "n_steps", "center_window"},
    )
    window = obj.get("center_window", d.center_window)
    if window is not None:
        if (
            not isinstance(window, list)
            or len(window) != 2
            or not all(isinstance(x, int | float) and not isinstance(x, bool) for x in window)
            or not window[0] < window[1]
        ):
            raise c.error("sampler.center_window", "expected [lo, hi] with lo < hi")
        window = (float(window[0]), float(window[1]))
    return SamplerConfig(
        count=c.integer(obj, "count", "sampler", d.count, lo=1),
        support_radius=c.number(obj, "support_radius", "sampler", d.support_radius, lo=0.0, hi=0.5, lo_open=True),
        max_separation=c.number(obj, "max_separation", "sampler", d.max_separation, lo=0.0, hi=1.0, lo_open=True),
        thetas=c.thetas(obj, "thetas", "sampler", d.thetas),
        times=c.times(obj, "times", "sampler", d.times),
        n_u=c.integer(obj, "n_u", "sampler", d.n_u, lo=MIN_GRID),
        n_steps=c.integer(obj, "n_steps", "sampler", d.n_steps, lo=2),
        center_window=window,
    )


def _taylor(c: _Checker, raw: Any) -> TaylorConfig:
    d = TaylorConfig()
    path = "certify.taylor"
    obj = c.mapping(
        raw, path, {"enabled", "base_point", "direction", "thetas", "t", "radius_factor", "n_u", "n_steps"}
    )
    enabled = obj.get("enabled", d.enabled)
    if not isinstance(enabled, bool):
        raise c.error(f"{path}.enabled", "expected boolean")
    base = obj.get("base_point", d.base_point)
    if base is not None:
        base = c.number(obj, "base_point", path, 0.0)
    thetas = c.thetas(obj, "thetas", path, d.thetas)
    if any(b >= a for a, b in zip(thetas, thetas[1:], strict=False)):
        raise c.error(f"{path}.thetas", "must be strictly decreasing")
    return TaylorConfig(
        enabled=enabled,
        base_point=base,
        direction=c.number(obj, "direction", path, d.direction),
        thetas=thetas,
        t=c.number(obj, "t", path, d.t, lo=0.0, hi=1.0, lo_open=True, hi_open=True),
        radius_factor=c.number(obj, "radius_factor", path, d.radius_factor, lo=0.0, lo_open=True),
        n_u=c.integer(obj, "n_u", path, d.n_u, lo=MIN_GRID),
        n_steps=c.integer(obj, "n_steps", path, d.n_steps, lo=2),
    )


def _reference(c: _Checker, raw: Any) -> ReferenceSpec:
    d = ReferenceSpec()
    path = "certify.reference"
    obj = c.mapping(raw, path, {"amplitude", "mode"})
    return ReferenceSpec(
        amplitude=c.number(obj, "amplitude", path, d.amplitude),
        mode=c.integer(obj, "mode", path, d.mode, lo=1),
    )


def _certify(c: _Checker, raw: Any) -> CertifyConfig:
    obj = c.mapping(raw, "certify", {"k", "riccati", "taylor", "reference"})
    k = obj.get("k")
    if k == "estimate":
        k = None
    elif k is not None:
        k = c.number(obj, "k", "certify", 0.0)
    riccati = obj.get("riccati", True)
    if not isinstance(riccati, bool):
        raise c.error("certify.riccati", "expected boolean")
    return CertifyConfig(
        k=k,
        riccati=riccati,
        taylor=_taylor(c, obj.get("taylor")),
        reference=_reference(c, obj.get("reference")),
    )


def _tolerances(c: _Checker, raw: Any) -> Tolerances:
    d = Tolerances()
    names = set(vars(d))
    obj = c.mapping(raw, "tolerances", names)
    return Tolerances(**{n: c.number(obj, n, "tolerances", getattr(d, n), lo=0.0) for n in sorted(names)})


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

SECTIONS = {"seed", "manifold", "grid", "density", "transport", "sampler", "certify", "tolerances", "output"}


def parse_experiment(text: str, name: str = "config.yaml") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise SchemaError(f"{name}:{line}", "<root>", f"invalid YAML: {e}") from None
    lines: dict[str, int] = {}
    if node is not None:
        _line_index(node, "", lines)
    c = _Checker(name, lines)
    obj = c.mapping(raw, "", SECTIONS)
    if not obj:
        raise c.error("", "empty config")
    output = obj.get("output")
    if output is not None and not isinstance(output, str):
        raise c.error("output", "expected a directory path")
    return ExperimentConfig(
        seed=c.integer(obj, "seed", "", None, lo=0),
        manifold=_manifold(c, obj.get("manifold")),
        grid=_grid(c, obj.get("grid")),
        density=_density(c, obj.get("density"), "density", DensitySpec()),
        transport=_transport(c, obj.get("transport")),
        sampler=_sampler(c, obj.get("sampler")),
        certify=_certify(c, obj.get("certify")),
        tolerances=_tolerances(c, obj.get("tolerances")),
        output=output,
    )


def load_experiment(path: str | Path) -> ExperimentConfig:
    """Read and validate an experiment file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(path.name, "<root>", f"cannot read: {e}") from None
    return parse_experiment(text, path.name)
