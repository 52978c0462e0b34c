"""Run configuration: TOML parsing, validation and canonical hashing.

Validation errors carry the dotted path of the offending field, e.g.
``config-invalid: grid.R_schedule: must be a nonempty increasing list``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import HomogenizationError
from .kernel import FAMILIES, Kernel
from .lattice import QUADRATURES, VARIANTS
from .random_env import KINDS, EnvironmentSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSIONS = (1,)
EXPERIMENTS = ("cell-campaign", "gamma-limit", "inequality-suite")

# probe name -> default parameters; user values must match the default's type
PROBES = {
    "homogeneity": {"instances": 20, "R": 16.0, "seed": 1000},
    "oracle": {"R_schedule": [8.0, 16.0], "K": 2.0, "seeds": 4, "max_free": 4096},
    "subadditivity": {"pairs": 50, "K": 1.0, "max_side": 6, "max_gap": 2, "seed": 2000},
    "sandwich": {"R_schedule": [16.0, 32.0, 64.0], "K": 4.0, "seed": 0},
    "tail": {"R": 32.0, "K_schedule": [2.0, 4.0, 8.0], "fields": 8, "seed": 3000},
    "monotonicity": {},
    "variance-decay": {},
    "perforation-ordering": {},
}

INEQUALITY_CHECKS = {
    "local-average": {"fields": 20, "h": 1.0 / 256, "length": 1.0, "delta": 1.0 / 16, "sigma": 1.0 / 8},
    "multistep": {"fields": 20, "h": 1.0 / 256, "length": 1.0, "epsilon": 1.0 / 32, "j": 4, "k": 2},
    "poincare-zero-boundary": {"fields": 100, "h": 1.0 / 256, "lengths": [1.0, 2.0], "epsilon": 1.0 / 16},
    "poincare-wirtinger": {"fields": 10, "h": 1.0 / 64, "length": 1.0, "epsilon_schedule": [0.25, 0.125, 0.0625],
                           "r0": 1.0},
    "tail": {"fields": 8, "R": 32.0, "K_schedule": [2.0, 4.0, 8.0]},
}


def _fail(path, msg):
    raise HomogenizationError("config-invalid", f"{path}: {msg}")


def _number(block, key, path, default=None, positive=False, integer=False):
    val = block.get(key, default)
    if val is None:
        _fail(f"{path}.{key}", "required")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(f"{path}.{key}", "must be a number")
    if integer and int(val) != val:
        _fail(f"{path}.{key}", "must be an integer")
    if positive and not val > 0:
        _fail(f"{path}.{key}", "must be positive")
    return int(val) if integer else float(val)


def _schedule(block, key, path, required=True, either_order=False):
    val = block.get(key)
    if val is None and not required:
        return ()
    ok = (isinstance(val, list) and val
          and all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in val))
    if ok:
        inc = all(b > a for a, b in zip(val, val[1:]))
        dec = all(b < a for a, b in zip(val, val[1:]))
        ok = inc or (either_order and dec)
    if not ok:
        order = "strictly monotone" if either_order else "increasing"
        _fail(f"{path}.{key}", f"must be a nonempty {order} list of positive numbers")
    return tuple(float(v) for v in val)


def _check_keys(block, allowed, path):
    if not isinstance(block, dict):
        _fail(path, "must be a table")
    for key in block:
        if key not in allowed:
            _fail(f"{path}.{key}", "unknown key")


def _merge_params(defaults, given, path):
    _check_keys(given, defaults, path)
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        ref = defaults[key]
        if isinstance(ref, list):
            out[key] = list(_schedule(given, key, path))
        elif isinstance(ref, int) and not isinstance(ref, bool):
            out[key] = _number(given, key, path, integer=True)
        else:
            out[key] = _number(given, key, path)
    return out


@dataclass(frozen=True)
class GridConfig:
    d: int
    h: float
    K_schedule: tuple = ()
    R_schedule: tuple = ()
    epsilon_schedule: tuple = ()
    domain: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    schema_version: int
    experiment: str
    name: str
    kernel: Kernel
    environment: EnvironmentSpec
    grid: GridConfig
    seeds: tuple
    tol: float
    max_iter: int | None
    variant: str
    quadrature: str
    directions: tuple
    output_dir: str
    formats: tuple
    probes: dict = field(default_factory=dict)
    gamma_limit: dict = field(default_factory=dict)
    inequalities: dict = field(default_factory=dict)
    canonical: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self):
        """SHA-256 of the canonical parsed config (output location excluded)."""
        blob = json.dumps(self.canonical, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path, seed_override=None, output_dir=None):
    """Read and validate a TOML run configuration."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise HomogenizationError("config-unreadable", str(exc)) from None
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise HomogenizationError("config-invalid", f"<file>: {exc}") from None
    return parse_config(data, seed_override=seed_override, output_dir=output_dir,
                        default_name=Path(path).stem)


def parse_config(data, seed_override=None, output_dir=None, default_name="run"):
    """Validate a parsed config mapping into a :class:`RunConfig`."""
    data = copy.deepcopy(data)
    version = data.get("schema_version")
    if version not in SCHEMA_VERSIONS:
        raise HomogenizationError("unsupported-schema", f"schema_version {version!r} (supported: {SCHEMA_VERSIONS})")
    _check_keys(data, {"schema_version", "experiment", "name", "kernel", "environment", "grid", "seeds",
                       "solver", "output", "cell", "probes", "gamma_limit", "inequalities"}, "<root>")
    experiment = data.get("experiment")
    if experiment not in EXPERIMENTS:
        _fail("experiment", f"must be one of {EXPERIMENTS}")
    name = str(data.get("name", default_name))

    grid_raw = data.get("grid", {})
    _check_keys(grid_raw, {"d", "h", "K_schedule", "R_schedule", "epsilon_schedule", "domain"}, "grid")
    d = _number(grid_raw, "d", "grid", integer=True)
    if d not in (1, 2, 3):
        _fail("grid.d", "must be 1, 2 or 3")
    h = _number(grid_raw, "h", "grid", positive=True)
    need_cells = experiment == "cell-campaign"
    need_eps = experiment == "gamma-limit"
    K_s = _schedule(grid_raw, "K_schedule", "grid", required=need_cells)
    R_s = _schedule(grid_raw, "R_schedule", "grid", required=need_cells)
    eps = _schedule(grid_raw, "epsilon_schedule", "grid", required=need_eps, either_order=True)
    if need_eps:
        eps = tuple(sorted(eps, reverse=True))
    domain = ()
    if "domain" in grid_raw or need_eps:
        dom = grid_raw.get("domain", [[0.0] * d, [1.0] * d])
        try:
            lo, hi = ([float(v) for v in dom[0]], [float(v) for v in dom[1]])
        except (TypeError, ValueError, IndexError):
            _fail("grid.domain", "must be [[lo...], [hi...]]")
        if len(lo) != d or len(hi) != d or any(b <= a for a, b in zip(lo, hi)):
            _fail("grid.domain", "must be a nonempty box of dimension grid.d")
        domain = (tuple(lo), tuple(hi))
    grid = GridConfig(d, h, K_s, R_s, eps, domain)

    kern_raw = data.get("kernel", {})
    _check_keys(kern_raw, {"family", "d", "r0", "c", "decay_C", "kappa", "cutoff"}, "kernel")
    if kern_raw.get("family") not in FAMILIES:
        _fail("kernel.family", f"must be one of {FAMILIES}")
    if kern_raw.get("d", d) != d:
        _fail("kernel.d", "must equal grid.d")
    try:
        kernel = Kernel(**{**kern_raw, "d": d})
    except (HomogenizationError, TypeError) as exc:
        _fail("kernel", str(exc))

    env_raw = data.get("environment", {"kind": "constant"})
    _check_keys(env_raw, {"kind", "lambda1", "lambda2", "cell_size", "p", "hole_radius", "hole_min_gap",
                          "hole_intensity"}, "environment")
    if env_raw.get("kind") not in KINDS:
        _fail("environment.kind", f"must be one of {KINDS}")
    try:
        env = EnvironmentSpec(**env_raw)
    except (HomogenizationError, TypeError) as exc:
        _fail("environment", str(exc))

    seeds_raw = data.get("seeds", [0])
    if isinstance(seeds_raw, dict):
        _check_keys(seeds_raw, {"base_seed", "count"}, "seeds")
        base = _number(seeds_raw, "base_seed", "seeds", 0, integer=True)
        count = _number(seeds_raw, "count", "seeds", positive=True, integer=True)
        seeds = tuple(range(base, base + count))
    elif isinstance(seeds_raw, list) and seeds_raw and all(isinstance(s, int) and s >= 0 for s in seeds_raw):
        if len(set(seeds_raw)) != len(seeds_raw):
            _fail("seeds", "must not repeat")
        seeds = tuple(seeds_raw)
    else:
        _fail("seeds", "must be a nonempty list of nonnegative integers or {base_seed, count}")
    if seed_override is not None:
        seeds = tuple(range(int(seed_override), int(seed_override) + len(seeds)))

    solver_raw = data.get("solver", {})
    _check_keys(solver_raw, {"tol", "max_iter"}, "solver")
    tol = _number(solver_raw, "tol", "solver", 1e-10, positive=True)
    max_iter = solver_raw.get("max_iter")
    if max_iter is not None:
        max_iter = _number(solver_raw, "max_iter", "solver", positive=True, integer=True)

    cell_raw = data.get("cell", {})
    _check_keys(cell_raw, {"variant", "quadrature", "directions"}, "cell")
    variant = cell_raw.get("variant", "truncated-ambient")
    if variant not in VARIANTS:
        _fail("cell.variant", f"must be one of {VARIANTS}")
    quadrature = cell_raw.get("quadrature", "moment")
    if quadrature not in QUADRATURES:
        _fail("cell.quadrature", f"must be one of {QUADRATURES}")
    directions = cell_raw.get("directions", "polarization")
    if directions != "polarization":
        if (not isinstance(directions, list) or not directions
                or not all(isinstance(z, list) and len(z) == d for z in directions)):
            _fail("cell.directions", "must be \"polarization\" or a list of d-vectors")
        directions = tuple(tuple(float(v) for v in z) for z in directions)

    out_raw = data.get("output", {})
    _check_keys(out_raw, {"directory", "formats"}, "output")
    formats = tuple(out_raw.get("formats", ["csv", "json"]))
    if not set(formats) <= {"csv", "json"} or not formats:
        _fail("output.formats", "must be a nonempty subset of [\"csv\", \"json\"]")
    out_dir = output_dir if output_dir is not None else out_raw.get("directory", f"out/{name}")

    probes_raw = data.get("probes", {})
    _check_keys(probes_raw, PROBES, "probes")
    probes = {}
    for pname, params in probes_raw.items():
        if params is True:
            params = {}
        probes[pname] = _merge_params(PROBES[pname], params, f"probes.{pname}")
    if experiment != "cell-campaign" and probes:
        _fail("probes", "probes apply to cell-campaign experiments only")

    gl_raw = data.get("gamma_limit", {})
    _check_keys(gl_raw, {"z", "reference", "collar", "seed"}, "gamma_limit")
    gamma_limit = {}
    if need_eps:
        z = gl_raw.get("z", [1.0] + [0.0] * (d - 1))
        if not isinstance(z, list) or len(z) != d:
            _fail("gamma_limit.z", "must be a d-vector")
        ref = gl_raw.get("reference", "analytic")
        if ref not in ("analytic", "none") and not (
                isinstance(ref, list) and len(ref) == d and all(isinstance(r, list) and len(r) == d for r in ref)):
            _fail("gamma_limit.reference", "must be \"analytic\", \"none\" or a d x d matrix")
        gamma_limit = {
            "z": [float(v) for v in z],
            "reference": ref,
            "collar": _number(gl_raw, "collar", "gamma_limit", 2.0, positive=True),
            "seed": seeds[0],
        }

    ineq_raw = data.get("inequalities", {})
    _check_keys(ineq_raw, INEQUALITY_CHECKS, "inequalities")
    inequalities = {}
    for cname, params in ineq_raw.items():
        if params is True:
            params = {}
        inequalities[cname] = _merge_params(INEQUALITY_CHECKS[cname], params, f"inequalities.{cname}")
    if experiment == "inequality-suite" and not inequalities:
        _fail("inequalities", "inequality-suite needs at least one check")

    canonical = {k: v for k, v in data.items() if k != "output"}
    canonical["seeds"] = list(seeds)
    canonical["output"] = {"formats": list(formats)}
    return RunConfig(
        schema_version=version, experiment=experiment, name=name, kernel=kernel, environment=env,
        grid=grid, seeds=seeds, tol=tol, max_iter=max_iter, variant=variant, quadrature=quadrature,
        directions=directions if isinstance(directions, tuple) else "polarization",
        output_dir=str(out_dir), formats=formats, probes=probes, gamma_limit=gamma_limit,
        inequalities=inequalities, canonical=canonical,
    )
