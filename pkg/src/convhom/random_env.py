"""Stationary random environments: checkerboard coefficients and perforations.

Checkerboard cell values come from a counter-based hash of ``(seed, cell
index)``, so a larger box extends a realization instead of resampling it.
Perforations are Matern type-II hard-core ball processes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import HomogenizationError

log = logging.getLogger(__name__)

KINDS = ("constant", "checkerboard-product", "perforation")
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str = "constant"
    lambda1: float = 1.0
    lambda2: float = 1.0
    cell_size: float = 1.0
    p: float = 0.5
    hole_radius: float = 1.0
    hole_min_gap: float = 0.5
    hole_intensity: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise HomogenizationError("config-invalid", f"unknown environment kind {self.kind!r}")
        if self.kind == "checkerboard-product":
            if not (0 < self.lambda1 <= self.lambda2 < np.inf):
                raise HomogenizationError("config-invalid", "need 0 < lambda1 <= lambda2 < inf")
            if self.cell_size <= 0 or not (0.0 <= self.p <= 1.0):
                raise HomogenizationError("config-invalid", "need cell_size > 0 and p in [0, 1]")
        if self.kind == "perforation":
            if self.hole_radius <= 0 or self.hole_min_gap <= 0 or self.hole_intensity < 0:
                raise HomogenizationError(
                    "config-invalid", "need hole_radius > 0, hole_min_gap > 0, hole_intensity >= 0"
                )

    @property
    def exclusion_distance(self):
        """Minimal allowed distance between hole centers."""
        return 2.0 * self.hole_radius + self.hole_min_gap


def as_box(domain_box):
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in domain_box)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise HomogenizationError("config-invalid", "domain box must be nonempty")
    return lo, hi


def cube_box(d, half_width):
    """The box ``[-half_width, half_width]^d``."""
    return np.full(d, -float(half_width)), np.full(d, float(half_width))


def _splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed, index):
    """Uniform [0, 1) numbers keyed by ``seed`` and integer rows of ``index``."""
    index = np.atleast_2d(np.asarray(index, dtype=np.int64))
    h = np.full(index.shape[0], int(seed) & _MASK64, dtype=np.uint64)
    h = _splitmix64(h)
    for k in range(index.shape[1]):
        h = _splitmix64(h ^ index[:, k].view(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True, eq=False)
class Realization:
    """One sampled environment materialized on ``domain_box``."""

    spec: EnvironmentSpec
    seed: int
    lo: np.ndarray
    hi: np.ndarray
    cell_origin: np.ndarray | None = None
    cell_values: np.ndarray | None = None
    holes: np.ndarray | None = None
    attempt: int = 0
    _tree: object = field(default=None, repr=False, compare=False)

    @property
    def d(self):
        return len(self.lo)

    def _check_inside(self, pts):
        tol = 1e-9 * max(1.0, float(np.abs(self.hi - self.lo).max()))
        if np.any(pts < self.lo - tol) or np.any(pts > self.hi + tol):
            raise HomogenizationError("outside-realization", "query point outside materialized box")

    def site_factor(self, points):
        """Per-site factor: ``B(x)`` for coefficient fields, ``chi_E(x)`` for perforations."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.d)
        self._check_inside(pts)
        kind = self.spec.kind
        if kind == "constant":
            return np.ones(len(pts))
        if kind == "checkerboard-product":
            idx = np.floor(pts / self.spec.cell_size).astype(np.int64) - self.cell_origin
            idx = np.minimum(np.maximum(idx, 0), np.array(self.cell_values.shape) - 1)
            return self.cell_values[tuple(idx.T)]
        if self.holes is None or len(self.holes) == 0:
            return np.ones(len(pts))
        dist, _ = self._tree.query(pts, k=1)
        return np.where(dist < self.spec.hole_radius, 0.0, 1.0)

    def cell_value_at(self, cell_index):
        """Value of the checkerboard cell with absolute integer index."""
        j = np.asarray(cell_index, dtype=np.int64) - self.cell_origin
        return float(self.cell_values[tuple(j)])


def _sample_checkerboard(spec, seed, lo, hi):
    cs = spec.cell_size
    first = np.floor(lo / cs).astype(np.int64)
    last = np.floor(hi / cs).astype(np.int64)
    shape = tuple(int(n) for n in last - first + 1)
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(first, last)], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    u = counter_uniform(seed, idx)
    vals = np.where(u < spec.p, spec.lambda2, spec.lambda1).reshape(shape)
    return first, vals


def _matern_ii(spec, rng, lo, hi):
    r = spec.hole_radius
    inner_lo, inner_hi = lo + r, hi - r
    if np.any(inner_hi <= inner_lo):
        return np.zeros((0, len(lo)))
    volume = float(np.prod(inner_hi - inner_lo))
    n = rng.poisson(spec.hole_intensity * volume)
    pts = inner_lo + (inner_hi - inner_lo) * rng.random((n, len(lo)))
    marks = rng.random(n)
    if n < 2:
        return pts
    keep = np.ones(n, dtype=bool)
    pairs = cKDTree(pts).query_pairs(spec.exclusion_distance, output_type="ndarray")
    if len(pairs):
        # the younger (larger mark) proposal of each conflicting pair dies
        loser = np.where(marks[pairs[:, 0]] > marks[pairs[:, 1]], pairs[:, 0], pairs[:, 1])
        keep[loser] = False
    return pts[keep]


def _with_holes(spec, seed, lo, hi, holes, attempt):
    tree = cKDTree(holes) if len(holes) else None
    return Realization(spec, seed, lo, hi, holes=holes, attempt=attempt, _tree=tree)


def sample_environment(spec, seed, domain_box, h=0.25, max_attempts=64):
    """Sample a realization of ``spec`` on ``domain_box``.

    Parameters
    ----------
    spec : EnvironmentSpec
    seed : int
    domain_box : pair of array_like
        Lower and upper corners.
    h : float
        Lattice spacing used for the connectivity check of perforations.
        Disconnected realizations are rejected and redrawn with the next
        sub-seed.
    max_attempts : int
        Rejection budget for perforations.
    """
    lo, hi = as_box(domain_box)
    seed = int(seed)
    if spec.kind == "constant":
        return Realization(spec, seed, lo, hi)
    if spec.kind == "checkerboard-product":
        origin, vals = _sample_checkerboard(spec, seed, lo, hi)
        return Realization(spec, seed, lo, hi, cell_origin=origin, cell_values=vals)

    if len(lo) == 1 and spec.hole_intensity > 0:
        raise HomogenizationError("perforation-disconnects", "holes always disconnect a line")
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([seed & _MASK64, attempt]))
        real = _with_holes(spec, seed, lo, hi, _matern_ii(spec, rng, lo, hi), attempt)
        if verify_perforation_geometry(real, h=h).connected_ok:
            return real
        log.info("rejected disconnected perforation seed=%d attempt=%d", seed, attempt)
    raise HomogenizationError(
        "perforation-disconnects", f"no connected realization in {max_attempts} attempts"
    )


def coefficient_at(real, kernel, x, y):
    """Pairwise coefficient ``b(x, y) = B(x) B(y) a(x - y)``.

    For perforations ``B`` is the indicator of the perforated set; for the
    constant kind ``B = 1``.
    """
    x = np.asarray(x, dtype=float).reshape(-1, real.d)
    y = np.asarray(y, dtype=float).reshape(-1, real.d)
    val = real.site_factor(x) * real.site_factor(y) * kernel(x - y)
    return float(val[0]) if val.size == 1 else val


@dataclass(frozen=True)
class PerforationReport:
    min_gap_ok: bool
    diameter_ok: bool
    connected_ok: bool
    min_center_distance: float
    components: int


def verify_perforation_geometry(real, h=0.25):
    """Check hole separation and connectivity of the lattice complement.

    Connectivity is a face-neighbour flood fill of the sites at spacing ``h``
    (cell centers of the realization box) that lie outside every hole.
    """
    if real.spec.kind != "perforation":
        raise HomogenizationError("config-invalid", "realization is not a perforation")
    holes = real.holes if real.holes is not None else np.zeros((0, real.d))
    if len(holes) >= 2:
        dist, _ = cKDTree(holes).query(holes, k=2)
        min_dist = float(dist[:, 1].min())
    else:
        min_dist = float("inf")
    min_gap_ok = min_dist >= real.spec.exclusion_distance * (1 - 1e-12)

    n = np.maximum(np.floor((real.hi - real.lo) / h + 1e-9).astype(int), 1)
    axes = [real.lo[k] + h * (np.arange(n[k]) + 0.5) for k in range(real.d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, real.d)
    solid = real.site_factor(grid).reshape(tuple(n)) > 0
    _, ncomp = ndimage.label(solid)
    return PerforationReport(
        min_gap_ok=bool(min_gap_ok),
        diameter_ok=True,
        connected_ok=bool(ncomp == 1),
        min_center_distance=min_dist,
        components=int(ncomp),
    )


def dump_realization(real, path):
    """Write a plain-text audit file of the realization contents."""
    lines = [
        f"# kind={real.spec.kind} seed={real.seed} attempt={real.attempt}",
        "# lo=" + " ".join(f"{v:.17g}" for v in real.lo),
        "# hi=" + " ".join(f"{v:.17g}" for v in real.hi),
    ]
    if real.spec.kind == "checkerboard-product":
        lines.append("# columns: cell index (d ints), value")
        for j in np.ndindex(real.cell_values.shape):
            absolute = np.asarray(j) + real.cell_origin
            lines.append(" ".join(str(int(v)) for v in absolute) + f" {real.cell_values[j]:.17g}")
    elif real.spec.kind == "perforation":
        lines.append(f"# columns: hole center (d floats); radius={real.spec.hole_radius:.17g}")
        for c in real.holes:
            lines.append(" ".join(f"{v:.17g}" for v in c))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
