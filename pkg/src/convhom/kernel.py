"""Radial convolution kernels and the constant-coefficient effective tensor.

A kernel ``a(xi)`` weighs the interaction between two points at offset
``xi``.  Every kernel here is even, nonnegative, and carries a hard support
radius ``cutoff`` so that lattice assembly only has finitely many offsets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from .errors import HomogenizationError

FAMILIES = ("ball-indicator", "truncated-power", "gaussian-truncated")


@dataclass(frozen=True)
class Kernel:
    """Convolution kernel.

    Parameters
    ----------
    family : str
        One of ``ball-indicator``, ``truncated-power``, ``gaussian-truncated``.
    d : int
        Space dimension.
    r0, c : float
        ``a >= c`` on the ball of radius ``r0``.  For the ball and gaussian
        families ``c`` is also the amplitude; ``c = 0`` gives the zero kernel.
    decay_C, kappa : float
        Claimed bound ``a(xi) <= decay_C * (1 + |xi|)**-(d + 2 + kappa)``.
        For ``truncated-power`` this bound is attained, so ``decay_C`` is the
        amplitude.
    cutoff : float, optional
        ``a = 0`` beyond this radius.  Defaults to ``r0`` for the ball and
        ``8 * r0`` otherwise.
    """

    family: str
    d: int = 1
    r0: float = 1.0
    c: float = 1.0
    decay_C: float = 1.0
    kappa: float = 1.0
    cutoff: float | None = field(default=None)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise HomogenizationError("config-invalid", f"unknown kernel family {self.family!r}")
        if int(self.d) != self.d or self.d < 1:
            raise HomogenizationError("config-invalid", "kernel dimension must be a positive integer")
        if self.r0 <= 0 or self.decay_C <= 0 or self.kappa <= 0:
            raise HomogenizationError("config-invalid", "r0, decay_C and kappa must be positive")
        if self.c < 0:
            raise HomogenizationError("config-invalid", "c must be nonnegative")
        if self.cutoff is None:
            default = self.r0 if self.family == "ball-indicator" else 8.0 * self.r0
            object.__setattr__(self, "cutoff", float(default))
        if not np.isfinite(self.cutoff) or self.cutoff <= 0:
            raise HomogenizationError("config-invalid", "cutoff must be finite and positive")

    @property
    def exponent(self):
        """Decay exponent ``d + 2 + kappa``."""
        return self.d + 2 + self.kappa

    def radial(self, r):
        """Kernel as a function of ``|xi|`` (vectorized)."""
        r = np.asarray(r, dtype=float)
        if self.family == "ball-indicator":
            val = np.where(r <= self.r0, self.c, 0.0)
        elif self.family == "truncated-power":
            val = self.decay_C * (1.0 + r) ** (-self.exponent)
        else:
            val = self.c * np.exp((self.r0**2 - r**2) / (2.0 * self.r0**2))
        return np.where(r <= self.cutoff, val, 0.0)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.d == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
            return self.radial(np.abs(xi))
        return self.radial(np.linalg.norm(xi, axis=-1))

    def scaled(self, factor):
        """Same shape, amplitude multiplied by ``factor``."""
        if self.family == "truncated-power":
            return replace(self, decay_C=self.decay_C * factor)
        return replace(self, c=self.c * factor)


@dataclass(frozen=True)
class EffectiveTensor:
    """Symmetric ``d x d`` matrix ``A`` of a quadratic energy density."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, ndmin=2)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise HomogenizationError("invalid-tensor", "tensor must be square")
        object.__setattr__(self, "entries", a)

    @property
    def d(self):
        return self.entries.shape[0]

    def quadratic(self, z):
        """``<A z, z>``."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return float(z @ self.entries @ z)

    def is_symmetric(self, rtol=1e-12):
        a = self.entries
        return bool(np.allclose(a, a.T, rtol=rtol, atol=rtol * np.abs(a).max(initial=0.0)))

    def is_psd(self, tol=1e-12):
        a = 0.5 * (self.entries + self.entries.T)
        if not np.all(np.isfinite(a)):
            return False
        lam = np.linalg.eigvalsh(a)
        return bool(lam.min() >= -tol * max(1.0, np.abs(lam).max()))


def eval_kernel(kernel, xi):
    """Evaluate ``a(xi)``; zero outside the cutoff radius."""
    return kernel(xi)


@dataclass(frozen=True)
class KernelReport:
    decay_ok: bool
    lower_ok: bool
    even_ok: bool
    worst_ratio: float


def _halton(d, n, lo, hi):
    pts = qmc.Halton(d=d, scramble=False).random(n)
    return lo + (hi - lo) * pts


def verify_kernel_assumptions(kernel, sample_count=4096):
    """Check decay, lower bound and evenness on a deterministic sample.

    Samples are a Halton sequence on the box of half-width ``1.25 * cutoff``,
    a second one on the ``r0`` box, and a dense ray along the first axis.
    ``worst_ratio`` is ``max a(xi) (1+|xi|)**(d+2+kappa) / decay_C``.
    """
    if sample_count < 1:
        raise HomogenizationError("config-invalid", "sample_count must be >= 1")
    d = kernel.d
    span = 1.25 * kernel.cutoff
    outer = _halton(d, sample_count, -span, span)
    inner = _halton(d, sample_count, -kernel.r0, kernel.r0)
    ray = np.zeros((sample_count, d))
    ray[:, 0] = np.linspace(0.0, span, sample_count)
    pts = np.vstack([outer, inner, ray])

    r = np.linalg.norm(pts, axis=1)
    vals = kernel(pts)
    ratio = vals * (1.0 + r) ** kernel.exponent / kernel.decay_C
    worst = float(ratio.max())

    in_ball = r <= kernel.r0
    lower_ok = bool(np.all(vals[in_ball] >= kernel.c))
    even_ok = bool(np.all(kernel(-pts) == vals))
    nonneg = bool(np.all(vals >= 0.0))
    return KernelReport(
        decay_ok=nonneg and worst <= 1.0 + 1e-12,
        lower_ok=lower_ok,
        even_ok=even_ok,
        worst_ratio=worst,
    )


def analytic_tensor(kernel, quadrature_resolution=512):
    """Second-moment tensor ``A_ij = int a(xi) xi_i xi_j dxi``.

    Midpoint rule with ``quadrature_resolution`` nodes per axis on the box
    ``[-cutoff, cutoff]^d``.  This is the exact effective tensor when the
    coefficient is constant.
    """
    n = int(quadrature_resolution)
    if n < 8:
        raise HomogenizationError("quadrature-underresolved", "resolution must be >= 8")
    L = kernel.cutoff
    step = 2.0 * L / n
    if step > kernel.r0:
        raise HomogenizationError(
            "quadrature-underresolved", f"node spacing {step:g} exceeds r0={kernel.r0:g}"
        )
    d = kernel.d
    nodes = -L + step * (np.arange(n) + 0.5)
    A = np.zeros((d, d))
    if d == 1:
        w = kernel.radial(np.abs(nodes))
        A[0, 0] = np.sum(w * nodes**2) * step
        return EffectiveTensor(A)

    # slice along the first axis to bound memory
    rest = np.stack(np.meshgrid(*([nodes] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    rest_sq = np.sum(rest**2, axis=1)
    for x0 in nodes:
        w = kernel.radial(np.sqrt(x0 * x0 + rest_sq))
        if not w.any():
            continue
        pts = np.column_stack([np.full(len(rest), x0), rest])
        A += (pts * w[:, None]).T @ pts
    A *= step**d
    return EffectiveTensor(0.5 * (A + A.T))
