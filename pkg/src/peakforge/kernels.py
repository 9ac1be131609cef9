"""Gaussian-sum convolution kernels and their exact autocorrelation.

Every formula downstream (operator assembly, optimality curves, sub-grid
peak recovery) needs the blur kernel G, its autocorrelation H = G * G,
the value H(0), and the Hessian of H at the origin.  Restricting G to
sums of centered isotropic Gaussians keeps all of these closed form:
the convolution of two Gaussians is again a Gaussian, so H is a short
Gaussian sum and its derivatives at zero are one-liners.

Two kernel variants are supported:

``isotropic-gaussian``
    A single Gaussian with standard deviation ``sigma``.
``two-gaussian-mixture``
    ``alpha * exp(-r^2 / (2 sigma1^2)) + (1 - alpha) * exp(-r^2 / (2 sigma2^2))``
    up to normalization.

Normalization is either ``unit-mass`` (G integrates to 1, the default)
or ``unit-peak`` (G(0) = 1).  Recovered amplitudes scale with this
choice, so experiment configs state it explicitly.

Evaluations smaller than 1e-16 times the kernel's peak value are
flushed to exact zero, which keeps assembled operator matrices
numerically sparse without affecting anything above solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

# Relative threshold below which kernel evaluations are flushed to zero.
FLUSH_RELATIVE = 1e-16

_VARIANTS = ("isotropic-gaussian", "two-gaussian-mixture")
_NORMALIZATIONS = ("unit-mass", "unit-peak")


# ======================================================================
# Types
# ======================================================================

@dataclass(frozen=True)
class Kernel:
    """A symmetric smooth blur kernel G given as a sum of centered Gaussians.

    Parameters
    ----------
    variant : str
        "isotropic-gaussian" or "two-gaussian-mixture".
    dimension : int
        Spatial dimension d (1 or 2).
    normalization : str
        "unit-mass" (integral 1) or "unit-peak" (G(0) = 1).
    sigma : float, optional
        Standard deviation for the single-Gaussian variant.
    alpha, sigma1, sigma2 : float, optional
        Mixture weight in [0, 1] and the two standard deviations for the
        mixture variant.
    """

    variant: str
    dimension: int
    normalization: str = "unit-mass"
    sigma: Optional[float] = None
    alpha: Optional[float] = None
    sigma1: Optional[float] = None
    sigma2: Optional[float] = None

    def __post_init__(self) -> None:
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.normalization not in _NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.variant == "isotropic-gaussian":
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("isotropic-gaussian requires sigma > 0")
        else:
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ValueError("mixture requires alpha in [0, 1]")
            if self.sigma1 is None or self.sigma1 <= 0 or self.sigma2 is None or self.sigma2 <= 0:
                raise ValueError("mixture requires sigma1 > 0 and sigma2 > 0")

    @property
    def components(self) -> Tuple[Tuple[float, float], ...]:
        """Gaussian components as (peak amplitude, std) pairs, normalized."""
        if self.variant == "isotropic-gaussian":
            raw = [(1.0, float(self.sigma))]
        else:
            raw = [(float(self.alpha), float(self.sigma1)),
                   (1.0 - float(self.alpha), float(self.sigma2))]
        raw = [(a, s) for a, s in raw if a > 0.0]
        if self.normalization == "unit-peak":
            total = sum(a for a, _ in raw)
        else:
            d = self.dimension
            total = sum(a * (2.0 * np.pi * s * s) ** (d / 2.0) for a, s in raw)
        return tuple((a / total, s) for a, s in raw)

    @property
    def peak_value(self) -> float:
        """G(0), the maximum of the kernel."""
        return float(sum(a for a, _ in self.components))


@dataclass(frozen=True)
class AutoKernel:
    """The autocorrelation H = G * G of a :class:`Kernel`, in closed form.

    ``weights[i]`` is the peak amplitude of the i-th Gaussian component
    and ``sigmas[i]`` its standard deviation, so that

        H(x) = sum_i weights[i] * exp(-|x|^2 / (2 sigmas[i]^2)).
    """

    source: Kernel
    weights: Tuple[float, ...]
    sigmas: Tuple[float, ...]

    @property
    def dimension(self) -> int:
        return self.source.dimension

    @property
    def value_at_zero(self) -> float:
        """H(0) = sum of component peaks."""
        return float(sum(self.weights))


# ======================================================================
# Shared evaluation machinery
# ======================================================================

def _as_points(x: np.ndarray | float, dimension: int) -> Tuple[np.ndarray, bool]:
    """Coerce ``x`` to an (n, d) array; also report whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    if dimension == 1:
        if arr.ndim == 0:
            return arr.reshape(1, 1), True
        if arr.ndim == 1:
            return arr.reshape(-1, 1), False
        if arr.ndim == 2 and arr.shape[1] == 1:
            return arr, False
        raise ValueError(f"expected scalar or 1-column points for d=1, got shape {arr.shape}")
    if arr.ndim == 1:
        if arr.shape[0] != dimension:
            raise ValueError(f"point has dimension {arr.shape[0]}, kernel has dimension {dimension}")
        return arr.reshape(1, dimension), True
    if arr.ndim == 2 and arr.shape[1] == dimension:
        return arr, False
    raise ValueError(f"expected (n, {dimension}) points, got shape {arr.shape}")


def _gaussian_sum(points: np.ndarray, weights, sigmas, peak: float) -> np.ndarray:
    r2 = np.sum(points * points, axis=1)
    values = np.zeros(points.shape[0])
    for a, s in zip(weights, sigmas):
        values += a * np.exp(-r2 / (2.0 * s * s))
    values[np.abs(values) < FLUSH_RELATIVE * peak] = 0.0
    return values


# ======================================================================
# Operations
# ======================================================================

def eval_g(kernel: Kernel, x) -> float | np.ndarray:
    """Evaluate the blur kernel G at one point or a batch of points.

    Parameters
    ----------
    kernel : Kernel
    x : scalar, (d,) point, or (n, d) array (for d=1 also (n,)).

    Returns
    -------
    float for a single point, (n,) array for a batch.
    """
    points, single = _as_points(x, kernel.dimension)
    comps = kernel.components
    values = _gaussian_sum(points, [a for a, _ in comps], [s for _, s in comps],
                           kernel.peak_value)
    return float(values[0]) if single else values


def build_auto_kernel(kernel: Kernel) -> AutoKernel:
    """Return the closed-form autocorrelation H = G * G.

    The convolution of two centered isotropic Gaussians with peak
    amplitudes a, b and standard deviations s, t is a Gaussian with
    standard deviation sqrt(s^2 + t^2) and peak amplitude

        a * b * (2 pi s^2 t^2 / (s^2 + t^2)) ** (d / 2).

    Expanding the product of the component sums and merging equal-width
    terms gives one component for a single Gaussian (std sigma*sqrt(2))
    and three for the two-Gaussian mixture.
    """
    comps = kernel.components
    d = kernel.dimension
    merged: dict[float, float] = {}
    for i, (a, s) in enumerate(comps):
        for j, (b, t) in enumerate(comps):
            var = s * s + t * t
            amp = a * b * (2.0 * np.pi * s * s * t * t / var) ** (d / 2.0)
            key = round(var, 15)
            merged[key] = merged.get(key, 0.0) + amp
    pairs = sorted(merged.items())
    return AutoKernel(source=kernel,
                      weights=tuple(amp for _, amp in pairs),
                      sigmas=tuple(float(np.sqrt(var)) for var, _ in pairs))


def eval_h(auto: AutoKernel, x) -> float | np.ndarray:
    """Evaluate the autocorrelation H at one point or a batch of points."""
    points, single = _as_points(x, auto.dimension)
    values = _gaussian_sum(points, auto.weights, auto.sigmas, auto.value_at_zero)
    return float(values[0]) if single else values


def hessian_at_zero(auto: AutoKernel) -> np.ndarray:
    """Exact Hessian of H at the origin: a negative multiple of the identity.

    Each component a * exp(-r^2 / (2 s^2)) contributes -(a / s^2) I, so
    the result is sum_i -(w_i / s_i^2) times the d x d identity.
    """
    scalar = -sum(a / (s * s) for a, s in zip(auto.weights, auto.sigmas))
    return scalar * np.eye(auto.dimension)
