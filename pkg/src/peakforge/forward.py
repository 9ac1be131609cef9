"""Forward model: operator assembly and synthetic observations.

The discrete model evaluates a sum of kernel translates at measurement
points.  For imaging runs the measurement points are pixel centers
(j + 1/2) / M per axis of the domain box, stored row-major (first axis
outermost), and noise is white Gaussian scaled to a requested SNR in dB:

    10 * log10(sum(signal^2) / sum(noise^2)) = snr_db.

The noise scale is solved against the realized standard-normal draw, so
the stored observation set reproduces the requested SNR exactly when
recomputed from its own arrays.  ``snr_db = inf`` disables noise.

Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64); one
draw of M^d standard normals in pixel order per simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from peakforge.kernels import Kernel, eval_g
from peakforge.mesh import Mesh

UNIT_BOX_1D = ((0.0, 1.0),)
UNIT_BOX_2D = ((0.0, 1.0), (0.0, 1.0))

_ROW_CHUNK = 2048


# ======================================================================
# Types
# ======================================================================

@dataclass(frozen=True)
class GroundTruth:
    """The point sources to be recovered: locations and amplitudes."""

    locations: np.ndarray    # (L, d)
    amplitudes: np.ndarray   # (L,)

    def __post_init__(self) -> None:
        locs = np.atleast_2d(np.asarray(self.locations, dtype=float))
        amps = np.asarray(self.amplitudes, dtype=float).ravel()
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "amplitudes", amps)
        if locs.shape[0] != amps.shape[0]:
            raise ValueError("one amplitude per location required")
        if locs.shape[0] == 0:
            raise ValueError("at least one peak required")
        for i in range(locs.shape[0]):
            for j in range(i + 1, locs.shape[0]):
                if np.linalg.norm(locs[i] - locs[j]) < 1e-12:
                    raise ValueError("two peak locations coincide")

    @property
    def count(self) -> int:
        return self.locations.shape[0]

    @property
    def dimension(self) -> int:
        return self.locations.shape[1]


@dataclass(frozen=True)
class ObservationSet:
    """Sampled measurements with their noise metadata.

    ``values = signal + noise`` always holds; ``signal`` is the noiseless
    forward evaluation and ``noise`` the realized scaled Gaussian draw.
    """

    points: np.ndarray      # (M^d, d) measurement points, pixel centers
    values: np.ndarray      # (M^d,)
    signal: np.ndarray      # (M^d,) noiseless part
    noise: np.ndarray       # (M^d,) realized noise
    grid_size: int
    snr_db: float
    seed: Optional[int]
    scale: float
    domain: Tuple[Tuple[float, float], ...]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def achieved_snr_db(self) -> float:
        """SNR recomputed from the stored arrays (inf when noiseless)."""
        p_noise = float(np.sum(self.noise ** 2))
        if p_noise == 0.0:
            return math.inf
        return 10.0 * math.log10(float(np.sum(self.signal ** 2)) / p_noise)


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense sampling operator: entries[j, k] = G(z_j - x_k)."""

    entries: np.ndarray
    kernel: Kernel
    mesh_generation: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


# ======================================================================
# Operations
# ======================================================================

def pixel_centers(grid_size: int, domain: Sequence[Tuple[float, float]]) -> np.ndarray:
    """Pixel-center measurement points, row-major over the axes."""
    if grid_size < 2:
        raise ValueError("grid size must be at least 2")
    box = [(float(lo), float(hi)) for lo, hi in domain]
    axes = [lo + (hi - lo) * (np.arange(grid_size) + 0.5) / grid_size for lo, hi in box]
    if len(box) == 1:
        return axes[0].reshape(-1, 1)
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def evaluate_field(kernel: Kernel, locations: np.ndarray, amplitudes: np.ndarray,
                   points: np.ndarray) -> np.ndarray:
    """sum_l amplitudes[l] * G(points - locations[l]), vectorized in chunks."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(points.shape[0])
    for loc, amp in zip(np.atleast_2d(locations), np.ravel(amplitudes)):
        out += amp * eval_g(kernel, points - loc)
    return out


def assemble_operator(kernel: Kernel, mesh: Mesh, obs_points: np.ndarray) -> OperatorMatrix:
    """Build the dense operator A[j, k] = G(z_j - x_k).

    Rows are processed in fixed-size chunks with a fixed summation order,
    so the result does not depend on threading.
    """
    points = np.atleast_2d(np.asarray(obs_points, dtype=float))
    if points.shape[1] != mesh.dimension:
        raise ValueError("observation points and mesh dimension differ")
    if mesh.dimension != kernel.dimension:
        raise ValueError("kernel and mesh dimension differ")
    nodes = mesh.nodes
    entries = np.empty((points.shape[0], nodes.shape[0]))
    comps = kernel.components
    peak = kernel.peak_value
    for start in range(0, points.shape[0], _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, points.shape[0])
        diff = points[start:stop, None, :] - nodes[None, :, :]
        r2 = np.sum(diff * diff, axis=2)
        block = np.zeros_like(r2)
        for a, s in comps:
            block += a * np.exp(-r2 / (2.0 * s * s))
        block[block < 1e-16 * peak] = 0.0
        entries[start:stop] = block
    return OperatorMatrix(entries=entries, kernel=kernel, mesh_generation=mesh.generation)


def apply_operator(operator: OperatorMatrix, coefficients: np.ndarray) -> np.ndarray:
    """Matrix-vector product A @ c."""
    c = np.asarray(coefficients, dtype=float).ravel()
    if c.shape[0] != operator.entries.shape[1]:
        raise ValueError(f"expected {operator.entries.shape[1]} coefficients, got {c.shape[0]}")
    return operator.entries @ c


def simulate_observations(truth: GroundTruth, kernel: Kernel, grid_size: int,
                          snr_db: float, seed: Optional[int] = None,
                          domain: Optional[Sequence[Tuple[float, float]]] = None) -> ObservationSet:
    """Sample the blurred sources on a pixel grid and add scaled noise.

    Parameters
    ----------
    truth : GroundTruth
    kernel : Kernel
    grid_size : pixels per axis (M)
    snr_db : target SNR in dB; ``inf`` means noiseless
    seed : RNG seed for the noise draw
    domain : (lo, hi) per axis; defaults to the unit box

    Returns
    -------
    ObservationSet whose recomputed SNR equals ``snr_db`` exactly.
    """
    if domain is None:
        domain = UNIT_BOX_1D if truth.dimension == 1 else UNIT_BOX_2D
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError("snr_db must be a real number or +inf")
    points = pixel_centers(grid_size, domain)
    if points.shape[1] != truth.dimension:
        raise ValueError("domain and truth dimension differ")
    signal = evaluate_field(kernel, truth.locations, truth.amplitudes, points)
    if math.isinf(snr_db):
        noise = np.zeros_like(signal)
        scale = 0.0
    else:
        rng = np.random.default_rng(seed)
        draw = rng.standard_normal(points.shape[0])
        p_signal = float(np.sum(signal ** 2))
        p_draw = float(np.sum(draw ** 2))
        scale = math.sqrt(p_signal / (p_draw * 10.0 ** (snr_db / 10.0)))
        noise = scale * draw
    return ObservationSet(points=points, values=signal + noise, signal=signal,
                          noise=noise, grid_size=grid_size, snr_db=snr_db,
                          seed=seed, scale=scale,
                          domain=tuple((float(lo), float(hi)) for lo, hi in domain))
