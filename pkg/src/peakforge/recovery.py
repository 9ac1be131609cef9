"""Sub-grid peak extraction from clusters of nonzero coefficients.

A converged l1 solution approximates each point source by a small
cluster of nonzero coefficients on the mesh.  Taylor-expanding the
active-node optimality conditions around the cluster turns them into a
linear system for the source location, and their zeroth-order balance
gives the amplitude:

* amplitude:  gamma = sum_k c_k + lambda * s / H(0)  (s the common sign),
* location:   pairwise difference rows
  gamma (x_i - x_j)' W xi = gamma/2 (x_i' W x_i - x_j' W x_j)
                            - 1/2 sum_k c_k (F_k(x_i) - F_k(x_j))
                            - lambda (s_i - s_j),
  with W the Hessian of the autocorrelation at zero and
  F_k(x) = (x - x_k)' W (x - x_k), solved in least squares over all
  node pairs.  The sign term vanishes for single-signed clusters, which
  is the usual case; it keeps the rows exact when a cluster mixing both
  signs is deliberately treated as one peak.

Two-node 1D clusters reduce to closed forms (midpoint plus a skew
proportional to the coefficient imbalance).  Single-node clusters take
the node location and the bare coefficient as the amplitude; a flag
adds the lambda / H(0) correction instead for callers that want the
uncorrected-shrinkage convention.

Estimated locations are always returned inside the convex hull of the
cluster's support nodes (least-squares output is projected back when
numerical noise pushes it outside).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from peakforge.kernels import AutoKernel, hessian_at_zero

HULL_SLACK = 1e-9


class SignConflictError(ValueError):
    """A cluster mixes signs where a single-signed peak was required."""


@dataclass(frozen=True)
class RecoveredPeak:
    """One estimated point source: where, how strong, and from which cluster."""

    location: np.ndarray
    amplitude: float
    cluster_id: int
    support_size: int
    sign: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "location", np.atleast_1d(np.asarray(self.location, dtype=float)))

    @property
    def dimension(self) -> int:
        return self.location.shape[0]

    def to_dict(self) -> dict:
        return {
            "clusterId": self.cluster_id,
            "location": self.location.tolist(),
            "amplitude": self.amplitude,
            "supportSize": self.support_size,
            "sign": self.sign,
        }


# ======================================================================
# Helpers
# ======================================================================

def _check_signs(coefficients: np.ndarray, allow_mixed: bool) -> int:
    if np.any(coefficients == 0.0):
        raise ValueError("cluster coefficients must be nonzero")
    signs = np.sign(coefficients)
    if not allow_mixed and signs.min() != signs.max():
        raise SignConflictError("cluster mixes positive and negative coefficients")
    total = float(np.sum(coefficients))
    if total == 0.0:
        raise SignConflictError("cluster coefficients cancel exactly; no dominant sign")
    return int(np.sign(total))


def _project_to_segment(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return a.copy()
    t = float((point - a) @ ab) / denom
    return a + min(max(t, 0.0), 1.0) * ab


def project_to_hull(point: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Project a point onto the convex hull of the support nodes.

    No-op (up to slack) when the point is already inside.  Degenerate
    supports (single node, collinear sets) reduce to segment or point
    projections.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] == 1:
        return positions[0].copy()
    if positions.shape[1] == 1:
        lo, hi = float(positions.min()), float(positions.max())
        return np.array([min(max(float(point[0]), lo), hi)])
    if positions.shape[0] == 2:
        return _project_to_segment(point, positions[0], positions[1])
    try:
        hull = ConvexHull(positions)
    except QhullError:
        # Collinear support: project onto the extreme segment.
        center = positions.mean(axis=0)
        u, _, vt = np.linalg.svd(positions - center, full_matrices=False)
        axis = vt[0]
        proj = (positions - center) @ axis
        a = center + proj.min() * axis
        b = center + proj.max() * axis
        return _project_to_segment(point, a, b)
    violations = hull.equations[:, :-1] @ point + hull.equations[:, -1]
    if float(violations.max()) <= HULL_SLACK:
        return point
    vertices = hull.points[hull.vertices]
    best, best_d = None, np.inf
    for i in range(len(vertices)):
        cand = _project_to_segment(point, vertices[i], vertices[(i + 1) % len(vertices)])
        d = float(np.linalg.norm(cand - point))
        if d < best_d:
            best, best_d = cand, d
    return best


# ======================================================================
# Operations
# ======================================================================

def recover_1d(positions: np.ndarray, coefficients: np.ndarray, lam: float, h0: float,
               cluster_id: int = 0, single_node_correction: bool = False) -> RecoveredPeak:
    """Closed-form recovery from one or two adjacent 1D nodes.

    Two nodes x_k < x_{k+1} with same-signed c_k, c_{k+1} give

        gamma = c_k + c_{k+1} + lambda * s / H(0)
        xi    = (x_k + x_{k+1}) / 2
                + (c_{k+1} - c_k) / (2 gamma) * (x_{k+1} - x_k).

    A single node returns its own coordinate; the amplitude is the bare
    coefficient unless ``single_node_correction`` adds lambda * s / H(0).
    """
    x = np.asarray(positions, dtype=float).reshape(-1)
    c = np.asarray(coefficients, dtype=float).reshape(-1)
    if x.shape[0] not in (1, 2) or c.shape[0] != x.shape[0]:
        raise ValueError("recover_1d expects 1 or 2 nodes with matching coefficients")
    if lam <= 0.0 or h0 <= 0.0:
        raise ValueError("lambda and H(0) must be positive")
    s = _check_signs(c, allow_mixed=False)
    if x.shape[0] == 1:
        amplitude = float(c[0]) + (lam * s / h0 if single_node_correction else 0.0)
        return RecoveredPeak(location=np.array([x[0]]), amplitude=amplitude,
                             cluster_id=cluster_id, support_size=1, sign=s)
    order = np.argsort(x)
    x, c = x[order], c[order]
    amplitude = float(c[0] + c[1]) + lam * s / h0
    location = 0.5 * (x[0] + x[1]) + (c[1] - c[0]) / (2.0 * amplitude) * (x[1] - x[0])
    location = min(max(location, x[0]), x[1])
    return RecoveredPeak(location=np.array([location]), amplitude=amplitude,
                         cluster_id=cluster_id, support_size=2, sign=s)


def recover_nd(positions: np.ndarray, coefficients: np.ndarray, lam: float,
               auto: AutoKernel, cluster_id: int = 0, allow_mixed: bool = False,
               single_node_correction: bool = False) -> RecoveredPeak:
    """Least-squares recovery from a cluster of nodes in any dimension.

    Builds one difference row per node pair (see module docstring) and
    solves for the location.  When the difference rows do not span the
    ambient space (two nodes in 2D, collinear supports), the location is
    parameterized over the affine span of the nodes and the reduced
    system is solved instead, which keeps the estimate inside the
    support hull.

    ``allow_mixed`` enables the mixed-sign aggregate convention: the
    dominant sign defines the peak and the sign-difference terms stay in
    the rows.  Without it, mixed signs raise :class:`SignConflictError`.
    """
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    c = np.asarray(coefficients, dtype=float).reshape(-1)
    if x.shape[0] != c.shape[0] or x.shape[0] == 0:
        raise ValueError("positions and coefficients must match and be nonempty")
    if lam <= 0.0:
        raise ValueError("lambda must be positive")
    m, d = x.shape
    s = _check_signs(c, allow_mixed=allow_mixed)
    h0 = auto.value_at_zero

    if m == 1:
        amplitude = float(c[0]) + (lam * s / h0 if single_node_correction else 0.0)
        return RecoveredPeak(location=x[0].copy(), amplitude=amplitude,
                             cluster_id=cluster_id, support_size=1, sign=s)

    amplitude = float(np.sum(c)) + lam * s / h0
    hess = hessian_at_zero(auto)

    # Quadratic form values q_i = x_i' W x_i and T_i = sum_k c_k F_k(x_i).
    qf = np.einsum("id,de,ie->i", x, hess, x)
    t_vals = np.empty(m)
    for i in range(m):
        diff = x[i] - x
        t_vals[i] = float(c @ np.einsum("kd,de,ke->k", diff, hess, diff))
    signs = np.sign(c)

    rows, rhs = [], []
    for i in range(m):
        for j in range(i + 1, m):
            rows.append(amplitude * (x[i] - x[j]) @ hess)
            rhs.append(0.5 * amplitude * (qf[i] - qf[j])
                       - 0.5 * (t_vals[i] - t_vals[j])
                       - lam * (signs[i] - signs[j]))
    a_mat = np.asarray(rows)
    b_vec = np.asarray(rhs)

    rank = np.linalg.matrix_rank(a_mat, tol=1e-10 * max(1.0, float(np.abs(a_mat).max())))
    if rank >= d:
        location = np.linalg.lstsq(a_mat, b_vec, rcond=None)[0]
    else:
        # Affine-span parameterization: xi = center + V t with V from the
        # node spread, so under-determined directions never leave the hull.
        center = x.mean(axis=0)
        _, svals, vt = np.linalg.svd(x - center, full_matrices=False)
        scale = float(svals.max()) if svals.size else 0.0
        keep = vt[svals > 1e-12 * max(scale, 1.0)]
        if keep.shape[0] == 0:
            location = center
        else:
            reduced = a_mat @ keep.T
            t = np.linalg.lstsq(reduced, b_vec - a_mat @ center, rcond=None)[0]
            location = center + keep.T @ t
    location = project_to_hull(location, x)
    return RecoveredPeak(location=location, amplitude=amplitude,
                         cluster_id=cluster_id, support_size=m, sign=s)


def recover_cluster(positions: np.ndarray, coefficients: np.ndarray, lam: float,
                    auto: AutoKernel, cluster_id: int = 0, allow_mixed: bool = False,
                    single_node_correction: bool = False) -> RecoveredPeak:
    """Dispatch to the 1D closed form or the general least-squares system."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    if x.shape[1] == 1 and x.shape[0] <= 2 and not allow_mixed:
        return recover_1d(x[:, 0], coefficients, lam, auto.value_at_zero,
                          cluster_id=cluster_id, single_node_correction=single_node_correction)
    return recover_nd(x, coefficients, lam, auto, cluster_id=cluster_id,
                      allow_mixed=allow_mixed, single_node_correction=single_node_correction)


def filter_peaks(peaks: Sequence[RecoveredPeak], min_fraction: float) -> list:
    """Drop peaks whose |amplitude| falls below a fraction of the largest.

    Tiny clusters (stray activations barely above the solver tolerance)
    recover into peaks orders of magnitude weaker than the real sources;
    this removes them without touching the dominant set.  A
    ``min_fraction`` of 0 keeps everything.
    """
    if not 0.0 <= min_fraction < 1.0:
        raise ValueError("min_fraction must be in [0, 1)")
    peaks = list(peaks)
    if min_fraction == 0.0 or not peaks:
        return peaks
    cutoff = min_fraction * max(abs(p.amplitude) for p in peaks)
    return [p for p in peaks if abs(p.amplitude) >= cutoff]


def merge_peaks(peaks: Sequence[RecoveredPeak], radius: float) -> list:
    """Combine same-signed peaks closer together than ``radius``.

    When one source fragments into disjoint support clusters separated
    by a ring of inactive nodes, each fragment is recovered on its own.
    This step collapses such fragments into a single peak at their
    amplitude-weighted location with the amplitudes summed.  Peaks of
    opposite sign are never combined, whatever their distance.  A radius
    of 0 keeps everything as is.

    Merging is transitive (chains of peaks within ``radius`` of a
    neighbor form one group), so the radius should stay well below the
    smallest genuine source separation.
    """
    if radius < 0.0:
        raise ValueError("radius must be nonnegative")
    peaks = list(peaks)
    if radius == 0.0 or len(peaks) < 2:
        return peaks

    parent = list(range(len(peaks)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(peaks)):
        for j in range(i + 1, len(peaks)):
            if peaks[i].sign != peaks[j].sign:
                continue
            if float(np.linalg.norm(peaks[i].location - peaks[j].location)) <= radius:
                parent[find(j)] = find(i)

    groups: dict = {}
    for i in range(len(peaks)):
        groups.setdefault(find(i), []).append(i)

    merged = []
    for members in groups.values():
        if len(members) == 1:
            merged.append(peaks[members[0]])
            continue
        parts = [peaks[i] for i in members]
        weights = np.array([abs(p.amplitude) for p in parts])
        if weights.sum() == 0.0:
            weights = np.ones_like(weights)
        locs = np.stack([p.location for p in parts])
        location = (weights[:, None] * locs).sum(axis=0) / weights.sum()
        merged.append(RecoveredPeak(
            location=location,
            amplitude=float(sum(p.amplitude for p in parts)),
            cluster_id=min(p.cluster_id for p in parts),
            support_size=sum(p.support_size for p in parts),
            sign=parts[0].sign))
    merged.sort(key=lambda p: p.cluster_id)
    return merged
