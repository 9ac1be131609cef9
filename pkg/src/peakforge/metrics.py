"""Validation metrics between true and estimated peak sets.

Three complementary numbers:

* mean localization error: average over true peaks of the distance to
  the nearest estimate,
* mean strength error: average absolute amplitude difference against
  that same nearest estimate,
* earth mover's distance: exact optimal transport between the two
  point sets with Euclidean ground cost, by default with both sides
  normalized to unit mass and locations only ("how far would mass have
  to move"), optionally weighting points by |amplitude|.

Empty estimates return ``inf`` rather than raising, so sweeps can
record total failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from peakforge.forward import GroundTruth
from peakforge.recovery import RecoveredPeak

MASS_MODES = ("unit-normalized", "amplitude-weighted")


@dataclass(frozen=True)
class PeakSetComparison:
    """All metrics for one truth/estimate pair, plus the pairing used."""

    mle: float
    mse: float
    emd: float
    matching: Tuple[Tuple[int, int], ...]

    def to_dict(self) -> dict:
        return {"mle": self.mle, "mse": self.mse, "emd": self.emd,
                "matching": [list(pair) for pair in self.matching]}


def _peak_arrays(estimate: Sequence[RecoveredPeak]) -> Tuple[np.ndarray, np.ndarray]:
    locs = np.array([p.location for p in estimate], dtype=float)
    amps = np.array([p.amplitude for p in estimate], dtype=float)
    return locs, amps


def nearest_matching(truth: GroundTruth, estimate: Sequence[RecoveredPeak]) -> List[Tuple[int, int]]:
    """(true index, nearest estimate index) for every true peak."""
    if len(estimate) == 0:
        return []
    locs, _ = _peak_arrays(estimate)
    dists = cdist(truth.locations, locs)
    return [(i, int(np.argmin(dists[i]))) for i in range(truth.count)]


def mean_localization_error(truth: GroundTruth, estimate: Sequence[RecoveredPeak]) -> float:
    """Average distance from each true peak to its nearest estimate."""
    if len(estimate) == 0:
        return math.inf
    locs, _ = _peak_arrays(estimate)
    dists = cdist(truth.locations, locs)
    return float(np.mean(dists.min(axis=1)))


def mean_strength_error(truth: GroundTruth, estimate: Sequence[RecoveredPeak]) -> float:
    """Average |amplitude difference| under the nearest-estimate pairing."""
    if len(estimate) == 0:
        return math.inf
    _, amps = _peak_arrays(estimate)
    total = 0.0
    for ti, ei in nearest_matching(truth, estimate):
        total += abs(float(truth.amplitudes[ti]) - float(amps[ei]))
    return total / truth.count


# ======================================================================
# Earth mover's distance
# ======================================================================

def emd_point_sets(a_points: np.ndarray, a_masses: np.ndarray,
                   b_points: np.ndarray, b_masses: np.ndarray) -> float:
    """Exact optimal-transport cost between two finite weighted point sets.

    Masses must each sum to 1 (the callers normalize).  Equal-cardinality
    uniform marginals reduce to an assignment problem; the general case
    is solved as a transportation linear program.
    """
    a_points = np.atleast_2d(np.asarray(a_points, dtype=float))
    b_points = np.atleast_2d(np.asarray(b_points, dtype=float))
    a_masses = np.asarray(a_masses, dtype=float).ravel()
    b_masses = np.asarray(b_masses, dtype=float).ravel()
    cost = cdist(a_points, b_points)
    na, nb = cost.shape
    uniform_a = np.allclose(a_masses, 1.0 / na)
    uniform_b = np.allclose(b_masses, 1.0 / nb)
    if na == nb and uniform_a and uniform_b:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / na)
    # Transportation LP: minimize <cost, plan> with fixed marginals.
    a_eq = []
    b_eq = []
    for i in range(na):
        row = np.zeros(na * nb)
        row[i * nb:(i + 1) * nb] = 1.0
        a_eq.append(row)
        b_eq.append(a_masses[i])
    for j in range(nb - 1):  # the last column constraint is redundant
        row = np.zeros(na * nb)
        row[j::nb] = 1.0
        a_eq.append(row)
        b_eq.append(b_masses[j])
    res = linprog(cost.ravel(), A_eq=np.asarray(a_eq), b_eq=np.asarray(b_eq),
                  bounds=(0.0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def earth_mover_distance(truth: GroundTruth, estimate: Sequence[RecoveredPeak],
                         mass_mode: str = "unit-normalized") -> float:
    """EMD between true and estimated peak locations.

    ``unit-normalized`` (default) gives every peak equal mass;
    ``amplitude-weighted`` uses |amplitude| shares instead.
    """
    if mass_mode not in MASS_MODES:
        raise ValueError(f"unknown mass mode {mass_mode!r}")
    if len(estimate) == 0:
        return math.inf
    locs, amps = _peak_arrays(estimate)
    if mass_mode == "unit-normalized":
        a_m = np.full(truth.count, 1.0 / truth.count)
        b_m = np.full(len(estimate), 1.0 / len(estimate))
    else:
        a_abs = np.abs(truth.amplitudes)
        b_abs = np.abs(amps)
        if a_abs.sum() == 0.0 or b_abs.sum() == 0.0:
            raise ValueError("amplitude-weighted mode needs nonzero amplitudes")
        a_m = a_abs / a_abs.sum()
        b_m = b_abs / b_abs.sum()
    return emd_point_sets(truth.locations, a_m, locs, b_m)


def compare_peak_sets(truth: GroundTruth, estimate: Sequence[RecoveredPeak],
                      mass_mode: str = "unit-normalized") -> PeakSetComparison:
    """Bundle MLE, MSE, EMD, and the nearest-estimate matching."""
    return PeakSetComparison(
        mle=mean_localization_error(truth, estimate),
        mse=mean_strength_error(truth, estimate),
        emd=earth_mover_distance(truth, estimate, mass_mode),
        matching=tuple(nearest_matching(truth, estimate)),
    )
