"""Optimality diagnostics: the dual-certificate curve and error bounds.

For a solution mu^N = sum_k c_k delta_{x_k} of the l1 problem, define
the scaled correlation field

    v(x) = [ (G*f)(x) - sum_k c_k H(x - x_k) ] / lambda.

At an exact optimum |v| <= 1 at every node, with equality (and matching
sign) on the support.  Three derived quantities are exposed:

* optimality curve  p(x) = v(x) - 1 (zero on the support of a
  nonnegative solution, negative elsewhere, -1 far away),
* clamped field     q(x) = clamp(v(x), -1, 1),
* overshoot         r(x) = v(x) - q(x), which is nonzero only where the
  discretization is too coarse and drives the a-posteriori bound

      ||G*(mu - mu^N)||^2  <=  lambda * sup|r| * sum_l |gamma_l|.

(G*f) comes in closed form from the ground truth when available, or by
trapezoid quadrature against sampled observations otherwise (documented
approximation for noisy data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from peakforge.forward import GroundTruth, ObservationSet, evaluate_field
from peakforge.kernels import AutoKernel, Kernel, eval_g, eval_h
from peakforge.mesh import Mesh, uniform_mesh
from peakforge.solver import (SparseSolution, lambda_max_from_problem,
                              problem_from_truth, solve_lasso_gram)

DENSE_SAMPLES_PER_INTERVAL = 100


# ======================================================================
# Field
# ======================================================================

@dataclass(frozen=True)
class OptimalityField:
    """Evaluates v, p, q, r for one solution against truth or data."""

    auto: AutoKernel
    nodes: np.ndarray
    coefficients: np.ndarray
    lam: float
    truth: Optional[GroundTruth] = None
    observations: Optional[ObservationSet] = None

    def __post_init__(self) -> None:
        if self.truth is None and self.observations is None:
            raise ValueError("need ground truth or observations to evaluate the field")
        if self.lam <= 0.0:
            raise ValueError("lambda must be positive")
        object.__setattr__(self, "nodes", np.atleast_2d(np.asarray(self.nodes, dtype=float)))
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float).ravel())
        if self.nodes.shape[0] != self.coefficients.shape[0]:
            raise ValueError("one coefficient per node required")
        if self.observations is not None:
            object.__setattr__(self, "_quad_weights", _trapezoid_weights(self.observations))

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def kernel(self) -> Kernel:
        return self.auto.source

    def data_correlation(self, points: np.ndarray) -> np.ndarray:
        """(G*f)(x): closed form through H for truth, quadrature for data."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.truth is not None:
            out = np.zeros(points.shape[0])
            for loc, amp in zip(self.truth.locations, self.truth.amplitudes):
                out += amp * eval_h(self.auto, points - loc)
            return out
        obs = self.observations
        weights = self._quad_weights * obs.values
        out = np.empty(points.shape[0])
        for i, x in enumerate(points):
            out[i] = float(weights @ eval_g(self.kernel, obs.points - x))
        return out

    def model_correlation(self, points: np.ndarray) -> np.ndarray:
        """(H * mu^N)(x) = sum_k c_k H(x - x_k)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(points.shape[0])
        for node, coef in zip(self.nodes, self.coefficients):
            if coef != 0.0:
                out += coef * eval_h(self.auto, points - node)
        return out

    def raw(self, points: np.ndarray) -> np.ndarray:
        """v(x) = ((G*f) - H*mu^N) / lambda."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return (self.data_correlation(points) - self.model_correlation(points)) / self.lam


def _trapezoid_weights(obs: ObservationSet) -> np.ndarray:
    """Composite trapezoid weights over the pixel-center lattice."""
    m = obs.grid_size
    spacings = [(hi - lo) / m for lo, hi in obs.domain]
    axis = np.ones(m)
    axis[0] = axis[-1] = 0.5
    if obs.dimension == 1:
        return spacings[0] * axis
    return (spacings[0] * spacings[1]) * np.outer(axis, axis).ravel()


def make_field(auto: AutoKernel, mesh: Mesh, solution: SparseSolution,
               truth: Optional[GroundTruth] = None,
               observations: Optional[ObservationSet] = None) -> OptimalityField:
    """Bundle a solution with its mesh and data source for evaluation."""
    return OptimalityField(auto=auto, nodes=mesh.nodes,
                           coefficients=solution.coefficients, lam=solution.lam,
                           truth=truth, observations=observations)


# ======================================================================
# Operations
# ======================================================================

def eval_optimality_curve(field: OptimalityField, points: np.ndarray) -> Union[float, np.ndarray]:
    """p(x) = v(x) - 1; scalar in, scalar out."""
    arr = np.asarray(points, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and field.dimension > 1)
    values = field.raw(points) - 1.0
    return float(values[0]) if single else values


def residual_field(field: OptimalityField, points: np.ndarray) -> Dict[str, np.ndarray]:
    """The clamped field q and the overshoot r at the given points."""
    v = field.raw(points)
    q = np.clip(v, -1.0, 1.0)
    return {"q": q, "r": v - q}


def dense_sample_1d(nodes: np.ndarray, samples_per_interval: int = DENSE_SAMPLES_PER_INTERVAL) -> np.ndarray:
    """Deterministic scan lattice: every node plus a fixed number of
    interior samples per mesh interval."""
    xs = np.sort(np.asarray(nodes, dtype=float).ravel())
    pieces = [xs]
    for a, b in zip(xs[:-1], xs[1:]):
        pieces.append(np.linspace(a, b, samples_per_interval + 2)[1:-1])
    return np.sort(np.concatenate(pieces)).reshape(-1, 1)


def sup_r(field: OptimalityField, points: np.ndarray) -> float:
    """sup |r| over the given sample points."""
    return float(np.max(np.abs(residual_field(field, points)["r"])))


def sup_r_scan(truth: GroundTruth, kernel: Kernel, grid_sizes: Sequence[int],
               lambda_fraction: float = 0.1,
               domain: Sequence = ((0.0, 1.0),),
               samples_per_interval: int = DENSE_SAMPLES_PER_INTERVAL,
               tol: float = 1e-10) -> List[dict]:
    """Residual overshoot versus grid size for a 1D truth.

    For each node count N: solve on the uniform N-node grid with
    lambda = lambda_fraction * lambda_max(N), then record
    sup |r| over the dense scan lattice.
    """
    from peakforge.kernels import build_auto_kernel

    if truth.dimension != 1:
        raise ValueError("the residual scan is defined for 1D truths")
    auto = build_auto_kernel(kernel)
    results = []
    for n in grid_sizes:
        mesh = uniform_mesh(domain, int(n))
        problem = problem_from_truth(auto, mesh.nodes, truth)
        lam = lambda_fraction * lambda_max_from_problem(problem)
        solution = solve_lasso_gram(problem, lam, tol=tol)
        field = make_field(auto, mesh, solution, truth=truth)
        samples = dense_sample_1d(mesh.nodes, samples_per_interval)
        results.append({"N": int(n), "supR": sup_r(field, samples),
                        "lambda": lam, "converged": solution.converged})
    return results


def fidelity_term(field: OptimalityField, truth: GroundTruth,
                  points_per_sigma: int = 8) -> float:
    """||G*(mu - mu^N)||^2 by trapezoid quadrature on a padded lattice.

    The integrand is the blurred difference field of the signed spike
    set (truth minus solution support); the lattice step is the smallest
    kernel width divided by ``points_per_sigma`` and the padding is six
    autocorrelation widths, beyond which the flushed tails vanish.
    """
    kernel = field.kernel
    sigmas = [s for _, s in kernel.components]
    step = min(sigmas) / points_per_sigma
    pad = 6.0 * max(field.auto.sigmas)
    active = field.coefficients != 0.0
    locs = np.vstack([truth.locations, field.nodes[active]])
    amps = np.concatenate([truth.amplitudes, -field.coefficients[active]])
    lo = locs.min(axis=0) - pad
    hi = locs.max(axis=0) + pad
    if field.dimension == 1:
        xs = np.arange(lo[0], hi[0] + step, step)
        g = evaluate_field(kernel, locs, amps, xs.reshape(-1, 1))
        return float(np.trapz(g * g, xs))
    # 2D: tensor trapezoid, row chunks to bound memory.
    xs = np.arange(lo[0], hi[0] + step, step)
    ys = np.arange(lo[1], hi[1] + step, step)
    row_integrals = np.empty(xs.shape[0])
    for i, x in enumerate(xs):
        pts = np.column_stack([np.full(ys.shape[0], x), ys])
        g = evaluate_field(kernel, locs, amps, pts)
        row_integrals[i] = np.trapz(g * g, ys)
    return float(np.trapz(row_integrals, xs))


def aposteriori_bound(field: OptimalityField, truth: GroundTruth,
                      samples: Optional[np.ndarray] = None,
                      samples_per_interval: int = DENSE_SAMPLES_PER_INTERVAL) -> Dict[str, float]:
    """Both sides of the a-posteriori estimate.

    Returns ``supR`` (residual overshoot over the scan lattice),
    ``tvMass`` (sum of true amplitude magnitudes), their product with
    lambda as ``bound``, and the quadrature ``fidelity`` term
    ||G*(mu - mu^N)||^2 that the bound dominates.
    """
    if samples is None:
        if field.dimension == 1:
            samples = dense_sample_1d(field.nodes, samples_per_interval)
        else:
            lo = field.nodes.min(axis=0)
            hi = field.nodes.max(axis=0)
            pad = 3.0 * max(field.auto.sigmas)
            xs = np.linspace(lo[0] - pad, hi[0] + pad, 201)
            ys = np.linspace(lo[1] - pad, hi[1] + pad, 201)
            gx, gy = np.meshgrid(xs, ys, indexing="ij")
            samples = np.column_stack([gx.ravel(), gy.ravel()])
    sup_val = sup_r(field, samples)
    tv_mass = float(np.sum(np.abs(truth.amplitudes)))
    return {
        "supR": sup_val,
        "tvMass": tv_mass,
        "bound": field.lam * sup_val * tv_mass,
        "fidelity": fidelity_term(field, truth),
    }
