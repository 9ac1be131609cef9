"""peakforge: sparse peak recovery from blurred observations.

The package solves l1-regularized deconvolution problems on adaptively
refined grids, extracts sub-grid peak locations and amplitudes from the
converged coefficients, and ships the diagnostics, metrics, and CLI used
to validate and reproduce the bundled experiments.

Modules
-------
kernels      Gaussian-sum point-spread kernels and their autocorrelation.
mesh         1D segment grids and 2D triangulations: prune, cluster, refine.
forward      Operator assembly and synthetic observation generation.
solver       Coordinate-descent LASSO, reweighted rounds, duality gap.
recovery     Closed-form sub-grid peak extraction from active clusters.
diagnostics  Optimality curves, residual scans, a-posteriori error bound.
adapt        The adaptive refine-solve-recover loop.
metrics      Localization and strength errors, earth-mover distance.
config       Experiment configuration parsing (key = value files).
cli          Command-line entry points (simulate, solve, adapt, scan).
"""

from peakforge.kernels import Kernel, AutoKernel, eval_g, build_auto_kernel, eval_h, hessian_at_zero
from peakforge.mesh import Mesh, Cluster, uniform_mesh, prune_elements, cluster_elements, refine_cluster
from peakforge.forward import GroundTruth, ObservationSet, assemble_operator, simulate_observations
from peakforge.solver import SparseSolution, lambda_max, solve_lasso, solve_hal
from peakforge.recovery import RecoveredPeak, recover_1d, recover_nd
from peakforge.metrics import (
    compare_peak_sets,
    earth_mover_distance,
    mean_localization_error,
    mean_strength_error,
)

__version__ = "0.1.0"
