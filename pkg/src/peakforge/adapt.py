"""The adaptive refine-solve-recover loop.

Each iteration solves the l1 problem on the current mesh, keeps the
nodes whose coefficients exceed a small fraction of the maximum, prunes
elements with no retained node, groups the survivors into connected
clusters, and inserts element centroids (respecting a minimum node
spacing) inside each cluster.  The loop stops when a pass inserts no
node and removes no element, or when the iteration budget runs out;
one peak is then recovered per cluster (or per sign group within a
cluster, see below).

Mixed-sign clusters are handled by policy:

* ``split`` (default): partition the cluster's active nodes by
  coefficient sign into connected sub-groups and recover one peak per
  group.  This resolves adjacent positive/negative sources.
* ``aggregate``: treat the whole signed cluster as one peak with the
  dominant sign.  This matches the closed-form recovery convention on
  coarse grids where a single source produces sign-alternating side
  lobes around its main pair of nodes.

The regularization weight defaults to a fraction of the current mesh's
lambda_max and is recomputed each iteration; ``lambda_freeze`` keeps
the first iteration's absolute value instead.  Recovery uses the
measured dual value averaged over each group's nodes as its effective
lambda, which equals the solver's lambda exactly for the plain solver
and generalizes it honestly for reweighted rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from peakforge.forward import ObservationSet, assemble_operator
from peakforge.kernels import AutoKernel, Kernel, build_auto_kernel
from peakforge.mesh import Cluster, Mesh, cluster_elements, prune_elements, refine_cluster
from peakforge.recovery import RecoveredPeak, SignConflictError, recover_cluster
from peakforge.solver import (QuadraticProblem, SparseSolution, lambda_max_from_problem,
                              problem_from_operator, solve_hal_gram, solve_lasso_gram)

NODE_CARRY_TOL = 1e-12


# ======================================================================
# Configuration and trace
# ======================================================================

@dataclass(frozen=True)
class AdaptConfig:
    """Settings for one adaptive run.

    ``lambda_fraction`` scales the per-mesh lambda_max; ``h_min`` is the
    minimum distance a new node may keep from existing ones, which makes
    it the refinement's termination scale; ``active_threshold_fraction``
    decides which coefficients count as nonzero for pruning and recovery.
    """

    h_min: float
    lambda_fraction: float = 0.1
    active_threshold_fraction: float = 0.005
    max_iterations: int = 25
    solver: str = "lasso"          # "lasso" or "hal"
    hal_rounds: int = 3
    nonneg: bool = False
    tol: float = 1e-8
    max_sweeps: int = 100_000
    lambda_freeze: bool = False
    sign_policy: str = "split"     # "split" or "aggregate"
    single_node_correction: bool = False
    min_element_measure: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.lambda_fraction < 1.0:
            raise ValueError("lambda_fraction must lie in (0, 1)")
        if self.h_min <= 0.0:
            raise ValueError("h_min must be positive")
        if not 0.0 <= self.active_threshold_fraction < 1.0:
            raise ValueError("active_threshold_fraction must lie in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.solver not in ("lasso", "hal"):
            raise ValueError("solver must be 'lasso' or 'hal'")
        if self.sign_policy not in ("split", "aggregate"):
            raise ValueError("sign_policy must be 'split' or 'aggregate'")


@dataclass(frozen=True)
class AdaptIteration:
    """One row of the run trace, keeping the mesh and solution snapshots."""

    generation: int
    mesh: Mesh
    solution: SparseSolution
    lam: float
    active_node_count: int
    cluster_count: int
    inserted_node_count: int
    elements_removed: int

    def summary(self) -> dict:
        return {
            "generation": self.generation,
            "lambda": self.lam,
            "nodeCount": self.mesh.node_count,
            "elementCount": self.mesh.element_count,
            "activeNodeCount": self.active_node_count,
            "clusterCount": self.cluster_count,
            "insertedNodeCount": self.inserted_node_count,
            "elementsRemoved": self.elements_removed,
            "solverConverged": self.solution.converged,
            "dualityGap": self.solution.duality_gap,
        }


@dataclass(frozen=True)
class AdaptResult:
    """Recovered peaks plus the full iteration trace."""

    peaks: Tuple[RecoveredPeak, ...]
    iterations: Tuple[AdaptIteration, ...]
    converged: bool
    final_mesh: Mesh
    final_solution: SparseSolution
    final_clusters: Tuple[Cluster, ...]
    sign_conflicts: Tuple[int, ...] = ()

    def trace_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": [it.summary() for it in self.iterations],
            "peakCount": len(self.peaks),
            "signConflicts": list(self.sign_conflicts),
        }


# ======================================================================
# Pieces
# ======================================================================

def active_set(solution: SparseSolution, threshold_fraction: float) -> Set[int]:
    """Nodes whose |coefficient| exceeds the fraction of the maximum."""
    c = solution.coefficients
    if c.size == 0:
        return set()
    top = float(np.max(np.abs(c)))
    if top == 0.0:
        return set()
    return set(np.flatnonzero(np.abs(c) > threshold_fraction * top).tolist())


def carry_coefficients(old_mesh: Mesh, new_mesh: Mesh, coefficients: np.ndarray) -> np.ndarray:
    """Warm start for the next mesh: copy node-for-node, zero elsewhere."""
    carried = np.zeros(new_mesh.node_count)
    if old_mesh.node_count == 0 or new_mesh.node_count == 0:
        return carried
    dists = cdist(new_mesh.nodes, old_mesh.nodes)
    nearest = np.argmin(dists, axis=1)
    hit = dists[np.arange(new_mesh.node_count), nearest] <= NODE_CARRY_TOL
    carried[hit] = coefficients[nearest[hit]]
    return carried


def merge_submeshes(submeshes: Sequence[Mesh], dimension: int, generation: int) -> Mesh:
    """Union of per-cluster meshes with exact-duplicate nodes merged."""
    index: Dict[bytes, int] = {}
    nodes: List[np.ndarray] = []
    elements: List[List[int]] = []
    for sub in submeshes:
        local = []
        for node in sub.nodes:
            key = node.tobytes()
            if key not in index:
                index[key] = len(nodes)
                nodes.append(node)
            local.append(index[key])
        for element in sub.elements:
            elements.append([local[int(n)] for n in element])
    return Mesh(dimension=dimension,
                nodes=np.asarray(nodes).reshape(-1, dimension),
                elements=np.asarray(elements, dtype=int).reshape(-1, dimension + 1),
                generation=generation)


def _sign_groups(node_ids: Sequence[int], coefficients: np.ndarray,
                 mesh: Mesh, cluster: Cluster) -> List[List[int]]:
    """Connected same-sign groups of active nodes inside one cluster.

    Two nodes are adjacent when they share a cluster element.  Groups
    are ordered by smallest node index.
    """
    ids = sorted(node_ids)
    sign_of = {k: np.sign(coefficients[k]) for k in ids}
    adjacency: Dict[int, Set[int]] = {k: set() for k in ids}
    id_set = set(ids)
    for e in cluster.element_ids:
        members = [int(n) for n in mesh.elements[e] if int(n) in id_set]
        for a in members:
            for b in members:
                if a != b and sign_of[a] == sign_of[b]:
                    adjacency[a].add(b)
    groups: List[List[int]] = []
    seen: Set[int] = set()
    for start in ids:
        if start in seen:
            continue
        stack, comp = [start], []
        seen.add(start)
        while stack:
            k = stack.pop()
            comp.append(k)
            for nb in adjacency[k]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        groups.append(sorted(comp))
    groups.sort(key=lambda g: g[0])
    return groups


def recover_from_clusters(mesh: Mesh, clusters: Sequence[Cluster],
                          coefficients: np.ndarray, duals: np.ndarray,
                          auto: AutoKernel, threshold_fraction: float,
                          sign_policy: str = "split",
                          single_node_correction: bool = False) -> Tuple[List[RecoveredPeak], List[int]]:
    """One recovered peak per cluster (or per sign group).

    ``coefficients`` and ``duals`` are indexed by ``mesh`` nodes.  The
    effective lambda for each group is the mean |dual| over its nodes.
    Returns the peaks and the ids of clusters skipped for sign
    conflicts.
    """
    top = float(np.max(np.abs(coefficients))) if coefficients.size else 0.0
    peaks: List[RecoveredPeak] = []
    conflicts: List[int] = []
    next_id = 0
    for cluster_index, cluster in enumerate(clusters):
        active = [k for k in cluster.node_ids
                  if abs(coefficients[k]) > threshold_fraction * top]
        if not active:
            continue
        signs = {int(np.sign(coefficients[k])) for k in active}
        if len(signs) > 1 and sign_policy == "split":
            groups = _sign_groups(active, coefficients, mesh, cluster)
        else:
            groups = [sorted(active)]
        for group in groups:
            lam_eff = float(np.mean(np.abs(duals[group])))
            try:
                peak = recover_cluster(mesh.nodes[group], coefficients[group],
                                       lam_eff, auto, cluster_id=next_id,
                                       allow_mixed=(sign_policy == "aggregate"),
                                       single_node_correction=single_node_correction)
            except SignConflictError:
                conflicts.append(cluster_index)
                continue
            peaks.append(peak)
            next_id += 1
    return peaks, conflicts


# ======================================================================
# Main loop
# ======================================================================

def run_adaptive(observations: ObservationSet, kernel: Kernel, initial_mesh: Mesh,
                 config: AdaptConfig) -> AdaptResult:
    """Run the full adaptive loop against sampled observations."""
    auto = build_auto_kernel(kernel)
    sample_measure = np.prod([(hi - lo) / observations.grid_size
                              for lo, hi in observations.domain])
    mesh = replace(initial_mesh, generation=0)
    warm: Optional[np.ndarray] = None
    frozen_lam: Optional[float] = None
    records: List[AdaptIteration] = []
    converged = False
    final_state: Optional[tuple] = None

    for iteration in range(config.max_iterations):
        operator = assemble_operator(kernel, mesh, observations.points)
        problem = problem_from_operator(operator, observations.values, sample_measure)
        if config.lambda_freeze and frozen_lam is not None:
            lam = frozen_lam
        else:
            lam = config.lambda_fraction * lambda_max_from_problem(problem)
            if config.lambda_freeze:
                frozen_lam = lam
        if config.solver == "hal":
            solution = solve_hal_gram(problem, lam, tol=config.tol,
                                      max_iter=config.max_sweeps, rounds=config.hal_rounds,
                                      nonneg=config.nonneg, warm_start=warm,
                                      mesh_generation=iteration)
        else:
            solution = solve_lasso_gram(problem, lam, tol=config.tol,
                                        max_iter=config.max_sweeps, nonneg=config.nonneg,
                                        warm_start=warm, mesh_generation=iteration)
        active = active_set(solution, config.active_threshold_fraction)
        pruned, node_map, _ = prune_elements(mesh, active)
        clusters = cluster_elements(pruned)
        elements_removed = mesh.element_count - pruned.element_count
        submeshes = [refine_cluster(cl, pruned, config.h_min, config.min_element_measure)
                     for cl in clusters]
        inserted = sum(sub.node_count - len(cl.node_ids)
                       for sub, cl in zip(submeshes, clusters))
        records.append(AdaptIteration(
            generation=iteration, mesh=mesh, solution=solution, lam=lam,
            active_node_count=len(active), cluster_count=len(clusters),
            inserted_node_count=inserted, elements_removed=elements_removed))
        final_state = (mesh, pruned, node_map, clusters, solution)
        if not active:
            converged = True
            break
        if inserted == 0 and elements_removed == 0:
            converged = True
            break
        next_mesh = merge_submeshes(submeshes, mesh.dimension, iteration + 1)
        warm = carry_coefficients(mesh, next_mesh, solution.coefficients)
        mesh = next_mesh

    mesh, pruned, node_map, clusters, solution = final_state
    # Re-index coefficients and duals onto the pruned mesh for recovery.
    coeffs = np.zeros(pruned.node_count)
    duals = np.zeros(pruned.node_count)
    for old, new in node_map.items():
        coeffs[new] = solution.coefficients[old]
        duals[new] = solution.duals[old]
    peaks, conflicts = recover_from_clusters(
        pruned, clusters, coeffs, duals, auto,
        threshold_fraction=config.active_threshold_fraction,
        sign_policy=config.sign_policy,
        single_node_correction=config.single_node_correction)
    return AdaptResult(peaks=tuple(peaks), iterations=tuple(records),
                       converged=converged, final_mesh=pruned,
                       final_solution=solution, final_clusters=tuple(clusters),
                       sign_conflicts=tuple(conflicts))
