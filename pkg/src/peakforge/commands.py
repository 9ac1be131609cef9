"""Implementations behind the CLI subcommands.

Each ``cmd_*`` function runs one pipeline from a validated config, writes
its artifacts under the output directory, and returns a process exit
code: 0 when every requested stage converged, 2 when a solve ran out of
budget (partial outputs are still written and flagged), and 1 for usage
or I/O errors raised by the caller.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Optional

import numpy as np

from peakforge import io, plots
from peakforge.adapt import active_set, recover_from_clusters, run_adaptive
from peakforge.config import ExperimentConfig
from peakforge.diagnostics import dense_sample_1d, make_field, residual_field, sup_r_scan
from peakforge.forward import ObservationSet, assemble_operator, simulate_observations
from peakforge.kernels import build_auto_kernel
from peakforge.mesh import cluster_elements, prune_elements
from peakforge.metrics import compare_peak_sets
from peakforge.recovery import RecoveredPeak, filter_peaks, merge_peaks
from peakforge.solver import (
    QuadraticProblem,
    SparseSolution,
    lambda_max_from_problem,
    problem_from_operator,
    problem_from_truth,
    solve_hal_gram,
    solve_lasso_gram,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


# ======================================================================
# Shared helpers
# ======================================================================

def _sample_measure(domain, grid_size: int) -> float:
    return float(np.prod([(hi - lo) / grid_size for lo, hi in domain]))


def _resolve_observations(cfg: ExperimentConfig, seed: Optional[int],
                          observations_dir: Optional[Path]) -> ObservationSet:
    """Load saved observations when a directory is given, else simulate."""
    if observations_dir is not None:
        return io.load_observations(Path(observations_dir))
    truth = cfg.truth()
    kernel = cfg.kernel()
    grid_size = int(cfg.require("observations.grid_size"))
    snr_db = float(cfg.get("observations.snr_db", math.inf))
    obs_seed = int(seed if seed is not None else cfg.get("observations.seed", 0))
    return simulate_observations(truth, kernel, grid_size, snr_db, obs_seed,
                                 domain=cfg.domain)


def _fidelity_mode(cfg: ExperimentConfig) -> str:
    mode = cfg.get("solve.fidelity")
    if mode is None:
        mode = "sampled" if "observations.grid_size" in cfg.entries else "analysis"
    if mode not in ("analysis", "sampled"):
        raise ValueError(f"unknown fidelity mode {mode!r}")
    return str(mode)


def _resolve_lambda(cfg: ExperimentConfig, problem: QuadraticProblem) -> float:
    spec = cfg.solver_spec()
    if spec.lambda_absolute is not None:
        return spec.lambda_absolute
    return spec.lambda_fraction * lambda_max_from_problem(problem)


def _run_solver(cfg: ExperimentConfig, problem: QuadraticProblem, lam: float,
                mesh_generation: int = 0) -> SparseSolution:
    spec = cfg.solver_spec()
    if spec.mode == "hal":
        return solve_hal_gram(problem, lam, tol=spec.tol, max_iter=spec.max_sweeps,
                              rounds=spec.hal_rounds, nonneg=spec.nonneg,
                              mesh_generation=mesh_generation)
    return solve_lasso_gram(problem, lam, tol=spec.tol, max_iter=spec.max_sweeps,
                            nonneg=spec.nonneg, mesh_generation=mesh_generation)


def _finite_metrics(metrics: dict) -> dict:
    cleaned = {}
    for key, value in metrics.items():
        if isinstance(value, float) and not math.isfinite(value):
            cleaned[key] = None
        else:
            cleaned[key] = value
    return cleaned


def _print_peaks(peaks: List[RecoveredPeak]) -> None:
    for peak in peaks:
        loc = ", ".join(f"{v:.4f}" for v in peak.location)
        print(f"  peak {peak.cluster_id}: location ({loc}) "
              f"amplitude {peak.amplitude:+.4f} support {peak.support_size}")


# ======================================================================
# Commands
# ======================================================================

def cmd_simulate(cfg: ExperimentConfig, out_dir: Path, seed: Optional[int] = None,
                 fmt: str = "csv", figures: bool = True) -> int:
    """Sample the forward model and write the observation artifacts."""
    out = Path(out_dir)
    obs = _resolve_observations(cfg, seed, None)
    artifacts = io.write_observations(out, obs, fmt=fmt)
    if figures:
        artifacts.append(plots.plot_observations(out / "figures" / "observations.png", obs))
    io.write_manifest(out, "simulate", cfg.name, cfg.hash, artifacts, seed=seed)
    achieved = obs.achieved_snr_db()
    label = "inf" if math.isinf(achieved) else f"{achieved:.4f}"
    print(f"simulated {obs.values.size} pixels ({obs.grid_size} per axis)")
    print(f"achieved SNR: {label} dB")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, out_dir: Path, seed: Optional[int] = None,
              fmt: str = "csv", figures: bool = True,
              observations_dir: Optional[Path] = None) -> int:
    """Single solve on the configured mesh, then per-cluster recovery."""
    out = Path(out_dir)
    kernel = cfg.kernel()
    auto = build_auto_kernel(kernel)
    mesh = cfg.mesh()
    mode = _fidelity_mode(cfg)
    truth = cfg.truth() if cfg.has_truth else None

    obs = None
    if mode == "analysis":
        if truth is None:
            raise ValueError("analysis mode needs explicit truth in the config")
        problem = problem_from_truth(auto, mesh.nodes, truth)
    else:
        obs = _resolve_observations(cfg, seed, observations_dir)
        operator = assemble_operator(kernel, mesh, obs.points)
        problem = problem_from_operator(operator, obs.values,
                                        _sample_measure(obs.domain, obs.grid_size))

    lam_max = lambda_max_from_problem(problem)
    lam = _resolve_lambda(cfg, problem)
    if lam >= lam_max:
        print(f"warning: lambda {lam:.6g} >= lambda_max {lam_max:.6g}; "
              "the zero solution is optimal and no peaks will be reported")
    solution = _run_solver(cfg, problem, lam, mesh_generation=mesh.generation)

    threshold = float(cfg.get("recovery.active_threshold", 0.005))
    sign_policy = str(cfg.get("recovery.sign_policy", "split"))
    single_node = bool(cfg.get("recovery.single_node_correction", False))
    peaks: List[RecoveredPeak] = []
    conflicts: List[int] = []
    active = active_set(solution, threshold)
    if active:
        pruned, node_map, _ = prune_elements(mesh, active)
        coeffs = np.zeros(pruned.node_count)
        duals = np.zeros(pruned.node_count)
        for old, new in node_map.items():
            coeffs[new] = solution.coefficients[old]
            duals[new] = solution.duals[old]
        clusters = cluster_elements(pruned)
        peaks, conflicts = recover_from_clusters(
            pruned, clusters, coeffs, duals, auto,
            threshold_fraction=threshold, sign_policy=sign_policy,
            single_node_correction=single_node)
        peaks = merge_peaks(peaks, float(cfg.get("recovery.merge_radius", 0.0)))
        peaks = filter_peaks(peaks, float(cfg.get("recovery.min_amplitude_fraction", 0.0)))

    artifacts = [io.write_mesh(out / "mesh.json", mesh)]
    artifacts.extend(io.write_solution(out / "solution", mesh, solution, fmt=fmt))
    artifacts.extend(io.write_peaks(out / "peaks", peaks, fmt=fmt,
                                    dimension=mesh.dimension))

    field = make_field(auto, mesh, solution, truth=truth if mode == "analysis" else None,
                       observations=obs if mode == "sampled" else None)
    if mesh.dimension == 1:
        samples = dense_sample_1d(mesh.nodes)
    else:
        samples = mesh.nodes
    values = field.raw(samples)
    q = np.clip(values, -1.0, 1.0)
    artifacts.append(io.write_field_samples(out / "field", samples,
                                            values - 1.0, q, values - q, fmt=fmt))

    if truth is not None:
        comparison = compare_peak_sets(truth, peaks)
        artifacts.append(io.write_json(out / "metrics.json",
                                       _finite_metrics(comparison.to_dict())))

    if figures:
        artifacts.append(plots.plot_solution(out / "figures" / "solution.png",
                                             mesh, solution, truth=truth))
        artifacts.append(plots.plot_peaks(out / "figures" / "peaks.png", peaks,
                                          truth=truth))
        if mesh.dimension == 1:
            artifacts.append(plots.plot_field_1d(out / "figures" / "field.png",
                                                 samples[:, 0], values - 1.0,
                                                 values - q))
    io.write_manifest(out, "solve", cfg.name, cfg.hash, artifacts, seed=seed)

    print(f"lambda = {lam:.6g} (lambda_max = {lam_max:.6g})")
    print(f"support size {solution.support.size}, {len(peaks)} recovered peaks"
          + (f", {len(conflicts)} sign-conflict clusters" if conflicts else ""))
    _print_peaks(peaks)
    if not solution.converged:
        print("warning: solver did not converge; outputs are partial")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_adapt(cfg: ExperimentConfig, out_dir: Path, seed: Optional[int] = None,
              fmt: str = "csv", figures: bool = True,
              observations_dir: Optional[Path] = None) -> int:
    """Adaptive refinement loop against sampled observations."""
    out = Path(out_dir)
    kernel = cfg.kernel()
    obs = _resolve_observations(cfg, seed, observations_dir)
    initial_mesh = cfg.mesh()
    adapt_cfg = cfg.adapt_config()
    result = run_adaptive(obs, kernel, initial_mesh, adapt_cfg)
    final_peaks = merge_peaks(list(result.peaks),
                              float(cfg.get("recovery.merge_radius", 0.0)))
    final_peaks = filter_peaks(final_peaks,
                               float(cfg.get("recovery.min_amplitude_fraction", 0.0)))

    artifacts = []
    for record in result.iterations:
        subdir = out / f"iter_{record.generation}"
        artifacts.append(io.write_mesh(subdir / "mesh.json", record.mesh))
        artifacts.extend(io.write_solution(subdir / "solution", record.mesh,
                                           record.solution, fmt=fmt))
    artifacts.extend(io.write_peaks(out / "final" / "peaks", final_peaks, fmt=fmt,
                                    dimension=initial_mesh.dimension))
    artifacts.append(io.write_mesh(out / "final" / "mesh.json", result.final_mesh))
    artifacts.append(io.write_json(out / "trace.json", result.trace_dict()))

    truth = cfg.truth() if cfg.has_truth else None
    if truth is not None:
        comparison = compare_peak_sets(truth, final_peaks)
        artifacts.append(io.write_json(out / "metrics.json",
                                       _finite_metrics(comparison.to_dict())))

    if figures:
        artifacts.append(plots.plot_mesh(out / "figures" / "final_mesh.png",
                                         result.final_mesh))
        artifacts.append(plots.plot_peaks(out / "figures" / "peaks.png",
                                          final_peaks, truth=truth))
    io.write_manifest(out, "adapt", cfg.name, cfg.hash, artifacts, seed=seed)

    last = result.iterations[-1]
    print(f"{len(result.iterations)} iterations, "
          f"final mesh {result.final_mesh.node_count} nodes, "
          f"{len(final_peaks)} recovered peaks")
    if result.sign_conflicts:
        print(f"warning: {len(result.sign_conflicts)} clusters skipped for sign conflicts")
    _print_peaks(final_peaks)
    if not (result.converged and last.solution.converged):
        print("warning: adaptive run did not converge; outputs are partial")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ======================================================================
# Scans
# ======================================================================

def _scan_sup_r(cfg: ExperimentConfig, out: Path, fmt: str, figures: bool) -> int:
    truth = cfg.truth()
    kernel = cfg.kernel()
    grid_sizes = [int(n) for n in np.atleast_1d(cfg.require("scan.grid_sizes"))]
    rows = sup_r_scan(truth, kernel, grid_sizes,
                      lambda_fraction=float(cfg.get("solver.lambda_fraction", 0.1)),
                      domain=cfg.domain,
                      samples_per_interval=int(cfg.get("scan.samples_per_interval", 100)),
                      tol=float(cfg.get("solver.tol", 1e-10)))
    artifacts = [io.write_table(out / "scan", ["N", "supR"],
                                [[r["N"], r["supR"]] for r in rows], fmt)]
    artifacts.append(io.write_json(out / "scan.meta.json", {
        "type": "sup_r",
        "rows": [{"N": r["N"], "lambda": r["lambda"], "converged": r["converged"]}
                 for r in rows]}))
    if figures:
        artifacts.append(plots.plot_scan(out / "figures" / "scan.png",
                                         [r["N"] for r in rows],
                                         [r["supR"] for r in rows],
                                         "grid size", "sup |r|",
                                         logx=True, logy=True))
    io.write_manifest(out, "scan", cfg.name, cfg.hash, artifacts)
    for r in rows:
        print(f"  N={r['N']:4d}  supR={r['supR']:.6e}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED


def _scan_lambda(cfg: ExperimentConfig, out: Path, fmt: str, figures: bool) -> int:
    kernel = cfg.kernel()
    auto = build_auto_kernel(kernel)
    truth = cfg.truth()
    mesh = cfg.mesh()
    problem = problem_from_truth(auto, mesh.nodes, truth)
    lam_max = lambda_max_from_problem(problem)
    fractions = [float(v) for v in np.atleast_1d(cfg.require("scan.lambda_fractions"))]
    spec = cfg.solver_spec()
    rows = []
    all_converged = True
    for fraction in fractions:
        lam = fraction * lam_max
        solution = solve_lasso_gram(problem, lam, tol=spec.tol,
                                    max_iter=spec.max_sweeps)
        all_converged = all_converged and solution.converged
        rows.append([lam, fraction, int(solution.support.size)])
    artifacts = [io.write_table(out / "scan", ["lambda", "fraction", "nonzeroCount"],
                                rows, fmt)]
    artifacts.append(io.write_json(out / "scan.meta.json",
                                   {"type": "lambda", "lambdaMax": lam_max}))
    if figures:
        artifacts.append(plots.plot_scan(out / "figures" / "scan.png",
                                         [r[1] for r in rows],
                                         [r[2] for r in rows],
                                         "lambda / lambda_max", "nonzero count",
                                         logx=True))
    io.write_manifest(out, "scan", cfg.name, cfg.hash, artifacts)
    for lam, fraction, count in rows:
        print(f"  fraction={fraction:.0e}  lambda={lam:.6g}  nonzero={count}")
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def _scan_support(cfg: ExperimentConfig, out: Path, fmt: str, figures: bool) -> int:
    """Sweep a single peak across one mesh interval and record the support."""
    from peakforge.forward import GroundTruth

    kernel = cfg.kernel()
    auto = build_auto_kernel(kernel)
    mesh = cfg.mesh()
    if mesh.dimension != 1:
        raise ValueError("the support scan is defined for 1D meshes")
    base = cfg.truth()
    if base.count != 1:
        raise ValueError("the support scan needs a single-peak truth")
    gamma = float(base.amplitudes[0])
    nodes = mesh.nodes[:, 0]
    k = int(np.argmin(np.abs(nodes - base.locations[0, 0])))
    if k + 1 >= nodes.size:
        raise ValueError("the swept node needs a right neighbor")
    h = float(nodes[k + 1] - nodes[k])
    h0 = auto.value_at_zero
    lam = float(cfg.get("scan.lambda_peak_fraction", 0.1)) * gamma * h0
    threshold = lam * h / (2.0 * gamma * h0)
    count = int(cfg.get("scan.offset_count", 50))
    spec = cfg.solver_spec()

    rows = []
    all_converged = True
    for i in range(1, count + 1):
        offset = (h / 2.0) * i / (count + 1)
        truth = GroundTruth(locations=np.array([[nodes[k] + offset]]),
                            amplitudes=np.array([gamma]))
        problem = problem_from_truth(auto, mesh.nodes, truth)
        solution = solve_lasso_gram(problem, lam, tol=spec.tol,
                                    max_iter=spec.max_sweeps)
        all_converged = all_converged and solution.converged
        support = set(int(j) for j in solution.support)
        predicted = {k} if offset < threshold else {k, k + 1}
        rows.append([offset, len(support), len(predicted),
                     int(support == predicted)])
    artifacts = [io.write_table(out / "scan",
                                ["offset", "supportSize", "predictedSize", "match"],
                                rows, fmt)]
    artifacts.append(io.write_json(out / "scan.meta.json", {
        "type": "support", "h": h, "lambda": lam, "gamma": gamma,
        "autocorrelationPeak": h0, "nodeIndex": k, "threshold": threshold}))
    if figures:
        artifacts.append(plots.plot_scan(out / "figures" / "scan.png",
                                         [r[0] for r in rows],
                                         [r[1] for r in rows],
                                         "peak offset", "support size"))
    io.write_manifest(out, "scan", cfg.name, cfg.hash, artifacts)
    matches = sum(r[3] for r in rows)
    print(f"  support transition threshold {threshold:.6g}; "
          f"{matches}/{len(rows)} offsets match the prediction")
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def cmd_scan(cfg: ExperimentConfig, out_dir: Path, seed: Optional[int] = None,
             fmt: str = "csv", figures: bool = True) -> int:
    """Diagnostic sweeps: residual vs grid size, support vs lambda or offset."""
    out = Path(out_dir)
    scan_type = str(cfg.require("scan.type"))
    if scan_type == "sup_r":
        return _scan_sup_r(cfg, out, fmt, figures)
    if scan_type == "lambda":
        return _scan_lambda(cfg, out, fmt, figures)
    if scan_type == "support":
        return _scan_support(cfg, out, fmt, figures)
    raise ValueError(f"unknown scan type {scan_type!r}")
