"""Figure rendering for CLI reports.

All helpers draw onto a fresh figure and save straight to disk using the
Agg backend, so they work headless.  Each returns the written path.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from peakforge.forward import GroundTruth, ObservationSet
from peakforge.mesh import Mesh
from peakforge.recovery import RecoveredPeak
from peakforge.solver import SparseSolution

_DPI = 140


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_observations(path: Path, obs: ObservationSet) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if obs.points.shape[1] == 1:
        ax.plot(obs.points[:, 0], obs.values, lw=1.0, color="tab:blue")
        ax.set_xlabel("position")
        ax.set_ylabel("measured value")
    else:
        m = obs.grid_size
        img = obs.values.reshape(m, m).T
        lo0, hi0 = obs.domain[0]
        lo1, hi1 = obs.domain[1]
        im = ax.imshow(img, origin="lower", extent=(lo0, hi0, lo1, hi1),
                       cmap="viridis", aspect="equal")
        fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(f"observations ({obs.grid_size} per axis)")
    return _save(fig, path)


def plot_solution(path: Path, mesh: Mesh, solution: SparseSolution,
                  truth: Optional[GroundTruth] = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    c = solution.coefficients
    if mesh.dimension == 1:
        x = mesh.nodes[:, 0]
        markerline, stemlines, _ = ax.stem(x, c, basefmt=" ")
        plt.setp(markerline, markersize=3)
        plt.setp(stemlines, linewidth=1.0)
        if truth is not None:
            ax.plot(truth.locations[:, 0], truth.amplitudes, "r*",
                    markersize=9, label="true peaks")
            ax.legend(loc="best")
        ax.set_xlabel("position")
        ax.set_ylabel("coefficient")
    else:
        live = np.abs(c) > 0
        ax.triplot(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements,
                   lw=0.3, color="0.8")
        sc = ax.scatter(mesh.nodes[live, 0], mesh.nodes[live, 1],
                        s=12 + 240 * np.abs(c[live]) / max(np.abs(c).max(), 1e-300),
                        c=c[live], cmap="coolwarm")
        fig.colorbar(sc, ax=ax, shrink=0.85)
        if truth is not None:
            ax.plot(truth.locations[:, 0], truth.locations[:, 1], "k*",
                    markersize=9, label="true peaks")
            ax.legend(loc="best")
        ax.set_aspect("equal")
    ax.set_title(f"coefficients (generation {solution.mesh_generation})")
    return _save(fig, path)


def plot_peaks(path: Path, peaks: Sequence[RecoveredPeak],
               truth: Optional[GroundTruth] = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    dim = len(peaks[0].location) if peaks else (truth.dimension if truth else 1)
    if dim == 1:
        if truth is not None:
            ax.stem(truth.locations[:, 0], truth.amplitudes, basefmt=" ",
                    linefmt="r-", markerfmt="r*", label="true")
        if peaks:
            xs = [p.location[0] for p in peaks]
            ys = [p.amplitude for p in peaks]
            ax.plot(xs, ys, "bo", markersize=5, fillstyle="none", label="recovered")
        ax.set_xlabel("position")
        ax.set_ylabel("amplitude")
    else:
        if truth is not None:
            ax.plot(truth.locations[:, 0], truth.locations[:, 1], "r*",
                    markersize=10, label="true")
        if peaks:
            xs = [p.location[0] for p in peaks]
            ys = [p.location[1] for p in peaks]
            ax.plot(xs, ys, "bo", markersize=6, fillstyle="none", label="recovered")
        ax.set_aspect("equal")
    ax.legend(loc="best")
    ax.set_title("recovered peaks")
    return _save(fig, path)


def plot_field_1d(path: Path, x: np.ndarray, p: np.ndarray,
                  r: np.ndarray) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(x, p, lw=1.0, color="tab:blue", label="certificate excess p")
    ax.plot(x, r, lw=1.0, color="tab:orange", label="overshoot r")
    ax.axhline(0.0, color="0.6", lw=0.6)
    ax.set_xlabel("position")
    ax.legend(loc="best")
    ax.set_title("optimality diagnostics")
    return _save(fig, path)


def plot_mesh(path: Path, mesh: Mesh, highlight: Optional[np.ndarray] = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    if mesh.dimension == 1:
        x = mesh.nodes[:, 0]
        ax.plot(x, np.zeros_like(x), "|", markersize=14, color="tab:blue")
        ax.set_yticks([])
    else:
        ax.triplot(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements,
                   lw=0.5, color="tab:blue")
        ax.set_aspect("equal")
    if highlight is not None and highlight.size:
        pts = np.atleast_2d(mesh.nodes[highlight])
        ys = pts[:, 1] if mesh.dimension == 2 else np.zeros(pts.shape[0])
        ax.plot(pts[:, 0], ys, "r.", markersize=5)
    ax.set_title(f"mesh ({mesh.nodes.shape[0]} nodes, generation {mesh.generation})")
    return _save(fig, path)


def plot_scan(path: Path, xs: Sequence[float], ys: Sequence[float],
              xlabel: str, ylabel: str, logx: bool = False,
              logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(xs, ys, "o-", color="tab:blue")
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", lw=0.3, alpha=0.6)
    return _save(fig, path)
