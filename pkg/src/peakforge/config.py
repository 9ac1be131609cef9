"""Experiment configuration files.

Configs are plain text, one ``key = value`` per line:

* ``#`` starts a comment (rest of line ignored), blank lines are skipped;
* keys are dotted lower-case paths, e.g. ``kernel.sigma``;
* values are numbers (``0.05``, ``1e-8``, ``inf``), booleans
  (``true``/``false``), bare strings, or comma-separated lists; a
  parenthesized group ``(x, y)`` nests a tuple, so 2D point lists read
  naturally: ``truth.locations = (0.22, 0.10), (0.66, 0.16)``.

The full key schema lives in docs/formats.md.  ``ExperimentConfig``
validates on load and exposes typed builders for each pipeline stage.
A short content hash is recorded in every output manifest so artifacts
can be traced back to the exact config text that produced them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from peakforge.adapt import AdaptConfig
from peakforge.forward import GroundTruth
from peakforge.kernels import Kernel
from peakforge.mesh import Mesh, uniform_mesh


# ======================================================================
# Parsing
# ======================================================================

def _parse_scalar(token: str) -> Any:
    text = token.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _split_top_level(text: str) -> List[str]:
    parts, depth, current = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
            current.append(ch)
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ValueError(f"unbalanced parentheses in {text!r}")
            current.append(ch)
        elif ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if depth != 0:
        raise ValueError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(current))
    return [p.strip() for p in parts if p.strip()]


def _parse_value(text: str) -> Any:
    text = text.strip()
    parts = _split_top_level(text)
    values = []
    for part in parts:
        if part.startswith("(") and part.endswith(")"):
            inner = _parse_value(part[1:-1])
            if not isinstance(inner, list):
                inner = [inner]
            values.append(tuple(inner))
        else:
            values.append(_parse_scalar(part))
    if len(values) == 1:
        return values[0]
    return values


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse config text into a flat {dotted key: value} dict."""
    entries: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        entries[key] = _parse_value(value)
    return entries


def config_hash(text: str) -> str:
    """Short stable hash of the parsed content (whitespace-insensitive)."""
    entries = parse_config_text(text)
    canonical = "\n".join(f"{k} = {entries[k]!r}" for k in sorted(entries))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# ======================================================================
# Typed access
# ======================================================================

def _as_list(value: Any) -> List[Any]:
    if isinstance(value, list):
        return value
    return [value]


@dataclass(frozen=True)
class SolverSpec:
    mode: str = "lasso"
    lambda_fraction: Optional[float] = 0.1
    lambda_absolute: Optional[float] = None
    tol: float = 1e-8
    max_sweeps: int = 100_000
    hal_rounds: int = 3
    nonneg: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """A parsed, validated experiment description."""

    name: str
    entries: Dict[str, Any]
    hash: str

    # -- plumbing ------------------------------------------------------

    @staticmethod
    def from_text(text: str, name: str = "inline") -> "ExperimentConfig":
        cfg = ExperimentConfig(name=name, entries=parse_config_text(text),
                               hash=config_hash(text))
        cfg.validate()
        return cfg

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        p = Path(path)
        return ExperimentConfig.from_text(p.read_text(), name=p.stem)

    def get(self, key: str, default: Any = None) -> Any:
        return self.entries.get(key, default)

    def require(self, key: str) -> Any:
        if key not in self.entries:
            raise ValueError(f"config {self.name}: missing required key {key!r}")
        return self.entries[key]

    # -- validation ----------------------------------------------------

    def validate(self) -> None:
        d = self.dimension
        if d not in (1, 2):
            raise ValueError(f"config {self.name}: dimension must be 1 or 2")
        for lo, hi in self.domain:
            if not hi > lo:
                raise ValueError(f"config {self.name}: empty domain axis ({lo}, {hi})")
        frac = self.get("solver.lambda_fraction")
        if frac is not None and not 0.0 < float(frac) < 1.0:
            raise ValueError(f"config {self.name}: solver.lambda_fraction must lie in (0, 1)")
        m = self.get("observations.grid_size")
        if m is not None and int(m) < 2:
            raise ValueError(f"config {self.name}: observations.grid_size must be >= 2")
        thr = self.get("recovery.active_threshold", self.get("adapt.active_threshold"))
        if thr is not None and not 0.0 <= float(thr) < 1.0:
            raise ValueError(f"config {self.name}: active threshold must lie in [0, 1)")
        floor = self.get("recovery.min_amplitude_fraction")
        if floor is not None and not 0.0 <= float(floor) < 1.0:
            raise ValueError(
                f"config {self.name}: recovery.min_amplitude_fraction must lie in [0, 1)")
        radius = self.get("recovery.merge_radius")
        if radius is not None and float(radius) < 0.0:
            raise ValueError(
                f"config {self.name}: recovery.merge_radius must be >= 0")
        self.kernel()  # raises on bad kernel parameters

    # -- sections ------------------------------------------------------

    @property
    def dimension(self) -> int:
        return int(self.get("dimension", 1))

    @property
    def has_truth(self) -> bool:
        return "truth.locations" in self.entries or "truth.random.count" in self.entries

    @property
    def domain(self) -> Tuple[Tuple[float, float], ...]:
        raw = self.get("domain")
        if raw is None:
            return ((0.0, 1.0),) * self.dimension
        items = _as_list(raw)
        if items and not isinstance(items[0], tuple):
            items = [tuple(items)]
        box = tuple((float(lo), float(hi)) for lo, hi in items)
        if len(box) != self.dimension:
            raise ValueError(f"config {self.name}: domain axes != dimension")
        return box

    def kernel(self) -> Kernel:
        variant = self.get("kernel.variant", "isotropic-gaussian")
        normalization = self.get("kernel.normalization", "unit-mass")
        if variant == "isotropic-gaussian":
            return Kernel(variant=variant, dimension=self.dimension,
                          normalization=normalization,
                          sigma=float(self.require("kernel.sigma")))
        return Kernel(variant=variant, dimension=self.dimension,
                      normalization=normalization,
                      alpha=float(self.require("kernel.alpha")),
                      sigma1=float(self.require("kernel.sigma1")),
                      sigma2=float(self.require("kernel.sigma2")))

    def truth(self) -> GroundTruth:
        if "truth.locations" in self.entries:
            locs = _as_list(self.entries["truth.locations"])
            if self.dimension == 1:
                locations = np.asarray([[float(v)] for v in locs])
            else:
                locations = np.asarray([[float(a), float(b)] for a, b in locs])
            amps = np.asarray([float(v) for v in _as_list(self.require("truth.amplitudes"))])
            return GroundTruth(locations=locations, amplitudes=amps)
        count = int(self.require("truth.random.count"))
        seed = int(self.get("truth.random.seed", 0))
        min_sep = float(self.get("truth.random.min_separation", 0.0))
        margin = float(self.get("truth.random.margin", 0.0))
        amplitude = float(self.get("truth.random.amplitude", 1.0))
        return random_truth(self.domain, count, seed, min_sep, margin, amplitude)

    def mesh(self) -> Mesh:
        counts = _as_list(self.require("mesh.counts"))
        if len(counts) == 1 and self.dimension == 2:
            counts = counts * 2
        return uniform_mesh(self.domain, [int(c) for c in counts])

    def solver_spec(self) -> SolverSpec:
        return SolverSpec(
            mode=str(self.get("solver.mode", "lasso")),
            lambda_fraction=(None if "solver.lambda_absolute" in self.entries
                             else float(self.get("solver.lambda_fraction", 0.1))),
            lambda_absolute=(float(self.entries["solver.lambda_absolute"])
                             if "solver.lambda_absolute" in self.entries else None),
            tol=float(self.get("solver.tol", 1e-8)),
            max_sweeps=int(self.get("solver.max_sweeps", 100_000)),
            hal_rounds=int(self.get("solver.hal_rounds", 3)),
            nonneg=bool(self.get("solver.nonneg", False)),
        )

    def adapt_config(self) -> AdaptConfig:
        spec = self.solver_spec()
        return AdaptConfig(
            h_min=float(self.require("adapt.h_min")),
            lambda_fraction=float(self.get("solver.lambda_fraction", 0.1)),
            active_threshold_fraction=float(self.get("adapt.active_threshold", 0.005)),
            max_iterations=int(self.get("adapt.max_iterations", 25)),
            solver=spec.mode,
            hal_rounds=spec.hal_rounds,
            nonneg=spec.nonneg,
            tol=spec.tol,
            max_sweeps=spec.max_sweeps,
            lambda_freeze=bool(self.get("adapt.lambda_freeze", False)),
            sign_policy=str(self.get("adapt.sign_policy", "split")),
            single_node_correction=bool(self.get("recovery.single_node_correction", False)),
        )


def shipped_config_names() -> List[str]:
    """Names of the configs bundled with the package."""
    directory = Path(__file__).with_name("configs")
    return sorted(p.stem for p in directory.glob("*.cfg"))


def load_shipped_config(name: str) -> ExperimentConfig:
    """Load one of the bundled experiment configs by name."""
    path = Path(__file__).with_name("configs") / f"{name}.cfg"
    if not path.exists():
        known = ", ".join(shipped_config_names())
        raise ValueError(f"no shipped config named {name!r} (have: {known})")
    return ExperimentConfig.from_file(path)


def random_truth(domain: Sequence[Tuple[float, float]], count: int, seed: int,
                 min_separation: float, margin: float, amplitude: float) -> GroundTruth:
    """Rejection-sample well-separated peak locations inside the domain."""
    rng = np.random.default_rng(seed)
    lows = np.array([lo + margin * (hi - lo) for lo, hi in domain])
    highs = np.array([hi - margin * (hi - lo) for lo, hi in domain])
    points: List[np.ndarray] = []
    attempts = 0
    while len(points) < count:
        attempts += 1
        if attempts > 10_000 * count:
            raise RuntimeError("could not place random peaks with the requested separation")
        cand = lows + (highs - lows) * rng.random(len(domain))
        if all(np.linalg.norm(cand - p) >= min_separation for p in points):
            points.append(cand)
    return GroundTruth(locations=np.asarray(points),
                       amplitudes=np.full(count, amplitude))
