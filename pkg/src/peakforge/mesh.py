"""Computational meshes: 1D segment grids and 2D triangulations.

A mesh is a flat list of node coordinates plus integer element tuples
(index pairs in 1D, triples in 2D).  The adaptive loop uses three
operations defined here:

* ``prune_elements`` drops every element whose nodes are all inactive,
  then drops the nodes that are no longer referenced.
* ``cluster_elements`` splits the remaining elements into connected
  components (shared-edge adjacency in 2D, shared-node adjacency in 1D).
* ``refine_cluster`` inserts element centroids that keep a minimum
  node distance, then re-meshes the cluster (sort-and-connect in 1D,
  Delaunay in 2D).

All operations are pure: they return new meshes and never mutate their
inputs.  Meshes serialize to a small JSON dict for per-iteration dumps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

DUPLICATE_NODE_TOL = 1e-12
DEGENERATE_AREA_TOL = 1e-14


# ======================================================================
# Types
# ======================================================================

@dataclass(frozen=True)
class Mesh:
    """Nodes and elements of a 1D or 2D computational domain.

    Fields
    ------
    dimension : 1 or 2
    nodes : (n, d) float array of node coordinates
    elements : (e, d+1) int array of node indices per element
    generation : which pass of the adaptive loop produced this mesh
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    generation: int = 0

    def __post_init__(self) -> None:
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        if nodes.size == 0:
            nodes = nodes.reshape(0, self.dimension)
        elements = np.asarray(self.elements, dtype=int)
        if elements.size == 0:
            elements = elements.reshape(0, self.dimension + 1)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if nodes.shape[0] and nodes.shape[1] != self.dimension:
            raise ValueError(f"nodes have dimension {nodes.shape[1]}, mesh has {self.dimension}")
        if elements.shape[0]:
            if elements.shape[1] != self.dimension + 1:
                raise ValueError("elements must be index pairs (1D) or triples (2D)")
            if elements.min() < 0 or elements.max() >= nodes.shape[0]:
                raise ValueError("element references an out-of-range node")
            for row in elements:
                if len(set(row.tolist())) != len(row):
                    raise ValueError("element references a node twice")
            if self.dimension == 2:
                a, b, c = (self.nodes[elements[:, i]] for i in range(3))
                area = 0.5 * np.abs(np.cross(b - a, c - a))
                if np.any(area <= 0.0):
                    raise ValueError("degenerate (zero-area) triangle")
        if nodes.shape[0] > 1:
            tree = cKDTree(nodes)
            if tree.query_pairs(r=DUPLICATE_NODE_TOL):
                raise ValueError("two mesh nodes coincide within tolerance")

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def element_count(self) -> int:
        return self.elements.shape[0]

    def element_measures(self) -> np.ndarray:
        """Length of each segment (1D) or area of each triangle (2D)."""
        if self.element_count == 0:
            return np.zeros(0)
        if self.dimension == 1:
            a = self.nodes[self.elements[:, 0], 0]
            b = self.nodes[self.elements[:, 1], 0]
            return np.abs(b - a)
        a, b, c = (self.nodes[self.elements[:, i]] for i in range(3))
        return 0.5 * np.abs(np.cross(b - a, c - a))

    def element_centroids(self) -> np.ndarray:
        """(e, d) array of element centroids."""
        if self.element_count == 0:
            return np.zeros((0, self.dimension))
        return self.nodes[self.elements].mean(axis=1)

    def to_dict(self) -> dict:
        """JSON-ready snapshot {dimension, nodes, elements, generation}."""
        return {
            "dimension": self.dimension,
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "generation": self.generation,
        }

    @staticmethod
    def from_dict(data: dict) -> "Mesh":
        return Mesh(dimension=int(data["dimension"]),
                    nodes=np.asarray(data["nodes"], dtype=float).reshape(-1, int(data["dimension"])),
                    elements=np.asarray(data["elements"], dtype=int).reshape(-1, int(data["dimension"]) + 1),
                    generation=int(data.get("generation", 0)))


@dataclass(frozen=True)
class Cluster:
    """A connected component of retained elements on one mesh generation."""

    element_ids: Tuple[int, ...]
    node_ids: Tuple[int, ...]
    mesh_generation: int


# ======================================================================
# Construction
# ======================================================================

def uniform_mesh(domain: Sequence[Tuple[float, float]], counts) -> Mesh:
    """Tensor-product mesh over an axis-aligned box.

    Parameters
    ----------
    domain : sequence of (lo, hi) per axis, e.g. [(0, 1)] or [(0, 1), (0, 1)].
    counts : node count per axis (int or one int per axis), each >= 2.

    Returns
    -------
    Mesh with linspace nodes; consecutive segments in 1D, two triangles
    per grid cell in 2D.
    """
    box = [(float(lo), float(hi)) for lo, hi in (domain if hasattr(domain[0], "__len__") else [domain])]
    d = len(box)
    if d not in (1, 2):
        raise ValueError("domain must have 1 or 2 axes")
    counts_list = [int(counts)] * d if np.isscalar(counts) else [int(c) for c in counts]
    if len(counts_list) != d:
        raise ValueError("one node count per axis required")
    if any(c < 2 for c in counts_list):
        raise ValueError("need at least 2 nodes per axis")
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(box, counts_list)]
    if d == 1:
        nodes = axes[0].reshape(-1, 1)
        idx = np.arange(counts_list[0] - 1)
        elements = np.column_stack([idx, idx + 1])
        return Mesh(dimension=1, nodes=nodes, elements=elements)
    nx, ny = counts_list
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    tris: List[Tuple[int, int, int]] = []
    for ix in range(nx - 1):
        for iy in range(ny - 1):
            n00 = ix * ny + iy
            n10 = (ix + 1) * ny + iy
            n01 = ix * ny + iy + 1
            n11 = (ix + 1) * ny + iy + 1
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    return Mesh(dimension=2, nodes=nodes, elements=np.asarray(tris, dtype=int))


# ======================================================================
# Pruning
# ======================================================================

def prune_elements(mesh: Mesh, active_node_ids: Set[int]) -> Tuple[Mesh, Dict[int, int], Dict[int, int]]:
    """Keep the elements touching at least one active node.

    Nodes no longer referenced by any kept element are dropped.

    Returns
    -------
    (pruned mesh, node index map old -> new, element index map old -> new).
    Dropped indices are absent from the maps.  An empty active set yields
    an empty mesh.
    """
    active = set(int(i) for i in active_node_ids)
    bad = [i for i in active if i < 0 or i >= mesh.node_count]
    if bad:
        raise ValueError(f"active node ids out of range: {bad[:5]}")
    keep_elem = [e for e in range(mesh.element_count)
                 if any(int(n) in active for n in mesh.elements[e])]
    kept_nodes = sorted({int(n) for e in keep_elem for n in mesh.elements[e]})
    node_map = {old: new for new, old in enumerate(kept_nodes)}
    elem_map = {old: new for new, old in enumerate(keep_elem)}
    new_nodes = mesh.nodes[kept_nodes] if kept_nodes else np.zeros((0, mesh.dimension))
    if keep_elem:
        new_elements = np.asarray(
            [[node_map[int(n)] for n in mesh.elements[e]] for e in keep_elem], dtype=int)
    else:
        new_elements = np.zeros((0, mesh.dimension + 1), dtype=int)
    pruned = Mesh(dimension=mesh.dimension, nodes=new_nodes,
                  elements=new_elements, generation=mesh.generation)
    return pruned, node_map, elem_map


# ======================================================================
# Clustering
# ======================================================================

def cluster_elements(mesh: Mesh) -> List[Cluster]:
    """Split elements into connected components.

    Adjacency is a shared edge in 2D (vertex contact does not connect)
    and a shared node in 1D.  Clusters are ordered by their smallest
    contained node index; ids inside each cluster are sorted.
    """
    ne = mesh.element_count
    if ne == 0:
        return []
    adj: List[Set[int]] = [set() for _ in range(ne)]
    if mesh.dimension == 1:
        by_node: Dict[int, List[int]] = {}
        for e in range(ne):
            for n in mesh.elements[e]:
                by_node.setdefault(int(n), []).append(e)
        groups = by_node.values()
    else:
        by_edge: Dict[Tuple[int, int], List[int]] = {}
        for e in range(ne):
            tri = sorted(int(n) for n in mesh.elements[e])
            for edge in ((tri[0], tri[1]), (tri[0], tri[2]), (tri[1], tri[2])):
                by_edge.setdefault(edge, []).append(e)
        groups = by_edge.values()
    for group in groups:
        for a in group:
            for b in group:
                if a != b:
                    adj[a].add(b)

    seen = [False] * ne
    raw_clusters: List[List[int]] = []
    for start in range(ne):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            e = stack.pop()
            comp.append(e)
            for nb in adj[e]:
                if not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        raw_clusters.append(sorted(comp))

    clusters = []
    for comp in raw_clusters:
        node_ids = sorted({int(n) for e in comp for n in mesh.elements[e]})
        clusters.append(Cluster(element_ids=tuple(comp), node_ids=tuple(node_ids),
                                mesh_generation=mesh.generation))
    clusters.sort(key=lambda cl: cl.node_ids[0])
    return clusters


# ======================================================================
# Refinement
# ======================================================================

def default_min_element_measure(h_min: float, dimension: int) -> float:
    """Smallest element measure whose centroid is still a candidate.

    Half the length of a size-``h_min`` segment in 1D, the area of an
    equilateral triangle with side ``h_min`` in 2D.
    """
    if dimension == 1:
        return 0.5 * h_min
    return (np.sqrt(3.0) / 4.0) * h_min * h_min


def _cluster_submesh(cluster: Cluster, mesh: Mesh) -> Mesh:
    local = {old: new for new, old in enumerate(cluster.node_ids)}
    nodes = mesh.nodes[list(cluster.node_ids)]
    elements = np.asarray([[local[int(n)] for n in mesh.elements[e]]
                           for e in cluster.element_ids], dtype=int)
    return Mesh(dimension=mesh.dimension, nodes=nodes, elements=elements,
                generation=mesh.generation)


def refine_cluster(cluster: Cluster, mesh: Mesh, h_min: float,
                   min_element_measure: Optional[float] = None) -> Mesh:
    """Insert admissible element centroids and re-mesh one cluster.

    A centroid is admissible when its parent element's measure is at
    least ``min_element_measure`` (very small elements contribute no
    candidate) and it keeps a distance of ``h_min`` to every mesh node
    and to centroids inserted earlier in the same pass (element-index
    order, so results are deterministic).

    Returns the cluster's sub-mesh: unchanged when nothing is inserted,
    otherwise re-meshed from old plus new nodes (1D: sort and connect;
    2D: Delaunay over the cluster's node set).
    """
    if h_min <= 0:
        raise ValueError("h_min must be positive")
    if min_element_measure is None:
        min_element_measure = default_min_element_measure(h_min, mesh.dimension)

    sub = _cluster_submesh(cluster, mesh)
    measures = sub.element_measures()
    centroids = sub.element_centroids()
    inserted: List[np.ndarray] = []
    guard = mesh.nodes  # distance check against every node of the full mesh
    for e in range(sub.element_count):
        if measures[e] < min_element_measure:
            continue
        cand = centroids[e]
        dist = np.sqrt(np.sum((guard - cand) ** 2, axis=1)).min()
        if inserted:
            dist = min(dist, np.sqrt(np.sum((np.asarray(inserted) - cand) ** 2, axis=1)).min())
        if dist >= h_min:
            inserted.append(cand)
    if not inserted:
        return sub

    nodes = np.vstack([sub.nodes, np.asarray(inserted)])
    if mesh.dimension == 1:
        order = np.argsort(nodes[:, 0], kind="stable")
        nodes = nodes[order]
        idx = np.arange(nodes.shape[0] - 1)
        elements = np.column_stack([idx, idx + 1])
        return Mesh(dimension=1, nodes=nodes, elements=elements, generation=mesh.generation)
    try:
        tri = Delaunay(nodes)
    except QhullError:
        # Collinear or otherwise untriangulable node set: keep the old mesh.
        return sub
    simplices = np.asarray(tri.simplices, dtype=int)
    a, b, c = (nodes[simplices[:, i]] for i in range(3))
    areas = 0.5 * np.abs(np.cross(b - a, c - a))
    # Qhull can emit sliver triangles from near-collinear node sets; a
    # mesh with such elements would fail validation downstream.
    simplices = simplices[areas > DEGENERATE_AREA_TOL]
    if simplices.shape[0] == 0:
        return sub
    used = np.unique(simplices)
    remap = -np.ones(nodes.shape[0], dtype=int)
    remap[used] = np.arange(used.size)
    return Mesh(dimension=2, nodes=nodes[used], elements=remap[simplices],
                generation=mesh.generation)
