"""Axis-aligned tensor-product finite-volume meshes in 2D and 3D.

Control volumes are boxes, centers are barycenters, so the segment joining two
neighboring centers is orthogonal to their shared face and the classical
two-point flux approximation is consistent.  The mesh stores, per interior
face sigma = K|L, the measure m_sigma, the center distance d_KL and the unit
normal oriented K -> L; boundary faces are kept for validation only (the
schemes in this package assign them zero flux).

Cell data is held in flat numpy arrays (structure-of-arrays); per-entity
dataclass views are materialized lazily for inspection and JSON export.
Meshes are immutable after construction and safe to share across threads
and processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import MeshError
from .fields import CellField

__all__ = [
    "Cell",
    "InteriorEdge",
    "BoundaryEdge",
    "TensorMesh",
    "AdmissibilityReport",
    "build_tensor_mesh",
    "refine",
    "cell_average",
    "mesh_regularity",
    "validate_admissibility",
    "injection_map",
    "inject",
]

#: Gauss-Legendre order used for all cell / face quadratures (exact through
#: polynomial degree 2*order - 1 = 5 per axis).  Recorded in reports.
QUADRATURE_ORDER = 3


def gauss_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on the reference interval [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True, eq=False)
class Cell:
    index: int
    center: np.ndarray
    measure: float
    diameter: float
    edge_ids: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class InteriorEdge:
    index: int
    cells: tuple[int, int]
    measure: float
    distance: float
    normal: np.ndarray
    axis: int


@dataclass(frozen=True, eq=False)
class BoundaryEdge:
    index: int
    cell: int
    measure: float
    normal: np.ndarray
    axis: int


@dataclass(frozen=True, eq=False)
class TensorMesh:
    """Admissible tensor-product mesh on an axis-aligned box."""

    dimension: int
    nodes: tuple[np.ndarray, ...]          # per-axis interval boundaries
    cell_counts: tuple[int, ...]
    centers: np.ndarray                    # (n_cells, d)
    measures: np.ndarray                   # (n_cells,)
    diameters: np.ndarray                  # (n_cells,)
    cell_lower: np.ndarray                 # (n_cells, d)
    cell_upper: np.ndarray                 # (n_cells, d)
    edge_cells: np.ndarray                 # (n_edges, 2) int, oriented K -> L
    edge_measures: np.ndarray              # (n_edges,)
    edge_distances: np.ndarray             # (n_edges,)  d_KL
    edge_normals: np.ndarray               # (n_edges, d), n_{K,sigma}
    edge_axis: np.ndarray                  # (n_edges,) int
    edge_planes: np.ndarray                # (n_edges,) interface coordinate
    edge_lower: np.ndarray                 # (n_edges, d) face box, zero extent on axis
    edge_upper: np.ndarray                 # (n_edges, d)
    bedge_cells: np.ndarray                # (n_bedges,) int
    bedge_measures: np.ndarray
    bedge_normals: np.ndarray              # (n_bedges, d), outward
    bedge_axis: np.ndarray
    bedge_lower: np.ndarray
    bedge_upper: np.ndarray

    # -- basic quantities -------------------------------------------------

    @property
    def n_cells(self) -> int:
        return self.measures.shape[0]

    @property
    def n_interior_edges(self) -> int:
        return self.edge_measures.shape[0]

    @property
    def n_boundary_edges(self) -> int:
        return self.bedge_measures.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return np.array([ax[0] for ax in self.nodes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([ax[-1] for ax in self.nodes])

    @property
    def domain_measure(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def spacings(self) -> tuple[np.ndarray, ...]:
        return tuple(np.diff(ax) for ax in self.nodes)

    @property
    def size_h(self) -> float:
        """Mesh size: the largest cell diameter."""
        return float(self.diameters.max())

    @cached_property
    def regularity(self) -> float:
        return mesh_regularity(self)

    @cached_property
    def transmissibilities(self) -> np.ndarray:
        """m_sigma / d_KL per interior edge."""
        return self.edge_measures / self.edge_distances

    # -- entity views ------------------------------------------------------

    @cached_property
    def _cell_edge_ids(self) -> tuple[tuple[int, ...], ...]:
        lists: list[list[int]] = [[] for _ in range(self.n_cells)]
        for j in range(self.n_interior_edges):
            k, l = self.edge_cells[j]
            lists[k].append(j)
            lists[l].append(j)
        offset = self.n_interior_edges
        for j in range(self.n_boundary_edges):
            lists[self.bedge_cells[j]].append(offset + j)
        return tuple(tuple(ids) for ids in lists)

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        ids = self._cell_edge_ids
        return tuple(
            Cell(i, self.centers[i], float(self.measures[i]),
                 float(self.diameters[i]), ids[i])
            for i in range(self.n_cells)
        )

    @cached_property
    def interior_edges(self) -> tuple[InteriorEdge, ...]:
        return tuple(
            InteriorEdge(j, (int(self.edge_cells[j, 0]), int(self.edge_cells[j, 1])),
                         float(self.edge_measures[j]), float(self.edge_distances[j]),
                         self.edge_normals[j], int(self.edge_axis[j]))
            for j in range(self.n_interior_edges)
        )

    @cached_property
    def boundary_edges(self) -> tuple[BoundaryEdge, ...]:
        return tuple(
            BoundaryEdge(j, int(self.bedge_cells[j]), float(self.bedge_measures[j]),
                         self.bedge_normals[j], int(self.bedge_axis[j]))
            for j in range(self.n_boundary_edges)
        )

    def edge_quadrature(self, edge_index: int,
                        order: int = None) -> tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss rule on one interior face: (points, weights).

        Points have shape (order^(d-1), d) and lie in the face; weights sum
        to the face measure, so dot(weights, f(points)) integrates f over
        the face (exactly for degree 2*order - 1 per tangential axis).
        """
        if order is None:
            order = QUADRATURE_ORDER
        gx, gw = gauss_rule(order)
        axis = int(self.edge_axis[edge_index])
        lo = self.edge_lower[edge_index]
        ext = self.edge_upper[edge_index] - lo
        tang = [b for b in range(self.dimension) if b != axis]
        n_pts = order ** len(tang)
        points = np.empty((n_pts, self.dimension))
        points[:, axis] = self.edge_planes[edge_index]
        weights = np.full(n_pts, self.edge_measures[edge_index])
        for i, combo in enumerate(np.ndindex(*([order] * len(tang)))):
            for t_axis, c in zip(tang, combo):
                points[i, t_axis] = lo[t_axis] + ext[t_axis] * gx[c]
            for c in combo:
                weights[i] *= gw[c]
        return points, weights

    # -- export ------------------------------------------------------------

    def to_summary_dict(self, include_entities: bool = True) -> dict:
        """JSON-ready summary of the mesh (for debugging / mesh-info)."""
        out = {
            "dimension": self.dimension,
            "cell_counts": list(self.cell_counts),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "n_cells": self.n_cells,
            "n_interior_edges": self.n_interior_edges,
            "n_boundary_edges": self.n_boundary_edges,
            "size_h": self.size_h,
            "regularity": self.regularity,
            "domain_measure": self.domain_measure,
            "cell_measure_sum": float(self.measures.sum()),
            "quadrature_order": QUADRATURE_ORDER,
        }
        if include_entities:
            out["cells"] = {
                "centers": self.centers.tolist(),
                "measures": self.measures.tolist(),
                "diameters": self.diameters.tolist(),
            }
            out["interior_edges"] = {
                "cells": self.edge_cells.tolist(),
                "measures": self.edge_measures.tolist(),
                "distances": self.edge_distances.tolist(),
                "axis": self.edge_axis.tolist(),
            }
            out["boundary_edges"] = {
                "cells": self.bedge_cells.tolist(),
                "measures": self.bedge_measures.tolist(),
                "axis": self.bedge_axis.tolist(),
            }
        return out


def _broadcast_product(arrays: Sequence[np.ndarray], shape, skip_axis=None):
    """Product over axes (optionally skipping one) of 1D arrays broadcast to shape."""
    out = np.ones(shape)
    for b, arr in enumerate(arrays):
        if b == skip_axis:
            continue
        view = [None] * len(shape)
        view[b] = slice(None)
        out = out * arr[tuple(view)]
    return out


def build_tensor_mesh(
    domain: Sequence[tuple[float, float]],
    cell_counts: Sequence[int],
    spacings: Sequence[Sequence[float]] | None = None,
) -> TensorMesh:
    """Construct an admissible tensor-product mesh on an axis-aligned box.

    Parameters
    ----------
    domain : per-axis (lo, hi) pairs; dimension must be 2 or 3.
    cell_counts : number of cells per axis (>= 1).
    spacings : optional per-axis interval lengths (grading); must be positive
        and sum to the side length.  Uniform spacing when omitted.
    """
    d = len(domain)
    if d not in (2, 3):
        raise MeshError(f"dimension must be 2 or 3, got {d}")
    if len(cell_counts) != d:
        raise MeshError("cell_counts and domain dimensions differ")
    counts = tuple(int(n) for n in cell_counts)
    if any(n < 1 for n in counts):
        raise MeshError(f"invalid geometry: cell counts must be >= 1, got {counts}")

    nodes: list[np.ndarray] = []
    for a, ((lo, hi), n) in enumerate(zip(domain, counts)):
        lo, hi = float(lo), float(hi)
        if not hi > lo:
            raise MeshError(f"invalid geometry: empty extent on axis {a}")
        if spacings is None:
            ax = np.linspace(lo, hi, n + 1)
        else:
            sp = np.asarray(spacings[a], dtype=float)
            if sp.shape != (n,):
                raise MeshError(f"axis {a}: expected {n} spacings, got {sp.shape}")
            if np.any(sp <= 0.0):
                raise MeshError(f"invalid geometry: non-positive spacing on axis {a}")
            if abs(sp.sum() - (hi - lo)) > 1e-12 * (hi - lo):
                raise MeshError(f"invalid geometry: spacings on axis {a} do not "
                                f"sum to the side length")
            ax = lo + np.concatenate([[0.0], np.cumsum(sp)])
            ax[-1] = hi
        nodes.append(ax)
    return _build_from_nodes(tuple(nodes))


def _build_from_nodes(nodes: tuple[np.ndarray, ...]) -> TensorMesh:
    d = len(nodes)
    counts = tuple(len(ax) - 1 for ax in nodes)
    sps = [np.diff(ax) for ax in nodes]
    mids = [(ax[:-1] + ax[1:]) / 2.0 for ax in nodes]

    # cells, C-order over the multi-index
    measures = _broadcast_product(sps, counts).ravel()
    grids = np.meshgrid(*mids, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    diam_sq = np.zeros(counts)
    for b in range(d):
        view = [None] * d
        view[b] = slice(None)
        diam_sq = diam_sq + sps[b][tuple(view)] ** 2
    diameters = np.sqrt(diam_sq).ravel()
    low_grids = np.meshgrid(*[ax[:-1] for ax in nodes], indexing="ij")
    up_grids = np.meshgrid(*[ax[1:] for ax in nodes], indexing="ij")
    cell_lower = np.stack([g.ravel() for g in low_grids], axis=1)
    cell_upper = np.stack([g.ravel() for g in up_grids], axis=1)

    cell_index = np.arange(int(np.prod(counts))).reshape(counts)

    # interior faces, grouped by normal axis
    e_cells, e_meas, e_dist, e_axis, e_plane = [], [], [], [], []
    e_low, e_up = [], []
    for a in range(d):
        if counts[a] < 2:
            continue
        sl_k = [slice(None)] * d
        sl_l = [slice(None)] * d
        sl_k[a] = slice(None, -1)
        sl_l[a] = slice(1, None)
        K = cell_index[tuple(sl_k)].ravel()
        L = cell_index[tuple(sl_l)].ravel()
        shape = tuple(c - 1 if b == a else c for b, c in enumerate(counts))
        meas = _broadcast_product(sps, shape, skip_axis=a).ravel()
        dist_1d = (sps[a][:-1] + sps[a][1:]) / 2.0
        view = [None] * d
        view[a] = slice(None)
        dist = np.broadcast_to(dist_1d[tuple(view)], shape).ravel().copy()
        plane_1d = nodes[a][1:-1]
        plane = np.broadcast_to(plane_1d[tuple(view)], shape).ravel().copy()
        low = cell_lower[L].copy()
        up = cell_upper[L].copy()
        low[:, a] = plane
        up[:, a] = plane
        e_cells.append(np.stack([K, L], axis=1))
        e_meas.append(meas)
        e_dist.append(dist)
        e_axis.append(np.full(K.shape[0], a, dtype=np.int64))
        e_plane.append(plane)
        e_low.append(low)
        e_up.append(up)

    if e_cells:
        edge_cells = np.concatenate(e_cells, axis=0)
        edge_measures = np.concatenate(e_meas)
        edge_distances = np.concatenate(e_dist)
        edge_axis = np.concatenate(e_axis)
        edge_planes = np.concatenate(e_plane)
        edge_lower = np.concatenate(e_low, axis=0)
        edge_upper = np.concatenate(e_up, axis=0)
    else:
        edge_cells = np.zeros((0, 2), dtype=np.int64)
        edge_measures = np.zeros(0)
        edge_distances = np.zeros(0)
        edge_axis = np.zeros(0, dtype=np.int64)
        edge_planes = np.zeros(0)
        edge_lower = np.zeros((0, d))
        edge_upper = np.zeros((0, d))
    edge_normals = np.zeros((edge_cells.shape[0], d))
    if edge_cells.shape[0]:
        edge_normals[np.arange(edge_cells.shape[0]), edge_axis] = 1.0

    # boundary faces
    b_cells, b_meas, b_norm, b_axis, b_low, b_up = [], [], [], [], [], []
    for a in range(d):
        shape = tuple(1 if b == a else c for b, c in enumerate(counts))
        meas = _broadcast_product(sps, shape, skip_axis=a).ravel()
        for side, idx, plane, sign in (
            (0, 0, nodes[a][0], -1.0),
            (1, counts[a] - 1, nodes[a][-1], +1.0),
        ):
            sl = [slice(None)] * d
            sl[a] = slice(idx, idx + 1)
            cells_here = cell_index[tuple(sl)].ravel()
            low = cell_lower[cells_here].copy()
            up = cell_upper[cells_here].copy()
            low[:, a] = plane
            up[:, a] = plane
            nrm = np.zeros((cells_here.shape[0], d))
            nrm[:, a] = sign
            b_cells.append(cells_here)
            b_meas.append(meas)
            b_norm.append(nrm)
            b_axis.append(np.full(cells_here.shape[0], a, dtype=np.int64))
            b_low.append(low)
            b_up.append(up)

    return TensorMesh(
        dimension=d,
        nodes=nodes,
        cell_counts=counts,
        centers=centers,
        measures=measures,
        diameters=diameters,
        cell_lower=cell_lower,
        cell_upper=cell_upper,
        edge_cells=edge_cells,
        edge_measures=edge_measures,
        edge_distances=edge_distances,
        edge_normals=edge_normals,
        edge_axis=edge_axis,
        edge_planes=edge_planes,
        edge_lower=edge_lower,
        edge_upper=edge_upper,
        bedge_cells=np.concatenate(b_cells),
        bedge_measures=np.concatenate(b_meas),
        bedge_normals=np.concatenate(b_norm, axis=0),
        bedge_axis=np.concatenate(b_axis),
        bedge_lower=np.concatenate(b_low, axis=0),
        bedge_upper=np.concatenate(b_up, axis=0),
    )


def refine(mesh: TensorMesh) -> TensorMesh:
    """Halve every interval per axis.

    Children tile their parents exactly (interval endpoints are reused), so
    piecewise-constant fields on the coarse mesh inject onto the fine mesh
    without any geometric mismatch; see :func:`injection_map`.
    """
    new_nodes = []
    for ax in mesh.nodes:
        out = np.empty(2 * len(ax) - 1)
        out[::2] = ax
        out[1::2] = (ax[:-1] + ax[1:]) / 2.0
        new_nodes.append(out)
    return _build_from_nodes(tuple(new_nodes))


def mesh_regularity(mesh: TensorMesh) -> float:
    """Regularity number: max of the vertex-incidence count and, over interior
    faces and both adjacent cells, diam(K) / d(x_K, sigma)."""
    counts = mesh.cell_counts
    d = mesh.dimension
    # Max number of faces meeting a mesh vertex; for a tensor grid the max is
    # attained at any interior-most vertex: sum over normal axes of the number
    # of tangential cell pairs touching the vertex.
    incidence = 0
    for a in range(d):
        term = 1
        for b in range(d):
            if b != a:
                term *= 2 if counts[b] >= 2 else 1
        incidence += term
    ratio = 0.0
    if mesh.n_interior_edges:
        for side in (0, 1):
            cells = mesh.edge_cells[:, side]
            dist = np.abs(mesh.centers[cells, mesh.edge_axis] - mesh.edge_planes)
            ratio = max(ratio, float(np.max(mesh.diameters[cells] / dist)))
    return float(max(incidence, ratio))


@dataclass
class AdmissibilityReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_admissibility(mesh: TensorMesh, ortho_tol: float = 1e-10,
                           measure_tol: float = 1e-12) -> AdmissibilityReport:
    """Check the admissibility conditions and report violations.

    Checks: positive measures, cell measures summing to the domain measure,
    centers inside their closed cell, distinct neighboring centers, stored
    d_KL consistent with |x_K - x_L|, orthogonality of the center segment to
    the face, and per-cell geometric closure sum(m_sigma * n_{K,sigma}) = 0.
    """
    v: list[str] = []
    if np.any(mesh.measures <= 0.0):
        v.append("measure: non-positive cell measure")
    total = float(mesh.measures.sum())
    dom = mesh.domain_measure
    if abs(total - dom) > measure_tol * dom:
        v.append(f"measure: cell measures sum to {total!r}, domain is {dom!r}")
    inside = np.all((mesh.centers >= mesh.cell_lower - 1e-12) &
                    (mesh.centers <= mesh.cell_upper + 1e-12))
    if not inside:
        v.append("center: a center lies outside its closed cell")

    for j in range(mesh.n_interior_edges):
        k, l = mesh.edge_cells[j]
        if k == l:
            v.append(f"topology: edge {j} references one cell twice")
            continue
        t = mesh.centers[l] - mesh.centers[k]
        norm_t = float(np.linalg.norm(t))
        if norm_t <= 1e-14 * mesh.size_h:
            v.append(f"zero-distance: edge {j} joins coincident centers")
            continue
        if abs(mesh.edge_distances[j] - norm_t) > 1e-10 * norm_t:
            v.append(f"distance: edge {j} stores d_KL={mesh.edge_distances[j]!r} "
                     f"but |x_K - x_L|={norm_t!r}")
        n = mesh.edge_normals[j]
        tangential = t - np.dot(t, n) * n
        if np.linalg.norm(tangential) > ortho_tol * norm_t:
            v.append(f"orthogonality: edge {j} center segment is not normal "
                     f"to the face")

    closure = np.zeros((mesh.n_cells, mesh.dimension))
    scale = np.zeros(mesh.n_cells)
    if mesh.n_interior_edges:
        contrib = mesh.edge_measures[:, None] * mesh.edge_normals
        np.add.at(closure, mesh.edge_cells[:, 0], contrib)
        np.add.at(closure, mesh.edge_cells[:, 1], -contrib)
        np.add.at(scale, mesh.edge_cells[:, 0], mesh.edge_measures)
        np.add.at(scale, mesh.edge_cells[:, 1], mesh.edge_measures)
    np.add.at(closure, mesh.bedge_cells, mesh.bedge_measures[:, None] * mesh.bedge_normals)
    np.add.at(scale, mesh.bedge_cells, mesh.bedge_measures)
    bad = np.linalg.norm(closure, axis=1) > 1e-12 * scale
    if np.any(bad):
        v.append(f"closure: divergence-theorem defect in cells {np.where(bad)[0].tolist()}")
    return AdmissibilityReport(v)


def cell_average(fn: Callable[[np.ndarray], np.ndarray], mesh: TensorMesh,
                 order: int = QUADRATURE_ORDER) -> CellField:
    """Per-cell mean of a scalar function, u_K = (1/m_K) int_K u.

    Tensor Gauss quadrature with `order` points per axis; exact for
    polynomials of degree 2*order - 1 per axis.
    """
    gx, gw = gauss_rule(order)
    sps = mesh.spacings
    # per-axis evaluation abscissae, shape (n_a, order)
    pts = [mesh.nodes[a][:-1][:, None] + sps[a][:, None] * gx[None, :]
           for a in range(mesh.dimension)]
    acc = np.zeros(mesh.n_cells)
    for combo in np.ndindex(*([order] * mesh.dimension)):
        axes = [pts[a][:, combo[a]] for a in range(mesh.dimension)]
        grids = np.meshgrid(*axes, indexing="ij")
        x = np.stack([g.ravel() for g in grids], axis=1)
        w = math.prod(gw[c] for c in combo)
        acc += w * np.asarray(fn(x), dtype=float)
    return CellField(mesh, acc)


def injection_map(coarse: TensorMesh, fine: TensorMesh) -> np.ndarray:
    """Index of the coarse parent cell for every fine cell.

    Requires nested meshes on the same box: every coarse node must occur
    among the fine nodes.
    """
    if coarse.dimension != fine.dimension:
        raise MeshError("meshes have different dimensions")
    per_axis = []
    for a in range(coarse.dimension):
        cn, fnod = coarse.nodes[a], fine.nodes[a]
        scale = cn[-1] - cn[0]
        if abs(cn[0] - fnod[0]) > 1e-12 * scale or abs(cn[-1] - fnod[-1]) > 1e-12 * scale:
            raise MeshError("meshes cover different boxes")
        pos = np.searchsorted(fnod, cn)
        pos = np.clip(pos, 0, len(fnod) - 1)
        # nearest fine node must coincide with each coarse node
        near = np.minimum(np.abs(fnod[pos] - cn),
                          np.abs(fnod[np.maximum(pos - 1, 0)] - cn))
        if np.any(near > 1e-12 * scale):
            raise MeshError(f"meshes are not nested along axis {a}")
        mids = (fnod[:-1] + fnod[1:]) / 2.0
        per_axis.append(np.searchsorted(cn, mids) - 1)
    grids = np.meshgrid(*per_axis, indexing="ij")
    return np.ravel_multi_index([g.ravel() for g in grids], coarse.cell_counts)


def inject(field: CellField, fine: TensorMesh,
           mapping: np.ndarray | None = None) -> CellField:
    """Lift a coarse piecewise-constant field onto a nested finer mesh."""
    if mapping is None:
        mapping = injection_map(field.mesh, fine)
    return CellField(fine, field.values[mapping])
