"""Discrete norms, the TPFA diffusion operator, upwind traces and the
discrete identities (integration by parts, Poincare) used by the scheme
and its diagnostics.

Conventions, for a field w_h = sum_K w_K 1_K:

    ||w_h||_2^2   = sum_K m_K w_K^2
    |w_h|_{1,h}^2 = sum_{sigma in E_int} (m_sigma / d_KL) (w_K - w_L)^2

The assembled stiffness matrix A satisfies (A w)_K = sum_sigma t_sigma
(w_K - w_L) with transmissibility t_sigma = m_sigma / d_KL; it is symmetric
positive semidefinite with kernel exactly the constants on a connected mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import MeshError, SolverError
from .fields import CellField
from .mesh import TensorMesh, gauss_rule, QUADRATURE_ORDER

__all__ = [
    "EdgeVelocity",
    "TpfaOperator",
    "discrete_l2_norm",
    "l2_inner",
    "mass",
    "discrete_h1_seminorm",
    "apply_tpfa_laplacian",
    "edge_velocity",
    "zero_edge_velocity",
    "upwind_cells",
    "upwind_trace",
    "dibp_row_form",
    "dibp_edge_form",
    "dibp_gap",
    "poincare_constant_estimate",
    "l2_error_vs_function",
]


@dataclass(frozen=True, eq=False)
class EdgeVelocity:
    """Space-time averaged normal velocities v_{K,sigma} on interior faces.

    `values[j]` is the average of v . n_{K,sigma} over face j and the time
    interval, seen from the first (K) cell of the stored orientation; the
    value seen from L is its negation.  Boundary faces carry no entry
    (tangential velocity assumed).
    """

    mesh: TensorMesh
    t_start: float
    t_end: float
    values: np.ndarray


class TpfaOperator:
    """Assembled two-point flux stiffness of a mesh, reused across steps."""

    def __init__(self, mesh: TensorMesh):
        self.mesh = mesh
        n = mesh.n_cells
        t = mesh.transmissibilities
        k = mesh.edge_cells[:, 0]
        l = mesh.edge_cells[:, 1]
        rows = np.concatenate([k, l, k, l])
        cols = np.concatenate([k, l, l, k])
        data = np.concatenate([t, t, -t, -t])
        self.stiffness = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        self.measures = mesh.measures

    def apply(self, values: np.ndarray) -> np.ndarray:
        """(A w)_K = sum_sigma t_sigma (w_K - w_L)."""
        return self.stiffness @ values

    def laplacian_values(self, values: np.ndarray) -> np.ndarray:
        """Discrete Neumann Laplacian, (1/m_K) sum_sigma t_sigma (w_L - w_K)."""
        return -(self.stiffness @ values) / self.measures


def discrete_l2_norm(field: CellField) -> float:
    return float(np.sqrt(np.sum(field.mesh.measures * field.values**2)))


def l2_inner(a: CellField, b: CellField) -> float:
    return float(np.sum(a.mesh.measures * a.values * b.values))


def mass(field: CellField) -> float:
    """int_Lambda w_h = sum_K m_K w_K."""
    return float(np.sum(field.mesh.measures * field.values))


def h1_seminorm_values(mesh: TensorMesh, values: np.ndarray) -> float:
    diff = values[mesh.edge_cells[:, 0]] - values[mesh.edge_cells[:, 1]]
    return float(np.sqrt(np.sum(mesh.transmissibilities * diff**2)))


def discrete_h1_seminorm(field: CellField) -> float:
    return h1_seminorm_values(field.mesh, field.values)


def apply_tpfa_laplacian(field: CellField, op: TpfaOperator | None = None) -> CellField:
    if op is None:
        op = TpfaOperator(field.mesh)
    return CellField(field.mesh, op.laplacian_values(field.values))


def zero_edge_velocity(mesh: TensorMesh, t_start: float = 0.0,
                       t_end: float = 1.0) -> EdgeVelocity:
    return EdgeVelocity(mesh, t_start, t_end, np.zeros(mesh.n_interior_edges))


def edge_velocity(velocity: Callable[[float, np.ndarray], np.ndarray],
                  mesh: TensorMesh, t_start: float, t_end: float,
                  space_order: int = QUADRATURE_ORDER,
                  time_order: int = 2) -> EdgeVelocity:
    """Average of v . n_{K,sigma} over each interior face and (t_start, t_end].

    Tensor Gauss quadrature: `space_order` points per tangential axis and
    `time_order` points in time.  The approximation error is quadrature
    limited, not modeled.
    """
    if not t_end > t_start:
        raise ValueError("empty time interval")
    gx, gw = gauss_rule(space_order)
    tx, tw = gauss_rule(time_order)
    times = t_start + (t_end - t_start) * tx
    out = np.zeros(mesh.n_interior_edges)
    d = mesh.dimension
    for a in range(d):
        idx = np.where(mesh.edge_axis == a)[0]
        if idx.size == 0:
            continue
        tang = [b for b in range(d) if b != a]
        lo = mesh.edge_lower[idx]
        ext = mesh.edge_upper[idx] - mesh.edge_lower[idx]
        acc = np.zeros(idx.size)
        for combo in np.ndindex(*([space_order] * len(tang))):
            pts = np.empty((idx.size, d))
            pts[:, a] = mesh.edge_planes[idx]
            w_sp = 1.0
            for t_axis, c in zip(tang, combo):
                pts[:, t_axis] = lo[:, t_axis] + ext[:, t_axis] * gx[c]
                w_sp *= gw[c]
            for ti, t in enumerate(times):
                v = np.asarray(velocity(float(t), pts), dtype=float)
                acc += w_sp * tw[ti] * v[:, a]
        out[idx] = acc
    return EdgeVelocity(mesh, float(t_start), float(t_end), out)


def upwind_cells(edge_vel: EdgeVelocity) -> np.ndarray:
    """Index of the upstream cell per interior face; ties (v = 0) take K."""
    mesh = edge_vel.mesh
    return np.where(edge_vel.values >= 0.0,
                    mesh.edge_cells[:, 0], mesh.edge_cells[:, 1])


def upwind_trace(field: CellField, edge_vel: EdgeVelocity) -> np.ndarray:
    """u_sigma per interior face: u_K where v_{K,sigma} >= 0, else u_L."""
    if field.mesh is not edge_vel.mesh:
        raise MeshError("field and edge velocity live on different meshes")
    return field.values[upwind_cells(edge_vel)]


def dibp_row_form(w: CellField, v: CellField) -> float:
    """sum_K sum_{sigma in E_K^int} t_sigma (w_K - w_L) v_K."""
    mesh = w.mesh
    flux = mesh.transmissibilities * (w.values[mesh.edge_cells[:, 0]]
                                      - w.values[mesh.edge_cells[:, 1]])
    acc = np.zeros(mesh.n_cells)
    np.add.at(acc, mesh.edge_cells[:, 0], flux)
    np.add.at(acc, mesh.edge_cells[:, 1], -flux)
    return float(np.dot(acc, v.values))


def dibp_edge_form(w: CellField, v: CellField) -> float:
    """sum_{sigma in E_int} t_sigma (w_K - w_L)(v_K - v_L)."""
    mesh = w.mesh
    k, l = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    return float(np.sum(mesh.transmissibilities
                        * (w.values[k] - w.values[l])
                        * (v.values[k] - v.values[l])))


def dibp_gap(w: CellField, v: CellField) -> float:
    """Absolute gap between the two sides of the discrete integration by parts
    identity; an algebraic identity, so the gap is pure roundoff."""
    if w.mesh is not v.mesh:
        raise MeshError("fields live on different meshes")
    return abs(dibp_row_form(w, v) - dibp_edge_form(w, v))


def poincare_constant_estimate(mesh: TensorMesh, tol: float = 1e-8,
                               max_iterations: int = 500,
                               seed: int = 0) -> float:
    """Smallest constant C_p with ||w||_2^2 <= C_p |w|_{1,h}^2 for zero-mean w.

    Equals the largest Rayleigh quotient w'Mw / w'Aw over mass-zero fields,
    computed by power iteration on the inverse stiffness restricted to the
    zero-mean complement (one grounded unknown makes the solve definite).
    Iteration stops when the quotient changes by less than `tol` relatively.
    """
    if mesh.n_cells < 2:
        raise ValueError("need at least 2 cells")
    op = TpfaOperator(mesh)
    a = op.stiffness.tocsc()
    try:
        lu = splu(a[1:, 1:])
    except RuntimeError as exc:  # pragma: no cover - singular submatrix
        raise SolverError(f"stiffness factorization failed: {exc}") from exc
    m = mesh.measures
    dom = float(m.sum())
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(mesh.n_cells)
    w -= np.dot(m, w) / dom
    quotient = None
    for _ in range(max_iterations):
        b = m * w
        y = np.concatenate([[0.0], lu.solve(b[1:])])
        y -= np.dot(m, y) / dom
        ay = op.apply(y)
        denom = float(np.dot(y, ay))
        if denom <= 0.0:
            raise SolverError("power iteration left the positive cone")
        new_q = float(np.dot(y, m * y)) / denom
        norm = float(np.sqrt(np.dot(y, m * y)))
        if norm == 0.0:
            raise SolverError("power iteration collapsed to zero")
        w = y / norm
        if quotient is not None and abs(new_q - quotient) <= tol * new_q:
            return new_q
        quotient = new_q
    raise SolverError("power iteration did not converge "
                      f"(last quotient {quotient!r})")


def l2_error_vs_function(field: CellField, fn: Callable[[np.ndarray], np.ndarray],
                         order: int = QUADRATURE_ORDER) -> float:
    """True L2 distance between a smooth function and a cell field, by
    per-cell tensor Gauss quadrature of (fn - w_K)^2."""
    mesh = field.mesh
    gx, gw = gauss_rule(order)
    sps = mesh.spacings
    pts = [mesh.nodes[a][:-1][:, None] + sps[a][:, None] * gx[None, :]
           for a in range(mesh.dimension)]
    acc = np.zeros(mesh.n_cells)
    for combo in np.ndindex(*([order] * mesh.dimension)):
        axes = [pts[a][:, combo[a]] for a in range(mesh.dimension)]
        grids = np.meshgrid(*axes, indexing="ij")
        x = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod([gw[c] for c in combo])
        acc += w * (np.asarray(fn(x), dtype=float) - field.values) ** 2
    return float(np.sqrt(np.sum(mesh.measures * acc)))
