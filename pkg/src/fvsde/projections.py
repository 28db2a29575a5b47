"""Elliptic and centered projections of smooth functions onto cell fields.

The elliptic projection of w is the cell vector matching the mean of w and
reproducing -int_K Laplacian(w) through two-point fluxes:

    sum_K m_K w~_K = int_Lambda w,
    sum_{sigma in E_K^int} (m_sigma/d_KL) (w~_K - w~_L) = -int_K Lap(w)  for all K.

The stiffness kernel is the constants, so the flux system is solved on the
zero-mean complement by Jacobi-preconditioned conjugate gradients and the
mean constraint is imposed by a final shift.  The centered projection is
plain point evaluation at cell centers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .discrete_ops import (TpfaOperator, discrete_h1_seminorm,
                           l2_error_vs_function)
from .errors import CompatibilityWarning, SolverError
from .fields import CellField
from .mesh import TensorMesh, cell_average
from .stats import fit_rate

__all__ = [
    "SmoothFunctionSpec",
    "elliptic_projection",
    "centered_projection",
    "ProjectionErrorReport",
    "projection_error_report",
]

RESIDUAL_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class SmoothFunctionSpec:
    """A smooth scalar function with its analytic Laplacian.

    The Laplacian is supplied, not differenced, so projection errors are not
    polluted by differentiation error.  Construction self-checks the supplied
    Laplacian against central finite differences at a few interior points.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    domain: tuple[tuple[float, float], ...]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    neumann_compatible: bool = True

    def __post_init__(self):
        rng = np.random.default_rng(7)
        d = len(self.domain)
        lo = np.array([a for a, _ in self.domain])
        hi = np.array([b for _, b in self.domain])
        step = 1e-4 * float(np.min(hi - lo))
        pts = lo + (hi - lo) * (0.25 + 0.5 * rng.random((8, d)))
        num = np.zeros(8)
        base = np.asarray(self.fn(pts), dtype=float)
        for a in range(d):
            plus = pts.copy(); plus[:, a] += step
            minus = pts.copy(); minus[:, a] -= step
            num += (np.asarray(self.fn(plus)) - 2.0 * base
                    + np.asarray(self.fn(minus))) / step**2
        ana = np.asarray(self.laplacian(pts), dtype=float)
        scale = np.max(np.abs(ana)) + 1.0
        if np.max(np.abs(num - ana)) > 1e-6 * scale:
            raise ValueError("supplied Laplacian disagrees with finite differences")


def centered_projection(fn: Callable[[np.ndarray], np.ndarray],
                        mesh: TensorMesh) -> CellField:
    """Point evaluation at the cell centers, w^_K = w(x_K)."""
    return CellField(mesh, np.asarray(fn(mesh.centers), dtype=float))


def _cg_zero_mean(op: TpfaOperator, b: np.ndarray, tol_abs: float,
                  max_iterations: int) -> np.ndarray:
    """CG for A x = b with A the TPFA stiffness, on the plain-sum-zero range."""
    a = op.stiffness
    n = b.shape[0]
    diag = a.diagonal()
    diag = np.where(diag > 0.0, diag, 1.0)
    x = np.zeros(n)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(np.dot(r, z))
    for _ in range(max_iterations):
        if float(np.max(np.abs(r))) <= tol_abs:
            return x
        ap = a @ p
        alpha = rz / float(np.dot(p, ap))
        x += alpha * p
        r -= alpha * ap
        r -= r.sum() / n          # keep the constant mode out of the residual
        z = r / diag
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"projection CG stalled at max residual {np.max(np.abs(r)):.3e}")


def elliptic_projection(spec: SmoothFunctionSpec, mesh: TensorMesh,
                        residual_tol: float = RESIDUAL_TOL) -> CellField:
    """Cell field satisfying the mean and per-cell flux-balance equations.

    Raises SolverError when the flux balance cannot be met to residual_tol;
    warns (CompatibilityWarning) when int_Lambda Lap(w) fails to vanish
    beyond quadrature accuracy, which signals non-Neumann data.
    """
    target_mass = float(np.dot(mesh.measures,
                               cell_average(spec.fn, mesh).values))
    if mesh.n_cells == 1:
        return CellField(mesh, np.array([target_mass / mesh.domain_measure]))
    rhs = -mesh.measures * cell_average(spec.laplacian, mesh).values
    imbalance = float(rhs.sum())
    scale = float(np.sum(np.abs(rhs))) + 1.0
    if abs(imbalance) > 1e-8 * scale:
        warnings.warn(
            f"int_Lambda Lap(w) = {-imbalance:.3e} does not vanish; the data "
            "is not compatible with homogeneous Neumann fluxes",
            CompatibilityWarning, stacklevel=2)
    rhs -= rhs.sum() / mesh.n_cells
    tol_abs = 0.2 * residual_tol
    x = _cg_zero_mean(TpfaOperator(mesh), rhs, tol_abs,
                      max_iterations=40 * mesh.n_cells)
    x += (target_mass - float(np.dot(mesh.measures, x))) / mesh.domain_measure
    field = CellField(mesh, x)
    res = elliptic_residual(spec, field)
    if res > residual_tol:
        raise SolverError(f"projection residual {res:.3e} exceeds {residual_tol}")
    return field


def elliptic_residual(spec: SmoothFunctionSpec, field: CellField) -> float:
    """Max-norm defect of the per-cell flux balance at a candidate field."""
    mesh = field.mesh
    op = TpfaOperator(mesh)
    rhs = -mesh.measures * cell_average(spec.laplacian, mesh).values
    rhs -= rhs.sum() / mesh.n_cells
    return float(np.max(np.abs(op.apply(field.values) - rhs)))


@dataclass
class ProjectionErrorReport:
    """Nested-refinement error table for both projections."""

    sizes: list[float]                    # h per level
    elliptic_errors: list[float]          # ||w - w~||_{L2}
    centered_errors: list[float]          # ||w - w^||_{L2}
    seminorm_gaps: list[float]            # |w^ - w~|_{1,h}
    slopes: dict[str, float]
    residuals: list[float]
    mass_defects: list[float]

    def rows(self):
        for i, h in enumerate(self.sizes):
            yield (h, self.elliptic_errors[i], self.centered_errors[i],
                   self.seminorm_gaps[i])


def projection_error_report(spec: SmoothFunctionSpec,
                            meshes: Sequence[TensorMesh]) -> ProjectionErrorReport:
    """Projection errors across a nested mesh family with fitted log-log slopes."""
    if len(meshes) < 3:
        raise ValueError("need at least 3 refinement levels")
    sizes, e_ell, e_cen, gaps, residuals, defects = [], [], [], [], [], []
    for mesh in meshes:
        tilde = elliptic_projection(spec, mesh)
        hat = centered_projection(spec.fn, mesh)
        sizes.append(mesh.size_h)
        e_ell.append(l2_error_vs_function(tilde, spec.fn))
        e_cen.append(l2_error_vs_function(hat, spec.fn))
        gaps.append(discrete_h1_seminorm(
            CellField(mesh, hat.values - tilde.values)))
        residuals.append(elliptic_residual(spec, tilde))
        target = float(np.dot(mesh.measures, cell_average(spec.fn, mesh).values))
        defects.append(abs(float(np.dot(mesh.measures, tilde.values)) - target))
    slopes = {
        "elliptic": fit_rate(list(zip(sizes, e_ell)))[0],
        "centered": fit_rate(list(zip(sizes, e_cen)))[0],
        "seminorm_gap": fit_rate(list(zip(sizes, gaps)))[0],
    }
    return ProjectionErrorReport(sizes, e_ell, e_cen, gaps, slopes,
                                 residuals, defects)
