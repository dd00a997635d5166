"""Periodic cell problems, correctors and the effective tensor.

Correctors depend on the cell variable only: the damping in the wave equation
makes them independent of the fast time, so only the y-algebra enters here.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import CGResult, conjugate_gradient, zero_mean
from .mean_value import LimitAtInfinity, QuasiPeriodic
from .problem import ProblemDefinition
from .stencil import corner_fluxes, divergence_operator, divergence_rhs

__all__ = [
    "CellGrid",
    "CorrectorSet",
    "CorrectorSolution",
    "NotSPDError",
    "TensorField",
    "solve_corrector",
    "correctors_basis",
    "effective_tensor_field",
    "reconstruct_corrector_field",
    "default_cell_resolution",
    "check_spd",
]

log = logging.getLogger(__name__)


class NotSPDError(ValueError):
    pass


def default_cell_resolution(d: int) -> int:
    return 256 if d == 1 else 128


@dataclass(frozen=True)
class CellGrid:
    """Uniform periodic grid on the unit cell, ``n`` nodes per axis."""

    n: int
    d: int = 1

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"cell resolution must be a power of two >= 8, got {self.n}")
        if self.d not in (1, 2):
            raise ValueError("cell dimension must be 1 or 2")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    def nodes(self) -> list[np.ndarray]:
        t = np.arange(self.n) * self.h
        return np.meshgrid(*([t] * self.d), indexing="ij")

    def centers(self) -> list[np.ndarray]:
        t = (np.arange(self.n) + 0.5) * self.h
        return np.meshgrid(*([t] * self.d), indexing="ij")


@dataclass
class CorrectorSolution:
    field: np.ndarray  # shape grid.shape
    residual: float
    iterations: int


@dataclass
class CorrectorSet:
    x: tuple[float, ...]
    chi: np.ndarray  # (d,) + grid.shape
    tensor: np.ndarray  # (d, d)
    residual: float
    grid: CellGrid
    iterations: int = 0
    approximate: bool = False


@dataclass
class TensorField:
    points: np.ndarray  # (N, d)
    tensors: np.ndarray  # (N, d, d)
    correctors: list[CorrectorSet] = field(default_factory=list)
    broadcast: bool = False


def check_spd(a_cells: np.ndarray, rtol: float = 1e-12):
    d = a_cells.shape[-1]
    a = a_cells.reshape(-1, d, d)
    scale = max(float(np.max(np.abs(a))), 1.0)
    if np.max(np.abs(a - np.swapaxes(a, 1, 2))) > rtol * scale:
        raise NotSPDError("sampled tensor is not symmetric")
    lam = np.linalg.eigvalsh(a).min()
    if not lam > 0:
        raise NotSPDError(f"sampled tensor is not positive definite (smallest eigenvalue {lam:.3g})")


class _CellOperator:
    def __init__(self, a_cells: np.ndarray, grid: CellGrid, precondition: bool = False):
        self.grid = grid
        self.a = np.asarray(a_cells, dtype=float).reshape(grid.shape + (grid.d, grid.d))
        check_spd(self.a)
        self.matrix = divergence_operator(self.a, grid.n, grid.d, periodic=True)
        self.diag = self.matrix.diagonal() if precondition else None

    def solve(self, xi, tol: float, maxiter: int | None = None) -> CorrectorSolution:
        g = self.grid
        b = divergence_rhs(self.a, xi, g.n, g.d, periodic=True)
        cap = maxiter if maxiter is not None else 50 * g.n
        res: CGResult = conjugate_gradient(
            self.matrix.dot, b, tol=tol, maxiter=cap, precond=self.diag, project=zero_mean
        )
        return CorrectorSolution(res.x.reshape(g.shape), res.residual, res.iterations)

    def effective_column(self, j: int, chi_j: np.ndarray) -> np.ndarray:
        g = self.grid
        xi = np.eye(g.d)[j]
        flux = corner_fluxes(self.a, xi, chi_j.ravel(), g.n, g.d, periodic=True)
        return flux.mean(axis=(0, 1))


def solve_corrector(
    a_at_x: np.ndarray,
    xi,
    tol: float = 1e-10,
    grid: CellGrid | None = None,
    precondition: bool = False,
    maxiter: int | None = None,
) -> CorrectorSolution:
    """Zero-mean periodic solution of ``-div(a (xi + grad p)) = 0``.

    ``a_at_x`` holds the tensor at the cell centres, shape ``grid.shape + (d, d)``
    (a plain 1D array is accepted for scalar 1D coefficients).
    """
    a = np.asarray(a_at_x, dtype=float)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    d = xi.size
    if a.ndim == 1 and d == 1:
        a = a[:, None, None]
    if grid is None:
        grid = CellGrid(a.shape[0], d)
    return _CellOperator(a, grid, precondition).solve(xi, tol, maxiter)


def _sample_cell_tensor(pd: ProblemDefinition, x, grid: CellGrid, cell_period: float) -> np.ndarray:
    centers = [cell_period * c for c in grid.centers()]
    xs = [np.full(grid.shape, float(xi)) for xi in x]
    return pd.a_at(xs, centers)


def correctors_basis(
    pd: ProblemDefinition,
    x,
    grid: CellGrid | None = None,
    tol: float = 1e-10,
    precondition: bool = False,
    cell_period: float = 1.0,
) -> CorrectorSet:
    """Correctors for every canonical direction at macro point ``x`` plus the effective tensor.

    For a quasi-periodic y-algebra the coefficient is treated as periodic with
    the commensurate period ``cell_period``; the result is then marked
    ``approximate``.
    """
    d = pd.dimension
    grid = grid or CellGrid(default_cell_resolution(d), d)
    if grid.d != d:
        raise ValueError("cell grid dimension does not match the problem")
    if isinstance(pd.algebra_y, LimitAtInfinity):
        raise NotImplementedError("cell problems are only solvable for periodic (or truncated quasi-periodic) y")
    approximate = isinstance(pd.algebra_y, QuasiPeriodic)
    x = tuple(float(c) for c in np.broadcast_to(np.asarray(x, dtype=float), (d,)))
    if not any(e.depends_on(*(f"y{i + 1}" for i in range(d))) for row in pd.a for e in row):
        # y-free coefficient: zero correctors, effective tensor is a(x) itself
        tensor = pd.a_at([np.array(c) for c in x], [np.array(0.0)] * d)
        check_spd(tensor)
        return CorrectorSet(x, np.zeros((d,) + grid.shape), tensor.copy(), 0.0, grid, 0, False)
    op = _CellOperator(_sample_cell_tensor(pd, x, grid, cell_period), grid, precondition)
    chi = np.empty((d,) + grid.shape)
    tensor = np.empty((d, d))
    residual, iters = 0.0, 0
    for j in range(d):
        sol = op.solve(np.eye(d)[j], tol)
        chi[j] = sol.field
        residual = max(residual, sol.residual)
        iters += sol.iterations
        tensor[:, j] = op.effective_column(j, sol.field)
    return CorrectorSet(x, chi, tensor, residual, grid, iters, approximate)


def _correctors_task(args):
    return correctors_basis(*args)


def effective_tensor_field(
    pd: ProblemDefinition,
    macro_points: np.ndarray,
    grid: CellGrid | None = None,
    tol: float = 1e-10,
    workers: int = 1,
    keep_correctors: bool = False,
) -> TensorField:
    """Effective tensor at each macro point (rows of ``macro_points``).

    A coefficient without x-variables is solved once and broadcast.
    """
    d = pd.dimension
    pts = np.asarray(macro_points, dtype=float).reshape(-1, d)
    grid = grid or CellGrid(default_cell_resolution(d), d)
    if not pd.a_depends_on_x:
        cs = correctors_basis(pd, np.zeros(d), grid, tol)
        tensors = np.broadcast_to(cs.tensor, (len(pts), d, d)).copy()
        return TensorField(pts, tensors, [cs], broadcast=True)
    tasks = [(pd, tuple(p), grid, tol) for p in pts]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            sets = list(pool.map(_correctors_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        sets = [_correctors_task(t) for t in tasks]
    tensors = np.stack([s.tensor for s in sets])
    return TensorField(pts, tensors, sets if keep_correctors else [], broadcast=False)


def reconstruct_corrector_field(grad_u0: np.ndarray, chi: CorrectorSet | Sequence[CorrectorSet]) -> np.ndarray:
    """First-order corrector ``u1(x, y) = grad u0(x) . chi(x, y)``.

    ``grad_u0`` has shape ``(N, d)``; ``chi`` is one set (broadcast) or one per
    macro node.  Returns shape ``(N,) + cell grid shape``.
    """
    grad = np.asarray(grad_u0, dtype=float)
    if grad.ndim == 1:
        grad = grad[None, :]
    sets = [chi] * len(grad) if isinstance(chi, CorrectorSet) else list(chi)
    if len(sets) != len(grad):
        raise ValueError(f"{len(grad)} gradient rows but {len(sets)} corrector sets")
    out = []
    for g, cs in zip(grad, sets):
        if g.size != cs.chi.shape[0]:
            raise ValueError(f"gradient has {g.size} components, correctors have {cs.chi.shape[0]}")
        out.append(np.tensordot(g, cs.chi, axes=1))
    return np.stack(out)
