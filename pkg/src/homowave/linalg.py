"""Conjugate gradient with optional Jacobi preconditioning and projection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["CGResult", "CGConvergenceError", "conjugate_gradient", "dot", "zero_mean"]


class CGConvergenceError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # relative, ||b - A x|| / ||b||
    converged: bool


def dot(a: np.ndarray, b: np.ndarray) -> float:
    # numpy pairwise summation: fixed order, independent of BLAS threading
    return float(np.sum(a * b))


def zero_mean(z: np.ndarray) -> np.ndarray:
    return z - np.mean(z)


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-10,
    maxiter: int | None = None,
    precond: np.ndarray | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
    raise_on_failure: bool = True,
) -> CGResult:
    """Solve ``A x = b`` for symmetric positive (semi-)definite ``A``.

    ``precond`` is the diagonal of ``A`` (Jacobi).  ``project`` is applied to
    the right-hand side, every iterate and every residual, which keeps the
    iteration in the complement of a known kernel such as the constants.
    """
    proj = project or (lambda z: z)
    b = proj(np.asarray(b, dtype=float))
    n = b.size
    maxiter = maxiter if maxiter is not None else 10 * n
    bnorm = np.sqrt(dot(b, b))
    x = np.zeros_like(b) if x0 is None else proj(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)
    r = proj(b - matvec(x)) if x0 is not None else b.copy()
    inv_diag = None if precond is None else 1.0 / precond
    z = r if inv_diag is None else proj(inv_diag * r)
    p = z.copy()
    rz = dot(r, z)
    it = 0
    rel = np.sqrt(dot(r, r)) / bnorm
    while rel > tol and it < maxiter:
        Ap = matvec(p)
        pAp = dot(p, Ap)
        if pAp <= 0.0:
            break
        step = rz / pAp
        x = proj(x + step * p)
        r = proj(r - step * Ap)
        z = r if inv_diag is None else proj(inv_diag * r)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        rel = np.sqrt(dot(r, r)) / bnorm
    true_r = proj(b - matvec(x))
    rel = np.sqrt(dot(true_r, true_r)) / bnorm
    # the recursive residual can drift below the true one; finish with a restart
    if rel > tol and it < maxiter:
        more = conjugate_gradient(matvec, b, tol, maxiter - it, precond, project, x, raise_on_failure=False)
        x, rel, it = more.x, more.residual, it + more.iterations
    result = CGResult(x, it, float(rel), bool(rel <= tol))
    if not result.converged and raise_on_failure:
        raise CGConvergenceError(
            f"CG did not reach relative residual {tol:g} in {it} iterations (got {rel:.3e})", result
        )
    return result
