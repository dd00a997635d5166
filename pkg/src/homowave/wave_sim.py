"""Semi-implicit time stepping of the micro and homogenized damped wave SPDEs.

Both equations are written as a first-order system in (u, v = u') on the
interior nodes of a uniform Dirichlet grid of Q = (0,1)^d:

    (I + dt L + dt^2 K) v_{n+1} = v_n - dt K u_n + dt f(v_n) + sum_k g_k(v_n) dW_k
    u_{n+1} = u_n + dt v_{n+1}

with K the divergence-form stiffness and L the Dirichlet Laplacian (damping).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .effective import EffectiveNonlinearity
from .expr import evaluate
from .linalg import conjugate_gradient, dot
from .mean_value import Periodic
from .problem import ProblemDefinition
from .rng import WienerPath
from .stencil import divergence_operator

__all__ = [
    "SpatialGrid",
    "SpdeState",
    "SolutionTrajectory",
    "Micro",
    "Macro",
    "ImplicitSystem",
    "NonFiniteStateError",
    "MeshResolutionError",
    "assemble_stiffness",
    "dirichlet_laplacian",
    "step_semi_implicit",
    "simulate",
    "h_minus1_norm",
    "h_minus1_norms_sq",
    "energy_functionals",
    "discrete_energy",
    "POINTS_PER_PERIOD",
]

POINTS_PER_PERIOD = 16
STEP_TOL = 1e-10


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state after step {step}")
        self.step = step


class MeshResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialGrid:
    """Interior nodes of a uniform grid on (0,1)^d with ``n_x`` interior nodes per axis."""

    d: int
    n_x: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("spatial dimension must be 1 or 2")
        if self.n_x < 15:
            raise ValueError("need at least 15 interior nodes per axis")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_x + 1)

    @property
    def cells(self) -> int:
        return self.n_x + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_x,) * self.d

    @property
    def size(self) -> int:
        return self.n_x**self.d

    @property
    def weight(self) -> float:
        return self.h**self.d

    def nodes(self) -> list[np.ndarray]:
        t = np.arange(1, self.n_x + 1) * self.h
        return [c.ravel() for c in np.meshgrid(*([t] * self.d), indexing="ij")]

    def centers(self) -> list[np.ndarray]:
        t = (np.arange(self.cells) + 0.5) * self.h
        return [c.ravel() for c in np.meshgrid(*([t] * self.d), indexing="ij")]

    def interior_index(self) -> np.ndarray:
        full = self.n_x + 2
        idx = np.indices((self.n_x,) * self.d).reshape(self.d, -1) + 1
        out = np.zeros(idx.shape[1], dtype=np.int64)
        for k in range(self.d):
            out = out * full + idx[k]
        return out

    def pad(self, field_: np.ndarray) -> np.ndarray:
        """Interior vector to the full nodal array with zero boundary."""
        return np.pad(np.asarray(field_).reshape(self.shape), 1)


def assemble_stiffness(tensor_cells: np.ndarray, grid: SpatialGrid) -> sp.csr_matrix:
    """``-div(A grad .)`` on interior nodes, A given at the cell centres.

    ``tensor_cells`` has shape ``(cells**d, d, d)``, ``(d, d)`` (constant), or
    ``(cells**d,)`` for scalar 1D coefficients.
    """
    d = grid.d
    A = np.asarray(tensor_cells, dtype=float)
    ncell = grid.cells**d
    if A.ndim == 1 and d == 1:
        A = A[:, None, None]
    A = np.broadcast_to(A, (ncell, d, d))
    asym = np.max(np.abs(A - np.swapaxes(A, 1, 2)))
    if asym > 1e-9 * max(1.0, float(np.max(np.abs(A)))):
        raise ValueError("stiffness tensor must be symmetric at every flux point")
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    if not np.linalg.eigvalsh(A).min() > 0:
        raise ValueError("stiffness tensor must be positive definite at every flux point")
    full = divergence_operator(A, grid.cells, d, periodic=False, h=grid.h)
    idx = grid.interior_index()
    return full[idx][:, idx].tocsr()


def dirichlet_laplacian(grid: SpatialGrid) -> sp.csr_matrix:
    return assemble_stiffness(np.eye(grid.d), grid)


@dataclass
class SpdeState:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0


class ImplicitSystem:
    """Factor-once solver for ``I + dt L + dt^2 K``."""

    def __init__(self, K, L, dt: float, solver: str = "direct", tol: float = STEP_TOL):
        n = K.shape[0]
        self.matrix = (sp.identity(n, format="csr") + dt * L + (dt * dt) * K).tocsr()
        self.solver = solver
        self.tol = tol
        if solver == "direct":
            self._lu = splu(self.matrix.tocsc())
        elif solver != "cg":
            raise ValueError(f"unknown solver {solver!r}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.solver == "direct":
            return self._lu.solve(rhs)
        return conjugate_gradient(self.matrix.dot, rhs, tol=self.tol).x


def step_semi_implicit(
    state: SpdeState,
    dt: float,
    K,
    L,
    drift: Callable[[float, np.ndarray], np.ndarray],
    noise: Callable[[float, np.ndarray], np.ndarray],
    dW,
    system: ImplicitSystem | None = None,
    step_index: int = 0,
) -> SpdeState:
    """One step; ``drift`` returns a nodal vector, ``noise`` an (m, N) array."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    system = system or ImplicitSystem(K, L, dt)
    u, v = state.u, state.v
    rhs = v - dt * (K @ u) + dt * drift(state.t, v)
    gamma = noise(state.t, v)
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    for k in range(dW.size):
        rhs = rhs + gamma[k] * dW[k]
    v_new = system.solve(rhs)
    u_new = u + dt * v_new
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise NonFiniteStateError(step_index)
    return SpdeState(u_new, v_new, state.t + dt)


@dataclass(frozen=True)
class Micro:
    eps: float


@dataclass(frozen=True)
class Macro:
    tensor: np.ndarray  # (d, d) or (cells**d, d, d)
    effective: EffectiveNonlinearity


Mode = Union[Micro, Macro]


@dataclass
class SolutionTrajectory:
    grid: SpatialGrid
    dt: float
    times: np.ndarray
    u: np.ndarray  # (n_snap, N)
    v: np.ndarray  # (n_snap, N)
    sup_H1_sq: float
    sup_L2_sq: float
    int_H1_v: float
    energy: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def identical_to(self, other: "SolutionTrajectory") -> bool:
        return (
            self.u.shape == other.u.shape
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
        )


def discrete_energy(u, v, K, grid: SpatialGrid) -> float:
    return 0.5 * grid.weight * (dot(v, v) + dot(K @ u, u))


def _tau_of(t: float, eps: float, tag) -> float:
    tau = t / eps
    return tau % 1.0 if isinstance(tag, Periodic) else tau


def _micro_coefficients(pd: ProblemDefinition, eps: float, grid: SpatialGrid):
    d = grid.d
    xs = grid.nodes()
    xc = grid.centers()
    periodic_y = isinstance(pd.algebra_y, Periodic)

    def fast(coords):
        return [(c / eps) % 1.0 if periodic_y else c / eps for c in coords]

    tensor = pd.a_at(xc, fast(xc))
    ys = fast(xs)
    env = {f"y{i + 1}": ys[i] for i in range(d)}
    n = grid.size

    def drift(t, v):
        return np.broadcast_to(evaluate(pd.f, {**env, "tau": _tau_of(t, eps, pd.algebra_tau), "v": v}), (n,))

    def noise(t, v):
        tau = _tau_of(t, eps, pd.algebra_tau)
        return np.stack([np.broadcast_to(evaluate(gk, {**env, "tau": tau, "v": v}), (n,)) for gk in pd.g])

    return tensor, drift, noise


def _check_micro_mesh(eps: float, grid: SpatialGrid, dt: float):
    limit = eps / POINTS_PER_PERIOD * (1 + 1e-12)
    if grid.h > limit:
        raise MeshResolutionError(f"h = {grid.h:g} exceeds eps/{POINTS_PER_PERIOD} = {eps / POINTS_PER_PERIOD:g}")
    if dt > limit:
        raise MeshResolutionError(f"dt = {dt:g} exceeds eps/{POINTS_PER_PERIOD} = {eps / POINTS_PER_PERIOD:g}")


def simulate(
    pd: ProblemDefinition,
    mode: Mode,
    grid: SpatialGrid,
    path: WienerPath,
    n_steps: int | None = None,
    snapshot_stride: int = 1,
    record_energy: bool = False,
    solver: str = "direct",
    u1_override=None,
) -> SolutionTrajectory:
    """Integrate the micro (``Micro(eps)``) or macro (``Macro(...)``) problem to the horizon.

    The path is coarsened to ``n_steps`` (default: its own grid).  Snapshots
    are kept every ``snapshot_stride`` steps, starting at t = 0.
    """
    if grid.d != pd.dimension:
        raise ValueError("grid dimension does not match the problem")
    if path.m != pd.noise_dim:
        raise ValueError(f"path has {path.m} components, problem needs {pd.noise_dim}")
    if not math.isclose(path.horizon, pd.horizon, rel_tol=1e-12):
        raise ValueError("path horizon differs from the problem horizon")
    n_steps = n_steps or path.n_t
    path = path.to_steps(n_steps)
    dt = pd.horizon / n_steps
    if n_steps % snapshot_stride:
        raise ValueError("snapshot stride must divide the number of steps")

    if isinstance(mode, Micro):
        _check_micro_mesh(mode.eps, grid, dt)
        tensor, drift, noise = _micro_coefficients(pd, mode.eps, grid)
    elif isinstance(mode, Macro):
        tensor = mode.tensor
        eff = mode.effective
        if eff.noise_dim != pd.noise_dim:
            raise ValueError("effective noise dimension does not match the problem")

        def drift(t, v):
            return eff.drift(v)

        def noise(t, v):
            return eff.noise(v)

    else:
        raise TypeError(f"unknown mode {mode!r}")

    K = assemble_stiffness(tensor, grid)
    L = dirichlet_laplacian(grid)
    system = ImplicitSystem(K, L, dt, solver)

    xs = grid.nodes()
    xenv = {f"x{i + 1}": xs[i] for i in range(grid.d)}
    u = np.array(np.broadcast_to(evaluate(pd.u0, xenv), (grid.size,)), dtype=float)
    u1 = pd.u1 if u1_override is None else u1_override
    v = np.array(np.broadcast_to(evaluate(u1, xenv), (grid.size,)), dtype=float)
    state = SpdeState(u, v, 0.0)

    w = grid.weight
    h1 = w * dot(L @ u, u)
    l2 = w * dot(v, v)
    sup_h1, sup_l2, int_h1v = h1, l2, 0.0
    times, us, vs = [0.0], [u.copy()], [v.copy()]
    energy = [discrete_energy(u, v, K, grid)] if record_energy else None

    for n in range(n_steps):
        int_h1v += dt * w * dot(L @ state.v, state.v)
        state = step_semi_implicit(state, dt, K, L, drift, noise, path.increments[n], system, n + 1)
        state.t = (n + 1) * dt
        sup_h1 = max(sup_h1, w * dot(L @ state.u, state.u))
        sup_l2 = max(sup_l2, w * dot(state.v, state.v))
        if record_energy:
            energy.append(discrete_energy(state.u, state.v, K, grid))
        if (n + 1) % snapshot_stride == 0:
            times.append(state.t)
            us.append(state.u.copy())
            vs.append(state.v.copy())

    return SolutionTrajectory(
        grid,
        dt,
        np.array(times),
        np.array(us),
        np.array(vs),
        sup_h1,
        sup_l2,
        int_h1v,
        None if energy is None else np.array(energy),
    )


def h_minus1_norm(r: np.ndarray, grid: SpatialGrid, tol: float = 1e-10) -> float:
    """Discrete H^{-1}(Q) norm: sqrt(<r, L^{-1} r> h^d) with the Dirichlet Laplacian L."""
    r = np.asarray(r, dtype=float).ravel()
    if not np.all(np.isfinite(r)):
        raise ValueError("field must be finite")
    L = dirichlet_laplacian(grid)
    w = conjugate_gradient(L.dot, r, tol=tol, maxiter=20 * grid.size).x
    return math.sqrt(max(dot(r, w), 0.0) * grid.weight)


def h_minus1_norms_sq(R: np.ndarray, grid: SpatialGrid, lu=None) -> np.ndarray:
    """Squared H^{-1} norms of the rows of ``R`` via one sparse factorisation."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    lu = lu or splu(dirichlet_laplacian(grid).tocsc())
    W = lu.solve(np.ascontiguousarray(R.T))
    return np.sum(R.T * W, axis=0) * grid.weight


def energy_functionals(traj: SolutionTrajectory) -> dict[str, float]:
    """Sup of ||u||_{H1_0}^2, sup of ||v||_{L2}^2 and left-Riemann int of ||v||_{H1_0}^2 over snapshots."""
    grid = traj.grid
    L = dirichlet_laplacian(grid)
    w = grid.weight
    h1_u = np.array([w * dot(L @ u, u) for u in traj.u])
    l2_v = np.array([w * dot(v, v) for v in traj.v])
    h1_v = np.array([w * dot(L @ v, v) for v in traj.v])
    dts = np.diff(traj.times)
    return {
        "sup_H1_sq": float(h1_u.max()) if h1_u.size else 0.0,
        "sup_L2_sq": float(l2_v.max()) if l2_v.size else 0.0,
        "int_H1_v": float(np.sum(h1_v[:-1] * dts)),
    }
