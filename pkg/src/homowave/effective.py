"""Homogenized drift and noise of the macro equation.

The effective drift is the mean of ``f(., ., v)`` and each effective noise
component is the quadratic mean ``sqrt(M(g_k(., ., v)^2))``.  Both are
tabulated on a v-grid and linearly interpolated; nonlinearities that do not
depend on (y, tau) are kept in closed form instead.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .expr import BinOp, Expression, evaluate
from .mean_value import AlgebraTag, mean_product
from .problem import ProblemDefinition

__all__ = [
    "EffectiveFunction",
    "EffectiveNonlinearity",
    "StructureCheck",
    "StructureReport",
    "homogenize_drift",
    "homogenize_noise",
    "build_effective_model",
    "default_v_grid",
    "verify_structure",
    "STRUCTURE_SEED",
]

log = logging.getLogger(__name__)

STRUCTURE_SEED = 4242
V_GRID_NODES = 513
V_HEADROOM = 10.0


@dataclass
class EffectiveFunction:
    """Scalar function of v, either closed form or a linear-interpolation table."""

    v_grid: np.ndarray | None = None
    values: np.ndarray | None = None
    expression: Expression | None = None
    absolute: bool = False
    max_error: float = 0.0
    _warned: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if self.expression is None:
            if self.v_grid is None or self.values is None:
                raise ValueError("tabulated effective function needs a grid and values")
            if np.any(np.diff(self.v_grid) <= 0):
                raise ValueError("v-grid must be strictly increasing")

    @property
    def mode(self) -> str:
        return "tabulated" if self.expression is None else "closed_form"

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.expression is not None:
            out = np.broadcast_to(evaluate(self.expression, {"v": v}), v.shape)
            return np.abs(out) if self.absolute else np.array(out)
        lo, hi = self.v_grid[0], self.v_grid[-1]
        if not self._warned and (np.any(v < lo) or np.any(v > hi)):
            log.warning("velocity outside tabulated range [%g, %g]; clamping", lo, hi)
            self._warned = True
        return np.interp(v, self.v_grid, self.values)


@dataclass
class EffectiveNonlinearity:
    f: EffectiveFunction
    g: tuple[EffectiveFunction, ...]

    @property
    def noise_dim(self) -> int:
        return len(self.g)

    def drift(self, v):
        return self.f(v)

    def noise(self, v) -> np.ndarray:
        return np.stack([gk(v) for gk in self.g])

    def table(self, v_grid=None) -> np.ndarray:
        """Rows ``v, f~(v), g~_1(v), ..., g~_m(v)``."""
        if v_grid is None:
            tabulated = [fn for fn in (self.f, *self.g) if fn.v_grid is not None]
            v_grid = tabulated[0].v_grid if tabulated else np.linspace(-V_HEADROOM, V_HEADROOM, V_GRID_NODES)
        return np.column_stack([v_grid, self.f(v_grid)] + [gk(v_grid) for gk in self.g])


def _cell_vars(d):
    return tuple(f"y{i + 1}" for i in range(d))


def homogenize_drift(
    f: Expression, tag_y: AlgebraTag, tag_tau: AlgebraTag, v_grid, d: int = 1, order: int | None = None
) -> EffectiveFunction:
    if not f.depends_on("tau", *_cell_vars(d)):
        return EffectiveFunction(expression=f)
    v_grid = np.asarray(v_grid, dtype=float)
    values = np.empty_like(v_grid)
    err = 0.0
    for i, v in enumerate(v_grid):
        res = mean_product(f, tag_y, tag_tau, d, {"v": float(v)}, order)
        values[i] = res.value
        err = max(err, res.estimated_error)
    return EffectiveFunction(v_grid, values, max_error=err)


def homogenize_noise(
    g, tag_y: AlgebraTag, tag_tau: AlgebraTag, v_grid, d: int = 1, order: int | None = None
) -> tuple[EffectiveFunction, ...]:
    out = []
    v_grid = np.asarray(v_grid, dtype=float)
    for gk in g:
        if not gk.depends_on("tau", *_cell_vars(d)):
            # sqrt(M(g^2)) of a (y, tau)-free function is |g|
            out.append(EffectiveFunction(expression=gk, absolute=True))
            continue
        sq = Expression(BinOp("*", gk.root, gk.root))
        values = np.empty_like(v_grid)
        err = 0.0
        for i, v in enumerate(v_grid):
            res = mean_product(sq, tag_y, tag_tau, d, {"v": float(v)}, order)
            if res.value < -res.estimated_error:
                raise ArithmeticError(f"negative quadratic mean {res.value:g} at v={v:g}")
            values[i] = np.sqrt(max(res.value, 0.0))
            err = max(err, res.estimated_error)
        out.append(EffectiveFunction(v_grid, values, max_error=err))
    return tuple(out)


def default_v_grid(pd: ProblemDefinition, nodes: int = V_GRID_NODES, headroom: float = V_HEADROOM) -> np.ndarray:
    d = pd.dimension
    t = np.linspace(0.0, 1.0, 65)
    xs = np.meshgrid(*([t] * d), indexing="ij")
    u1 = np.broadcast_to(evaluate(pd.u1, {f"x{i + 1}": xs[i] for i in range(d)}), xs[0].shape)
    vmax = 4.0 * float(np.max(np.abs(u1))) + headroom
    return np.linspace(-vmax, vmax, nodes)


def build_effective_model(
    pd: ProblemDefinition, v_grid=None, order: int | None = None
) -> EffectiveNonlinearity:
    v_grid = default_v_grid(pd) if v_grid is None else np.asarray(v_grid, dtype=float)
    f = homogenize_drift(pd.f, pd.algebra_y, pd.algebra_tau, v_grid, pd.dimension, order)
    g = homogenize_noise(pd.g, pd.algebra_y, pd.algebra_tau, v_grid, pd.dimension, order)
    return EffectiveNonlinearity(f, g)


# ---------------------------------------------------------------------------
# structure checks


@dataclass(frozen=True)
class StructureCheck:
    name: str
    observed: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class StructureReport:
    checks: tuple[StructureCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _lipschitz(fn, v1, v2):
    dv = np.abs(v1 - v2)
    ok = dv > 0
    if not ok.any():
        return 0.0
    return float(np.max(np.abs(fn(v1) - fn(v2))[ok] / dv[ok]))


def verify_structure(
    eff: EffectiveNonlinearity,
    c1: float,
    c2: float,
    c3: float,
    c4: float,
    pairs: int = 1000,
    tol: float = 1e-6,
    seed: int = STRUCTURE_SEED,
    v_range: tuple[float, float] | None = None,
) -> StructureReport:
    """Observed Lipschitz and growth constants of the effective nonlinearities."""
    grids = [fn.v_grid for fn in (eff.f, *eff.g) if fn.v_grid is not None]
    if v_range is None:
        v_range = (grids[0][0], grids[0][-1]) if grids else (-V_HEADROOM, V_HEADROOM)
    rng = np.random.default_rng(seed)
    v1 = rng.uniform(*v_range, pairs)
    v2 = rng.uniform(*v_range, pairs)
    grid = grids[0] if grids else np.linspace(*v_range, V_GRID_NODES)
    checks = []

    lip_f = _lipschitz(eff.f, v1, v2)
    checks.append(StructureCheck("lipschitz_f", lip_f, c2, lip_f <= c2 + tol))
    for k, gk in enumerate(eff.g, start=1):
        lip = _lipschitz(gk, v1, v2)
        checks.append(StructureCheck(f"lipschitz_g{k}", lip, c4, lip <= c4 + tol))
        gmin = float(np.min(gk(grid)))
        checks.append(StructureCheck(f"nonnegative_g{k}", gmin, 0.0, gmin >= 0.0))

    weight = 1.0 + grid**2
    growth_f = float(np.max(eff.f(grid) ** 2 / weight))
    checks.append(StructureCheck("growth_f", growth_f, c1, growth_f <= c1 * (1 + tol)))
    growth_g = float(np.max(np.sum(eff.noise(grid) ** 2, axis=0) / weight))
    checks.append(StructureCheck("growth_g", growth_g, c3, growth_g <= c3 * (1 + tol)))
    return StructureReport(tuple(checks))
