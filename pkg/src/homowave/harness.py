"""Monte Carlo studies on coupled noise: convergence, a-priori bounds, uniqueness, UCV."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import splu

from .cell_problem import CellGrid, default_cell_resolution, effective_tensor_field
from .effective import EffectiveNonlinearity, build_effective_model
from .expr import Expression, evaluate, to_source
from .problem import ProblemDefinition
from .rng import WienerPath, sample_path
from .wave_sim import (
    POINTS_PER_PERIOD,
    Macro,
    Micro,
    SpatialGrid,
    dirichlet_laplacian,
    simulate,
)

__all__ = [
    "GridPlan",
    "PathRecord",
    "EstimateReport",
    "ConvergenceStudy",
    "UCVRow",
    "plan_grids",
    "macro_tensor",
    "run_convergence_study",
    "estimate_exceedance",
    "verify_apriori",
    "pathwise_uniqueness_check",
    "ucv_diagnostic",
    "emit_report",
    "FUNCTIONALS",
    "APRIORI_FACTOR",
    "MODULUS_SPREAD",
]

log = logging.getLogger(__name__)

FUNCTIONALS = ("sup_H1_sq", "sup_L2_sq", "int_H1_v", "sup_H1_4th", "sup_L2_4th")
THETA_MULTIPLES = (1, 2, 4)
APRIORI_FACTOR = 1.5
MODULUS_SPREAD = 3.0
DELTA_FRACTION = 0.10


def _pow2_at_least(x: float) -> int:
    return 1 << max(0, math.ceil(math.log2(x - 1e-9)))


@dataclass(frozen=True)
class GridPlan:
    """Space and time resolution for one eps: cells per axis and time steps."""

    eps: float
    cells: int
    n_steps: int

    @property
    def grid_1d(self) -> int:
        return self.cells - 1


def plan_grids(eps_ladder: Sequence[float], horizon: float) -> list[GridPlan]:
    """Nested power-of-two grids with h <= eps/16 and dt <= eps/16."""
    plans = []
    for eps in eps_ladder:
        cells = max(16, _pow2_at_least(POINTS_PER_PERIOD / eps))
        steps = _pow2_at_least(POINTS_PER_PERIOD * horizon / eps)
        plans.append(GridPlan(float(eps), cells, steps))
    return plans


def macro_tensor(pd: ProblemDefinition, grid: SpatialGrid | None, cell_n: int | None = None, tol: float = 1e-10):
    """Effective tensor at the cell centres of ``grid`` (one solve if a is x-free)."""
    cg = CellGrid(cell_n or default_cell_resolution(pd.dimension), pd.dimension)
    if not pd.a_depends_on_x:
        return effective_tensor_field(pd, np.zeros((1, pd.dimension)), cg, tol).tensors[0]
    pts = np.column_stack(grid.centers())
    return effective_tensor_field(pd, pts, cg, tol).tensors


# ---------------------------------------------------------------------------
# per-(eps, path) work


@dataclass
class PathRecord:
    eps: float
    path: int
    D: float = math.nan
    sup_H1_sq: float = math.nan
    sup_L2_sq: float = math.nan
    int_H1_v: float = math.nan
    macro_norm: float = math.nan
    modulus: tuple[float, ...] = ()
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _restrict(traj, factor: int, d: int):
    """Sample snapshots (after t = 0) at the nodes of a grid ``factor`` times coarser."""
    n = traj.grid.n_x
    u = traj.u[1:].reshape((-1,) + (n,) * d)
    sl = (slice(None),) + (slice(factor - 1, None, factor),) * d
    return u[sl].reshape(u.shape[0], -1)


def _increment_modulus(traj, theta_steps: Sequence[int], dt_c: float) -> tuple[float, ...]:
    lu = splu(dirichlet_laplacian(traj.grid).tocsc())
    V = traj.v
    w = traj.grid.weight
    out = []
    for j in theta_steps:
        R = V[j:] - V[:-j]
        if R.shape[0] == 0:
            out.append(0.0)
            continue
        W = lu.solve(np.ascontiguousarray(R.T))
        norms = np.sum(R.T * W, axis=0) * w
        out.append(float(np.sum(norms) * dt_c))
    return tuple(out)


def _path_task(args) -> PathRecord:
    (pd, eff, tensor, plan, coarse_cells, coarse_steps, master_steps, seed, p, with_macro) = args
    rec = PathRecord(plan.eps, p)
    try:
        d = pd.dimension
        grid = SpatialGrid(d, plan.grid_1d)
        path = sample_path(pd.noise_dim, master_steps, pd.horizon, seed, p)
        stride = plan.n_steps // coarse_steps
        micro = simulate(pd, Micro(plan.eps), grid, path, plan.n_steps, stride)
        rec.sup_H1_sq, rec.sup_L2_sq, rec.int_H1_v = micro.sup_H1_sq, micro.sup_L2_sq, micro.int_H1_v
        dt_c = pd.horizon / coarse_steps
        rec.modulus = _increment_modulus(micro, THETA_MULTIPLES, dt_c)
        if with_macro:
            factor = plan.cells // coarse_cells
            macro = simulate(pd, Macro(tensor, eff), grid, path, plan.n_steps, stride)
            um = _restrict(macro, factor, d)
            ue = _restrict(micro, factor, d)
            weight = (1.0 / coarse_cells) ** d * dt_c
            rec.D = math.sqrt(float(np.sum((ue - um) ** 2)) * weight)
            rec.macro_norm = math.sqrt(float(np.sum(um**2)) * weight)
    except Exception as exc:  # recorded and excluded by the caller
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _run_tasks(tasks, workers: int) -> list[PathRecord]:
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_path_task, tasks))
    return [_path_task(t) for t in tasks]


# ---------------------------------------------------------------------------
# estimates


@dataclass
class EstimateReport:
    eps: list[float]
    estimates: dict[float, dict[str, float]]  # eps -> functional -> MC mean
    modulus: dict[float, tuple[float, ...]]  # eps -> E int ||v(t+theta) - v(t)||_{H-1}^2 dt
    thetas: tuple[float, ...]
    verdicts: dict[str, bool] = field(default_factory=dict)

    def rows(self):
        for e in self.eps:
            for name, val in self.estimates[e].items():
                yield e, name, val
            for th, val in zip(self.thetas, self.modulus[e]):
                yield e, f"modulus_theta_{th!r}", val


def _estimate_report(records: Sequence[PathRecord], eps_ladder, thetas) -> EstimateReport:
    estimates, modulus = {}, {}
    for e in eps_ladder:
        rs = [r for r in records if r.ok and r.eps == e]
        if not rs:
            estimates[e] = {k: math.nan for k in FUNCTIONALS}
            modulus[e] = tuple(math.nan for _ in thetas)
            continue
        h1 = np.array([r.sup_H1_sq for r in rs])
        l2 = np.array([r.sup_L2_sq for r in rs])
        iv = np.array([r.int_H1_v for r in rs])
        estimates[e] = {
            "sup_H1_sq": float(np.mean(h1)),
            "sup_L2_sq": float(np.mean(l2)),
            "int_H1_v": float(np.mean(iv)),
            "sup_H1_4th": float(np.mean(h1**2)),
            "sup_L2_4th": float(np.mean(l2**2)),
        }
        modulus[e] = tuple(float(x) for x in np.mean(np.array([r.modulus for r in rs]), axis=0))
    rep = EstimateReport(list(eps_ladder), estimates, modulus, tuple(thetas))
    rep.verdicts = _apriori_verdicts(rep)
    return rep


def _apriori_verdicts(rep: EstimateReport) -> dict[str, bool]:
    if not rep.eps:
        return {"apriori_uniform": True, "modulus_linear": True}
    first = rep.estimates[rep.eps[0]]
    uniform = True
    for name in FUNCTIONALS:
        vals = [rep.estimates[e][name] for e in rep.eps]
        if any(not math.isfinite(v) for v in vals):
            uniform = False
            continue
        uniform &= max(vals) <= APRIORI_FACTOR * first[name]
    linear = True
    for e in rep.eps:
        ratios = np.array(rep.modulus[e]) / np.array(rep.thetas)
        if not np.all(np.isfinite(ratios)):
            linear = False
        elif np.max(ratios) > 0:
            linear &= np.min(ratios) > 0 and np.max(ratios) / np.min(ratios) <= MODULUS_SPREAD
    return {"apriori_uniform": bool(uniform), "modulus_linear": bool(linear)}


def estimate_exceedance(errors, delta: float) -> float:
    """Fraction of errors strictly above ``delta``."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors to count")
    if np.any(e < 0):
        raise ValueError("errors must be non-negative")
    return float(np.count_nonzero(e > delta)) / e.size


# ---------------------------------------------------------------------------
# studies


@dataclass
class ConvergenceStudy:
    eps: list[float]
    paths: int
    master_seed: int
    delta: float
    records: list[PathRecord]
    medians: dict[float, float] = field(default_factory=dict)
    means: dict[float, float] = field(default_factory=dict)
    exceedance: dict[float, float] = field(default_factory=dict)
    estimates: EstimateReport | None = None
    verdicts: dict[str, bool] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def errors(self, eps: float) -> np.ndarray:
        return np.array([r.D for r in self.records if r.ok and r.eps == eps])

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def _problem_echo(pd: ProblemDefinition) -> dict:
    return {
        "name": pd.name,
        "dimension": pd.dimension,
        "horizon": pd.horizon,
        "noise_dim": pd.noise_dim,
        "a": [[to_source(e) for e in row] for row in pd.a],
        "f": to_source(pd.f),
        "g": [to_source(e) for e in pd.g],
        "u0": to_source(pd.u0),
        "u1": to_source(pd.u1),
        "alpha": pd.alpha,
        "c": [pd.c1, pd.c2, pd.c3, pd.c4],
        "algebra_y": pd.algebra_y.kind,
        "algebra_tau": pd.algebra_tau.kind,
    }


def _study_tasks(pd, eff, tensor, eps_ladder, n_paths, master_seed, with_macro):
    plans = plan_grids(eps_ladder, pd.horizon)
    if not plans:
        return [], [], ()
    coarse_cells = min(p.cells for p in plans)
    coarse_steps = min(p.n_steps for p in plans)
    master_steps = max(p.n_steps for p in plans)
    tasks = [
        (pd, eff, _tensor_for(tensor, plan), plan, coarse_cells, coarse_steps, master_steps, master_seed, p, with_macro)
        for plan in plans
        for p in range(n_paths)
    ]
    thetas = tuple(k * pd.horizon / coarse_steps for k in THETA_MULTIPLES)
    return tasks, plans, thetas


def _tensor_for(tensor, plan: GridPlan):
    if isinstance(tensor, dict):
        return tensor[plan.cells]
    return tensor


def run_convergence_study(
    pd: ProblemDefinition,
    eps_ladder: Sequence[float],
    n_paths: int,
    delta: float | None = None,
    master_seed: int = 0,
    workers: int = 1,
    effective: EffectiveNonlinearity | None = None,
    tensor=None,
    cell_n: int | None = None,
) -> ConvergenceStudy:
    """Micro vs macro on shared Wiener paths for every (eps, path) pair.

    ``D`` is the L2(Q_T) distance after restricting both solutions to the
    coarsest space-time grid of the ladder (right Riemann sum in time).
    ``delta`` defaults to 10% of the mean macro norm on the finest eps.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise ValueError("eps ladder must be strictly decreasing")
    eff = effective or build_effective_model(pd)
    if tensor is None:
        tensor = np.eye(pd.dimension)
        if eps_ladder and not pd.a_depends_on_x:
            tensor = macro_tensor(pd, None, cell_n)
        elif eps_ladder:
            # x-dependent effective tensors are sampled on each grid of the ladder
            tensor = {
                p.cells: macro_tensor(pd, SpatialGrid(pd.dimension, p.grid_1d), cell_n)
                for p in plan_grids(eps_ladder, pd.horizon)
            }
    tasks, plans, thetas = _study_tasks(pd, eff, tensor, eps_ladder, n_paths, master_seed, True)
    records = _run_tasks(tasks, workers)
    for r in records:
        if not r.ok:
            log.warning("eps=%g path=%d failed and is excluded: %s", r.eps, r.path, r.error)

    finest = [r.macro_norm for r in records if r.ok and eps_ladder and r.eps == eps_ladder[-1]]
    if delta is None:
        delta = DELTA_FRACTION * float(np.mean(finest)) if finest else math.nan
    study = ConvergenceStudy(eps_ladder, n_paths, master_seed, float(delta), records)
    for e in eps_ladder:
        errs = study.errors(e)
        study.medians[e] = float(np.median(errs)) if errs.size else math.nan
        study.means[e] = float(np.mean(errs)) if errs.size else math.nan
        study.exceedance[e] = estimate_exceedance(errs, delta) if errs.size else math.nan
    study.estimates = _estimate_report(records, eps_ladder, thetas)
    med = [study.medians[e] for e in eps_ladder]
    exc = [study.exceedance[e] for e in eps_ladder]
    study.verdicts = {
        "median_strictly_decreasing": all(b < a for a, b in zip(med, med[1:])),
        "exceedance_nonincreasing": all(b <= a for a, b in zip(exc, exc[1:])),
        "exceedance_zero_at_finest": bool(exc) and exc[-1] == 0.0,
        **study.estimates.verdicts,
    }
    study.config = {
        "problem": _problem_echo(pd),
        "eps": eps_ladder,
        "paths": n_paths,
        "master_seed": master_seed,
        "grids": [{"eps": p.eps, "cells": p.cells, "steps": p.n_steps} for p in plans],
        "delta": study.delta,
    }
    return study


def verify_apriori(
    pd: ProblemDefinition,
    eps_ladder: Sequence[float],
    n_paths: int,
    master_seed: int = 0,
    workers: int = 1,
) -> EstimateReport:
    """Monte Carlo energy moments and H^{-1} increment modulus of the micro solutions."""
    eps_ladder = [float(e) for e in eps_ladder]
    tasks, _, thetas = _study_tasks(pd, None, None, eps_ladder, n_paths, master_seed, False)
    records = _run_tasks(tasks, workers)
    for r in records:
        if not r.ok:
            log.warning("eps=%g path=%d failed and is excluded: %s", r.eps, r.path, r.error)
    return _estimate_report(records, eps_ladder, thetas)


def pathwise_uniqueness_check(
    pd: ProblemDefinition,
    effective: EffectiveNonlinearity,
    tensor,
    grid: SpatialGrid,
    path: WienerPath,
    n_steps: int | None = None,
    other_problem: ProblemDefinition | None = None,
    other_path: WienerPath | None = None,
) -> bool:
    """True iff two macro runs (identical inputs unless overridden) agree bitwise."""
    first = simulate(pd, Macro(tensor, effective), grid, path, n_steps)
    second = simulate(other_problem or pd, Macro(tensor, effective), grid, other_path or path, n_steps)
    return first.identical_to(second)


# ---------------------------------------------------------------------------
# UCV


@dataclass(frozen=True)
class UCVRow:
    eps: float
    quadratic_variation: float
    bound: float
    integral: float
    passed: bool


def ucv_diagnostic(
    chi: Expression,
    theta: Expression,
    eps_ladder: Sequence[float],
    n_t: int = 4096,
    master_seed: int = 0,
    tol: float = 1e-6,
    sup_samples: int = 2048,
) -> list[UCVRow]:
    """Quadratic variation on [0, 1] of the integrand chi(t) * theta(t / eps).

    The bound is ``t * sup|Phi|^2`` at t = 1 with the sup sampled on a dense
    (t, tau) grid over one tau-period and along every run grid.
    """
    t_dense = np.linspace(0.0, 1.0, sup_samples + 1)
    chi_d = np.broadcast_to(evaluate(chi, {"t": t_dense}), t_dense.shape)
    th_d = np.broadcast_to(evaluate(theta, {"tau": t_dense}), t_dense.shape)
    sup = float(np.max(np.abs(chi_d)) * np.max(np.abs(th_d)))
    dt = 1.0 / n_t
    tn = np.arange(n_t) * dt
    path = sample_path(1, n_t, 1.0, master_seed, 0)
    phis = {}
    for eps in eps_ladder:
        phi = np.broadcast_to(evaluate(chi, {"t": tn}), tn.shape) * np.broadcast_to(
            evaluate(theta, {"tau": tn / eps}), tn.shape
        )
        phis[eps] = phi
        sup = max(sup, float(np.max(np.abs(phi))))
    if not math.isfinite(sup) or sup > 1e12:
        raise ValueError("integrand is not bounded on the sampled set")
    rows = []
    for eps in eps_ladder:
        phi = phis[eps]
        qv = float(np.sum(phi**2) * dt)
        integral = float(np.sum(phi * path.increments[:, 0]))
        bound = 1.0 * sup**2
        rows.append(UCVRow(float(eps), qv, bound, integral, qv <= bound + tol))
    return rows


# ---------------------------------------------------------------------------
# persistence


def _fmt(x: float) -> str:
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k) if not isinstance(k, str) else k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_report(result, out_dir, figures: bool = False) -> list[Path]:
    """Write ``errors.csv``, ``estimates.csv`` and ``summary.json`` (plus optional PNGs).

    ``result`` is a :class:`ConvergenceStudy` or an :class:`EstimateReport`.
    Output is a pure function of the result, so reruns give identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    study = result if isinstance(result, ConvergenceStudy) else None
    est = study.estimates if study is not None else result

    if study is not None:
        p = out / "errors.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eps", "path", "D", "sup_H1_sq", "sup_L2_sq"])
            for r in study.records:
                if r.ok:
                    w.writerow([_fmt(r.eps), r.path, _fmt(r.D), _fmt(r.sup_H1_sq), _fmt(r.sup_L2_sq)])
        written.append(p)

    p = out / "estimates.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "functional", "value"])
        if est is not None:
            for e, name, val in est.rows():
                w.writerow([_fmt(e), name, _fmt(val)])
    written.append(p)

    if study is not None:
        summary = {
            "config": study.config,
            "seeds": {"master_seed": study.master_seed, "paths": list(range(study.paths))},
            "rows": sum(1 for r in study.records if r.ok),
            "failed": [{"eps": r.eps, "path": r.path, "error": r.error} for r in study.records if not r.ok],
            "delta": study.delta,
            "medians": {_fmt(e): v for e, v in study.medians.items()},
            "means": {_fmt(e): v for e, v in study.means.items()},
            "exceedance": {_fmt(e): v for e, v in study.exceedance.items()},
            "verdicts": study.verdicts,
        }
    else:
        summary = {
            "rows": 0 if est is None else len(est.eps),
            "estimates": {} if est is None else {_fmt(e): est.estimates[e] for e in est.eps},
            "modulus": {} if est is None else {_fmt(e): list(est.modulus[e]) for e in est.eps},
            "thetas": [] if est is None else list(est.thetas),
            "verdicts": {} if est is None else est.verdicts,
        }
    p = out / "summary.json"
    p.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    written.append(p)

    if figures:
        from . import plotting

        if study is not None and study.eps:
            written += plotting.convergence_figures(study, out)
        elif est is not None and est.eps:
            written += plotting.estimate_figures(est, out)
    return written
