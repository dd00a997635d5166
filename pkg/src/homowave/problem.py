"""Micro problem definition, problem-file loading and sampled validation."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .expr import Expression, parse_expression, variables_for_dimension, evaluate
from .mean_value import AlgebraTag, Periodic, algebra_from_dict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ProblemDefinition",
    "ValidationCheck",
    "ValidationReport",
    "load_problem",
    "problem_from_dict",
    "validate_problem",
    "VALIDATION_SEED",
    "V_SAMPLE_RANGE",
]

# documented seed for sampled validation; reports are reproducible
VALIDATION_SEED = 20240917
V_SAMPLE_RANGE = (-10.0, 10.0)
SYMMETRY_TOL = 1e-9
ELLIPTICITY_TOL = 1e-6


@dataclass(frozen=True)
class ProblemDefinition:
    """Validated micro problem: coefficients, nonlinearities, data and constants."""

    dimension: int
    horizon: float
    noise_dim: int
    a: tuple[tuple[Expression, ...], ...]
    f: Expression
    g: tuple[Expression, ...]
    u0: Expression
    u1: Expression
    alpha: float
    c1: float
    c2: float
    c3: float
    c4: float
    algebra_y: AlgebraTag = field(default_factory=Periodic)
    algebra_tau: AlgebraTag = field(default_factory=Periodic)
    name: str = ""

    def __post_init__(self):
        d = self.dimension
        if d not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.noise_dim < 1 or len(self.g) != self.noise_dim:
            raise ValueError("noise_dim must be >= 1 and match the number of g components")
        if len(self.a) != d or any(len(row) != d for row in self.a):
            raise ValueError(f"a must be a {d}x{d} matrix of expressions")
        for name in ("alpha", "c1", "c2", "c3", "c4"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        coeff_vars = variables_for_dimension(d, tau=False, v=False)
        nonlin_vars = variables_for_dimension(d, space=False)
        data_vars = variables_for_dimension(d, cell=False, tau=False, v=False)
        for row in self.a:
            for e in row:
                _check_vars(e, coeff_vars, "a")
        _check_vars(self.f, nonlin_vars, "f")
        for e in self.g:
            _check_vars(e, nonlin_vars, "g")
        _check_vars(self.u0, data_vars, "u0")
        _check_vars(self.u1, data_vars, "u1")

    @property
    def a_depends_on_x(self) -> bool:
        xs = [f"x{i + 1}" for i in range(self.dimension)]
        return any(e.depends_on(*xs) for row in self.a for e in row)

    def with_(self, **changes) -> "ProblemDefinition":
        return replace(self, **changes)

    def a_at(self, x, y) -> np.ndarray:
        """Sample the coefficient matrix; ``x`` and ``y`` are sequences of d arrays.

        Returns an array of shape ``broadcast_shape + (d, d)``.
        """
        d = self.dimension
        env = {f"x{i + 1}": x[i] for i in range(d)}
        env.update({f"y{i + 1}": y[i] for i in range(d)})
        shape = np.broadcast_shapes(*(np.shape(c) for c in list(x) + list(y)))
        out = np.empty(shape + (d, d))
        for i in range(d):
            for j in range(d):
                out[..., i, j] = np.broadcast_to(evaluate(self.a[i][j], env), shape)
        return out


def _check_vars(expr: Expression, allowed, what):
    extra = expr.variables - set(allowed)
    if extra:
        raise ValueError(f"{what} uses variables {sorted(extra)} outside {sorted(allowed)}")


def _parse_matrix(raw, d):
    allowed = variables_for_dimension(d, tau=False, v=False)
    if d == 1 and isinstance(raw, (str, int, float)):
        raw = [[raw]]
    return tuple(tuple(parse_expression(str(e), allowed) for e in row) for row in raw)


def problem_from_dict(doc: Mapping[str, Any], name: str = "") -> ProblemDefinition:
    """Build a problem from a mapping with the problem-file schema (see README)."""
    d = int(doc["dimension"])
    nonlin = variables_for_dimension(d, space=False)
    data = variables_for_dimension(d, cell=False, tau=False, v=False)
    g_raw = doc["g"]
    if isinstance(g_raw, (str, int, float)):
        g_raw = [g_raw]
    g = tuple(parse_expression(str(e), nonlin) for e in g_raw)
    return ProblemDefinition(
        dimension=d,
        horizon=float(doc["horizon"]),
        noise_dim=int(doc.get("noise_dim", len(g))),
        a=_parse_matrix(doc["a"], d),
        f=parse_expression(str(doc["f"]), nonlin),
        g=g,
        u0=parse_expression(str(doc["u0"]), data),
        u1=parse_expression(str(doc.get("u1", "0")), data),
        alpha=float(doc["alpha"]),
        c1=float(doc["c1"]),
        c2=float(doc["c2"]),
        c3=float(doc["c3"]),
        c4=float(doc["c4"]),
        algebra_y=algebra_from_dict(doc.get("algebra_y")),
        algebra_tau=algebra_from_dict(doc.get("algebra_tau")),
        name=str(doc.get("name", name)),
    )


def load_problem(path) -> ProblemDefinition:
    path = Path(path)
    with path.open("rb") as fh:
        doc = tomllib.load(fh)
    return problem_from_dict(doc, name=path.stem)


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    observed: float
    bound: float


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ValidationCheck, ...]
    sample_points: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ValidationCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _nonlin_env(d, ys, tau, v):
    env = {f"y{i + 1}": ys[:, i] for i in range(d)}
    env["tau"] = tau
    env["v"] = v
    return env


def validate_problem(
    pd: ProblemDefinition,
    sample_count: int = 100,
    tol: float = ELLIPTICITY_TOL,
    symmetry_tol: float = SYMMETRY_TOL,
    seed: int = VALIDATION_SEED,
) -> ValidationReport:
    """Check (A1)-(A2) style assumptions on 10 * sample_count random points.

    Points are drawn from [0,1]^d for x and y, [0,1] for tau and
    ``V_SAMPLE_RANGE`` for v.  Failures are reported, never raised.
    """
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    d = pd.dimension
    npts = 10 * sample_count
    rng = np.random.default_rng(seed)
    xs = rng.random((npts, d))
    ys = rng.random((npts, d))
    tau = rng.random(npts)
    v1 = rng.uniform(*V_SAMPLE_RANGE, npts)
    v2 = rng.uniform(*V_SAMPLE_RANGE, npts)
    checks = []

    a = pd.a_at([xs[:, i] for i in range(d)], [ys[:, i] for i in range(d)])
    asym = float(np.max(np.abs(a - np.swapaxes(a, -1, -2))))
    checks.append(ValidationCheck("symmetry", asym <= symmetry_tol, asym, symmetry_tol))
    # min over xi of a xi.xi / |xi|^2 is the smallest eigenvalue of the symmetric part
    lam_min = float(np.min(np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))))
    checks.append(ValidationCheck("ellipticity", lam_min >= pd.alpha - tol, lam_min, pd.alpha))

    f1 = np.broadcast_to(evaluate(pd.f, _nonlin_env(d, ys, tau, v1)), (npts,))
    f2 = np.broadcast_to(evaluate(pd.f, _nonlin_env(d, ys, tau, v2)), (npts,))
    g1 = np.stack([np.broadcast_to(evaluate(gk, _nonlin_env(d, ys, tau, v1)), (npts,)) for gk in pd.g])
    g2 = np.stack([np.broadcast_to(evaluate(gk, _nonlin_env(d, ys, tau, v2)), (npts,)) for gk in pd.g])

    growth_f = float(np.max(f1**2 / (1.0 + v1**2)))
    checks.append(ValidationCheck("growth_f", growth_f <= pd.c1 + tol, growth_f, pd.c1))
    growth_g = float(np.max(np.sum(g1**2, axis=0) / (1.0 + v1**2)))
    checks.append(ValidationCheck("growth_g", growth_g <= pd.c3 + tol, growth_g, pd.c3))

    dv = np.abs(v1 - v2)
    ok = dv > 0
    lip_f = float(np.max(np.abs(f1 - f2)[ok] / dv[ok])) if ok.any() else 0.0
    checks.append(ValidationCheck("lipschitz_f", lip_f <= pd.c2 + tol, lip_f, pd.c2))
    lip_g = float(np.max(np.linalg.norm(g1 - g2, axis=0)[ok] / dv[ok])) if ok.any() else 0.0
    checks.append(ValidationCheck("lipschitz_g", lip_g <= pd.c4 + tol, lip_g, pd.c4))
    return ValidationReport(tuple(checks), npts, seed)
