"""Mean values over the supported algebras with mean value.

Three algebras are supported: periodic functions on the unit cell, Bohr almost
periodic functions given as explicit trigonometric polynomials, and functions
with a limit at infinity.  Product algebras (in ``y`` and ``tau``) are handled
by iterating the two one-factor means.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .expr import BinOp, Call, Expression, Neg, Num, Pi, Var, evaluate, substitute

__all__ = [
    "Periodic",
    "QuasiPeriodic",
    "LimitAtInfinity",
    "AlgebraTag",
    "MeanValueResult",
    "TrigPolynomial",
    "NotTrigPolynomialError",
    "ExtrapolationError",
    "mean_periodic",
    "mean_quasiperiodic",
    "mean_limit_at_infinity",
    "mean_product",
    "trig_expand",
    "default_order",
    "algebra_from_dict",
]

ZERO_FREQ_TOL = 1e-12


@dataclass(frozen=True)
class Periodic:
    """Periodic functions with period cell (0,1)^k."""

    kind: str = field(default="periodic", init=False)


@dataclass(frozen=True)
class QuasiPeriodic:
    """Trigonometric polynomials with the declared frequency vectors."""

    frequencies: tuple[tuple[float, ...], ...] = ()
    kind: str = field(default="quasiperiodic", init=False)

    def __post_init__(self):
        freqs = tuple(tuple(float(c) for c in np.atleast_1d(f)) for f in self.frequencies)
        object.__setattr__(self, "frequencies", freqs)
        for i, a in enumerate(freqs):
            for b in freqs[i + 1:]:
                if len(a) == len(b) and np.allclose(a, b, rtol=0, atol=1e-12):
                    raise ValueError(f"duplicate frequency vector {a}")


@dataclass(frozen=True)
class LimitAtInfinity:
    """Functions converging at infinity; ``limit=None`` means extrapolate."""

    limit: float | None = None
    radius: float = 1.0e4
    tol: float = 1.0e-6
    kind: str = field(default="limit", init=False)

    def __post_init__(self):
        if self.limit is None and not self.radius > 0:
            raise ValueError("extrapolation radius must be positive")

    @property
    def extrapolate(self) -> bool:
        return self.limit is None


AlgebraTag = Union[Periodic, QuasiPeriodic, LimitAtInfinity]


def algebra_from_dict(table: Mapping | None) -> AlgebraTag:
    """Build a tag from a problem-file table such as ``{kind = "periodic"}``."""
    if table is None:
        return Periodic()
    kind = str(table.get("kind", "periodic")).lower()
    if kind == "periodic":
        return Periodic()
    if kind in ("quasiperiodic", "quasi_periodic", "almost_periodic"):
        return QuasiPeriodic(tuple(table.get("frequencies", ())))
    if kind in ("limit", "limit_at_infinity"):
        limit = table.get("limit", "extrapolate")
        limit = None if limit == "extrapolate" else float(limit)
        return LimitAtInfinity(limit, float(table.get("radius", 1.0e4)), float(table.get("tol", 1.0e-6)))
    raise ValueError(f"unknown algebra kind {kind!r}")


@dataclass(frozen=True)
class MeanValueResult:
    value: float
    estimated_error: float
    method: str  # "quadrature" | "zero_frequency" | "limit"


def default_order(k: int) -> int:
    return 256 if k <= 1 else 128


# ---------------------------------------------------------------------------
# periodic


def _midpoint_mean(u: Callable, n: int, k: int) -> float:
    nodes = (np.arange(n) + 0.5) / n
    grids = np.meshgrid(*([nodes] * k), indexing="ij")
    vals = np.broadcast_to(np.asarray(u(*grids), dtype=float), (n,) * k)
    return float(vals.sum() / n**k)


def mean_periodic(u: Callable, order: int | None = None, k: int = 1) -> MeanValueResult:
    """Composite midpoint mean of a periodic function over (0,1)^k.

    ``u`` is called with ``k`` coordinate arrays and must return an array of
    the broadcast shape.  The error estimate compares ``order`` against
    ``order // 2`` nodes per axis.
    """
    n = order or default_order(k)
    if n < 1:
        raise ValueError("order must be positive")
    fine = _midpoint_mean(u, n, k)
    err = abs(fine - _midpoint_mean(u, n // 2, k)) if n >= 2 else math.inf
    return MeanValueResult(fine, err, "quadrature")


# ---------------------------------------------------------------------------
# quasi-periodic: explicit trigonometric polynomials


class NotTrigPolynomialError(ValueError):
    pass


@dataclass(frozen=True)
class TrigPolynomial:
    """``constant + sum_k (a_k cos(l_k . y) + b_k sin(l_k . y))``."""

    constant: float
    terms: tuple[tuple[tuple[float, ...], float, float], ...] = ()

    def __call__(self, *ys):
        ys = [np.asarray(y, dtype=float) for y in ys]
        out = self.constant + 0.0 * sum(ys, 0.0)
        for freq, a, b in self.terms:
            phase = sum(f * y for f, y in zip(freq, ys))
            out = out + a * np.cos(phase) + b * np.sin(phase)
        return out

    @property
    def frequencies(self):
        return tuple(t[0] for t in self.terms)


def _freq_key(lam) -> tuple[float, ...]:
    return tuple(0.0 if abs(c) <= ZERO_FREQ_TOL else round(c, 12) for c in lam)


class _Spectrum(dict):
    """Map frequency key -> complex coefficient of exp(i lam . y)."""

    @classmethod
    def const(cls, c, k):
        s = cls()
        s[(0.0,) * k] = complex(c)
        return s

    def add(self, other, sign=1.0):
        out = _Spectrum(self)
        for key, c in other.items():
            out[key] = out.get(key, 0j) + sign * c
        return out

    def scale(self, c):
        return _Spectrum({key: c * v for key, v in self.items()})

    def mul(self, other):
        out = _Spectrum()
        for k1, c1 in self.items():
            for k2, c2 in other.items():
                key = _freq_key([a + b for a, b in zip(k1, k2)])
                out[key] = out.get(key, 0j) + c1 * c2
        return out

    def constant_value(self):
        if any(any(c != 0.0 for c in key) for key, v in self.items() if v != 0):
            return None
        return sum(self.values(), 0j)


def _affine(node, names) -> tuple[np.ndarray, float] | None:
    k = len(names)
    if isinstance(node, Num):
        return np.zeros(k), node.value
    if isinstance(node, Pi):
        return np.zeros(k), math.pi
    if isinstance(node, Var):
        if node.name not in names:
            return None
        lam = np.zeros(k)
        lam[names.index(node.name)] = 1.0
        return lam, 0.0
    if isinstance(node, Neg):
        inner = _affine(node.operand, names)
        return None if inner is None else (-inner[0], -inner[1])
    if isinstance(node, BinOp):
        left, right = _affine(node.left, names), _affine(node.right, names)
        if left is None or right is None:
            return None
        if node.op == "+":
            return left[0] + right[0], left[1] + right[1]
        if node.op == "-":
            return left[0] - right[0], left[1] - right[1]
        if node.op == "*":
            if not left[0].any():
                return left[1] * right[0], left[1] * right[1]
            if not right[0].any():
                return right[1] * left[0], right[1] * left[1]
            return None
        if node.op == "/" and not right[0].any() and right[1] != 0:
            return left[0] / right[1], left[1] / right[1]
    return None


def _spectrum(node, names, allowed) -> _Spectrum:
    k = len(names)
    if isinstance(node, (Num, Pi)):
        return _Spectrum.const(math.pi if isinstance(node, Pi) else node.value, k)
    if isinstance(node, Var):
        raise NotTrigPolynomialError(f"bare variable {node.name!r} is not a trigonometric polynomial")
    if isinstance(node, Neg):
        return _spectrum(node.operand, names, allowed).scale(-1.0)
    if isinstance(node, BinOp):
        left = _spectrum(node.left, names, allowed)
        right = _spectrum(node.right, names, allowed)
        if node.op == "+":
            return left.add(right)
        if node.op == "-":
            return left.add(right, -1.0)
        if node.op == "*":
            return left.mul(right)
        c = right.constant_value()
        if node.op == "/":
            if c is None or c == 0:
                raise NotTrigPolynomialError("division by a non-constant or zero term")
            return left.scale(1.0 / c)
        if c is None or c.imag != 0 or c.real != int(c.real) or not 0 <= c.real <= 32:
            raise NotTrigPolynomialError("powers need a small non-negative integer exponent")
        out = _Spectrum.const(1.0, k)
        for _ in range(int(c.real)):
            out = out.mul(left)
        return out
    if isinstance(node, Call) and node.func in ("sin", "cos"):
        aff = _affine(node.args[0], names)
        if aff is None:
            raise NotTrigPolynomialError(f"{node.func}() argument is not affine in {names}")
        lam, phase = aff
        if not lam.any():
            return _Spectrum.const(math.sin(phase) if node.func == "sin" else math.cos(phase), k)
        if allowed:
            ok = any(
                len(f) == k and (np.allclose(lam, f, atol=1e-9, rtol=0) or np.allclose(lam, -np.asarray(f), atol=1e-9, rtol=0))
                for f in allowed
            )
            if not ok:
                raise NotTrigPolynomialError(f"frequency {tuple(lam)} is not among the declared frequencies")
        e_pos, e_neg = cmath.exp(1j * phase), cmath.exp(-1j * phase)
        kp, kn = _freq_key(lam), _freq_key(-lam)
        if node.func == "cos":
            return _Spectrum({kp: e_pos / 2, kn: e_neg / 2})
        return _Spectrum({kp: e_pos / 2j, kn: -e_neg / 2j})
    raise NotTrigPolynomialError(f"unsupported construct {node!r}")


def trig_expand(expr: Expression, names: Sequence[str], frequencies=()) -> TrigPolynomial:
    """Expand ``expr`` (constant in every variable except ``names``) as a trig polynomial."""
    names = list(names)
    folded = substitute(expr, {})
    spectrum = _spectrum(folded.root, names, tuple(frequencies))
    zero = (0.0,) * len(names)
    constant = spectrum.get(zero, 0j).real
    terms = []
    seen = set()
    for key in sorted(spectrum):
        if key == zero or key in seen:
            continue
        neg = _freq_key([-c for c in key])
        seen.update((key, neg))
        c_pos, c_neg = spectrum.get(key, 0j), spectrum.get(neg, 0j)
        # c+ e^{i t} + c- e^{-i t} for real-valued input has c- = conj(c+)
        a = (c_pos + c_neg).real
        b = (1j * (c_pos - c_neg)).real
        if a != 0.0 or b != 0.0:
            terms.append((key, a, b))
    return TrigPolynomial(constant, tuple(terms))


def mean_quasiperiodic(u, names: Sequence[str] = ("y1",), tag: QuasiPeriodic | None = None) -> MeanValueResult:
    """Bohr mean of a trigonometric polynomial: its zero-frequency coefficient.

    ``u`` is either a :class:`TrigPolynomial` or an :class:`Expression` that
    expands to one in the variables ``names``.
    """
    if isinstance(u, Expression):
        u = trig_expand(u, names, tag.frequencies if tag else ())
    if not isinstance(u, TrigPolynomial):
        raise NotTrigPolynomialError("quasi-periodic means need an explicit trigonometric polynomial")
    value = u.constant
    for freq, a, _ in u.terms:
        if all(abs(c) <= ZERO_FREQ_TOL for c in freq):
            value += a
    return MeanValueResult(float(value), 0.0, "zero_frequency")


# ---------------------------------------------------------------------------
# limit at infinity


class ExtrapolationError(ArithmeticError):
    pass


def _extrapolate(u: Callable, tag: LimitAtInfinity):
    r = tag.radius
    samples = [np.asarray(u(s * r * m), dtype=float) for m in (1.0, 2.0, 4.0) for s in (1.0, -1.0)]
    stack = np.stack(np.broadcast_arrays(*samples))
    spread = stack.max(axis=0) - stack.min(axis=0)
    if np.any(spread > tag.tol) or not np.all(np.isfinite(stack)):
        raise ExtrapolationError(
            f"values at +-{r:g}, +-{2 * r:g}, +-{4 * r:g} spread by {float(np.max(spread)):.3e} > tol {tag.tol:g}"
        )
    return stack.mean(axis=0), spread


def mean_limit_at_infinity(u: Callable, tag: LimitAtInfinity) -> MeanValueResult:
    """Mean of a function converging at infinity equals its limit."""
    if not tag.extrapolate:
        return MeanValueResult(float(tag.limit), 0.0, "limit")
    value, spread = _extrapolate(u, tag)
    return MeanValueResult(float(value), float(spread), "limit")


# ---------------------------------------------------------------------------
# product algebra


def _cell_names(d):
    return [f"y{i + 1}" for i in range(d)]


def mean_product(
    u: Expression,
    tag_y: AlgebraTag,
    tag_tau: AlgebraTag,
    d: int = 1,
    bindings: Mapping[str, float] | None = None,
    order: int | None = None,
) -> MeanValueResult:
    """Iterated mean over ``y`` (dimension ``d``) and ``tau`` of an expression.

    Other variables (typically ``v``) are fixed through ``bindings``.  The
    tau-mean is taken pointwise at each y-quadrature node, then the y-mean.
    """
    bindings = dict(bindings or {})
    ynames = _cell_names(d)
    expr = substitute(u, bindings) if bindings else u
    uses_y = expr.depends_on(*ynames)
    uses_tau = expr.depends_on("tau")
    n_y = order or default_order(d)
    n_tau = order or default_order(1)

    if isinstance(tag_y, QuasiPeriodic) and uses_y:
        return _mean_quasi_y(expr, tag_y, tag_tau, ynames, uses_tau, n_tau)

    def tau_mean(ys: list) -> tuple[np.ndarray, float]:
        env = dict(zip(ynames, ys))
        if not uses_tau:
            return np.asarray(evaluate(expr, env), dtype=float), 0.0
        if isinstance(tag_tau, Periodic):
            shape = np.broadcast_shapes(*(np.shape(y) for y in ys)) if ys else ()
            yb = [np.asarray(y, dtype=float)[..., None] for y in ys]

            def at(n):
                nodes = (np.arange(n) + 0.5) / n
                vals = evaluate(expr, {**dict(zip(ynames, yb)), "tau": nodes})
                vals = np.broadcast_to(vals, shape + (n,))
                return vals.sum(axis=-1) / n

            fine = at(n_tau)
            err = float(np.max(np.abs(fine - at(n_tau // 2))))
            return fine, err
        if isinstance(tag_tau, LimitAtInfinity):
            value, spread = _extrapolate(lambda t: evaluate(expr, {**env, "tau": t}), _as_extrapolating(tag_tau))
            return value, float(np.max(spread))
        if isinstance(tag_tau, QuasiPeriodic):
            flat = [np.ravel(np.broadcast_to(y, np.broadcast_shapes(*(np.shape(z) for z in ys)))) for y in ys] if ys else []
            count = len(flat[0]) if flat else 1
            out = np.empty(count)
            for i in range(count):
                point = {name: float(c[i]) for name, c in zip(ynames, flat)}
                out[i] = mean_quasiperiodic(substitute(expr, point), ["tau"], tag_tau).value
            shape = np.broadcast_shapes(*(np.shape(y) for y in ys)) if ys else ()
            return out.reshape(shape), 0.0
        raise TypeError(f"unsupported tau algebra {tag_tau!r}")

    if not uses_y:
        value, err = tau_mean([np.asarray(0.0)] * d)
        method = _method(tag_tau) if uses_tau else "quadrature"
        return MeanValueResult(float(value), float(err), method)

    if isinstance(tag_y, Periodic):

        def y_mean(n):
            nodes = (np.arange(n) + 0.5) / n
            grids = np.meshgrid(*([nodes] * d), indexing="ij")
            vals, err = tau_mean(grids)
            vals = np.broadcast_to(vals, (n,) * d)
            return float(vals.sum() / n**d), err

        fine, err_tau = y_mean(n_y)
        coarse, _ = y_mean(n_y // 2)
        return MeanValueResult(fine, abs(fine - coarse) + err_tau, "quadrature")

    if isinstance(tag_y, LimitAtInfinity):
        if d != 1:
            raise ValueError("limit-at-infinity y-algebra is supported in one dimension only")
        errs = []

        def along(y):
            vals, e = tau_mean([np.asarray(y, dtype=float)])
            errs.append(e)
            return vals

        value, spread = _extrapolate(along, _as_extrapolating(tag_y))
        return MeanValueResult(float(value), float(spread) + max(errs), "limit")

    raise TypeError(f"unsupported y algebra {tag_y!r}")


def _method(tag):
    return {"periodic": "quadrature", "quasiperiodic": "zero_frequency", "limit": "limit"}[tag.kind]


def _as_extrapolating(tag: LimitAtInfinity) -> LimitAtInfinity:
    # a declared scalar limit cannot describe an integrand that also depends on y or v
    return tag if tag.extrapolate else LimitAtInfinity(None, tag.radius, tag.tol)


def _mean_quasi_y(expr, tag_y, tag_tau, ynames, uses_tau, n_tau) -> MeanValueResult:
    if not uses_tau:
        return mean_quasiperiodic(expr, ynames, tag_y)
    if isinstance(tag_tau, QuasiPeriodic):
        freqs = ()
        if tag_y.frequencies or tag_tau.frequencies:
            k = len(ynames)
            freqs = tuple(tuple(f) + (0.0,) for f in tag_y.frequencies)
            freqs += tuple((0.0,) * k + tuple(f) for f in tag_tau.frequencies)
        poly = trig_expand(expr, ynames + ["tau"], freqs)
        return mean_quasiperiodic(poly)
    if isinstance(tag_tau, Periodic):

        def at(n):
            nodes = (np.arange(n) + 0.5) / n
            return sum(mean_quasiperiodic(substitute(expr, {"tau": t}), ynames, tag_y).value for t in nodes) / n

        fine = at(n_tau)
        return MeanValueResult(fine, abs(fine - at(n_tau // 2)), "quadrature")
    if isinstance(tag_tau, LimitAtInfinity):
        tag = _as_extrapolating(tag_tau)

        def along(t):
            return np.array([mean_quasiperiodic(substitute(expr, {"tau": float(s)}), ynames, tag_y).value for s in np.ravel(t)])

        value, spread = _extrapolate(along, tag)
        return MeanValueResult(float(value), float(spread), "limit")
    raise TypeError(f"unsupported tau algebra {tag_tau!r}")
