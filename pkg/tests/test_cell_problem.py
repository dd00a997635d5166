import math

import numpy as np
import pytest

from homowave.cell_problem import (
    CellGrid, NotSPDError, correctors_basis, effective_tensor_field, reconstruct_corrector_field,
    solve_corrector,
)
from homowave.mean_value import mean_periodic
from homowave.stencil import corner_fluxes

from conftest import make_problem

SQRT3 = math.sqrt(3.0)


def scalar_1d(n):
    y = (np.arange(n) + 0.5) / n
    return 2 + np.sin(2 * np.pi * y)


def test_identity_has_zero_corrector():
    g = CellGrid(32, 2)
    a = np.broadcast_to(np.eye(2), g.shape + (2, 2))
    sol = solve_corrector(a, [0.3, -1.2], grid=g)
    assert np.max(np.abs(sol.field)) <= 1e-12


def test_1d_flux_constant():
    n = 1024
    a = scalar_1d(n)
    sol = solve_corrector(a, 1.0)
    flux = corner_fluxes(a[:, None, None], np.ones(1), sol.field, n, 1)[..., 0]
    assert np.ptp(flux) <= 1e-8 * SQRT3
    assert flux.mean() == pytest.approx(SQRT3, rel=1e-4)


def test_1d_against_fine_reference():
    coarse = correctors_basis(make_problem(a=[["2 + sin(2*pi*y1)"]]), [0.0], CellGrid(256)).tensor[0, 0]
    fine = correctors_basis(make_problem(a=[["2 + sin(2*pi*y1)"]]), [0.0], CellGrid(4096)).tensor[0, 0]
    assert abs(fine - SQRT3) < 1e-6
    assert abs(coarse - fine) < 1e-4


def test_identity_basis():
    cs = correctors_basis(make_problem(d=2), [0.5, 0.5], CellGrid(16, 2))
    assert np.allclose(cs.tensor, np.eye(2), atol=1e-12)
    assert np.max(np.abs(cs.chi)) <= 1e-12


def test_laminate():
    pd = make_problem(d=2, a=[["2 + sin(2*pi*y1)", "0"], ["0", "2 + sin(2*pi*y1)"]])
    cs = correctors_basis(pd, [0.0, 0.0], CellGrid(64, 2))
    assert cs.tensor[0, 0] == pytest.approx(SQRT3, rel=1e-3)
    assert cs.tensor[1, 1] == pytest.approx(2.0, rel=1e-12)
    assert abs(cs.tensor[0, 1]) < 1e-12


CHECKER = [["2 + sin(2*pi*y1)*cos(2*pi*y2) + 0.5*cos(2*pi*(y1+y2))", "0.3*sin(2*pi*y2)"],
           ["0.3*sin(2*pi*y2)", "2.5 + cos(2*pi*y1)"]]


def test_grid_convergence_order():
    pd = make_problem(d=2, a=CHECKER, alpha=0.5)
    vals = [correctors_basis(pd, [0, 0], CellGrid(n, 2)).tensor for n in (16, 32, 64, 128)]
    diffs = [np.max(np.abs(b - a)) for a, b in zip(vals, vals[1:])]
    orders = [math.log2(a / b) for a, b in zip(diffs, diffs[1:])]
    assert min(orders) >= 1.8, orders


def test_invariants_random_fields():
    rng = np.random.default_rng(3)
    for _ in range(5):
        c = [float(s) for s in rng.uniform(-0.4, 0.4, 4)]
        a11 = f"2 + {c[0]!r}*sin(2*pi*y1) + {c[1]!r}*cos(2*pi*(y1 - y2))"
        a12 = f"{c[2]!r}*cos(2*pi*y2)"
        a22 = f"2 + {c[3]!r}*sin(2*pi*(y1 + 2*y2))"
        pd = make_problem(d=2, a=[[a11, a12], [a12, a22]], alpha=1.0)
        cs = correctors_basis(pd, [0, 0], CellGrid(32, 2))
        t = cs.tensor
        assert np.max(np.abs(t - t.T)) <= 1e-10
        assert np.max(np.abs(cs.chi.reshape(2, -1).mean(axis=1))) <= 1e-12
        voigt = np.array([[mean_periodic(lambda y1, y2, e=pd.a[i][j]: pd_eval(e, y1, y2), 64, 2).value
                           for j in range(2)] for i in range(2)])
        reuss = np.linalg.inv(mean_periodic_matrix_inverse(pd))
        for xi in rng.normal(size=(8, 2)):
            q = xi @ t @ xi
            assert q <= xi @ voigt @ xi + 1e-10
            assert q >= xi @ reuss @ xi - 1e-10


def pd_eval(e, y1, y2):
    from homowave.expr import evaluate

    return np.broadcast_to(evaluate(e, {"y1": y1, "y2": y2}), np.broadcast(y1, y2).shape)


def mean_periodic_matrix_inverse(pd, n=64):
    g = CellGrid(n, 2)
    a = pd.a_at([np.zeros(g.shape)] * 2, g.centers())
    return np.linalg.inv(a).mean(axis=(0, 1))


def test_non_spd_rejected():
    with pytest.raises(NotSPDError):
        solve_corrector(np.sin(2 * np.pi * (np.arange(16) + 0.5) / 16), 1.0)


def test_limit_algebra_not_supported():
    pd = make_problem(a=[["2"]], algebra_y={"kind": "limit_at_infinity"})
    with pytest.raises(NotImplementedError):
        correctors_basis(pd, [0.0])


def test_quasiperiodic_flagged():
    pd = make_problem(a=[["2 + cos(2*pi*y1)"]], algebra_y={"kind": "quasiperiodic"})
    cs = correctors_basis(pd, [0.0], CellGrid(64))
    assert cs.approximate
    assert cs.tensor[0, 0] == pytest.approx(SQRT3, rel=1e-3)


def test_reconstruct():
    cs = correctors_basis(make_problem(a=[["2 + sin(2*pi*y1)"]]), [0.0], CellGrid(64))
    assert np.all(reconstruct_corrector_field(np.zeros((3, 1)), cs) == 0)
    assert np.array_equal(reconstruct_corrector_field(np.ones((1, 1)), cs)[0], cs.chi[0])
    flat = correctors_basis(make_problem(), [0.0], CellGrid(64))
    assert np.all(np.abs(reconstruct_corrector_field(np.ones((2, 1)), flat)) <= 1e-12)
    with pytest.raises(ValueError):
        reconstruct_corrector_field(np.ones((2, 1)), [cs])


def test_tensor_field_broadcast_and_scaling():
    pts = np.linspace(0, 1, 5)[:, None]
    tf = effective_tensor_field(make_problem(a=[["2 + sin(2*pi*y1)"]]), pts, CellGrid(256))
    assert tf.broadcast and np.all(tf.tensors == tf.tensors[0])
    tf = effective_tensor_field(make_problem(a=[["(1 + x1) * (2 + sin(2*pi*y1))"]]), pts, CellGrid(256))
    assert not tf.broadcast
    ref = effective_tensor_field(make_problem(a=[["2 + sin(2*pi*y1)"]]), pts[:1], CellGrid(256)).tensors[0, 0, 0]
    assert np.allclose(tf.tensors[:, 0, 0], (1 + pts[:, 0]) * ref, rtol=1e-9)
    ident = effective_tensor_field(make_problem(d=2), np.zeros((4, 2)), CellGrid(16, 2))
    assert np.allclose(ident.tensors, np.eye(2))


def test_tensor_field_workers_agree():
    pts = np.linspace(0, 1, 4)[:, None]
    pd = make_problem(a=[["(1 + x1) * (2 + sin(2*pi*y1))"]])
    a = effective_tensor_field(pd, pts, CellGrid(64), workers=1).tensors
    b = effective_tensor_field(pd, pts, CellGrid(64), workers=2).tensors
    assert np.array_equal(a, b)


def test_cell_grid_validation():
    with pytest.raises(ValueError):
        CellGrid(12)
    with pytest.raises(ValueError):
        CellGrid(16, 3)
