import math

import numpy as np
import pytest
import scipy.sparse as sp

from homowave.effective import build_effective_model
from homowave.rng import sample_path
from homowave.wave_sim import (
    ImplicitSystem, Macro, MeshResolutionError, Micro, NonFiniteStateError, SpatialGrid, SpdeState,
    assemble_stiffness, dirichlet_laplacian, discrete_energy, energy_functionals, h_minus1_norm,
    h_minus1_norms_sq, simulate, step_semi_implicit,
)

from conftest import make_problem


def zero_drift(t, v):
    return np.zeros_like(v)


def zero_noise(t, v):
    return np.zeros((1, v.size))


def test_identity_stencil_1d():
    g = SpatialGrid(1, 15)
    K = assemble_stiffness(np.eye(1), g).toarray()
    ref = (2 * np.eye(15) - np.eye(15, k=1) - np.eye(15, k=-1)) / g.h**2
    assert np.allclose(K, ref, rtol=1e-13, atol=0)


def test_stiffness_symmetric_and_spd():
    g = SpatialGrid(2, 31)
    xc, yc = g.centers()
    a = 2 + np.sin(2 * np.pi * 4 * xc) * np.cos(2 * np.pi * 3 * yc)
    A = np.zeros((a.size, 2, 2))
    A[:, 0, 0] = a
    A[:, 1, 1] = a + 0.5
    A[:, 0, 1] = A[:, 1, 0] = 0.3 * np.sin(2 * np.pi * xc)
    K = assemble_stiffness(A, g)
    assert (K - K.T).count_nonzero() == 0
    alpha = np.linalg.eigvalsh(A).min()
    lam = np.linalg.eigvalsh(K.toarray()).min()
    assert lam >= alpha * 2 * np.pi**2 * (1 - 3 * g.h**2 * np.pi**2)


def test_stiffness_eigenvalue_1d():
    g = SpatialGrid(1, 31)
    a = 2 + np.sin(2 * np.pi * 8 * g.centers()[0])
    lam = np.linalg.eigvalsh(assemble_stiffness(a, g).toarray()).min()
    assert lam >= 1.0 * np.pi**2 * (1 - g.h**2 * np.pi**2)


def test_ground_eigenvalue_lower_bound_random_fields():
    g = SpatialGrid(1, 63)
    L = dirichlet_laplacian(g)
    lam1 = 4 / g.h**2 * math.sin(math.pi * g.h / 2) ** 2
    a = 1.5 + np.cos(2 * np.pi * 5 * g.centers()[0])
    K = assemble_stiffness(a, g)
    rng = np.random.default_rng(0)
    for w in rng.normal(size=(20, g.size)):
        assert w @ (K @ w) >= 0.5 * lam1 * (w @ w) * (1 - 1e-12)
    assert np.isclose(np.linalg.eigvalsh(L.toarray()).min(), lam1)


def test_stiffness_rejects_bad_tensor():
    g = SpatialGrid(1, 15)
    with pytest.raises(ValueError):
        assemble_stiffness(-np.ones(16), g)
    with pytest.raises(ValueError):
        assemble_stiffness(np.array([[1.0, 0.5], [0.0, 1.0]]), SpatialGrid(2, 15))


def test_zero_state_stays_zero():
    g = SpatialGrid(1, 15)
    K = L = dirichlet_laplacian(g)
    s = SpdeState(np.zeros(g.size), np.zeros(g.size))
    for n in range(5):
        s = step_semi_implicit(s, 0.01, K, L, zero_drift, zero_noise, [0.3], step_index=n)
    assert not s.u.any() and not s.v.any()


def test_one_step_against_dense_solve():
    g = SpatialGrid(1, 15)
    a = 2 + np.sin(2 * np.pi * 3 * g.centers()[0])
    K = assemble_stiffness(a, g)
    L = dirichlet_laplacian(g)
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=(2, g.size))
    dt, dW = 0.01, np.array([0.07, -0.02])
    phi = lambda t, w: np.sin(w)
    gam = lambda t, w: np.stack([1 + 0 * w, np.cos(w)])
    out = step_semi_implicit(SpdeState(u, v), dt, K, L, phi, gam, dW)
    M = np.eye(g.size) + dt * L.toarray() + dt**2 * K.toarray()
    rhs = v - dt * K.toarray() @ u + dt * np.sin(v) + 0.07 - 0.02 * np.cos(v)
    v_ref = np.linalg.solve(M, rhs)
    assert np.allclose(out.v, v_ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(out.u, u + dt * v_ref, rtol=1e-12, atol=1e-12)
    cg = step_semi_implicit(SpdeState(u, v), dt, K, L, phi, gam, dW, ImplicitSystem(K, L, dt, "cg"))
    assert np.allclose(cg.v, v_ref, rtol=1e-8, atol=1e-9)


def test_non_finite_reports_step():
    g = SpatialGrid(1, 15)
    K = L = dirichlet_laplacian(g)
    with pytest.raises(NonFiniteStateError) as info:
        step_semi_implicit(SpdeState(np.zeros(15), np.zeros(15)), 0.1, K, L,
                           lambda t, v: np.full_like(v, np.inf), zero_noise, [0.0], step_index=7)
    assert info.value.step == 7


def _mode_solution(t):
    p2 = np.pi**2
    disc = math.sqrt(p2 * p2 - 4 * p2)
    r1, r2 = (-p2 + disc) / 2, (-p2 - disc) / 2
    return (r2 * np.exp(r1 * t) - r1 * np.exp(r2 * t)) / (r2 - r1)


def _mode_error(n_steps, n_x=255):
    pd = make_problem(horizon=1.0)
    g = SpatialGrid(1, n_x)
    traj = simulate(pd, Macro(np.eye(1), build_effective_model(pd)), g, sample_path(1, n_steps, 1.0, 0, 0))
    amp = traj.u @ np.sin(np.pi * g.nodes()[0]) * 2 * g.h
    return np.max(np.abs(amp - _mode_solution(traj.times)))


def test_sine_mode_follows_ode():
    errs = [_mode_error(n) for n in (64, 128, 256)]
    assert errs[-1] < 2e-2
    assert errs[0] / errs[1] > 1.7 and errs[1] / errs[2] > 1.7


def test_energy_nonincreasing_and_boundary():
    pd = make_problem(a=[["2 + sin(2*pi*y1)"]], u1="sin(3*pi*x1)", horizon=0.25)
    g = SpatialGrid(1, 127)
    traj = simulate(pd, Micro(0.125), g, sample_path(1, 512, 0.25, 0, 0), record_energy=True)
    assert np.all(np.diff(traj.energy) <= 0)
    full = np.array([g.pad(u) for u in traj.u])
    assert np.all(full[:, 0] == 0) and np.all(full[:, -1] == 0)
    assert np.all(np.diff(traj.times) > 0)


def test_reproducible_and_degenerate_equality():
    pd = make_problem(f="sin(v)", g=["1 + 0.5*tanh(v)^2"], c=(1, 1, 2.5, 1))
    g = SpatialGrid(1, 31)
    path = sample_path(1, 64, pd.horizon, 3, 1)
    a = simulate(pd, Micro(0.5), g, path)
    b = simulate(pd, Micro(0.5), g, path)
    assert a.identical_to(b)
    m = simulate(pd, Macro(np.eye(1), build_effective_model(pd)), g, path)
    assert m.identical_to(a)


def test_degenerate_equality_2d():
    pd = make_problem(d=2, a=[["2", "0.5"], ["0.5", "1"]], f="-v", g=["0.5"], c=(1, 1, 1, 1))
    g = SpatialGrid(2, 15)
    path = sample_path(1, 16, pd.horizon, 0, 0)
    micro = simulate(pd, Micro(1.0), g, path)
    macro = simulate(pd, Macro(np.array([[2.0, 0.5], [0.5, 1.0]]), build_effective_model(pd)), g, path)
    assert micro.identical_to(macro)


def test_mesh_precondition():
    pd = make_problem(a=[["2 + sin(2*pi*y1)"]])
    with pytest.raises(MeshResolutionError):
        simulate(pd, Micro(0.125), SpatialGrid(1, 63), sample_path(1, 64, pd.horizon, 0, 0))
    with pytest.raises(MeshResolutionError):
        simulate(pd, Micro(0.125), SpatialGrid(1, 127), sample_path(1, 16, pd.horizon, 0, 0))


def test_snapshot_stride_and_path_mismatch():
    pd = make_problem()
    g = SpatialGrid(1, 15)
    path = sample_path(1, 64, pd.horizon, 0, 0)
    traj = simulate(pd, Macro(np.eye(1), build_effective_model(pd)), g, path, n_steps=32, snapshot_stride=4)
    assert traj.times.size == 9 and traj.dt == pytest.approx(pd.horizon / 32)
    with pytest.raises(ValueError):
        simulate(pd, Macro(np.eye(1), build_effective_model(pd)), g, path, snapshot_stride=5)
    with pytest.raises(ValueError):
        simulate(pd, Micro(1.0), g, sample_path(2, 64, pd.horizon, 0, 0))


def test_h_minus1_norm():
    g = SpatialGrid(1, 1023)
    r = np.sin(np.pi * g.nodes()[0])
    assert h_minus1_norm(np.zeros(g.size), g) == 0.0
    assert h_minus1_norm(r, g) == pytest.approx(1 / (np.pi * math.sqrt(2)), abs=1e-4)
    assert h_minus1_norm(-3 * r, g) == pytest.approx(3 * h_minus1_norm(r, g), rel=1e-9)
    batched = h_minus1_norms_sq(np.stack([r, 2 * r]), g)
    assert np.allclose(np.sqrt(batched), [h_minus1_norm(r, g), 2 * h_minus1_norm(r, g)], rtol=1e-8)


def test_energy_functionals_examples():
    g = SpatialGrid(1, 1023)
    times = np.linspace(0, 1, 5)
    u = np.tile(np.sin(np.pi * g.nodes()[0]), (5, 1))
    from homowave.wave_sim import SolutionTrajectory

    traj = SolutionTrajectory(g, 0.25, times, u, np.zeros_like(u), 0, 0, 0)
    f = energy_functionals(traj)
    assert f["sup_H1_sq"] == pytest.approx(np.pi**2 / 2, abs=1e-3)
    assert f["sup_L2_sq"] == 0 and f["int_H1_v"] == 0
    zero = SolutionTrajectory(g, 0.25, times, np.zeros_like(u), np.zeros_like(u), 0, 0, 0)
    assert all(v == 0 for v in energy_functionals(zero).values())


def test_functionals_match_running_values():
    pd = make_problem(u1="sin(2*pi*x1)")
    g = SpatialGrid(1, 63)
    traj = simulate(pd, Macro(np.eye(1), build_effective_model(pd)), g, sample_path(1, 256, pd.horizon, 0, 0))
    f = energy_functionals(traj)
    assert f["sup_H1_sq"] == pytest.approx(traj.sup_H1_sq, rel=1e-12)
    assert f["int_H1_v"] == pytest.approx(traj.int_H1_v, rel=1e-12)
    coarse = simulate(pd, Macro(np.eye(1), build_effective_model(pd)), g,
                      sample_path(1, 256, pd.horizon, 0, 0), snapshot_stride=2)
    assert energy_functionals(coarse)["int_H1_v"] == pytest.approx(f["int_H1_v"], rel=0.05)


def test_energy_helper():
    g = SpatialGrid(1, 15)
    K = sp.identity(g.size) * 2.0
    assert discrete_energy(np.ones(15), np.ones(15), K, g) == pytest.approx(0.5 * g.h * (15 + 30))
