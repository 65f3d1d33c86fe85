from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llginv.aao import Problem
from llginv.experiment import execute
from llginv.fieldops import ddt
from llginv.grid import Grid
from llginv.march import LLGMarch, NewtonError
from llginv.model import (AlphaPair, ModelCoefficients, ObservationSetup, VoltageSeries,
                          eval_F0, eval_observation)
from llginv.presets import preset_test
from llginv.reduced import (apply_Ktilde, apply_KtildeT, data_channels, forward_observation,
                            full_problem, gradient_alpha_reduced, linearized_llg_apply,
                            parameter_to_state, run_kaczmarz_data,
                            run_kaczmarz_time, run_reduced, solve_reduced_adjoint,
                            time_segments)
from llginv.regularization import StoppingRule, noise_inject
from llginv.solvers import solve_heat_backward
from llginv.spaces import norm_W

from oracles import observed_orders, rel

seeds = st.integers(0, 2**32 - 1)


def case3_problem(g):
    T, X = g.mesh()
    m0 = np.stack([np.sin(g.x), np.cos(g.x), np.ones(g.nx)], -1)
    m_exact = np.stack([np.sin(X), np.cos(X), np.exp(T)], -1)
    return Problem(g, m0, g.zeros(), ModelCoefficients(1.0), m_exact)


def random_setup(seed, nt=8, nx=8, K=1, L=2):
    """Small random reduced problem with a non-trivial observation."""
    rng = np.random.default_rng(seed)
    g = Grid(nt=nt, nx=nx, t_end=0.2)
    # smooth unit m0, so that the state itself stays bounded on coarse grids
    ph = rng.uniform(0, 2 * np.pi, 3)
    m0 = np.cos(g.x[:, None] + ph) + rng.standard_normal(3)
    m0 /= np.linalg.norm(m0, axis=-1, keepdims=True)
    h = 0.3 * rng.standard_normal(g.shape)
    prob = Problem(g, m0, h, ModelCoefficients(rng.uniform(0.0, 0.5)))
    alpha = AlphaPair(rng.uniform(0.8, 2.0), rng.uniform(-1.0, 1.0))
    a = 1 + 0.5 * rng.uniform(-1, 1, (L, 1)) * np.sin(2 * np.pi * g.t / g.t_end)[None]
    obs = ObservationSetup(1.0, a, rng.uniform(0, 1, (K, nx)), rng.standard_normal((L, nx, 3)))
    march = LLGMarch(g, m0, h, prob.coeff)
    return g, prob, alpha, obs, march, rng


# -- parameter-to-state map -----------------------------------------------------------

def test_state_of_constant_exact_solution(grid):
    m0 = np.tile([0.0, 0.6, 0.8], (grid.nx, 1))
    h = np.broadcast_to([0.0, 1.2, 1.6], grid.shape).copy()
    prob = Problem(grid, m0, h)
    st_ = parameter_to_state(AlphaPair(1.0, -1.0), prob)
    np.testing.assert_allclose(st_.m, np.broadcast_to(m0, grid.shape), atol=1e-13)
    lw = parameter_to_state(AlphaPair(1.0, -1.0), prob, method="landweber")
    np.testing.assert_allclose(lw.m, np.broadcast_to(m0, grid.shape), atol=1e-10)
    assert lw.inner_loops == 0


def test_warm_start_at_solution_needs_at_most_two_loops():
    g = Grid(nt=21, nx=41)
    prob = case3_problem(g)
    march = LLGMarch(g, prob.m0, prob.h, prob.coeff)
    cold = parameter_to_state(AlphaPair(1.0, 0.0), prob, march=march)
    warm = parameter_to_state(AlphaPair(1.0, 0.0), prob, warm_start=cold.m, march=march)
    assert warm.inner_loops <= 2
    np.testing.assert_allclose(warm.m, cold.m, atol=1e-10)


def test_state_has_small_llg_residual():
    g = Grid(nt=41, nx=41)
    prob = case3_problem(g)
    st_ = parameter_to_state(AlphaPair(1.0, 0.0), prob)
    w = eval_F0(st_.m_hat, prob.m0, AlphaPair(1.0, 0.0), prob.h, prob.coeff, g)
    ref = norm_W(eval_F0(g.zeros(), prob.m0, AlphaPair(1.0, 0.0), prob.h, prob.coeff, g), g)
    assert norm_W(w, g) <= 1e-2 * ref
    assert prob.rel_err(st_.m_hat) <= 0.01


def test_landweber_state_solver_reaches_tolerance():
    g = Grid(nt=21, nx=21)
    prob = case3_problem(g)
    alpha = AlphaPair(1.0, 0.0)
    st_ = parameter_to_state(alpha, prob, method="landweber", tol=1e-2, max_inner=5000, mu=300.0)
    ref = norm_W(eval_F0(g.zeros(), prob.m0, alpha, prob.h, prob.coeff, g), g)
    w = eval_F0(st_.m_hat, prob.m0, alpha, prob.h, prob.coeff, g)
    assert norm_W(w, g) <= 1e-2 * ref
    assert 0 < st_.inner_loops < 5000
    with pytest.raises(ValueError):
        parameter_to_state(alpha, prob, method="shooting")


def test_march_rejects_bad_theta_and_reports_newton_failure():
    g = Grid(nt=5, nx=6)
    with pytest.raises(ValueError):
        LLGMarch(g, np.ones((6, 3)), g.zeros(), theta=0.3)
    march = LLGMarch(g, np.ones((6, 3)), 1e3 * np.ones(g.shape), max_newton=1)
    with pytest.raises(NewtonError):
        march.solve(AlphaPair(1e-3, 5.0))


# -- data-side kernels ----------------------------------------------------------------

def test_Ktilde_trivial_and_constant_transfer(grid, rng):
    obs = ObservationSetup(0.9, np.ones((1, grid.nt)), rng.uniform(0, 1, (1, grid.nx)),
                           rng.standard_normal((1, grid.nx, 3)))
    zero = np.zeros((1, 1, grid.nt))
    assert not apply_Ktilde(zero, obs, grid).any() and not apply_KtildeT(zero, obs, grid).any()
    r = rng.standard_normal((1, 1, grid.nt))
    assert not apply_Ktilde(r, obs, grid).any()
    q = -0.9 * obs.concentrations[0][:, None] * obs.sensitivities[0]
    np.testing.assert_allclose(apply_KtildeT(r, obs, grid), q * np.sum(grid.wt * r), rtol=1e-12)


def test_Ktilde_sinusoid_closed_forms(grid):
    w = 2 * np.pi / grid.t_end
    obs = ObservationSetup(1.0, (2 + np.sin(w * grid.t))[None], np.ones((1, grid.nx)),
                           np.ones((1, grid.nx, 3)))
    # constant r: int_0^T (2 + sin) dtau = 2T
    KT = apply_KtildeT(np.ones((1, 1, grid.nt)), obs, grid)
    np.testing.assert_allclose(KT, -2 * grid.t_end, rtol=1e-6)
    # r(tau) = tau: int a'(tau - t) tau dtau = -T sin(w t)
    K = apply_Ktilde(grid.t[None, None], obs, grid)
    expected = (grid.t_end * np.sin(w * grid.t))[:, None, None] * np.ones((1, grid.nx, 3))
    assert np.max(np.abs(K - expected)) <= 5e-3 * grid.t_end


def test_Ktilde_channel_check(grid):
    obs = ObservationSetup.uniform(grid, K=2)
    with pytest.raises(ValueError):
        apply_Ktilde(np.zeros((1, 1, grid.nt)), obs, grid)


# -- derivative and adjoint -------------------------------------------------------------

def test_linearized_march_is_the_derivative():
    g, prob, alpha, obs, march, rng = random_setup(3, nt=11, nx=10)
    st_ = parameter_to_state(alpha, prob, march=march)
    assert not linearized_llg_apply([0.0, 0.0], st_, march).any()
    beta = rng.standard_normal(2)
    u = linearized_llg_apply(beta, st_, march)
    errs = []
    for eps in (1e-2, 1e-3):
        m_eps = parameter_to_state(alpha.replace(*(alpha.as_array() + eps * beta)), prob,
                                   march=march).m
        errs.append(np.max(np.abs(m_eps - st_.m - eps * u)))
    assert errs[0] / errs[1] >= 50


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_reduced_gradient_pairing(seed):
    g, prob, alpha, obs, march, rng = random_setup(seed)
    st_ = parameter_to_state(alpha, prob, march=march)
    r = rng.standard_normal((obs.K, obs.L, g.nt))
    p = solve_reduced_adjoint(r, st_, obs, march)
    grad = np.array(gradient_alpha_reduced(p, st_.m, g, scheme="march", theta=march.theta))
    dense = np.array([np.sum(g.wt * r * eval_observation(ddt(linearized_llg_apply(e, st_, march), g),
                                                        obs, g)) for e in np.eye(2)])
    assert rel(grad, dense) <= 1e-6


def test_adjoint_and_gradient_trivial_cases():
    g, prob, alpha, obs, march, rng = random_setup(1)
    st_ = parameter_to_state(alpha, prob, march=march)
    zero = np.zeros((obs.K, obs.L, g.nt))
    assert not solve_reduced_adjoint(zero, st_, obs, march).any()
    assert not solve_reduced_adjoint(zero, st_, obs, march, method="continuous").any()
    assert gradient_alpha_reduced(g.zeros(), st_.m, g) == (0.0, 0.0)
    still = np.broadcast_to(prob.m0, g.shape).copy()
    p = rng.standard_normal(g.shape)
    assert gradient_alpha_reduced(p, still, g) == (0.0, 0.0)
    assert gradient_alpha_reduced(p, still, g, scheme="march") == (0.0, 0.0)


def test_continuous_adjoint_final_condition():
    g, prob, alpha, obs, march, rng = random_setup(8, nt=11, nx=12)
    st_ = parameter_to_state(alpha, prob, march=march)
    r = rng.standard_normal((obs.K, obs.L, g.nt))
    p = solve_reduced_adjoint(r, st_, obs, march, method="continuous")
    lhs = alpha.alpha1 * p[-1] + alpha.alpha2 * np.cross(st_.m[-1], p[-1])
    assert np.max(np.abs(lhs - apply_KtildeT(r, obs, g))) <= 1e-10
    with pytest.raises(ValueError):
        solve_reduced_adjoint(r, st_, obs, march, method="spectral")


def test_continuous_adjoint_reduces_to_backward_heat():
    # alpha2 = 0, constant state, h = 0: -a1 p_t - Lap p = K~ r, p(T) = K~_T r / a1,
    # a backward heat equation in t / a1; the two schemes agree to first order in dt
    a1, gaps = 2.0, []
    for nt in (51, 101, 201):
        g = Grid(nt=nt)
        m0 = np.tile([0.0, 0.6, 0.8], (g.nx, 1))
        march = LLGMarch(g, m0, g.zeros())
        st_ = parameter_to_state(AlphaPair(a1, 0.0), Problem(g, m0, g.zeros()), march=march)
        w = 2 * np.pi / g.t_end
        obs = ObservationSetup(1.0, (1 + 0.5 * np.sin(w * g.t))[None], np.cos(g.x)[None] ** 2,
                               np.ones((1, g.nx, 3)))
        r = np.cos(w * g.t)[None, None]
        p = solve_reduced_adjoint(r, st_, obs, march, method="continuous")
        g2 = Grid(nt=g.nt, nx=g.nx, t_end=g.t_end / a1, x_max=g.x_max)
        q = solve_heat_backward(apply_Ktilde(r, obs, g), apply_KtildeT(r, obs, g) / a1, g2)
        gaps.append(np.max(np.abs(p - q)) / np.max(np.abs(q)))
    assert np.all(observed_orders(gaps) >= 0.9)
    assert gaps[-1] <= 0.1


def test_continuous_adjoint_approaches_exact_gradient():
    gaps = []
    for nt in (21, 81, 321):
        g = Grid(nt=nt, nx=41)
        prob = case3_problem(g)
        march = LLGMarch(g, prob.m0, prob.h, prob.coeff)
        st_ = parameter_to_state(AlphaPair(1.0, 0.3), prob, march=march)
        obs = ObservationSetup(1.0, (1 + 0.5 * np.sin(2 * np.pi * g.t / g.t_end))[None],
                               np.ones((1, g.nx)), np.ones((1, g.nx, 3)))
        r = np.cos(2 * np.pi * g.t / g.t_end)[None, None]
        exact = gradient_alpha_reduced(solve_reduced_adjoint(r, st_, obs, march), st_.m, g,
                                       scheme="march")
        cont = gradient_alpha_reduced(solve_reduced_adjoint(r, st_, obs, march, "continuous"),
                                      st_.m, g)
        gaps.append(rel(cont, exact))
    # first order: each fourfold refinement cuts the gap about fourfold
    assert np.all(observed_orders(gaps, ratio=4) >= 0.8)
    assert gaps[-1] <= 0.2


# -- sub-problems -------------------------------------------------------------------------

def test_time_segments_partition_the_residual(grid, rng):
    data = noise_inject(VoltageSeries(rng.standard_normal((1, 2, grid.nt))), 0.05, 1, wt=grid.wt)
    r = rng.standard_normal((1, 2, grid.nt))
    full = full_problem(data, grid)[0].residual_norm(r)
    for n in (1, 2, 4, 7, 50):
        subs = time_segments(data, grid, n)
        assert len(subs) == n
        assert sum(s.residual_norm(r) ** 2 for s in subs) == pytest.approx(full**2, rel=1e-12)
        assert sum(s.delta**2 for s in subs) == pytest.approx(data.total_delta**2, rel=1e-12)
    with pytest.raises(ValueError):
        time_segments(data, grid, grid.nt)


def test_data_channels_cover_all_channels(grid, rng):
    data = VoltageSeries(rng.standard_normal((2, 3, grid.nt)))
    subs = data_channels(data, grid)
    assert len(subs) == 6
    assert np.array_equal(sum(s.channels.astype(int) for s in subs), np.ones((2, 3), dtype=int))
    r = rng.standard_normal((2, 3, grid.nt))
    total = sum(s.residual_norm(r) ** 2 for s in subs)
    assert total == pytest.approx(full_problem(data, grid)[0].residual_norm(r) ** 2)


# -- Landweber and Landweber-Kaczmarz ---------------------------------------------------------

@pytest.fixture(scope="module")
def coarse_case3():
    g = Grid(nt=21, nx=41)
    prob = case3_problem(g)
    obs = ObservationSetup.uniform(g)
    exact = VoltageSeries(eval_observation(ddt(prob.m_exact - prob.m0, g), obs, g))
    march = LLGMarch(g, prob.m0, prob.h, prob.coeff)
    return g, prob, obs, exact, march


def test_single_segment_kaczmarz_is_reduced_landweber(coarse_case3):
    g, prob, obs, exact, march = coarse_case3
    data = noise_inject(exact, 0.03, 2, wt=g.wt)
    stop = StoppingRule(max_iterations=15)
    a = run_reduced(data, obs, prob, AlphaPair(1.5, 0.5), 1.0, stop, march)
    b = run_kaczmarz_time(data, obs, prob, AlphaPair(1.5, 0.5), 1, 1.0, stop, march)
    c = run_kaczmarz_data(data, obs, prob, AlphaPair(1.5, 0.5), 1.0, stop, march)
    for other in (b, c):
        assert other.iterations == a.iterations
        np.testing.assert_array_equal(other.log.column("alpha1"), a.log.column("alpha1"))
        np.testing.assert_array_equal(other.log.column("alpha2"), a.log.column("alpha2"))


def test_reduced_exact_start_makes_no_update(coarse_case3):
    g, prob, obs, exact, march = coarse_case3
    start = parameter_to_state(AlphaPair(1.0, 0.0), prob, march=march)
    data = noise_inject(VoltageSeries(forward_observation(start, obs, g)), 0.03, 0, wt=g.wt)
    res = run_reduced(data, obs, prob, AlphaPair(1.0, 0.0), 1.0, march=march)
    assert res.iterations == 0 and res.stop_reason == "discrepancy"
    assert res.alpha == AlphaPair(1.0, 0.0)


def test_reduced_landweber_decreases_misfit(coarse_case3):
    g, prob, obs, exact, march = coarse_case3
    res = run_reduced(exact, obs, prob, AlphaPair(1.5, 0.5), 1.0,
                      StoppingRule(max_iterations=20), march)
    misfit = res.log.column("res_obs")
    assert misfit[-1] < 0.05 * misfit[0]
    assert np.all(np.diff(misfit) <= 1e-12)
    # every state solve is logged except the one after the final update
    assert res.stop_reason == "max_iterations"
    assert res.total_inner_loops == int(np.sum(res.log.column("inner_loops"))) \
        + res.state.inner_loops


def test_identical_channels_first_substep(coarse_case3):
    g, prob, obs, exact, march = coarse_case3
    obs2 = ObservationSetup(1.0, np.ones((2, g.nt)), np.ones((1, g.nx)), np.ones((2, g.nx, 3)))
    y2 = VoltageSeries(np.concatenate([exact.data, exact.data], axis=1))
    one = run_reduced(exact, obs, prob, AlphaPair(1.5, 0.5), 1.0,
                      StoppingRule(max_iterations=1), march)
    kacz = run_kaczmarz_data(y2, obs2, prob, AlphaPair(1.5, 0.5), 1.0,
                             StoppingRule(max_iterations=1), march)
    both = run_reduced(y2, obs2, prob, AlphaPair(1.5, 0.5), 1.0,
                       StoppingRule(max_iterations=1), march)
    step_one = one.alpha.as_array() - [1.5, 0.5]
    np.testing.assert_allclose(kacz.alpha.as_array() - [1.5, 0.5], step_one, rtol=1e-12)
    np.testing.assert_allclose(both.alpha.as_array() - [1.5, 0.5], 2 * step_one, rtol=1e-12)


def test_channel_order_changes_path_not_rule(coarse_case3):
    g, prob, obs, exact, march = coarse_case3
    rng = np.random.default_rng(0)
    L = 2
    a = 1 + 0.5 * rng.uniform(-1, 1, (L, 1)) * np.sin(2 * np.pi * g.t / g.t_end)[None]
    obs2 = ObservationSetup(1.0, a, np.ones((1, g.nx)), rng.standard_normal((L, g.nx, 3)))
    ms = parameter_to_state(AlphaPair(1.0, 0.0), prob, march=march)
    data = noise_inject(VoltageSeries(forward_observation(ms, obs2, g)), 0.05, 4, wt=g.wt)
    stop = StoppingRule(max_iterations=200)
    fwd = run_kaczmarz_data(data, obs2, prob, AlphaPair(1.1, 0.1), 10.0, stop, march)
    bwd = run_kaczmarz_data(data, obs2, prob, AlphaPair(1.1, 0.1), 10.0, stop, march,
                            order=[(0, 1), (0, 0)])
    assert fwd.log[1]["alpha1"] != bwd.log[1]["alpha1"]
    for res in (fwd, bwd):
        assert res.stop_reason == "discrepancy"
        assert res.flags[-L:] == [0] * L


def test_kaczmarz_time_segments_noisy_case3():
    g = Grid()
    prob = case3_problem(g)
    obs = ObservationSetup.uniform(g)
    exact = VoltageSeries(eval_observation(ddt(prob.m_exact - prob.m0, g), obs, g))
    data = noise_inject(exact, 0.03, 0, wt=g.wt)
    stop = StoppingRule(max_iterations=2000)
    res = run_kaczmarz_time(data, obs, prob, AlphaPair(1.5, 0.5), 4, 1.0, stop)
    assert res.stop_reason == "discrepancy"
    assert res.flags[-4:] == [0, 0, 0, 0]
    subs = time_segments(data, g, 4)
    r = forward_observation(res.state, obs, g) - data.data
    for s in subs:
        assert s.residual_norm(r) < stop.tau * s.delta


def test_reduced_test2_exact_data_250_iterations():
    _, s = execute(replace(preset_test(2, "identify-reduced"), max_iterations=250))
    assert s["iterations"] == 250 and s["stop_reason"] == "max_iterations"
    assert max(s["e_alpha"]) <= 0.1
    assert s["res_obs"] < 1e-3 * abs(-2 * np.pi * (np.exp(0.2) - 1))
