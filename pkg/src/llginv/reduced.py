"""Reduced setting: identify ``(a1, a2)`` through the parameter-to-state map.

The state is produced by :class:`llginv.march.LLGMarch`; its derivative in
``alpha`` and the exact transpose of that derivative give the reduced
Landweber gradient. A continuous-adjoint backward march is provided as
well, for comparison and for the final-time condition.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.linalg import spsolve

from .aao import Problem, SolveResult, StepPolicy, _Guard, run_llg_solver
from .fieldops import ddt, ddt_transpose, gradient, gradient_adjoint, inner_l2
from .grid import Grid, _trapezoid_weights
from .march import LLGMarch, _blockdiag, skew
from .model import (AlphaPair, ObservationSetup, VoltageSeries, eval_F0, eval_observation,
                    observation_transpose)
from .regularization import IterationLog, StoppingRule, cycle_stop, discrepancy_flag
from .solvers import solve_final_condition
from .spaces import norm_W

log = logging.getLogger(__name__)


@dataclass
class ReducedState:
    """Output of the parameter-to-state map."""

    alpha: AlphaPair
    m: np.ndarray
    inner_loops: int
    steps: list | None = None

    @property
    def m_hat(self) -> np.ndarray:
        return self.m - self.m[0]


def parameter_to_state(alpha: AlphaPair, prob: Problem, warm_start: np.ndarray | None = None,
                       method: str = "march", march: LLGMarch | None = None, tol: float = 1e-6,
                       max_inner: int = 5000, mu: float = 1.0) -> ReducedState:
    """State ``m = S(alpha)`` and the number of inner iterations spent.

    ``method="march"`` (default) runs the implicit time march, counting
    Newton iterations; ``warm_start`` is the Newton initial guess.
    ``method="landweber"`` runs the all-at-once LLG solver from the warm
    start until the W residual drops by ``tol`` relative to that of
    ``m_hat = 0`` or ``max_inner`` iterations pass.
    """
    if method == "march":
        march = march or LLGMarch(prob.grid, prob.m0, prob.h, prob.coeff)
        m, loops, steps = march.solve(alpha, warm_start)
        return ReducedState(alpha, m, loops, steps)
    if method == "landweber":
        grid = prob.grid
        ref = norm_W(eval_F0(grid.zeros(), prob.m0, alpha, prob.h, prob.coeff, grid), grid)
        init = None if warm_start is None else warm_start - prob.m0[None]
        res = run_llg_solver(alpha, prob, init, StepPolicy(mu), max_iterations=max_inner,
                             tol=tol, tol_ref=ref, record=False)
        return ReducedState(alpha, prob.m0[None] + res.m_hat, res.iterations)
    raise ValueError(f"unknown state solver {method!r}")


def apply_Ktilde(r: np.ndarray, obs: ObservationSetup, grid: Grid) -> np.ndarray:
    """``(K~ r)(t, x) = sum_kl q_kl(x) int a_l'(tau - t) r_kl(tau) dtau``."""
    r = _check_channels(r, obs, grid)
    lag = grid.t[None, :] - grid.t[:, None]           # [i, j] = t_j - t_i
    da = obs.transfer_derivative_at(grid, lag)         # (L, nt_t, nt_tau)
    c = np.einsum("lij,klj,j->kli", da, r, grid.wt)
    return np.einsum("kli,klxc->ixc", c, obs.spatial_kernels())


def apply_KtildeT(r: np.ndarray, obs: ObservationSetup, grid: Grid) -> np.ndarray:
    """``(K~_T r)(x) = sum_kl q_kl(x) int a_l(tau) r_kl(tau) dtau``."""
    r = _check_channels(r, obs, grid)
    a = obs.transfer_at(grid, grid.t)
    c = np.einsum("lj,klj,j->kl", a, r, grid.wt)
    return np.einsum("kl,klxc->xc", c, obs.spatial_kernels())


def _check_channels(r, obs: ObservationSetup, grid: Grid) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (obs.K, obs.L, grid.nt):
        raise ValueError(f"residual has shape {r.shape}, expected {(obs.K, obs.L, grid.nt)}")
    return r


def linearized_llg_apply(beta, state: ReducedState, march: LLGMarch) -> np.ndarray:
    """Derivative of the state along ``beta``; solves the linearized march with ``u(0)=0``."""
    return march.linearized(np.asarray(beta, dtype=float), state.steps)


def forward_observation(state: ReducedState, obs: ObservationSetup, grid: Grid) -> np.ndarray:
    return eval_observation(ddt(state.m_hat, grid), obs, grid)


def solve_reduced_adjoint(r: np.ndarray, state: ReducedState, obs: ObservationSetup,
                          march: LLGMarch, method: str = "discrete") -> np.ndarray:
    """Adjoint state ``p`` for the observation residual ``r``.

    ``method="discrete"``: exact transpose of the linearized march, scaled
    to a density so that :func:`gradient_alpha_reduced` with
    ``scheme="march"`` returns the exact gradient.

    ``method="continuous"``: backward march of the adjoint PDE from
    ``a1 p(T) + a2 m(T) x p(T) = K~_T r``; diffusion and the pointwise
    3x3 coupling implicit, the ``grad p`` coupling lagged.
    """
    grid = march.grid
    r = _check_channels(r, obs, grid)
    if method == "discrete":
        Y = observation_transpose(r, obs, grid)
        c = grid.wx[None, :, None] * ddt_transpose(Y, grid)
        lam = march.transpose(c, state.steps)
        return lam / (grid.dt * grid.wx[None, :, None])
    if method == "continuous":
        return _continuous_adjoint(r, state, obs, march)
    raise ValueError(f"unknown adjoint method {method!r}")


def _continuous_adjoint(r, state: ReducedState, obs, march: LLGMarch) -> np.ndarray:
    grid, alpha, lam = march.grid, state.alpha, march.coeff.lam
    a1, a2 = alpha.alpha1, alpha.alpha2
    if a1 == 0.0:
        raise ZeroDivisionError("adjoint final condition is singular for alpha1 = 0")
    m = state.m
    mt = ddt(m, grid)
    d = m - march.m0[None]
    gm = march.grad0[None] + gradient(d, grid)
    h = march.h
    src = apply_Ktilde(r, obs, grid)
    p = np.zeros(grid.shape)
    p[-1] = solve_final_condition(m[-1], apply_KtildeT(r, obs, grid), a1, a2)
    eye = np.broadcast_to(np.eye(3), (grid.nx, 3, 3))

    def mass(n):
        return a1 * eye + a2 * skew(m[n])

    for n in range(grid.nt - 2, -1, -1):
        pn1 = p[n + 1]
        mp = np.sum(m[n] * pn1, axis=-1)[:, None]
        coupling = 2.0 * lam * gradient_adjoint(gm[n] * mp, grid) if lam else 0.0
        blocks = (mass(n) / grid.dt - a2 * skew(mt[n])
                  + (np.sum(m[n] * h[n], axis=-1) - lam * np.sum(gm[n] ** 2, axis=-1))[:, None, None] * eye
                  + h[n][:, :, None] * m[n][:, None, :])
        A = _blockdiag(blocks).tocsr() - lam * march.Lap3
        rhs = (np.einsum("xij,xj->xi", mass(n + 1), pn1) / grid.dt + src[n] + coupling)
        p[n] = spsolve(A.tocsc(), rhs.ravel()).reshape(grid.nx, 3)
    return p


def gradient_alpha_reduced(p: np.ndarray, m: np.ndarray, grid: Grid, scheme: str = "trapezoid",
                           theta: float = 0.5) -> tuple[float, float]:
    """``(int int -m_t . p, int int (m x m_t) . p)``.

    ``scheme="trapezoid"`` uses central time differences and trapezoid
    weights; ``scheme="march"`` uses the step rates ``(m_n - m_{n-1})/dt``
    and theta-averaged states at steps ``n >= 1`` with weights ``dt * wx``,
    which is exact for the discrete adjoint.
    """
    if scheme == "trapezoid":
        mt = ddt(m, grid)
        return -inner_l2(mt, p, grid), inner_l2(np.cross(m, mt), p, grid)
    if scheme == "march":
        D = np.diff(m, axis=0) / grid.dt
        M = theta * m[1:] + (1.0 - theta) * m[:-1]
        w = grid.dt * grid.wx[None, :, None]
        return (-float(np.sum(w * D * p[1:])), float(np.sum(w * np.cross(M, D) * p[1:])))
    raise ValueError(f"unknown quadrature scheme {scheme!r}")


# -- sub-problems ----------------------------------------------------------

@dataclass
class SubProblem:
    """Restriction of the data misfit to a channel set and a time window.

    ``weights`` are the time quadrature weights of the restricted norm
    (zero outside the window); ``channels`` is a boolean ``(K, L)`` mask.
    """

    weights: np.ndarray
    channels: np.ndarray
    delta: float

    def residual_norm(self, r: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.channels[..., None] * self.weights * r * r)))

    def adjoint_input(self, r: np.ndarray, wt: np.ndarray) -> np.ndarray:
        """Residual rescaled so the full-weight adjoint sees the restricted pairing."""
        return self.channels[..., None] * (self.weights / wt) * r


def _noise_norm(data: VoltageSeries, weights, channels, wt) -> float:
    """Noise level of a sub-problem; pro rata in window length if the noise itself is unknown."""
    if data.noise is None:
        full = np.sum(data.delta**2 * channels)
        return float(np.sqrt(full * np.sum(weights) / np.sum(wt)))
    return float(np.sqrt(np.sum(channels[..., None] * weights * data.noise**2)))


def full_problem(data: VoltageSeries, grid: Grid) -> list[SubProblem]:
    ch = np.ones(data.data.shape[:2], dtype=bool)
    return [SubProblem(grid.wt.copy(), ch, data.total_delta)]


def time_segments(data: VoltageSeries, grid: Grid, n: int) -> list[SubProblem]:
    """``n`` contiguous windows of (nearly) equal length with trapezoid weights."""
    if not 1 <= n <= grid.nt - 1:
        raise ValueError(f"segment count must lie in [1, {grid.nt - 1}]")
    edges = np.round(np.linspace(0, grid.nt - 1, n + 1)).astype(int)
    ch = np.ones(data.data.shape[:2], dtype=bool)
    subs = []
    for a, b in zip(edges[:-1], edges[1:]):
        w = np.zeros(grid.nt)
        w[a:b + 1] = _trapezoid_weights(b - a + 1, grid.dt)
        delta = _noise_norm(data, w, ch, grid.wt)
        subs.append(SubProblem(w, ch, delta))
    return subs


def data_channels(data: VoltageSeries, grid: Grid, order: Sequence[tuple[int, int]] | None = None
                  ) -> list[SubProblem]:
    """One sub-problem per channel ``(k, l)``, in ``order`` (row-major by default)."""
    K, L = data.data.shape[:2]
    order = order or [(k, l) for k in range(K) for l in range(L)]
    subs = []
    for k, l in order:
        ch = np.zeros((K, L), dtype=bool)
        ch[k, l] = True
        subs.append(SubProblem(grid.wt.copy(), ch, _noise_norm(data, grid.wt, ch, grid.wt)))
    return subs


# -- Landweber / Landweber-Kaczmarz ---------------------------------------

@dataclass
class ReducedResult(SolveResult):
    state: ReducedState | None = None
    flags: list = field(default_factory=list)
    total_inner_loops: int = 0


def run_kaczmarz(data: VoltageSeries, obs: ObservationSetup, prob: Problem, alpha_init: AlphaPair,
                 subproblems: list[SubProblem], mu: float = 1.0,
                 stopping: StoppingRule | None = None, march: LLGMarch | None = None,
                 callback: Callable | None = None) -> ReducedResult:
    """Loping Landweber-Kaczmarz on ``alpha`` over a cyclic list of sub-problems.

    Sub-iteration ``j`` uses sub-problem ``j mod n``; the update is skipped
    when its residual is below ``tau * delta_j`` and the run stops once a
    full cycle has been skipped.
    """
    grid = prob.grid
    stopping = stopping or StoppingRule()
    march = march or LLGMarch(grid, prob.m0, prob.h, prob.coeff)
    if data.data.shape != (obs.K, obs.L, grid.nt):
        raise ValueError("data channels do not match the observation setup")
    n = len(subproblems)
    alpha = alpha_init
    t0 = time.perf_counter()
    state = parameter_to_state(alpha, prob, march=march)
    total_loops = state.inner_loops
    flags: list[int] = []
    lg = IterationLog()
    guard = None
    reason = "max_iterations"
    j = 0
    while j < stopping.max_iterations:
        sub = subproblems[j % n]
        r = forward_observation(state, obs, grid) - data.data
        res = sub.residual_norm(r)
        guard = guard or _Guard(max(res, 1e-300))
        guard.check(res)
        w = discrepancy_flag(res, sub.delta, stopping.tau)
        flags.append(w)
        r_llg = norm_W(eval_F0(state.m_hat, prob.m0, alpha, prob.h, prob.coeff, grid), grid)
        lg.append(j, mu, res, r_llg, alpha.alpha1, alpha.alpha2, prob.rel_err(state.m_hat),
                  state.inner_loops)
        if callback is not None:
            callback(j, alpha, state, res)
        if cycle_stop(flags, n) is not None:
            reason = "discrepancy"
            break
        if w:
            p = solve_reduced_adjoint(sub.adjoint_input(r, grid.wt), state, obs, march)
            g1, g2 = gradient_alpha_reduced(p, state.m, grid, scheme="march", theta=march.theta)
            alpha = alpha.replace(alpha.alpha1 - mu * g1, alpha.alpha2 - mu * g2)
            state = parameter_to_state(alpha, prob, warm_start=state.m, march=march)
            total_loops += state.inner_loops
        j += 1
    return ReducedResult(state.m_hat, alpha, lg, j, reason, time.perf_counter() - t0,
                         state=state, flags=flags, total_inner_loops=total_loops)


def run_reduced(data, obs, prob, alpha_init, mu=1.0, stopping=None, march=None) -> ReducedResult:
    """Reduced Landweber: the single sub-problem case of :func:`run_kaczmarz`."""
    return run_kaczmarz(data, obs, prob, alpha_init, full_problem(data, prob.grid), mu,
                        stopping, march)


def run_kaczmarz_time(data, obs, prob, alpha_init, segments: int, mu=1.0, stopping=None,
                      march=None) -> ReducedResult:
    subs = time_segments(data, prob.grid, segments)
    return run_kaczmarz(data, obs, prob, alpha_init, subs, mu, stopping, march)


def run_kaczmarz_data(data, obs, prob, alpha_init, mu=1.0, stopping=None, march=None,
                      order=None) -> ReducedResult:
    subs = data_channels(data, prob.grid, order)
    return run_kaczmarz(data, obs, prob, alpha_init, subs, mu, stopping, march)
