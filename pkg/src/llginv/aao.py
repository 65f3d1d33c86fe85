"""All-at-once Landweber: joint state/parameter updates from linear PDE solves.

Every adjoint below is the exact transpose of the discrete forward map in the
discrete U, W and L2 products (see :mod:`llginv.spaces`), so one Landweber
step is a true steepest-descent step of the discrete residual.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .fieldops import ddt_transpose, gradient_adjoint, inner_l2, laplacian, norm_l2
from .grid import Grid
from .model import (AlphaPair, ModelCoefficients, ObservationSetup, StateTerms, VoltageSeries,
                    eval_F0, eval_observation, observation_transpose, state_terms)
from .regularization import IterationLog, StoppingRule, adapt_step, discrepancy_flag
from .solvers import solve_heat_backward, solve_heat_forward
from .spaces import riesz_W

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Residual stayed far above its initial value for too long."""


def riesz_y(w: np.ndarray, grid: Grid) -> np.ndarray:
    """Helmholtz solve per time slice followed by ``I2`` in time."""
    return riesz_W(w, grid)


def dF0_transpose(y, alpha: AlphaPair, h, coeff: ModelCoefficients, grid: Grid,
                  s: StateTerms) -> np.ndarray:
    """Density ``b`` with ``<dF0/dm_hat u, y>_L2 = sum_n sum_x wx u_n . b_n``."""
    yw = grid.wt[:, None, None] * y
    lam = coeff.lam
    a1, a2 = alpha.alpha1, alpha.alpha2
    my = np.sum(s.m * yw, axis=-1)
    b = a1 * ddt_transpose(yw, grid)
    b -= a2 * ddt_transpose(np.cross(yw, s.m), grid)
    b -= a2 * np.cross(s.mt, yw)
    b += my[..., None] * h + s.mh[..., None] * yw
    if lam:
        b -= lam * laplacian(yw, grid)
        b -= 2.0 * lam * gradient_adjoint(s.gm * my[..., None], grid)
        b -= lam * s.gm2[..., None] * yw
    return b


def split_terminal(b: np.ndarray, g: np.ndarray, grid: Grid) -> np.ndarray:
    """Distributed source ``f`` such that ``(f, g)`` represents the functional ``b``."""
    f = b / grid.dt
    f[-1] -= g / grid.dt
    return f


def assemble_adjoint_rhs(y, m_hat, m0, alpha: AlphaPair, h, coeff: ModelCoefficients,
                         grid: Grid, terms: StateTerms | None = None):
    """Heat-problem data ``(f_y, g_T)`` for the state adjoint of the LLG residual.

    ``g_T = a1 y(T) - a2 y(T) x m(T)``; ``f_y`` carries the rest of the exact
    discrete transpose, including the one-sided stencil contributions near
    the time endpoints.
    """
    s = terms if terms is not None else state_terms(m_hat, m0, h, grid)
    b = dF0_transpose(y, alpha, h, coeff, grid, s)
    g = alpha.alpha1 * y[-1] - alpha.alpha2 * np.cross(y[-1], s.m[-1])
    return split_terminal(b, g, grid), g


def riesz_U(f: np.ndarray, g: np.ndarray, grid: Grid) -> np.ndarray:
    return solve_heat_forward(solve_heat_backward(f, g, grid), grid)


def adjoint_F0_state(w, m_hat, m0, alpha, h, coeff, grid, terms=None, y=None) -> np.ndarray:
    """``(dF0/dm_hat)^* w`` in U: Helmholtz, I2, assemble, backward heat, forward heat."""
    if y is None:
        y = riesz_y(w, grid)
    f, g = assemble_adjoint_rhs(y, m_hat, m0, alpha, h, coeff, grid, terms)
    return riesz_U(f, g, grid)


def observation_rhs(r: np.ndarray, obs: ObservationSetup, grid: Grid):
    """Heat-problem data ``(f_r, g_r)`` for the observation adjoint.

    ``g_r(x) = sum_kl int K_kl(t, T, x) r_kl(t) dt``.
    """
    Y = observation_transpose(r, obs, grid)
    b = ddt_transpose(Y, grid)
    aT = obs.transfer_at(grid, grid.t - grid.t_end)
    coef = np.einsum("li,kli,i->kl", aT, r, grid.wt)
    g = np.einsum("kl,klic->ic", coef, obs.spatial_kernels())
    return split_terminal(b, g, grid), g


def adjoint_obs_state(r, obs: ObservationSetup, grid: Grid) -> np.ndarray:
    """``(dF_kl/dm_hat)^* r`` in U."""
    f, g = observation_rhs(r, obs, grid)
    return riesz_U(f, g, grid)


def grad_alpha(y, terms: StateTerms, grid: Grid) -> tuple[float, float]:
    """``(int int m_hat_t . y, -int int (m x m_hat_t) . y)``."""
    b1 = inner_l2(terms.mt, y, grid)
    b2 = -inner_l2(np.cross(terms.m, terms.mt), y, grid)
    return b1, b2


def relative_error(m, m_exact, grid: Grid) -> float:
    return norm_l2(m - m_exact, grid) / norm_l2(m_exact, grid)


@dataclass
class Problem:
    """Everything fixed during an LLG solve or identification run."""

    grid: Grid
    m0: np.ndarray
    h: np.ndarray
    coeff: ModelCoefficients = field(default_factory=ModelCoefficients)
    m_exact: np.ndarray | None = None

    def __post_init__(self):
        self.m0 = self.grid.check_slice(self.m0, "m0")
        self.h = self.grid.check(self.h, "h")
        if self.m_exact is not None:
            self.m_exact = self.grid.check(self.m_exact, "m_exact")

    def rel_err(self, m_hat) -> float:
        if self.m_exact is None:
            return float("nan")
        return relative_error(self.m0[None] + m_hat, self.m_exact, self.grid)


@dataclass
class StepPolicy:
    """Landweber step size; ``adaptive`` halves on residual non-decrease."""

    mu: float = 1.0
    adaptive: bool = True
    mu_min_rel: float = 1e-6

    @property
    def mu_min(self) -> float:
        return self.mu * self.mu_min_rel


@dataclass
class SolveResult:
    m_hat: np.ndarray
    alpha: AlphaPair
    log: IterationLog
    iterations: int
    stop_reason: str
    wall_time: float


class _Guard:
    """Divergence guard: residual above ``factor`` x initial for ``patience`` iterations."""

    def __init__(self, r0: float, factor: float = 10.0, patience: int = 50):
        self.r0, self.factor, self.patience, self.count = r0, factor, patience, 0

    def check(self, r: float) -> None:
        if not np.isfinite(r):
            raise DivergenceError("residual became non-finite")
        self.count = self.count + 1 if r > self.factor * self.r0 else 0
        if self.count >= self.patience:
            raise DivergenceError(f"residual above {self.factor}x initial for {self.patience} iterations")


def _llg_residual(m_hat, alpha, prob: Problem, norm: str):
    s = state_terms(m_hat, prob.m0, prob.h, prob.grid)
    w = eval_F0(m_hat, prob.m0, alpha, prob.h, prob.coeff, prob.grid, terms=s)
    if norm == "W":
        y = riesz_y(w, prob.grid)
        r = float(np.sqrt(max(inner_l2(w, y, prob.grid), 0.0)))
    elif norm == "L2":
        y = None
        r = norm_l2(w, prob.grid)
    else:
        raise ValueError(f"unknown residual norm {norm!r}")
    return r, w, y, s


def run_llg_solver(alpha: AlphaPair, prob: Problem, m_hat_init: np.ndarray | None = None,
                   policy: StepPolicy | None = None, max_iterations: int = 5000,
                   tol: float = 0.0, tol_ref: float | None = None, monitor: str = "W",
                   record: bool = True) -> SolveResult:
    """Solve ``F0(m_hat, alpha) = 0`` for ``m_hat`` by Landweber with ``alpha`` fixed.

    Stops when the step size falls below its floor, the iteration budget is
    spent, or the W residual drops below ``tol * tol_ref`` (``tol_ref``
    defaults to the residual of the initial guess).
    """
    grid = prob.grid
    policy = policy or StepPolicy()
    m_hat = grid.zeros() if m_hat_init is None else grid.check(m_hat_init, "m_hat_init").copy()
    m_hat[0] = 0.0
    mu = policy.mu
    t0 = time.perf_counter()
    res, w, y, s = _llg_residual(m_hat, alpha, prob, "W")
    if tol_ref is None:
        tol_ref = res
    guard = _Guard(max(res, 1e-300))
    lg = IterationLog()
    if record:
        lg.append(0, mu, res_llg=res, alpha1=alpha.alpha1, alpha2=alpha.alpha2,
                  rel_err_m=prob.rel_err(m_hat))
    it, reason = 0, "max_iterations"
    while it < max_iterations:
        if res <= tol * tol_ref:
            reason = "tolerance"
            break
        y_ = y if monitor == "W" else riesz_y(w, grid)
        z = adjoint_F0_state(w, m_hat, prob.m0, alpha, prob.h, prob.coeff, grid, terms=s, y=y_)
        while True:
            trial = m_hat - mu * z
            res_t, w_t, y_t, s_t = _llg_residual(trial, alpha, prob, monitor)
            if not policy.adaptive:
                accept = True
                break
            accept, mu = adapt_step(res if monitor == "W" else norm_l2(w, grid), res_t, mu)
            if accept or mu < policy.mu_min:
                break
        if not accept:
            reason = "step_size"
            break
        it += 1
        m_hat, w, s = trial, w_t, s_t
        if monitor == "W":
            res, y = res_t, y_t
        else:
            res, _, y, _ = _llg_residual(m_hat, alpha, prob, "W")
        guard.check(res)
        if record:
            lg.append(it, mu, res_llg=res, alpha1=alpha.alpha1, alpha2=alpha.alpha2,
                      rel_err_m=prob.rel_err(m_hat))
    if record and (not lg.records or lg.last["iter"] != it):
        lg.append(it, mu, res_llg=res, alpha1=alpha.alpha1, alpha2=alpha.alpha2,
                  rel_err_m=prob.rel_err(m_hat))
    return SolveResult(m_hat, alpha, lg, it, reason, time.perf_counter() - t0)


def _aao_residual(m_hat, alpha, prob: Problem, data: VoltageSeries, obs: ObservationSetup):
    grid = prob.grid
    s = state_terms(m_hat, prob.m0, prob.h, grid)
    w = eval_F0(m_hat, prob.m0, alpha, prob.h, prob.coeff, grid, terms=s)
    y = riesz_y(w, grid)
    r_llg = float(np.sqrt(max(inner_l2(w, y, grid), 0.0)))
    r = eval_observation(s.mt, obs, grid) - data.data
    r_obs = float(np.sqrt(np.sum(grid.wt * r * r)))
    return s, w, y, r, r_llg, r_obs


def run_aao(data: VoltageSeries, obs: ObservationSetup, prob: Problem, alpha_init: AlphaPair,
            m_hat_init: np.ndarray | None = None, policy: StepPolicy | None = None,
            stopping: StoppingRule | None = None, alpha_exact: AlphaPair | None = None
            ) -> SolveResult:
    """Joint Landweber on ``(m_hat, alpha1, alpha2)`` with discrepancy stopping.

    The discrepancy test uses the full residual
    ``sqrt(|F0|_W^2 + |K m_t - y_delta|^2)`` against ``tau * delta`` with
    ``delta`` the total data noise level.
    """
    grid = prob.grid
    policy = policy or StepPolicy(mu=1.0, adaptive=False)
    stopping = stopping or StoppingRule()
    if data.data.shape != (obs.K, obs.L, grid.nt):
        raise ValueError("data channels do not match the observation setup")
    m_hat = grid.zeros() if m_hat_init is None else grid.check(m_hat_init, "m_hat_init").copy()
    m_hat[0] = 0.0
    alpha = alpha_init
    mu = policy.mu
    delta = data.total_delta
    t0 = time.perf_counter()
    s, w, y, r, r_llg, r_obs = _aao_residual(m_hat, alpha, prob, data, obs)
    total = np.hypot(r_llg, r_obs)
    guard = _Guard(max(total, 1e-300))
    lg = IterationLog()
    lg.append(0, mu, r_obs, r_llg, alpha.alpha1, alpha.alpha2, prob.rel_err(m_hat))
    it, reason = 0, "max_iterations"
    while it < stopping.max_iterations:
        if discrepancy_flag(total, delta, stopping.tau) == 0:
            reason = "discrepancy"
            break
        z = adjoint_F0_state(w, m_hat, prob.m0, alpha, prob.h, prob.coeff, grid, terms=s, y=y)
        sv = adjoint_obs_state(r, obs, grid)
        b1, b2 = grad_alpha(y, s, grid)
        dm = z + sv
        while True:
            trial_m = m_hat - mu * dm
            trial_a = alpha.replace(alpha.alpha1 - mu * b1, alpha.alpha2 - mu * b2)
            out = _aao_residual(trial_m, trial_a, prob, data, obs)
            new_total = np.hypot(out[4], out[5])
            if not policy.adaptive:
                accept = True
                break
            accept, mu = adapt_step(total, new_total, mu)
            if accept or mu < policy.mu_min:
                break
        if not accept:
            reason = "step_size"
            break
        it += 1
        m_hat, alpha = trial_m, trial_a
        s, w, y, r, r_llg, r_obs = out
        total = new_total
        guard.check(total)
        lg.append(it, mu, r_obs, r_llg, alpha.alpha1, alpha.alpha2, prob.rel_err(m_hat))
    return SolveResult(m_hat, alpha, lg, it, reason, time.perf_counter() - t0)
