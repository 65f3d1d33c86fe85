"""LLG residual, its linearization, the coil-voltage observation and physical scaling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .fieldops import ddt, gradient, gradient_free, laplacian, laplacian_free
from .grid import Grid

MU0 = 4e-7 * np.pi


@dataclass(frozen=True)
class AlphaPair:
    """Scaled damping parameters and, optionally, where they came from."""

    alpha1: float
    alpha2: float
    gamma: float | None = None
    alpha_D: float | None = None
    m_S: float | None = None
    A: float | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2])

    def replace(self, alpha1: float, alpha2: float) -> "AlphaPair":
        return AlphaPair(float(alpha1), float(alpha2), self.gamma, self.alpha_D, self.m_S, self.A)

    @classmethod
    def from_physical(cls, gamma: float, alpha_D: float, m_S: float | None = None,
                      A: float | None = None) -> "AlphaPair":
        if gamma <= 0:
            raise ValueError("gyromagnetic ratio must be positive")
        a1 = gamma * alpha_D / (1.0 + alpha_D**2)
        a2 = gamma / (1.0 + alpha_D**2)
        s = a1 * a1 + a2 * a2
        return cls(a1 / s, a2 / s, gamma=gamma, alpha_D=alpha_D, m_S=m_S, A=A)


@dataclass(frozen=True)
class ModelCoefficients:
    """Exchange coefficient multiplying the Laplacian and ``|grad m|^2`` terms."""

    lam: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("exchange coefficient must be nonnegative")


@dataclass
class ObservationSetup:
    """Measurement kernels ``K_kl(t, tau, x) = -mu0 a_l(t - tau) c_k(x) p_l(x)``.

    ``transfer`` holds ``L`` transfer functions sampled on the time grid of
    one period ``[0, T]``; ``concentrations`` is ``(K, nx)``;
    ``sensitivities`` is ``(L, nx, 3)``.
    """

    mu0: float
    transfer: np.ndarray
    concentrations: np.ndarray
    sensitivities: np.ndarray

    def __post_init__(self):
        self.transfer = np.atleast_2d(np.asarray(self.transfer, dtype=float))
        self.concentrations = np.atleast_2d(np.asarray(self.concentrations, dtype=float))
        s = np.asarray(self.sensitivities, dtype=float)
        if s.ndim == 2:
            s = s[None]
        self.sensitivities = s
        if self.transfer.shape[0] != s.shape[0]:
            raise ValueError("need one transfer function per receive coil")
        if self.concentrations.shape[1] != s.shape[1]:
            raise ValueError("concentrations and sensitivities disagree on nx")
        if s.shape[2] != 3:
            raise ValueError("sensitivities must be 3-vectors")

    @property
    def K(self) -> int:
        return self.concentrations.shape[0]

    @property
    def L(self) -> int:
        return self.sensitivities.shape[0]

    def spatial_kernels(self) -> np.ndarray:
        """``q_kl(x) = -mu0 c_k(x) p_l(x)``, shape ``(K, L, nx, 3)``."""
        c = self.concentrations[:, None, :, None]
        p = self.sensitivities[None, :, :, :]
        return -self.mu0 * c * p

    def transfer_at(self, grid: Grid, s: np.ndarray) -> np.ndarray:
        """Periodic linear interpolation of every transfer function at times ``s``."""
        T = grid.t_end
        s = np.mod(np.asarray(s, dtype=float), T)
        return np.stack([np.interp(s, grid.t, a) for a in self.transfer])

    def transfer_derivative_at(self, grid: Grid, s: np.ndarray) -> np.ndarray:
        """Central-difference derivative of the periodic transfer functions."""
        per = self.transfer[:, :-1]
        d = (np.roll(per, -1, axis=1) - np.roll(per, 1, axis=1)) / (2.0 * grid.dt)
        d = np.concatenate([d, d[:, :1]], axis=1)
        s = np.mod(np.asarray(s, dtype=float), grid.t_end)
        return np.stack([np.interp(s, grid.t, row) for row in d])

    def time_kernels(self, grid: Grid) -> np.ndarray:
        """``A_l[i, j] = a_l(t_i - t_j) * wt_j``, shape ``(L, nt, nt)``."""
        lag = grid.t[:, None] - grid.t[None, :]
        return self.transfer_at(grid, lag) * grid.wt[None, None, :]

    def select(self, k: int, l: int) -> "ObservationSetup":
        """Single-channel setup for coil ``l`` and concentration ``k``."""
        return ObservationSetup(self.mu0, self.transfer[l:l + 1],
                                self.concentrations[k:k + 1], self.sensitivities[l:l + 1])

    @classmethod
    def uniform(cls, grid: Grid, mu0: float = 1.0, K: int = 1, L: int = 1) -> "ObservationSetup":
        """``a_l = 1``, ``c_k = 1``, ``p_l = (1, 1, 1)``."""
        return cls(mu0, np.ones((L, grid.nt)), np.ones((K, grid.nx)), np.ones((L, grid.nx, 3)))


@dataclass
class VoltageSeries:
    """Voltage traces ``y_kl(t)`` of shape ``(K, L, nt)`` with per-channel noise levels.

    ``noise`` optionally keeps the perturbation that was added, so noise
    levels of time windows can be measured exactly.
    """

    data: np.ndarray
    delta: np.ndarray = field(default=None)
    noise: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise ValueError("voltage data must have shape (K, L, nt)")
        if self.delta is None:
            self.delta = np.zeros(self.data.shape[:2])
        self.delta = np.asarray(self.delta, dtype=float).reshape(self.data.shape[:2])
        if np.any(self.delta < 0):
            raise ValueError("noise levels must be nonnegative")
        if self.noise is not None:
            self.noise = np.asarray(self.noise, dtype=float)
            if self.noise.shape != self.data.shape:
                raise ValueError("noise must have the shape of the data")

    @property
    def channels(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    @property
    def total_delta(self) -> float:
        return float(np.sqrt(np.sum(self.delta**2)))


class StateTerms(NamedTuple):
    """Quantities of a state ``m = m0 + m_hat`` reused by residuals and adjoints."""

    m: np.ndarray
    mt: np.ndarray
    gm: np.ndarray
    gm2: np.ndarray
    lap_m: np.ndarray
    mh: np.ndarray


def state_terms(m_hat: np.ndarray, m0: np.ndarray, h: np.ndarray, grid: Grid) -> StateTerms:
    """Derivatives of ``m = m0 + m_hat``.

    ``m_hat`` is differentiated with the Neumann stencils of its space U;
    ``m0`` is a prescribed additive term and gets boundary-free stencils, so
    an initial state violating the Neumann condition is still differentiated
    consistently.
    """
    m = m0[None] + m_hat
    gm = gradient_free(m0, grid)[None] + gradient(m_hat, grid)
    return StateTerms(
        m=m,
        mt=ddt(m_hat, grid),
        gm=gm,
        gm2=np.sum(gm * gm, axis=-1),
        lap_m=laplacian_free(m0, grid)[None] + laplacian(m_hat, grid),
        mh=np.sum(m * h, axis=-1),
    )


def eval_F0(m_hat, m0, alpha: AlphaPair, h, coeff: ModelCoefficients, grid: Grid,
            terms: StateTerms | None = None) -> np.ndarray:
    """Residual of the reformulated LLG equation at ``m = m0 + m_hat``::

        a1 m_t - lam Lap m - a2 m x m_t - lam |grad m|^2 m - h + (m.h) m
    """
    m_hat = grid.check(m_hat, "m_hat")
    m0 = grid.check_slice(m0, "m0")
    h = grid.check(h, "h")
    s = terms if terms is not None else state_terms(m_hat, m0, h, grid)
    lam = coeff.lam
    return (alpha.alpha1 * s.mt
            - lam * s.lap_m
            - alpha.alpha2 * np.cross(s.m, s.mt)
            - lam * s.gm2[..., None] * s.m
            - h
            + s.mh[..., None] * s.m)


def apply_dF0(u, beta, alpha: AlphaPair, h, coeff: ModelCoefficients, grid: Grid,
              s: StateTerms) -> np.ndarray:
    """Directional derivative of :func:`eval_F0` along ``(u, beta1, beta2)``."""
    ut = ddt(u, grid)
    gu = gradient(u, grid)
    lam = coeff.lam
    a1, a2 = alpha.alpha1, alpha.alpha2
    out = (a1 * ut
           - lam * laplacian(u, grid)
           - a2 * np.cross(u, s.mt)
           - a2 * np.cross(s.m, ut)
           - 2.0 * lam * np.sum(s.gm * gu, axis=-1)[..., None] * s.m
           - lam * s.gm2[..., None] * u
           + np.sum(u * h, axis=-1)[..., None] * s.m
           + s.mh[..., None] * u)
    if beta is not None:
        out = out + beta[0] * s.mt - beta[1] * np.cross(s.m, s.mt)
    return out


def eval_observation(m_t: np.ndarray, obs: ObservationSetup, grid: Grid) -> np.ndarray:
    """Coil voltages ``y_kl(t_i)`` for a magnetization rate ``m_t``; shape ``(K, L, nt)``."""
    m_t = grid.check(m_t, "m_t")
    q = obs.spatial_kernels()
    s = np.einsum("klic,nic,i->kln", q, m_t, grid.wx)
    A = obs.time_kernels(grid)
    return np.einsum("lij,klj->kli", A, s)


def observation_transpose(r: np.ndarray, obs: ObservationSetup, grid: Grid) -> np.ndarray:
    """Field ``Y`` with ``sum_i wt_i r.y(m_t) = sum_n sum_x wx Y_n . m_t,n``."""
    r = np.asarray(r, dtype=float)
    if r.shape[:2] != (obs.K, obs.L):
        raise ValueError(f"residual has {r.shape[:2]} channels, expected {(obs.K, obs.L)}")
    A = obs.time_kernels(grid)
    c = np.einsum("lij,kli->klj", A, r * grid.wt)
    return np.einsum("klj,klic->jic", c, obs.spatial_kernels())


def scale_physical(gamma: float, alpha_D: float, m_S: float, A: float, H_ext: np.ndarray,
                   mu0: float = MU0):
    """Scaled parameters for the unit-length LLG: ``(alpha, coeff, h)``."""
    if gamma <= 0 or m_S <= 0:
        raise ValueError("gamma and m_S must be positive")
    if A < 0:
        raise ValueError("exchange stiffness must be nonnegative")
    alpha = AlphaPair.from_physical(gamma, alpha_D, m_S=m_S, A=A)
    coeff = ModelCoefficients(lam=2.0 * A * m_S)
    h = mu0 * m_S * np.asarray(H_ext, dtype=float)
    return alpha, coeff, h
