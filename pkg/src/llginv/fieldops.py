"""Finite-difference and quadrature operators on space-time fields.

All operators act on arrays whose last two axes are ``(space, component)``
and, where time is involved, whose first axis is time. They are linear and
allocate fresh outputs.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .grid import Grid


# --- time differences -------------------------------------------------------

@lru_cache(maxsize=32)
def ddt_matrix(nt: int, dt: float) -> np.ndarray:
    """Dense matrix of :func:`ddt` (central inside, 2nd-order one-sided ends)."""
    D = np.zeros((nt, nt))
    for n in range(1, nt - 1):
        D[n, n - 1] = -0.5
        D[n, n + 1] = 0.5
    D[0, :3] = [-1.5, 2.0, -0.5]
    D[-1, -3:] = [0.5, -2.0, 1.5]
    D /= dt
    D.setflags(write=False)
    return D


def ddt(f: np.ndarray, grid: Grid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    h2 = 2.0 * grid.dt
    out[1:-1] = (f[2:] - f[:-2]) / h2
    # difference form so that time-constant fields give exact zeros
    out[0] = (4.0 * (f[1] - f[0]) - (f[2] - f[0])) / h2
    out[-1] = (4.0 * (f[-1] - f[-2]) - (f[-1] - f[-3])) / h2
    return out


def ddt_transpose(y: np.ndarray, grid: Grid) -> np.ndarray:
    """Plain (unweighted) transpose of :func:`ddt` along the time axis."""
    y = np.asarray(y, dtype=float)
    D = ddt_matrix(grid.nt, grid.dt)
    return np.tensordot(D.T, y, axes=(1, 0))


# --- space differences (homogeneous Neumann via mirror ghosts) --------------

def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order Neumann Laplacian along the space axis (``axis=-2``)."""
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    inv = 1.0 / grid.dx**2
    out[..., 1:-1, :] = (f[..., 2:, :] - 2.0 * f[..., 1:-1, :] + f[..., :-2, :]) * inv
    out[..., 0, :] = 2.0 * (f[..., 1, :] - f[..., 0, :]) * inv
    out[..., -1, :] = 2.0 * (f[..., -2, :] - f[..., -1, :]) * inv
    return out


@lru_cache(maxsize=32)
def laplacian_matrix(nx: int, dx: float) -> np.ndarray:
    L = np.zeros((nx, nx))
    idx = np.arange(1, nx - 1)
    L[idx, idx - 1] = 1.0
    L[idx, idx] = -2.0
    L[idx, idx + 1] = 1.0
    L[0, 0], L[0, 1] = -2.0, 2.0
    L[-1, -1], L[-1, -2] = -2.0, 2.0
    L /= dx**2
    L.setflags(write=False)
    return L


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Central first difference in space; zero at both ends (mirror ghosts)."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    out[..., 1:-1, :] = (f[..., 2:, :] - f[..., :-2, :]) / (2.0 * grid.dx)
    return out


def gradient_adjoint(g: np.ndarray, grid: Grid) -> np.ndarray:
    """Adjoint of :func:`gradient` in the trapezoid-weighted space pairing."""
    g = np.asarray(g, dtype=float)
    w = grid.wx[:, None]
    gw = g * w
    out = np.zeros_like(g)
    # d/du_j of sum_i w_i g_i (u_{i+1}-u_{i-1})/(2dx), i interior
    out[..., :-2, :] += gw[..., 1:-1, :]
    out[..., 2:, :] -= gw[..., 1:-1, :]
    out /= -2.0 * grid.dx
    return out / w


def laplacian_free(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order Laplacian with one-sided end stencils and no boundary condition.

    Used for the prescribed initial state, which need not satisfy the
    Neumann condition.
    """
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    inv = 1.0 / grid.dx**2
    out[..., 1:-1, :] = (f[..., 2:, :] - 2.0 * f[..., 1:-1, :] + f[..., :-2, :]) * inv
    # 2 f0 - 5 f1 + 4 f2 - f3 written in differences, exact on constants
    for e, s in ((0, 1), (-1, -1)):
        f0 = f[..., e, :]
        d = [f[..., e + k * s, :] - f0 for k in (1, 2, 3)]
        out[..., e, :] = (-5.0 * d[0] + 4.0 * d[1] - d[2]) * inv
    return out


def gradient_free(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order first difference with one-sided end stencils."""
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    h2 = 2.0 * grid.dx
    out[..., 1:-1, :] = (f[..., 2:, :] - f[..., :-2, :]) / h2
    out[..., 0, :] = (4.0 * (f[..., 1, :] - f[..., 0, :]) - (f[..., 2, :] - f[..., 0, :])) / h2
    out[..., -1, :] = (4.0 * (f[..., -1, :] - f[..., -2, :]) - (f[..., -1, :] - f[..., -3, :])) / h2
    return out


def grad_sq(m: np.ndarray, grid: Grid) -> np.ndarray:
    """Pointwise ``|grad m|^2`` summed over components, shape ``m.shape[:-1]``."""
    g = gradient(m, grid)
    return np.sum(g * g, axis=-1)


# --- quadrature ------------------------------------------------------------

def integrate_time(s: np.ndarray, grid: Grid) -> float | np.ndarray:
    """Trapezoid rule along axis 0."""
    return np.tensordot(grid.wt, np.asarray(s, dtype=float), axes=(0, 0))


def integrate_space(s: np.ndarray, grid: Grid) -> float | np.ndarray:
    """Trapezoid rule along the space axis; ``s`` has space as its last axis."""
    return np.asarray(s, dtype=float) @ grid.wx


def integrate(s: np.ndarray, grid: Grid) -> float:
    """Double trapezoid rule of a scalar density of shape ``(nt, nx)``."""
    return float(grid.wt @ np.asarray(s, dtype=float) @ grid.wx)


def inner_l2(f: np.ndarray, g: np.ndarray, grid: Grid) -> float:
    """Discrete L2(0,T; L2(Omega)^3) pairing."""
    return integrate(np.sum(f * g, axis=-1), grid)


def norm_l2(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(inner_l2(f, f, grid), 0.0)))


def cumtrapz(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Cumulative trapezoid integral from 0 along axis 0, starting at 0."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * grid.dt * (f[1:] + f[:-1]), axis=0)
    return out


def _tshape(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (f.ndim - 1))


def I1(w: np.ndarray, grid: Grid) -> np.ndarray:
    """``int_0^t w ds - (1/T) int_0^T (T-s) w ds``."""
    w = np.asarray(w, dtype=float)
    T = grid.t_end
    tail = integrate_time(_tshape(T - grid.t, w) * w, grid) / T
    return cumtrapz(w, grid) - tail


def I2(w: np.ndarray, grid: Grid) -> np.ndarray:
    """``-int_0^t (t-s) w ds + (t/T) int_0^T (T-s) w ds``.

    Vanishes at both time endpoints and satisfies ``d/dt I2 = -I1``.
    """
    w = np.asarray(w, dtype=float)
    T = grid.t_end
    t = _tshape(grid.t, w)
    # trapezoid of (t_i - s) w over [0, t_i] is linear in the integrand
    first = t * cumtrapz(w, grid) - cumtrapz(t * w, grid)
    tail = integrate_time((T - t) * w, grid)
    return -first + t / T * tail


@lru_cache(maxsize=32)
def i2_matrix(nt: int, t_end: float) -> np.ndarray:
    """Matrix of :func:`I2` acting on the time axis: ``k(t_i, t_j) * w_j``."""
    t = np.linspace(0.0, t_end, nt)
    dt = t_end / (nt - 1)
    w = np.full(nt, dt)
    w[0] = w[-1] = 0.5 * dt
    lo = np.minimum.outer(t, t)
    hi = np.maximum.outer(t, t)
    K = lo * (t_end - hi) / t_end * w[None, :]
    K.setflags(write=False)
    return K
