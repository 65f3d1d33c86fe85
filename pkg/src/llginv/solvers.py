"""Linear PDE building blocks with homogeneous Neumann boundaries.

The heat solvers use implicit Euler in the diffusion with the source taken
at the start of each step::

    (z_n - z_{n-1})/dt - Lap z_n = v_{n-1}

and the backward solver is the exact time reflection of the forward one.
With this pairing, ``solve_heat_forward(solve_heat_backward(f, g))`` is the
exact Riesz representer, in the discrete U inner product of
:mod:`llginv.spaces`, of ``u -> sum_{n>=1} dt <f_n, u_n> + <g, u_N>``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .fieldops import laplacian_matrix
from .grid import Grid


def _require_finite(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@lru_cache(maxsize=32)
def _factor(nx: int, dx: float, shift: float, scale: float):
    """LU factors of ``shift*I - scale*Lap`` (tridiagonal, M-matrix)."""
    A = shift * np.eye(nx) - scale * laplacian_matrix(nx, dx)
    return lu_factor(A)


def _solve_slices(rhs: np.ndarray, grid: Grid, shift: float, scale: float) -> np.ndarray:
    """Solve ``(shift - scale*Lap) u = rhs`` for every slice along axis -2."""
    lu = _factor(grid.nx, grid.dx, shift, scale)
    moved = np.moveaxis(rhs, -2, 0)
    flat = moved.reshape(grid.nx, -1)
    sol = lu_solve(lu, flat).reshape(moved.shape)
    return np.moveaxis(sol, 0, -2)


def solve_helmholtz_slice(w: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve ``-Lap u + u = w`` independently on every time slice/component."""
    w = _require_finite(w, "w")
    return _solve_slices(w, grid, 1.0, 1.0)


def helmholtz_apply(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Apply the discrete ``-Lap + id``; left inverse of :func:`solve_helmholtz_slice`."""
    from .fieldops import laplacian

    return u - laplacian(u, grid)


def solve_heat_forward(
    v: np.ndarray,
    grid: Grid,
    z0: np.ndarray | None = None,
    scheme: str = "implicit-euler",
) -> np.ndarray:
    """March ``z_t - Lap z = v`` from ``z(0) = z0`` (default 0) to ``T``.

    ``scheme="crank-nicolson"`` is available for order studies; the adjoint
    machinery always uses implicit Euler.
    """
    v = _require_finite(v, "v")
    if v.shape[0] != grid.nt:
        raise ValueError(f"source has {v.shape[0]} time samples, expected {grid.nt}")
    dt = grid.dt
    z = np.zeros_like(v)
    if z0 is not None:
        z[0] = _require_finite(z0, "z0")
    if scheme == "implicit-euler":
        lu = _factor(grid.nx, grid.dx, 1.0, dt)
        for n in range(1, grid.nt):
            z[n] = lu_solve(lu, z[n - 1] + dt * v[n - 1])
    elif scheme == "crank-nicolson":
        from .fieldops import laplacian

        lu = _factor(grid.nx, grid.dx, 1.0, 0.5 * dt)
        for n in range(1, grid.nt):
            rhs = z[n - 1] + 0.5 * dt * laplacian(z[n - 1], grid) + 0.5 * dt * (v[n - 1] + v[n])
            z[n] = lu_solve(lu, rhs)
    else:
        raise ValueError(f"unknown time scheme {scheme!r}")
    return z


def solve_heat_backward(
    f: np.ndarray,
    g: np.ndarray,
    grid: Grid,
    scheme: str = "implicit-euler",
) -> np.ndarray:
    """Solve ``-v_t - Lap v = f`` backward from ``v(T) = g``.

    Implemented as the forward solver applied to the time-reflected source.
    """
    f = _require_finite(f, "f")
    g = _require_finite(g, "g")
    if g.shape != f.shape[1:]:
        raise ValueError(f"terminal slice has shape {g.shape}, expected {f.shape[1:]}")
    return solve_heat_forward(f[::-1], grid, z0=g, scheme=scheme)[::-1].copy()


def solve_final_condition(m_T: np.ndarray, b: np.ndarray, alpha1: float, alpha2: float) -> np.ndarray:
    """Pointwise solve ``alpha1 p + alpha2 (m x p) = b``.

    Closed form: with ``a = alpha1``, ``c = alpha2 m``,
    ``p = (a^2 b - a c x b + (c.b) c) / (a (a^2 + |c|^2))``.
    """
    if alpha1 == 0.0:
        raise ZeroDivisionError("final-time system is singular for alpha1 = 0")
    m_T = np.asarray(m_T, dtype=float)
    b = np.asarray(b, dtype=float)
    a = float(alpha1)
    c = alpha2 * m_T
    cc = np.sum(c * c, axis=-1, keepdims=True)
    cb = np.sum(c * b, axis=-1, keepdims=True)
    num = a * a * b - a * np.cross(c, b) + cb * c
    return num / (a * (a * a + cc))
