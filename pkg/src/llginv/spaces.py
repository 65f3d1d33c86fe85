"""Discrete inner products of the state space U and the residual space W.

U holds state increments with ``u(0) = 0``; its product is the heat-operator
form ``<(d/dt - Lap) u1, (d/dt - Lap) u2>``, which coincides with
``int int (Lap u1 . Lap u2 + u1_t . u2_t) + int grad u1(T) : grad u2(T)``
in the continuum and is the form whose Riesz map is exactly two heat solves.

W is the dual of ``H1(0,T; H1)``. Its product is evaluated as the L2
pairing ``<w1, I2[(-Lap + id)^{-1} w2]>``, equal to the ``I1``-based
expression after one integration by parts in time.
"""

from __future__ import annotations

import numpy as np

from .fieldops import I2, inner_l2, laplacian
from .grid import Grid
from .solvers import solve_helmholtz_slice

U_ORIGIN_TOL = 1e-12


def heat_residual(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``(u_n - u_{n-1})/dt - Lap u_n`` for ``n = 1..N``, stacked on axis 0."""
    u = np.asarray(u, dtype=float)
    return (u[1:] - u[:-1]) / grid.dt - laplacian(u[1:], grid)


def _check_origin(u: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.max(np.abs(u))))
    if np.max(np.abs(u[0])) > U_ORIGIN_TOL * scale:
        raise ValueError(f"{name} does not vanish at t=0; not an element of U")


def inner_U(u1: np.ndarray, u2: np.ndarray, grid: Grid) -> float:
    u1 = grid.check(u1, "u1")
    u2 = grid.check(u2, "u2")
    _check_origin(u1, "u1")
    _check_origin(u2, "u2")
    h1 = heat_residual(u1, grid)
    h2 = heat_residual(u2, grid)
    return float(grid.dt * np.einsum("nic,nic,i->", h1, h2, grid.wx))


def norm_U(u: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(inner_U(u, u, grid), 0.0)))


def riesz_W(w: np.ndarray, grid: Grid) -> np.ndarray:
    """``y = I2[(-Lap + id)^{-1} w]``; ``(a, w)_W = <a, y>_{L2}``."""
    return I2(solve_helmholtz_slice(w, grid), grid)


def inner_W(w1: np.ndarray, w2: np.ndarray, grid: Grid) -> float:
    w1 = grid.check(w1, "w1")
    w2 = grid.check(w2, "w2")
    return inner_l2(w1, riesz_W(w2, grid), grid)


def norm_W(w: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(inner_W(w, w, grid), 0.0)))
