"""Implicit theta-scheme time stepping of the LLG equation with Newton steps.

Step ``n`` solves, for ``m_n``::

    a1 D - a2 M x D - lam Lap M - lam |grad M|^2 M - h + (M.h) M = 0

with ``D = (m_n - m_{n-1})/dt``, ``M = theta m_n + (1-theta) m_{n-1}`` and
``h`` averaged the same way. ``theta=0.5`` (midpoint) is second order;
``theta=1`` (implicit Euler) is L-stable and suited to stiff physical runs.

The per-step Jacobians are kept, so the derivative of the whole march with
respect to ``(a1, a2)`` and its exact transpose are a forward and a backward
sweep of sparse solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fieldops import gradient, gradient_free, laplacian, laplacian_free, laplacian_matrix
from .grid import Grid
from .model import AlphaPair, ModelCoefficients


class NewtonError(RuntimeError):
    """Newton iteration of a time step did not converge."""


def skew(a: np.ndarray) -> np.ndarray:
    """Matrices ``[a]_x`` with ``[a]_x v = a x v``; shape ``a.shape + (3,)``."""
    S = np.zeros(a.shape + (3,))
    S[..., 0, 1], S[..., 0, 2] = -a[..., 2], a[..., 1]
    S[..., 1, 0], S[..., 1, 2] = a[..., 2], -a[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -a[..., 1], a[..., 0]
    return S


def _blockdiag(blocks: np.ndarray) -> sp.bsr_matrix:
    n = blocks.shape[0]
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(3 * n, 3 * n))


def _gradient_matrix(nx: int, dx: float) -> sp.csr_matrix:
    i = np.arange(1, nx - 1)
    rows = np.concatenate([i, i])
    cols = np.concatenate([i + 1, i - 1])
    vals = np.concatenate([np.full(i.size, 0.5 / dx), np.full(i.size, -0.5 / dx)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nx, nx))


@dataclass
class _Step:
    lu: object       # factorization of dG/dm_n
    B: sp.spmatrix   # dG/dm_{n-1}
    D: np.ndarray
    M: np.ndarray


class LLGMarch:
    """Time-marching parameter-to-state map for fixed ``(m0, h, lam)``."""

    def __init__(self, grid: Grid, m0, h, coeff: ModelCoefficients | None = None,
                 theta: float = 0.5, tol: float = 1e-12, max_newton: int = 30):
        if not 0.5 <= theta <= 1.0:
            raise ValueError("theta must lie in [0.5, 1]")
        self.grid = grid
        self.m0 = grid.check_slice(m0, "m0")
        self.h = grid.check(h, "h")
        self.coeff = coeff or ModelCoefficients()
        self.theta = float(theta)
        self.tol = tol
        self.max_newton = max_newton
        nx, dx = grid.nx, grid.dx
        I3 = sp.identity(3, format="csr")
        self.Lap3 = sp.kron(sp.csr_matrix(laplacian_matrix(nx, dx)), I3, format="csr")
        self.G3 = sp.kron(_gradient_matrix(nx, dx), I3, format="csr")
        self.grad0 = gradient_free(self.m0, grid)
        self.lap0 = laplacian_free(self.m0, grid)

    # -- pointwise pieces ---------------------------------------------------
    def _mid(self, mn, mp):
        th = self.theta
        return th * mn + (1.0 - th) * mp

    def _h(self, n):
        th = self.theta
        return th * self.h[n] + (1.0 - th) * self.h[n - 1]

    def _derivs(self, M):
        d = M - self.m0
        gM = self.grad0 + gradient(d, self.grid)
        lapM = self.lap0 + laplacian(d, self.grid)
        return gM, lapM

    def residual(self, mn, mp, n, alpha: AlphaPair) -> np.ndarray:
        """Step residual ``G_n(m_n, m_{n-1})``, shape ``(nx, 3)``."""
        D = (mn - mp) / self.grid.dt
        M = self._mid(mn, mp)
        h = self._h(n)
        gM, lapM = self._derivs(M)
        lam = self.coeff.lam
        return (alpha.alpha1 * D - alpha.alpha2 * np.cross(M, D) - lam * lapM
                - lam * np.sum(gM * gM, axis=-1)[:, None] * M - h
                + np.sum(M * h, axis=-1)[:, None] * M)

    def jacobians(self, mn, mp, n, alpha: AlphaPair):
        """``(dG/dm_n, dG/dm_{n-1}, D, M)`` at the given pair of slices."""
        dt, th, lam = self.grid.dt, self.theta, self.coeff.lam
        D = (mn - mp) / dt
        M = self._mid(mn, mp)
        h = self._h(n)
        gM, _ = self._derivs(M)
        eye = np.broadcast_to(np.eye(3), (self.grid.nx, 3, 3))
        blocks = (alpha.alpha2 * skew(D)
                  + (np.sum(M * h, axis=-1) - lam * np.sum(gM * gM, axis=-1))[:, None, None] * eye
                  + M[:, :, None] * h[:, None, :])
        JM = _blockdiag(blocks).tocsr() - lam * self.Lap3
        if lam:
            JM = JM - 2.0 * lam * (_blockdiag(M[:, :, None] * gM[:, None, :]).tocsr() @ self.G3)
        JD = _blockdiag(alpha.alpha1 * eye - alpha.alpha2 * skew(M)).tocsr()
        A = (th * JM + JD / dt).tocsc()
        B = ((1.0 - th) * JM - JD / dt).tocsr()
        return A, B, D, M

    # -- forward solve ------------------------------------------------------
    def solve(self, alpha: AlphaPair, warm_start: np.ndarray | None = None):
        """March from ``m0``; returns ``(m, newton_iterations, steps)``.

        ``warm_start`` (a full state) supplies the Newton initial guess per
        slice; otherwise the previous slice is used.
        """
        grid = self.grid
        m = np.empty(grid.shape)
        m[0] = self.m0
        steps: list[_Step] = []
        total = 0
        for n in range(1, grid.nt):
            mn = m[n - 1].copy() if warm_start is None else np.array(warm_start[n], dtype=float)
            scale = max(1.0, float(np.max(np.abs(m[n - 1]))))
            for k in range(self.max_newton + 1):
                A, B, D, M = self.jacobians(mn, m[n - 1], n, alpha)
                lu = splu(A)
                G = self.residual(mn, m[n - 1], n, alpha)
                delta = lu.solve(-G.ravel()).reshape(grid.nx, 3)
                if not np.all(np.isfinite(delta)):
                    raise NewtonError(f"non-finite Newton update at step {n}")
                if np.max(np.abs(delta)) <= self.tol * scale:
                    break
                if k == self.max_newton:
                    raise NewtonError(f"Newton did not converge at step {n}")
                mn = mn + delta
                total += 1
            m[n] = mn
            steps.append(_Step(lu, B, D, M))
        return m, total, steps

    # -- derivative in alpha and its transpose ------------------------------
    def linearized(self, beta, steps) -> np.ndarray:
        """Derivative of the march along ``beta = (b1, b2)``, ``u(0) = 0``."""
        grid = self.grid
        u = np.zeros(grid.shape)
        for n, s in enumerate(steps, start=1):
            rhs = -(beta[0] * s.D - beta[1] * np.cross(s.M, s.D)).ravel() - s.B @ u[n - 1].ravel()
            u[n] = s.lu.solve(rhs).reshape(grid.nx, 3)
        return u

    def transpose(self, c: np.ndarray, steps) -> np.ndarray:
        """Multipliers ``l`` with ``sum_n c_n . u_n = -sum_n l_n . (dG_n/dalpha) beta``."""
        grid = self.grid
        lam = np.zeros(grid.shape)
        carry = np.zeros(3 * grid.nx)
        for n in range(grid.nt - 1, 0, -1):
            s = steps[n - 1]
            lam[n] = s.lu.solve(c[n].ravel() - carry, trans="T").reshape(grid.nx, 3)
            carry = s.B.T @ lam[n].ravel()
        return lam

    def alpha_gradient(self, lam: np.ndarray, steps) -> tuple[float, float]:
        g1 = -sum(float(np.sum(l * s.D)) for l, s in zip(lam[1:], steps))
        g2 = sum(float(np.sum(l * np.cross(s.M, s.D))) for l, s in zip(lam[1:], steps))
        return g1, g2
