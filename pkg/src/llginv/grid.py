"""Uniform space-time grids and the field containers that live on them."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on ``[0, t_end] x [x_min, x_max]``.

    Fields on the grid are arrays of shape ``(nt, nx, 3)`` indexed
    ``(time, space, component)``.
    """

    nt: int = 51
    nx: int = 101
    t_end: float = 0.2
    x_min: float = 0.0
    x_max: float = 2.0 * np.pi

    def __post_init__(self):
        if self.nt < 3 or self.nx < 3:
            raise ValueError(f"grid needs nt >= 3 and nx >= 3, got nt={self.nt}, nx={self.nx}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dt(self) -> float:
        return self.t_end / (self.nt - 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.nt)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @cached_property
    def wt(self) -> np.ndarray:
        """Trapezoid weights in time."""
        return _trapezoid_weights(self.nt, self.dt)

    @cached_property
    def wx(self) -> np.ndarray:
        """Trapezoid weights in space."""
        return _trapezoid_weights(self.nx, self.dx)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.nx, 3)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(T, X)`` arrays of shape ``(nt, nx)``."""
        return np.meshgrid(self.t, self.x, indexing="ij")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def check(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"{name} has shape {f.shape}, expected {self.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError(f"{name} contains non-finite values")
        return f

    def check_slice(self, g: np.ndarray, name: str = "slice") -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape != (self.nx, 3):
            raise ValueError(f"{name} has shape {g.shape}, expected {(self.nx, 3)}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"{name} contains non-finite values")
        return g

    def broadcast(self, g: np.ndarray) -> np.ndarray:
        """Repeat a single time slice over all time samples."""
        return np.broadcast_to(self.check_slice(g), self.shape).copy()

    @classmethod
    def default(cls) -> "Grid":
        return cls(nt=51, nx=101, t_end=0.2, x_min=0.0, x_max=2.0 * np.pi)


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass
class Field3:
    """A 3-component vector field sampled on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = self.grid.check(self.values)


@dataclass
class ScalarSeries:
    """A real time series on the time axis of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.nt,):
            raise ValueError(f"series has shape {v.shape}, expected {(self.grid.nt,)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("series contains non-finite values")
        self.values = v
