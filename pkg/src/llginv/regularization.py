"""Stopping rules, step-size control, noise injection and iteration logs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import VoltageSeries


@dataclass
class StoppingRule:
    """Discrepancy principle with an iteration budget and a step-size floor.

    ``mu_min`` is relative to the initial step size.
    """

    tau: float = 2.5
    max_iterations: int = 1000
    mu_min: float = 1e-6

    def __post_init__(self):
        if not self.tau > 2:
            raise ValueError(f"discrepancy constant must exceed 2, got {self.tau}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")


def discrepancy_flag(residual_norm: float, delta: float, tau: float) -> int:
    """1 while the residual is at least ``tau * delta``, else 0."""
    if residual_norm < 0 or delta < 0 or tau < 0:
        raise ValueError("discrepancy inputs must be nonnegative")
    return 1 if residual_norm >= tau * delta else 0


def cycle_stop(flags: Sequence[int], n: int) -> int | None:
    """First index ``k`` with ``n`` trailing zero flags preceded by a one.

    A leading full cycle of zeros (nothing to do from the start) also stops,
    at index ``n - 1``.
    """
    if n < 1:
        raise ValueError("cycle length must be positive")
    zeros = 0
    for k, w in enumerate(flags):
        zeros = zeros + 1 if w == 0 else 0
        if zeros >= n and (k - n < 0 or flags[k - n] == 1):
            return k
    return None


def adapt_step(prev_residual: float, new_residual: float, mu: float) -> tuple[bool, float]:
    """Accept a trial step iff the residual strictly decreased, else halve ``mu``."""
    if not mu > 0:
        raise ValueError("step size must be positive")
    if new_residual < prev_residual:
        return True, mu
    return False, 0.5 * mu


def noise_inject(y: VoltageSeries, delta_rel: float, seed, wt: np.ndarray | None = None,
                 distribution: str = "gaussian") -> VoltageSeries:
    """Add seeded noise with relative L2(0,T) level ``delta_rel`` on every channel.

    ``wt`` are the time quadrature weights used for the norms (uniform if
    omitted). The recorded ``delta`` is the absolute noise norm per channel.
    """
    if delta_rel < 0:
        raise ValueError("noise level must be nonnegative")
    data = y.data
    if delta_rel == 0:
        return VoltageSeries(data.copy(), np.zeros(data.shape[:2]), noise=np.zeros_like(data))
    nt = data.shape[-1]
    wt = np.full(nt, 1.0 / nt) if wt is None else np.asarray(wt, dtype=float)
    rng = np.random.default_rng(seed)
    if distribution == "gaussian":
        xi = rng.standard_normal(data.shape)
    elif distribution == "uniform":
        xi = rng.uniform(-1.0, 1.0, data.shape)
    else:
        raise ValueError(f"unknown noise distribution {distribution!r}")
    norm = lambda a: np.sqrt(np.sum(wt * a * a, axis=-1))
    ynorm = norm(data)
    scale = delta_rel * ynorm / norm(xi)
    pert = scale[..., None] * xi
    return VoltageSeries(data + pert, norm(pert), noise=pert)


LOG_FIELDS = ("iter", "mu", "res_obs", "res_llg", "alpha1", "alpha2", "rel_err_m", "inner_loops")


@dataclass
class IterationLog:
    """Append-only per-iteration record."""

    records: list[dict] = field(default_factory=list)

    def append(self, iter: int, mu: float, res_obs: float = math.nan, res_llg: float = math.nan,
               alpha1: float = math.nan, alpha2: float = math.nan, rel_err_m: float = math.nan,
               inner_loops: int | float = math.nan) -> None:
        if self.records and iter <= self.records[-1]["iter"]:
            raise ValueError("iteration indices must increase strictly")
        self.records.append(dict(iter=int(iter), mu=float(mu), res_obs=float(res_obs),
                                 res_llg=float(res_llg), alpha1=float(alpha1),
                                 alpha2=float(alpha2), rel_err_m=float(rel_err_m),
                                 inner_loops=inner_loops))

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)

    @property
    def last(self) -> dict:
        return self.records[-1]

    def to_csv(self, path, inner_loops: bool = False) -> None:
        cols = LOG_FIELDS if inner_loops else LOG_FIELDS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.records:
                w.writerow({k: r[k] for k in cols})

    @classmethod
    def from_csv(cls, path) -> "IterationLog":
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                kw = {k: float(v) for k, v in row.items() if k != "iter"}
                log.append(int(row["iter"]), **kw)
        return log
