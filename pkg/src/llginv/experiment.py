"""Turn an :class:`ExperimentConfig` into solver calls and output files."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .aao import Problem, StepPolicy, run_aao, run_llg_solver
from .config import ConfigError, ExperimentConfig, eval_expr, eval_vector_field, parse_numbers
from .fieldops import ddt
from .grid import Grid
from .io import read_channels_csv, write_channels_csv, write_snapshot
from .march import LLGMarch
from .model import (AlphaPair, ModelCoefficients, ObservationSetup, VoltageSeries,
                    eval_observation, scale_physical)
from .reduced import run_kaczmarz_data, run_kaczmarz_time, run_reduced
from .regularization import StoppingRule, noise_inject


def build_grid(cfg: ExperimentConfig) -> Grid:
    return Grid(nt=cfg.nt, nx=cfg.nx, t_end=float(eval_expr(cfg.t_end)),
                x_min=float(eval_expr(cfg.x_min)), x_max=float(eval_expr(cfg.x_max)))


def build_problem(cfg: ExperimentConfig, grid: Grid) -> tuple[Problem, AlphaPair]:
    T, X = grid.mesh()
    m0 = eval_vector_field(cfg.m0, np.zeros(grid.nx), grid.x)
    h = eval_vector_field(cfg.h, T, X)
    m_exact = None if cfg.m_exact is None else eval_vector_field(cfg.m_exact, T, X)
    alpha = AlphaPair(*parse_numbers(cfg.alpha, 2))
    return Problem(grid, m0, h, ModelCoefficients(cfg.lam), m_exact), alpha


def build_observation(cfg: ExperimentConfig, grid: Grid) -> ObservationSetup:
    a = np.broadcast_to(eval_expr(cfg.transfer, t=grid.t), grid.t.shape)
    c = np.broadcast_to(eval_expr(cfg.concentration, x=grid.x), grid.x.shape)
    p = eval_vector_field(cfg.sensitivity, np.zeros(grid.nx), grid.x)
    return ObservationSetup(cfg.mu0, a[None], c[None], p[None])


def exact_data(cfg, grid, prob: Problem, obs) -> VoltageSeries:
    if prob.m_exact is None:
        raise ConfigError("exact state needed to synthesize data")
    return VoltageSeries(eval_observation(ddt(prob.m_exact - prob.m0[None], grid), obs, grid))


def synthesize(cfg, grid, prob, obs) -> VoltageSeries:
    y = exact_data(cfg, grid, prob, obs)
    return noise_inject(y, cfg.noise_level, cfg.seed, wt=grid.wt,
                        distribution=cfg.noise_distribution)


def load_data(manifest_path, grid: Grid) -> VoltageSeries:
    path = Path(manifest_path)
    try:
        man = json.loads(path.read_text())
        t, data = read_channels_csv(path.parent / man["file"], man["K"], man["L"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read data manifest {manifest_path}: {exc}") from exc
    if data.shape[-1] != grid.nt or not np.allclose(t, grid.t):
        raise ConfigError("data time samples do not match the grid")
    return VoltageSeries(data, np.asarray(man["delta"]))


def make_data(cfg: ExperimentConfig):
    """Noisy traces and a manifest, returned as ``(VoltageSeries, manifest dict)``."""
    grid = build_grid(cfg)
    prob, _ = build_problem(cfg, grid)
    obs = build_observation(cfg, grid)
    y = exact_data(cfg, grid, prob, obs)
    yd = noise_inject(y, cfg.noise_level, cfg.seed, wt=grid.wt,
                      distribution=cfg.noise_distribution)
    norm = np.sqrt(np.sum(grid.wt * y.data**2, axis=-1))
    K, L = y.data.shape[:2]
    rel = np.divide(yd.delta, norm, out=np.zeros_like(norm), where=norm > 0)
    manifest = {"file": "data.csv", "K": K, "L": L, "nt": grid.nt, "seed": cfg.seed,
                "noise_level": cfg.noise_level, "distribution": cfg.noise_distribution,
                "delta": yd.delta.tolist(), "relative_level": rel.tolist()}
    return yd, manifest, grid


def _alpha_errors(alpha: AlphaPair, exact: AlphaPair) -> list[float]:
    return [abs(alpha.alpha1 - exact.alpha1), abs(alpha.alpha2 - exact.alpha2)]


def _physical(cfg: ExperimentConfig):
    grid = build_grid(cfg)
    T, X = grid.mesh()
    H = eval_vector_field(cfg.field, T, X)
    alpha, coeff, h = scale_physical(cfg.gamma, cfg.alpha_D, cfg.m_S, cfg.A, H)
    m0 = eval_vector_field(cfg.m0, np.zeros(grid.nx), grid.x)
    t0 = time.perf_counter()
    m, newton, _ = LLGMarch(grid, m0, h, coeff, theta=cfg.theta).solve(alpha)
    wall = time.perf_counter() - t0
    angle = physical_angles(m, h)
    norm_dev = float(np.max(np.abs(np.linalg.norm(m, axis=-1) - 1.0)))
    summary = {"alpha1": alpha.alpha1, "alpha2": alpha.alpha2, "lam": coeff.lam,
               "h_max": float(np.max(np.linalg.norm(h, axis=-1))),
               "angle_initial_deg": float(np.max(angle[0])),
               "angle_final_deg": float(np.max(angle[-1])),
               "max_norm_deviation": norm_dev, "newton_iterations": newton,
               "wall_time": wall}
    return m, summary, grid


def physical_angles(m: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Angle in degrees between ``m`` and ``h`` at every grid point."""
    c = np.sum(m * h, axis=-1) / (np.linalg.norm(m, axis=-1) * np.linalg.norm(h, axis=-1))
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def execute(cfg: ExperimentConfig):
    """Run ``cfg`` in memory; returns ``(artifacts, summary)`` without touching disk."""
    cfg.validate()
    if cfg.mode == "simulate-physical" or cfg.physical:
        if cfg.mode != "simulate-physical":
            raise ConfigError("physical parameters only support simulate-physical")
        m, summary, grid = _physical(cfg)
        return {"state": m, "grid": grid}, summary
    if cfg.mode == "make-data":
        yd, manifest, grid = make_data(cfg)
        return {"data": yd, "manifest": manifest, "grid": grid}, dict(manifest)

    grid = build_grid(cfg)
    prob, alpha_true = build_problem(cfg, grid)
    T, X = grid.mesh()
    m_hat_init = eval_vector_field(cfg.m_hat_init, T, X)
    summary: dict = {"mode": cfg.mode, "preset": cfg.preset, "seed": cfg.seed}
    if cfg.mode == "solve-llg":
        res = run_llg_solver(alpha_true, prob, m_hat_init, StepPolicy(cfg.mu, cfg.adaptive,
                             cfg.mu_min), cfg.max_iterations, monitor=cfg.monitor)
        m_hat = res.m_hat
    else:
        obs = build_observation(cfg, grid)
        data = load_data(cfg.data_file, grid) if cfg.data_file else synthesize(cfg, grid, prob, obs)
        alpha0 = AlphaPair(*parse_numbers(cfg.alpha_init, 2)) if cfg.alpha_init else alpha_true
        stop = StoppingRule(cfg.tau, cfg.max_iterations, cfg.mu_min)
        if cfg.mode == "identify-aao":
            res = run_aao(data, obs, prob, alpha0, m_hat_init,
                          StepPolicy(cfg.mu, cfg.adaptive, cfg.mu_min), stop)
        elif cfg.mode == "identify-reduced":
            res = run_reduced(data, obs, prob, alpha0, cfg.mu, stop)
        elif cfg.mode == "identify-kaczmarz-time":
            res = run_kaczmarz_time(data, obs, prob, alpha0, cfg.segments, cfg.mu, stop)
        else:
            res = run_kaczmarz_data(data, obs, prob, alpha0, cfg.mu, stop)
        m_hat = res.m_hat
        if hasattr(res, "total_inner_loops"):
            summary["total_inner_loops"] = res.total_inner_loops
        summary["delta"] = data.total_delta
    last = res.log.last
    summary.update({
        "iterations": res.iterations, "stop_reason": res.stop_reason,
        "wall_time": res.wall_time, "res_llg": last["res_llg"], "res_obs": last["res_obs"],
        "rel_err_m": prob.rel_err(m_hat),
        "alpha": [last["alpha1"], last["alpha2"]],
        "alpha_exact": [alpha_true.alpha1, alpha_true.alpha2],
        "e_alpha": _alpha_errors(AlphaPair(last["alpha1"], last["alpha2"]), alpha_true),
    })
    return {"state": prob.m0[None] + m_hat, "log": res.log, "grid": grid}, summary


def clean_json(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_artifacts(out_dir, artifacts: dict, summary: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "log" in artifacts:
        artifacts["log"].to_csv(out / "log.csv", inner_loops="total_inner_loops" in summary)
    if "state" in artifacts:
        write_snapshot(out / "state.llgf", artifacts["state"])
    if "data" in artifacts:
        write_channels_csv(out / "data.csv", artifacts["grid"].t, artifacts["data"].data)
        (out / "manifest.json").write_text(json.dumps(artifacts["manifest"], indent=2))
    (out / "summary.json").write_text(json.dumps(clean_json(summary), indent=2))


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run and write artifacts to ``out_dir`` (default ``cfg.out``); returns the summary."""
    artifacts, summary = execute(cfg)
    summary = clean_json(summary)
    write_artifacts(out_dir or cfg.out, artifacts, summary)
    return summary
