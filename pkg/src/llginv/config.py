"""Experiment configuration: an INI-style text file and a tiny expression language.

Grammar
-------
Sections ``[run]``, ``[grid]``, ``[problem]``, ``[observation]``,
``[solver]``, ``[noise]``, ``[physical]``, ``[data]``, ``[output]`` hold
``key = value`` lines (``#`` starts a comment). Vectors are comma-separated
components. Field entries (``h``, ``m0``, ``m_exact``, ``m_hat_init``,
``sensitivity``, ``field``) are expressions in ``t`` and ``x`` built from
numbers, ``pi``, ``+ - * / **``, parentheses and ``sin``, ``cos``, ``exp``.

Example::

    [run]
    mode = solve-llg
    [problem]
    alpha = 1, -1
    h = 0, 6/5, 8/5
    m0 = 0, 3/5, 4/5
"""

from __future__ import annotations

import ast
import configparser
import io
import math
from dataclasses import dataclass, fields, replace

import numpy as np

MODES = ("solve-llg", "identify-aao", "identify-reduced", "identify-kaczmarz-time",
         "identify-kaczmarz-data", "simulate-physical", "make-data")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# -- expressions -----------------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": math.pi}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


def _check_node(node: ast.AST, names: frozenset) -> None:
    if isinstance(node, ast.Expression):
        _check_node(node.body, names)
    elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check_node(node.left, names)
        _check_node(node.right, names)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _check_node(node.operand, names)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        pass
    elif isinstance(node, ast.Name) and (node.id in names or node.id in _CONSTS):
        pass
    elif (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
          and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
        _check_node(node.args[0], names)
    else:
        raise ConfigError(f"unsupported expression element: {ast.dump(node)[:60]}")


def _eval_node(node: ast.AST, env: dict):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval_node(node.left, env), _eval_node(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _eval_node(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTS[node.id]
    return _FUNCS[node.func.id](_eval_node(node.args[0], env))


def compile_expr(text: str, names=("t", "x")):
    """Parse ``text`` into a callable of keyword arrays ``t``/``x``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}") from exc
    _check_node(tree, frozenset(names))
    return lambda **env: _eval_node(tree, env)


def eval_expr(text: str, **env):
    return compile_expr(text, tuple(env))(**env)


def split_vector(text: str, n: int | None = None) -> list[str]:
    parts = [p.strip() for p in str(text).split(",")]
    if any(not p for p in parts) or (n is not None and len(parts) != n):
        raise ConfigError(f"expected {n or 'a list of'} comma-separated entries, got {text!r}")
    return parts


def eval_vector_field(text: str, T: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Evaluate a 3-vector expression on a mesh; result has shape ``T.shape + (3,)``."""
    comps = [np.broadcast_to(eval_expr(p, t=T, x=X), T.shape) for p in split_vector(text, 3)]
    return np.stack(comps, axis=-1).astype(float)


def parse_numbers(text: str, n: int | None = None) -> list[float]:
    return [float(eval_expr(p)) for p in split_vector(text, n)]


# -- config ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run. Expressions are kept as text.

    ``preset`` names the preset a config was expanded from; it is informative
    only, the expanded entries are authoritative.
    """

    mode: str = "solve-llg"
    seed: int = 0
    preset: str | None = None
    # grid
    nt: int = 51
    nx: int = 101
    t_end: str = "0.2"
    x_min: str = "0"
    x_max: str = "2*pi"
    # problem
    alpha: str | None = None
    lam: float = 1.0
    h: str | None = None
    m0: str | None = None
    m_exact: str | None = None
    m_hat_init: str = "0, 0, 0"
    # observation
    mu0: float = 1.0
    transfer: str = "1"
    concentration: str = "1"
    sensitivity: str = "1, 1, 1"
    # solver
    mu: float = 1.0
    adaptive: bool = True
    max_iterations: int = 1000
    monitor: str = "W"
    tau: float = 2.5
    mu_min: float = 1e-6
    alpha_init: str | None = None
    segments: int = 1
    theta: float = 0.5
    # noise
    noise_level: float = 0.0
    noise_distribution: str = "gaussian"
    # physical
    gamma: float | None = None
    alpha_D: float | None = None
    m_S: float | None = None
    A: float | None = None
    field: str | None = None
    # data
    data_file: str | None = None
    # output
    out: str = "out"

    _SECTIONS = {
        "run": ("mode", "seed", "preset"),
        "grid": ("nt", "nx", "t_end", "x_min", "x_max"),
        "problem": ("alpha", "lam", "h", "m0", "m_exact", "m_hat_init"),
        "observation": ("mu0", "transfer", "concentration", "sensitivity"),
        "solver": ("mu", "adaptive", "max_iterations", "monitor", "tau", "mu_min",
                   "alpha_init", "segments", "theta"),
        "noise": ("noise_level", "noise_distribution"),
        "physical": ("gamma", "alpha_D", "m_S", "A", "field"),
        "data": ("data_file",),
        "output": ("out",),
    }

    @property
    def physical(self) -> bool:
        return self.gamma is not None

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.nt < 3 or self.nx < 4:
            raise ConfigError("grid needs nt >= 3 and nx >= 4")
        if self.tau <= 2:
            raise ConfigError("discrepancy constant tau must exceed 2")
        if self.noise_level < 0:
            raise ConfigError("noise level must be nonnegative")
        if self.mu <= 0 or self.max_iterations < 0:
            raise ConfigError("step size must be positive and the budget nonnegative")
        if self.monitor not in ("W", "L2"):
            raise ConfigError("monitor must be W or L2")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0.5, 1]")
        if self.physical:
            for k in ("alpha_D", "m_S", "A", "field", "m0"):
                if getattr(self, k) is None:
                    raise ConfigError(f"physical run needs {k}")
        else:
            for k in ("alpha", "h", "m0"):
                if getattr(self, k) is None:
                    raise ConfigError(f"problem needs {k}")
            parse_numbers(self.alpha, 2)
        if self.mode.startswith("identify") or self.mode == "make-data":
            if self.m_exact is None and self.data_file is None:
                raise ConfigError("identification needs m_exact or a data file")
        for k in ("h", "m0", "m_exact", "m_hat_init", "sensitivity", "field"):
            v = getattr(self, k)
            if v is not None:
                for part in split_vector(v, 3):
                    compile_expr(part)
        for k in ("transfer", "concentration", "t_end", "x_min", "x_max"):
            compile_expr(getattr(self, k))
        if self.alpha_init is not None:
            parse_numbers(self.alpha_init, 2)
        return self

    # -- serialization --------------------------------------------------------
    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, keys in self._SECTIONS.items():
            items = {k: _fmt(getattr(self, k)) for k in keys
                     if getattr(self, k) is not None and k != "preset"}
            if items:
                cp[sec] = items
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for sec in cp.sections():
            if sec not in cls._SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            for k, v in cp[sec].items():
                if k not in cls._SECTIONS[sec]:
                    raise ConfigError(f"unknown key {k!r} in [{sec}]")
                kw[k] = _parse(v, types[k], k)
        if kw.get("preset") and any(k in kw for k in ("alpha", "h", "m0", "m_exact", "gamma")):
            raise ConfigError("preset and explicit problem entries are mutually exclusive")
        base = cls()
        preset = kw.pop("preset", None)
        if preset:
            from .presets import preset_by_name

            base = preset_by_name(preset, kw.get("mode"))
        return replace(base, **kw).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(v: str, typ, key: str):
    typ = str(typ)
    try:
        if typ.startswith("bool"):
            low = v.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(v)
            return low in ("true", "yes", "1")
        if typ.startswith("int"):
            return int(v)
        if typ.startswith("float"):
            return float(v)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {v!r}") from exc
    return v.strip()
