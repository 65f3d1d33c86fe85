"""Ready-made experiments: the three synthetic test cases and the physical setting."""

from __future__ import annotations

from .config import ConfigError, ExperimentConfig

# id -> (alpha, h, m_exact, m0, initial m_hat, step size, iterations)
_TESTS = {
    1: ("1, -1", "0, 6/5, 8/5", "0, 3/5, 4/5", "0, 3/5, 4/5",
        "-5*t, -5*t, -5*t", 150.0, 3050),
    2: ("2, 0", "-cos(x), -cos(x), 0", "cos(x), cos(x), exp(t)", "cos(x), cos(x), 1",
        "-5*t*cos(x), -5*t*cos(x), -5*t*cos(x)", 75.0, 5350),
    3: ("1, 0", "0, 0, 0", "sin(x), cos(x), exp(t)", "sin(x), cos(x), 1",
        "-sin(30*t)/5, -sin(30*t)/5, -sin(30*t)/5", 300.0, 680),
}

# Offset of the default identification start from the true parameters.
ALPHA_INIT_OFFSET = (0.05, 0.05)

PERTURBED_STATE = "-0.1*sin(20*t), -0.1*sin(20*t), -0.1*sin(20*t)"

FIELDS = {
    "static": "0, 0, 1e-4",
    "rotating": "1e-4*sin(2*pi*t/3e-5), 0, 1e-4*cos(2*pi*t/3e-5)",
    "oscillating": "1e-4*sin(4*pi*t/3e-5), 0, 1e-4",
}


def preset_test(test_id: int, mode: str = "solve-llg") -> ExperimentConfig:
    """Synthetic test case ``1``, ``2`` or ``3`` on the default 51 x 101 grid.

    For identification modes the state starts at ``m0`` (``m_hat = 0``) and
    the parameters at the truth plus :data:`ALPHA_INIT_OFFSET`; the
    observation is ``mu0 = 1``, unit transfer and concentration,
    sensitivity ``(1, 1, 1)``.
    """
    if test_id not in _TESTS:
        raise ConfigError(f"unknown test case {test_id!r}; expected 1, 2 or 3")
    alpha, h, m_exact, m0, init, mu, iters = _TESTS[test_id]
    cfg = ExperimentConfig(mode=mode, preset=f"test{test_id}", alpha=alpha, lam=1.0, h=h,
                           m0=m0, m_exact=m_exact, m_hat_init=init, mu=mu,
                           max_iterations=iters)
    if mode != "solve-llg":
        a = [float(v) for v in alpha.split(",")]
        cfg.alpha_init = ", ".join(repr(v + d) for v, d in zip(a, ALPHA_INIT_OFFSET))
        cfg.m_hat_init = "0, 0, 0"
        cfg.mu = 1.0
        cfg.adaptive = False
        cfg.max_iterations = 1000
    return cfg.validate()


def preset_physical(field: str = "static", mode: str = "simulate-physical") -> ExperimentConfig:
    """Physical parameters with an applied field scenario.

    The homogeneous initial state ``(1, 0, 0)`` is at 90 degrees to the
    static field. The time grid resolves the precession period.
    """
    if field not in FIELDS:
        raise ConfigError(f"unknown field scenario {field!r}; expected one of {sorted(FIELDS)}")
    return ExperimentConfig(
        mode=mode, preset="physical", nt=601, nx=101, t_end="3e-5", x_min="-0.006",
        x_max="0.006", gamma=1.75e11, alpha_D=0.1, m_S=474000.0, A=0.0,
        field=FIELDS[field], m0="1, 0, 0", theta=0.5).validate()


def preset_by_name(name: str, mode: str | None = None) -> ExperimentConfig:
    """``test1``..``test3`` or ``physical``, set up for ``mode``."""
    if name == "physical":
        return preset_physical(mode=mode or "simulate-physical")
    if name.startswith("test") and name[4:].isdigit():
        return preset_test(int(name[4:]), mode or "solve-llg")
    raise ConfigError(f"unknown preset {name!r}")
